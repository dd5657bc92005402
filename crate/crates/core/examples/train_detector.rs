//! Trains a naive or a masked detector on a ds1 manifest. Without arguments
//! it fabricates a 24-track dataset and trains a narrow model for a few
//! epochs, which is enough to watch the loop but not to get a good model.
//!
//!     cargo run --release --example train_detector -- [ds1_dir] [--mask] [--epochs N]

use std::path::PathBuf;

use lossy_detect::dataset::{
    build_dataset, generate_synthetic_corpus, BuildOptions, DatasetId, Manifest, Seeds, Transcoder,
};
use lossy_detect::model::ModelConfig;
use lossy_detect::training::{train, TrainConfig};

fn main() -> lossy_detect::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mask = args.iter().any(|a| a == "--mask");
    let epochs = args
        .iter()
        .position(|a| a == "--epochs")
        .and_then(|i| args.get(i + 1))
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let root = std::env::temp_dir().join("lossy-detect-train");
    let ds1 = match args.first().filter(|a| !a.starts_with("--")) {
        Some(dir) => PathBuf::from(dir),
        None => {
            let tracks = generate_synthetic_corpus(24, 6.0, 1, &root.join("corpus"))?;
            let mut opts = BuildOptions::new(root.join("ds1"));
            opts.reuse_existing = true;
            build_dataset(&tracks, DatasetId::Ds1, Seeds::all(1), &Transcoder::discover(None)?, &opts)?;
            root.join("ds1")
        }
    };
    let manifest = Manifest::load(&ds1)?;

    let config = TrainConfig {
        max_epochs: epochs,
        batch_size: 8,
        seed: 1,
        mask_enabled: mask,
        ..TrainConfig::default()
    };
    let run_dir = root.join(if mask { "masked" } else { "naive" });
    let outcome = train(&manifest, &ModelConfig::with_channels([4, 8, 8, 16]), &config, &run_dir)?;
    for m in &outcome.history {
        println!(
            "epoch {:>2}  train loss {:.4}  val acc {:.3}  val loss {:.4}",
            m.epoch, m.train_loss, m.val_accuracy, m.val_loss
        );
    }
    println!("best checkpoint: {}", outcome.checkpoint.display());
    Ok(())
}
