//! How a run is configured: a TOML file whose keys are the long flag names,
//! with flags given on the command line taking precedence. The merged
//! document is hashed to name cached training and evaluation outputs.
//!
//!     cargo run --release --example run_config -- [flags, e.g. --mask off --epochs 3]

use clap::Parser;

use lossy_detect::cli::{Cli, Command};
use lossy_detect::config::{config_hash, RunConfig};
use lossy_detect::model::Model;

const FILE: &str = r#"
out = "out/desk"
seed = 7
synthetic = 300
codecs = ["mp3lame", "fdk_aac", "vorbis"]
conv-channels = [8, 16, 32, 64]
epochs = 12
patience = 5
mask = "on"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("lossy-detect-config");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("desk.toml");
    std::fs::write(&path, FILE)?;

    let argv = ["lossy-detect", "train", "--config", path.to_str().unwrap_or_default()]
        .into_iter()
        .map(String::from)
        .chain(std::env::args().skip(1));
    let cli = Cli::parse_from(argv);
    let Command::Train { run: flags, .. } = cli.command else {
        unreachable!("argv names the train command");
    };
    let file = RunConfig::from_file(&path)?;
    let merged = file.clone().merged(flags);

    println!("file:   {}", serde_json::to_string(&file)?);
    println!("merged: {}", serde_json::to_string(&merged)?);
    println!("hash:   {}", config_hash(&merged));

    let model = merged.model_config()?;
    let train = merged.train_config()?;
    println!(
        "\nmodel  channels {:?}, lstm {} -> {} parameters",
        model.conv_channels,
        model.lstm_hidden,
        Model::init(model.clone(), 0)?.param_count()
    );
    println!(
        "train  {} epochs max, patience {}, batch {}, lr {}, masking {}",
        train.max_epochs,
        train.early_stop_patience,
        train.batch_size,
        train.learning_rate,
        if train.mask_enabled { "on" } else { "off" }
    );
    println!("runs would land in {}", merged.out_root().join("runs").display());
    Ok(())
}
