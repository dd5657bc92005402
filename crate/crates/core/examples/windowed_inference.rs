//! Track-level prediction: a file is cut into 2-second windows with a
//! 1-second hop, each window is scored and the mean decides the verdict.
//! Without a checkpoint a freshly initialised model stands in, so the
//! probabilities are meaningless but the mechanics are the same.
//!
//!     cargo run --release --example windowed_inference -- [--checkpoint m.ckpt] [audio.wav ...]

use std::path::PathBuf;

use lossy_detect::dataset::generate_synthetic_corpus;
use lossy_detect::inference::{window_count, window_offsets, Predictor, DEFAULT_THRESHOLD};
use lossy_detect::model::checkpoint::Checkpoint;
use lossy_detect::model::{Model, ModelConfig};

fn main() -> lossy_detect::Result<()> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let model = match args.iter().position(|a| a == "--checkpoint") {
        Some(i) => {
            let path = args.remove(i + 1);
            args.remove(i);
            Checkpoint::load(path.as_ref())?.model
        }
        None => Model::init(ModelConfig::with_channels([4, 8, 8, 16]), 0)?,
    };
    let files: Vec<PathBuf> = if args.is_empty() {
        let dir = std::env::temp_dir().join("lossy-detect-infer");
        generate_synthetic_corpus(2, 4.5, 5, &dir)?.into_iter().map(|t| t.path).collect()
    } else {
        args.into_iter().map(PathBuf::from).collect()
    };

    for seconds in [2.0, 2.5, 4.5, 10.0] {
        let n = (seconds * 44_100.0) as usize;
        println!("{seconds:>4} s -> {} windows at {:?}", window_count(n), window_offsets(n));
    }

    let predictor = Predictor::new(&model, DEFAULT_THRESHOLD);
    for path in files {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let rec = predictor.predict_path(&id, &path);
        if let Some(e) = &rec.error {
            println!("\n{}: {e}", path.display());
            continue;
        }
        let windows: Vec<String> = rec.window_probs.iter().map(|p| format!("{p:.3}")).collect();
        println!("\n{}\n  windows [{}]\n  p_lossy {:.4} -> {}", path.display(), windows.join(", "), rec.p_lossy, rec.predicted);
    }
    Ok(())
}
