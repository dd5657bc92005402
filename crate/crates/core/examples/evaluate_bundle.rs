//! Evaluates a checkpoint on one split of a dataset and writes the report
//! bundle: report.json, report.md, per-codec F1 CSVs, the prediction dump,
//! an error gallery and spectrogram/saliency pairs.
//!
//!     cargo run --release --example evaluate_bundle -- <dataset_dir> <checkpoint> [out_dir]

use std::path::PathBuf;

use lossy_detect::dataset::Manifest;
use lossy_detect::evaluation::{run_evaluation, EvaluateOptions};
use lossy_detect::model::checkpoint::Checkpoint;

fn main() -> lossy_detect::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: evaluate_bundle <dataset_dir> <checkpoint> [out_dir]");
        eprintln!("(the train_detector example prints a checkpoint and its ds1 directory)");
        std::process::exit(2);
    }
    let manifest = Manifest::load(args[0].as_ref())?;
    let ckpt = Checkpoint::load(args[1].as_ref())?;
    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lossy-detect-eval"));

    let opts = EvaluateOptions {
        saliency_examples: 2,
        ..EvaluateOptions::default()
    };
    let report = run_evaluation(&manifest, &ckpt.model, &args[1], &opts, &out)?;
    print!("{}", report.to_markdown());
    println!("\nbundle written to {}", out.display());
    Ok(())
}
