//! The metrics layer on its own: accuracy tables, per-codec F1 curves and
//! a cellwise comparison of two models, computed from prediction records.
//!
//! With two `report.json` paths the saved reports are compared. Without
//! arguments two toy detectors score a DS2-shaped test split: one that
//! only notices low cutoffs, and one that also hears codec artifacts.
//!
//!     cargo run --release --example report_tables -- [baseline/report.json candidate/report.json]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lossy_detect::dataset::{assign_encoding, Codec, DatasetId, Label, Split};
use lossy_detect::evaluation::{build_report, compare_reports, EvalReport, ReportContext};
use lossy_detect::inference::PredictionRecord;

fn toy_predictions(hears_artifacts: bool, seed: u64) -> Vec<PredictionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..400 {
        let id = format!("t{i:04}");
        let enc = assign_encoding(&id, DatasetId::Ds2, 1);
        for encoding in [None, Some(enc)] {
            let p: f64 = match encoding {
                None => rng.gen_range(0.0..0.3),
                Some(e) => {
                    let cutoff = e.cutoff_hz.unwrap_or(20_000);
                    let obvious = if cutoff <= 16_000 { 0.2 } else { 0.9 };
                    let artifacts = if hears_artifacts { 0.35 * (320 - e.bitrate.kbps()) as f64 / 192.0 + 0.3 } else { 0.0 };
                    (obvious * rng.gen_range(0.0..1.0) + artifacts + rng.gen_range(0.0..0.4)).min(1.0)
                }
            };
            let label = if encoding.is_some() { Label::Lossy } else { Label::Lossless };
            out.push(PredictionRecord {
                track_id: id.clone(),
                audio_path: PathBuf::from(format!("{id}.wav")),
                p_lossy: p,
                window_probs: vec![p],
                label_true: Some(label),
                encoding,
                dataset_id: Some(DatasetId::Ds2),
                predicted: if p >= 0.5 { Label::Lossy } else { Label::Lossless },
                error: None,
            });
        }
    }
    out
}

fn main() -> lossy_detect::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (baseline, candidate) = if args.len() == 2 {
        (EvalReport::load(args[0].as_ref())?, EvalReport::load(args[1].as_ref())?)
    } else {
        let ctx = |name: &str| ReportContext {
            dataset_id: DatasetId::Ds2,
            split: Split::Test,
            manifest_fingerprint: "toy".into(),
            checkpoint: name.into(),
            threshold: 0.5,
        };
        (
            build_report(&toy_predictions(false, 1), &ctx("cutoff-only")),
            build_report(&toy_predictions(true, 2), &ctx("artifact-aware")),
        )
    };

    print!("{}", candidate.to_markdown());
    println!();
    for codec in Codec::ALL {
        if let (Some(a), Some(b)) = (baseline.f1_for(codec), candidate.f1_for(codec)) {
            println!(
                "{codec:>8}: F1 area {:.3} -> {:.3}, best threshold {:.2} -> {:.2}",
                a.area, b.area, a.peak_threshold, b.peak_threshold
            );
        }
    }
    println!();
    print!("{}", compare_reports(&baseline, &candidate)?.to_markdown());
    Ok(())
}
