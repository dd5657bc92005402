//! Grouped accuracy tables, F1 curves, saliency maps, error galleries and
//! report bundles.

pub mod compare;
pub mod f1;
pub mod gallery;
pub mod saliency;
pub mod tables;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::load_audio;
use crate::dataset::{Codec, DatasetId, Label, Manifest, Split};
use crate::error::{IoContext, Result};
use crate::imaging::{write_heatmap_png, write_spectrogram_png};
use crate::inference::{predict_manifest, write_predictions, PredictionRecord};
use crate::model::Model;

pub use compare::{compare_reports, DeltaReport};
pub use f1::{f1_curve, F1Curve};
pub use gallery::{error_gallery, Gallery};
pub use saliency::{saliency_map, Saliency};
pub use tables::{accuracy_table, cutoff_table, AccuracyTable, CutoffTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub dataset_id: DatasetId,
    pub split: Split,
    pub manifest_fingerprint: String,
    pub checkpoint: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tracks: usize,
    pub failed: usize,
    /// Percent of scored tracks classified correctly.
    pub overall_accuracy: Option<f64>,
    pub lossy_mean: Option<f64>,
    pub lossless_accuracy: Option<f64>,
    /// Percent of lossy tracks predicted lossy, pooled over all cells.
    pub pooled_lossy_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: DatasetId,
    pub split: Split,
    pub manifest_fingerprint: String,
    pub checkpoint: String,
    pub threshold: f64,
    pub table_codec_bitrate: AccuracyTable,
    /// Present when every lossy prediction carries a cutoff.
    pub table_cutoff: Option<CutoffTable>,
    pub f1_curves: Vec<F1Curve>,
    pub summary: Summary,
}

impl EvalReport {
    /// Cutoff grand mean when available, else the codec x bit rate table mean.
    pub fn headline_mean(&self) -> Option<f64> {
        self.table_cutoff
            .as_ref()
            .and_then(|t| t.grand_mean)
            .or(self.table_codec_bitrate.mean)
    }

    pub fn f1_for(&self, codec: Codec) -> Option<&F1Curve> {
        self.f1_curves.iter().find(|c| c.codec == codec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_markdown(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1}"));
        let mut s = format!(
            "# Evaluation: {} {} split\n\ncheckpoint: `{}`  \nthreshold: {}  \ntracks: {} ({} failed)\n\n",
            self.dataset_id,
            self.split,
            self.checkpoint,
            self.threshold,
            self.summary.tracks,
            self.summary.failed
        );
        s.push_str("## Accuracy by codec and bit rate\n\n| codec |");
        let t = &self.table_codec_bitrate;
        for c in &t.cells {
            s.push_str(&format!(" {} {} |", c.codec, c.bitrate));
        }
        s.push_str(" lossless | mean | lossy mean | balanced mean |\n|---|");
        s.push_str(&"---:|".repeat(t.cells.len() + 4));
        s.push_str(&format!("\n| {} |", self.dataset_id));
        for c in &t.cells {
            s.push_str(&format!(" {} |", f(c.cell.accuracy)));
        }
        s.push_str(&format!(
            " {} | {} | {} | {} |\n\nCell sizes:",
            f(t.lossless.accuracy),
            f(t.mean),
            f(t.lossy_mean),
            f(t.balanced_mean)
        ));
        for c in &t.cells {
            s.push_str(&format!(" {}/{}", c.cell.correct, c.cell.total));
        }
        s.push_str(&format!(" | lossless {}/{}\n", t.lossless.correct, t.lossless.total));

        if let Some(ct) = &self.table_cutoff {
            s.push_str("\n## Accuracy by cutoff\n\n| cutoff |");
            for (k, _) in &ct.by_codec.col_means {
                s.push_str(&format!(" {k} |"));
            }
            for (k, _) in &ct.by_bitrate.col_means {
                s.push_str(&format!(" {k} |"));
            }
            s.push_str(" mean |\n|---|");
            s.push_str(&"---:|".repeat(ct.by_codec.col_means.len() + ct.by_bitrate.col_means.len() + 1));
            s.push('\n');
            for (i, &cut) in ct.cutoffs_hz.iter().enumerate() {
                s.push_str(&format!("| {} kHz |", cut as f64 / 1000.0));
                for (k, _) in &ct.by_codec.col_means {
                    s.push_str(&format!(" {} |", f(ct.by_codec.cell(cut, *k).and_then(|c| c.accuracy))));
                }
                for (k, _) in &ct.by_bitrate.col_means {
                    s.push_str(&format!(" {} |", f(ct.by_bitrate.cell(cut, *k).and_then(|c| c.accuracy))));
                }
                s.push_str(&format!(" {} |\n", f(ct.by_codec.row_means[i].1)));
            }
            s.push_str("| **mean** |");
            for (_, m) in &ct.by_codec.col_means {
                s.push_str(&format!(" {} |", f(*m)));
            }
            for (_, m) in &ct.by_bitrate.col_means {
                s.push_str(&format!(" {} |", f(*m)));
            }
            s.push_str(&format!(
                " {} |\n\nLossless accuracy: {}%. Means are unweighted over cells.\n",
                f(ct.grand_mean),
                f(ct.lossless.accuracy)
            ));
            s.push_str("\n### Full breakdown (cutoff x codec x bit rate)\n\n| cutoff | codec | bit rate | correct/total | accuracy |\n|---|---|---|---:|---:|\n");
            for c in &ct.full {
                s.push_str(&format!(
                    "| {} | {} | {} | {}/{} | {} |\n",
                    c.cutoff_hz, c.codec, c.bitrate, c.cell.correct, c.cell.total, f(c.cell.accuracy)
                ));
            }
        }

        if !self.f1_curves.is_empty() {
            s.push_str("\n## F1 against threshold\n\n| codec | positives | negatives | peak F1 | at threshold | area |\n|---|---:|---:|---:|---:|---:|\n");
            for c in &self.f1_curves {
                s.push_str(&format!(
                    "| {} | {} | {} | {:.3} | {:.2} | {:.3} |\n",
                    c.codec, c.positives, c.negatives, c.peak_f1, c.peak_threshold, c.area
                ));
            }
        }
        s.push_str(&format!(
            "\n## Summary\n\noverall accuracy {}%, lossy mean {}%, lossless {}%, pooled lossy {}%\n",
            f(self.summary.overall_accuracy),
            f(self.summary.lossy_mean),
            f(self.summary.lossless_accuracy),
            f(self.summary.pooled_lossy_accuracy)
        ));
        s
    }
}

pub fn build_report(preds: &[PredictionRecord], ctx: &ReportContext) -> EvalReport {
    let table = accuracy_table(preds);
    let has_lossy = preds.iter().any(|p| p.label_true == Some(Label::Lossy) && p.error.is_none());
    let all_cut = preds
        .iter()
        .filter(|p| p.label_true == Some(Label::Lossy))
        .all(|p| p.encoding.is_some_and(|e| e.cutoff_hz.is_some()));
    let table_cutoff = if has_lossy && all_cut {
        cutoff_table(preds).ok()
    } else {
        None
    };
    let f1_curves = Codec::ALL.iter().filter_map(|&c| f1_curve(preds, c).ok()).collect();
    let scored: Vec<bool> = preds.iter().filter_map(PredictionRecord::is_correct).collect();
    let lossy: Vec<bool> = preds
        .iter()
        .filter(|p| p.label_true == Some(Label::Lossy))
        .filter_map(PredictionRecord::is_correct)
        .collect();
    let pct = |v: &[bool]| (!v.is_empty()).then(|| 100.0 * v.iter().filter(|&&b| b).count() as f64 / v.len() as f64);
    let summary = Summary {
        tracks: preds.len(),
        failed: preds.iter().filter(|p| p.error.is_some()).count(),
        overall_accuracy: pct(&scored),
        lossy_mean: table.lossy_mean,
        lossless_accuracy: table.lossless.accuracy,
        pooled_lossy_accuracy: pct(&lossy),
    };
    EvalReport {
        dataset_id: ctx.dataset_id,
        split: ctx.split,
        manifest_fingerprint: ctx.manifest_fingerprint.clone(),
        checkpoint: ctx.checkpoint.clone(),
        threshold: ctx.threshold,
        table_codec_bitrate: table,
        table_cutoff,
        f1_curves,
        summary,
    }
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

/// Writes report.json, report.md, predictions.jsonl and one f1_<codec>.csv per curve.
pub fn write_bundle(report: &EvalReport, preds: &[PredictionRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let p = dir.join(REPORT_JSON);
    fs::write(&p, serde_json::to_string_pretty(report)?).at(&p)?;
    let p = dir.join(REPORT_MD);
    fs::write(&p, report.to_markdown()).at(&p)?;
    write_predictions(&dir.join(PREDICTIONS_FILE), preds)?;
    for c in &report.f1_curves {
        let p = dir.join(format!("f1_{}.csv", c.codec));
        fs::write(&p, c.to_csv()).at(&p)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub split: Split,
    pub threshold: f64,
    pub workers: usize,
    /// Lossy tracks rendered as spectrogram/saliency pairs.
    pub saliency_examples: usize,
    pub gallery: bool,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            threshold: crate::inference::DEFAULT_THRESHOLD,
            workers: 1,
            saliency_examples: 4,
            gallery: true,
        }
    }
}

/// Writes the spectrogram and saliency PNG pair for a 2-second excerpt
/// starting at `offset` samples (centred when `None`).
pub fn export_saliency_pair(
    model: &Model,
    audio: &Path,
    offset: Option<usize>,
    out_dir: &Path,
    stem: &str,
) -> Result<Saliency> {
    let clip = load_audio(audio)?;
    let last = clip.n_samples().saturating_sub(crate::audio::CLIP_SAMPLES);
    let offset = offset.unwrap_or(last / 2).min(last);
    let spec = crate::spectral::spectrogram(&crate::spectral::crop_at(&clip, offset));
    let sal = saliency_map(model, &spec)?;
    write_spectrogram_png(&spec, &out_dir.join(format!("{stem}_spectrogram.png")))?;
    write_heatmap_png(&sal.values, sal.n_bins, sal.n_frames, &out_dir.join(format!("{stem}_saliency.png")))?;
    Ok(sal)
}

/// Predicts the chosen split and writes the full report bundle plus the
/// error gallery (`errors/`) and saliency pairs (`saliency/`).
pub fn run_evaluation(
    manifest: &Manifest,
    model: &Model,
    checkpoint_label: &str,
    opts: &EvaluateOptions,
    out_dir: &Path,
) -> Result<EvalReport> {
    let preds = predict_manifest(manifest, model, Some(opts.split), opts.threshold, opts.workers);
    let ctx = ReportContext {
        dataset_id: manifest.dataset_id(),
        split: opts.split,
        manifest_fingerprint: manifest.fingerprint(),
        checkpoint: checkpoint_label.to_string(),
        threshold: opts.threshold,
    };
    let report = build_report(&preds, &ctx);
    write_bundle(&report, &preds, out_dir)?;
    if opts.gallery {
        error_gallery(&preds, manifest, &out_dir.join("errors"))?;
    }
    let lossy: Vec<_> = manifest
        .records_in(opts.split)
        .filter(|r| r.label == Label::Lossy)
        .take(opts.saliency_examples)
        .collect();
    for r in lossy {
        export_saliency_pair(model, &manifest.resolve_audio(r), None, &out_dir.join("saliency"), &r.track_id)?;
    }
    Ok(report)
}

/// Deterministic RNG for the random non-hole draws.
pub fn hole_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
