//! Cellwise comparison of two evaluation reports over the same manifest.

use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCell {
    pub group: String,
    pub baseline: Option<f64>,
    pub candidate: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub baseline_checkpoint: String,
    pub candidate_checkpoint: String,
    pub cells: Vec<DeltaCell>,
    pub baseline_mean: Option<f64>,
    pub candidate_mean: Option<f64>,
    pub mean_delta: Option<f64>,
    /// Candidate mean is at least the baseline mean.
    pub candidate_not_worse: bool,
}

fn delta(group: String, baseline: Option<f64>, candidate: Option<f64>) -> DeltaCell {
    DeltaCell {
        group,
        baseline,
        candidate,
        delta: baseline.zip(candidate).map(|(a, b)| b - a),
    }
}

/// `candidate - baseline` for every table cell both reports share. The
/// headline mean is the cutoff grand mean when present, else the table mean.
pub fn compare_reports(baseline: &EvalReport, candidate: &EvalReport) -> Result<DeltaReport> {
    if baseline.manifest_fingerprint != candidate.manifest_fingerprint
        || baseline.dataset_id != candidate.dataset_id
        || baseline.split != candidate.split
    {
        return Err(Error::Argument(
            "reports were computed on different manifests or splits".into(),
        ));
    }
    let mut cells = Vec::new();
    let (a, b) = (&baseline.table_codec_bitrate, &candidate.table_codec_bitrate);
    for (x, y) in a.cells.iter().zip(&b.cells) {
        cells.push(delta(
            format!("{} {}", x.codec, x.bitrate),
            x.cell.accuracy,
            y.cell.accuracy,
        ));
    }
    cells.push(delta("lossless".into(), a.lossless.accuracy, b.lossless.accuracy));
    if let (Some(ta), Some(tb)) = (&baseline.table_cutoff, &candidate.table_cutoff) {
        for (x, y) in ta.by_codec.cells.iter().zip(&tb.by_codec.cells) {
            cells.push(delta(
                format!("{} Hz {}", x.cutoff_hz, x.key),
                x.cell.accuracy,
                y.cell.accuracy,
            ));
        }
        for (x, y) in ta.by_bitrate.cells.iter().zip(&tb.by_bitrate.cells) {
            cells.push(delta(
                format!("{} Hz {}", x.cutoff_hz, x.key),
                x.cell.accuracy,
                y.cell.accuracy,
            ));
        }
    }
    let baseline_mean = baseline.headline_mean();
    let candidate_mean = candidate.headline_mean();
    let mean_delta = baseline_mean.zip(candidate_mean).map(|(a, b)| b - a);
    Ok(DeltaReport {
        baseline_checkpoint: baseline.checkpoint.clone(),
        candidate_checkpoint: candidate.checkpoint.clone(),
        cells,
        baseline_mean,
        candidate_mean,
        mean_delta,
        candidate_not_worse: mean_delta.is_some_and(|d| d >= 0.0),
    })
}

impl DeltaReport {
    pub fn to_markdown(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1}"));
        let mut s = format!(
            "# Comparison\n\nbaseline: `{}`\ncandidate: `{}`\n\n| group | baseline | candidate | delta |\n|---|---:|---:|---:|\n",
            self.baseline_checkpoint, self.candidate_checkpoint
        );
        for c in &self.cells {
            let d = c.delta.map_or("-".to_string(), |v| format!("{v:+.1}"));
            s.push_str(&format!("| {} | {} | {} | {d} |\n", c.group, f(c.baseline), f(c.candidate)));
        }
        s.push_str(&format!(
            "| **mean** | {} | {} | {} |\n\nVerdict: candidate {} the baseline on the headline mean.\n",
            f(self.baseline_mean),
            f(self.candidate_mean),
            self.mean_delta.map_or("-".to_string(), |v| format!("{v:+.1}")),
            if self.candidate_not_worse { "matches or beats" } else { "falls below" }
        ));
        s
    }
}
