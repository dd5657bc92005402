//! F1 score against the decision threshold, one codec at a time.

use serde::{Deserialize, Serialize};

use crate::dataset::{Codec, Label};
use crate::error::{Error, Result};
use crate::inference::PredictionRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Positive iff `score >= threshold`.
    pub fn at(samples: &[(f64, bool)], threshold: f64) -> Self {
        let mut c = Self::default();
        for &(score, positive) in samples {
            match (score >= threshold, positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Zero when precision or recall is undefined.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Curve {
    pub codec: Codec,
    pub thresholds: Vec<f64>,
    pub f1: Vec<f64>,
    pub peak_f1: f64,
    pub peak_threshold: f64,
    /// Trapezoidal area over thresholds in [0, 1].
    pub area: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Thresholds `0.00, 0.01, ..., 1.00`.
pub fn threshold_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Lossless tracks are negatives, tracks of `codec` are positives; other
/// codecs are dropped.
pub fn f1_curve(preds: &[PredictionRecord], codec: Codec) -> Result<F1Curve> {
    let samples: Vec<(f64, bool)> = preds
        .iter()
        .filter(|p| p.error.is_none())
        .filter_map(|p| match p.label_true {
            Some(Label::Lossless) => Some((p.p_lossy, false)),
            Some(Label::Lossy) if p.encoding.map(|e| e.codec) == Some(codec) => Some((p.p_lossy, true)),
            _ => None,
        })
        .collect();
    let positives = samples.iter().filter(|s| s.1).count();
    let negatives = samples.len() - positives;
    if positives == 0 {
        return Err(Error::Argument(format!("no {codec} tracks among the predictions")));
    }
    if negatives == 0 {
        return Err(Error::Argument("no lossless tracks among the predictions".into()));
    }
    let thresholds = threshold_grid();
    let f1: Vec<f64> = thresholds
        .iter()
        .map(|&t| Confusion::at(&samples, t).f1())
        .collect();
    let (peak_i, peak_f1) = f1
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    let area = trapezoid(&thresholds, &f1);
    Ok(F1Curve {
        codec,
        peak_threshold: thresholds[peak_i],
        thresholds,
        f1,
        peak_f1,
        area,
        positives,
        negatives,
    })
}

impl F1Curve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,f1\n");
        for (t, f) in self.thresholds.iter().zip(&self.f1) {
            s.push_str(&format!("{t:.2},{f:.6}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Bitrate;
    use crate::evaluation::tables::tests::{enc, pred};
    use proptest::prelude::*;

    #[test]
    fn separable_scores_give_f1_one_above_zero() {
        let preds = vec![
            pred(enc(Codec::FdkAac, Bitrate::K128, None), 1.0),
            pred(enc(Codec::FdkAac, Bitrate::K320, None), 1.0),
            pred(None, 0.0),
            pred(None, 0.0),
        ];
        let c = f1_curve(&preds, Codec::FdkAac).unwrap();
        assert!(c.f1[1..].iter().all(|&f| f == 1.0));
        // At t = 0 everything is positive: F1 = 2P/(P+1) with P = 0.5.
        assert!((c.f1[0] - 2.0 * 0.5 / 1.5).abs() < 1e-12);
        assert_eq!(c.peak_f1, 1.0);
    }

    #[test]
    fn single_pair_enumeration() {
        let preds = vec![pred(enc(Codec::Vorbis, Bitrate::K128, None), 0.6), pred(None, 0.4)];
        let c = f1_curve(&preds, Codec::Vorbis).unwrap();
        for (t, f) in c.thresholds.iter().zip(&c.f1) {
            let expect = if *t <= 0.4 {
                2.0 / 3.0
            } else if *t <= 0.6 + 1e-12 {
                1.0
            } else {
                0.0
            };
            assert!((f - expect).abs() < 1e-12, "t = {t}");
        }
        assert_eq!(c.peak_f1, 1.0);
    }

    #[test]
    fn other_codecs_are_discarded_and_missing_positives_fail() {
        let preds = vec![pred(enc(Codec::Vorbis, Bitrate::K128, None), 0.6), pred(None, 0.4)];
        assert!(f1_curve(&preds, Codec::Mp3Lame).is_err());
        let only_pos = vec![pred(enc(Codec::Vorbis, Bitrate::K128, None), 0.6)];
        assert!(f1_curve(&only_pos, Codec::Vorbis).is_err());
    }

    #[test]
    fn trapezoid_of_constant_and_line() {
        let x = threshold_grid();
        assert!((trapezoid(&x, &vec![1.0; 101]) - 1.0).abs() < 1e-12);
        assert!((trapezoid(&x, &x) - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn confusion_conserves_counts_and_f1_bounds(
            scores in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60),
        ) {
            let p = scores.iter().filter(|s| s.1).count();
            for t in threshold_grid() {
                let c = Confusion::at(&scores, t);
                prop_assert_eq!(c.total(), scores.len());
                prop_assert!((0.0..=1.0).contains(&c.f1()));
            }
            if p > 0 {
                let prev = p as f64 / scores.len() as f64;
                let f0 = Confusion::at(&scores, 0.0).f1();
                prop_assert!((f0 - 2.0 * prev / (prev + 1.0)).abs() < 1e-12);
            }
        }
    }
}
