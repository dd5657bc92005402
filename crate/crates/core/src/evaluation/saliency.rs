//! Input-gradient saliency and the spectral-hole comparison.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::model::{Mode, Model, SpectrogramBatch};
use crate::spectral::{bin_of_frequency, crop_at, Spectrogram, SpectrogramLayer};

/// `|d p_lossy / d x|` per spectrogram cell, divided by its maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    pub values: Vec<f64>,
    pub n_bins: usize,
    pub n_frames: usize,
    /// Maximum absolute gradient before normalisation.
    pub raw_max: f64,
    pub p_lossy: f64,
}

impl Saliency {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.n_frames + frame]
    }
}

pub fn saliency_map(model: &Model, spectrogram: &Spectrogram) -> Result<Saliency> {
    let batch = SpectrogramBatch::from_spectrograms([spectrogram]);
    let out = model.forward(&batch, Mode::Eval, true)?;
    let p = out.probs[0];
    // Softmax Jacobian row for the lossy class.
    let dlogits = [[-p[1] * p[0], p[1] * (1.0 - p[1])]];
    let grads = model.backward(out.cache.as_ref().expect("cache requested"), &dlogits, true);
    let mut values: Vec<f64> = grads
        .input
        .expect("input gradient requested")
        .into_iter()
        .map(f64::abs)
        .collect();
    let raw_max = values.iter().copied().fold(0.0, f64::max);
    if raw_max > 0.0 {
        values.iter_mut().for_each(|v| *v /= raw_max);
    }
    Ok(Saliency {
        values,
        n_bins: spectrogram.n_bins,
        n_frames: spectrogram.n_frames,
        raw_max,
        p_lossy: p[1],
    })
}

/// Drop below the lossless level that marks a cell as a codec hole.
pub const DEFAULT_HOLE_DB: f64 = 20.0;

/// Cells below `below_bin` where the lossy spectrogram sits at least
/// `threshold_db` under the lossless one.
pub fn hole_mask(lossless: &Spectrogram, lossy: &Spectrogram, below_bin: usize, threshold_db: f64) -> Result<Vec<bool>> {
    if (lossless.n_bins, lossless.n_frames) != (lossy.n_bins, lossy.n_frames) {
        return Err(Error::Shape {
            expected: format!("{}x{}", lossless.n_bins, lossless.n_frames),
            actual: format!("{}x{}", lossy.n_bins, lossy.n_frames),
        });
    }
    let nf = lossless.n_frames;
    Ok((0..lossless.values.len())
        .map(|i| i / nf < below_bin && lossless.values[i] - lossy.values[i] >= threshold_db)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleComparison {
    pub hole_cells: usize,
    pub hole_mean: f64,
    pub nonhole_mean: f64,
}

impl HoleComparison {
    pub fn holes_win(&self) -> bool {
        self.hole_mean > self.nonhole_mean
    }
}

/// Mean saliency over the hole cells against the same number of cells drawn
/// uniformly from the non-hole cells below `below_bin`.
pub fn compare_holes<R: Rng + ?Sized>(
    sal: &Saliency,
    holes: &[bool],
    below_bin: usize,
    rng: &mut R,
) -> Option<HoleComparison> {
    let nf = sal.n_frames;
    let hole_idx: Vec<usize> = (0..holes.len()).filter(|&i| holes[i]).collect();
    let others: Vec<usize> = (0..below_bin.min(sal.n_bins) * nf).filter(|&i| !holes[i]).collect();
    if hole_idx.is_empty() || others.len() < hole_idx.len() {
        return None;
    }
    let mean = |idx: &mut dyn Iterator<Item = usize>| {
        let (s, n) = idx.fold((0.0, 0usize), |(s, n), i| (s + sal.values[i], n + 1));
        s / n as f64
    };
    let hole_mean = mean(&mut hole_idx.iter().copied());
    let picked = sample(rng, others.len(), hole_idx.len());
    let nonhole_mean = mean(&mut picked.iter().map(|k| others[k]));
    Some(HoleComparison {
        hole_cells: hole_idx.len(),
        hole_mean,
        nonhole_mean,
    })
}

/// Lag (in samples) that best aligns `other` to `reference`, searched over
/// `-max_lag..=max_lag` on a segment starting at `start`.
pub fn estimate_lag(reference: &[f32], other: &[f32], start: usize, len: usize, max_lag: usize) -> isize {
    let mut best = (0isize, f64::NEG_INFINITY);
    for lag in -(max_lag as isize)..=max_lag as isize {
        let mut acc = 0.0f64;
        for i in start..start + len {
            let j = i as isize + lag;
            if j < 0 || j as usize >= other.len() || i >= reference.len() {
                continue;
            }
            acc += reference[i] as f64 * other[j as usize] as f64;
        }
        if acc > best.1 {
            best = (lag, acc);
        }
    }
    best.0
}

/// Hole analysis for one aligned lossless/lossy pair.
pub struct PairAnalysis {
    pub lossless: Spectrogram,
    pub lossy: Spectrogram,
    pub saliency: Saliency,
    pub holes: Vec<bool>,
    pub comparison: Option<HoleComparison>,
}

/// Crops the same 2-second span from both clips (after lag alignment), finds
/// holes below the cutoff and compares saliency inside and outside them.
pub fn analyse_pair<R: Rng + ?Sized>(
    model: &Model,
    lossless: &AudioClip,
    lossy: &AudioClip,
    cutoff_hz: f64,
    offset: usize,
    threshold_db: f64,
    rng: &mut R,
) -> Result<PairAnalysis> {
    let lag = estimate_lag(&lossless.samples, &lossy.samples, offset, 8192, 2048);
    let lossy_offset = (offset as isize + lag).max(0) as usize;
    let layer = SpectrogramLayer::new();
    let a = layer.compute(&crop_at(lossless, offset));
    let b = layer.compute(&crop_at(lossy, lossy_offset));
    // Keep clear of the encoder's transition band.
    let below_bin = bin_of_frequency(cutoff_hz)?.saturating_sub(3);
    let holes = hole_mask(&a, &b, below_bin, threshold_db)?;
    let saliency = saliency_map(model, &b)?;
    let comparison = compare_holes(&saliency, &holes, below_bin, rng);
    Ok(PairAnalysis {
        lossless: a,
        lossy: b,
        saliency,
        holes,
        comparison,
    })
}
