//! Track-level prediction over 50%-overlapping 2-second windows.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::audio::{load_audio, AudioClip, CLIP_SAMPLES};
use crate::dataset::{DatasetId, EncodingSpec, Label, Manifest, Split};
use crate::error::{Error, IoContext, Result};
use crate::model::{Model, SpectrogramBatch};
use crate::spectral::{crop_at, SpectrogramLayer};

pub const WINDOW_HOP: usize = CLIP_SAMPLES / 2;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Windows per forward pass.
const WINDOW_BATCH: usize = 8;

/// Number of windows for `n` samples: one window up to 2 s, then one more per
/// started hop, with the last window zero-padded.
pub fn window_count(n: usize) -> usize {
    if n <= CLIP_SAMPLES {
        1
    } else {
        1 + (n - CLIP_SAMPLES).div_ceil(WINDOW_HOP)
    }
}

pub fn window_offsets(n: usize) -> Vec<usize> {
    (0..window_count(n)).map(|k| k * WINDOW_HOP).collect()
}

pub fn windows(clip: &AudioClip) -> Result<Vec<AudioClip>> {
    if clip.samples.is_empty() {
        return Err(Error::Argument("cannot window an empty clip".into()));
    }
    Ok(window_offsets(clip.n_samples())
        .into_iter()
        .map(|o| crop_at(clip, o))
        .collect())
}

/// Arithmetic mean of the window probabilities.
pub fn aggregate(window_probs: &[f64]) -> f64 {
    window_probs.iter().sum::<f64>() / window_probs.len() as f64
}

/// Ties go to lossy.
pub fn decide(p_lossy: f64, threshold: f64) -> Label {
    if p_lossy >= threshold {
        Label::Lossy
    } else {
        Label::Lossless
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub track_id: String,
    pub audio_path: PathBuf,
    pub p_lossy: f64,
    pub window_probs: Vec<f64>,
    pub label_true: Option<Label>,
    pub encoding: Option<EncodingSpec>,
    pub dataset_id: Option<DatasetId>,
    pub predicted: Label,
    /// Set when the audio could not be scored; such records carry no probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> Option<bool> {
        match (self.error.as_ref(), self.label_true) {
            (None, Some(t)) => Some(t == self.predicted),
            _ => None,
        }
    }

    fn failed(track_id: String, audio_path: PathBuf, reason: String) -> Self {
        Self {
            track_id,
            audio_path,
            p_lossy: 0.0,
            window_probs: Vec::new(),
            label_true: None,
            encoding: None,
            dataset_id: None,
            predicted: Label::Lossless,
            error: Some(reason),
        }
    }
}

/// Eval-mode model plus a reusable STFT plan.
pub struct Predictor<'m> {
    pub model: &'m Model,
    pub threshold: f64,
    layer: SpectrogramLayer,
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m Model, threshold: f64) -> Self {
        Self {
            model,
            threshold,
            layer: SpectrogramLayer::new(),
        }
    }

    /// `p_lossy` of every window, in time order. No mask is applied.
    pub fn window_probs(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        let wins = windows(clip)?;
        let mut out = Vec::with_capacity(wins.len());
        for chunk in wins.chunks(WINDOW_BATCH) {
            let specs: Vec<_> = chunk.iter().map(|w| self.layer.compute(w)).collect();
            let batch = SpectrogramBatch::from_spectrograms(&specs);
            out.extend(self.model.predict(&batch)?.iter().map(|p| p.p_lossy()));
        }
        Ok(out)
    }

    pub fn predict_clip(&self, track_id: &str, clip: &AudioClip) -> Result<PredictionRecord> {
        let window_probs = self.window_probs(clip)?;
        let p_lossy = aggregate(&window_probs);
        Ok(PredictionRecord {
            track_id: track_id.to_string(),
            audio_path: PathBuf::new(),
            p_lossy,
            window_probs,
            label_true: None,
            encoding: None,
            dataset_id: None,
            predicted: decide(p_lossy, self.threshold),
            error: None,
        })
    }

    /// Unreadable audio yields a record with `error` set instead of failing.
    pub fn predict_path(&self, track_id: &str, path: &Path) -> PredictionRecord {
        let scored = load_audio(path).and_then(|clip| self.predict_clip(track_id, &clip));
        match scored {
            Ok(mut r) => {
                r.audio_path = path.to_path_buf();
                r
            }
            Err(e) => PredictionRecord::failed(track_id.to_string(), path.to_path_buf(), e.to_string()),
        }
    }
}

pub fn predict_track(path: &Path, model: &Model, threshold: f64) -> PredictionRecord {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Predictor::new(model, threshold).predict_path(&id, path)
}

/// Scores every record of `split` (all records when `None`), keeping manifest order.
pub fn predict_manifest(
    manifest: &Manifest,
    model: &Model,
    split: Option<Split>,
    threshold: f64,
    workers: usize,
) -> Vec<PredictionRecord> {
    let records: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .collect();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<PredictionRecord>>> = Mutex::new(vec![None; records.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(records.len().max(1)) {
            scope.spawn(|| {
                let predictor = Predictor::new(model, threshold);
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(rec) = records.get(i) else { break };
                    let path = manifest.resolve_audio(rec);
                    let mut p = predictor.predict_path(&rec.track_id, &path);
                    if let Some(e) = &p.error {
                        log::warn!("{}: {e}", rec.track_id);
                    }
                    p.audio_path = rec.audio_path.clone();
                    p.label_true = Some(rec.label);
                    p.encoding = rec.encoding;
                    p.dataset_id = Some(rec.dataset_id);
                    slots.lock().expect("slots lock")[i] = Some(p);
                }
            });
        }
    });
    slots
        .into_inner()
        .expect("slots lock")
        .into_iter()
        .map(|p| p.expect("every record scored"))
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    let mut f = fs::File::create(path).at(path)?;
    for p in preds {
        writeln!(f, "{}", serde_json::to_string(p)?).at(path)?;
    }
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = fs::File::open(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    #[test]
    fn window_counts() {
        assert_eq!(window_count(88_200), 1);
        assert_eq!(window_count(441_000), 9);
        assert_eq!(window_count(1), 1);
        assert_eq!(window_count(88_201), 2);
    }

    #[test]
    fn two_and_a_half_seconds_gives_a_padded_second_window() {
        let clip = AudioClip::new((0..110_250).map(|i| (i % 100) as f32 * 0.001 + 0.01).collect());
        let w = windows(&clip).unwrap();
        assert_eq!(w.len(), 2);
        // Second window starts at 44100: 66150 real samples, then 22050 zeros.
        let second = &w[1].samples;
        assert!(second[..66_150].iter().all(|&x| x != 0.0));
        assert!(second[66_150..].iter().all(|&x| x == 0.0));
        assert_eq!(second.len(), CLIP_SAMPLES);
    }

    #[test]
    fn empty_clip_is_rejected() {
        assert!(windows(&AudioClip::new(vec![])).is_err());
    }

    #[test]
    fn aggregation_examples() {
        assert!((aggregate(&[0.9; 7]) - 0.9).abs() < 1e-12);
        let p = aggregate(&[0.2, 0.8]);
        assert!((p - 0.5).abs() < 1e-12);
        assert_eq!(decide(p, 0.5), Label::Lossy);
        assert_eq!(decide(0.4999, 0.5), Label::Lossless);
    }

    #[test]
    fn unreadable_audio_becomes_error_record() {
        let m = Model::init(ModelConfig::with_channels([2, 2, 2, 2]), 0).unwrap();
        let r = predict_track(Path::new("/nonexistent/x.wav"), &m, 0.5);
        assert!(r.error.is_some());
        assert!(r.window_probs.is_empty());
        assert_eq!(r.is_correct(), None);
    }

    #[test]
    fn predictions_roundtrip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let preds = vec![PredictionRecord {
            track_id: "a".into(),
            audio_path: "x.wav".into(),
            p_lossy: 0.25,
            window_probs: vec![0.2, 0.3],
            label_true: Some(Label::Lossless),
            encoding: None,
            dataset_id: Some(DatasetId::Ds1),
            predicted: Label::Lossless,
            error: None,
        }];
        write_predictions(&path, &preds).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), preds);
    }

    proptest! {
        #[test]
        fn window_count_matches_offsets(n in 88_200usize..=2_646_000) {
            let offs = window_offsets(n);
            prop_assert_eq!(offs.len(), window_count(n));
            // Every sample is covered and the last window starts inside the clip.
            let last = *offs.last().unwrap();
            prop_assert!(last < n && last + CLIP_SAMPLES >= n);
            if offs.len() > 1 {
                prop_assert!(offs[offs.len() - 2] + CLIP_SAMPLES < n);
            }
        }

        #[test]
        fn aggregate_is_mean_and_order_free(mut v in prop::collection::vec(0.0f64..=1.0, 1..40)) {
            let brute: f64 = v.iter().fold(0.0, |a, b| a + b) / v.len() as f64;
            let a = aggregate(&v);
            prop_assert!((a - brute).abs() < 1e-6);
            v.reverse();
            prop_assert!((aggregate(&v) - a).abs() < 1e-12);
        }
    }
}
