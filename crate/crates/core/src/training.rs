//! Training loop: random 2-second crops, optional random high-frequency
//! masking, Adam, and track-level validation for model selection.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::load_audio;
use crate::dataset::{Manifest, Split, TrackRecord};
use crate::error::{Error, IoContext, Result};
use crate::inference::{predict_manifest, DEFAULT_THRESHOLD};
use crate::model::checkpoint::{Checkpoint, TrainingMetadata};
use crate::model::{Mode, Model, ModelConfig, SpectrogramBatch, PROB_EPS};
use crate::spectral::{apply_random_mask, random_crop, MaskSpec, Spectrogram, SpectrogramLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub mask_enabled: bool,
    /// Chance that a training example is masked when masking is enabled.
    pub mask_probability: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Example-preparation threads feeding the optimiser.
    pub workers: usize,
    /// Prepared batches that may wait in the queue.
    pub queue_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 100,
            learning_rate: 1e-3,
            early_stop_patience: 10,
            seed: 0,
            mask_enabled: false,
            mask_probability: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            workers: 1,
            queue_depth: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Argument("batch_size and max_epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_probability) {
            return Err(Error::Argument(format!(
                "mask_probability {} outside [0, 1]",
                self.mask_probability
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// RNG for one example, keyed by `(seed, epoch, record index)` so that
/// batches do not depend on how many workers prepared them.
pub fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e90c);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub spectrogram: Spectrogram,
    pub label: usize,
    pub mask: Option<MaskSpec>,
}

/// Load, crop, transform and (maybe) mask one training record.
pub fn make_example<R: Rng + ?Sized>(
    manifest: &Manifest,
    record: &TrackRecord,
    rng: &mut R,
    config: &TrainConfig,
    layer: &SpectrogramLayer,
    mask_low_hz: f64,
) -> Result<Example> {
    if record.split == Split::Test {
        return Err(Error::TestLeakage {
            track_id: record.track_id.clone(),
        });
    }
    let clip = load_audio(&manifest.resolve_audio(record))?;
    let crop = random_crop(&clip, rng);
    let spec = layer.compute(&crop);
    // Draw unconditionally so the crop stream is the same with and without masking.
    let u: f64 = rng.gen();
    let (spectrogram, mask) = if config.mask_enabled && u < config.mask_probability {
        let (s, m) = apply_random_mask(&spec, rng, mask_low_hz)?;
        (s, Some(m))
    } else {
        (spec, None)
    };
    Ok(Example {
        spectrogram,
        label: record.label.class_index(),
        mask,
    })
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub skipped: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_accuracy: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    fn new() -> Self {
        Self {
            epoch: 0,
            best_val_accuracy: f64::NEG_INFINITY,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
        }
    }

    /// Higher accuracy wins; equal accuracy is broken by lower loss.
    fn observe(&mut self, epoch: usize, acc: f64, loss: f64) -> bool {
        let better = acc > self.best_val_accuracy
            || (acc == self.best_val_accuracy && loss < self.best_val_loss);
        self.epoch = epoch;
        if better {
            self.best_val_accuracy = acc;
            self.best_val_loss = loss;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        better
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub history: Vec<EpochMetrics>,
    pub state: TrainState,
}

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "train.log";

struct RunLog(fs::File, PathBuf);

impl RunLog {
    fn line(&mut self, msg: &str) -> Result<()> {
        log::info!("{msg}");
        writeln!(self.0, "{msg}").at(&self.1)
    }
}

/// Batches for one epoch, prepared on `config.workers` threads and handed
/// over in order through a bounded queue.
fn for_each_batch(
    manifest: &Manifest,
    records: &[&TrackRecord],
    epoch: usize,
    config: &TrainConfig,
    mask_low_hz: f64,
    mut consume: impl FnMut(Vec<Example>, usize) -> Result<()>,
) -> Result<()> {
    let order = epoch_order(config.seed, epoch, records.len());
    let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
    let next = AtomicUsize::new(0);
    let (tx, rx) = sync_channel::<(usize, Vec<Example>, usize)>(config.queue_depth.max(1));
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..config.workers.max(1) {
            let tx = tx.clone();
            let (next, batches) = (&next, &batches);
            scope.spawn(move || {
                let layer = SpectrogramLayer::new();
                loop {
                    let b = next.fetch_add(1, Ordering::Relaxed);
                    let Some(idx) = batches.get(b) else { break };
                    let mut examples = Vec::with_capacity(idx.len());
                    let mut skipped = 0;
                    for &i in idx.iter() {
                        let mut rng = example_rng(config.seed, epoch, i);
                        match make_example(manifest, records[i], &mut rng, config, &layer, mask_low_hz) {
                            Ok(ex) => examples.push(ex),
                            Err(e) => {
                                log::warn!("skipping {}: {e}", records[i].track_id);
                                skipped += 1;
                            }
                        }
                    }
                    if tx.send((b, examples, skipped)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        // Reassemble in batch order.
        let mut pending = BTreeMap::new();
        let mut want = 0;
        for (b, ex, skipped) in rx.iter() {
            pending.insert(b, (ex, skipped));
            while let Some((ex, skipped)) = pending.remove(&want) {
                consume(ex, skipped)?;
                want += 1;
            }
        }
        Ok(())
    })
}

/// Trains on the train split, selects on the val split, and writes the run
/// directory (config, metrics, best checkpoint, log).
pub fn train(
    manifest: &Manifest,
    model_config: &ModelConfig,
    config: &TrainConfig,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model_config = model_config.clone();
    model_config.mask_enabled = config.mask_enabled;
    let mut model = Model::init(model_config.clone(), config.seed)?;

    let train_records: Vec<&TrackRecord> = manifest.records_in(Split::Train).collect();
    if train_records.is_empty() || manifest.records_in(Split::Val).next().is_none() {
        return Err(Error::Argument("manifest needs train and val records".into()));
    }
    let val_manifest = Manifest {
        header: manifest.header.clone(),
        records: manifest.records_in(Split::Val).cloned().collect(),
        base_dir: manifest.base_dir.clone(),
    };

    fs::create_dir_all(run_dir).at(run_dir)?;
    let fingerprint = manifest.fingerprint();
    let cfg_path = run_dir.join(CONFIG_FILE);
    fs::write(
        &cfg_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "model": model_config,
            "train": config,
            "manifest_fingerprint": fingerprint,
            "manifest_dir": manifest.base_dir,
        }))?,
    )
    .at(&cfg_path)?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let mut metrics = fs::File::create(&metrics_path).at(&metrics_path)?;
    writeln!(metrics, "epoch,train_loss,train_accuracy,val_accuracy,val_loss,skipped,seconds").at(&metrics_path)?;
    let log_path = run_dir.join(LOG_FILE);
    let mut runlog = RunLog(fs::File::create(&log_path).at(&log_path)?, log_path.clone());
    runlog.line(&format!(
        "training {} params on {} records (mask {}, p={})",
        model.param_count(),
        train_records.len(),
        config.mask_enabled,
        config.mask_probability
    ))?;

    let mut adam = Adam::new(model.param_count(), config);
    let mut state = TrainState::new();
    let mut history = Vec::new();
    let ckpt_path = run_dir.join(CHECKPOINT_FILE);

    for epoch in 0..config.max_epochs {
        let t0 = Instant::now();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut skipped_total = 0usize;
        let mut step = 0usize;
        for_each_batch(
            manifest,
            &train_records,
            epoch,
            config,
            model_config.mask_low_hz,
            |examples, skipped| {
                skipped_total += skipped;
                if examples.is_empty() {
                    return Ok(());
                }
                let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
                let batch = SpectrogramBatch::from_spectrograms(examples.iter().map(|e| &e.spectrogram));
                let out = model.loss_and_gradients(&batch, &labels, Mode::Train)?;
                let loss = out.loss;
                if !loss.is_finite() || out.grads.params.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged { epoch, step, loss });
                }
                correct += out
                    .probs
                    .iter()
                    .zip(&labels)
                    .filter(|(p, &y)| (p[1] >= 0.5) == (y == 1))
                    .count();
                adam.step(&mut model.params.values, &out.grads.params);
                model.update_running_stats(&out.cache);
                loss_sum += loss * labels.len() as f64;
                seen += labels.len();
                step += 1;
                Ok(())
            },
        )?;
        if seen == 0 {
            return Err(Error::Argument("no training example could be loaded".into()));
        }

        let preds = predict_manifest(&val_manifest, &model, None, DEFAULT_THRESHOLD, config.workers);
        let scored: Vec<_> = preds.iter().filter(|p| p.error.is_none()).collect();
        let val_accuracy = scored.iter().filter(|p| p.is_correct() == Some(true)).count() as f64
            / scored.len().max(1) as f64;
        let val_loss = scored
            .iter()
            .map(|p| {
                let py = if p.label_true == Some(crate::dataset::Label::Lossy) {
                    p.p_lossy
                } else {
                    1.0 - p.p_lossy
                };
                -py.max(PROB_EPS).ln()
            })
            .sum::<f64>()
            / scored.len().max(1) as f64;

        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            val_accuracy,
            val_loss,
            skipped: skipped_total,
            seconds: t0.elapsed().as_secs_f64(),
        };
        writeln!(
            metrics,
            "{},{:.6},{:.6},{:.6},{:.6},{},{:.1}",
            m.epoch, m.train_loss, m.train_accuracy, m.val_accuracy, m.val_loss, m.skipped, m.seconds
        )
        .at(&metrics_path)?;
        let improved = state.observe(epoch, val_accuracy, val_loss);
        runlog.line(&format!(
            "epoch {epoch}: train_loss {:.4} train_acc {:.3} val_acc {:.3} val_loss {:.4} ({:.0}s){}",
            m.train_loss,
            m.train_accuracy,
            val_accuracy,
            val_loss,
            m.seconds,
            if improved { " *" } else { "" }
        ))?;
        history.push(m);
        if improved {
            let meta = TrainingMetadata {
                seed: config.seed,
                epoch,
                val_accuracy,
                val_loss,
                mask_enabled: config.mask_enabled,
                mask_probability: config.mask_probability,
                manifest_fingerprint: fingerprint.clone(),
            };
            Checkpoint::new(model.clone(), meta).save(&ckpt_path)?;
        }
        if state.epochs_since_improvement >= config.early_stop_patience {
            runlog.line(&format!("early stop after epoch {epoch}"))?;
            break;
        }
    }
    runlog.line(&format!(
        "best epoch {} with val_acc {:.4}",
        state.best_epoch, state.best_val_accuracy
    ))?;
    Ok(TrainOutcome {
        run_dir: run_dir.to_path_buf(),
        checkpoint: ckpt_path,
        history,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(3, &cfg);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.3, -4.0, 0.0]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-2.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let mut adam = Adam::new(2, &cfg);
        let mut p = vec![3.0, -1.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 2.0)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn selection_prefers_accuracy_then_loss() {
        let mut s = TrainState::new();
        assert!(s.observe(0, 0.5, 0.7));
        assert!(!s.observe(1, 0.5, 0.8));
        assert!(s.observe(2, 0.5, 0.6));
        assert!(s.observe(3, 0.6, 0.9));
        assert!(!s.observe(4, 0.55, 0.1));
        assert_eq!((s.best_epoch, s.epochs_since_improvement), (3, 1));
    }

    #[test]
    fn epoch_order_is_a_permutation_that_changes_per_epoch() {
        let a = epoch_order(1, 0, 50);
        let b = epoch_order(1, 1, 50);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(a, b);
        assert_eq!(a, epoch_order(1, 0, 50));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            mask_probability: 1.5,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
