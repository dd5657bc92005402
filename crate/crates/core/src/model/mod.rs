//! CNN + bidirectional LSTM classifier over `513 x 173` spectrograms.
//!
//! Four conv blocks (3x3 same conv, ReLU, batch norm, max pool) shrink the
//! spectrogram to a `[C4, 32, 5]` map. The five pooled time steps feed a
//! two-layer bidirectional LSTM; the top layer's final forward and backward
//! hidden states are concatenated and mapped by a dense layer to two logits.
//! Forward and backward passes are written out by hand.

pub mod checkpoint;
mod layers;
pub mod loss;
mod lstm;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Spectrogram, N_BINS, N_FRAMES};
use layers::{col2im, gemm, im2col, maxpool_forward};
use lstm::{LstmDirCache, LstmIdx, SeqDims};

pub use loss::{cross_entropy, cross_entropy_grad, PROB_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_fft: usize,
    pub conv_channels: [usize; 4],
    pub kernel: (usize, usize),
    pub pool_sizes: [(usize, usize); 4],
    /// Hidden size per LSTM direction.
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub bidirectional: bool,
    pub head_width: usize,
    pub n_classes: usize,
    pub mask_enabled: bool,
    pub mask_low_hz: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Fixed affine input standardisation: `(db - input_center_db) / input_scale_db`.
    pub input_center_db: f64,
    pub input_scale_db: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            conv_channels: [16, 32, 64, 128],
            kernel: (3, 3),
            pool_sizes: [(2, 2), (2, 2), (2, 2), (2, 4)],
            lstm_hidden: 128,
            lstm_layers: 2,
            bidirectional: true,
            head_width: 256,
            n_classes: 2,
            mask_enabled: false,
            mask_low_hz: 14_000.0,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            input_center_db: -40.0,
            input_scale_db: 40.0,
        }
    }
}

impl ModelConfig {
    pub fn with_channels(channels: [usize; 4]) -> Self {
        Self {
            conv_channels: channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(format!("model config: {m}")));
        if self.n_fft != 1024 {
            return bad("n_fft must be 1024");
        }
        if self.kernel != (3, 3) {
            return bad("kernel must be (3, 3)");
        }
        if self.pool_sizes != [(2, 2), (2, 2), (2, 2), (2, 4)] {
            return bad("pool sizes are fixed at (2,2),(2,2),(2,2),(2,4)");
        }
        if self.conv_channels.contains(&0) || self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return bad("layer sizes must be positive");
        }
        if !self.bidirectional {
            return bad("the LSTM must be bidirectional");
        }
        if self.head_width != 2 * self.lstm_hidden {
            return bad("head_width must equal 2 * lstm_hidden");
        }
        if self.n_classes != 2 {
            return bad("n_classes must be 2");
        }
        if !(self.input_scale_db > 0.0) || !(self.bn_eps > 0.0) {
            return bad("input scale and batch-norm epsilon must be positive");
        }
        Ok(())
    }

    /// `(freq, time)` extent entering each conv block, plus the final map.
    pub fn feature_dims(&self) -> [(usize, usize); 5] {
        let mut dims = [(N_BINS, N_FRAMES); 5];
        for (b, &(ph, pw)) in self.pool_sizes.iter().enumerate() {
            dims[b + 1] = (dims[b].0 / ph, dims[b].1 / pw);
        }
        dims
    }

    /// LSTM sequence length (pooled time steps).
    pub fn seq_len(&self) -> usize {
        self.feature_dims()[4].1
    }

    /// Per-step LSTM input width: final channels times pooled frequency bins.
    pub fn lstm_input(&self) -> usize {
        self.conv_channels[3] * self.feature_dims()[4].0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// `true` for batch-norm running statistics (not trained by gradient).
    pub buffer: bool,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvIdx {
    w: Range<usize>,
    b: Range<usize>,
    gamma: Range<usize>,
    beta: Range<usize>,
    running_mean: Range<usize>,
    running_var: Range<usize>,
    cin: usize,
    cout: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv: Vec<ConvIdx>,
    lstm: Vec<[LstmIdx; 2]>,
    head_w: Range<usize>,
    head_b: Range<usize>,
    n_params: usize,
    n_buffers: usize,
    entries: Vec<ParamEntry>,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut entries = Vec::new();
        let mut n_params = 0;
        let mut n_buffers = 0;
        let mut take = |name: String, shape: Vec<usize>, buffer: bool| -> Range<usize> {
            let len: usize = shape.iter().product();
            let counter = if buffer { &mut n_buffers } else { &mut n_params };
            let r = *counter..*counter + len;
            entries.push(ParamEntry {
                name,
                shape,
                offset: r.start,
                buffer,
            });
            *counter += len;
            r
        };

        let mut conv = Vec::new();
        let mut cin = 1;
        for (i, &cout) in cfg.conv_channels.iter().enumerate() {
            let w = take(format!("conv{i}.weight"), vec![cout, cin, 3, 3], false);
            let b = take(format!("conv{i}.bias"), vec![cout], false);
            let gamma = take(format!("bn{i}.weight"), vec![cout], false);
            let beta = take(format!("bn{i}.bias"), vec![cout], false);
            let running_mean = take(format!("bn{i}.running_mean"), vec![cout], true);
            let running_var = take(format!("bn{i}.running_var"), vec![cout], true);
            conv.push(ConvIdx {
                w,
                b,
                gamma,
                beta,
                running_mean,
                running_var,
                cin,
                cout,
            });
            cin = cout;
        }

        let h = cfg.lstm_hidden;
        let mut lstm = Vec::new();
        let mut input = cfg.lstm_input();
        for layer in 0..cfg.lstm_layers {
            let mut dir = |suffix: &str| LstmIdx {
                w_ih: take(format!("lstm.weight_ih_l{layer}{suffix}"), vec![4 * h, input], false),
                w_hh: take(format!("lstm.weight_hh_l{layer}{suffix}"), vec![4 * h, h], false),
                b_ih: take(format!("lstm.bias_ih_l{layer}{suffix}"), vec![4 * h], false),
                b_hh: take(format!("lstm.bias_hh_l{layer}{suffix}"), vec![4 * h], false),
                input,
            };
            let fwd = dir("");
            let bwd = dir("_reverse");
            lstm.push([fwd, bwd]);
            input = 2 * h;
        }
        let head_w = take("head.weight".into(), vec![cfg.n_classes, cfg.head_width], false);
        let head_b = take("head.bias".into(), vec![cfg.n_classes], false);
        Self {
            conv,
            lstm,
            head_w,
            head_b,
            n_params,
            n_buffers,
            entries,
        }
    }
}

/// Learned weights plus batch-norm running statistics, both flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub values: Vec<f64>,
    pub buffers: Vec<f64>,
}

impl ModelParameters {
    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.buffers).all(|v| v.is_finite())
    }
}

/// A batch of spectrograms shaped `[B, 1, 513, 173]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramBatch {
    pub data: Vec<f64>,
    pub shape: [usize; 4],
}

impl SpectrogramBatch {
    pub fn from_spectrograms<'a>(specs: impl IntoIterator<Item = &'a Spectrogram>) -> Self {
        let mut data = Vec::new();
        let mut b = 0;
        let mut dims = (N_BINS, N_FRAMES);
        for s in specs {
            dims = (s.n_bins, s.n_frames);
            data.extend_from_slice(&s.values);
            b += 1;
        }
        Self {
            data,
            shape: [b, 1, dims.0, dims.1],
        }
    }

    pub fn batch_size(&self) -> usize {
        self.shape[0]
    }

    fn check(&self) -> Result<()> {
        let [b, c, h, w] = self.shape;
        if b == 0 || c != 1 || h != N_BINS || w != N_FRAMES || self.data.len() != b * c * h * w {
            return Err(Error::Shape {
                expected: format!("[B>=1, 1, {N_BINS}, {N_FRAMES}]"),
                actual: format!("{:?} with {} values", self.shape, self.data.len()),
            });
        }
        Ok(())
    }
}

/// Two-class probability vector `(p_lossless, p_lossy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p: [f64; 2],
}

impl Prediction {
    pub fn p_lossy(&self) -> f64 {
        self.p[1]
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    relu_mask: Vec<bool>,
    /// Normalised activations (train mode only).
    xhat: Vec<f64>,
    /// Per channel: `1/sqrt(var+eps)` in train mode, `gamma/sqrt(rv+eps)` in eval.
    scale: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    argmax: Vec<u32>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    batch: usize,
    /// Input of each conv block; index 4 holds the final pooled map.
    block_inputs: Vec<Vec<f64>>,
    blocks: Vec<BlockCache>,
    lstm_inputs: Vec<Vec<f64>>,
    lstm: Vec<[LstmDirCache; 2]>,
    head_in: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<[f64; 2]>,
    pub probs: Vec<[f64; 2]>,
    pub cache: Option<ForwardCache>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    /// Gradient w.r.t. the raw spectrogram values, when requested.
    pub input: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub probs: Vec<[f64; 2]>,
    pub grads: Gradients,
    pub cache: ForwardCache,
}

pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
    layout: Layout,
}

/// Deterministic fan-in-scaled initialisation.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    Model::init(config.clone(), seed)
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; layout.n_params];
        let mut buffers = vec![0.0; layout.n_buffers];
        let fill = |v: &mut [f64], bound: f64, rng: &mut ChaCha8Rng| {
            for x in v {
                *x = rng.gen_range(-bound..bound);
            }
        };
        for c in &layout.conv {
            let bound = 1.0 / ((c.cin * 9) as f64).sqrt();
            fill(&mut values[c.w.clone()], bound, &mut rng);
            fill(&mut values[c.b.clone()], bound, &mut rng);
            values[c.gamma.clone()].fill(1.0);
            values[c.beta.clone()].fill(0.0);
            buffers[c.running_mean.clone()].fill(0.0);
            buffers[c.running_var.clone()].fill(1.0);
        }
        let bound = 1.0 / (config.lstm_hidden as f64).sqrt();
        for layer in &layout.lstm {
            for d in layer {
                for r in [&d.w_ih, &d.w_hh, &d.b_ih, &d.b_hh] {
                    fill(&mut values[r.clone()], bound, &mut rng);
                }
            }
        }
        let bound = 1.0 / (config.head_width as f64).sqrt();
        fill(&mut values[layout.head_w.clone()], bound, &mut rng);
        fill(&mut values[layout.head_b.clone()], bound, &mut rng);
        Ok(Self {
            config,
            params: ModelParameters { values, buffers },
            layout,
        })
    }

    /// Rebuilds a model from stored parameters, checking their sizes.
    pub fn from_parts(config: ModelConfig, params: ModelParameters) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.values.len() != layout.n_params || params.buffers.len() != layout.n_buffers {
            return Err(Error::Shape {
                expected: format!("{} parameters, {} buffers", layout.n_params, layout.n_buffers),
                actual: format!("{} parameters, {} buffers", params.values.len(), params.buffers.len()),
            });
        }
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.n_params
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.layout.entries
    }

    /// Class probabilities in eval mode.
    pub fn predict(&self, batch: &SpectrogramBatch) -> Result<Vec<Prediction>> {
        Ok(self
            .forward(batch, Mode::Eval, false)?
            .probs
            .into_iter()
            .map(|p| Prediction { p })
            .collect())
    }

    pub fn forward(&self, batch: &SpectrogramBatch, mode: Mode, keep_cache: bool) -> Result<ForwardOutput> {
        batch.check()?;
        let cfg = &self.config;
        let p = &self.params.values;
        let bsz = batch.batch_size();
        let dims = cfg.feature_dims();

        let inv = 1.0 / cfg.input_scale_db;
        let mut x: Vec<f64> = batch
            .data
            .iter()
            .map(|v| (v - cfg.input_center_db) * inv)
            .collect();
        let mut block_inputs = Vec::new();
        let mut blocks = Vec::new();

        for (bi, c) in self.layout.conv.iter().enumerate() {
            let (h, w) = dims[bi];
            let (oh, ow) = dims[bi + 1];
            let hw = h * w;
            let mut y = vec![0.0; bsz * c.cout * hw];
            let mut cols = vec![0.0; c.cin * 9 * hw];
            let weight = &p[c.w.clone()];
            let bias = &p[c.b.clone()];
            for s in 0..bsz {
                im2col(&x[s * c.cin * hw..(s + 1) * c.cin * hw], c.cin, h, w, &mut cols);
                let out = &mut y[s * c.cout * hw..(s + 1) * c.cout * hw];
                gemm(c.cout, c.cin * 9, hw, 1.0, weight, false, &cols, false, 0.0, out);
                for (ch, plane) in out.chunks_exact_mut(hw).enumerate() {
                    let bch = bias[ch];
                    for v in plane {
                        *v = (*v + bch).max(0.0);
                    }
                }
            }
            drop(cols);
            let relu_mask: Vec<bool> = if keep_cache {
                y.iter().map(|&v| v > 0.0).collect()
            } else {
                Vec::new()
            };

            let gamma = &p[c.gamma.clone()];
            let beta = &p[c.beta.clone()];
            let mut scale = vec![0.0; c.cout];
            let mut batch_mean = Vec::new();
            let mut batch_var = Vec::new();
            let mut xhat = Vec::new();
            match mode {
                Mode::Train => {
                    let n = (bsz * hw) as f64;
                    batch_mean = vec![0.0; c.cout];
                    batch_var = vec![0.0; c.cout];
                    for s in 0..bsz {
                        for ch in 0..c.cout {
                            let plane = &y[(s * c.cout + ch) * hw..(s * c.cout + ch + 1) * hw];
                            batch_mean[ch] += plane.iter().sum::<f64>();
                        }
                    }
                    batch_mean.iter_mut().for_each(|m| *m /= n);
                    for s in 0..bsz {
                        for ch in 0..c.cout {
                            let m = batch_mean[ch];
                            let plane = &y[(s * c.cout + ch) * hw..(s * c.cout + ch + 1) * hw];
                            batch_var[ch] += plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                        }
                    }
                    batch_var.iter_mut().for_each(|v| *v /= n);
                    for ch in 0..c.cout {
                        scale[ch] = 1.0 / (batch_var[ch] + cfg.bn_eps).sqrt();
                    }
                    for s in 0..bsz {
                        for ch in 0..c.cout {
                            let (m, k) = (batch_mean[ch], scale[ch]);
                            for v in &mut y[(s * c.cout + ch) * hw..(s * c.cout + ch + 1) * hw] {
                                *v = (*v - m) * k;
                            }
                        }
                    }
                    if keep_cache {
                        xhat = y.clone();
                    }
                    for s in 0..bsz {
                        for ch in 0..c.cout {
                            let (g, bt) = (gamma[ch], beta[ch]);
                            for v in &mut y[(s * c.cout + ch) * hw..(s * c.cout + ch + 1) * hw] {
                                *v = g * *v + bt;
                            }
                        }
                    }
                }
                Mode::Eval => {
                    let rm = &self.params.buffers[c.running_mean.clone()];
                    let rv = &self.params.buffers[c.running_var.clone()];
                    for ch in 0..c.cout {
                        scale[ch] = gamma[ch] / (rv[ch] + cfg.bn_eps).sqrt();
                    }
                    for s in 0..bsz {
                        for ch in 0..c.cout {
                            let (m, k, bt) = (rm[ch], scale[ch], beta[ch]);
                            for v in &mut y[(s * c.cout + ch) * hw..(s * c.cout + ch + 1) * hw] {
                                *v = (*v - m) * k + bt;
                            }
                        }
                    }
                }
            }

            let mut pooled = vec![0.0; bsz * c.cout * oh * ow];
            let mut argmax = vec![0u32; pooled.len()];
            for s in 0..bsz {
                maxpool_forward(
                    &y[s * c.cout * hw..(s + 1) * c.cout * hw],
                    c.cout,
                    h,
                    w,
                    cfg.pool_sizes[bi],
                    &mut pooled[s * c.cout * oh * ow..(s + 1) * c.cout * oh * ow],
                    &mut argmax[s * c.cout * oh * ow..(s + 1) * c.cout * oh * ow],
                );
            }
            if keep_cache {
                block_inputs.push(std::mem::take(&mut x));
                blocks.push(BlockCache {
                    relu_mask,
                    xhat,
                    scale,
                    batch_mean,
                    batch_var,
                    argmax,
                });
            }
            x = pooled;
        }

        // [B, C, F, T] -> [T, B, C*F]
        let (fh, steps) = dims[4];
        let c4 = cfg.conv_channels[3];
        let feat = c4 * fh;
        let mut seq = vec![0.0; steps * bsz * feat];
        for s in 0..bsz {
            for ch in 0..c4 {
                for f in 0..fh {
                    for t in 0..steps {
                        seq[(t * bsz + s) * feat + ch * fh + f] = x[((s * c4 + ch) * fh + f) * steps + t];
                    }
                }
            }
        }
        if keep_cache {
            block_inputs.push(x);
        }

        let hid = cfg.lstm_hidden;
        let sd = SeqDims {
            steps,
            batch: bsz,
            hidden: hid,
        };
        let mut lstm_inputs = Vec::new();
        let mut lstm_caches = Vec::new();
        let mut layer_in = seq;
        for idx in &self.layout.lstm {
            let fwd = lstm::forward(p, &idx[0], &layer_in, sd, false);
            let bwd = lstm::forward(p, &idx[1], &layer_in, sd, true);
            let mut out = vec![0.0; steps * bsz * 2 * hid];
            for r in 0..steps * bsz {
                out[r * 2 * hid..r * 2 * hid + hid].copy_from_slice(&fwd.h[r * hid..(r + 1) * hid]);
                out[r * 2 * hid + hid..(r + 1) * 2 * hid].copy_from_slice(&bwd.h[r * hid..(r + 1) * hid]);
            }
            lstm_inputs.push(std::mem::replace(&mut layer_in, out));
            lstm_caches.push([fwd, bwd]);
        }
        let top = lstm_caches.last().expect("at least one LSTM layer");
        let mut head_in = vec![0.0; bsz * 2 * hid];
        for s in 0..bsz {
            let last = ((steps - 1) * bsz + s) * hid;
            let first = s * hid;
            head_in[s * 2 * hid..s * 2 * hid + hid].copy_from_slice(&top[0].h[last..last + hid]);
            head_in[s * 2 * hid + hid..(s + 1) * 2 * hid].copy_from_slice(&top[1].h[first..first + hid]);
        }

        let hw_ = &p[self.layout.head_w.clone()];
        let hb = &p[self.layout.head_b.clone()];
        let mut logits = Vec::with_capacity(bsz);
        for s in 0..bsz {
            let z = &head_in[s * 2 * hid..(s + 1) * 2 * hid];
            let mut l = [hb[0], hb[1]];
            for (k, lk) in l.iter_mut().enumerate() {
                *lk += hw_[k * 2 * hid..(k + 1) * 2 * hid]
                    .iter()
                    .zip(z)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            logits.push(l);
        }
        let probs = logits.iter().map(|&z| softmax2(z)).collect();
        let cache = keep_cache.then(|| ForwardCache {
            mode,
            batch: bsz,
            block_inputs,
            blocks,
            lstm_inputs,
            lstm: lstm_caches,
            head_in,
        });
        Ok(ForwardOutput {
            logits,
            probs,
            cache,
        })
    }

    /// Gradients of a scalar objective given its derivative w.r.t. the logits.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[[f64; 2]], want_input: bool) -> Gradients {
        let cfg = &self.config;
        let p = &self.params.values;
        let bsz = cache.batch;
        assert_eq!(dlogits.len(), bsz);
        let mut g = vec![0.0; self.layout.n_params];
        let hid = cfg.lstm_hidden;
        let dims = cfg.feature_dims();
        let (fh, steps) = dims[4];
        let sd = SeqDims {
            steps,
            batch: bsz,
            hidden: hid,
        };

        // Dense head.
        let head_w = &p[self.layout.head_w.clone()];
        let mut dz = vec![0.0; bsz * 2 * hid];
        for s in 0..bsz {
            let z = &cache.head_in[s * 2 * hid..(s + 1) * 2 * hid];
            for k in 0..2 {
                let d = dlogits[s][k];
                g[self.layout.head_b.start + k] += d;
                let row = self.layout.head_w.start + k * 2 * hid;
                for j in 0..2 * hid {
                    g[row + j] += d * z[j];
                    dz[s * 2 * hid + j] += d * head_w[k * 2 * hid + j];
                }
            }
        }

        // Only the final states of the top layer reach the head.
        let n_layers = self.layout.lstm.len();
        let mut dh_fwd = vec![0.0; steps * bsz * hid];
        let mut dh_bwd = vec![0.0; steps * bsz * hid];
        for s in 0..bsz {
            let last = ((steps - 1) * bsz + s) * hid;
            dh_fwd[last..last + hid].copy_from_slice(&dz[s * 2 * hid..s * 2 * hid + hid]);
            dh_bwd[s * hid..(s + 1) * hid].copy_from_slice(&dz[s * 2 * hid + hid..(s + 1) * 2 * hid]);
        }
        let mut dseq = Vec::new();
        for layer in (0..n_layers).rev() {
            let idx = &self.layout.lstm[layer];
            let x_in = &cache.lstm_inputs[layer];
            let mut dx = vec![0.0; x_in.len()];
            let caches = &cache.lstm[layer];
            lstm::backward(p, &idx[0], x_in, &caches[0], &dh_fwd, sd, false, &mut g, Some(&mut dx));
            lstm::backward(p, &idx[1], x_in, &caches[1], &dh_bwd, sd, true, &mut g, Some(&mut dx));
            if layer > 0 {
                for r in 0..steps * bsz {
                    dh_fwd[r * hid..(r + 1) * hid].copy_from_slice(&dx[r * 2 * hid..r * 2 * hid + hid]);
                    dh_bwd[r * hid..(r + 1) * hid].copy_from_slice(&dx[r * 2 * hid + hid..(r + 1) * 2 * hid]);
                }
            } else {
                dseq = dx;
            }
        }

        // [T, B, C*F] -> [B, C, F, T]
        let c4 = cfg.conv_channels[3];
        let feat = c4 * fh;
        let mut dmap = vec![0.0; bsz * c4 * fh * steps];
        for s in 0..bsz {
            for ch in 0..c4 {
                for f in 0..fh {
                    for t in 0..steps {
                        dmap[((s * c4 + ch) * fh + f) * steps + t] = dseq[(t * bsz + s) * feat + ch * fh + f];
                    }
                }
            }
        }

        let mut dpooled = dmap;
        let mut input_grad = None;
        for bi in (0..self.layout.conv.len()).rev() {
            let c = &self.layout.conv[bi];
            let bc = &cache.blocks[bi];
            let (h, w) = dims[bi];
            let hw = h * w;
            let n_out = bsz * c.cout * hw;
            let pooled_per_sample = c.cout * dims[bi + 1].0 * dims[bi + 1].1;

            let mut dy = vec![0.0; n_out];
            for s in 0..bsz {
                let base = s * c.cout * hw;
                for o in 0..pooled_per_sample {
                    let k = s * pooled_per_sample + o;
                    dy[base + bc.argmax[k] as usize] += dpooled[k];
                }
            }

            // Batch norm.
            let gamma = &p[c.gamma.clone()];
            match cache.mode {
                Mode::Train => {
                    let n = (bsz * hw) as f64;
                    let mut sum_dy = vec![0.0; c.cout];
                    let mut sum_dy_xhat = vec![0.0; c.cout];
                    for s in 0..bsz {
                        for ch in 0..c.cout {
                            let r = (s * c.cout + ch) * hw..(s * c.cout + ch + 1) * hw;
                            for (d, xh) in dy[r.clone()].iter().zip(&bc.xhat[r]) {
                                sum_dy[ch] += d;
                                sum_dy_xhat[ch] += d * xh;
                            }
                        }
                    }
                    for ch in 0..c.cout {
                        g[c.gamma.start + ch] += sum_dy_xhat[ch];
                        g[c.beta.start + ch] += sum_dy[ch];
                    }
                    for s in 0..bsz {
                        for ch in 0..c.cout {
                            let k = gamma[ch] * bc.scale[ch] / n;
                            let (sd_, sdx) = (sum_dy[ch], sum_dy_xhat[ch]);
                            let r = (s * c.cout + ch) * hw..(s * c.cout + ch + 1) * hw;
                            for (d, xh) in dy[r.clone()].iter_mut().zip(&bc.xhat[r]) {
                                *d = k * (n * *d - sd_ - xh * sdx);
                            }
                        }
                    }
                }
                Mode::Eval => {
                    // xhat is not kept in eval mode; recover it from the block output path.
                    let rm = &self.params.buffers[c.running_mean.clone()];
                    let rv = &self.params.buffers[c.running_var.clone()];
                    let x_in = &cache.block_inputs[bi];
                    let a = self.conv_relu(bi, x_in, bsz);
                    for s in 0..bsz {
                        for ch in 0..c.cout {
                            let inv_std = 1.0 / (rv[ch] + cfg.bn_eps).sqrt();
                            let r = (s * c.cout + ch) * hw..(s * c.cout + ch + 1) * hw;
                            let mut sdy = 0.0;
                            let mut sdx = 0.0;
                            for (d, av) in dy[r.clone()].iter_mut().zip(&a[r]) {
                                sdy += *d;
                                sdx += *d * (av - rm[ch]) * inv_std;
                                *d *= bc.scale[ch];
                            }
                            g[c.gamma.start + ch] += sdx;
                            g[c.beta.start + ch] += sdy;
                        }
                    }
                }
            }

            // ReLU.
            for (d, &m) in dy.iter_mut().zip(&bc.relu_mask) {
                if !m {
                    *d = 0.0;
                }
            }

            // Convolution.
            let x_in = &cache.block_inputs[bi];
            let weight = &p[c.w.clone()];
            let need_dx = bi > 0 || want_input;
            let mut dx = if need_dx {
                vec![0.0; bsz * c.cin * hw]
            } else {
                Vec::new()
            };
            let mut cols = vec![0.0; c.cin * 9 * hw];
            let mut dcols = if need_dx {
                vec![0.0; c.cin * 9 * hw]
            } else {
                Vec::new()
            };
            for s in 0..bsz {
                let dys = &dy[s * c.cout * hw..(s + 1) * c.cout * hw];
                im2col(&x_in[s * c.cin * hw..(s + 1) * c.cin * hw], c.cin, h, w, &mut cols);
                gemm(c.cout, hw, c.cin * 9, 1.0, dys, false, &cols, true, 1.0, &mut g[c.w.clone()]);
                for ch in 0..c.cout {
                    g[c.b.start + ch] += dys[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                }
                if need_dx {
                    gemm(c.cin * 9, c.cout, hw, 1.0, weight, true, dys, false, 0.0, &mut dcols);
                    col2im(&dcols, c.cin, h, w, &mut dx[s * c.cin * hw..(s + 1) * c.cin * hw]);
                }
            }
            if bi == 0 && want_input {
                let inv = 1.0 / cfg.input_scale_db;
                dx.iter_mut().for_each(|v| *v *= inv);
                input_grad = Some(dx);
            } else {
                dpooled = dx;
            }
        }

        Gradients {
            params: g,
            input: input_grad,
        }
    }

    /// Recomputes `relu(conv(x))` for one block.
    fn conv_relu(&self, bi: usize, x: &[f64], bsz: usize) -> Vec<f64> {
        let c = &self.layout.conv[bi];
        let (h, w) = self.config.feature_dims()[bi];
        let hw = h * w;
        let p = &self.params.values;
        let mut y = vec![0.0; bsz * c.cout * hw];
        let mut cols = vec![0.0; c.cin * 9 * hw];
        for s in 0..bsz {
            im2col(&x[s * c.cin * hw..(s + 1) * c.cin * hw], c.cin, h, w, &mut cols);
            let out = &mut y[s * c.cout * hw..(s + 1) * c.cout * hw];
            gemm(c.cout, c.cin * 9, hw, 1.0, &p[c.w.clone()], false, &cols, false, 0.0, out);
            for (ch, plane) in out.chunks_exact_mut(hw).enumerate() {
                for v in plane {
                    *v = (*v + p[c.b.start + ch]).max(0.0);
                }
            }
        }
        y
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates (unbiased variance, exponential average).
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.config.bn_momentum;
        let dims = self.config.feature_dims();
        for (bi, c) in self.layout.conv.iter().enumerate() {
            let bc = &cache.blocks[bi];
            let n = (cache.batch * dims[bi].0 * dims[bi].1) as f64;
            let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            for ch in 0..c.cout {
                let rm = &mut self.params.buffers[c.running_mean.start + ch];
                *rm = (1.0 - m) * *rm + m * bc.batch_mean[ch];
                let rv = &mut self.params.buffers[c.running_var.start + ch];
                *rv = (1.0 - m) * *rv + m * bc.batch_var[ch] * correction;
            }
        }
    }

    /// Mean cross-entropy loss and its parameter gradients on one batch.
    pub fn loss_and_gradients(&self, batch: &SpectrogramBatch, labels: &[usize], mode: Mode) -> Result<StepOutput> {
        let out = self.forward(batch, mode, true)?;
        let loss = cross_entropy(&out.probs, labels)?;
        let dlogits = cross_entropy_grad(&out.probs, labels)?;
        let cache = out.cache.expect("cache requested");
        let grads = self.backward(&cache, &dlogits, false);
        Ok(StepOutput {
            loss,
            probs: out.probs,
            grads,
            cache,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(b: usize, seed: u64) -> SpectrogramBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpectrogramBatch {
            data: (0..b * N_BINS * N_FRAMES).map(|_| rng.gen_range(-80.0..0.0)).collect(),
            shape: [b, 1, N_BINS, N_FRAMES],
        }
    }

    fn audio_batch() -> SpectrogramBatch {
        use crate::audio::{AudioClip, CLIP_SAMPLES};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let specs: Vec<Spectrogram> = (0..2)
            .map(|k| {
                let f0 = 220.0 * (k + 1) as f64;
                let s: Vec<f32> = (0..CLIP_SAMPLES)
                    .map(|i| {
                        let t = i as f64 / 44_100.0;
                        let mut v = 0.0;
                        for h in 1..40 {
                            v += (2.0 * std::f64::consts::PI * f0 * h as f64 * t).sin() / h as f64;
                        }
                        (0.2 * v + rng.gen_range(-0.01..0.01)) as f32
                    })
                    .collect();
                crate::spectral::spectrogram(&AudioClip::new(s))
            })
            .collect();
        SpectrogramBatch::from_spectrograms(&specs)
    }

    /// Closed-form parameter count, summed layer by layer.
    fn expected_params(ch: [usize; 4], hid: usize) -> usize {
        let mut total = 0;
        let mut cin = 1;
        for &c in &ch {
            total += c * cin * 9 + c; // conv weight + bias
            total += 2 * c; // bn scale + shift
            cin = c;
        }
        let lstm_in = ch[3] * 32;
        let per_dir = |input: usize| 4 * hid * input + 4 * hid * hid + 8 * hid;
        total += 2 * per_dir(lstm_in) + 2 * per_dir(2 * hid);
        total + 2 * (2 * hid) + 2
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let m = Model::init(ModelConfig::default(), 0).unwrap();
        assert_eq!(m.param_count(), expected_params([16, 32, 64, 128], 128));
        assert_eq!(m.param_count(), 4_820_834);
        let summed: usize = m.entries().iter().filter(|e| !e.buffer).map(ParamEntry::len).sum();
        assert_eq!(summed, m.param_count());
    }

    #[test]
    fn spatial_trace_and_sequence_shape() {
        let cfg = ModelConfig::default();
        assert_eq!(
            cfg.feature_dims(),
            [(513, 173), (256, 86), (128, 43), (64, 21), (32, 5)]
        );
        assert_eq!(cfg.lstm_input(), 4096);
        assert_eq!(cfg.seq_len(), 5);
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let cfg = ModelConfig::with_channels([2, 2, 2, 2]);
        let a = Model::init(cfg.clone(), 5).unwrap();
        let b = Model::init(cfg.clone(), 5).unwrap();
        let c = Model::init(cfg, 6).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params.values, c.params.values);
        assert!(a.params.is_finite());
    }

    #[test]
    fn rejects_wrong_shapes() {
        let m = Model::init(ModelConfig::with_channels([2, 2, 2, 2]), 0).unwrap();
        let mut batch = random_batch(1, 0);
        batch.shape = [1, 1, 512, 173];
        assert!(matches!(m.forward(&batch, Mode::Eval, false), Err(Error::Shape { .. })));
        let empty = SpectrogramBatch {
            data: vec![],
            shape: [0, 1, N_BINS, N_FRAMES],
        };
        assert!(m.forward(&empty, Mode::Eval, false).is_err());
    }

    #[test]
    fn rejects_inconsistent_config() {
        let cfg = ModelConfig {
            head_width: 100,
            ..ModelConfig::default()
        };
        assert!(Model::init(cfg, 0).is_err());
    }

    #[test]
    fn outputs_lie_on_simplex_and_duplicates_agree() {
        let m = Model::init(ModelConfig::with_channels([4, 4, 4, 4]), 1).unwrap();
        let single = random_batch(1, 9);
        let mut data = single.data.clone();
        data.extend_from_slice(&single.data);
        let pair = SpectrogramBatch {
            data,
            shape: [2, 1, N_BINS, N_FRAMES],
        };
        let out = m.forward(&pair, Mode::Eval, false).unwrap();
        for p in &out.probs {
            assert!(p[0] >= 0.0 && p[1] >= 0.0);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        }
        assert_eq!(out.probs[0], out.probs[1]);
    }

    fn loss_at(m: &Model, batch: &SpectrogramBatch, labels: &[usize]) -> f64 {
        let out = m.forward(batch, Mode::Train, false).unwrap();
        cross_entropy(&out.probs, labels).unwrap()
    }

    /// Central-difference check of `n` parameters drawn by `pick`.
    fn check_gradients(h: f64, n: usize, seed: u64, stratified: bool) {
        let mut m = Model::init(ModelConfig::with_channels([2, 2, 2, 2]), 11).unwrap();
        let batch = audio_batch();
        let labels = [0, 1];
        let grads = m.loss_and_gradients(&batch, &labels, Mode::Train).unwrap().grads;
        let trainable: Vec<ParamEntry> = m.entries().iter().filter(|e| !e.buffer).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n {
            let i = if stratified {
                let e = &trainable[rng.gen_range(0..trainable.len())];
                e.offset + rng.gen_range(0..e.len())
            } else {
                rng.gen_range(0..m.param_count())
            };
            let orig = m.params.values[i];
            m.params.values[i] = orig + h;
            let up = loss_at(&m, &batch, &labels);
            m.params.values[i] = orig - h;
            let dn = loss_at(&m, &batch, &labels);
            m.params.values[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = grads.params[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
            assert!(rel < 1e-3, "param {i}: analytic {an:e} vs numeric {fd:e}");
        }
    }

    #[test]
    fn gradients_of_random_parameters_match_at_step_1e_3() {
        check_gradients(1e-3, 20, 13, false);
    }

    #[test]
    fn gradients_of_every_layer_type_match_at_small_step() {
        // Conv weights sit upstream of ReLU and max-pool kinks, so a small
        // step keeps the difference quotient on one linear piece.
        check_gradients(1e-6, 40, 14, true);
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let m = Model::init(ModelConfig::with_channels([2, 2, 2, 2]), 21).unwrap();
        let mut batch = random_batch(1, 22);
        let out = m.forward(&batch, Mode::Eval, true).unwrap();
        // d p_lossy / d logits = p_lossy * (onehot(1) - p)
        let p = out.probs[0];
        let dl = [[-p[1] * p[0], p[1] * (1.0 - p[1])]];
        let g = m.backward(out.cache.as_ref().unwrap(), &dl, true).input.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-3;
        let p_lossy = |b: &SpectrogramBatch| m.forward(b, Mode::Eval, false).unwrap().probs[0][1];
        for _ in 0..10 {
            let i = rng.gen_range(0..batch.data.len());
            let orig = batch.data[i];
            batch.data[i] = orig + h;
            let up = p_lossy(&batch);
            batch.data[i] = orig - h;
            let dn = p_lossy(&batch);
            batch.data[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-3 * fd.abs().max(g[i].abs()).max(1e-9), "{i}: {fd:e} vs {:e}", g[i]);
        }
    }

    #[test]
    fn running_stats_move_towards_batch_stats() {
        let mut m = Model::init(ModelConfig::with_channels([2, 2, 2, 2]), 1).unwrap();
        let before = m.params.buffers.clone();
        let out = m.forward(&random_batch(2, 3), Mode::Train, true).unwrap();
        m.update_running_stats(out.cache.as_ref().unwrap());
        assert_ne!(before, m.params.buffers);
        assert!(m.params.is_finite());
    }
}
