//! The CNN + BiLSTM detector on its own: parameter layout, a forward pass on
//! a batch of spectrograms, and analytic gradients checked against central
//! differences.
//!
//!     cargo run --release --example model_gradients

use lossy_detect::audio::AudioClip;
use lossy_detect::model::{Mode, Model, ModelConfig, SpectrogramBatch};
use lossy_detect::spectral::spectrogram;
use lossy_detect::audio::CLIP_SAMPLES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lossy_detect::Result<()> {
    let full = Model::init(ModelConfig::default(), 0)?;
    println!("default config: {} parameters", full.param_count());
    for e in full.entries() {
        println!("  {:<28} {:?}", e.name, e.shape);
    }

    // Tiny channels keep the finite differences cheap.
    let model = Model::init(ModelConfig::with_channels([2, 2, 2, 2]), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clips: Vec<_> = (0..2)
        .map(|k| {
            let f = 440.0 * (k + 1) as f32;
            AudioClip::new(
                (0..CLIP_SAMPLES)
                    .map(|i| 0.5 * (i as f32 * f * std::f32::consts::TAU / 44_100.0).sin() + 0.01 * rng.gen_range(-1.0..1.0))
                    .collect(),
            )
        })
        .collect();
    let specs: Vec<_> = clips.iter().map(spectrogram).collect();
    let batch = SpectrogramBatch::from_spectrograms(&specs);
    let labels = [0usize, 1];

    let out = model.loss_and_gradients(&batch, &labels, Mode::Eval)?;
    println!("\ntiny model: {} parameters, loss {:.6}", model.param_count(), out.loss);
    for p in &out.probs {
        println!("  p_lossy {:.4}", p[1]);
    }

    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let i = rng.gen_range(0..model.param_count());
        let mut plus = model.clone();
        plus.params.values[i] += h;
        let mut minus = model.clone();
        minus.params.values[i] -= h;
        let lp = plus.loss_and_gradients(&batch, &labels, Mode::Eval)?.loss;
        let lm = minus.loss_and_gradients(&batch, &labels, Mode::Eval)?.loss;
        let numeric = (lp - lm) / (2.0 * h);
        let analytic = out.grads.params[i];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max(rel);
        println!("  param {i:>6}: analytic {analytic:+.6e}  numeric {numeric:+.6e}  rel {rel:.1e}");
    }
    println!("largest relative error {worst:.1e}");
    Ok(())
}
