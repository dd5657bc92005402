//! Post-hoc check that an encoder honoured its bandwidth limit.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::SAMPLE_RATE;

const FRAME: usize = 2048;
const HOP: usize = 1024;

/// Per-frame energy in bins whose centre lies above `above_hz`.
pub fn band_energy_per_frame(samples: &[f32], above_hz: f64) -> Vec<f64> {
    let bin_hz = SAMPLE_RATE as f64 / FRAME as f64;
    let first_bin = ((above_hz / bin_hz).floor() as usize + 1).min(FRAME / 2 + 1);
    let window: Vec<f64> = (0..FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / FRAME as f64).cos())
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FRAME);
    let mut buf = vec![Complex::new(0.0, 0.0); FRAME];
    let mut out = Vec::new();
    let mut start = 0;
    while start + FRAME <= samples.len() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(samples[start + i] as f64 * window[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[first_bin..=FRAME / 2].iter().map(|c| c.norm_sqr()).sum());
        start += HOP;
    }
    out
}

/// Expected band energy of 16-bit rounding noise, times ten. A band this
/// quiet carries no evidence either way about a lowpass.
pub fn quantisation_floor(above_hz: f64) -> f64 {
    let bin_hz = SAMPLE_RATE as f64 / FRAME as f64;
    let first_bin = ((above_hz / bin_hz).floor() as usize + 1).min(FRAME / 2 + 1);
    let bins = (FRAME / 2 + 1 - first_bin) as f64;
    let lsb = 1.0 / 32_768.0;
    // Hann window: sum of squared weights is 3/8 of the frame.
    10.0 * bins * (lsb * lsb / 12.0) * 0.375 * FRAME as f64
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Median lossy band energy above `above_hz` divided by the lossless one.
/// Medians over frames keep isolated transient bleed from dominating.
pub fn band_energy_ratio(lossless: &[f32], lossy: &[f32], above_hz: f64) -> f64 {
    let reference = median(&mut band_energy_per_frame(lossless, above_hz));
    let candidate = median(&mut band_energy_per_frame(lossy, above_hz));
    if reference <= 0.0 {
        return if candidate <= 0.0 { 0.0 } else { f64::INFINITY };
    }
    candidate / reference
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tone(f: f64, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 44_100.0).sin() as f32)
            .collect()
    }

    #[test]
    fn tone_below_band_contributes_little() {
        let low = tone(1_000.0, 44_100);
        let high = tone(19_000.0, 44_100);
        let mix: Vec<f32> = low.iter().zip(&high).map(|(a, b)| a + b).collect();
        let r = band_energy_ratio(&mix, &low, 15_000.0);
        assert!(r < 1e-6, "ratio {r}");
        let same = band_energy_ratio(&mix, &mix, 15_000.0);
        assert!((same - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rounding_noise_sits_under_the_floor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let noise: Vec<f32> = (0..44_100)
            .map(|_| (rng.gen_range(-0.5..0.5f64) / 32_768.0) as f32)
            .collect();
        let e = median(&mut band_energy_per_frame(&noise, 21_000.0));
        let floor = quantisation_floor(21_000.0);
        assert!(e < floor && e > floor / 30.0, "{e} vs {floor}");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
