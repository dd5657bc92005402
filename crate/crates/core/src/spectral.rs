//! Two-second crops, log-magnitude spectrograms and the high-frequency masks.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{AudioClip, CLIP_SAMPLES, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const N_FFT: usize = 1024;
pub const HOP: usize = 512;
pub const N_BINS: usize = N_FFT / 2 + 1;
/// Frames produced for a 2-second clip with centred framing.
pub const N_FRAMES: usize = CLIP_SAMPLES / HOP + 1;
pub const BIN_HZ: f64 = SAMPLE_RATE as f64 / N_FFT as f64;
pub const NYQUIST_HZ: f64 = SAMPLE_RATE as f64 / 2.0;
pub const DB_FLOOR: f64 = -80.0;
/// Lower edge of the random-mask cutoff range.
pub const MASK_LOW_HZ: f64 = 14_000.0;

/// Log-magnitude spectrogram, stored bin-major: `values[bin * n_frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub n_bins: usize,
    pub n_frames: usize,
}

impl Spectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.n_frames + frame]
    }

    pub fn row(&self, bin: usize) -> &[f64] {
        &self.values[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn frame_hop_s(&self) -> f64 {
        HOP as f64 / SAMPLE_RATE as f64
    }
}

/// Cutoff and fill value of an applied mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub cutoff_hz: f64,
    pub fill_value: f64,
    /// First masked bin; `N_BINS` when nothing was masked.
    pub first_bin: usize,
}

/// Extracts `CLIP_SAMPLES` samples starting at `offset`, zero-padding past the end.
pub fn crop_at(clip: &AudioClip, offset: usize) -> AudioClip {
    let mut samples = vec![0.0f32; CLIP_SAMPLES];
    if offset < clip.samples.len() {
        let end = (offset + CLIP_SAMPLES).min(clip.samples.len());
        samples[..end - offset].copy_from_slice(&clip.samples[offset..end]);
    }
    AudioClip {
        samples,
        sample_rate_hz: clip.sample_rate_hz,
    }
}

/// Uniformly placed 2-second window; shorter clips are zero-padded.
pub fn random_crop<R: Rng + ?Sized>(clip: &AudioClip, rng: &mut R) -> AudioClip {
    random_crop_with_offset(clip, rng).0
}

pub fn random_crop_with_offset<R: Rng + ?Sized>(clip: &AudioClip, rng: &mut R) -> (AudioClip, usize) {
    if clip.samples.len() < CLIP_SAMPLES {
        log::warn!(
            "clip of {} samples is shorter than {CLIP_SAMPLES}; zero-padding",
            clip.samples.len()
        );
        return (crop_at(clip, 0), 0);
    }
    let offset = rng.gen_range(0..=clip.samples.len() - CLIP_SAMPLES);
    (crop_at(clip, offset), offset)
}

/// Reusable STFT state.
pub struct SpectrogramLayer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for SpectrogramLayer {
    fn default() -> Self {
        Self::new()
    }
}

impl SpectrogramLayer {
    pub fn new() -> Self {
        // Periodic Hann.
        let window = (0..N_FFT)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / N_FFT as f64).cos())
            .collect();
        Self {
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            window,
        }
    }

    /// Magnitudes `|X[bin, frame]|` with centred reflect padding.
    pub fn magnitude(&self, samples: &[f32]) -> (Vec<f64>, usize) {
        let n = samples.len();
        let pad = N_FFT / 2;
        let reflect = |i: isize| -> f64 {
            if n == 1 {
                return samples[0] as f64;
            }
            let period = 2 * (n as isize - 1);
            let mut j = i.rem_euclid(period);
            if j >= n as isize {
                j = period - j;
            }
            samples[j as usize] as f64
        };
        let n_frames = n / HOP + 1;
        let mut mags = vec![0.0; N_BINS * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        for frame in 0..n_frames {
            let start = (frame * HOP) as isize - pad as isize;
            for (k, b) in buf.iter_mut().enumerate() {
                let idx = start + k as isize;
                let x = if idx >= 0 && (idx as usize) < n {
                    samples[idx as usize] as f64
                } else {
                    reflect(idx)
                };
                *b = Complex::new(x * self.window[k], 0.0);
            }
            self.fft.process(&mut buf);
            for bin in 0..N_BINS {
                mags[bin * n_frames + frame] = buf[bin].norm();
            }
        }
        (mags, n_frames)
    }

    /// Decibels relative to the clip's largest magnitude, floored at -80 dB.
    pub fn compute(&self, clip: &AudioClip) -> Spectrogram {
        let (mags, n_frames) = self.magnitude(&clip.samples);
        let peak = mags.iter().copied().fold(0.0f64, f64::max);
        let values = if peak <= 0.0 {
            vec![DB_FLOOR; mags.len()]
        } else {
            let ref_db = 20.0 * peak.max(1e-10).log10();
            mags.iter()
                .map(|&m| (20.0 * m.max(1e-10).log10() - ref_db).max(DB_FLOOR))
                .collect()
        };
        Spectrogram {
            values,
            n_bins: N_BINS,
            n_frames,
        }
    }
}

/// One-shot convenience wrapper around [`SpectrogramLayer::compute`].
pub fn spectrogram(clip: &AudioClip) -> Spectrogram {
    SpectrogramLayer::new().compute(clip)
}

/// Smallest bin index whose centre frequency lies strictly above `f_hz`.
pub fn bin_of_frequency(f_hz: f64) -> Result<usize> {
    if !(0.0..=NYQUIST_HZ).contains(&f_hz) {
        return Err(Error::Argument(format!(
            "frequency {f_hz} Hz outside [0, {NYQUIST_HZ}]"
        )));
    }
    // BIN_HZ is a dyadic rational, so these products are exact.
    let mut k = (f_hz / BIN_HZ).floor() as usize;
    while k as f64 * BIN_HZ <= f_hz {
        k += 1;
    }
    while k > 0 && (k - 1) as f64 * BIN_HZ > f_hz {
        k -= 1;
    }
    Ok(k)
}

/// Sets every bin at or above `bin_of_frequency(cutoff_hz)` to the
/// spectrogram's minimum, in place.
pub fn mask_in_place(s: &mut Spectrogram, cutoff_hz: f64) -> Result<MaskSpec> {
    let first_bin = bin_of_frequency(cutoff_hz)?;
    let fill_value = s.min();
    if first_bin < s.n_bins {
        s.values[first_bin * s.n_frames..].fill(fill_value);
    }
    Ok(MaskSpec {
        cutoff_hz,
        fill_value,
        first_bin,
    })
}

pub fn apply_fixed_mask(s: &Spectrogram, cutoff_hz: f64) -> Result<Spectrogram> {
    let mut out = s.clone();
    mask_in_place(&mut out, cutoff_hz)?;
    Ok(out)
}

/// Draws a cutoff uniformly from `[f_low, Nyquist]` and masks above it.
pub fn apply_random_mask<R: Rng + ?Sized>(
    s: &Spectrogram,
    rng: &mut R,
    f_low: f64,
) -> Result<(Spectrogram, MaskSpec)> {
    let cutoff = draw_cutoff(rng, f_low)?;
    let mut out = s.clone();
    let spec = mask_in_place(&mut out, cutoff)?;
    Ok((out, spec))
}

pub fn draw_cutoff<R: Rng + ?Sized>(rng: &mut R, f_low: f64) -> Result<f64> {
    if !(0.0..=NYQUIST_HZ).contains(&f_low) {
        return Err(Error::Argument(format!(
            "mask lower bound {f_low} Hz outside [0, {NYQUIST_HZ}]"
        )));
    }
    Ok(rng.gen_range(f_low..=NYQUIST_HZ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(f: f64, n: usize) -> AudioClip {
        AudioClip::new(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 44_100.0).sin() as f32 * 0.5)
                .collect(),
        )
    }

    fn noise_spec(seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clip = AudioClip::new((0..CLIP_SAMPLES).map(|_| rng.gen_range(-0.5..0.5)).collect());
        spectrogram(&clip)
    }

    #[test]
    fn two_second_clip_is_513_by_173() {
        let s = spectrogram(&sine(440.0, CLIP_SAMPLES));
        assert_eq!((s.n_bins, s.n_frames), (513, 173));
        assert_eq!(s.values.len(), 513 * 173);
        assert!(s.max() <= 0.0 && s.min() >= DB_FLOOR);
    }

    #[test]
    fn kilohertz_sine_peaks_in_bin_23() {
        let s = spectrogram(&sine(1000.0, CLIP_SAMPLES));
        // Edge frames see reflected padding and are skipped.
        for frame in 1..s.n_frames - 1 {
            let argmax = (0..s.n_bins)
                .max_by(|&a, &b| s.get(a, frame).total_cmp(&s.get(b, frame)))
                .unwrap();
            assert_eq!(argmax, 23, "frame {frame}");
        }
    }

    #[test]
    fn silence_is_all_floor() {
        let s = spectrogram(&AudioClip::new(vec![0.0; CLIP_SAMPLES]));
        assert!(s.values.iter().all(|&v| v == DB_FLOOR));
    }

    #[test]
    fn bin_oracle_values() {
        assert_eq!(bin_of_frequency(0.0).unwrap(), 1);
        assert_eq!(bin_of_frequency(14_000.0).unwrap(), 326);
        assert_eq!(bin_of_frequency(16_000.0).unwrap(), 372);
        assert_eq!(bin_of_frequency(22_050.0).unwrap(), 513);
        assert!(bin_of_frequency(-1.0).is_err());
        assert!(bin_of_frequency(22_050.5).is_err());
    }

    #[test]
    fn crops_have_expected_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let exact = sine(300.0, CLIP_SAMPLES);
        assert_eq!(random_crop(&exact, &mut rng), exact);
        let longer = sine(300.0, CLIP_SAMPLES + 1);
        for _ in 0..50 {
            let (_, off) = random_crop_with_offset(&longer, &mut rng);
            assert!(off <= 1);
        }
        let short = sine(300.0, 1000);
        let padded = random_crop(&short, &mut rng);
        assert_eq!(padded.n_samples(), CLIP_SAMPLES);
        assert_eq!(&padded.samples[..1000], &short.samples[..]);
        assert!(padded.samples[1000..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn crop_offsets_pass_chi_square() {
        // 10 equal buckets over [0, 352800]; critical value for 9 dof at p = 0.001 is 27.88.
        let clip = AudioClip::new(vec![0.0; 441_000]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let span = 441_000 - CLIP_SAMPLES + 1;
        let mut buckets = [0usize; 10];
        for _ in 0..10_000 {
            let (_, off) = random_crop_with_offset(&clip, &mut rng);
            buckets[(off * 10 / span).min(9)] += 1;
        }
        let chi2: f64 = buckets
            .iter()
            .map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0)
            .sum();
        assert!(chi2 < 27.88, "chi2 = {chi2}, buckets {buckets:?}");
    }

    #[test]
    fn mask_at_14k_fills_187_rows_with_min() {
        let s = noise_spec(3);
        let m = apply_fixed_mask(&s, 14_000.0).unwrap();
        let min = s.min();
        for bin in 0..513 {
            if bin >= 326 {
                assert!(m.row(bin).iter().all(|&v| v == min));
            } else {
                assert_eq!(m.row(bin), s.row(bin));
            }
        }
        assert_eq!(513 - 326, 187);
        assert_eq!(m.min(), s.min());
    }

    #[test]
    fn nyquist_cutoff_is_identity() {
        let s = noise_spec(4);
        assert_eq!(apply_fixed_mask(&s, 22_050.0).unwrap(), s);
    }

    #[test]
    fn random_mask_rejects_low_bound_above_nyquist() {
        let s = noise_spec(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_random_mask(&s, &mut rng, 23_000.0).is_err());
    }

    #[test]
    fn random_mask_cutoffs_stay_in_range() {
        let s = noise_spec(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (m, spec) = apply_random_mask(&s, &mut rng, MASK_LOW_HZ).unwrap();
            assert!((MASK_LOW_HZ..=NYQUIST_HZ).contains(&spec.cutoff_hz));
            assert_eq!(m.min(), s.min());
            assert_eq!((m.n_bins, m.n_frames), (s.n_bins, s.n_frames));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn masking_is_idempotent(c in 0.0f64..=22_050.0) {
            let s = noise_spec(8);
            let once = apply_fixed_mask(&s, c).unwrap();
            let twice = apply_fixed_mask(&once, c).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn lower_cutoff_masks_superset(a in 0.0f64..=22_050.0, b in 0.0f64..=22_050.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bin_of_frequency(lo).unwrap() <= bin_of_frequency(hi).unwrap());
        }
    }
}
