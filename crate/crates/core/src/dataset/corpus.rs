//! Lossless source corpora: a synthetic music-like generator and an ingestion
//! checker for user-supplied WAV directories.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{self, SAMPLE_RATE};
use crate::error::{Error, IoContext, Result};

pub const MIN_SOURCE_DURATION_S: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTrack {
    pub track_id: String,
    pub path: PathBuf,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub bit_depth: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedFile {
    pub path: PathBuf,
    /// One of `sample_rate`, `bit_depth`, `duration`, `decode`.
    pub reason: &'static str,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub tracks: Vec<SourceTrack>,
    pub skipped: Vec<SkippedFile>,
}

/// Checks one file against the source-track requirements.
pub fn validate_source(path: &Path) -> std::result::Result<SourceTrack, &'static str> {
    let info = audio::probe_wav(path).map_err(|_| "decode")?;
    if info.sample_rate_hz != SAMPLE_RATE {
        return Err("sample_rate");
    }
    if info.bit_depth != 16 || info.is_float {
        return Err("bit_depth");
    }
    if info.duration_s() < MIN_SOURCE_DURATION_S {
        return Err("duration");
    }
    let track_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or("decode")?;
    Ok(SourceTrack {
        track_id,
        path: path.to_path_buf(),
        duration_s: info.duration_s(),
        sample_rate_hz: info.sample_rate_hz,
        bit_depth: info.bit_depth,
    })
}

/// Collects every `.wav` in `dir` (non-recursive) that satisfies the source
/// requirements, in file-name order.
pub fn ingest_corpus(dir: &Path) -> Result<IngestReport> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.to_string_lossy().eq_ignore_ascii_case("wav"))
        })
        .collect();
    paths.sort();

    let mut tracks = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        match validate_source(&path) {
            Ok(t) => tracks.push(t),
            Err(reason) => {
                log::warn!("skipping {}: {reason}", path.display());
                skipped.push(SkippedFile { path, reason });
            }
        }
    }
    if tracks.is_empty() {
        return Err(Error::EmptyCorpus(dir.to_path_buf()));
    }
    Ok(IngestReport { tracks, skipped })
}

pub fn synthetic_track_id(index: usize) -> String {
    format!("syn_{index:05}")
}

/// Writes `n_tracks` stereo 16-bit 44.1 kHz WAVs of synthetic music.
///
/// Each track layers two or three chord voices whose partials reach the
/// Nyquist band and decay faster the higher they sit, band-passed cymbal
/// strokes, and a wideband noise floor. About a third of the tracks are then
/// low-passed between 10 and 16.5 kHz, some gently and some with a brick-wall
/// edge, and every mix gets a faint hiss up to Nyquist. The content is a pure
/// function of `(seed, index)`.
pub fn generate_synthetic_corpus(
    n_tracks: usize,
    duration_s: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<SourceTrack>> {
    if n_tracks < 1 {
        return Err(Error::Argument("n_tracks must be at least 1".into()));
    }
    if !(duration_s >= MIN_SOURCE_DURATION_S) {
        return Err(Error::Argument(format!(
            "duration_s must be at least {MIN_SOURCE_DURATION_S}"
        )));
    }
    fs::create_dir_all(out_dir).at(out_dir)?;
    let mut planner = FftPlanner::<f64>::new();
    let mut tracks = Vec::with_capacity(n_tracks);
    for index in 0..n_tracks {
        let track_id = synthetic_track_id(index);
        let path = out_dir.join(format!("{track_id}.wav"));
        let interleaved = synthesize_track(seed, index, duration_s, &mut planner);
        audio::write_wav_i16(&path, 2, &interleaved)?;
        let frames = interleaved.len() / 2;
        tracks.push(SourceTrack {
            track_id,
            path,
            duration_s: frames as f64 / SAMPLE_RATE as f64,
            sample_rate_hz: SAMPLE_RATE,
            bit_depth: 16,
        });
    }
    Ok(tracks)
}

fn track_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn midi_to_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one value per call is enough here.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

const CHORD_SHAPES: [&[i32]; 5] = [&[0, 4, 7], &[0, 3, 7], &[0, 4, 7, 11], &[0, 3, 7, 10], &[0, 5, 7]];

/// Partials are grouped into these bands; each band of a voice shares one
/// decay envelope, higher bands decaying faster.
const DECAY_BAND_EDGES_HZ: [f64; 8] = [0.0, 1000.0, 2000.0, 4000.0, 8000.0, 12_000.0, 16_000.0, 22_050.0];

/// Level of the full-band hiss added to every finished mix.
const HISS_DBFS: f64 = -76.0;

/// Share of tracks whose master stops short of Nyquist. Half of them roll
/// off gently like a dull mix, half end in the steep edge left by an earlier
/// low-rate stage (a 32 kHz broadcast chain, say).
const BAND_LIMITED_SHARE: f64 = 0.35;

/// Random description of one synthetic track.
#[derive(Debug, Clone, PartialEq)]
struct TrackParams {
    tilt: f64,
    rolloff_hz: f64,
    pan: f64,
    chord_len_s: f64,
    base_root: f64,
    beat_s: f64,
    cymbal_band_hz: (f64, f64),
    cymbal_db: f64,
    noise_db: f64,
    /// Corner frequency and Butterworth order of a whole-mix low-pass.
    band_limit: Option<(f64, i32)>,
}

impl TrackParams {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let band_limit = rng.gen_bool(BAND_LIMITED_SHARE).then(|| {
            if rng.gen_bool(0.5) {
                (rng.gen_range(10_000.0..15_500.0), 2 * rng.gen_range(2..=6))
            } else {
                (rng.gen_range(13_000.0..16_500.0), 2 * rng.gen_range(12..=24))
            }
        });
        Self {
            tilt: rng.gen_range(0.55..0.9),
            rolloff_hz: rng.gen_range(6000.0..12_000.0),
            pan: rng.gen_range(-0.3..0.3),
            chord_len_s: rng.gen_range(1.0..2.5),
            base_root: rng.gen_range(43.0..60.0f64).round(),
            beat_s: rng.gen_range(0.12..0.3),
            cymbal_band_hz: (rng.gen_range(3000.0..7000.0), rng.gen_range(14_000.0..21_000.0)),
            cymbal_db: rng.gen_range(-18.0..-8.0),
            noise_db: rng.gen_range(-62.0..-50.0),
            band_limit,
        }
    }
}

/// Multiplies the spectrum of `x` by `gain(f_hz)`; the gain must be real and
/// even so the output stays real.
fn fft_filter(x: &[f64], gain: impl Fn(f64) -> f64, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let bin_hz = SAMPLE_RATE as f64 / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * bin_hz;
        *c *= gain(f) / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

fn butterworth_lowpass(f: f64, corner: f64, order: i32) -> f64 {
    1.0 / (1.0 + (f / corner).powi(2 * order)).sqrt()
}

/// One voice of a chord segment: every partial of every note, snapped to the
/// FFT grid, with per-band decay envelopes starting at `d0_s`.
fn voice(
    rng: &mut ChaCha8Rng,
    len: usize,
    notes: &[f64],
    p: &TrackParams,
    d0_s: f64,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let bin_hz = SAMPLE_RATE as f64 / len as f64;
    let n_bands = DECAY_BAND_EDGES_HZ.len() - 1;
    let mut spectra = vec![vec![Complex::new(0.0, 0.0); len]; n_bands];
    for &midi in notes {
        let f0 = midi_to_hz(midi);
        let gain = rng.gen_range(0.3..1.0);
        let mut k = 1usize;
        loop {
            let f = f0 * k as f64;
            let bin = (f / bin_hz).round() as usize;
            if f >= nyquist - 100.0 || bin == 0 || bin >= len / 2 {
                break;
            }
            let amp = gain * (k as f64).powf(-p.tilt) * rng.gen_range(0.3..1.0) * (-f / p.rolloff_hz).exp();
            let c = Complex::from_polar(amp, rng.gen_range(0.0..2.0 * PI));
            let band = DECAY_BAND_EDGES_HZ[1..].iter().position(|&e| f < e).unwrap_or(n_bands - 1);
            spectra[band][bin] += c;
            spectra[band][len - bin] += c.conj();
            k += 1;
        }
    }
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    let ifft = planner.plan_fft_inverse(len);
    for (band, mut spec) in spectra.into_iter().enumerate() {
        if spec.iter().all(|c| c.norm_sqr() == 0.0) {
            continue;
        }
        ifft.process(&mut spec);
        let centre = 0.5 * (DECAY_BAND_EDGES_HZ[band] + DECAY_BAND_EDGES_HZ[band + 1]);
        let decay = d0_s / (1.0 + centre / 6000.0);
        for (i, c) in spec.iter().enumerate() {
            let t = i as f64 / sr;
            let env = (t / 0.01).min(1.0) * (0.05 + 0.95 * (-t / decay).exp());
            out[i] += c.re * env;
        }
    }
    out
}

fn synthesize_track(
    seed: u64,
    index: usize,
    duration_s: f64,
    planner: &mut FftPlanner<f64>,
) -> Vec<i16> {
    let sr = SAMPLE_RATE as f64;
    let n = (duration_s * sr).round() as usize;
    let mut rng = track_rng(seed, index);
    let p = TrackParams::draw(&mut rng);

    let mut harmonic = vec![0.0f64; n];
    let seg_len = ((p.chord_len_s * sr) as usize).max(4096);
    let mut start = 0;
    while start < n {
        let len = seg_len.min(n - start);
        // Even FFT length keeps the conjugate-symmetric fill simple.
        let fft_len = len + (len & 1);
        let mut seg = vec![0.0; fft_len];
        for v in 0..rng.gen_range(2..=3) {
            let shape = CHORD_SHAPES[rng.gen_range(0..CHORD_SHAPES.len())];
            let root = p.base_root + [0.0, 5.0, 7.0, -3.0, 2.0][rng.gen_range(0..5)] + 12.0 * v as f64;
            let notes: Vec<f64> = shape.iter().map(|&i| root + i as f64).collect();
            let d0 = rng.gen_range(0.3..2.5);
            for (s, x) in seg.iter_mut().zip(voice(&mut rng, fft_len, &notes, &p, d0, planner)) {
                *s += x;
            }
        }
        let peak = seg[..len].iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for i in 0..len {
            harmonic[start + i] = seg[i] / peak;
        }
        start += len;
    }

    // Hi-hat and cymbal strokes: decaying noise bursts, band-passed below.
    let mut cymbal = vec![0.0f64; n];
    let beat = ((p.beat_s * sr) as usize).max(1);
    let mut onset = rng.gen_range(0..beat);
    while onset < n {
        let tau = rng.gen_range(0.02..0.15) * sr;
        let gain = rng.gen_range(0.4..1.0);
        for i in 0..((tau * 6.0) as usize).min(n - onset) {
            cymbal[onset + i] += gain * gaussian(&mut rng) * (-(i as f64) / tau).exp();
        }
        onset += beat;
    }
    let (lo, hi) = p.cymbal_band_hz;
    let mut cymbal = fft_filter(
        &cymbal,
        |f| {
            let high_pass = if f > 0.0 { 1.0 / (1.0 + (lo / f).powi(8)).sqrt() } else { 0.0 };
            high_pass * butterworth_lowpass(f, hi, 4)
        },
        planner,
    );
    let cpeak = cymbal.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let cgain = 10f64.powf(p.cymbal_db / 20.0) / cpeak;
    cymbal.iter_mut().for_each(|v| *v *= cgain);

    let noise_amp = 10f64.powf(p.noise_db / 20.0);
    let (gl, gr) = ((1.0 - p.pan) * 0.5, (1.0 + p.pan) * 0.5);
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for i in 0..n {
        // A few samples of delay between channels widens the cymbal image.
        let c_right = if i >= 7 { cymbal[i - 7] } else { 0.0 };
        left.push(harmonic[i] * gl + cymbal[i] + noise_amp * gaussian(&mut rng));
        right.push(harmonic[i] * gr + c_right + noise_amp * gaussian(&mut rng));
    }
    if let Some((corner, order)) = p.band_limit {
        left = fft_filter(&left, |f| butterworth_lowpass(f, corner, order), planner);
        right = fft_filter(&right, |f| butterworth_lowpass(f, corner, order), planner);
    }
    let peak = left
        .iter()
        .chain(right.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let scale = 0.89 / peak;
    // Hiss to Nyquist after any band limit, as dither or tape noise leaves
    // on a real master: far under the spectrogram floor, far over rounding.
    let hiss = 10f64.powf(HISS_DBFS / 20.0);
    left.iter()
        .zip(&right)
        .flat_map(|(l, r)| {
            let l = l * scale + hiss * gaussian(&mut rng);
            let r = r * scale + hiss * gaussian(&mut rng);
            [audio::to_i16(l), audio::to_i16(r)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_track_has_exact_frame_count() {
        let dir = tempfile::tempdir().unwrap();
        let tracks = generate_synthetic_corpus(1, 10.0, 7, dir.path()).unwrap();
        assert_eq!(tracks.len(), 1);
        let info = audio::probe_wav(&tracks[0].path).unwrap();
        assert_eq!(info.frames, 441_000);
        assert_eq!(info.bit_depth, 16);
        assert_eq!(info.sample_rate_hz, 44_100);
    }

    #[test]
    fn generation_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ta = generate_synthetic_corpus(2, 4.0, 3, a.path()).unwrap();
        let tb = generate_synthetic_corpus(2, 4.0, 3, b.path()).unwrap();
        for (x, y) in ta.iter().zip(&tb) {
            assert_eq!(fs::read(&x.path).unwrap(), fs::read(&y.path).unwrap());
        }
        let first = fs::read(&ta[0].path).unwrap();
        let second = fs::read(&ta[1].path).unwrap();
        assert_ne!(first, second);
    }

    fn hf_share(pcm: &[i16], above_hz: f64) -> f64 {
        let mono: Vec<f32> = pcm.chunks(2).map(|c| (c[0] as f32 + c[1] as f32) / 65536.0).collect();
        let hf: f64 = crate::dataset::verify::band_energy_per_frame(&mono, above_hz).iter().sum();
        let all: f64 = crate::dataset::verify::band_energy_per_frame(&mono, 0.0).iter().sum();
        hf / all
    }

    #[test]
    fn about_a_third_of_tracks_are_band_limited() {
        let limits: Vec<_> = (0..400)
            .filter_map(|i| TrackParams::draw(&mut track_rng(9, i)).band_limit)
            .collect();
        assert!((100..180).contains(&limits.len()), "{}", limits.len());
        let steep = limits.iter().filter(|&&(_, order)| order >= 24).count();
        assert!((limits.len() / 3..limits.len() * 2 / 3).contains(&steep), "{steep}");

        let mut planner = FftPlanner::new();
        let params = |i| TrackParams::draw(&mut track_rng(9, i));
        let dull = (0..100).find(|&i| params(i).band_limit.is_some()).unwrap();
        let bright = (0..100).find(|&i| params(i).band_limit.is_none()).unwrap();
        let (corner, _) = params(dull).band_limit.unwrap();
        let above = corner + 4000.0;
        let d = hf_share(&synthesize_track(9, dull, 4.0, &mut planner), above);
        let b = hf_share(&synthesize_track(9, bright, 4.0, &mut planner), above);
        assert!(d < 1e-3 && d < b / 10.0, "dull {d:e} bright {b:e}");
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            generate_synthetic_corpus(0, 10.0, 1, dir.path()),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            generate_synthetic_corpus(1, 3.0, 1, dir.path()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn ingestion_skips_wrong_rate_and_short_files() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic_corpus(1, 5.0, 1, dir.path()).unwrap();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 48_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(dir.path().join("hi_rate.wav"), spec).unwrap();
        for _ in 0..48_000 * 5 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        audio::write_wav_i16(&dir.path().join("short.wav"), 1, &vec![0; 44_100]).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

        let report = ingest_corpus(dir.path()).unwrap();
        assert_eq!(report.tracks.len(), 1);
        let mut reasons: Vec<_> = report.skipped.iter().map(|s| s.reason).collect();
        reasons.sort();
        assert_eq!(reasons, vec!["duration", "sample_rate"]);
    }

    #[test]
    fn empty_directory_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_corpus(dir.path()), Err(Error::EmptyCorpus(_))));
    }
}
