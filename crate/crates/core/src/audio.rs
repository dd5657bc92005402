//! WAV input/output and the mono clip type the rest of the pipeline consumes.

use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;
/// Two seconds at 44.1 kHz: the model's input length.
pub const CLIP_SAMPLES: usize = 88_200;

/// Mono audio at 44.1 kHz with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate_hz: SAMPLE_RATE,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Header facts about a WAV file, read without decoding the sample data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavInfo {
    pub sample_rate_hz: u32,
    pub bit_depth: u16,
    pub channels: u16,
    pub frames: u32,
    pub is_float: bool,
}

impl WavInfo {
    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / self.sample_rate_hz as f64
    }
}

fn decode_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

pub fn probe_wav(path: &Path) -> Result<WavInfo> {
    let reader = hound::WavReader::open(path).map_err(|e| decode_err(path, e))?;
    let spec = reader.spec();
    Ok(WavInfo {
        sample_rate_hz: spec.sample_rate,
        bit_depth: spec.bits_per_sample,
        channels: spec.channels,
        frames: reader.duration(),
        is_float: spec.sample_format == hound::SampleFormat::Float,
    })
}

/// Decodes a 44.1 kHz WAV, averaging all channels into one.
pub fn load_audio(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| decode_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("sample rate {} Hz, expected {SAMPLE_RATE}", spec.sample_rate),
        });
    }
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| decode_err(path, e))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| decode_err(path, e))?
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        let inv = 1.0 / channels as f32;
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() * inv)
            .collect()
    };
    Ok(AudioClip::new(samples))
}

/// Writes interleaved 16-bit PCM at 44.1 kHz.
pub fn write_wav_i16(path: &Path, channels: u16, interleaved: &[i16]) -> Result<()> {
    let spec = hound::WavSpec {
        channels,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| decode_err(path, e))?;
    {
        let mut w = writer.get_i16_writer(interleaved.len() as u32);
        for &s in interleaved {
            w.write_sample(s);
        }
        w.flush().map_err(|e| decode_err(path, e))?;
    }
    writer.finalize().map_err(|e| decode_err(path, e))
}

/// Converts a float sample in `[-1, 1]` to 16-bit PCM with clipping.
pub fn to_i16(x: f64) -> i16 {
    (x * 32767.0).round().clamp(-32768.0, 32767.0) as i16
}
