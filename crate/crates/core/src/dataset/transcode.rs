//! Drives an external ffmpeg-compatible binary to produce lossy round trips.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde::{Deserialize, Serialize};

use super::encoding::{Codec, EncodingSpec};
use crate::error::{Error, Result};

/// Environment variable that overrides the transcoder binary.
/// Upper audio bandwidth of libfdk_aac in AAC-LC mode.
pub const FDK_MAX_BANDWIDTH_HZ: u32 = 20_000;

pub const TRANSCODER_ENV: &str = "LOSSY_DETECT_FFMPEG";

#[derive(Debug, Clone)]
pub struct Transcoder {
    binary: PathBuf,
    version: String,
    mp3_encoder: Option<&'static str>,
    aac_encoder: Option<&'static str>,
    vorbis_encoder: Option<&'static str>,
}

/// Exact command lines run for one lossy file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscodeLog {
    pub encode: Vec<String>,
    pub decode: Vec<String>,
}

fn run(binary: &Path, args: &[String]) -> Result<Output> {
    Command::new(binary)
        .args(args)
        .output()
        .map_err(|e| Error::TranscoderMissing {
            binary: binary.display().to_string(),
            reason: e.to_string(),
        })
}

fn command_line(binary: &Path, args: &[String]) -> Vec<String> {
    std::iter::once(binary.display().to_string())
        .chain(args.iter().cloned())
        .collect()
}

impl Transcoder {
    /// Resolves the binary from `explicit`, then the environment, then `ffmpeg`
    /// on `PATH`, and probes its encoder list.
    pub fn discover(explicit: Option<&Path>) -> Result<Self> {
        let binary = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(TRANSCODER_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("ffmpeg"));
        Self::probe(binary)
    }

    pub fn probe(binary: PathBuf) -> Result<Self> {
        let out = run(&binary, &["-version".to_string()])?;
        if !out.status.success() {
            return Err(Error::TranscoderMissing {
                binary: binary.display().to_string(),
                reason: format!("`-version` exited with {}", out.status),
            });
        }
        let version = String::from_utf8_lossy(&out.stdout)
            .lines()
            .next()
            .unwrap_or("unknown")
            .trim()
            .to_string();
        let enc = run(&binary, &["-hide_banner".into(), "-encoders".into()])?;
        let listing = String::from_utf8_lossy(&enc.stdout).into_owned();
        let has = |name: &str| {
            listing
                .lines()
                .any(|l| l.split_whitespace().nth(1) == Some(name))
        };
        let aac_encoder = if has("libfdk_aac") {
            Some("libfdk_aac")
        } else if has("aac") {
            Some("aac")
        } else {
            None
        };
        Ok(Self {
            mp3_encoder: has("libmp3lame").then_some("libmp3lame"),
            vorbis_encoder: has("libvorbis").then_some("libvorbis"),
            aac_encoder,
            binary,
            version,
        })
    }

    pub fn binary(&self) -> &Path {
        &self.binary
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// The encoder name passed to `-c:a` for `codec`.
    pub fn encoder_for(&self, codec: Codec) -> Result<&'static str> {
        let enc = match codec {
            Codec::Mp3Lame => self.mp3_encoder,
            Codec::FdkAac => self.aac_encoder,
            Codec::Vorbis => self.vorbis_encoder,
        };
        enc.ok_or_else(|| Error::Capability {
            codec: codec.to_string(),
        })
    }

    /// Encoder actually used per codec when it differs from the nominal one.
    pub fn codec_variants(&self) -> Vec<(Codec, &'static str)> {
        Codec::ALL
            .iter()
            .filter_map(|&c| {
                let nominal = match c {
                    Codec::Mp3Lame => "libmp3lame",
                    Codec::FdkAac => "libfdk_aac",
                    Codec::Vorbis => "libvorbis",
                };
                self.encoder_for(c).ok().filter(|&e| e != nominal).map(|e| (c, e))
            })
            .collect()
    }

    /// libfdk_aac never codes AAC-LC above 20 kHz, while ffmpeg's native
    /// encoder goes up to Nyquist from 256 kbps on. The substitute gets the
    /// ceiling explicitly; at 128 kbps its own default is already lower.
    fn fallback_bandwidth(&self, spec: &EncodingSpec) -> Option<u32> {
        let substituted = spec.codec == Codec::FdkAac && self.aac_encoder == Some("aac");
        (substituted && spec.bitrate.kbps() > 128).then_some(FDK_MAX_BANDWIDTH_HZ)
    }

    pub fn encode_args(&self, src: &Path, spec: &EncodingSpec, tmp: &Path) -> Result<Vec<String>> {
        let mut args = vec![
            "-y".to_string(),
            "-i".into(),
            src.display().to_string(),
            "-c:a".into(),
            self.encoder_for(spec.codec)?.into(),
            "-b:a".into(),
            format!("{}k", spec.bitrate.kbps()),
        ];
        let cutoff = spec.cutoff_hz.or_else(|| self.fallback_bandwidth(spec));
        if let Some(hz) = cutoff {
            args.push("-cutoff".into());
            args.push(hz.to_string());
        }
        args.push(tmp.display().to_string());
        Ok(args)
    }

    pub fn decode_args(tmp: &Path, out: &Path) -> Vec<String> {
        vec![
            "-y".into(),
            "-i".into(),
            tmp.display().to_string(),
            "-ar".into(),
            "44100".into(),
            "-sample_fmt".into(),
            "s16".into(),
            out.display().to_string(),
        ]
    }

    /// Encodes `src` with `spec` and decodes it back to a 16-bit 44.1 kHz WAV
    /// at `out`. The intermediate file sits next to `out` and is removed.
    pub fn transcode(&self, src: &Path, spec: &EncodingSpec, out: &Path) -> Result<TranscodeLog> {
        let tmp = out.with_extension(spec.codec.extension());
        let encode = self.encode_args(src, spec, &tmp)?;
        let decode = Self::decode_args(&tmp, out);
        let result = self.run_checked(&encode).and_then(|_| self.run_checked(&decode));
        let _ = std::fs::remove_file(&tmp);
        result?;
        Ok(TranscodeLog {
            encode: command_line(&self.binary, &encode),
            decode: command_line(&self.binary, &decode),
        })
    }

    fn run_checked(&self, args: &[String]) -> Result<()> {
        let out = run(&self.binary, args)?;
        if out.status.success() {
            Ok(())
        } else {
            let stderr = String::from_utf8_lossy(&out.stderr);
            // The tail of ffmpeg's stderr carries the actual failure.
            let tail: Vec<&str> = stderr.lines().rev().take(12).collect();
            Err(Error::Transcode {
                command: command_line(&self.binary, args).join(" "),
                stderr: tail.into_iter().rev().collect::<Vec<_>>().join("\n"),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::encoding::Bitrate;

    fn fake() -> Transcoder {
        Transcoder {
            binary: PathBuf::from("ffmpeg"),
            version: "test".into(),
            mp3_encoder: Some("libmp3lame"),
            aac_encoder: Some("aac"),
            vorbis_encoder: None,
        }
    }

    #[test]
    fn encode_template_matches_contract() {
        let spec = EncodingSpec {
            codec: Codec::Mp3Lame,
            bitrate: Bitrate::K320,
            cutoff_hz: Some(14_000),
        };
        let args = fake()
            .encode_args(Path::new("a.wav"), &spec, Path::new("a.mp3"))
            .unwrap();
        assert_eq!(
            args.join(" "),
            "-y -i a.wav -c:a libmp3lame -b:a 320k -cutoff 14000 a.mp3"
        );
        let dec = Transcoder::decode_args(Path::new("a.mp3"), Path::new("b.wav"));
        assert_eq!(dec.join(" "), "-y -i a.mp3 -ar 44100 -sample_fmt s16 b.wav");
    }

    #[test]
    fn native_aac_substitute_is_capped_like_fdk() {
        let args = |bitrate, cutoff_hz| {
            let spec = EncodingSpec {
                codec: Codec::FdkAac,
                bitrate,
                cutoff_hz,
            };
            fake().encode_args(Path::new("a.wav"), &spec, Path::new("a.m4a")).unwrap().join(" ")
        };
        assert_eq!(args(Bitrate::K256, None), "-y -i a.wav -c:a aac -b:a 256k -cutoff 20000 a.m4a");
        assert_eq!(args(Bitrate::K128, None), "-y -i a.wav -c:a aac -b:a 128k a.m4a");
        assert!(args(Bitrate::K320, Some(16_000)).contains("-cutoff 16000 "));
    }

    #[test]
    fn missing_encoder_is_a_capability_error() {
        let err = fake().encoder_for(Codec::Vorbis).unwrap_err();
        assert!(matches!(err, Error::Capability { ref codec } if codec == "vorbis"));
        assert_eq!(fake().codec_variants(), vec![(Codec::FdkAac, "aac")]);
    }

    #[test]
    fn missing_binary_names_it() {
        let err = Transcoder::probe(PathBuf::from("/nonexistent/ffmpeg-xyz")).unwrap_err();
        assert!(err.to_string().contains("ffmpeg-xyz"));
    }
}
