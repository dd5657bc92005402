use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encoding::{Bitrate, Codec, DatasetId, EncodingSpec};
use super::split::Split;
use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const HEADER_FILE: &str = "manifest.header.json";
pub const COMMANDS_FILE: &str = "transcode_commands.jsonl";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Lossless,
    Lossy,
}

impl Label {
    /// Class index used by the model: 0 = lossless, 1 = lossy.
    pub fn class_index(self) -> usize {
        match self {
            Label::Lossless => 0,
            Label::Lossy => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Lossless => "lossless",
            Label::Lossy => "lossy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub track_id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub audio_path: PathBuf,
    pub label: Label,
    pub encoding: Option<EncodingSpec>,
    pub dataset_id: DatasetId,
    pub split: Split,
}

/// On-disk line layout; field order is part of the file format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    track_id: String,
    audio_path: String,
    label: Label,
    codec: Option<Codec>,
    bitrate_kbps: Option<Bitrate>,
    cutoff_hz: Option<u32>,
    dataset_id: DatasetId,
    split: Split,
}

impl From<&TrackRecord> for RecordLine {
    fn from(r: &TrackRecord) -> Self {
        RecordLine {
            track_id: r.track_id.clone(),
            audio_path: r.audio_path.to_string_lossy().replace('\\', "/"),
            label: r.label,
            codec: r.encoding.map(|e| e.codec),
            bitrate_kbps: r.encoding.map(|e| e.bitrate),
            cutoff_hz: r.encoding.and_then(|e| e.cutoff_hz),
            dataset_id: r.dataset_id,
            split: r.split,
        }
    }
}

impl RecordLine {
    fn into_record(self) -> std::result::Result<TrackRecord, String> {
        let encoding = match (self.label, self.codec, self.bitrate_kbps) {
            (Label::Lossless, None, None) if self.cutoff_hz.is_none() => None,
            (Label::Lossy, Some(codec), Some(bitrate)) => Some(EncodingSpec {
                codec,
                bitrate,
                cutoff_hz: self.cutoff_hz,
            }),
            _ => return Err("encoding fields must be present iff label is lossy".into()),
        };
        if let Some(e) = encoding {
            let wants_cutoff = self.dataset_id == DatasetId::Ds2;
            if e.cutoff_hz.is_some() != wants_cutoff {
                return Err(format!("cutoff_hz presence does not match {}", self.dataset_id));
            }
        }
        Ok(TrackRecord {
            track_id: self.track_id,
            audio_path: PathBuf::from(self.audio_path),
            label: self.label,
            encoding,
            dataset_id: self.dataset_id,
            split: self.split,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedTrack {
    pub track_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: u32,
    pub dataset_id: DatasetId,
    pub corpus_seed: u64,
    pub encoding_seed: u64,
    pub split_seed: u64,
    pub transcoder_version: String,
    /// Nominal codec name to the encoder actually used, when they differ.
    pub codec_variants: BTreeMap<String, String>,
    pub source_tracks: usize,
    pub excluded: Vec<ExcludedTrack>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<TrackRecord>,
    /// Directory that relative audio paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn dataset_id(&self) -> DatasetId {
        self.header.dataset_id
    }

    pub fn resolve_audio(&self, record: &TrackRecord) -> PathBuf {
        if record.audio_path.is_absolute() {
            record.audio_path.clone()
        } else {
            self.base_dir.join(&record.audio_path)
        }
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &TrackRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(&RecordLine::from(r)).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 over the record lines; identifies the evaluated population.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    /// Writes `manifest.jsonl` and its header sidecar into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_jsonl()).at(&path)?;
        let header_path = dir.join(HEADER_FILE);
        let mut header = serde_json::to_string_pretty(&self.header)?;
        header.push('\n');
        fs::write(&header_path, header).at(&header_path)?;
        Ok(path)
    }

    /// Loads `manifest.jsonl` (or a directory containing it) plus its header.
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(&path).at(&path)?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Manifest {
                path: path.clone(),
                line: i + 1,
                reason,
            };
            let parsed: RecordLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            records.push(parsed.into_record().map_err(bad)?);
        }
        let header_path = base_dir.join(HEADER_FILE);
        let header: ManifestHeader = match fs::read_to_string(&header_path) {
            Ok(s) => serde_json::from_str(&s)?,
            Err(e) => return Err(Error::io(header_path, e)),
        };
        Ok(Self {
            header,
            records,
            base_dir,
        })
    }
}

/// Path of `target` relative to the directory `base`; both are made absolute
/// first. Falls back to the absolute target when no common root exists.
pub fn relative_path(target: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| {
        fs::canonicalize(p).unwrap_or_else(|_| std::env::current_dir().unwrap_or_default().join(p))
    };
    let t = abs(target);
    let b = abs(base);
    let tc: Vec<Component> = t.components().collect();
    let bc: Vec<Component> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return t;
    }
    let mut rel = PathBuf::new();
    for _ in common..bc.len() {
        rel.push("..");
    }
    for c in &tc[common..] {
        rel.push(c.as_os_str());
    }
    rel
}
