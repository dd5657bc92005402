use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Codec {
    #[serde(rename = "mp3lame")]
    Mp3Lame,
    #[serde(rename = "fdk_aac")]
    FdkAac,
    #[serde(rename = "vorbis")]
    Vorbis,
}

impl Codec {
    pub const ALL: [Codec; 3] = [Codec::FdkAac, Codec::Vorbis, Codec::Mp3Lame];

    pub fn as_str(self) -> &'static str {
        match self {
            Codec::Mp3Lame => "mp3lame",
            Codec::FdkAac => "fdk_aac",
            Codec::Vorbis => "vorbis",
        }
    }

    /// Container extension used for the intermediate encoded file.
    pub fn extension(self) -> &'static str {
        match self {
            Codec::Mp3Lame => "mp3",
            Codec::FdkAac => "m4a",
            Codec::Vorbis => "ogg",
        }
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Codec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mp3lame" | "libmp3lame" | "mp3" => Ok(Codec::Mp3Lame),
            "fdk_aac" | "libfdk_aac" | "aac" => Ok(Codec::FdkAac),
            "vorbis" | "libvorbis" | "ogg" => Ok(Codec::Vorbis),
            other => Err(Error::Argument(format!("unknown codec `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u32", try_from = "u32")]
pub enum Bitrate {
    K128,
    K256,
    K320,
}

impl Bitrate {
    pub const ALL: [Bitrate; 3] = [Bitrate::K128, Bitrate::K256, Bitrate::K320];

    pub fn kbps(self) -> u32 {
        match self {
            Bitrate::K128 => 128,
            Bitrate::K256 => 256,
            Bitrate::K320 => 320,
        }
    }
}

impl From<Bitrate> for u32 {
    fn from(b: Bitrate) -> u32 {
        b.kbps()
    }
}

impl TryFrom<u32> for Bitrate {
    type Error = String;

    fn try_from(v: u32) -> std::result::Result<Self, String> {
        match v {
            128 => Ok(Bitrate::K128),
            256 => Ok(Bitrate::K256),
            320 => Ok(Bitrate::K320),
            other => Err(format!("unsupported bitrate {other} kbps")),
        }
    }
}

impl fmt::Display for Bitrate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}k", self.kbps())
    }
}

/// Cutoff frequencies used for the second dataset.
pub const DS2_CUTOFFS_HZ: [u32; 4] = [14_000, 16_000, 18_000, 20_000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Ds1,
    Ds2,
}

impl DatasetId {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Ds1 => "ds1",
            DatasetId::Ds2 => "ds2",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ds1" => Ok(DatasetId::Ds1),
            "ds2" => Ok(DatasetId::Ds2),
            other => Err(Error::Argument(format!("unknown dataset id `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub codec: Codec,
    pub bitrate: Bitrate,
    pub cutoff_hz: Option<u32>,
}

impl fmt::Display for EncodingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.codec, self.bitrate)?;
        if let Some(c) = self.cutoff_hz {
            write!(f, " cutoff {c} Hz")?;
        }
        Ok(())
    }
}

/// The codec and bitrate choices a dataset draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMatrix {
    pub codecs: Vec<Codec>,
    pub bitrates: Vec<Bitrate>,
    pub cutoffs_hz: Vec<u32>,
}

impl Default for EncodingMatrix {
    fn default() -> Self {
        Self {
            codecs: vec![Codec::Mp3Lame, Codec::FdkAac, Codec::Vorbis],
            bitrates: Bitrate::ALL.to_vec(),
            cutoffs_hz: DS2_CUTOFFS_HZ.to_vec(),
        }
    }
}

/// Counter-based uniform draw in `0..n`, keyed by `(domain, seed, key, counter)`.
pub(crate) fn keyed_index(domain: &str, seed: u64, key: &str, counter: u32, n: usize) -> usize {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.as_bytes());
    h.update(counter.to_le_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    let x = u64::from_le_bytes(word);
    ((x as u128 * n as u128) >> 64) as usize
}

const ENCODING_DOMAIN: &str = "lossy-detect/encoding";

/// Draws the encoding for one track from the full codec/bitrate/cutoff matrix.
pub fn assign_encoding(track_id: &str, dataset_id: DatasetId, seed: u64) -> EncodingSpec {
    assign_encoding_in(&EncodingMatrix::default(), track_id, dataset_id, seed)
        .expect("default matrix is non-empty")
}

/// Codec and bitrate draws do not depend on the dataset, so both datasets
/// share them; only the second dataset draws a cutoff.
pub fn assign_encoding_in(
    matrix: &EncodingMatrix,
    track_id: &str,
    dataset_id: DatasetId,
    seed: u64,
) -> Result<EncodingSpec> {
    if matrix.codecs.is_empty() || matrix.bitrates.is_empty() || matrix.cutoffs_hz.is_empty() {
        return Err(Error::Argument("empty encoding matrix".into()));
    }
    let codec = matrix.codecs[keyed_index(ENCODING_DOMAIN, seed, track_id, 0, matrix.codecs.len())];
    let bitrate =
        matrix.bitrates[keyed_index(ENCODING_DOMAIN, seed, track_id, 1, matrix.bitrates.len())];
    let cutoff_hz = match dataset_id {
        DatasetId::Ds1 => None,
        DatasetId::Ds2 => Some(
            matrix.cutoffs_hz
                [keyed_index(ENCODING_DOMAIN, seed, track_id, 2, matrix.cutoffs_hz.len())],
        ),
    };
    Ok(EncodingSpec {
        codec,
        bitrate,
        cutoff_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn ds1_has_no_cutoff_and_ds2_shares_draws() {
        for i in 0..200 {
            let id = format!("track_{i}");
            let a = assign_encoding(&id, DatasetId::Ds1, 5);
            let b = assign_encoding(&id, DatasetId::Ds2, 5);
            assert!(a.cutoff_hz.is_none());
            assert!(DS2_CUTOFFS_HZ.contains(&b.cutoff_hz.unwrap()));
            assert_eq!((a.codec, a.bitrate), (b.codec, b.bitrate));
        }
    }

    #[test]
    fn cells_are_uniform_within_three_sigma() {
        // 9000 draws over 9 cells: binomial(9000, 1/9) has mean 1000, sd ~29.8.
        let mut counts: HashMap<(Codec, Bitrate), usize> = HashMap::new();
        for i in 0..9000 {
            let s = assign_encoding(&format!("id{i}"), DatasetId::Ds1, 11);
            *counts.entry((s.codec, s.bitrate)).or_default() += 1;
        }
        assert_eq!(counts.len(), 9);
        let sd = (9000.0f64 * (1.0 / 9.0) * (8.0 / 9.0)).sqrt();
        for (cell, n) in counts {
            assert!(
                (n as f64 - 1000.0).abs() <= 3.0 * sd,
                "{cell:?} drew {n} times"
            );
        }
    }

    #[test]
    fn unknown_dataset_id_is_rejected() {
        assert!(matches!("ds3".parse::<DatasetId>(), Err(Error::Argument(_))));
        assert_eq!("DS2".parse::<DatasetId>().unwrap(), DatasetId::Ds2);
    }

    #[test]
    fn restricted_matrix_never_draws_excluded_codec() {
        let m = EncodingMatrix {
            codecs: vec![Codec::Mp3Lame, Codec::Vorbis],
            ..EncodingMatrix::default()
        };
        for i in 0..500 {
            let s = assign_encoding_in(&m, &i.to_string(), DatasetId::Ds2, 3).unwrap();
            assert_ne!(s.codec, Codec::FdkAac);
        }
    }

    #[test]
    fn bitrate_serializes_as_kbps() {
        assert_eq!(serde_json::to_string(&Bitrate::K256).unwrap(), "256");
        assert!(serde_json::from_str::<Bitrate>("192").is_err());
    }
}
