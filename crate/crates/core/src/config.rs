//! Run configuration: one flat document whose keys are the command-line flag
//! names, merged with the flags actually given.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Codec, DatasetId, EncodingMatrix, Split};
use crate::error::{Error, IoContext, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

/// Every field is optional so that a file and the flags can be layered;
/// accessors supply the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    /// Root directory for every artifact [default: out]
    #[arg(long, help_heading = "General")]
    pub out: Option<PathBuf>,
    /// Seed for corpus synthesis, encoding draws, splits and training [default: 1]
    #[arg(long, help_heading = "General")]
    pub seed: Option<u64>,
    /// Worker threads or transcoder processes [default: 1]
    #[arg(long, help_heading = "General")]
    pub workers: Option<usize>,
    /// Transcoder binary (overrides LOSSY_DETECT_FFMPEG)
    #[arg(long, help_heading = "General")]
    pub transcoder: Option<PathBuf>,

    /// Directory of lossless WAV sources
    #[arg(long, help_heading = "Dataset")]
    pub corpus: Option<PathBuf>,
    /// Synthesise this many source tracks instead of reading a corpus
    #[arg(long, help_heading = "Dataset")]
    pub synthetic: Option<usize>,
    /// Length of synthetic tracks in seconds [default: 10]
    #[arg(long, help_heading = "Dataset")]
    pub duration: Option<f64>,
    /// Codecs to draw from, comma separated [default: mp3lame,fdk_aac,vorbis]
    #[arg(long, value_delimiter = ',', help_heading = "Dataset")]
    pub codecs: Option<Vec<Codec>>,

    /// Output channels of the four conv blocks [default: 16,32,64,128]
    #[arg(long, value_delimiter = ',', help_heading = "Model")]
    pub conv_channels: Option<Vec<usize>>,
    /// Hidden units per LSTM direction [default: 128]
    #[arg(long, help_heading = "Model")]
    pub lstm_hidden: Option<usize>,

    /// [default: 32]
    #[arg(long, help_heading = "Training")]
    pub batch_size: Option<usize>,
    /// Maximum epochs [default: 100]
    #[arg(long, help_heading = "Training")]
    pub epochs: Option<usize>,
    /// Adam step size [default: 0.001]
    #[arg(long, help_heading = "Training")]
    pub learning_rate: Option<f64>,
    /// Epochs without validation improvement before stopping [default: 10]
    #[arg(long, help_heading = "Training")]
    pub patience: Option<usize>,
    /// Random high-frequency masking of training spectrograms [default: off]
    #[arg(long, help_heading = "Training")]
    pub mask: Option<Switch>,
    /// Chance that a training example is masked [default: 1.0]
    #[arg(long, help_heading = "Training")]
    pub mask_probability: Option<f64>,

    /// Dataset to evaluate [default: ds1]
    #[arg(long, help_heading = "Evaluation")]
    pub dataset: Option<DatasetId>,
    /// Split to evaluate [default: test]
    #[arg(long, help_heading = "Evaluation")]
    pub split: Option<Split>,
    /// Decision threshold on p_lossy [default: 0.5]
    #[arg(long, help_heading = "Evaluation")]
    pub threshold: Option<f64>,
    /// Lossy tracks exported as spectrogram/saliency pairs [default: 4]
    #[arg(long, help_heading = "Evaluation")]
    pub saliency_examples: Option<usize>,
}

macro_rules! layer {
    ($base:expr, $over:expr, $($f:ident),*) => {
        RunConfig { $($f: $over.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    /// Reads a TOML document, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::Argument(format!("{}: {e}", path.display())))
        }
    }

    /// Values set in `over` win.
    pub fn merged(self, over: RunConfig) -> RunConfig {
        layer!(
            self,
            over,
            out,
            seed,
            workers,
            transcoder,
            corpus,
            synthetic,
            duration,
            codecs,
            conv_channels,
            lstm_hidden,
            batch_size,
            epochs,
            learning_rate,
            patience,
            mask,
            mask_probability,
            dataset,
            split,
            threshold,
            saliency_examples
        )
    }

    pub fn out_root(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1).max(1)
    }

    pub fn duration_s(&self) -> f64 {
        self.duration.unwrap_or(10.0)
    }

    pub fn dataset(&self) -> DatasetId {
        self.dataset.unwrap_or(DatasetId::Ds1)
    }

    pub fn split(&self) -> Split {
        self.split.unwrap_or(Split::Test)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(crate::inference::DEFAULT_THRESHOLD)
    }

    pub fn saliency_examples(&self) -> usize {
        self.saliency_examples.unwrap_or(4)
    }

    pub fn mask_enabled(&self) -> bool {
        self.mask == Some(Switch::On)
    }

    pub fn matrix(&self) -> Result<EncodingMatrix> {
        let mut m = EncodingMatrix::default();
        if let Some(c) = &self.codecs {
            if c.is_empty() {
                return Err(Error::Argument("codecs must not be empty".into()));
            }
            m.codecs = m.codecs.into_iter().filter(|x| c.contains(x)).collect();
        }
        Ok(m)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::default();
        if let Some(c) = &self.conv_channels {
            m.conv_channels = c.as_slice().try_into().map_err(|_| {
                Error::Argument(format!("conv-channels needs 4 values, got {}", c.len()))
            })?;
        }
        if let Some(h) = self.lstm_hidden {
            m.lstm_hidden = h;
            m.head_width = 2 * h;
        }
        m.mask_enabled = self.mask_enabled();
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let t = TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            max_epochs: self.epochs.unwrap_or(d.max_epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            early_stop_patience: self.patience.unwrap_or(d.early_stop_patience),
            seed: self.seed(),
            mask_enabled: self.mask_enabled(),
            mask_probability: self.mask_probability.unwrap_or(d.mask_probability),
            workers: self.workers(),
            ..d
        };
        t.validate()?;
        Ok(t)
    }
}

/// First 12 hex digits of the SHA-256 of the value's JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialise");
    hex::encode(&Sha256::digest(&bytes)[..6])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_keys_match_flag_names() {
        let text = r#"
            out = "data"
            seed = 3
            codecs = ["mp3lame", "vorbis"]
            conv-channels = [8, 16, 32, 64]
            mask = "on"
            mask-probability = 0.5
            dataset = "ds2"
        "#;
        let c: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(c.out_root(), PathBuf::from("data"));
        assert_eq!(c.model_config().unwrap().conv_channels, [8, 16, 32, 64]);
        let t = c.train_config().unwrap();
        assert!(t.mask_enabled && t.mask_probability == 0.5 && t.seed == 3);
        assert_eq!(c.matrix().unwrap().codecs, vec![Codec::Mp3Lame, Codec::Vorbis]);
        assert_eq!(c.dataset(), DatasetId::Ds2);
        let c: RunConfig = toml::from_str("lstm-hidden = 16").unwrap();
        assert_eq!(c.model_config().unwrap().head_width, 32);
        assert!(toml::from_str::<RunConfig>("mask_probability = 0.5").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let file = RunConfig {
            seed: Some(3),
            mask: Some(Switch::On),
            epochs: Some(7),
            ..Default::default()
        };
        let flags = RunConfig {
            mask: Some(Switch::Off),
            ..Default::default()
        };
        let m = file.merged(flags);
        assert_eq!((m.seed, m.mask, m.epochs), (Some(3), Some(Switch::Off), Some(7)));
    }

    #[test]
    fn json_roundtrip_and_hash_stability() {
        let c = RunConfig {
            synthetic: Some(20),
            ..Default::default()
        };
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&j).unwrap(), c);
        assert_eq!(config_hash(&c), config_hash(&c.clone()));
        assert_ne!(config_hash(&c), config_hash(&RunConfig::default()));
        assert_eq!(config_hash(&c).len(), 12);
    }

    #[test]
    fn bad_values_are_argument_errors() {
        let c = RunConfig {
            conv_channels: Some(vec![8, 16]),
            ..Default::default()
        };
        assert!(matches!(c.model_config(), Err(Error::Argument(_))));
        let c = RunConfig {
            codecs: Some(vec![]),
            ..Default::default()
        };
        assert!(c.matrix().is_err());
    }
}
