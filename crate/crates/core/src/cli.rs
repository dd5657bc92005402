//! The `lossy-detect` command line. Every lifecycle command reads an optional
//! config file, layers the flags on top and writes under the `--out` root.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, RunConfig};
use crate::dataset::{
    build_dataset, generate_synthetic_corpus, ingest_corpus, BuildOptions, DatasetId, Label,
    Manifest, Seeds, SourceTrack, Transcoder,
};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{
    compare_reports, export_saliency_pair, run_evaluation, EvalReport, EvaluateOptions, REPORT_JSON,
};
use crate::inference::predict_track;
use crate::model::checkpoint::Checkpoint;
use crate::training::{train, CHECKPOINT_FILE, CONFIG_FILE};

pub const EXIT_LOSSLESS: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_LOSSY: i32 = 3;

/// Name of the merged configuration written into every output directory.
pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(name = "lossy-detect", version, about = "Detect lossy compression history in audio files")]
pub struct Cli {
    /// TOML or JSON file whose keys are the long flag names
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the ds1 and ds2 manifests and lossy audio trees
    BuildDataset {
        #[command(flatten)]
        run: RunConfig,
    },
    /// Train a detector on ds1
    Train {
        /// Manifest file or dataset directory [default: <out>/ds1]
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Predict a dataset split and write the report bundle
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Print p_lossy and a verdict per file; exit 3 if any file is lossy
    Infer {
        #[arg(required = true)]
        audio: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Write a spectrogram and saliency PNG for a 2-second excerpt
    Saliency {
        audio: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Excerpt start in seconds [default: centred]
        #[arg(long)]
        offset: Option<f64>,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Compare two evaluation reports cell by cell
    Report {
        /// Report directory or report.json of the baseline
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[command(flatten)]
        run: RunConfig,
    },
}

impl Command {
    fn run_config(&self) -> &RunConfig {
        match self {
            Command::BuildDataset { run }
            | Command::Train { run, .. }
            | Command::Evaluate { run, .. }
            | Command::Infer { run, .. }
            | Command::Saliency { run, .. }
            | Command::Report { run, .. } => run,
        }
    }
}

/// Process exit status for an error: usage problems and missing inputs are 2.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) | Error::EmptyCorpus(_) => EXIT_USAGE,
        Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => EXIT_USAGE,
        _ => EXIT_INTERNAL,
    }
}

/// Runs one parsed command line and returns its exit status.
pub fn run(cli: Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let cfg = file.merged(cli.command.run_config().clone());
    match &cli.command {
        Command::BuildDataset { .. } => cmd_build_dataset(&cfg).map(|_| EXIT_LOSSLESS),
        Command::Train { manifest, .. } => cmd_train(&cfg, manifest.as_deref()).map(|_| EXIT_LOSSLESS),
        Command::Evaluate { checkpoint, .. } => cmd_evaluate(&cfg, checkpoint).map(|_| EXIT_LOSSLESS),
        Command::Infer { audio, checkpoint, .. } => cmd_infer(&cfg, audio, checkpoint),
        Command::Saliency {
            audio,
            checkpoint,
            offset,
            ..
        } => cmd_saliency(&cfg, audio, checkpoint, *offset).map(|_| EXIT_LOSSLESS),
        Command::Report {
            baseline, candidate, ..
        } => cmd_report(&cfg, baseline, candidate).map(|_| EXIT_LOSSLESS),
    }
}

fn write_run_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let p = dir.join(RUN_CONFIG_FILE);
    fs::write(&p, serde_json::to_string_pretty(cfg)?).at(&p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorpusStamp {
    n_tracks: usize,
    duration_s: f64,
    seed: u64,
}

fn source_tracks(cfg: &RunConfig) -> Result<Vec<SourceTrack>> {
    match (cfg.synthetic, &cfg.corpus) {
        (Some(n), _) => {
            let dir = cfg.out_root().join("corpus");
            let stamp = CorpusStamp {
                n_tracks: n,
                duration_s: cfg.duration_s(),
                seed: cfg.seed(),
            };
            let stamp_path = dir.join("corpus.json");
            let existing: Option<CorpusStamp> = fs::read_to_string(&stamp_path)
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            if existing.as_ref() == Some(&stamp) {
                log::info!("reusing synthetic corpus in {}", dir.display());
                return Ok(ingest_corpus(&dir)?.tracks);
            }
            let tracks = generate_synthetic_corpus(n, stamp.duration_s, stamp.seed, &dir)?;
            fs::write(&stamp_path, serde_json::to_string_pretty(&stamp)?).at(&stamp_path)?;
            Ok(tracks)
        }
        (None, Some(dir)) => {
            let report = ingest_corpus(dir)?;
            for s in &report.skipped {
                log::warn!("skipped {}: {}", s.path.display(), s.reason);
            }
            Ok(report.tracks)
        }
        (None, None) => Err(Error::Argument("give --corpus DIR or --synthetic N".into())),
    }
}

/// Builds `<out>/ds1` and `<out>/ds2`; returns their manifest paths.
pub fn cmd_build_dataset(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let tracks = source_tracks(cfg)?;
    let transcoder = Transcoder::discover(cfg.transcoder.as_deref())?;
    let matrix = cfg.matrix()?;
    let mut paths = Vec::new();
    for id in [DatasetId::Ds1, DatasetId::Ds2] {
        let dir = cfg.out_root().join(id.as_str());
        let mut opts = BuildOptions::new(&dir);
        opts.matrix = matrix.clone();
        opts.workers = cfg.workers();
        opts.reuse_existing = true;
        let m = build_dataset(&tracks, id, Seeds::all(cfg.seed()), &transcoder, &opts)?;
        write_run_config(cfg, &dir)?;
        let path = dir.join(crate::dataset::manifest::MANIFEST_FILE);
        println!("{id}: {} records -> {}", m.records.len(), path.display());
        paths.push(path);
    }
    Ok(paths)
}

/// Trains into `<out>/runs/<naive|masked>-<hash>`; reuses a finished run with
/// the same configuration. Returns the checkpoint path.
pub fn cmd_train(cfg: &RunConfig, manifest: Option<&Path>) -> Result<PathBuf> {
    let manifest_path = manifest
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_root().join("ds1"));
    let manifest = Manifest::load(&manifest_path)?;
    let model_config = cfg.model_config()?;
    let train_config = cfg.train_config()?;
    // Worker count does not change the result, so it stays out of the key.
    let key = serde_json::json!({
        "model": model_config,
        "train": crate::training::TrainConfig { workers: 1, ..train_config.clone() },
        "manifest": manifest.fingerprint(),
    });
    let tag = if train_config.mask_enabled { "masked" } else { "naive" };
    let run_dir = cfg.out_root().join("runs").join(format!("{tag}-{}", config_hash(&key)));
    let ckpt = run_dir.join(CHECKPOINT_FILE);
    if ckpt.exists() && run_dir.join(CONFIG_FILE).exists() && run_dir.join("done").exists() {
        log::info!("reusing finished run {}", run_dir.display());
    } else {
        train(&manifest, &model_config, &train_config, &run_dir)?;
        fs::write(run_dir.join("done"), b"").at(&run_dir)?;
    }
    write_run_config(cfg, &run_dir)?;
    println!("checkpoint: {}", ckpt.display());
    Ok(ckpt)
}

fn file_digest(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    Ok(hex::encode(Sha256::digest(fs::read(path).at(path)?)))
}

/// Evaluates into `<out>/eval/<dataset>-<split>-<hash>`; returns that directory.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<PathBuf> {
    let dataset = cfg.dataset();
    let manifest = Manifest::load(&cfg.out_root().join(dataset.as_str()))?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let opts = EvaluateOptions {
        split: cfg.split(),
        threshold: cfg.threshold(),
        workers: cfg.workers(),
        saliency_examples: cfg.saliency_examples(),
        gallery: true,
    };
    let key = serde_json::json!({
        "checkpoint": file_digest(checkpoint)?,
        "manifest": manifest.fingerprint(),
        "split": opts.split,
        "threshold": opts.threshold,
        "saliency_examples": opts.saliency_examples,
    });
    let dir = cfg
        .out_root()
        .join("eval")
        .join(format!("{dataset}-{}-{}", opts.split, config_hash(&key)));
    let report = if dir.join(REPORT_JSON).exists() {
        log::info!("reusing evaluation in {}", dir.display());
        EvalReport::load(&dir.join(REPORT_JSON))?
    } else {
        run_evaluation(&manifest, &ckpt.model, &checkpoint.display().to_string(), &opts, &dir)?
    };
    write_run_config(cfg, &dir)?;
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1}"));
    println!(
        "{dataset} {}: mean {}  lossy mean {}  lossless {}  headline {}",
        opts.split,
        f(report.table_codec_bitrate.mean),
        f(report.summary.lossy_mean),
        f(report.summary.lossless_accuracy),
        f(report.headline_mean())
    );
    println!("report: {}", dir.display());
    Ok(dir)
}

/// Prints `path<TAB>p_lossy<TAB>verdict` per file.
pub fn cmd_infer(cfg: &RunConfig, audio: &[PathBuf], checkpoint: &Path) -> Result<i32> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut any_lossy = false;
    for path in audio {
        let rec = predict_track(path, &ckpt.model, cfg.threshold());
        if let Some(e) = &rec.error {
            let kind = if path.exists() { ErrorKind::InvalidData } else { ErrorKind::NotFound };
            return Err(Error::io(path, std::io::Error::new(kind, e.clone())));
        }
        any_lossy |= rec.predicted == Label::Lossy;
        println!("{}\t{:.4}\t{}", path.display(), rec.p_lossy, rec.predicted);
    }
    Ok(if any_lossy { EXIT_LOSSY } else { EXIT_LOSSLESS })
}

/// Writes `<out>/saliency/<stem>_spectrogram.png` and `<stem>_saliency.png`.
pub fn cmd_saliency(cfg: &RunConfig, audio: &Path, checkpoint: &Path, offset_s: Option<f64>) -> Result<[PathBuf; 2]> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let stem = audio
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "audio".into());
    let dir = cfg.out_root().join("saliency");
    let offset = match offset_s {
        Some(s) if !(s >= 0.0) => return Err(Error::Argument("offset must be non-negative".into())),
        Some(s) => Some((s * crate::audio::SAMPLE_RATE as f64).round() as usize),
        None => None,
    };
    let sal = export_saliency_pair(&ckpt.model, audio, offset, &dir, &stem)?;
    let pair = [
        dir.join(format!("{stem}_spectrogram.png")),
        dir.join(format!("{stem}_saliency.png")),
    ];
    println!("p_lossy {:.4}", sal.p_lossy);
    for p in &pair {
        println!("{}", p.display());
    }
    Ok(pair)
}

fn load_report_at(path: &Path) -> Result<EvalReport> {
    if path.is_dir() {
        EvalReport::load(&path.join(REPORT_JSON))
    } else {
        EvalReport::load(path)
    }
}

/// Writes `comparison.md` and `comparison.json` under `<out>/compare/<hash>`.
pub fn cmd_report(cfg: &RunConfig, baseline: &Path, candidate: &Path) -> Result<PathBuf> {
    let a = load_report_at(baseline)?;
    let b = load_report_at(candidate)?;
    let delta = compare_reports(&a, &b)?;
    let dir = cfg.out_root().join("compare").join(config_hash(&delta));
    fs::create_dir_all(&dir).at(&dir)?;
    let md = delta.to_markdown();
    let p = dir.join("comparison.md");
    fs::write(&p, &md).at(&p)?;
    let p = dir.join("comparison.json");
    fs::write(&p, serde_json::to_string_pretty(&delta)?).at(&p)?;
    write_run_config(cfg, &dir)?;
    print!("{md}");
    println!("comparison: {}", dir.display());
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn mask_flags_map_to_train_config() {
        let cli = Cli::parse_from(["lossy-detect", "train", "--mask", "on", "--mask-probability", "0.5"]);
        let t = cli.command.run_config().train_config().unwrap();
        assert!(t.mask_enabled);
        assert_eq!(t.mask_probability, 0.5);
        let cli = Cli::parse_from(["lossy-detect", "train", "--mask", "off"]);
        assert!(!cli.command.run_config().train_config().unwrap().mask_enabled);
    }

    #[test]
    fn every_config_key_is_a_flag() {
        let full = RunConfig {
            out: Some("o".into()),
            seed: Some(1),
            workers: Some(1),
            transcoder: Some("t".into()),
            corpus: Some("c".into()),
            synthetic: Some(1),
            duration: Some(4.0),
            codecs: Some(vec![crate::dataset::Codec::Vorbis]),
            conv_channels: Some(vec![1, 1, 1, 1]),
            lstm_hidden: Some(1),
            batch_size: Some(1),
            epochs: Some(1),
            learning_rate: Some(0.1),
            patience: Some(1),
            mask: Some(crate::config::Switch::On),
            mask_probability: Some(0.5),
            dataset: Some(DatasetId::Ds2),
            split: Some(crate::dataset::Split::Val),
            threshold: Some(0.5),
            saliency_examples: Some(1),
        };
        let keys: Vec<String> = match serde_json::to_value(&full).unwrap() {
            serde_json::Value::Object(m) => m.keys().cloned().collect(),
            _ => unreachable!(),
        };
        let cmd = Cli::command();
        let train = cmd.find_subcommand("train").unwrap();
        for k in keys {
            assert!(train.get_arguments().any(|a| a.get_long() == Some(&k)), "no flag --{k}");
        }
    }

    #[test]
    fn missing_inputs_are_usage_errors() {
        let cfg = RunConfig::default();
        let e = cmd_build_dataset(&cfg).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
        let e = cmd_infer(&cfg, &["x.wav".into()], Path::new("/nonexistent/m.ckpt")).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
    }
}
