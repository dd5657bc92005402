use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::corpus::SourceTrack;
use super::encoding::{assign_encoding_in, DatasetId, EncodingMatrix, EncodingSpec};
use super::manifest::{
    relative_path, ExcludedTrack, Label, Manifest, ManifestHeader, TrackRecord, COMMANDS_FILE,
    MANIFEST_FORMAT_VERSION,
};
use super::split::split_assign;
use super::transcode::{TranscodeLog, Transcoder};
use super::verify::{band_energy_per_frame, band_energy_ratio, median, quantisation_floor};
use crate::audio;
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub corpus: u64,
    pub encoding: u64,
    pub split: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            corpus: seed,
            encoding: seed,
            split: seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Dataset directory; lossy audio goes to `<out_dir>/lossy/`.
    pub out_dir: PathBuf,
    pub matrix: EncodingMatrix,
    /// Concurrent transcoder processes.
    pub workers: usize,
    /// Check every cutoff-limited file with the band-energy oracle.
    pub verify_cutoff: bool,
    /// Keep lossy files that already exist instead of re-encoding them.
    pub reuse_existing: bool,
}

impl BuildOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            matrix: EncodingMatrix::default(),
            workers: 1,
            verify_cutoff: true,
            reuse_existing: false,
        }
    }
}

/// Largest allowed ratio of lossy to lossless band energy above cutoff + 1 kHz.
pub const CUTOFF_ENERGY_RATIO: f64 = 0.01;

#[derive(Serialize)]
struct CommandLine<'a> {
    track_id: &'a str,
    #[serde(flatten)]
    log: &'a TranscodeLog,
}

enum Outcome {
    Done(EncodingSpec, TranscodeLog),
    Failed(String),
    CutoffIgnored(Error),
}

fn process_one(
    source: &SourceTrack,
    spec: EncodingSpec,
    out: &Path,
    transcoder: &Transcoder,
    opts: &BuildOptions,
) -> Outcome {
    let reuse = opts.reuse_existing && audio::probe_wav(out).is_ok();
    let log = if reuse {
        let tmp = out.with_extension(spec.codec.extension());
        match transcoder.encode_args(&source.path, &spec, &tmp) {
            Ok(encode) => TranscodeLog {
                encode: std::iter::once(transcoder.binary().display().to_string())
                    .chain(encode)
                    .collect(),
                decode: std::iter::once(transcoder.binary().display().to_string())
                    .chain(Transcoder::decode_args(&tmp, out))
                    .collect(),
            },
            Err(e) => return Outcome::Failed(e.to_string()),
        }
    } else {
        match transcoder.transcode(&source.path, &spec, out) {
            Ok(log) => log,
            Err(e) => return Outcome::Failed(e.to_string()),
        }
    };
    if let (true, Some(cutoff)) = (opts.verify_cutoff, spec.cutoff_hz) {
        let lossless = audio::load_audio(&source.path);
        let lossy = audio::load_audio(out);
        match (lossless, lossy) {
            (Ok(a), Ok(b)) => {
                let above = cutoff as f64 + 1000.0;
                let ratio = band_energy_ratio(&a.samples, &b.samples, above);
                let residue = median(&mut band_energy_per_frame(&b.samples, above));
                if !(ratio < CUTOFF_ENERGY_RATIO || residue <= quantisation_floor(above)) {
                    return Outcome::CutoffIgnored(Error::CutoffIgnored {
                        codec: spec.codec.to_string(),
                        cutoff_hz: cutoff,
                        ratio,
                    });
                }
            }
            (Err(e), _) | (_, Err(e)) => return Outcome::Failed(e.to_string()),
        }
    }
    Outcome::Done(spec, log)
}

/// Produces one lossless and one lossy record per source track.
///
/// Transcoding fans out over `opts.workers` threads; the manifest is
/// assembled afterwards in track-id order. Failed tracks are dropped and
/// listed in the header; more than 1% failures aborts the build.
pub fn build_dataset(
    sources: &[SourceTrack],
    dataset_id: DatasetId,
    seeds: Seeds,
    transcoder: &Transcoder,
    opts: &BuildOptions,
) -> Result<Manifest> {
    let ids: Vec<&str> = sources.iter().map(|s| s.track_id.as_str()).collect();
    let splits = split_assign(&ids, seeds.split)?;
    for codec in &opts.matrix.codecs {
        transcoder.encoder_for(*codec)?;
    }

    let lossy_dir = opts.out_dir.join("lossy");
    fs::create_dir_all(&lossy_dir).at(&lossy_dir)?;

    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.sort_by(|&a, &b| sources[a].track_id.cmp(&sources[b].track_id));

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Outcome>>> =
        Mutex::new((0..sources.len()).map(|_| None).collect());
    let workers = opts.workers.max(1).min(sources.len().max(1));
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for _ in 0..workers {
            handles.push(scope.spawn(|| -> Result<()> {
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= sources.len() {
                        return Ok(());
                    }
                    let source = &sources[i];
                    let spec = assign_encoding_in(
                        &opts.matrix,
                        &source.track_id,
                        dataset_id,
                        seeds.encoding,
                    )?;
                    let out = lossy_dir.join(format!("{}.wav", source.track_id));
                    let outcome = process_one(source, spec, &out, transcoder, opts);
                    results.lock().expect("results lock")[i] = Some(outcome);
                }
            }));
        }
        for h in handles {
            h.join().expect("transcode worker panicked")?;
        }
        Ok(())
    })?;
    let mut results = results.into_inner().expect("results lock");
    // An encoder that ignores the cutoff invalidates the dataset outright.
    if let Some(pos) = results
        .iter()
        .position(|r| matches!(r, Some(Outcome::CutoffIgnored(_))))
    {
        if let Some(Outcome::CutoffIgnored(e)) = results.swap_remove(pos) {
            return Err(e);
        }
    }

    let mut records = Vec::with_capacity(sources.len() * 2);
    let mut excluded = Vec::new();
    let mut commands = Vec::new();
    for &i in &order {
        let source = &sources[i];
        let split = splits[&source.track_id];
        match results[i].as_ref().expect("every track processed") {
            Outcome::Done(spec, log) => {
                records.push(TrackRecord {
                    track_id: source.track_id.clone(),
                    audio_path: relative_path(&source.path, &opts.out_dir),
                    label: Label::Lossless,
                    encoding: None,
                    dataset_id,
                    split,
                });
                records.push(TrackRecord {
                    track_id: source.track_id.clone(),
                    audio_path: PathBuf::from("lossy").join(format!("{}.wav", source.track_id)),
                    label: Label::Lossy,
                    encoding: Some(*spec),
                    dataset_id,
                    split,
                });
                commands.push((source.track_id.clone(), log.clone()));
            }
            Outcome::Failed(reason) => {
                log::warn!("excluding {}: {reason}", source.track_id);
                excluded.push(ExcludedTrack {
                    track_id: source.track_id.clone(),
                    reason: reason.clone(),
                });
            }
            Outcome::CutoffIgnored(_) => {}
        }
    }
    if excluded.len() * 100 > sources.len() {
        return Err(Error::TooManyFailures {
            excluded: excluded.len(),
            total: sources.len(),
        });
    }

    let codec_variants: BTreeMap<String, String> = transcoder
        .codec_variants()
        .into_iter()
        .filter(|(c, _)| opts.matrix.codecs.contains(c))
        .map(|(c, e)| (c.to_string(), e.to_string()))
        .collect();
    let manifest = Manifest {
        header: ManifestHeader {
            format_version: MANIFEST_FORMAT_VERSION,
            dataset_id,
            corpus_seed: seeds.corpus,
            encoding_seed: seeds.encoding,
            split_seed: seeds.split,
            transcoder_version: transcoder.version().to_string(),
            codec_variants,
            source_tracks: sources.len(),
            excluded,
        },
        records,
        base_dir: opts.out_dir.clone(),
    };
    manifest.write(&opts.out_dir)?;

    let cmd_path = opts.out_dir.join(COMMANDS_FILE);
    let mut f = fs::File::create(&cmd_path).at(&cmd_path)?;
    for (track_id, log) in &commands {
        let line = serde_json::to_string(&CommandLine { track_id, log })?;
        writeln!(f, "{line}").at(&cmd_path)?;
    }
    Ok(manifest)
}
