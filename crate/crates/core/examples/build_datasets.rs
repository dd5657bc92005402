//! Fabricates the two datasets from a small synthetic corpus: ds1 with codec
//! defaults, ds2 with an explicit cutoff per track. Needs ffmpeg on PATH or
//! in LOSSY_DETECT_FFMPEG.
//!
//!     cargo run --release --example build_datasets -- [out_dir] [n_tracks]

use std::collections::BTreeMap;
use std::path::PathBuf;

use lossy_detect::dataset::{
    build_dataset, generate_synthetic_corpus, BuildOptions, DatasetId, Label, Seeds, Transcoder,
};

fn main() -> lossy_detect::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lossy-detect-data"));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let tracks = generate_synthetic_corpus(n, 10.0, 1, &out.join("corpus"))?;
    let transcoder = Transcoder::discover(None)?;
    println!("transcoder: {} ({})", transcoder.binary().display(), transcoder.version());
    for (codec, encoder) in transcoder.codec_variants() {
        println!("  {codec} is encoded with `{encoder}`");
    }

    for id in [DatasetId::Ds1, DatasetId::Ds2] {
        let mut opts = BuildOptions::new(out.join(id.as_str()));
        opts.workers = 2;
        opts.reuse_existing = true;
        let m = build_dataset(&tracks, id, Seeds::all(1), &transcoder, &opts)?;
        let mut cells: BTreeMap<String, usize> = BTreeMap::new();
        for r in m.records.iter().filter(|r| r.label == Label::Lossy) {
            *cells.entry(r.encoding.map(|e| e.to_string()).unwrap_or_default()).or_default() += 1;
        }
        println!("\n{id}: {} records, {} excluded", m.records.len(), m.header.excluded.len());
        for (cell, count) in cells {
            println!("  {count:>3}  {cell}");
        }
    }
    Ok(())
}
