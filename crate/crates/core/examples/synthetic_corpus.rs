//! Generates a few synthetic source tracks and checks them the way a real
//! corpus directory is checked before dataset fabrication.
//!
//!     cargo run --release --example synthetic_corpus -- [out_dir] [n_tracks]

use std::path::PathBuf;

use lossy_detect::audio::load_audio;
use lossy_detect::dataset::verify::band_energy_per_frame;
use lossy_detect::dataset::{generate_synthetic_corpus, ingest_corpus};

fn main() -> lossy_detect::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lossy-detect-corpus"));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);

    generate_synthetic_corpus(n, 10.0, 1, &out)?;
    let report = ingest_corpus(&out)?;
    println!("{} tracks in {} ({} skipped)", report.tracks.len(), out.display(), report.skipped.len());

    // Share of energy above 16 kHz: band-limited masters sit far below the rest.
    for t in &report.tracks {
        let clip = load_audio(&t.path)?;
        let all: f64 = band_energy_per_frame(&clip.samples, 0.0).iter().sum();
        let hf: f64 = band_energy_per_frame(&clip.samples, 16_000.0).iter().sum();
        println!("{}  {:.1} s  energy above 16 kHz {:>6.1} dB", t.track_id, t.duration_s, 10.0 * (hf / all).log10());
    }
    Ok(())
}
