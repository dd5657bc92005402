//! Spectrogram geometry and the random high-frequency mask: crops a 2-second
//! window, masks it at a fixed and at a random cutoff and writes the three
//! images side by side.
//!
//!     cargo run --release --example spectrogram_masking -- [wav] [out_dir]

use std::path::PathBuf;

use lossy_detect::audio::load_audio;
use lossy_detect::dataset::generate_synthetic_corpus;
use lossy_detect::imaging::write_spectrogram_png;
use lossy_detect::spectral::{
    apply_fixed_mask, apply_random_mask, bin_of_frequency, random_crop, spectrogram, BIN_HZ, MASK_LOW_HZ,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lossy_detect::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = std::env::temp_dir().join("lossy-detect-masking");
    let wav = match args.next() {
        Some(p) => PathBuf::from(p),
        None => generate_synthetic_corpus(1, 10.0, 3, &out)?.remove(0).path,
    };
    let out = args.next().map(PathBuf::from).unwrap_or(out);

    for f in [0.0, 1000.0, 14_000.0, 16_000.0, 20_000.0, 22_050.0] {
        println!("bin_of_frequency({f:>7}) = {:>3}   ({:.1} Hz per bin)", bin_of_frequency(f)?, BIN_HZ);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let clip = random_crop(&load_audio(&wav)?, &mut rng);
    let s = spectrogram(&clip);
    println!("\n{} bins x {} frames, {:.1}..{:.1} dB", s.n_bins, s.n_frames, s.min(), s.max());

    let fixed = apply_fixed_mask(&s, 16_000.0)?;
    let (random, spec) = apply_random_mask(&s, &mut rng, MASK_LOW_HZ)?;
    println!(
        "random mask: cutoff {:.0} Hz, rows {}.. filled with {:.1} dB",
        spec.cutoff_hz, spec.first_bin, spec.fill_value
    );

    write_spectrogram_png(&s, &out.join("original.png"))?;
    write_spectrogram_png(&fixed, &out.join("fixed_16k.png"))?;
    write_spectrogram_png(&random, &out.join("random.png"))?;
    println!("images in {}", out.display());
    Ok(())
}
