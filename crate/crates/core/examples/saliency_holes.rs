//! Where does the detector look? Aligns a lossless file with its lossy
//! transcode, finds the spectral holes the codec left below its cutoff and
//! compares the model's input-gradient saliency inside and outside them.
//!
//!     cargo run --release --example saliency_holes -- <lossless.wav> <lossy.wav> <cutoff_hz> [checkpoint]
//!
//! Without arguments a short track is synthesised and encoded to MP3 at
//! 128 kbps with a 16 kHz cutoff (needs ffmpeg).

use std::path::PathBuf;

use lossy_detect::audio::load_audio;
use lossy_detect::dataset::{generate_synthetic_corpus, Bitrate, Codec, EncodingSpec, Transcoder};
use lossy_detect::evaluation::hole_rng;
use lossy_detect::evaluation::saliency::{analyse_pair, DEFAULT_HOLE_DB};
use lossy_detect::imaging::{write_heatmap_png, write_spectrogram_png};
use lossy_detect::model::checkpoint::Checkpoint;
use lossy_detect::model::{Model, ModelConfig};

fn main() -> lossy_detect::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = std::env::temp_dir().join("lossy-detect-saliency");
    let (lossless, lossy, cutoff) = if args.len() >= 3 {
        (PathBuf::from(&args[0]), PathBuf::from(&args[1]), args[2].parse().unwrap_or(16_000.0))
    } else {
        let src = generate_synthetic_corpus(1, 6.0, 11, &out)?.remove(0).path;
        let spec = EncodingSpec {
            codec: Codec::Mp3Lame,
            bitrate: Bitrate::K128,
            cutoff_hz: Some(16_000),
        };
        let dst = out.join("lossy.wav");
        Transcoder::discover(None)?.transcode(&src, &spec, &dst)?;
        (src, dst, 16_000.0)
    };
    let model = match args.get(3) {
        Some(p) => Checkpoint::load(p.as_ref())?.model,
        None => Model::init(ModelConfig::with_channels([4, 8, 8, 16]), 0)?,
    };

    let a = load_audio(&lossless)?;
    let b = load_audio(&lossy)?;
    let offset = a.n_samples().saturating_sub(88_200) / 2;
    let pair = analyse_pair(&model, &a, &b, cutoff, offset, DEFAULT_HOLE_DB, &mut hole_rng(0))?;

    let holes = pair.holes.iter().filter(|&&h| h).count();
    println!("{holes} hole cells below {cutoff} Hz; p_lossy {:.4}", pair.saliency.p_lossy);
    match pair.comparison {
        Some(c) => println!(
            "mean saliency: holes {:.4}, equal-size random non-holes {:.4} -> holes {}",
            c.hole_mean,
            c.nonhole_mean,
            if c.holes_win() { "brighter" } else { "not brighter" }
        ),
        None => println!("no holes to compare"),
    }

    write_spectrogram_png(&pair.lossless, &out.join("lossless.png"))?;
    write_spectrogram_png(&pair.lossy, &out.join("lossy.png"))?;
    write_heatmap_png(&pair.saliency.values, pair.saliency.n_bins, pair.saliency.n_frames, &out.join("saliency.png"))?;
    let hole_img: Vec<f64> = pair.holes.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
    write_heatmap_png(&hole_img, pair.lossy.n_bins, pair.lossy.n_frames, &out.join("holes.png"))?;
    println!("images in {}", out.display());
    Ok(())
}
