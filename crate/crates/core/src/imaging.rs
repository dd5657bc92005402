//! PNG rendering of spectrograms and heatmaps. Low frequencies at the bottom,
//! one pixel per cell.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::spectral::{Spectrogram, DB_FLOOR};

// Dark purple through orange to pale yellow.
const STOPS: [(f64, [u8; 3]); 5] = [
    (0.0, [0, 0, 4]),
    (0.25, [81, 18, 124]),
    (0.5, [183, 55, 121]),
    (0.75, [252, 137, 97]),
    (1.0, [252, 253, 191]),
];

pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    for w in STOPS.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let u = (t - t0) / (t1 - t0);
            let mut out = [0u8; 3];
            for k in 0..3 {
                out[k] = (c0[k] as f64 + u * (c1[k] as f64 - c0[k] as f64)).round() as u8;
            }
            return out;
        }
    }
    STOPS[STOPS.len() - 1].1
}

/// Renders bin-major `values` mapped linearly from `[lo, hi]`.
pub fn render(values: &[f64], n_bins: usize, n_frames: usize, lo: f64, hi: f64) -> RgbImage {
    let span = (hi - lo).max(f64::EPSILON);
    RgbImage::from_fn(n_frames as u32, n_bins as u32, |x, y| {
        let bin = n_bins - 1 - y as usize;
        Rgb(colormap((values[bin * n_frames + x as usize] - lo) / span))
    })
}

pub fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn write_spectrogram_png(s: &Spectrogram, path: &Path) -> Result<()> {
    save(&render(&s.values, s.n_bins, s.n_frames, DB_FLOOR, 0.0), path)
}

pub fn write_heatmap_png(values: &[f64], n_bins: usize, n_frames: usize, path: &Path) -> Result<()> {
    save(&render(values, n_bins, n_frames, 0.0, 1.0), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints_and_clamping() {
        assert_eq!(colormap(0.0), [0, 0, 4]);
        assert_eq!(colormap(1.0), [252, 253, 191]);
        assert_eq!(colormap(-3.0), colormap(0.0));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }

    #[test]
    fn low_bins_are_drawn_at_the_bottom() {
        let mut v = vec![0.0; 3 * 2];
        v[0] = 1.0; // bin 0, frame 0
        let img = render(&v, 3, 2, 0.0, 1.0);
        assert_eq!(img.dimensions(), (2, 3));
        assert_eq!(img.get_pixel(0, 2).0, colormap(1.0));
        assert_eq!(img.get_pixel(0, 0).0, colormap(0.0));
    }

    #[test]
    fn png_roundtrip_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.png");
        write_heatmap_png(&[0.5; 12], 4, 3, &p).unwrap();
        let img = image::open(&p).unwrap();
        assert_eq!((img.width(), img.height()), (3, 4));
    }
}
