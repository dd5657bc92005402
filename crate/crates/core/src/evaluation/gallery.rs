//! Misclassified tracks, split into lossless errors and lossy errors, with a
//! spectrogram image of each.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::load_audio;
use crate::dataset::{EncodingSpec, Label, Manifest};
use crate::error::{IoContext, Result};
use crate::imaging::write_spectrogram_png;
use crate::inference::PredictionRecord;
use crate::spectral::{crop_at, spectrogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub track_id: String,
    pub audio_path: PathBuf,
    pub p_lossy: f64,
    pub encoding: Option<EncodingSpec>,
    /// Relative to the gallery directory; `None` if the audio could not be rendered.
    pub image: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Gallery {
    pub evaluated: usize,
    /// Lossless tracks predicted lossy.
    pub lossless_errors: Vec<GalleryEntry>,
    /// Lossy tracks predicted lossless.
    pub lossy_errors: Vec<GalleryEntry>,
}

impl Gallery {
    pub fn len(&self) -> usize {
        self.lossless_errors.len() + self.lossy_errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "# Error gallery\n\n{} of {} tracks misclassified ({} lossless, {} lossy).\n",
            self.len(),
            self.evaluated,
            self.lossless_errors.len(),
            self.lossy_errors.len()
        );
        for (title, entries) in [
            ("Lossless tracks predicted lossy", &self.lossless_errors),
            ("Lossy tracks predicted lossless", &self.lossy_errors),
        ] {
            s.push_str(&format!("\n## {title}\n\n"));
            if entries.is_empty() {
                s.push_str("None.\n");
                continue;
            }
            s.push_str("| track | encoding | p_lossy | spectrogram |\n|---|---|---|---|\n");
            for e in entries {
                let enc = e.encoding.map_or("-".to_string(), |e| e.to_string());
                let img = e
                    .image
                    .as_ref()
                    .map_or("-".to_string(), |p| format!("![]({})", p.display()));
                s.push_str(&format!("| {} | {enc} | {:.3} | {img} |\n", e.track_id, e.p_lossy));
            }
        }
        s
    }
}

/// Writes `gallery.md`, `gallery.json` and one PNG per error (the middle
/// 2 seconds of the track) under `out_dir`.
pub fn error_gallery(preds: &[PredictionRecord], manifest: &Manifest, out_dir: &Path) -> Result<Gallery> {
    fs::create_dir_all(out_dir).at(out_dir)?;
    let mut g = Gallery::default();
    for p in preds {
        let Some(correct) = p.is_correct() else { continue };
        g.evaluated += 1;
        if correct {
            continue;
        }
        let section = if p.label_true == Some(Label::Lossless) {
            "lossless"
        } else {
            "lossy"
        };
        let name = PathBuf::from(section).join(format!("{}.png", p.track_id));
        let path = if p.audio_path.is_absolute() {
            p.audio_path.clone()
        } else {
            manifest.base_dir.join(&p.audio_path)
        };
        let image = match load_audio(&path) {
            Ok(clip) => {
                let mid = clip.n_samples().saturating_sub(crate::audio::CLIP_SAMPLES) / 2;
                write_spectrogram_png(&spectrogram(&crop_at(&clip, mid)), &out_dir.join(&name))?;
                Some(name)
            }
            Err(e) => {
                log::warn!("gallery: {}: {e}", p.track_id);
                None
            }
        };
        let entry = GalleryEntry {
            track_id: p.track_id.clone(),
            audio_path: p.audio_path.clone(),
            p_lossy: p.p_lossy,
            encoding: p.encoding,
            image,
        };
        if section == "lossless" {
            g.lossless_errors.push(entry);
        } else {
            g.lossy_errors.push(entry);
        }
    }
    let md = out_dir.join("gallery.md");
    fs::write(&md, g.to_markdown()).at(&md)?;
    let js = out_dir.join("gallery.json");
    fs::write(&js, serde_json::to_string_pretty(&g)?).at(&js)?;
    Ok(g)
}
