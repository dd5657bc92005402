//! Grouped accuracy tables: codec x bit rate, and cutoff x codec / cutoff x bit rate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{Bitrate, Codec, EncodingSpec, Label};
use crate::error::{Error, Result};
use crate::inference::PredictionRecord;

/// Correct/total counts and the accuracy in percent (`None` when empty).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
    pub accuracy: Option<f64>,
}

impl Cell {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
        self.accuracy = Some(100.0 * self.correct as f64 / self.total as f64);
    }
}

/// Unweighted mean of the non-empty values.
pub fn mean_of(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn scored(preds: &[PredictionRecord]) -> impl Iterator<Item = (&PredictionRecord, bool)> {
    preds
        .iter()
        .filter_map(|p| p.is_correct().map(|ok| (p, ok)))
}

fn lossless_cell(preds: &[PredictionRecord]) -> Cell {
    let mut c = Cell::default();
    for (p, ok) in scored(preds) {
        if p.label_true == Some(Label::Lossless) {
            c.add(ok);
        }
    }
    c
}

fn lossy(preds: &[PredictionRecord]) -> impl Iterator<Item = (EncodingSpec, bool)> + '_ {
    scored(preds).filter_map(|(p, ok)| match (p.label_true, p.encoding) {
        (Some(Label::Lossy), Some(e)) => Some((e, ok)),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecBitrateCell {
    pub codec: Codec,
    pub bitrate: Bitrate,
    #[serde(flatten)]
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    /// Codec-major, in `Codec::ALL` x `Bitrate::ALL` order.
    pub cells: Vec<CodecBitrateCell>,
    pub lossless: Cell,
    /// Unweighted mean over the non-empty codec/bit-rate cells and the lossless column.
    pub mean: Option<f64>,
    /// Unweighted mean over the non-empty codec/bit-rate cells only.
    pub lossy_mean: Option<f64>,
    /// Average of `lossy_mean` and the lossless accuracy.
    pub balanced_mean: Option<f64>,
}

impl AccuracyTable {
    pub fn cell(&self, codec: Codec, bitrate: Bitrate) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.codec == codec && c.bitrate == bitrate)
            .map(|c| &c.cell)
    }
}

/// Per codec and bit rate: share of lossy tracks predicted lossy; plus the
/// share of lossless tracks predicted lossless. Error records are ignored.
pub fn accuracy_table(preds: &[PredictionRecord]) -> AccuracyTable {
    let mut cells: Vec<CodecBitrateCell> = Codec::ALL
        .iter()
        .flat_map(|&codec| {
            Bitrate::ALL.iter().map(move |&bitrate| CodecBitrateCell {
                codec,
                bitrate,
                cell: Cell::default(),
            })
        })
        .collect();
    for (e, ok) in lossy(preds) {
        if let Some(c) = cells.iter_mut().find(|c| c.codec == e.codec && c.bitrate == e.bitrate) {
            c.cell.add(ok);
        }
    }
    let lossless = lossless_cell(preds);
    let lossy_mean = mean_of(cells.iter().map(|c| c.cell.accuracy));
    let mean = mean_of(cells.iter().map(|c| c.cell.accuracy).chain([lossless.accuracy]));
    let balanced_mean = match (lossy_mean, lossless.accuracy) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        _ => None,
    };
    AccuracyTable {
        cells,
        lossless,
        mean,
        lossy_mean,
        balanced_mean,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell<K> {
    pub cutoff_hz: u32,
    pub key: K,
    #[serde(flatten)]
    pub cell: Cell,
}

/// Cutoff rows against one grouping column, with unweighted marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<K> {
    pub cells: Vec<GridCell<K>>,
    pub row_means: Vec<(u32, Option<f64>)>,
    pub col_means: Vec<(K, Option<f64>)>,
    pub grand_mean: Option<f64>,
}

impl<K: Copy + PartialEq> Grid<K> {
    fn build(cutoffs: &[u32], keys: &[K], items: &[(u32, K, bool)]) -> Self {
        let mut cells = Vec::new();
        for &cutoff_hz in cutoffs {
            for &key in keys {
                let mut cell = Cell::default();
                for &(c, k, ok) in items {
                    if c == cutoff_hz && k == key {
                        cell.add(ok);
                    }
                }
                cells.push(GridCell { cutoff_hz, key, cell });
            }
        }
        let row_means = cutoffs
            .iter()
            .map(|&c| {
                (
                    c,
                    mean_of(cells.iter().filter(|g| g.cutoff_hz == c).map(|g| g.cell.accuracy)),
                )
            })
            .collect();
        let col_means = keys
            .iter()
            .map(|&k| (k, mean_of(cells.iter().filter(|g| g.key == k).map(|g| g.cell.accuracy))))
            .collect();
        let grand_mean = mean_of(cells.iter().map(|g| g.cell.accuracy));
        Self {
            cells,
            row_means,
            col_means,
            grand_mean,
        }
    }

    pub fn cell(&self, cutoff_hz: u32, key: K) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|g| g.cutoff_hz == cutoff_hz && g.key == key)
            .map(|g| &g.cell)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullCell {
    pub cutoff_hz: u32,
    pub codec: Codec,
    pub bitrate: Bitrate,
    #[serde(flatten)]
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffTable {
    pub cutoffs_hz: Vec<u32>,
    pub by_codec: Grid<Codec>,
    pub by_bitrate: Grid<Bitrate>,
    /// Cutoff x codec x bit rate breakdown (extension beyond the two 2-way views).
    pub full: Vec<FullCell>,
    pub lossless: Cell,
    /// Grand mean of the cutoff x codec grid.
    pub grand_mean: Option<f64>,
}

pub fn cutoff_table(preds: &[PredictionRecord]) -> Result<CutoffTable> {
    let mut items = Vec::new();
    for (e, ok) in lossy(preds) {
        let cutoff = e.cutoff_hz.ok_or_else(|| {
            Error::Argument("cutoff table needs a cutoff on every lossy prediction".into())
        })?;
        items.push((cutoff, e.codec, e.bitrate, ok));
    }
    let cutoffs: Vec<u32> = items
        .iter()
        .map(|i| i.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let by_codec = Grid::build(
        &cutoffs,
        &Codec::ALL,
        &items.iter().map(|&(c, k, _, ok)| (c, k, ok)).collect::<Vec<_>>(),
    );
    let by_bitrate = Grid::build(
        &cutoffs,
        &Bitrate::ALL,
        &items.iter().map(|&(c, _, b, ok)| (c, b, ok)).collect::<Vec<_>>(),
    );
    let mut full = Vec::new();
    for &cutoff_hz in &cutoffs {
        for codec in Codec::ALL {
            for bitrate in Bitrate::ALL {
                let mut cell = Cell::default();
                for &(c, k, b, ok) in &items {
                    if c == cutoff_hz && k == codec && b == bitrate {
                        cell.add(ok);
                    }
                }
                full.push(FullCell {
                    cutoff_hz,
                    codec,
                    bitrate,
                    cell,
                });
            }
        }
    }
    let grand_mean = by_codec.grand_mean;
    Ok(CutoffTable {
        cutoffs_hz: cutoffs,
        by_codec,
        by_bitrate,
        full,
        lossless: lossless_cell(preds),
        grand_mean,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::DatasetId;

    pub(crate) fn pred(enc: Option<EncodingSpec>, p_lossy: f64) -> PredictionRecord {
        let label = if enc.is_some() { Label::Lossy } else { Label::Lossless };
        PredictionRecord {
            track_id: "t".into(),
            audio_path: "a.wav".into(),
            p_lossy,
            window_probs: vec![p_lossy],
            label_true: Some(label),
            encoding: enc,
            dataset_id: Some(DatasetId::Ds1),
            predicted: crate::inference::decide(p_lossy, 0.5),
            error: None,
        }
    }

    pub(crate) fn enc(codec: Codec, bitrate: Bitrate, cutoff_hz: Option<u32>) -> Option<EncodingSpec> {
        Some(EncodingSpec {
            codec,
            bitrate,
            cutoff_hz,
        })
    }

    #[test]
    fn perfect_predictions_give_100_everywhere() {
        let mut preds = vec![pred(None, 0.0)];
        for c in Codec::ALL {
            for b in Bitrate::ALL {
                preds.push(pred(enc(c, b, None), 1.0));
            }
        }
        let t = accuracy_table(&preds);
        assert!(t.cells.iter().all(|c| c.cell.accuracy == Some(100.0)));
        assert_eq!(t.mean, Some(100.0));
        assert_eq!(t.lossless.accuracy, Some(100.0));
    }

    #[test]
    fn hand_counted_fixture() {
        // Two mp3/128 tracks, one missed; one vorbis/256 hit; one lossless hit.
        let preds = vec![
            pred(enc(Codec::Mp3Lame, Bitrate::K128, None), 0.9),
            pred(enc(Codec::Mp3Lame, Bitrate::K128, None), 0.1),
            pred(enc(Codec::Vorbis, Bitrate::K256, None), 0.7),
            pred(None, 0.2),
        ];
        let t = accuracy_table(&preds);
        assert_eq!(t.cell(Codec::Mp3Lame, Bitrate::K128).unwrap().accuracy, Some(50.0));
        assert_eq!(t.cell(Codec::Vorbis, Bitrate::K256).unwrap().accuracy, Some(100.0));
        assert_eq!(t.cell(Codec::FdkAac, Bitrate::K320).unwrap().accuracy, None);
        assert_eq!(t.lossy_mean, Some(75.0));
        // (50 + 100 + 100) / 3
        assert!((t.mean.unwrap() - 250.0 / 3.0).abs() < 1e-12);
        assert_eq!(t.balanced_mean, Some(87.5));
    }

    #[test]
    fn balanced_mean_reproduces_published_row_means() {
        // DS1 and DS2 rows of the naive-model table; the published row means
        // average the lossy cells with the lossless column.
        let ds1 = [100.0, 98.91, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 98.37];
        let ds2 = [31.38, 28.96, 24.74, 98.91, 93.16, 86.7, 80.63, 68.45, 60.87];
        let lossless = 99.88;
        let bal = |v: &[f64]| (v.iter().sum::<f64>() / 9.0 + lossless) / 2.0;
        assert!((bal(&ds1) - 99.79).abs() < 0.01);
        assert!((bal(&ds2) - 81.85).abs() < 0.05);
    }

    #[test]
    fn cutoff_table_marginals_recompute_from_cells() {
        let mut preds = vec![pred(None, 0.1), pred(None, 0.8)];
        let mut k = 0;
        for cut in [14_000, 20_000] {
            for c in Codec::ALL {
                for b in Bitrate::ALL {
                    k += 1;
                    preds.push(pred(enc(c, b, Some(cut)), if k % 3 == 0 { 0.2 } else { 0.9 }));
                }
            }
        }
        let t = cutoff_table(&preds).unwrap();
        assert_eq!(t.cutoffs_hz, vec![14_000, 20_000]);
        assert_eq!(t.lossless.accuracy, Some(50.0));
        for grid_mean in [t.by_codec.grand_mean, t.by_bitrate.grand_mean] {
            assert!(grid_mean.is_some());
        }
        let cells: Vec<f64> = t.by_codec.cells.iter().filter_map(|c| c.cell.accuracy).collect();
        let expect = cells.iter().sum::<f64>() / cells.len() as f64;
        assert!((t.grand_mean.unwrap() - expect).abs() < 1e-12);
        for (cut, m) in &t.by_codec.row_means {
            let row: Vec<f64> = Codec::ALL
                .iter()
                .filter_map(|&c| t.by_codec.cell(*cut, c).unwrap().accuracy)
                .collect();
            assert!((m.unwrap() - row.iter().sum::<f64>() / row.len() as f64).abs() < 1e-12);
        }
        assert_eq!(t.full.len(), 2 * 9);
        assert!(t.full.iter().all(|c| c.cell.total == 1));
    }

    #[test]
    fn cutoff_table_requires_cutoffs() {
        let preds = vec![pred(enc(Codec::Vorbis, Bitrate::K128, None), 0.9)];
        assert!(cutoff_table(&preds).is_err());
    }
}
