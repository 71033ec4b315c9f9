//! Batch-level teacher similarity machinery: soft-label matrices, threshold
//! filter masks, adaptive margin weights and the threshold-selection statistics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::cosine;
use crate::teacher_store::Modality;

/// Dense row-major `rows × cols` matrix of cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    pub row_modality: Modality,
    pub col_modality: Modality,
}

impl SimilarityMatrix {
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        row_modality: Modality,
        col_modality: Modality,
    ) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(n * m);
        for row in rows {
            if row.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "ragged row of length {}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::ShapeMismatch("similarity outside [-1, 1]".into()));
            }
            entries.extend(row);
        }
        Ok(Self {
            rows: n,
            cols: m,
            entries,
            row_modality,
            col_modality,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                entries.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            entries,
            row_modality: self.col_modality,
            col_modality: self.row_modality,
        }
    }
}

/// Which side of the threshold gets excluded from the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterOrientation {
    /// Off-diagonal pairs with `α ≥ threshold` are dropped (suspected false negatives).
    #[default]
    ExcludeSimilar,
    /// Off-diagonal pairs with `α < threshold` are dropped (the inverse orientation).
    KeepSimilar,
}

impl std::str::FromStr for FilterOrientation {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "exclude_similar" => Ok(Self::ExcludeSimilar),
            "keep_similar" => Ok(Self::KeepSimilar),
            _ => Err(()),
        }
    }
}

impl std::fmt::Display for FilterOrientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ExcludeSimilar => "exclude_similar",
            Self::KeepSimilar => "keep_similar",
        })
    }
}

/// `{0, 1}` keep/drop pattern over negatives. Diagonal entries are always kept.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    pub threshold: f64,
}

impl FilterMask {
    pub fn all_pass(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            keep: vec![true; n * n],
            threshold: f64::INFINITY,
        }
    }

    /// Only the diagonal survives.
    pub fn diagonal_only(n: usize) -> Self {
        let keep = (0..n * n).map(|k| k / n == k % n).collect();
        Self {
            rows: n,
            cols: n,
            keep,
            threshold: f64::NEG_INFINITY,
        }
    }

    pub fn from_fn(n: usize, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        let keep = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                i == j || keep(i, j)
            })
            .collect();
        Self {
            rows: n,
            cols: n,
            keep,
            threshold: f64::NAN,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn keeps(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.cols + j]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        if self.keeps(i, j) {
            1.0
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, keep: bool) {
        if i != j {
            self.keep[i * self.cols + j] = keep;
        }
    }
}

/// Adaptive margin weights `Δ = |1 − α|`, each in `[0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginWeights {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl MarginWeights {
    pub fn zeros(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            entries: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(n * m);
        for row in rows {
            if row.len() != m || row.iter().any(|d| !(0.0..=2.0).contains(d)) {
                return Err(Error::ShapeMismatch(
                    "margin weights must be rectangular in [0, 2]".into(),
                ));
            }
            entries.extend(row);
        }
        Ok(Self {
            rows: n,
            cols: m,
            entries,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }
}

/// `entries[i][j] = cosine(rows[i], cols[j])`.
pub fn pairwise_cosine(
    rows: &[Vec<f64>],
    cols: &[Vec<f64>],
    row_modality: Modality,
    col_modality: Modality,
) -> Result<SimilarityMatrix> {
    let mut entries = Vec::with_capacity(rows.len() * cols.len());
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            let value = cosine(r, c).map_err(|e| match e {
                Error::ZeroNormVector { index: 0 } => Error::ZeroNormVector { index: i },
                Error::ZeroNormVector { .. } => Error::ZeroNormVector { index: j },
                other => other,
            })?;
            entries.push(value);
        }
    }
    Ok(SimilarityMatrix {
        rows: rows.len(),
        cols: cols.len(),
        entries,
        row_modality,
        col_modality,
    })
}

/// Text–text and text–visual soft labels computed from raw teacher features.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels {
    pub tt: SimilarityMatrix,
    pub tv: SimilarityMatrix,
}

pub fn soft_labels(teacher_text: &[Vec<f64>], teacher_visual: &[Vec<f64>]) -> Result<SoftLabels> {
    if teacher_text.len() != teacher_visual.len() {
        return Err(Error::BatchLengthMismatch {
            left: teacher_text.len(),
            right: teacher_visual.len(),
        });
    }
    Ok(SoftLabels {
        tt: pairwise_cosine(teacher_text, teacher_text, Modality::Text, Modality::Text)?,
        tv: pairwise_cosine(
            teacher_text,
            teacher_visual,
            Modality::Text,
            Modality::Visual,
        )?,
    })
}

pub fn filter_mask(
    sim: &SimilarityMatrix,
    threshold: f64,
    orientation: FilterOrientation,
) -> Result<FilterMask> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::ThresholdOutOfRange(threshold));
    }
    let mut keep = Vec::with_capacity(sim.rows * sim.cols);
    for i in 0..sim.rows {
        for j in 0..sim.cols {
            let alpha = sim.get(i, j);
            let k = i == j
                || match orientation {
                    FilterOrientation::ExcludeSimilar => alpha < threshold,
                    FilterOrientation::KeepSimilar => alpha >= threshold,
                };
            keep.push(k);
        }
    }
    Ok(FilterMask {
        rows: sim.rows,
        cols: sim.cols,
        keep,
        threshold,
    })
}

pub fn margin_weights(sim: &SimilarityMatrix) -> MarginWeights {
    MarginWeights {
        rows: sim.rows,
        cols: sim.cols,
        entries: sim.entries.iter().map(|a| (1.0 - a).abs()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram over `[-1, 1]` of off-diagonal entries.
///
/// Bins are half-open `[lo, hi)` except the last, which also takes `1.0`.
pub fn similarity_histogram(sim: &SimilarityMatrix, bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    let width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    let square = sim.is_square();
    for i in 0..sim.rows {
        for j in 0..sim.cols {
            if square && i == j {
                continue;
            }
            counts[bin_index(sim.get(i, j), bins)] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            lo: -1.0 + b as f64 * width,
            hi: if b + 1 == bins {
                1.0
            } else {
                -1.0 + (b + 1) as f64 * width
            },
            count,
        })
        .collect())
}

fn bin_index(value: f64, bins: usize) -> usize {
    let idx = ((value + 1.0) / 2.0 * bins as f64).floor();
    (idx.max(0.0) as usize).min(bins - 1)
}

/// For each image column of `tv` (rows = captions), the worst 1-based rank of its
/// gold captions when all captions are sorted by descending similarity.
///
/// Ties are broken by ascending caption index.
pub fn true_caption_rank(
    tv: &SimilarityMatrix,
    gold: &BTreeMap<usize, Vec<usize>>,
) -> Result<BTreeMap<usize, usize>> {
    let mut out = BTreeMap::new();
    for (&image, captions) in gold {
        if image >= tv.cols {
            return Err(Error::UnknownGoldIndex {
                index: image,
                rows: tv.cols,
            });
        }
        if let Some(&bad) = captions.iter().find(|&&c| c >= tv.rows) {
            return Err(Error::UnknownGoldIndex {
                index: bad,
                rows: tv.rows,
            });
        }
        let mut order: Vec<usize> = (0..tv.rows).collect();
        order.sort_by(|&a, &b| {
            tv.get(b, image)
                .partial_cmp(&tv.get(a, image))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut rank_of = vec![0usize; tv.rows];
        for (pos, &c) in order.iter().enumerate() {
            rank_of[c] = pos + 1;
        }
        let worst = captions.iter().map(|&c| rank_of[c]).max().unwrap_or(0);
        out.insert(image, worst);
    }
    Ok(out)
}
