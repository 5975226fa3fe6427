use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N × K` binary truth matrix, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::dim(format!(
                "binary matrix {rows}x{cols} with {} entries",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Validation("binary matrix entries must be 0 or 1".into()));
        }
        Ok(BinaryMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_scores(&self) -> ScoreMatrix {
        ScoreMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// `N × K` scores in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::dim(format!(
                "score matrix {rows}x{cols} with {} entries",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("score {v} outside [0, 1]")));
        }
        Ok(ScoreMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `R × N × K` binary ratings: raters × images × labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterMatrix {
    raters: usize,
    images: usize,
    labels: usize,
    data: Vec<u8>,
}

impl RaterMatrix {
    pub fn new(raters: usize, images: usize, labels: usize, data: Vec<u8>) -> Result<Self> {
        if raters == 0 || images == 0 || labels == 0 || data.len() != raters * images * labels {
            return Err(Error::dim(format!(
                "rater matrix {raters}x{images}x{labels} with {} entries",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Validation("ratings must be 0 or 1".into()));
        }
        Ok(RaterMatrix { raters, images, labels, data })
    }

    pub fn from_raters(per_rater: &[BinaryMatrix]) -> Result<Self> {
        let first = per_rater.first().ok_or_else(|| Error::dim("no raters"))?;
        let (n, k) = (first.rows, first.cols);
        if per_rater.iter().any(|m| m.rows != n || m.cols != k) {
            return Err(Error::dim("raters disagree on matrix shape"));
        }
        let data = per_rater.iter().flat_map(|m| m.data.iter().copied()).collect();
        Self::new(per_rater.len(), n, k, data)
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn get(&self, rater: usize, image: usize, label: usize) -> u8 {
        self.data[(rater * self.images + image) * self.labels + label]
    }

    pub fn rater(&self, e: usize) -> BinaryMatrix {
        let sz = self.images * self.labels;
        BinaryMatrix {
            rows: self.images,
            cols: self.labels,
            data: self.data[e * sz..(e + 1) * sz].to_vec(),
        }
    }

    /// Elementwise mean of every rater except `e`.
    pub fn consensus_excluding(&self, e: usize) -> Result<ScoreMatrix> {
        if self.raters < 2 {
            return Err(Error::Protocol("consensus needs at least two raters".into()));
        }
        let sz = self.images * self.labels;
        let mut sum = vec![0u32; sz];
        for r in (0..self.raters).filter(|&r| r != e) {
            for (s, &v) in sum.iter_mut().zip(&self.data[r * sz..(r + 1) * sz]) {
                *s += u32::from(v);
            }
        }
        let denom = (self.raters - 1) as f64;
        ScoreMatrix::new(
            self.images,
            self.labels,
            sum.into_iter().map(|s| f64::from(s) / denom).collect(),
        )
    }

    /// Raters reordered by `perm` (new rater `i` is old rater `perm[i]`).
    pub fn permute_raters(&self, perm: &[usize]) -> Result<Self> {
        let sz = self.images * self.labels;
        let data = perm
            .iter()
            .flat_map(|&r| self.data[r * sz..(r + 1) * sz].iter().copied())
            .collect();
        Self::new(perm.len(), self.images, self.labels, data)
    }
}
