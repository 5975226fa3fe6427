use serde::{Deserialize, Serialize};

use super::matrix::{BinaryMatrix, ScoreMatrix};
use crate::error::{Error, Result};

/// How per-label AUCs are aggregated into one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AucMode {
    /// Mean of per-label AUCs over labels with both classes present.
    #[default]
    Macro,
    /// One AUC over all (image, label) pairs pooled together.
    Micro,
}

/// Mann–Whitney AUC by sorting and mid-ranking: ties count one half.
///
/// Returns [`Error::UndefinedAuc`] if `truth` holds only one class.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::dim(format!(
            "{} scores but {} truth values",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(truth.iter().copied()).collect();
    auc_of_pairs(&mut pairs)
}

/// Sorts `pairs` in place. Ranks are accumulated doubled so every quantity stays integral.
fn auc_of_pairs(pairs: &mut [(f64, u8)]) -> Result<f64> {
    let n_pos = pairs.iter().filter(|p| p.1 == 1).count() as u64;
    let n = pairs.len() as u64;
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{n_pos} positives and {n_neg} negatives"
        )));
    }
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    // 2 * (sum of positive mid-ranks), 1-based
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i + 1;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let pos_in_group = pairs[i..j].iter().filter(|p| p.1 == 1).count() as u64;
        // mid-rank of ranks i+1..=j is (i+1+j)/2
        twice_rank_sum += pos_in_group * (i as u64 + 1 + j as u64);
        i = j;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Per-label detail behind an aggregated AUC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelAucs {
    pub mean: f64,
    /// `None` marks a label skipped for lacking one of the classes.
    pub per_label: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

fn check_dims(scores: &ScoreMatrix, truth: &BinaryMatrix) -> Result<()> {
    if scores.rows() != truth.rows() || scores.cols() != truth.cols() {
        return Err(Error::dim(format!(
            "scores {}x{} vs truth {}x{}",
            scores.rows(),
            scores.cols(),
            truth.rows(),
            truth.cols()
        )));
    }
    Ok(())
}

pub fn macro_auc(scores: &ScoreMatrix, truth: &BinaryMatrix) -> Result<LabelAucs> {
    let rows: Vec<usize> = (0..scores.rows()).collect();
    macro_auc_rows(scores, truth, &rows)
}

/// Macro AUC over the given rows (repeats allowed, as in a bootstrap resample).
pub fn macro_auc_rows(scores: &ScoreMatrix, truth: &BinaryMatrix, rows: &[usize]) -> Result<LabelAucs> {
    check_dims(scores, truth)?;
    let mut per_label = Vec::with_capacity(scores.cols());
    let mut skipped = Vec::new();
    let mut pairs = Vec::with_capacity(rows.len());
    for k in 0..scores.cols() {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (scores.get(r, k), truth.get(r, k))));
        match auc_of_pairs(&mut pairs) {
            Ok(a) => per_label.push(Some(a)),
            Err(Error::UndefinedAuc(_)) => {
                per_label.push(None);
                skipped.push(k);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedAuc("no label has both classes present".into()));
    }
    Ok(LabelAucs {
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        per_label,
        skipped,
    })
}

/// Pooled AUC over every (row, label) cell of the given rows.
pub fn micro_auc_rows(scores: &ScoreMatrix, truth: &BinaryMatrix, rows: &[usize]) -> Result<f64> {
    check_dims(scores, truth)?;
    let mut pairs: Vec<(f64, u8)> = rows
        .iter()
        .flat_map(|&r| (0..scores.cols()).map(move |k| (r, k)))
        .map(|(r, k)| (scores.get(r, k), truth.get(r, k)))
        .collect();
    auc_of_pairs(&mut pairs)
}

impl AucMode {
    pub(crate) fn score_rows(self, scores: &ScoreMatrix, truth: &BinaryMatrix, rows: &[usize]) -> Result<f64> {
        match self {
            AucMode::Macro => macro_auc_rows(scores, truth, rows).map(|m| m.mean),
            AucMode::Micro => micro_auc_rows(scores, truth, rows),
        }
    }
}
