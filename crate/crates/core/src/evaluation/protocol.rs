use serde::{Deserialize, Serialize};

use super::auc::{macro_auc_rows, micro_auc_rows, AucMode, LabelAucs};
use super::matrix::{RaterMatrix, ScoreMatrix};
use crate::error::{Error, Result};

/// One AUC per held-out expert plus their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub per_expert: Vec<f64>,
    pub mean: f64,
    /// Per-label breakdown per expert (macro mode only).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub detail: Vec<LabelAucs>,
}

fn aggregate(values: Vec<(f64, Option<LabelAucs>)>) -> Agreement {
    let mean = values.iter().map(|v| v.0).sum::<f64>() / values.len() as f64;
    let (per_expert, detail): (Vec<f64>, Vec<Option<LabelAucs>>) = values.into_iter().unzip();
    Agreement {
        per_expert,
        mean,
        detail: detail.into_iter().flatten().collect(),
    }
}

fn score(mode: AucMode, scores: &ScoreMatrix, raters: &RaterMatrix, e: usize, rows: &[usize]) -> Result<(f64, Option<LabelAucs>)> {
    let truth = raters.rater(e);
    match mode {
        AucMode::Macro => macro_auc_rows(scores, &truth, rows).map(|m| (m.mean, Some(m))),
        AucMode::Micro => micro_auc_rows(scores, &truth, rows).map(|a| (a, None)),
    }
}

/// Each expert's labels scored against the mean of the other experts' labels.
pub fn expert_consensus_auc(raters: &RaterMatrix, mode: AucMode) -> Result<Agreement> {
    let rows: Vec<usize> = (0..raters.images()).collect();
    expert_consensus_auc_rows(raters, mode, &rows)
}

pub(crate) fn expert_consensus_auc_rows(raters: &RaterMatrix, mode: AucMode, rows: &[usize]) -> Result<Agreement> {
    if raters.raters() < 2 {
        return Err(Error::Protocol(format!(
            "one-vs-rest agreement needs at least 2 raters, got {}",
            raters.raters()
        )));
    }
    let values = (0..raters.raters())
        .map(|e| {
            let consensus = raters.consensus_excluding(e)?;
            score(mode, &consensus, raters, e, rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(values))
}

/// Model scores against each expert in turn.
pub fn model_vs_experts_auc(scores: &ScoreMatrix, raters: &RaterMatrix, mode: AucMode) -> Result<Agreement> {
    let rows: Vec<usize> = (0..raters.images()).collect();
    model_vs_experts_auc_rows(scores, raters, mode, &rows)
}

pub(crate) fn model_vs_experts_auc_rows(
    scores: &ScoreMatrix,
    raters: &RaterMatrix,
    mode: AucMode,
    rows: &[usize],
) -> Result<Agreement> {
    if scores.rows() != raters.images() || scores.cols() != raters.labels() {
        return Err(Error::dim(format!(
            "model scores {}x{} vs ratings over {} images x {} labels",
            scores.rows(),
            scores.cols(),
            raters.images(),
            raters.labels()
        )));
    }
    let values = (0..raters.raters())
        .map(|e| score(mode, scores, raters, e, rows))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(values))
}
