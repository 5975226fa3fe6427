use serde::{Deserialize, Serialize};

use super::auc::{macro_auc_rows, AucMode};
use super::bootstrap::{bootstrap_many, BootstrapOptions};
use super::matrix::{BinaryMatrix, RaterMatrix, ScoreMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub mode: AucMode,
    pub bootstrap: BootstrapOptions,
    /// With a single rater, report only the model row instead of failing.
    pub allow_single_rater: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: AucMode::Macro,
            bootstrap: BootstrapOptions::default(),
            allow_single_rater: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub auc: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDetail {
    pub name: String,
    /// Mean over experts of the one-vs-rest AUC for this label; `None` when never computable.
    pub expert_auc: Option<f64>,
    /// Mean over experts of the model's AUC for this label.
    pub model_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: AucMode,
    pub images: usize,
    pub raters: usize,
    /// `Expert 1..R`, `Expert Mean`, `Model`.
    pub rows: Vec<EvalRow>,
    /// Model against each expert individually.
    pub model_vs_expert: Vec<EvalRow>,
    pub labels: Vec<LabelDetail>,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub redraws: usize,
}

impl EvalReport {
    pub fn row(&self, name: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// `row,auc,ci_lower,ci_upper`, main rows first then per-expert model rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,auc,ci_lower,ci_upper\n");
        for r in self.rows.iter().chain(&self.model_vs_expert) {
            s.push_str(&format!("{},{},{},{}\n", r.name, r.auc, r.ci_lower, r.ci_upper));
        }
        s
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let level = (self.level * 100.0).round();
        let mut s = format!("{:<22} {:>6}  {level}% CI\n", "", "AUC");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<22} {:>6.3}  [{:.3}, {:.3}]\n",
                r.name, r.auc, r.ci_lower, r.ci_upper
            ));
        }
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Rater agreement, model-vs-expert AUCs and bootstrap intervals in one pass.
///
/// Statistics per resample: each expert's one-vs-rest AUC, their mean, the
/// model's mean AUC over experts, then the model against each expert. All
/// share the same resampled images.
pub fn evaluate(
    scores: &ScoreMatrix,
    raters: &RaterMatrix,
    label_names: &[String],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (r, n, k) = (raters.raters(), raters.images(), raters.labels());
    if scores.rows() != n || scores.cols() != k || label_names.len() != k {
        return Err(Error::dim(format!(
            "scores {}x{}, ratings {r}x{n}x{k}, {} label names",
            scores.rows(),
            scores.cols(),
            label_names.len()
        )));
    }
    let consensus_rows = r >= 2;
    if !consensus_rows && !opts.allow_single_rater {
        return Err(Error::Protocol(
            "one rater cannot be scored against the others; set allow_single_rater to report the model only".into(),
        ));
    }
    let truths: Vec<_> = (0..r).map(|e| raters.rater(e)).collect();
    let consensus: Vec<ScoreMatrix> = if consensus_rows {
        (0..r).map(|e| raters.consensus_excluding(e)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mode = opts.mode;
    let metric = |rows: &[usize]| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(2 * r + 2);
        if consensus_rows {
            let experts = (0..r)
                .map(|e| mode.score_rows(&consensus[e], &truths[e], rows))
                .collect::<Result<Vec<f64>>>()?;
            let m = mean(&experts);
            out.extend(experts);
            out.push(m);
        }
        let model = (0..r)
            .map(|e| mode.score_rows(scores, &truths[e], rows))
            .collect::<Result<Vec<f64>>>()?;
        out.push(mean(&model));
        out.extend(model);
        Ok(out)
    };
    let cis = bootstrap_many(n, metric, &opts.bootstrap)?;

    let row = |name: String, i: usize| EvalRow {
        name,
        auc: cis[i].point,
        ci_lower: cis[i].lower,
        ci_upper: cis[i].upper,
    };
    let mut rows = Vec::new();
    let mut at = 0;
    if consensus_rows {
        for e in 0..r {
            rows.push(row(format!("Expert {}", e + 1), e));
        }
        rows.push(row("Expert Mean".into(), r));
        at = r + 1;
    }
    rows.push(row("Model".into(), at));
    let model_vs_expert = (0..r)
        .map(|e| row(format!("Model vs Expert {}", e + 1), at + 1 + e))
        .collect();

    let all: Vec<usize> = (0..n).collect();
    let model_labels = per_label_mean(k, &truths, &all, |_| scores)?;
    let expert_labels = if consensus_rows {
        per_label_mean(k, &truths, &all, |e| &consensus[e])?
    } else {
        vec![None; k]
    };
    let labels = label_names
        .iter()
        .zip(expert_labels.into_iter().zip(model_labels))
        .map(|(name, (expert_auc, model_auc))| LabelDetail {
            name: name.clone(),
            expert_auc,
            model_auc,
        })
        .collect();

    Ok(EvalReport {
        mode,
        images: n,
        raters: r,
        rows,
        model_vs_expert,
        labels,
        resamples: opts.bootstrap.resamples,
        level: opts.bootstrap.level,
        seed: opts.bootstrap.seed,
        redraws: cis[0].redraws,
    })
}

fn per_label_mean<'a>(
    k: usize,
    truths: &[BinaryMatrix],
    rows: &[usize],
    score_for: impl Fn(usize) -> &'a ScoreMatrix,
) -> Result<Vec<Option<f64>>> {
    let mut sums = vec![(0.0, 0usize); k];
    for (e, truth) in truths.iter().enumerate() {
        let detail = match macro_auc_rows(score_for(e), truth, rows) {
            Ok(d) => d.per_label,
            Err(Error::UndefinedAuc(_)) => continue,
            Err(err) => return Err(err),
        };
        for (s, v) in sums.iter_mut().zip(detail) {
            if let Some(v) = v {
                s.0 += v;
                s.1 += 1;
            }
        }
    }
    Ok(sums.into_iter().map(|(s, c)| (c > 0).then(|| s / c as f64)).collect())
}
