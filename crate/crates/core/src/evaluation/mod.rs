//! ROC AUC, rater-agreement protocols and percentile bootstrap intervals.

mod auc;
mod bootstrap;
mod matrix;
mod protocol;
mod report;

pub use self::auc::{macro_auc, macro_auc_rows, micro_auc_rows, roc_auc, AucMode, LabelAucs};
pub use self::bootstrap::{bootstrap_ci, bootstrap_many, percentile, BootstrapCi, BootstrapOptions};
pub use self::matrix::{BinaryMatrix, RaterMatrix, ScoreMatrix};
pub use self::protocol::{expert_consensus_auc, model_vs_experts_auc, Agreement};
pub use self::report::{evaluate, EvalOptions, EvalReport, EvalRow, LabelDetail};
