use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { resamples: 10_000, level: 0.95, seed: 0 }
    }
}

impl BootstrapOptions {
    pub fn validate(&self) -> Result<()> {
        if self.resamples == 0 {
            return Err(Error::config("bootstrap needs at least one resample"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config(format!("confidence level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub resamples: usize,
    /// Resamples thrown away because the statistic was undefined on them.
    pub redraws: usize,
}

impl BootstrapCi {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Redraw cap for a single resample before the data is declared degenerate.
const MAX_REDRAWS_PER_RESAMPLE: usize = 1_000;

/// Percentile bootstrap of several statistics over the same resamples.
///
/// `metric` receives row indices drawn with replacement from `0..n`. A
/// resample on which it returns [`Error::UndefinedAuc`] is redrawn from the
/// same substream. Resample `b` always uses substream `b`, so results do not
/// depend on thread scheduling.
pub fn bootstrap_many<F>(n: usize, metric: F, opts: &BootstrapOptions) -> Result<Vec<BootstrapCi>>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    if n == 0 {
        return Err(Error::Protocol("bootstrap over an empty sample".into()));
    }
    opts.validate()?;
    let all: Vec<usize> = (0..n).collect();
    let point = metric(&all)?;

    let draws: Vec<(Vec<f64>, usize)> = (0..opts.resamples)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(opts.seed, b as u64, 0);
            let mut rows = vec![0usize; n];
            let mut redraws = 0;
            loop {
                for slot in rows.iter_mut() {
                    *slot = r.gen_range(0..n);
                }
                match metric(&rows) {
                    Ok(v) => return Ok((v, redraws)),
                    Err(Error::UndefinedAuc(_)) if redraws < MAX_REDRAWS_PER_RESAMPLE => redraws += 1,
                    Err(Error::UndefinedAuc(msg)) => {
                        return Err(Error::Protocol(format!(
                            "statistic undefined on {redraws} consecutive resamples: {msg}"
                        )))
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect::<Result<_>>()?;

    let redraws: usize = draws.iter().map(|d| d.1).sum();
    if redraws > opts.resamples {
        return Err(Error::Protocol(format!(
            "statistic undefined on {redraws} of {} resamples; test set too degenerate",
            redraws + opts.resamples
        )));
    }
    let alpha = (1.0 - opts.level) / 2.0;
    (0..point.len())
        .map(|s| {
            let mut vals: Vec<f64> = draws.iter().map(|d| d.0[s]).collect();
            if vals.iter().any(|v| v.is_nan()) {
                return Err(Error::NonFinite("bootstrap statistic".into()));
            }
            vals.sort_unstable_by(f64::total_cmp);
            Ok(BootstrapCi {
                point: point[s],
                lower: percentile(&vals, alpha),
                upper: percentile(&vals, 1.0 - alpha),
                resamples: opts.resamples,
                redraws,
            })
        })
        .collect()
}

/// Percentile bootstrap interval of one statistic.
pub fn bootstrap_ci<F>(n: usize, metric: F, opts: &BootstrapOptions) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    let mut v = bootstrap_many(n, |rows| metric(rows).map(|m| vec![m]), opts)?;
    Ok(v.remove(0))
}
