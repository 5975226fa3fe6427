//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per parameter tensor; `None` checks every coordinate.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a non-differentiable point.
    pub skipped: usize,
    /// `(tensor index, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against `(L(θ+h) - L(θ-h)) / 2h` coordinate by coordinate.
///
/// `loss` is evaluated on perturbed copies of `params`.
pub fn finite_diff_gradcheck<F>(
    loss: F,
    params: &[Tensor],
    analytic: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    finite_diff_gradcheck_piecewise(loss, |_| Ok(()), params, analytic, opts)
}

/// Like [`finite_diff_gradcheck`] for piecewise-smooth losses: coordinates where
/// `region` differs between `θ+h` and `θ-h` have no valid central difference
/// and are counted in `skipped` instead of compared.
pub fn finite_diff_gradcheck_piecewise<F, G, R>(
    mut loss: F,
    mut region: G,
    params: &[Tensor],
    analytic: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
    G: FnMut(&[Tensor]) -> Result<R>,
    R: PartialEq,
{
    if !(opts.step > 0.0) {
        return Err(Error::Oracle(format!("step must be positive, got {}", opts.step)));
    }
    if params.len() != analytic.len() {
        return Err(Error::Oracle(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut rng = rng::seeded(opts.seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    for (t, (p, a)) in params.iter().zip(analytic).enumerate() {
        if p.shape() != a.shape() {
            return Err(Error::Oracle(format!(
                "gradient {t} has shape {:?}, parameter {:?}",
                a.shape(),
                p.shape()
            )));
        }
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(m) if m < p.len() => {
                let mut c = sample(&mut rng, p.len(), m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..p.len()).collect(),
        };
        for j in coords {
            let orig = p.data()[j];
            work[t].data_mut()[j] = orig + opts.step;
            let plus = loss(&work)?;
            let plus_region = region(&work)?;
            work[t].data_mut()[j] = orig - opts.step;
            let minus = loss(&work)?;
            let crossed = region(&work)? != plus_region;
            work[t].data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Oracle(format!(
                    "non-finite loss while perturbing tensor {t} coordinate {j}"
                )));
            }
            if crossed {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = relative_error(a.data()[j], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((t, j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn linear_function_is_exact() {
        // L = 3a - 2b + 0.5c
        let coef = [3.0, -2.0, 0.5];
        let params = vec![Tensor::vector(vec![0.3, -1.2, 2.0]).unwrap()];
        let analytic = vec![Tensor::vector(coef.to_vec()).unwrap()];
        let report = finite_diff_gradcheck(
            |p| Ok(p[0].data().iter().zip(&coef).map(|(x, c)| x * c).sum()),
            &params,
            &analytic,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error <= 1e-10, "{report:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let params = vec![Tensor::scalar(1.0)];
        let wrong = vec![Tensor::scalar(3.0)];
        let report = finite_diff_gradcheck(
            |p| Ok(p[0].data()[0].powi(2)),
            &params,
            &wrong,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error > 0.3);
    }

    #[test]
    fn non_finite_loss_is_oracle_error() {
        let params = vec![Tensor::scalar(0.0)];
        let grads = vec![Tensor::scalar(0.0)];
        let err = finite_diff_gradcheck(
            |_| Ok(f64::NAN),
            &params,
            &grads,
            &GradCheckOptions::default(),
        );
        assert!(matches!(err, Err(Error::Oracle(_))));
        let bad_step = GradCheckOptions { step: 0.0, ..Default::default() };
        assert!(finite_diff_gradcheck(|_| Ok(0.0), &params, &grads, &bad_step).is_err());
    }

    #[test]
    fn dense_sigmoid_bce_net() {
        use crate::tensor::LabelVector;
        use rand::Rng;
        let mut r = rng::seeded(11);
        let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..18).map(|_| r.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| r.gen_range(-0.5..0.5)).collect();
        let y = LabelVector::new(vec![1, 0, 1]).unwrap();
        let params = vec![
            Tensor::new(vec![3, 6], w).unwrap(),
            Tensor::vector(b).unwrap(),
        ];
        let eval = |p: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Tensor>)> {
            let mut g = Graph::new();
            let xi = g.leaf(Tensor::vector(x.clone()).unwrap());
            let wi = g.leaf(p[0].clone());
            let bi = g.leaf(p[1].clone());
            let z = g.dense(xi, wi, bi)?;
            let l = g.bce_sum_loss(z, &y)?;
            let v = g.value(l).item()?;
            if !want_grad {
                return Ok((v, vec![]));
            }
            g.backward(l)?;
            Ok((v, vec![g.grad(wi).unwrap().clone(), g.grad(bi).unwrap().clone()]))
        };
        let (_, analytic) = eval(&params, true).unwrap();
        let report = finite_diff_gradcheck(
            |p| eval(p, false).map(|r| r.0),
            &params,
            &analytic,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }
}
