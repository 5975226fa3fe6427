//! Forward kernels shared by the autodiff graph and inference paths.

use crate::error::{Error, Result};
use crate::tensor::{LabelVector, Tensor};

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::dim(format!("{what} must be rank 3 [C,H,W], got {s:?}"))),
    }
}

pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub(crate) fn new(
        input: &Tensor,
        kernels: &Tensor,
        bias_len: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (c, h, w) = dims3(input, "conv2d input")?;
        let (f, kc, kh, kw) = match kernels.shape() {
            &[f, kc, kh, kw] => (f, kc, kh, kw),
            s => return Err(Error::dim(format!("conv2d kernels must be [F,C,kh,kw], got {s:?}"))),
        };
        if kc != c {
            return Err(Error::dim(format!(
                "conv2d: input has {c} channels but kernels expect {kc}"
            )));
        }
        if bias_len != f {
            return Err(Error::dim(format!(
                "conv2d: {f} kernels but bias of length {bias_len}"
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d: stride must be positive"));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::dim(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        Ok(ConvGeom { c, h, w, f, kh, kw, oh, ow, stride, padding })
    }

    /// Output columns `ox` whose input column `ox*stride + kx - padding` is in range.
    #[inline]
    fn valid_range(&self, k: usize, out: usize, len: usize) -> (usize, usize) {
        // need 0 <= o*s + k - p < len
        let s = self.stride;
        let p = self.padding;
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if len + p > k { ((len + p - k - 1) / s + 1).min(out) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// Cross-correlation of a `[C,H,W]` input with `[F,C,kh,kw]` kernels.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(input, kernels, bias.len(), stride, padding)?;
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0; g.f * g.oh * g.ow];
    for f in 0..g.f {
        let plane = &mut out[f * g.oh * g.ow..(f + 1) * g.oh * g.ow];
        plane.fill(bias[f]);
        for c in 0..g.c {
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.oh, g.h);
                for kx in 0..g.kw {
                    let wv = k[((f * g.c + c) * g.kh + ky) * g.kw + kx];
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.ow, g.w);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let row = &x[(c * g.h + iy) * g.w..];
                        let orow = &mut plane[oy * g.ow..(oy + 1) * g.ow];
                        for ox in ox_lo..ox_hi {
                            orow[ox] += wv * row[ox * g.stride + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.f, g.oh, g.ow], out)
}

/// Returns `(d_input, d_kernels, d_bias)`.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = ConvGeom::new(input, kernels, kernels.shape()[0], stride, padding)?;
    let x = input.data();
    let k = kernels.data();
    let go = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; g.f];
    for f in 0..g.f {
        let gplane = &go[f * g.oh * g.ow..(f + 1) * g.oh * g.ow];
        db[f] = gplane.iter().sum();
        for c in 0..g.c {
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.oh, g.h);
                for kx in 0..g.kw {
                    let kidx = ((f * g.c + c) * g.kh + ky) * g.kw + kx;
                    let wv = k[kidx];
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.ow, g.w);
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let base = (c * g.h + iy) * g.w;
                        let grow = &gplane[oy * g.ow..(oy + 1) * g.ow];
                        for (ox, &go) in grow.iter().enumerate().take(ox_hi).skip(ox_lo) {
                            let ix = base + ox * g.stride + kx - g.padding;
                            acc += go * x[ix];
                            dx[ix] += go * wv;
                        }
                    }
                    dk[kidx] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(kernels.shape().to_vec(), dk)?,
        Tensor::new(vec![g.f], db)?,
    ))
}

/// Windowed max over each channel. Also returns, per output cell, the flat
/// input index of the first (row-major) maximal cell.
pub fn max_pool2d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = dims3(input, "max_pool2d input")?;
    if window == 0 || stride == 0 {
        return Err(Error::dim("max_pool2d: window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(Error::dim(format!(
            "max_pool2d: window {window} larger than spatial dims {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (ch * h + oy * stride) * w + ox * stride;
                let mut best = x[best_idx];
                for dy in 0..window {
                    let row = (ch * h + oy * stride + dy) * w + ox * stride;
                    for dx in 0..window {
                        let v = x[row + dx];
                        if v > best {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, arg))
}

/// `weight · input + bias` for a `[m,n]` weight and length-`n` input.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (m, n) = match weight.shape() {
        &[m, n] => (m, n),
        s => return Err(Error::dim(format!("dense weight must be [m,n], got {s:?}"))),
    };
    if input.len() != n {
        return Err(Error::dim(format!(
            "dense: input length {} does not match weight columns {n}",
            input.len()
        )));
    }
    if bias.len() != m {
        return Err(Error::dim(format!(
            "dense: bias length {} does not match weight rows {m}",
            bias.len()
        )));
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(n)
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    Tensor::new(vec![m], out)
}

#[inline]
pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(z: &Tensor) -> Tensor {
    let data = z.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::new(z.shape().to_vec(), data).expect("same shape")
}

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]` computed directly from the logit.
#[inline]
pub(crate) fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Sum over labels of the per-label binary cross-entropy, from logits.
pub fn bce_sum_loss(logits: &[f64], target: &LabelVector) -> Result<f64> {
    if logits.len() != target.len() {
        return Err(Error::dim(format!(
            "bce_sum_loss: {} logits but {} targets",
            logits.len(),
            target.len()
        )));
    }
    Ok(logits
        .iter()
        .zip(target.entries())
        .map(|(&z, &y)| bce_logit(z, f64::from(y)))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_keeps_input() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &k, &[0.0], 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn full_window_sum() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &k, &[0.0], 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &k, &[0.0], 1, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_output_geometry() {
        let x = Tensor::zeros(&[1, 7, 9]);
        let k = Tensor::zeros(&[2, 1, 3, 3]);
        let y = conv2d(&x, &k, &[0.0, 0.0], 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 5]);
    }

    #[test]
    fn pool_basics() {
        let x = Tensor::full(&[2, 4, 4], 3.5);
        let (y, _) = max_pool2d(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.5));
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        assert!(matches!(max_pool2d(&x, 3, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn pool_ties_pick_first_cell() {
        let x = Tensor::new(vec![1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, arg) = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn dense_identity_and_bias() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense(&x, &eye, &[0.0; 3]).unwrap(), x);
        let zero = Tensor::zeros(&[2, 3]);
        assert_eq!(dense(&x, &zero, &[0.5, -1.5]).unwrap().data(), &[0.5, -1.5]);
        assert!(dense(&x, &Tensor::zeros(&[2, 4]), &[0.0; 2]).is_err());
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!((sigmoid_scalar(3f64.ln()) - 0.75).abs() < 1e-15);
        for z in [-700.0, -30.0, -1.0, 0.3, 12.0, 700.0] {
            let s = sigmoid_scalar(z);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
            assert!((s + sigmoid_scalar(-z) - 1.0).abs() <= 1e-12);
        }
        let mut prev = 0.0;
        for z in [1.0, 5.0, 10.0, 20.0, 40.0] {
            let s = sigmoid_scalar(z);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn bce_reference_values() {
        let y = LabelVector::new(vec![1, 0, 1, 1, 0]).unwrap();
        let l = bce_sum_loss(&[0.0; 5], &y).unwrap();
        assert!((l - 5.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 3.4657).abs() < 1e-4);

        let one = LabelVector::new(vec![1]).unwrap();
        let l = bce_sum_loss(&[3f64.ln()], &one).unwrap();
        assert!((l + 0.75f64.ln()).abs() < 1e-15);
        assert!((l - 0.28768).abs() < 1e-5);

        let y = LabelVector::new(vec![1, 0]).unwrap();
        let l = bce_sum_loss(&[40.0, -40.0], &y).unwrap();
        assert!((0.0..1e-15).contains(&l));
    }

    #[test]
    fn non_binary_target_rejected() {
        assert!(matches!(
            LabelVector::from_f64(&[1.0, 0.5]),
            Err(Error::Validation(_))
        ));
        assert!(LabelVector::new(vec![0, 2]).is_err());
    }
}
