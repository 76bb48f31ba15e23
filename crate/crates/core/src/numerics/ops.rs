//! Layer primitives and their backward passes.
//!
//! Backward functions take the upstream gradient `d_out` and return the
//! gradient with respect to the layer input; parameter gradients are
//! accumulated (`+=`) into the supplied [`ParamTensor`]s so that shared
//! parameters collect contributions from every use.

use super::{Matrix, ParamTensor, RngState};
use crate::error::{Error, Result};

/// Lower clamp for probabilities fed to a logarithm.
pub const PROB_EPS: f64 = 1e-12;

/// Variance floor used by [`layer_normalize`].
pub const VARIANCE_FLOOR: f64 = 1e-5;

/// `x · w + b`, with `b` broadcast over rows.
pub fn linear_forward(x: &Matrix, w: &ParamTensor, b: &ParamTensor) -> Result<Matrix> {
    if b.shape() != (1, w.value.cols()) {
        return Err(Error::Shape {
            op: "linear_forward(bias)",
            left: w.shape(),
            right: b.shape(),
        });
    }
    if x.cols() != w.value.rows() {
        return Err(Error::Shape {
            op: "linear_forward",
            left: x.shape(),
            right: w.shape(),
        });
    }
    let mut out = x.matmul(&w.value)?;
    let bias = b.value.as_slice();
    for r in 0..out.rows() {
        out.row_mut(r)
            .iter_mut()
            .zip(bias)
            .for_each(|(o, b)| *o += b);
    }
    Ok(out)
}

/// Accumulates `∂L/∂w` and `∂L/∂b`, returns `∂L/∂x`.
pub fn linear_backward(
    x: &Matrix,
    w: &mut ParamTensor,
    b: &mut ParamTensor,
    d_out: &Matrix,
) -> Result<Matrix> {
    let dw = x.t_matmul(d_out)?;
    w.grad.add_assign(&dw)?;
    let db = b.grad.as_mut_slice();
    for row in d_out.iter_rows() {
        db.iter_mut().zip(row).for_each(|(g, d)| *g += d);
    }
    d_out.matmul_t(&w.value)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Passes gradient where the pre-activation was strictly positive.
pub fn relu_backward(pre: &Matrix, d_out: &Matrix) -> Matrix {
    let data = pre
        .as_slice()
        .iter()
        .zip(d_out.as_slice())
        .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
        .collect();
    Matrix::from_vec(pre.rows(), pre.cols(), data).expect("same shape")
}

/// Logistic function, branching on sign so neither side overflows.
#[inline]
pub fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a probability against a {0,1} label.
pub fn bce_loss(p: f64, label: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -label * p.ln() - (1.0 - label) * (1.0 - p).ln()
}

/// Binary cross-entropy of `sigmoid(logit)`, computed without forming the
/// probability: `max(z,0) − z·y + ln(1 + e^{−|z|})`.
#[inline]
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// `∂/∂z` of [`bce_with_logit`].
#[inline]
pub fn bce_with_logit_grad(logit: f64, label: f64) -> f64 {
    sigmoid_stable(logit) - label
}

/// Samples an inverted-dropout mask: each entry is 0 with probability `p`,
/// otherwise `1 / (1 − p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut RngState) -> Result<Matrix> {
    check_dropout_p(p)?;
    if p == 0.0 {
        return Ok(Matrix::filled(rows, cols, 1.0));
    }
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Inverted dropout; the identity outside training.
pub fn dropout(x: &Matrix, p: f64, rng: &mut RngState, training: bool) -> Result<Matrix> {
    check_dropout_p(p)?;
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.rows(), x.cols(), p, rng)?;
    x.hadamard(&mask)
}

fn check_dropout_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability {p} not in [0, 1)"
        )));
    }
    Ok(())
}

/// Values kept from a layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    floored: Vec<bool>,
}

/// Per-row standardization followed by a learned per-feature gain and shift.
pub fn layer_normalize(x: &Matrix, gain: &ParamTensor, shift: &ParamTensor) -> Result<Matrix> {
    layer_norm_forward(x, gain, shift).map(|(out, _)| out)
}

pub fn layer_norm_forward(
    x: &Matrix,
    gain: &ParamTensor,
    shift: &ParamTensor,
) -> Result<(Matrix, LayerNormCache)> {
    let d = x.cols();
    for p in [gain, shift] {
        if p.shape() != (1, d) {
            return Err(Error::Shape {
                op: "layer_normalize",
                left: x.shape(),
                right: p.shape(),
            });
        }
    }
    let g = gain.value.as_slice();
    let s = shift.value.as_slice();
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    let mut floored = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is_floored = var <= VARIANCE_FLOOR;
        let inv = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
        let n_row = normalized.row_mut(r);
        for (n, v) in n_row.iter_mut().zip(row) {
            *n = (v - mean) * inv;
        }
        let o_row = out.row_mut(r);
        for k in 0..d {
            o_row[k] = g[k] * normalized.get(r, k) + s[k];
        }
        inv_std.push(inv);
        floored.push(is_floored);
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
            floored,
        },
    ))
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &mut ParamTensor,
    shift: &mut ParamTensor,
    d_out: &Matrix,
) -> Matrix {
    let d = d_out.cols();
    let n = d as f64;
    let mut dx = Matrix::zeros(d_out.rows(), d);
    let g = gain.value.as_slice().to_vec();
    for r in 0..d_out.rows() {
        let dy = d_out.row(r);
        let xhat = cache.normalized.row(r);
        {
            let dg = gain.grad.as_mut_slice();
            for k in 0..d {
                dg[k] += dy[k] * xhat[k];
            }
        }
        {
            let ds = shift.grad.as_mut_slice();
            for k in 0..d {
                ds[k] += dy[k];
            }
        }
        let dxhat: Vec<f64> = (0..d).map(|k| dy[k] * g[k]).collect();
        let sum_dxhat: f64 = dxhat.iter().sum();
        let inv = cache.inv_std[r];
        let dst = dx.row_mut(r);
        if cache.floored[r] {
            // Constant denominator: only the mean subtraction is differentiated.
            for k in 0..d {
                dst[k] = inv * (dxhat[k] - sum_dxhat / n);
            }
        } else {
            let dot: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
            for k in 0..d {
                dst[k] = inv / n * (n * dxhat[k] - sum_dxhat - xhat[k] * dot);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(rows: &[&[f64]]) -> ParamTensor {
        ParamTensor::new(Matrix::from_rows(rows).unwrap())
    }

    #[test]
    fn linear_examples() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let w = pt(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = pt(&[&[0.0, 0.0]]);
        assert_eq!(linear_forward(&x, &w, &b).unwrap().as_slice(), &[1.0, 2.0]);

        let x0 = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let w = pt(&[&[0.3, -7.0], &[2.5, 1.0]]);
        let b = pt(&[&[3.0, -1.0]]);
        assert_eq!(
            linear_forward(&x0, &w, &b).unwrap().as_slice(),
            &[3.0, -1.0]
        );

        let x = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let w = pt(&[&[2.0, 0.0], &[0.0, 3.0]]);
        let b = pt(&[&[1.0, 1.0]]);
        assert_eq!(linear_forward(&x, &w, &b).unwrap().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn linear_rejects_bad_shapes() {
        let x = Matrix::zeros(1, 3);
        let w = ParamTensor::zeros(2, 2);
        let b = ParamTensor::zeros(1, 2);
        let err = linear_forward(&x, &w, &b).unwrap_err().to_string();
        assert!(err.contains("(1, 3)") && err.contains("(2, 2)"), "{err}");
        let bad_b = ParamTensor::zeros(1, 3);
        assert!(linear_forward(&Matrix::zeros(1, 2), &w, &bad_b).is_err());
    }

    #[test]
    fn relu_examples() {
        let x = Matrix::from_rows(&[[-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(relu(&x).as_slice(), &[0.0, 0.0, 2.0]);
        let neg = Matrix::from_rows(&[[-1.0, -0.5], [-3.0, -2.0]]).unwrap();
        assert!(relu(&neg).as_slice().iter().all(|&v| v == 0.0));

        let pre = Matrix::from_rows(&[[3.0, -3.0, 0.0]]).unwrap();
        let up = Matrix::filled(1, 3, 1.0);
        assert_eq!(relu_backward(&pre, &up).as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_stable(0.0), 0.5);
        // 1 / (1 + e^2), evaluated to 20 digits: 0.11920292202211755594
        assert!((sigmoid_stable(-2.0) - 0.119_202_922_022_117_56).abs() < 1e-16);
        for x in [0.1, 1.0, 13.7, 36.0, 49.9] {
            assert!((sigmoid_stable(x) + sigmoid_stable(-x) - 1.0).abs() <= 1e-15);
        }
        assert!(sigmoid_stable(700.0).is_finite() && sigmoid_stable(-700.0) >= 0.0);
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(1.0 - PROB_EPS, 1.0) < 1e-11);
        // -ln(1 - sigma(-2)) = ln(1 + e^-2) = 0.12692801104297263
        assert!((bce_loss(sigmoid_stable(-2.0), 0.0) - 0.126_928_011_042_972_5).abs() < 1e-12);
        assert!((bce_loss(0.11920, 0.0) - 0.126_928).abs() < 1e-5);
        assert_eq!(bce_with_logit(0.0, 0.0), std::f64::consts::LN_2);
        assert!((bce_with_logit(-2.0, 0.0) - bce_loss(sigmoid_stable(-2.0), 0.0)).abs() < 1e-15);
        assert!(bce_with_logit(800.0, 1.0).abs() < 1e-300);
        assert!((bce_with_logit(800.0, 0.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn dropout_modes() {
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0]]).unwrap();
        let mut rng = RngState::new(1);
        assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(dropout(&x, 0.2, &mut rng, false).unwrap(), x);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = Matrix::filled(1, 100_000, 1.0);
        let mut rng = RngState::new(42);
        let y = dropout(&x, 0.2, &mut rng, true).unwrap();
        let mean = y.as_slice().iter().sum::<f64>() / y.len() as f64;
        // std of the mean is 0.5 / sqrt(1e5) ≈ 0.0016, so 1% is > 6 sigma.
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(y.as_slice().iter().all(|&v| v == 0.0 || v == 1.25));
    }

    #[test]
    fn dropout_masks_reproducible() {
        let a = dropout_mask(4, 16, 0.3, &mut RngState::new(5)).unwrap();
        let b = dropout_mask(4, 16, 0.3, &mut RngState::new(5)).unwrap();
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn layer_norm_examples() {
        let gain = ParamTensor::new(Matrix::filled(1, 3, 1.0));
        let shift = ParamTensor::zeros(1, 3);
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let y = layer_normalize(&x, &gain, &shift).unwrap();
        let mean = y.as_slice().iter().sum::<f64>() / 3.0;
        let var = y.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);

        let c = Matrix::from_rows(&[[5.0, 5.0, 5.0]]).unwrap();
        let y = layer_normalize(&c, &gain, &shift).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0, 0.0]);

        let zero_gain = ParamTensor::zeros(1, 3);
        let s = ParamTensor::new(Matrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap());
        let y = layer_normalize(&x, &zero_gain, &s).unwrap();
        assert_eq!(y.as_slice(), &[0.5, -1.0, 2.0]);
    }
}
