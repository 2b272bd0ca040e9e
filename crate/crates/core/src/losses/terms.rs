//! Smoothness and prior terms, each with its gradient.

use nalgebra::Vector3;

use crate::body::params::BodyParams;
use crate::error::{Error, Result};

pub(crate) fn need(k: usize, needed: usize) -> Result<()> {
    if k < needed {
        return Err(Error::WindowTooShort { needed, got: k });
    }
    Ok(())
}

/// Mean squared second difference of a vector sequence with the adjoint
/// accumulated into `grad` (scaled by `weight`).
pub(crate) fn second_difference<const D: usize>(
    xs: &[[f64; D]],
    weight: f64,
    grad: Option<&mut [[f64; D]]>,
) -> f64 {
    let k = xs.len();
    let norm = (k - 2) as f64;
    let mut total = 0.0;
    let mut g = grad;
    for i in 0..k - 2 {
        let mut acc = [0.0; D];
        for d in 0..D {
            acc[d] = xs[i + 2][d] - 2.0 * xs[i + 1][d] + xs[i][d];
            total += acc[d] * acc[d];
        }
        if let Some(g) = g.as_deref_mut() {
            let s = 2.0 * weight / norm;
            for d in 0..D {
                g[i][d] += s * acc[d];
                g[i + 1][d] -= 2.0 * s * acc[d];
                g[i + 2][d] += s * acc[d];
            }
        }
    }
    total / norm
}

/// [`second_difference`] for rows of arbitrary length.
pub(crate) fn second_difference_rows(xs: &[Vec<f64>], weight: f64, grad: Option<&mut [Vec<f64>]>) -> f64 {
    let k = xs.len();
    let norm = (k - 2) as f64;
    let mut total = 0.0;
    let mut g = grad;
    for i in 0..k - 2 {
        for d in 0..xs[i].len() {
            let acc = xs[i + 2][d] - 2.0 * xs[i + 1][d] + xs[i][d];
            total += acc * acc;
            if let Some(g) = g.as_deref_mut() {
                let s = 2.0 * weight / norm * acc;
                g[i][d] += s;
                g[i + 1][d] -= 2.0 * s;
                g[i + 2][d] += s;
            }
        }
    }
    total / norm
}

pub(crate) fn trans_term(params: &[BodyParams], weight: f64, grad: Option<&mut [Vector3<f64>]>) -> Result<f64> {
    need(params.len(), 3)?;
    let xs: Vec<[f64; 3]> = params.iter().map(|p| p.trans.into()).collect();
    let mut g = vec![[0.0; 3]; xs.len()];
    let value = second_difference(&xs, weight, grad.is_some().then_some(&mut g[..]));
    if let Some(out) = grad {
        for (o, gi) in out.iter_mut().zip(&g) {
            *o += Vector3::from(*gi);
        }
    }
    Ok(value)
}

/// First-difference penalty on the pelvis orientation vector, or on every
/// joint's axis-angle when `all_joints` is set.
pub(crate) fn orit_term(
    params: &[BodyParams],
    all_joints: bool,
    weight: f64,
    grad: Option<&mut [Vec<Vector3<f64>>]>,
) -> Result<f64> {
    let k = params.len();
    need(k, 2)?;
    let joints = if all_joints { params[0].theta.len() } else { 1 };
    let norm = (k - 1) as f64;
    let mut total = 0.0;
    let mut g = grad;
    for i in 0..k - 1 {
        for j in 0..joints {
            let d = params[i + 1].theta[j] - params[i].theta[j];
            total += d.norm_squared();
            if let Some(g) = g.as_deref_mut() {
                let s = d * (2.0 * weight / norm);
                g[i + 1][j] += s;
                g[i][j] -= s;
            }
        }
    }
    Ok(total / norm)
}

pub(crate) fn prior_term(
    params: &[BodyParams],
    init: &[Vec<Vector3<f64>>],
    weight: f64,
    grad: Option<&mut [Vec<Vector3<f64>>]>,
) -> Result<f64> {
    if init.len() != params.len() {
        return Err(Error::Dimension(format!("{} initial poses for {} frames", init.len(), params.len())));
    }
    let k = params.len().max(1) as f64;
    let mut total = 0.0;
    let mut g = grad;
    for (i, (p, p0)) in params.iter().zip(init).enumerate() {
        if p.theta.len() != p0.len() {
            return Err(Error::Dimension("initial pose joint count differs".into()));
        }
        for (j, (a, b)) in p.theta.iter().zip(p0).enumerate() {
            let d = a - b;
            total += d.norm_squared();
            if let Some(g) = g.as_deref_mut() {
                g[i][j] += d * (2.0 * weight / k);
            }
        }
    }
    Ok(total / k)
}
