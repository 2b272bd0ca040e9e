//! Perspective-n-point: linear DLT initialization followed by
//! Levenberg-Marquardt refinement of the reprojection error.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{Extrinsic, Intrinsics, MIN_DEPTH};
use crate::body::rotation::rodrigues_with_jacobian;
use crate::error::{Error, Result};

pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnpResult {
    pub extrinsic: Extrinsic,
    /// Mean reprojection error, pixels.
    pub mean_reprojection_error: f64,
    /// Root-mean-square reprojection error, pixels.
    pub rmse: f64,
    pub iterations: usize,
}

fn reprojection(world: &[Vector3<f64>], pixels: &[Vector2<f64>], k: &Intrinsics, e: &Extrinsic) -> (f64, f64) {
    let r = e.rotation_matrix();
    let mut sum = 0.0;
    let mut sq = 0.0;
    for (x, u) in world.iter().zip(pixels) {
        let d = match k.project_camera(&(r * x + e.translation)) {
            Some(p) => (p - u).norm(),
            None => f64::INFINITY,
        };
        sum += d;
        sq += d * d;
    }
    let n = world.len() as f64;
    (sum / n, (sq / n).sqrt())
}

/// Camera pose from 3D-2D correspondences.
pub fn solve_pnp(world: &[Vector3<f64>], pixels: &[Vector2<f64>], k: &Intrinsics) -> Result<PnpResult> {
    k.validate()?;
    if world.len() != pixels.len() {
        return Err(Error::Dimension(format!("{} world points but {} pixels", world.len(), pixels.len())));
    }
    if world.len() < MIN_CORRESPONDENCES {
        return Err(Error::TooFewPoints { needed: MIN_CORRESPONDENCES, got: world.len() });
    }
    check_non_coplanar(world)?;
    let init = dlt(world, pixels, k)?;
    let (ext, iterations) = refine(world, pixels, k, init);
    let (mean, rmse) = reprojection(world, pixels, k, &ext);
    Ok(PnpResult { extrinsic: ext.canonical(), mean_reprojection_error: mean, rmse, iterations })
}

fn centroid(pts: &[Vector3<f64>]) -> Vector3<f64> {
    pts.iter().sum::<Vector3<f64>>() / pts.len() as f64
}

fn check_non_coplanar(world: &[Vector3<f64>]) -> Result<()> {
    let c = centroid(world);
    let cov = world.iter().fold(Matrix3::zeros(), |acc, p| acc + (p - c) * (p - c).transpose());
    let ev = cov.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    if !(hi > 0.0) || lo <= 1e-10 * hi {
        return Err(Error::Degenerate("correspondences are coplanar or collinear".into()));
    }
    Ok(())
}

/// Linear estimate on normalized, conditioned coordinates.
fn dlt(world: &[Vector3<f64>], pixels: &[Vector2<f64>], k: &Intrinsics) -> Result<Extrinsic> {
    let n = world.len();
    let c = centroid(world);
    let scale = (world.iter().map(|p| (p - c).norm()).sum::<f64>() / n as f64).max(1e-12);
    let s = 3f64.sqrt() / scale;
    let norm: Vec<Vector3<f64>> = world.iter().map(|p| (p - c) * s).collect();
    let rays: Vec<Vector2<f64>> =
        pixels.iter().map(|u| Vector2::new((u.x - k.cx) / k.fx, (u.y - k.cy) / k.fy)).collect();

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for i in 0..n {
        let x = norm[i];
        let (u, v) = (rays[i].x, rays[i].y);
        let xh = [x.x, x.y, x.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = xh[j];
            a[(2 * i, 8 + j)] = -u * xh[j];
            a[(2 * i + 1, 4 + j)] = xh[j];
            a[(2 * i + 1, 8 + j)] = -v * xh[j];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let imin = eig.eigenvalues.imin();
    let p = eig.eigenvectors.column(imin);
    let mut m = Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]);
    let mut t = Vector3::new(p[3], p[7], p[11]);
    // Fix the overall sign so points lie in front of the camera.
    let in_front = norm.iter().filter(|x| (m * *x + t).z > 0.0).count();
    if 2 * in_front < n {
        m = -m;
        t = -t;
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        // Reflection: the sign fix above failed to make det(M) positive.
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * vt;
    }
    let sigma = svd.singular_values.mean();
    if !(sigma > 0.0) {
        return Err(Error::Degenerate("DLT solution is singular".into()));
    }
    // Undo the world normalization: x ∝ M s (X − c) + t, so the metric
    // translation is t / (s σ) − R c.
    let t = t / (sigma * s);
    Ok(Extrinsic::from_matrix(&r, &(t - r * c)))
}

fn residuals(
    world: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    k: &Intrinsics,
    e: &Extrinsic,
    want_jac: bool,
) -> Option<(f64, Vector6<f64>, Matrix6<f64>)> {
    let (r, jr) = rodrigues_with_jacobian(&e.rotation);
    let mut cost = 0.0;
    let mut g = Vector6::zeros();
    let mut h = Matrix6::zeros();
    for (x, u) in world.iter().zip(pixels) {
        let c = r * x + e.translation;
        if c.z <= MIN_DEPTH {
            return None;
        }
        let iz = 1.0 / c.z;
        let p = Vector2::new(k.fx * c.x * iz + k.cx, k.fy * c.y * iz + k.cy);
        let res = p - u;
        cost += res.norm_squared();
        if want_jac {
            let dp = nalgebra::Matrix2x3::new(k.fx * iz, 0.0, -k.fx * c.x * iz * iz, 0.0, k.fy * iz, -k.fy * c.y * iz * iz);
            let mut j = nalgebra::SMatrix::<f64, 2, 6>::zeros();
            for i in 0..3 {
                j.set_column(i, &(dp * (jr[i] * x)));
            }
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dp);
            g += j.transpose() * res;
            h += j.transpose() * j;
        }
    }
    Some((cost, g, h))
}

fn refine(world: &[Vector3<f64>], pixels: &[Vector2<f64>], k: &Intrinsics, init: Extrinsic) -> (Extrinsic, usize) {
    let Some((mut cost, mut g, mut h)) = residuals(world, pixels, k, &init, true) else {
        return (init, 0);
    };
    let mut x = init;
    let mut mu = 1e-3 * h.diagonal().max();
    let mut it = 0;
    while it < 100 {
        it += 1;
        if g.amax() < 1e-12 * (1.0 + cost) {
            break;
        }
        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += mu * h[(i, i)].max(1e-12);
        }
        let Some(ch) = damped.cholesky() else {
            mu *= 10.0;
            continue;
        };
        let d = -ch.solve(&g);
        let cand = Extrinsic {
            rotation: x.rotation + Vector3::new(d[0], d[1], d[2]),
            translation: x.translation + Vector3::new(d[3], d[4], d[5]),
        };
        match residuals(world, pixels, k, &cand, true) {
            Some((c2, g2, h2)) if c2 < cost => {
                let rel = (cost - c2) / cost.max(1e-300);
                x = cand;
                cost = c2;
                g = g2;
                h = h2;
                mu = (mu * 0.3).max(1e-12);
                if rel < 1e-15 {
                    break;
                }
            }
            _ => {
                mu *= 10.0;
                if mu > 1e12 {
                    break;
                }
            }
        }
    }
    // Re-express via the matrix so the axis-angle stays well conditioned.
    (Extrinsic::from_matrix(&x.rotation_matrix(), &x.translation), it)
}
