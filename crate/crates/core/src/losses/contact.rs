//! Foot stability labels and the scene contact term.

use nalgebra::Vector3;

use crate::body::kinematics::ShapedBody;
use crate::body::params::BodyParams;
use crate::error::{Error, Result};
use crate::scene::SceneMesh;

/// Per-frame, per-foot (left, right) stability from foot vertex speed.
///
/// Frame `i` looks at the displacement between frames `i − 1` and `i`;
/// frame 0 reuses the interval to frame 1.
pub fn detect_stable_feet(
    body: &ShapedBody,
    frames: &[BodyParams],
    rate_hz: f64,
    threshold_mps: f64,
) -> Result<Vec<[bool; 2]>> {
    if frames.len() < 2 {
        return Err(Error::WindowTooShort { needed: 2, got: frames.len() });
    }
    if !(rate_hz > 0.0) {
        return Err(Error::InvalidInput(format!("rate must be positive, got {rate_hz}")));
    }
    let feet: Vec<[Vec<Vector3<f64>>; 2]> = frames
        .iter()
        .map(|p| {
            let pose = body.pose(p)?;
            Ok([0, 1].map(|f| body.foot_vertex_sets[f].iter().map(|&v| body.skin_vertex(&pose, v)).collect()))
        })
        .collect::<Result<_>>()?;
    let speed = |a: &[Vector3<f64>], b: &[Vector3<f64>]| {
        a.iter().zip(b).map(|(x, y)| (y - x).norm()).sum::<f64>() / a.len().max(1) as f64 * rate_hz
    };
    Ok((0..frames.len())
        .map(|i| {
            let (a, b) = if i == 0 { (0, 1) } else { (i - 1, i) };
            [0, 1].map(|f| speed(&feet[a][f], &feet[b][f]) < threshold_mps)
        })
        .collect())
}

/// Contact energy of one foot: mean squared distance of its vertices to the
/// scene, with the gradient with respect to each vertex.
pub(crate) fn foot_contact(
    scene: &SceneMesh,
    verts: &[Vector3<f64>],
    grads: Option<&mut Vec<Vector3<f64>>>,
) -> Result<f64> {
    let n = verts.len().max(1) as f64;
    let mut total = 0.0;
    let mut out = grads;
    for v in verts {
        let c = scene.closest_point(v)?;
        total += c.distance * c.distance;
        if let Some(g) = out.as_deref_mut() {
            g.push((v - c.point) * (2.0 / n));
        }
    }
    Ok(total / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::params::SHAPE_DIM;
    use crate::body::template::{BodyTemplate, TemplateOptions};
    use crate::body::tree::KinematicTree;
    use crate::scene::{make_test_scene, SceneSpec};

    fn body() -> ShapedBody {
        let t = BodyTemplate::procedural(&TemplateOptions::default()).unwrap();
        ShapedBody::new(&t, &KinematicTree::smpl(), &[0.0; SHAPE_DIM]).unwrap()
    }

    #[test]
    fn frozen_is_stable_and_translating_is_not() {
        let b = body();
        let still = vec![BodyParams::zero(); 5];
        assert!(detect_stable_feet(&b, &still, 20.0, 0.1).unwrap().iter().all(|f| f[0] && f[1]));
        let moving: Vec<BodyParams> =
            (0..5).map(|i| BodyParams::zero().with_trans(Vector3::new(i as f64 / 20.0, 0.0, 0.0))).collect();
        assert!(detect_stable_feet(&b, &moving, 20.0, 0.1).unwrap().iter().all(|f| !f[0] && !f[1]));
    }

    #[test]
    fn sole_on_ground_and_hovering() {
        let b = body();
        let scene = make_test_scene(&SceneSpec::flat(10.0)).unwrap();
        for lift in [0.0, 0.1] {
            let p = BodyParams::zero().with_trans(Vector3::new(0.0, 0.0, lift));
            let pose = b.pose(&p).unwrap();
            let verts: Vec<_> = b.foot_vertex_sets[0].iter().map(|&v| b.skin_vertex(&pose, v)).collect();
            let e = foot_contact(&scene, &verts, None).unwrap();
            assert!((e - lift * lift).abs() < 1e-12, "{lift}: {e}");
        }
    }
}
