//! One-directional Chamfer distance from sampled body points to a scan.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;

/// Nearest-neighbor index over one frame's observed points.
pub struct PointIndex {
    points: Vec<Vector3<f64>>,
    tree: Option<ImmutableKdTree<f64, 3>>,
}

impl PointIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = if raw.is_empty() { None } else { ImmutableKdTree::new_from_slice(&raw).ok() };
        Self { points: points.to_vec(), tree }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest observed point and its squared distance.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(Vector3<f64>, f64)> {
        match &self.tree {
            Some(t) => {
                let n = t.query(&[q.x, q.y, q.z]).nearest_one::<SquaredEuclidean<f64>>().execute();
                Some((self.points[n.item as usize], n.distance))
            }
            None if self.points.is_empty() => None,
            // Construction only fails on inputs the tree cannot index; fall
            // back to a scan so results stay exact.
            None => self
                .points
                .iter()
                .map(|p| (*p, (p - q).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1)),
        }
    }
}

/// Mean squared distance from each point of `sampled` to its nearest
/// neighbor in `observed`. `None` when either set is empty.
pub fn chamfer_one_sided(sampled: &[Vector3<f64>], observed: &PointIndex) -> Option<f64> {
    if sampled.is_empty() || observed.is_empty() {
        return None;
    }
    let total: f64 = sampled.iter().map(|p| observed.nearest(p).map_or(0.0, |(_, d)| d)).sum();
    Some(total / sampled.len() as f64)
}

/// Result of [`loss_m2p`].
#[derive(Debug, Clone, PartialEq)]
pub struct M2pLoss {
    pub value: f64,
    /// Frames without observed or sampled points; they contribute zero.
    pub empty_frames: Vec<usize>,
}

/// Mesh-to-points term over a window: per-frame one-sided Chamfer, summed
/// and divided by the window length.
pub fn loss_m2p(sampled: &[Vec<Vector3<f64>>], observed: &[Vec<Vector3<f64>>]) -> M2pLoss {
    let k = sampled.len().max(1) as f64;
    let mut value = 0.0;
    let mut empty_frames = Vec::new();
    for (i, (s, o)) in sampled.iter().zip(observed).enumerate() {
        match chamfer_one_sided(s, &PointIndex::new(o)) {
            Some(c) => value += c,
            None => empty_frames.push(i),
        }
    }
    M2pLoss { value: value / k, empty_frames }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(sampled: &[Vector3<f64>], observed: &[Vector3<f64>]) -> f64 {
        sampled
            .iter()
            .map(|p| {
                observed
                    .iter()
                    .map(|q| {
                        let d = p - q;
                        d.x * d.x + d.y * d.y + d.z * d.z
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / sampled.len() as f64
    }

    #[test]
    fn subset_gives_zero_and_single_pair_gives_four() {
        let obs: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(i as f64, 0.5, -1.0)).collect();
        assert_eq!(chamfer_one_sided(&obs[2..6], &PointIndex::new(&obs)), Some(0.0));
        let c = chamfer_one_sided(&[Vector3::zeros()], &PointIndex::new(&[Vector3::new(0.0, 0.0, 2.0)]));
        assert_eq!(c, Some(4.0));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pt = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let obs: Vec<_> = (0..500).map(|_| pt()).collect();
        let smp: Vec<_> = (0..100).map(|_| pt()).collect();
        let fast = chamfer_one_sided(&smp, &PointIndex::new(&obs)).unwrap();
        assert!((fast - brute(&smp, &obs)).abs() <= 1e-12);
    }

    #[test]
    fn empty_frames_are_flagged() {
        let r = loss_m2p(&[vec![Vector3::zeros()], vec![Vector3::zeros()]], &[vec![], vec![Vector3::new(0.0, 0.0, 2.0)]]);
        assert_eq!(r.empty_frames, vec![0]);
        assert_eq!(r.value, 2.0);
    }

    fn arb_points(n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 1..n)
    }

    proptest! {
        #[test]
        fn clutter_never_increases_the_loss(s in arb_points(20), o in arb_points(30), extra in arb_points(30)) {
            let s: Vec<_> = s.into_iter().map(Vector3::from).collect();
            let o: Vec<_> = o.into_iter().map(Vector3::from).collect();
            let mut more = o.clone();
            more.extend(extra.into_iter().map(Vector3::from));
            let a = chamfer_one_sided(&s, &PointIndex::new(&o)).unwrap();
            let b = chamfer_one_sided(&s, &PointIndex::new(&more)).unwrap();
            prop_assert!(b <= a);
        }
    }
}
