use super::*;
use crate::body::kinematics::forward_kinematics;
use crate::body::params::SHAPE_DIM;
use crate::body::rotation::{log_map, rodrigues};
use crate::body::template::{BodyTemplate, TemplateOptions};
use crate::scene::{make_test_scene, SceneSpec};
use crate::sim::{simulate, SimConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn body() -> ShapedBody {
    let t = BodyTemplate::procedural(&TemplateOptions::default()).unwrap();
    ShapedBody::new(&t, &KinematicTree::smpl(), &[0.0; SHAPE_DIM]).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, scale: f64) -> BodyParams {
    let mut p = BodyParams::zero();
    for v in p.theta.iter_mut() {
        *v = Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale));
    }
    p.trans = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..1.0));
    p
}

fn window_of_trans(ts: &[[f64; 3]]) -> MotionWindow {
    MotionWindow::new(ts.iter().map(|t| BodyParams::zero().with_trans(Vector3::from(*t))).collect(), 20.0)
}

#[test]
fn translation_examples() {
    let w = window_of_trans(&[[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]]);
    assert!((loss_trans(&w).unwrap() - 1.0).abs() <= 1e-12);
    let w = window_of_trans(&[[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
    assert!((loss_trans(&w).unwrap() - 0.5).abs() <= 1e-12);
    let w = window_of_trans(&[[0.0, 0.0, 1.0], [0.5, 0.1, 1.0], [1.0, 0.2, 1.0], [1.5, 0.3, 1.0]]);
    assert!(loss_trans(&w).unwrap().abs() <= 1e-9);
}

#[test]
fn orientation_examples() {
    let mut w = window_of_trans(&[[0.0; 3]; 3]);
    for (i, p) in w.params.iter_mut().enumerate() {
        p.theta[0] = Vector3::new(0.1 * i as f64, 0.0, 0.0);
    }
    assert!((loss_orit(&w).unwrap() - 0.01).abs() <= 1e-12);
    let w2 = MotionWindow::new(w.params[..2].to_vec(), 20.0);
    assert!((loss_orit(&w2).unwrap() - 0.01).abs() <= 1e-12);
    let constant = MotionWindow::new(vec![w.params[1].clone(); 4], 20.0);
    assert_eq!(loss_orit(&constant).unwrap(), 0.0);
}

#[test]
fn joint_term_zero_cases() {
    let b = body();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pose = random_params(&mut rng, 0.4);
    let frozen = MotionWindow::new(vec![pose.clone(); 5], 20.0);
    assert!(loss_jts(&frozen, &b.tree).unwrap() <= 1e-9);
    let moving: Vec<BodyParams> = (0..5)
        .map(|i| {
            let mut p = pose.clone();
            p.trans += Vector3::new(0.3 * (i * i) as f64, -0.1 * i as f64, 0.05);
            p
        })
        .collect();
    assert!(loss_jts(&MotionWindow::new(moving, 20.0), &b.tree).unwrap() <= 1e-9);
}

#[test]
fn joint_term_matches_explicit_second_difference() {
    let b = body();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params: Vec<BodyParams> = (0..6).map(|_| random_params(&mut rng, 0.5)).collect();
    let mut expected = 0.0;
    let joints: Vec<Vec<Vector3<f64>>> = params.iter().map(|p| forward_kinematics(&b.tree, p).unwrap().0).collect();
    for i in 0..4 {
        for j in 1..24 {
            let rel = |f: usize| joints[f][j] - joints[f][0];
            expected += (rel(i + 2) - rel(i + 1) * 2.0 + rel(i)).norm_squared();
        }
    }
    expected /= 4.0;
    let got = loss_jts(&MotionWindow::new(params, 20.0), &b.tree).unwrap();
    assert!((got - expected).abs() <= 1e-10, "{got} vs {expected}");
}

#[test]
fn prior_examples() {
    let w = MotionWindow::new(vec![BodyParams::zero(); 4], 20.0);
    assert_eq!(loss_prior(&w).unwrap(), 0.0);
    let mut moved = w.clone();
    moved.params[1].theta[7] = Vector3::new(0.2, 0.0, 0.0);
    assert!((loss_prior(&moved).unwrap() - 0.01).abs() <= 1e-12);
    let mut both = moved.clone();
    both.init_theta[1][7] = Vector3::new(0.2, 0.0, 0.0);
    assert_eq!(loss_prior(&both).unwrap(), 0.0);
}

#[test]
fn contact_examples() {
    let b = body();
    let scene = make_test_scene(&SceneSpec::flat(10.0)).unwrap();
    let w = MotionWindow::new(vec![BodyParams::zero(); 3], 20.0);
    assert!(loss_contact(&w, &b, &[[true, true]; 3], &scene).unwrap() <= 1e-9);
    assert_eq!(loss_contact(&w, &b, &[[false, false]; 3], &scene).unwrap(), 0.0);
    let lifted = MotionWindow::new(vec![BodyParams::zero().with_trans(Vector3::new(0.0, 0.0, 0.1)); 3], 20.0);
    let c = loss_contact(&lifted, &b, &[[true, false], [false, false], [false, true]], &scene).unwrap();
    assert!((c - 0.01).abs() <= 1e-12);
}

#[test]
fn weighting_and_breakdown_sum() {
    let b = body();
    let scene = make_test_scene(&SceneSpec::flat(10.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params: Vec<BodyParams> = (0..5).map(|_| random_params(&mut rng, 0.3)).collect();
    let mut w = MotionWindow::new(params, 20.0).with_stable(vec![[true, false]; 5]).unwrap();
    w.init_theta = (0..5).map(|_| random_params(&mut rng, 0.3).theta).collect();
    let only_trans = LossConfig { weights: LossWeights { trans: 1.0, ..LossWeights::zero() }, ..LossConfig::default() };
    let l = total_loss(&w, &b, &scene, &only_trans).unwrap();
    assert_eq!(l.total, loss_trans(&w).unwrap());
    let cfg = LossConfig::default();
    let l = total_loss(&w, &b, &scene, &cfg).unwrap();
    let recomputed = l.weighted_sum(&cfg.weights);
    assert!((l.total - recomputed).abs() <= 1e-9 * recomputed.abs());
    for v in [l.trans, l.jts, l.orit, l.contact, l.prior, l.m2p] {
        assert!(v >= 0.0);
    }
}

fn sim_window(frames: usize) -> (SimulatedCaptureLite, MotionWindow) {
    let mut cfg = SimConfig::default();
    cfg.motion.duration_s = frames as f64 / cfg.motion.rate_hz;
    cfg.camera = None;
    let cap = simulate(&cfg).unwrap();
    let stable = detect_stable_feet(&cap.body, &cap.ground_truth.frames, 20.0, 0.1).unwrap();
    let w = MotionWindow::new(cap.ground_truth.frames.clone(), 20.0)
        .with_clouds(&cap.clouds)
        .unwrap()
        .with_stable(stable)
        .unwrap();
    (SimulatedCaptureLite { body: cap.body, scene: cap.scene }, w)
}

struct SimulatedCaptureLite {
    body: ShapedBody,
    scene: SceneMesh,
}

#[test]
fn ground_truth_window_is_consistent() {
    let (cap, w) = sim_window(12);
    assert!(w.stable.iter().flatten().any(|s| *s));
    let l = total_loss(&w, &cap.body, &cap.scene, &LossConfig::default()).unwrap();
    assert!(l.contact < 1e-6, "contact {}", l.contact);
    assert!(l.m2p < 1e-6, "m2p {}", l.m2p);
    assert!(l.prior < 1e-6);
    assert!(l.trans.is_finite() && l.jts.is_finite() && l.orit.is_finite());
}

fn flat(grads: &[ParamGrad]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.theta.iter().flat_map(|t| t.iter().copied().collect::<Vec<_>>()).chain(g.trans.iter().copied())).collect()
}

fn perturbed(params: &[BodyParams], idx: usize, h: f64) -> Vec<BodyParams> {
    let mut out = params.to_vec();
    let per = 75;
    let (f, r) = (idx / per, idx % per);
    if r < 72 {
        out[f].theta[r / 3][r % 3] += h;
    } else {
        out[f].trans[r - 72] += h;
    }
    out
}

#[test]
fn gradient_matches_finite_differences_on_a_simulated_window() {
    let (cap, mut w) = sim_window(6);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for p in &mut w.params {
        p.trans += Vector3::new(0.05, -0.03, 0.02);
        for t in p.theta.iter_mut() {
            *t += Vector3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
        }
    }
    let cfg = LossConfig::default();
    let obj = Objective::new(&w, &cap.body, &cap.scene, &cfg).unwrap();
    let layout = obj.layout(&w.params).unwrap();
    let (_, g) = obj.evaluate(&w.params, &layout, true).unwrap();
    let g = flat(&g.unwrap());
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for idx in (0..g.len()).step_by(7) {
        let fp = obj.evaluate(&perturbed(&w.params, idx, h), &layout, false).unwrap().0.total;
        let fm = obj.evaluate(&perturbed(&w.params, idx, -h), &layout, false).unwrap().0.total;
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[idx]).abs() / (g[idx].abs().max(fd.abs()) + 1e-6));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn layout_point_matches_the_nearest_neighbor_chamfer() {
    let (cap, mut w) = sim_window(6);
    for p in &mut w.params {
        p.trans += Vector3::new(0.04, 0.02, -0.01);
    }
    let cfg = LossConfig::default();
    let obj = Objective::new(&w, &cap.body, &cap.scene, &cfg).unwrap();
    let layout = obj.layout(&w.params).unwrap();
    let frozen = obj.evaluate(&w.params, &layout, false).unwrap().0.m2p;
    let sampled: Vec<Vec<Vector3<f64>>> = layout
        .iter()
        .zip(&w.params)
        .map(|(l, p)| {
            let verts = cap.body.skin(&cap.body.pose(p).unwrap());
            l.iter().map(|s| visibility::sample_point(&verts, &cap.body.faces, &s.sample)).collect()
        })
        .collect();
    let live = loss_m2p(&sampled, &w.observations).value;
    assert!((frozen - live).abs() <= 1e-12 * live.max(1.0), "{frozen} vs {live}");

    // Away from the layout point the fixed matches can only cost more.
    let moved: Vec<BodyParams> = w.params.iter().map(|p| p.clone().with_trans(p.trans + Vector3::new(0.01, 0.0, 0.0))).collect();
    let fixed = obj.evaluate(&moved, &layout, false).unwrap().0.m2p;
    assert!(fixed >= obj.loss(&moved).unwrap().m2p - 1e-12);
}

#[test]
fn root_prior_is_geodesic_for_small_rotations() {
    let mut w = MotionWindow::new(vec![BodyParams::zero(); 3], 20.0);
    w.params[0].theta[0] = Vector3::new(0.0, 0.0, 0.2);
    let expected = 2.0 * (1.0 - 0.2f64.cos()) / 3.0;
    assert!((loss_prior(&w).unwrap() - expected).abs() < 1e-12);
}

fn rigidly_moved(w: &MotionWindow, r: &Matrix3<f64>, t: &Vector3<f64>, tree: &KinematicTree) -> MotionWindow {
    let root = tree.rest_offsets()[0];
    let mut out = w.clone();
    for p in &mut out.params {
        // Rotate about the world origin: the pelvis joint at root + trans
        // moves to R (root + trans) + t.
        let pelvis = root + p.trans;
        p.theta[0] = log_map(&(r * rodrigues(&p.theta[0])));
        p.trans = r * pelvis + t - root;
    }
    for init in &mut out.init_theta {
        init[0] = log_map(&(r * rodrigues(&init[0])));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn joint_and_prior_terms_are_rigidly_invariant(
        seed in 0u64..1000,
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        shift in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let tree = KinematicTree::smpl();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<BodyParams> = (0..4).map(|_| random_params(&mut rng, 0.4)).collect();
        let mut w = MotionWindow::new(params, 20.0);
        w.init_theta = (0..4).map(|_| random_params(&mut rng, 0.4).theta).collect();
        let axis = Vector3::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let r = rodrigues(&(axis.normalize() * angle));
        let moved = rigidly_moved(&w, &r, &Vector3::from(shift), &tree);
        prop_assert!((loss_jts(&w, &tree).unwrap() - loss_jts(&moved, &tree).unwrap()).abs() < 1e-9);
        prop_assert!((loss_prior(&w).unwrap() - loss_prior(&moved).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn translation_term_scales_quadratically(ts in prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 3..8), s in -4.0f64..4.0) {
        let w = window_of_trans(&ts);
        let scaled: Vec<[f64; 3]> = ts.iter().map(|t| [t[0] * s, t[1] * s, t[2] * s]).collect();
        let a = loss_trans(&w).unwrap();
        let b = loss_trans(&window_of_trans(&scaled)).unwrap();
        prop_assert!((b - s * s * a).abs() <= 1e-9 * (1.0 + b.abs()));
        prop_assert!(a >= 0.0);
    }
}

