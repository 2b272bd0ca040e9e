//! Forward kinematics, linear blend skinning and their reverse-mode adjoints.

use nalgebra::{Matrix3, Vector3};

use super::params::BodyParams;
use super::rotation::rodrigues_with_jacobian;
use super::template::BodyTemplate;
use super::tree::{KinematicTree, JOINT_COUNT};
use crate::error::{Error, Result};

/// Forward kinematics state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Pose {
    /// World joint positions.
    pub positions: Vec<Vector3<f64>>,
    /// Global joint rotations.
    pub rotations: Vec<Matrix3<f64>>,
    local: Vec<Matrix3<f64>>,
    local_jac: Vec<[Matrix3<f64>; 3]>,
}

/// Gradient with respect to one frame's free variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub theta: Vec<Vector3<f64>>,
    pub trans: Vector3<f64>,
}

impl ParamGrad {
    pub fn zero() -> Self {
        Self { theta: vec![Vector3::zeros(); JOINT_COUNT], trans: Vector3::zeros() }
    }
}

fn check_dims(tree: &KinematicTree, params: &BodyParams) -> Result<()> {
    if params.theta.len() != tree.joint_count() {
        return Err(Error::Dimension(format!(
            "theta has {} joints, tree has {}",
            params.theta.len(),
            tree.joint_count()
        )));
    }
    Ok(())
}

/// Joint positions and global rotations of a posed skeleton.
pub fn forward_kinematics(tree: &KinematicTree, params: &BodyParams) -> Result<(Vec<Vector3<f64>>, Vec<Matrix3<f64>>)> {
    let pose = pose(tree, params)?;
    Ok((pose.positions, pose.rotations))
}

/// Forward kinematics keeping the local rotation Jacobians.
pub fn pose(tree: &KinematicTree, params: &BodyParams) -> Result<Pose> {
    check_dims(tree, params)?;
    let n = tree.joint_count();
    let offsets = tree.rest_offsets();
    let mut positions = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut local = Vec::with_capacity(n);
    let mut local_jac = Vec::with_capacity(n);
    for j in 0..n {
        let (r, jac) = rodrigues_with_jacobian(&params.theta[j]);
        match tree.parent(j) {
            None => {
                positions.push(offsets[j] + params.trans);
                rotations.push(r);
            }
            Some(p) => {
                let gp: Matrix3<f64> = rotations[p];
                positions.push(positions[p] + gp * offsets[j]);
                rotations.push(gp * r);
            }
        }
        local.push(r);
        local_jac.push(jac);
    }
    Ok(Pose { positions, rotations, local, local_jac })
}

/// Propagate gradients on joint positions and global rotations back to the
/// pose and translation parameters. `grad_rot` is consumed as scratch.
pub fn pose_backward(
    tree: &KinematicTree,
    pose: &Pose,
    grad_pos: &[Vector3<f64>],
    grad_rot: &mut [Matrix3<f64>],
) -> ParamGrad {
    let n = tree.joint_count();
    let offsets = tree.rest_offsets();
    let mut gpos = grad_pos.to_vec();
    let mut out = ParamGrad::zero();
    for j in (0..n).rev() {
        let g_rot = grad_rot[j];
        let g_local = match tree.parent(j) {
            Some(p) => {
                let gp = pose.rotations[p];
                grad_rot[p] += g_rot * pose.local[j].transpose() + gpos[j] * offsets[j].transpose();
                let gj = gpos[j];
                gpos[p] += gj;
                gp.transpose() * g_rot
            }
            None => {
                out.trans = gpos[j];
                g_rot
            }
        };
        let jac = &pose.local_jac[j];
        out.theta[j] = Vector3::new(
            g_local.component_mul(&jac[0]).sum(),
            g_local.component_mul(&jac[1]).sum(),
            g_local.component_mul(&jac[2]).sum(),
        );
    }
    out
}

/// A template with its shape fixed: shaped rest vertices, shaped rest
/// joints and sparse weights, ready for repeated posing.
#[derive(Debug, Clone)]
pub struct ShapedBody {
    pub tree: KinematicTree,
    pub rest_vertices: Vec<Vector3<f64>>,
    pub rest_joints: Vec<Vector3<f64>>,
    pub weights: Vec<Vec<(usize, f64)>>,
    pub faces: Vec<[usize; 3]>,
    pub foot_vertex_sets: [Vec<usize>; 2],
}

impl ShapedBody {
    pub fn new(template: &BodyTemplate, tree: &KinematicTree, beta: &[f64]) -> Result<Self> {
        if tree.joint_count() != JOINT_COUNT {
            return Err(Error::Dimension("tree must have 24 joints".into()));
        }
        for (row, w) in template.skin_weights.iter().enumerate() {
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::SkinWeights { row, sum });
            }
        }
        let rest_vertices = template.shaped_vertices(beta);
        let rest_joints = template.regress_joints(&rest_vertices);
        let tree = tree.with_rest_joints(&rest_joints)?;
        Ok(Self {
            tree,
            rest_vertices,
            rest_joints,
            weights: template.sparse_weights(),
            faces: template.faces.clone(),
            foot_vertex_sets: template.foot_vertex_sets.clone(),
        })
    }

    pub fn pose(&self, params: &BodyParams) -> Result<Pose> {
        pose(&self.tree, params)
    }

    /// Skinned position of a single vertex.
    pub fn skin_vertex(&self, pose: &Pose, v: usize) -> Vector3<f64> {
        let rest = self.rest_vertices[v];
        self.weights[v].iter().fold(Vector3::zeros(), |acc, &(j, w)| {
            acc + (pose.rotations[j] * (rest - self.rest_joints[j]) + pose.positions[j]) * w
        })
    }

    pub fn skin(&self, pose: &Pose) -> Vec<Vector3<f64>> {
        (0..self.rest_vertices.len()).map(|v| self.skin_vertex(pose, v)).collect()
    }

    /// Accumulate the adjoint of [`skin_vertex`] for a vertex gradient.
    pub fn skin_vertex_backward(
        &self,
        v: usize,
        grad: &Vector3<f64>,
        grad_pos: &mut [Vector3<f64>],
        grad_rot: &mut [Matrix3<f64>],
    ) {
        let rest = self.rest_vertices[v];
        for &(j, w) in &self.weights[v] {
            let g = grad * w;
            grad_rot[j] += g * (rest - self.rest_joints[j]).transpose();
            grad_pos[j] += g;
        }
    }
}

/// Posed vertices of the template.
pub fn skin(template: &BodyTemplate, tree: &KinematicTree, params: &BodyParams) -> Result<Vec<Vector3<f64>>> {
    let body = ShapedBody::new(template, tree, &params.beta)?;
    let pose = body.pose(params)?;
    Ok(body.skin(&pose))
}

/// The 23 non-root joints relative to the pelvis, flattened to 69 values.
pub fn relative_joints(params: &BodyParams, tree: &KinematicTree) -> Result<Vec<f64>> {
    let (joints, _) = forward_kinematics(tree, params)?;
    Ok(relative_from_positions(&joints))
}

pub(crate) fn relative_from_positions(joints: &[Vector3<f64>]) -> Vec<f64> {
    let root = joints[0];
    joints[1..].iter().flat_map(|j| (j - root).iter().copied().collect::<Vec<_>>()).collect()
}
