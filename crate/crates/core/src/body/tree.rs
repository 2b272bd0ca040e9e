use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const JOINT_COUNT: usize = 24;

pub const PELVIS: usize = 0;
pub const LEFT_HIP: usize = 1;
pub const RIGHT_HIP: usize = 2;
pub const SPINE1: usize = 3;
pub const LEFT_KNEE: usize = 4;
pub const RIGHT_KNEE: usize = 5;
pub const SPINE2: usize = 6;
pub const LEFT_ANKLE: usize = 7;
pub const RIGHT_ANKLE: usize = 8;
pub const SPINE3: usize = 9;
pub const LEFT_FOOT: usize = 10;
pub const RIGHT_FOOT: usize = 11;
pub const NECK: usize = 12;
pub const LEFT_COLLAR: usize = 13;
pub const RIGHT_COLLAR: usize = 14;
pub const HEAD: usize = 15;
pub const LEFT_SHOULDER: usize = 16;
pub const RIGHT_SHOULDER: usize = 17;
pub const LEFT_ELBOW: usize = 18;
pub const RIGHT_ELBOW: usize = 19;
pub const LEFT_WRIST: usize = 20;
pub const RIGHT_WRIST: usize = 21;
pub const LEFT_HAND: usize = 22;
pub const RIGHT_HAND: usize = 23;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

const SMPL_PARENTS: [Option<usize>; JOINT_COUNT] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// Rest-pose joint locations of the default humanoid, z-up, facing +x, left = +y.
pub(crate) const REST_JOINTS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.95],
    [0.0, 0.09, 0.90],
    [0.0, -0.09, 0.90],
    [0.0, 0.0, 1.06],
    [0.0, 0.09, 0.50],
    [0.0, -0.09, 0.50],
    [0.0, 0.0, 1.18],
    [0.0, 0.09, 0.08],
    [0.0, -0.09, 0.08],
    [0.0, 0.0, 1.30],
    [0.13, 0.09, 0.025],
    [0.13, -0.09, 0.025],
    [0.0, 0.0, 1.50],
    [0.0, 0.06, 1.42],
    [0.0, -0.06, 1.42],
    [0.0, 0.0, 1.58],
    [0.0, 0.18, 1.43],
    [0.0, -0.18, 1.43],
    [0.0, 0.45, 1.43],
    [0.0, -0.45, 1.43],
    [0.0, 0.70, 1.43],
    [0.0, -0.70, 1.43],
    [0.0, 0.78, 1.43],
    [0.0, -0.78, 1.43],
];

/// 24-joint kinematic hierarchy. Joint 0 (pelvis) is the root and every
/// parent index is smaller than its child index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicTree {
    parents: Vec<Option<usize>>,
    /// Offset of each joint from its parent in the rest pose; for the root
    /// this is the absolute rest position.
    rest_offsets: Vec<Vector3<f64>>,
}

impl KinematicTree {
    /// The SMPL-style hierarchy with the default humanoid rest offsets.
    pub fn smpl() -> Self {
        let joints: Vec<Vector3<f64>> = REST_JOINTS.iter().map(|j| Vector3::from(*j)).collect();
        Self::from_rest_joints(SMPL_PARENTS.to_vec(), &joints).expect("builtin tree is valid")
    }

    pub fn from_rest_joints(parents: Vec<Option<usize>>, joints: &[Vector3<f64>]) -> Result<Self> {
        if parents.len() != JOINT_COUNT || joints.len() != JOINT_COUNT {
            return Err(Error::Dimension(format!(
                "kinematic tree needs {JOINT_COUNT} joints, got {} parents and {} positions",
                parents.len(),
                joints.len()
            )));
        }
        let roots = parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 || parents[0].is_some() {
            return Err(Error::InvalidInput("tree must have exactly one root at index 0".into()));
        }
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                if *p >= i {
                    return Err(Error::InvalidInput(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )));
                }
            }
        }
        let rest_offsets = (0..JOINT_COUNT)
            .map(|i| match parents[i] {
                Some(p) => joints[i] - joints[p],
                None => joints[i],
            })
            .collect();
        Ok(Self { parents, rest_offsets })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn rest_offsets(&self) -> &[Vector3<f64>] {
        &self.rest_offsets
    }

    /// Absolute rest-pose joint positions.
    pub fn rest_joints(&self) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = Vec::with_capacity(self.parents.len());
        for i in 0..self.parents.len() {
            let p = match self.parents[i] {
                Some(p) => out[p] + self.rest_offsets[i],
                None => self.rest_offsets[i],
            };
            out.push(p);
        }
        out
    }

    /// Same hierarchy with different rest joint positions (used after shape
    /// displacement).
    pub fn with_rest_joints(&self, joints: &[Vector3<f64>]) -> Result<Self> {
        Self::from_rest_joints(self.parents.clone(), joints)
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(joint))
            .map(|(i, _)| i)
    }
}

impl Default for KinematicTree {
    fn default() -> Self {
        Self::smpl()
    }
}
