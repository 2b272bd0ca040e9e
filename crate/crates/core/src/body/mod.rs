//! Articulated body model: 24-joint tree, axis-angle pose, procedural
//! template and linear blend skinning.

pub mod kinematics;
pub mod params;
pub mod rotation;
pub mod template;
pub mod tree;

pub use kinematics::{forward_kinematics, relative_joints, skin, ParamGrad, Pose, ShapedBody};
pub use params::{BodyParams, MotionSequence, POSE_DIM, SHAPE_DIM};
pub use template::{BodyTemplate, TemplateOptions};
pub use tree::{KinematicTree, JOINT_COUNT, JOINT_NAMES};
