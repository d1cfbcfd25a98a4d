//! The explicit world model: a tree of rigid parts connected by 1-DoF joints.

pub mod mesh;
pub mod urdf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, RigidTransform, Vector3};

pub use mesh::{ConvexPiece, Triangle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("joint of part {part} at {value} violates limits [{lower}, {upper}]")]
    LimitViolation { part: usize, value: f64, lower: f64, upper: f64 },
    #[error("joint state has {got} values, model has {expected} movable parts")]
    StateLength { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

impl JointKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            JointKind::Prismatic => "prismatic",
            JointKind::Revolute => "revolute",
        }
    }
}

/// 1-DoF joint expressed in the parent part frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub kind: JointKind,
    /// Unit direction.
    pub axis: Vector3,
    /// A point on the axis. Unused for prismatic joints.
    pub origin: Point3,
    pub lower: f64,
    pub upper: f64,
    pub state: f64,
}

impl Joint {
    pub fn prismatic(axis: Vector3, lower: f64, upper: f64) -> Joint {
        Joint { kind: JointKind::Prismatic, axis: axis.normalize(), origin: Point3::origin(), lower, upper, state: 0f64.clamp(lower, upper) }
    }

    pub fn revolute(axis: Vector3, origin: Point3, lower: f64, upper: f64) -> Joint {
        Joint { kind: JointKind::Revolute, axis: axis.normalize(), origin, lower, upper, state: 0f64.clamp(lower, upper) }
    }

    /// Child-frame motion relative to the parent at joint value `s`.
    pub fn motion(&self, s: f64) -> RigidTransform {
        match self.kind {
            JointKind::Prismatic => RigidTransform::from_translation(self.axis * s),
            JointKind::Revolute => RigidTransform::about_axis(&self.axis, &self.origin, s),
        }
    }

    pub fn within_limits(&self, s: f64) -> bool {
        s >= self.lower && s <= self.upper
    }

    pub fn clamp(&self, s: f64) -> f64 {
        s.clamp(self.lower, self.upper)
    }

    /// Velocity of a parent-frame point attached to the child per unit joint motion.
    pub fn tangent_at(&self, p: &Point3) -> Vector3 {
        match self.kind {
            JointKind::Prismatic => self.axis,
            JointKind::Revolute => self.axis.cross(&(p - self.origin)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub id: usize,
    pub name: String,
    pub parent: Option<usize>,
    pub joint: Option<Joint>,
    /// Convex pieces in the part frame. At joint value 0 the part frame
    /// coincides with the parent frame.
    pub geometry: Vec<ConvexPiece>,
}

impl Part {
    pub fn root(geometry: Vec<ConvexPiece>) -> Part {
        Part { id: 0, name: "base".into(), parent: None, joint: None, geometry }
    }

    pub fn movable(id: usize, parent: usize, joint: Joint, geometry: Vec<ConvexPiece>) -> Part {
        Part { id, name: format!("part_{id}"), parent: Some(parent), joint: Some(joint), geometry }
    }

    /// Mean of the piece vertex centroids, part frame.
    pub fn geometry_center(&self) -> Option<Point3> {
        let pts: Vec<Point3> = self.geometry.iter().flat_map(|g| g.vertices()).collect();
        (!pts.is_empty()).then(|| crate::geometry::centroid(&pts))
    }
}

/// Per-movable-part joint values, indexed by `part id - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct JointState {
    pub values: Vec<f64>,
}

impl JointState {
    pub fn new(values: Vec<f64>) -> Self {
        JointState { values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedModel {
    pub name: String,
    pub parts: Vec<Part>,
    pub base_pose: RigidTransform,
}

impl ArticulatedModel {
    pub fn new(name: impl Into<String>, parts: Vec<Part>, base_pose: RigidTransform) -> Result<Self, ModelError> {
        let m = ArticulatedModel { name: name.into(), parts, base_pose };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.parts.is_empty() {
            return Err(ModelError::Invalid("model has no parts".into()));
        }
        for (i, p) in self.parts.iter().enumerate() {
            if p.id != i {
                return Err(ModelError::Invalid(format!("part ids must be dense; found {} at {}", p.id, i)));
            }
            match (i, p.parent, &p.joint) {
                (0, None, None) => {}
                (0, _, _) => return Err(ModelError::Invalid("part 0 must be a root without joint".into())),
                (_, Some(par), Some(j)) => {
                    if par >= self.parts.len() || par == i {
                        return Err(ModelError::Invalid(format!("part {i} has invalid parent {par}")));
                    }
                    let n = j.axis.norm();
                    if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
                        return Err(ModelError::Invalid(format!("part {i} joint axis is not unit length")));
                    }
                    if !(j.lower <= j.upper) || !j.origin.coords.iter().all(|v| v.is_finite()) {
                        return Err(ModelError::Invalid(format!("part {i} joint has invalid limits or origin")));
                    }
                }
                _ => return Err(ModelError::Invalid(format!("part {i} needs both a parent and a joint"))),
            }
        }
        // every parent chain reaches the root
        for i in 1..self.parts.len() {
            let mut cur = i;
            let mut steps = 0;
            while let Some(par) = self.parts[cur].parent {
                cur = par;
                steps += 1;
                if steps > self.parts.len() {
                    return Err(ModelError::Invalid(format!("part {i} is on a cycle")));
                }
            }
        }
        Ok(())
    }

    pub fn num_movable(&self) -> usize {
        self.parts.len() - 1
    }

    pub fn joint(&self, part: usize) -> Option<&Joint> {
        self.parts.get(part).and_then(|p| p.joint.as_ref())
    }

    /// Joint values stored on the joints themselves.
    pub fn current_state(&self) -> JointState {
        JointState::new(self.parts.iter().skip(1).map(|p| p.joint.map_or(0.0, |j| j.state)).collect())
    }

    pub fn zero_state(&self) -> JointState {
        JointState::new(vec![0.0; self.num_movable()])
    }

    pub fn check_state(&self, state: &JointState) -> Result<(), ModelError> {
        if state.values.len() != self.num_movable() {
            return Err(ModelError::StateLength { expected: self.num_movable(), got: state.values.len() });
        }
        for (k, &s) in state.values.iter().enumerate() {
            let j = self.parts[k + 1].joint.as_ref().expect("validated");
            if !j.within_limits(s) {
                return Err(ModelError::LimitViolation { part: k + 1, value: s, lower: j.lower, upper: j.upper });
            }
        }
        Ok(())
    }

    /// World pose of every part.
    pub fn forward_kinematics(&self, state: &JointState) -> Result<Vec<RigidTransform>, ModelError> {
        self.check_state(state)?;
        Ok(self.poses_unchecked(&state.values))
    }

    /// FK without limit checks; `values` must have one entry per movable part.
    pub fn poses_unchecked(&self, values: &[f64]) -> Vec<RigidTransform> {
        let mut poses: Vec<Option<RigidTransform>> = vec![None; self.parts.len()];
        poses[0] = Some(self.base_pose);
        for i in 1..self.parts.len() {
            self.resolve_pose(i, values, &mut poses);
        }
        poses.into_iter().map(|p| p.expect("resolved")).collect()
    }

    fn resolve_pose(&self, i: usize, values: &[f64], poses: &mut [Option<RigidTransform>]) -> RigidTransform {
        if let Some(p) = poses[i] {
            return p;
        }
        let part = &self.parts[i];
        let parent = self.resolve_pose(part.parent.expect("non-root"), values, poses);
        let pose = parent.compose(&part.joint.expect("non-root").motion(values[i - 1]));
        poses[i] = Some(pose);
        pose
    }
}
