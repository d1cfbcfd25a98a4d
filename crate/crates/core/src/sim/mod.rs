//! Quasi-static contact simulation of a robot acting on an articulated
//! object.
//!
//! Objects have no dynamics. A part moves only when a robot sphere
//! penetrates it, by the projection of the penetration onto the joint
//! tangent at the contact, or when it is welded to the effector and the weld
//! point drags it along its joint path.

pub mod contact;
pub mod robot;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigengrasp::EigengraspBasis;
use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::model::{ArticulatedModel, JointState};
pub use contact::{Collider, Proximity};
pub use robot::{Arm, Effector, EffectorKind, LinkRole, RobotSpec, Sphere};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("action has {got} components, the action space has {expected}")]
    ActionLength { expected: usize, got: usize },
    #[error("non-finite action component at index {0}")]
    NonFiniteAction(usize),
    #[error("state invalid: {0}")]
    InvalidState(String),
    #[error("world invalid: {0}")]
    InvalidWorld(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub contact_epsilon: f64,
    pub max_passes: usize,
    pub penetration_tolerance: f64,
    pub weld_tolerance: f64,
    pub action_bound: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { contact_epsilon: 0.002, max_passes: 10, penetration_tolerance: 0.0005, weld_tolerance: 0.001, action_bound: 0.05 }
    }
}

/// How the effector part of an action is interpreted.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ActionSpace {
    #[default]
    Joint,
    /// Hand joints follow `reconstruct(coeffs)`; actions increment `coeffs`.
    Eigengrasp(EigengraspBasis),
}

/// The part and point the task is about, in that part's frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub part: usize,
    pub point: Point3,
    /// Direction the suction axis should point, i.e. into the target face.
    pub approach: Vector3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPair {
    pub link: String,
    pub part: usize,
    pub penetration: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactReport {
    pub pairs: Vec<ContactPair>,
    pub unexpected_collision: bool,
    pub palm_contact: bool,
    pub finger_contact_count: usize,
    pub tip_on_target: bool,
    /// Any effector link touches the target part.
    pub target_contact: bool,
    /// Grasp closure: opposing fingers (gripper) or palm plus two fingers (hand).
    pub closure: bool,
}

/// Reward inputs derived from a state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    /// Suction tip, gripper grasp centre or palm centre.
    pub grasp_point: Point3,
    pub target_point: Point3,
    pub suction_axis: Vector3,
    pub target_approach: Vector3,
    /// Distance between the commanded and achieved weld point.
    pub cartesian_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weld {
    pub part: usize,
    pub anchor: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Arm joints followed by effector joints.
    pub robot_q: Vec<f64>,
    /// Eigengrasp coefficients; empty outside eigengrasp mode.
    pub coeffs: Vec<f64>,
    pub object_s: JointState,
    pub last_q_velocity: Vec<f64>,
    pub last_q_acceleration: Vec<f64>,
    pub contact: ContactReport,
    pub weld: Option<Weld>,
    pub stuck: bool,
    pub observation: Observation,
}

impl SimState {
    pub fn target_value(&self, world: &World) -> f64 {
        self.object_s.values[world.target.part - 1]
    }
}

/// Bit-exact copy of a state that rollouts branch from.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot(SimState);

pub fn snapshot(state: &SimState) -> Snapshot {
    Snapshot(state.clone())
}

pub fn restore(token: &Snapshot) -> SimState {
    token.0.clone()
}

impl Snapshot {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(&self.0).expect("state serialises")
    }

    pub fn decode(bytes: &[u8]) -> Result<Snapshot, SimError> {
        serde_json::from_slice(bytes).map(Snapshot).map_err(|e| SimError::InvalidState(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub model: ArticulatedModel,
    pub robot: RobotSpec,
    pub target: TargetSpec,
    pub space: ActionSpace,
    pub config: SimConfig,
    colliders: Vec<Collider>,
    links: Vec<robot::LinkInfo>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

struct SphereHit {
    sphere: usize,
    link: usize,
    part: usize,
    distance: f64,
    normal: Vector3,
}

impl World {
    pub fn new(model: ArticulatedModel, robot: RobotSpec, target: TargetSpec, space: ActionSpace, config: SimConfig) -> Result<World, SimError> {
        robot.validate().map_err(SimError::InvalidWorld)?;
        if target.part == 0 || target.part >= model.parts.len() {
            return Err(SimError::InvalidWorld(format!("target part {} is not a movable part", target.part)));
        }
        if let ActionSpace::Eigengrasp(b) = &space {
            if robot.effector.kind() != EffectorKind::Hand || b.dof() != robot.effector.dof() {
                return Err(SimError::InvalidWorld("eigengrasp basis does not match the hand".into()));
            }
        }
        let colliders = model.parts.iter().map(|p| Collider::new(&p.geometry)).collect();
        let links = robot.links();
        let (lower, upper) = robot.limits();
        Ok(World { model, robot, target, space, config, colliders, links, lower, upper })
    }

    pub fn action_dim(&self) -> usize {
        match &self.space {
            ActionSpace::Joint => self.robot.dof(),
            ActionSpace::Eigengrasp(b) => self.robot.arm_dof() + b.dim(),
        }
    }

    pub fn link_name(&self, link: usize) -> &str {
        &self.links[link].name
    }

    /// State at the given configuration, without resolving any penetration.
    pub fn initial_state(&self, robot_q: Vec<f64>, coeffs: Vec<f64>, object_s: JointState) -> Result<SimState, SimError> {
        if robot_q.len() != self.robot.dof() {
            return Err(SimError::InvalidState(format!("robot_q has {} entries, robot has {}", robot_q.len(), self.robot.dof())));
        }
        self.model.check_state(&object_s).map_err(|e| SimError::InvalidState(e.to_string()))?;
        let mut q = robot_q;
        for (i, v) in q.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
        let coeffs = match &self.space {
            ActionSpace::Joint => vec![],
            ActionSpace::Eigengrasp(b) => {
                let c = if coeffs.is_empty() { vec![0.0; b.dim()] } else { coeffs };
                let n = self.robot.arm_dof();
                b.reconstruct_into(&c, true, &mut q[n..]).map_err(|e| SimError::InvalidState(e.to_string()))?;
                c
            }
        };
        let d = self.action_dim();
        let mut state = SimState {
            robot_q: q,
            coeffs,
            object_s,
            last_q_velocity: vec![0.0; d],
            last_q_acceleration: vec![0.0; d],
            contact: ContactReport::default(),
            weld: None,
            stuck: false,
            observation: Observation::default(),
        };
        state.contact = self.detect(&state.robot_q, &state.object_s.values, false);
        state.observation = self.observe(&state, 0.0);
        Ok(state)
    }

    fn control(&self, state: &SimState) -> Vec<f64> {
        let n = self.robot.arm_dof();
        match &self.space {
            ActionSpace::Joint => state.robot_q.clone(),
            ActionSpace::Eigengrasp(_) => state.robot_q[..n].iter().chain(&state.coeffs).copied().collect(),
        }
    }

    pub fn step(&self, state: &SimState, action: &[f64]) -> Result<SimState, SimError> {
        let d = self.action_dim();
        if action.len() != d {
            return Err(SimError::ActionLength { expected: d, got: action.len() });
        }
        if let Some(i) = action.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteAction(i));
        }
        let bound = self.config.action_bound;
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-bound, bound)).collect();
        let n = self.robot.arm_dof();
        let mut next = state.clone();
        let mut commanded = state.robot_q.clone();
        for i in 0..n {
            commanded[i] += a[i];
            next.robot_q[i] = commanded[i].clamp(self.lower[i], self.upper[i]);
        }
        match &self.space {
            ActionSpace::Joint => {
                for i in n..self.robot.dof() {
                    commanded[i] += a[i];
                    next.robot_q[i] = commanded[i].clamp(self.lower[i], self.upper[i]);
                }
            }
            ActionSpace::Eigengrasp(b) => {
                for (c, da) in next.coeffs.iter_mut().zip(&a[n..]) {
                    *c += da;
                }
                b.reconstruct_into(&next.coeffs, true, &mut next.robot_q[n..]).map_err(|e| SimError::InvalidState(e.to_string()))?;
                commanded[n..].copy_from_slice(&next.robot_q[n..]);
            }
        }

        let moved = next.robot_q.iter().zip(&state.robot_q).any(|(a, b)| a.to_bits() != b.to_bits());
        if moved {
            if let Some(w) = state.weld {
                self.drive(&mut next, state, &w);
            }
            next.stuck = self.resolve(&next.robot_q, &mut next.object_s.values, next.weld.map(|w| w.part));
        }
        next.contact = self.detect(&next.robot_q, &next.object_s.values, next.stuck);
        if next.weld.is_none() {
            let grab = match self.robot.effector.kind() {
                EffectorKind::Suction => next.contact.tip_on_target,
                _ => next.contact.closure,
            };
            if grab {
                let pose = self.part_pose(&next.object_s.values, self.target.part);
                let anchor = pose.inverse().apply(&self.robot.weld_point(&next.robot_q));
                next.weld = Some(Weld { part: self.target.part, anchor });
            }
        }

        let prev = self.control(state);
        let cur = self.control(&next);
        let v: Vec<f64> = cur.iter().zip(&prev).map(|(c, p)| c - p).collect();
        next.last_q_acceleration = v.iter().zip(&state.last_q_velocity).map(|(v, u)| v - u).collect();
        next.last_q_velocity = v;
        let e_p = (self.robot.weld_point(&commanded) - self.robot.weld_point(&next.robot_q)).norm();
        next.observation = self.observe(&next, e_p);
        Ok(next)
    }

    fn observe(&self, state: &SimState, cartesian_error: f64) -> Observation {
        let pose = self.robot.pose(&state.robot_q);
        let part = self.part_pose(&state.object_s.values, self.target.part);
        Observation {
            grasp_point: pose.weld_point,
            target_point: part.apply(&self.target.point),
            suction_axis: pose.axis,
            target_approach: part.apply_vector(&self.target.approach),
            cartesian_error,
        }
    }

    pub fn part_pose(&self, s: &[f64], part: usize) -> RigidTransform {
        self.model.poses_unchecked(s)[part]
    }

    /// World velocity of a point on `part` per unit of its joint value.
    fn tangent(&self, poses: &[RigidTransform], part: usize, p: &Point3) -> Vector3 {
        let info = &self.model.parts[part];
        let parent = poses[info.parent.expect("movable part")];
        let joint = info.joint.expect("movable part");
        parent.apply_vector(&joint.tangent_at(&parent.inverse().apply(p)))
    }

    /// Moves the welded part with the weld point. When the part cannot follow
    /// (joint path or limits), the arm is pulled back onto the constraint;
    /// if that fails the arm keeps its previous configuration.
    fn drive(&self, next: &mut SimState, prev: &SimState, weld: &Weld) {
        let n = self.robot.arm_dof();
        let j = weld.part - 1;
        let joint = self.model.parts[weld.part].joint.expect("movable part");
        let residual = |q: &[f64], s: &[f64]| -> Vector3 {
            let anchor = self.part_pose(s, weld.part).apply(&weld.anchor);
            self.robot.weld_point(q) - anchor
        };
        for _ in 0..8 {
            let g = self.robot.weld_point(&next.robot_q);
            for _ in 0..4 {
                let poses = self.model.poses_unchecked(&next.object_s.values);
                let anchor = poses[weld.part].apply(&weld.anchor);
                let t = self.tangent(&poses, weld.part, &anchor);
                let tt = t.norm_squared();
                if tt < 1e-18 {
                    break;
                }
                let ds = t.dot(&(g - anchor)) / tt;
                next.object_s.values[j] = joint.clamp(next.object_s.values[j] + ds);
                if ds.abs() < 1e-12 {
                    break;
                }
            }
            let r = residual(&next.robot_q, &next.object_s.values);
            if r.norm() < 1e-5 {
                break;
            }
            // damped least squares on the arm toward the anchor
            let jac = self.robot.weld_jacobian(&next.robot_q);
            let mut jjt = nalgebra::Matrix3::<f64>::identity() * 1e-6;
            for col in &jac {
                let c = Vector3::new(col[0], col[1], col[2]);
                jjt += c * c.transpose();
            }
            let Some(y) = jjt.lu().solve(&(-r)) else { break };
            for (i, col) in jac.iter().enumerate() {
                let dq = col[0] * y.x + col[1] * y.y + col[2] * y.z;
                next.robot_q[i] = (next.robot_q[i] + dq).clamp(self.lower[i], self.upper[i]);
            }
        }
        if residual(&next.robot_q, &next.object_s.values).norm() > self.config.weld_tolerance {
            next.robot_q[..n].copy_from_slice(&prev.robot_q[..n]);
            next.object_s.values[j] = prev.object_s.values[j];
        }
    }

    fn is_effector(&self, link: usize) -> bool {
        self.links[link].role != LinkRole::Arm
    }

    fn hits(&self, spheres: &[(usize, Point3, f64)], s: &[f64], margin: f64, skip_welded: Option<usize>) -> Vec<SphereHit> {
        let poses = self.model.poses_unchecked(s);
        let inverses: Vec<RigidTransform> = poses.iter().map(|p| p.inverse()).collect();
        let mut out = Vec::new();
        for (si, (link, c, r)) in spheres.iter().enumerate() {
            for (k, col) in self.colliders.iter().enumerate() {
                if skip_welded == Some(k) && self.is_effector(*link) {
                    continue;
                }
                let local = inverses[k].apply(c);
                if let Some(p) = col.proximity(&local, r + margin) {
                    out.push(SphereHit { sphere: si, link: *link, part: k, distance: p.distance - r, normal: poses[k].apply_vector(&p.normal) });
                }
            }
        }
        out
    }

    /// Pushes movable parts out of the robot. Returns true when some
    /// penetration remains above tolerance.
    fn resolve(&self, q: &[f64], s: &mut [f64], welded: Option<usize>) -> bool {
        let spheres = self.robot.pose(q).spheres;
        let tol = self.config.penetration_tolerance;
        for _ in 0..self.config.max_passes {
            let hits = self.hits(&spheres, s, 0.0, welded);
            let worst = hits.iter().map(|h| -h.distance).fold(0.0, f64::max);
            if worst < tol {
                return false;
            }
            let mut pushes: Vec<(f64, usize, usize)> =
                hits.iter().filter(|h| h.part != 0 && h.distance < 0.0).map(|h| (-h.distance, h.sphere, h.part)).collect();
            if pushes.is_empty() {
                return true;
            }
            pushes.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            for (_, si, k) in pushes {
                let (_, c, r) = spheres[si];
                let poses = self.model.poses_unchecked(s);
                let Some(p) = self.colliders[k].proximity(&poses[k].inverse().apply(&c), r) else { continue };
                let depth = r - p.distance;
                if depth <= 0.0 {
                    continue;
                }
                let normal = poses[k].apply_vector(&p.normal);
                let surface = c - normal * p.distance;
                let t = self.tangent(&poses, k, &surface);
                let tt = t.norm_squared();
                if tt < 1e-18 {
                    continue;
                }
                let ds = (-normal * depth).dot(&t) / tt;
                let joint = self.model.parts[k].joint.expect("movable part");
                s[k - 1] = joint.clamp(s[k - 1] + ds);
            }
        }
        let worst = self.hits(&spheres, s, 0.0, welded).iter().map(|h| -h.distance).fold(0.0, f64::max);
        worst >= tol
    }

    fn detect(&self, q: &[f64], s: &[f64], stuck: bool) -> ContactReport {
        let pose = self.robot.pose(q);
        let eps = self.config.contact_epsilon;
        let hits = self.hits(&pose.spheres, s, eps, None);
        // closest hit per (link, part)
        let mut best: Vec<&SphereHit> = Vec::new();
        for h in hits.iter().filter(|h| h.distance < eps) {
            match best.iter_mut().find(|b| b.link == h.link && b.part == h.part) {
                Some(b) if h.distance < b.distance => *b = h,
                Some(_) => {}
                None => best.push(h),
            }
        }
        best.sort_by(|a, b| a.link.cmp(&b.link).then(a.part.cmp(&b.part)));
        let target = self.target.part;
        let mut report = ContactReport { unexpected_collision: stuck, ..Default::default() };
        let mut fingers: Vec<usize> = Vec::new();
        for h in &best {
            report.pairs.push(ContactPair { link: self.links[h.link].name.clone(), part: h.part, penetration: (-h.distance).max(0.0) });
            let role = self.links[h.link].role;
            if role == LinkRole::Arm || h.part != target {
                report.unexpected_collision = true;
                continue;
            }
            report.target_contact = true;
            match role {
                LinkRole::Palm => report.palm_contact = true,
                LinkRole::Finger(i) if !fingers.contains(&i) => fingers.push(i),
                _ => {}
            }
        }
        report.finger_contact_count = fingers.len();
        report.closure = match self.robot.effector.kind() {
            EffectorKind::Gripper => {
                let on_target = |f: usize| {
                    hits.iter().filter(move |h| h.distance < eps && h.part == target && self.links[h.link].role == LinkRole::Finger(f))
                };
                on_target(0).any(|a| on_target(1).any(|b| a.normal.dot(&b.normal) < -0.5))
            }
            EffectorKind::Hand => report.palm_contact && report.finger_contact_count >= 2,
            EffectorKind::Suction => false,
        };
        if let Effector::Suction { alignment, .. } = &self.robot.effector {
            let part = self.part_pose(s, target);
            if let Some(p) = self.colliders[target].proximity(&part.inverse().apply(&pose.tip), eps) {
                let inward = -part.apply_vector(&p.normal);
                report.tip_on_target = p.distance <= eps && pose.axis.dot(&inward) >= alignment.cos();
            }
        }
        report
    }
}
