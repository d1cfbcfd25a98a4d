//! Serial arm plus end effector, described as collision spheres on links.
//!
//! The tool frame has x along the approach direction and z along the
//! gripper's finger spread. At `q = 0` the default arm holds the flange at
//! (0.491, 0, 0.649) with the tool pointing along world +x.

use serde::{Deserialize, Serialize};

use crate::eigengrasp::GraspHand;
use crate::geometry::{rotation_about, Point3, RigidTransform, Vector3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Point3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(x: f64, y: f64, z: f64, radius: f64) -> Sphere {
        Sphere { center: Point3::new(x, y, z), radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmJoint {
    /// Offset from the previous joint frame.
    pub origin: Vector3,
    pub axis: Vector3,
    pub lower: f64,
    pub upper: f64,
    /// In this joint's frame, after its rotation.
    #[serde(default)]
    pub spheres: Vec<Sphere>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arm {
    Serial { base: RigidTransform, joints: Vec<ArmJoint>, flange: RigidTransform },
    /// The tool pose itself: (x, y, z, roll, pitch, yaw).
    FreeFlying { lower: [f64; 6], upper: [f64; 6] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerJointRole {
    Spread,
    Flex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerJoint {
    pub axis: Vector3,
    pub role: FingerJointRole,
    pub lower: f64,
    pub upper: f64,
    /// Segment length along the rotated x axis.
    pub length: f64,
    /// In the segment frame, before the length offset.
    #[serde(default)]
    pub spheres: Vec<Sphere>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finger {
    pub name: String,
    /// Finger base in the tool frame.
    pub base: RigidTransform,
    pub joints: Vec<FingerJoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectorKind {
    Suction,
    Gripper,
    Hand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effector {
    Suction {
        cup: Vec<Sphere>,
        /// Virtual tip and suction direction, tool frame.
        tip: Point3,
        axis: Vector3,
        /// Largest angle between the suction axis and the inward surface
        /// normal that still counts as aligned, radians.
        alignment: f64,
    },
    Gripper {
        palm: Vec<Sphere>,
        /// Left finger spheres at zero opening; the right finger mirrors them.
        finger: Vec<Sphere>,
        spread_axis: Vector3,
        max_opening: f64,
        grasp_center: Point3,
    },
    Hand {
        palm: Vec<Sphere>,
        palm_center: Point3,
        fingers: Vec<Finger>,
    },
}

impl Effector {
    pub fn kind(&self) -> EffectorKind {
        match self {
            Effector::Suction { .. } => EffectorKind::Suction,
            Effector::Gripper { .. } => EffectorKind::Gripper,
            Effector::Hand { .. } => EffectorKind::Hand,
        }
    }

    pub fn dof(&self) -> usize {
        match self {
            Effector::Suction { .. } => 0,
            Effector::Gripper { .. } => 1,
            Effector::Hand { fingers, .. } => fingers.iter().map(|f| f.joints.len()).sum(),
        }
    }

    fn limits(&self) -> Vec<(f64, f64)> {
        match self {
            Effector::Suction { .. } => vec![],
            Effector::Gripper { max_opening, .. } => vec![(0.0, *max_opening)],
            Effector::Hand { fingers, .. } => fingers.iter().flat_map(|f| f.joints.iter().map(|j| (j.lower, j.upper))).collect(),
        }
    }

    /// Tool-frame point that welds to a grasped part.
    pub fn weld_point(&self) -> Point3 {
        match self {
            Effector::Suction { tip, .. } => *tip,
            Effector::Gripper { grasp_center, .. } => *grasp_center,
            Effector::Hand { palm_center, .. } => *palm_center,
        }
    }

    pub fn default_suction() -> Effector {
        Effector::Suction {
            cup: vec![Sphere::new(0.03, 0.0, 0.0, 0.02), Sphere::new(0.09, 0.0, 0.0, 0.012)],
            tip: Point3::new(0.102, 0.0, 0.0),
            axis: Vector3::x(),
            alignment: 15f64.to_radians(),
        }
    }

    pub fn default_gripper() -> Effector {
        Effector::Gripper {
            palm: vec![Sphere::new(0.03, 0.0, 0.02, 0.022), Sphere::new(0.03, 0.0, -0.02, 0.022)],
            finger: vec![Sphere::new(0.065, 0.0, 0.0, 0.01), Sphere::new(0.08, 0.0, 0.0, 0.01), Sphere::new(0.095, 0.0, 0.0, 0.01)],
            spread_axis: Vector3::z(),
            max_opening: 0.08,
            grasp_center: Point3::new(0.09, 0.0, 0.0),
        }
    }

    /// Four fingers with a spread joint and three flexion joints each.
    pub fn four_finger_hand() -> Effector {
        let mut fingers = Vec::new();
        for (i, y) in [-0.03, 0.0, 0.03].into_iter().enumerate() {
            fingers.push(finger(&format!("finger_{i}"), Point3::new(0.05, y, 0.03), false, &[0.03, 0.025, 0.02], true));
        }
        fingers.push(finger("thumb", Point3::new(0.05, 0.0, -0.03), true, &[0.03, 0.025, 0.02], true));
        hand(fingers)
    }

    /// Five fingers, twelve joints: thumb and index have a spread joint and
    /// two flexion joints, the other three fingers two flexion joints.
    pub fn five_finger_hand() -> Effector {
        let mut fingers = vec![finger("thumb", Point3::new(0.05, 0.0, -0.03), true, &[0.035, 0.03], true)];
        for (i, y) in [-0.036, -0.012, 0.012, 0.036].into_iter().enumerate() {
            fingers.push(finger(&format!("finger_{i}"), Point3::new(0.05, y, 0.03), false, &[0.035, 0.03], i == 0));
        }
        hand(fingers)
    }

    /// Joint limits and finger grouping for grasp synthesis.
    pub fn grasp_hand(&self, name: &str) -> Option<GraspHand> {
        let Effector::Hand { fingers, .. } = self else { return None };
        let mut g = GraspHand { name: name.into(), lower: vec![], upper: vec![], fingers: vec![], spread: vec![] };
        for f in fingers {
            let mut flex = Vec::new();
            for j in &f.joints {
                let idx = g.lower.len();
                g.lower.push(j.lower);
                g.upper.push(j.upper);
                match j.role {
                    FingerJointRole::Spread => g.spread.push(idx),
                    FingerJointRole::Flex => flex.push(idx),
                }
            }
            g.fingers.push(flex);
        }
        Some(g)
    }
}

fn hand(fingers: Vec<Finger>) -> Effector {
    Effector::Hand {
        palm: vec![Sphere::new(0.035, -0.02, 0.0, 0.02), Sphere::new(0.035, 0.02, 0.0, 0.02)],
        palm_center: Point3::new(0.055, 0.0, 0.0),
        fingers,
    }
}

/// Straight finger along tool +x. Upper fingers curl toward −z, the thumb
/// toward +z.
fn finger(name: &str, base: Point3, thumb: bool, lengths: &[f64], spread: bool) -> Finger {
    let flex_axis = if thumb { -Vector3::y() } else { Vector3::y() };
    let mut joints = Vec::new();
    if spread {
        joints.push(FingerJoint { axis: Vector3::z(), role: FingerJointRole::Spread, lower: -0.3, upper: 0.3, length: 0.0, spheres: vec![] });
    }
    for &len in lengths {
        joints.push(FingerJoint {
            axis: flex_axis,
            role: FingerJointRole::Flex,
            lower: 0.0,
            upper: 1.6,
            length: len,
            spheres: vec![Sphere::new(0.5 * len, 0.0, 0.0, 0.008), Sphere::new(len, 0.0, 0.0, 0.008)],
        });
    }
    Finger { name: name.into(), base: RigidTransform::from_translation(base.coords), joints }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkRole {
    Arm,
    Palm,
    Finger(usize),
    Cup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkInfo {
    pub name: String,
    pub role: LinkRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub arm: Arm,
    pub effector: Effector,
}

/// Everything FK produces for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotPose {
    pub tool: RigidTransform,
    /// World centre and radius of every collision sphere, with its link index.
    pub spheres: Vec<(usize, Point3, f64)>,
    pub weld_point: Point3,
    /// Suction virtual tip and axis; tool origin and x axis otherwise.
    pub tip: Point3,
    pub axis: Vector3,
}

impl RobotSpec {
    /// 7R chain: base yaw, shoulder pitch, upper-arm roll, elbow, forearm
    /// roll, wrist pitch, tool roll. The elbow is built bent so the forearm
    /// points forward at zero.
    pub fn seven_dof(effector: Effector) -> RobotSpec {
        let j = |origin: Vector3, axis: Vector3, lim: f64, spheres: Vec<Sphere>| ArmJoint { origin, axis, lower: -lim, upper: lim, spheres };
        let joints = vec![
            j(Vector3::new(0.0, 0.0, 0.333), Vector3::z(), 2.8, vec![]),
            j(Vector3::zeros(), Vector3::y(), 1.7, vec![Sphere::new(0.0, 0.0, 0.1, 0.06), Sphere::new(0.0, 0.0, 0.22, 0.06)]),
            j(Vector3::new(0.0, 0.0, 0.316), Vector3::z(), 2.8, vec![]),
            j(Vector3::zeros(), Vector3::y(), 2.0, vec![Sphere::new(0.08, 0.0, 0.0, 0.05), Sphere::new(0.18, 0.0, 0.0, 0.05)]),
            j(Vector3::new(0.384, 0.0, 0.0), Vector3::x(), 2.8, vec![Sphere::new(-0.1, 0.0, 0.0, 0.045)]),
            j(Vector3::zeros(), Vector3::y(), 2.0, vec![]),
            j(Vector3::new(0.107, 0.0, 0.0), Vector3::x(), 2.8, vec![]),
        ];
        RobotSpec { arm: Arm::Serial { base: RigidTransform::identity(), joints, flange: RigidTransform::identity() }, effector }
    }

    pub fn free_flying(effector: Effector) -> RobotSpec {
        let lim = std::f64::consts::PI;
        RobotSpec { arm: Arm::FreeFlying { lower: [-10.0, -10.0, -10.0, -lim, -lim, -lim], upper: [10.0, 10.0, 10.0, lim, lim, lim] }, effector }
    }

    pub fn arm_dof(&self) -> usize {
        match &self.arm {
            Arm::Serial { joints, .. } => joints.len(),
            Arm::FreeFlying { .. } => 6,
        }
    }

    pub fn dof(&self) -> usize {
        self.arm_dof() + self.effector.dof()
    }

    pub fn limits(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.dof());
        let mut hi = Vec::with_capacity(self.dof());
        match &self.arm {
            Arm::Serial { joints, .. } => joints.iter().for_each(|j| {
                lo.push(j.lower);
                hi.push(j.upper);
            }),
            Arm::FreeFlying { lower, upper } => {
                lo.extend_from_slice(lower);
                hi.extend_from_slice(upper);
            }
        }
        for (l, h) in self.effector.limits() {
            lo.push(l);
            hi.push(h);
        }
        (lo, hi)
    }

    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = self.limits();
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err("joint limits must be finite with lower <= upper".into());
        }
        let radii_ok = |s: &[Sphere]| s.iter().all(|s| s.radius > 0.0);
        let arm_ok = match &self.arm {
            Arm::Serial { joints, .. } => joints.iter().all(|j| radii_ok(&j.spheres) && j.axis.norm() > 0.0),
            Arm::FreeFlying { .. } => true,
        };
        let eff_ok = match &self.effector {
            Effector::Suction { cup, axis, .. } => radii_ok(cup) && axis.norm() > 0.0,
            Effector::Gripper { palm, finger, .. } => radii_ok(palm) && radii_ok(finger) && !finger.is_empty(),
            Effector::Hand { palm, fingers, .. } => {
                !palm.is_empty() && radii_ok(palm) && fingers.len() >= 3 && fingers.iter().all(|f| f.joints.iter().all(|j| radii_ok(&j.spheres)))
            }
        };
        if !(arm_ok && eff_ok) {
            return Err("collision spheres need positive radii; hands need a palm and at least 3 fingers".into());
        }
        Ok(())
    }

    /// Link names and roles, indexed as in `RobotPose::spheres`.
    pub fn links(&self) -> Vec<LinkInfo> {
        let mut out = Vec::new();
        if let Arm::Serial { joints, .. } = &self.arm {
            for i in 0..joints.len() {
                out.push(LinkInfo { name: format!("link{}", i + 1), role: LinkRole::Arm });
            }
        }
        match &self.effector {
            Effector::Suction { .. } => out.push(LinkInfo { name: "cup".into(), role: LinkRole::Cup }),
            Effector::Gripper { .. } => {
                out.push(LinkInfo { name: "palm".into(), role: LinkRole::Palm });
                out.push(LinkInfo { name: "finger_left".into(), role: LinkRole::Finger(0) });
                out.push(LinkInfo { name: "finger_right".into(), role: LinkRole::Finger(1) });
            }
            Effector::Hand { fingers, .. } => {
                out.push(LinkInfo { name: "palm".into(), role: LinkRole::Palm });
                for (i, f) in fingers.iter().enumerate() {
                    out.push(LinkInfo { name: f.name.clone(), role: LinkRole::Finger(i) });
                }
            }
        }
        out
    }

    /// World pose of the tool for the arm part of `q`.
    pub fn tool_pose(&self, q: &[f64]) -> RigidTransform {
        match &self.arm {
            Arm::Serial { base, joints, flange } => {
                let mut frame = *base;
                for (j, v) in joints.iter().zip(q) {
                    frame = frame.compose(&RigidTransform::new(rotation_about(&j.axis, *v), j.origin));
                }
                frame.compose(flange)
            }
            Arm::FreeFlying { .. } => RigidTransform::from_rpy(Vector3::new(q[0], q[1], q[2]), q[3], q[4], q[5]),
        }
    }

    pub fn weld_point(&self, q: &[f64]) -> Point3 {
        self.tool_pose(q).apply(&self.effector.weld_point())
    }

    /// Full FK; `q` holds arm joints followed by effector joints.
    pub fn pose(&self, q: &[f64]) -> RobotPose {
        let mut spheres = Vec::with_capacity(32);
        let mut link = 0;
        let tool = match &self.arm {
            Arm::Serial { base, joints, flange } => {
                let mut frame = *base;
                for (j, v) in joints.iter().zip(q) {
                    frame = frame.compose(&RigidTransform::new(rotation_about(&j.axis, *v), j.origin));
                    for s in &j.spheres {
                        spheres.push((link, frame.apply(&s.center), s.radius));
                    }
                    link += 1;
                }
                frame.compose(flange)
            }
            Arm::FreeFlying { .. } => self.tool_pose(q),
        };
        let eq = &q[self.arm_dof()..];
        let (tip, axis) = match &self.effector {
            Effector::Suction { cup, tip, axis, .. } => {
                for s in cup {
                    spheres.push((link, tool.apply(&s.center), s.radius));
                }
                (tool.apply(tip), tool.apply_vector(&axis.normalize()))
            }
            Effector::Gripper { palm, finger, spread_axis, .. } => {
                for s in palm {
                    spheres.push((link, tool.apply(&s.center), s.radius));
                }
                let half = spread_axis.normalize() * (eq[0] / 2.0);
                for s in finger {
                    spheres.push((link + 1, tool.apply(&(s.center + half)), s.radius));
                }
                for s in finger {
                    let mirrored = Point3::from(s.center.coords - 2.0 * spread_axis.normalize() * spread_axis.normalize().dot(&s.center.coords));
                    spheres.push((link + 2, tool.apply(&(mirrored - half)), s.radius));
                }
                (tool.translation.into(), tool.apply_vector(&Vector3::x()))
            }
            Effector::Hand { palm, fingers, .. } => {
                for s in palm {
                    spheres.push((link, tool.apply(&s.center), s.radius));
                }
                let mut k = 0;
                for (i, f) in fingers.iter().enumerate() {
                    let mut frame = tool.compose(&f.base);
                    for j in &f.joints {
                        frame = frame.compose(&RigidTransform::new(rotation_about(&j.axis, eq[k]), Vector3::zeros()));
                        for s in &j.spheres {
                            spheres.push((link + 1 + i, frame.apply(&s.center), s.radius));
                        }
                        frame = frame.compose(&RigidTransform::from_translation(Vector3::new(j.length, 0.0, 0.0)));
                        k += 1;
                    }
                }
                (tool.translation.into(), tool.apply_vector(&Vector3::x()))
            }
        };
        RobotPose { tool, spheres, weld_point: tool.apply(&self.effector.weld_point()), tip, axis }
    }

    /// Position Jacobian of the weld point with respect to the arm joints,
    /// by forward differences. Returned row-major, 3 × arm_dof.
    pub fn weld_jacobian(&self, q: &[f64]) -> Vec<[f64; 3]> {
        let n = self.arm_dof();
        let base = self.weld_point(q);
        let mut work = q.to_vec();
        let h = 1e-7;
        (0..n)
            .map(|i| {
                let keep = work[i];
                work[i] = keep + h;
                let d = (self.weld_point(&work) - base) / h;
                work[i] = keep;
                [d.x, d.y, d.z]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn home_pose_is_locked() {
        let r = RobotSpec::seven_dof(Effector::default_gripper());
        let q = vec![0.0; 8];
        let tool = r.tool_pose(&q);
        assert!((tool.translation - Vector3::new(0.491, 0.0, 0.649)).norm() < 1e-12);
        assert!((tool.apply_vector(&Vector3::x()) - Vector3::x()).norm() < 1e-12);
        assert!((r.weld_point(&q) - Point3::new(0.581, 0.0, 0.649)).norm() < 1e-12);
        assert_eq!(r.dof(), 8);
    }

    #[test]
    fn base_yaw_rotates_downstream_links() {
        let r = RobotSpec::seven_dof(Effector::default_gripper());
        let q0 = vec![0.1, 0.3, -0.2, 0.4, 0.1, -0.3, 0.2, 0.05];
        let mut q1 = q0.clone();
        q1[0] += 0.7;
        let (a, b) = (r.pose(&q0), r.pose(&q1));
        let rot = RigidTransform::about_axis(&Vector3::z(), &Point3::origin(), 0.7);
        for ((_, p, _), (_, q, _)) in a.spheres.iter().zip(&b.spheres) {
            assert!((rot.apply(p) - q).norm() < 1e-12);
        }
    }

    #[test]
    fn suction_tip_on_axis() {
        let r = RobotSpec::seven_dof(Effector::default_suction());
        let q = vec![0.2, -0.1, 0.3, 0.5, -0.2, 0.4, 0.1];
        let p = r.pose(&q);
        let off = p.tip.coords - p.tool.translation;
        assert!((off.cross(&p.axis)).norm() < 1e-12);
        assert!((off.norm() - 0.102).abs() < 1e-12);
    }

    #[test]
    fn gripper_fingers_open_symmetrically() {
        let r = RobotSpec::seven_dof(Effector::default_gripper());
        let mut q = vec![0.0; 8];
        q[7] = 0.06;
        let p = r.pose(&q);
        let left: Vec<_> = p.spheres.iter().filter(|s| s.0 == 8).collect();
        let right: Vec<_> = p.spheres.iter().filter(|s| s.0 == 9).collect();
        for (l, rr) in left.iter().zip(&right) {
            assert!(((l.1 - rr.1).norm() - 0.06).abs() < 1e-12);
        }
    }

    #[test]
    fn hands_have_expected_dof() {
        assert_eq!(Effector::four_finger_hand().dof(), 16);
        assert_eq!(Effector::five_finger_hand().dof(), 12);
        let g = Effector::five_finger_hand().grasp_hand("five").unwrap();
        assert_eq!(g.spread.len(), 2);
        assert_eq!(g.fingers.iter().map(|f| f.len()).sum::<usize>(), 10);
        RobotSpec::seven_dof(Effector::four_finger_hand()).validate().unwrap();
    }

    #[test]
    fn spec_json_round_trip() {
        let r = RobotSpec::seven_dof(Effector::four_finger_hand());
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<RobotSpec>(&text).unwrap(), r);
    }
}
