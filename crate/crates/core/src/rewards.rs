//! Per-effector reward families, evaluated on a single simulator state.
//!
//! The distance term is stored unsigned in the breakdown and subtracted from
//! the total, so getting closer always pays.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::JointKind;
use crate::sim::{EffectorKind, SimState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("reward family for {expected:?} called with a {got:?} configuration")]
    WrongEffector { expected: EffectorKind, got: EffectorKind },
    #[error("invalid reward configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub effector: EffectorKind,
    /// Index into the object's joint state.
    pub target_joint: usize,
    pub s_initial: f64,
    pub s_target: f64,
    pub epsilon: f64,
    pub psi: f64,
    pub w_success: f64,
    pub w_target: f64,
    pub w_contact: f64,
    pub w_collision: f64,
    pub w_dist: f64,
    pub w_accel: f64,
    pub w_vel: f64,
    /// Weight on the Cartesian tracking error (hand).
    pub w_cartesian: f64,
    pub w_dir: f64,
}

/// Success threshold for a joint of the given kind: metres or radians.
pub fn default_epsilon(kind: JointKind) -> f64 {
    match kind {
        JointKind::Prismatic => 0.005,
        JointKind::Revolute => 0.02,
    }
}

impl RewardConfig {
    pub fn new(effector: EffectorKind, joint_kind: JointKind, target_joint: usize, s_initial: f64, s_target: f64) -> RewardConfig {
        let mut c = RewardConfig {
            effector,
            target_joint,
            s_initial,
            s_target,
            epsilon: default_epsilon(joint_kind),
            psi: 15f64.to_radians(),
            w_success: 20.0,
            w_target: 50.0,
            w_contact: 10.0,
            w_collision: 60.0,
            w_dist: 10.0,
            w_accel: 0.01,
            w_vel: 0.03,
            w_cartesian: 0.0,
            w_dir: 5.0,
        };
        if effector == EffectorKind::Hand {
            c.w_cartesian = 0.001;
            c.w_vel = 0.01;
            c.w_accel = 0.0;
        }
        c
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let w = [
            self.w_success, self.w_target, self.w_contact, self.w_collision, self.w_dist, self.w_accel, self.w_vel, self.w_cartesian, self.w_dir,
        ];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(RewardError::InvalidConfig("weights must be non-negative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(RewardError::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.psi > 0.0 && self.psi < std::f64::consts::FRAC_PI_2) {
            return Err(RewardError::InvalidConfig("psi must lie in (0, pi/2)".into()));
        }
        if self.s_target == self.s_initial {
            return Err(RewardError::InvalidConfig("s_target equals s_initial".into()));
        }
        Ok(())
    }

    pub fn succeeded(&self, s: f64) -> bool {
        (self.s_target - s).abs() < self.epsilon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_success: f64,
    pub r_target: f64,
    pub r_contact: f64,
    /// `ω_d‖·‖²`, unsigned; enters the total negated.
    pub r_dist: f64,
    pub r_reg: f64,
    pub r_dir: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn finish(mut self) -> Self {
        self.total = self.r_success + self.r_target + self.r_contact - self.r_dist + self.r_reg + self.r_dir;
        self
    }
}

fn check(cfg: &RewardConfig, expected: EffectorKind) -> Result<(), RewardError> {
    if cfg.effector != expected {
        return Err(RewardError::WrongEffector { expected, got: cfg.effector });
    }
    Ok(())
}

fn shared(state: &SimState, cfg: &RewardConfig) -> RewardBreakdown {
    let s = state.object_s.values[cfg.target_joint];
    let span = cfg.s_target - cfg.s_initial;
    let d = state.observation.grasp_point - state.observation.target_point;
    RewardBreakdown {
        r_success: if cfg.succeeded(s) { cfg.w_success } else { 0.0 },
        // mirrored past the goal so overshooting never pays
        r_target: -cfg.w_target * ((cfg.s_target - s) / span).abs(),
        r_dist: cfg.w_dist * d.norm_squared(),
        ..Default::default()
    }
}

/// Contact reward for suction and gripper: collision is penalised first,
/// then contact with the target pays once the part has made progress.
fn gated_contact(state: &SimState, cfg: &RewardConfig) -> f64 {
    let s = state.object_s.values[cfg.target_joint];
    let ratio = (s - cfg.s_target).abs() / (cfg.s_target - cfg.s_initial).abs();
    if state.contact.unexpected_collision {
        -cfg.w_collision
    } else if state.contact.target_contact && ratio < 1.0 {
        cfg.w_contact
    } else {
        0.0
    }
}

pub fn reward_suction(state: &SimState, cfg: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    check(cfg, EffectorKind::Suction)?;
    let mut r = shared(state, cfg);
    r.r_contact = gated_contact(state, cfg);
    let (v, n) = (state.observation.suction_axis, state.observation.target_approach);
    let denom = v.norm() * n.norm();
    if denom > 0.0 && v.dot(&n) / denom >= cfg.psi.cos() {
        r.r_dir = cfg.w_dir;
    }
    Ok(r.finish())
}

pub fn reward_gripper(state: &SimState, cfg: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    check(cfg, EffectorKind::Gripper)?;
    let mut r = shared(state, cfg);
    r.r_contact = gated_contact(state, cfg);
    r.r_reg = -state
        .last_q_acceleration
        .iter()
        .zip(&state.last_q_velocity)
        .map(|(a, v)| cfg.w_accel * a.abs() + cfg.w_vel * v.abs())
        .sum::<f64>();
    Ok(r.finish())
}

pub fn reward_hand(state: &SimState, cfg: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    check(cfg, EffectorKind::Hand)?;
    let mut r = shared(state, cfg);
    let c = &state.contact;
    r.r_contact = if c.palm_contact && c.finger_contact_count >= 2 { cfg.w_contact } else { 0.0 };
    r.r_reg = -cfg.w_cartesian * state.observation.cartesian_error - state.last_q_velocity.iter().map(|v| cfg.w_vel * v.abs()).sum::<f64>();
    Ok(r.finish())
}

/// Dispatches on the configured effector.
pub fn reward(state: &SimState, cfg: &RewardConfig) -> RewardBreakdown {
    match cfg.effector {
        EffectorKind::Suction => reward_suction(state, cfg),
        EffectorKind::Gripper => reward_gripper(state, cfg),
        EffectorKind::Hand => reward_hand(state, cfg),
    }
    .expect("effector kind matches by construction")
}
