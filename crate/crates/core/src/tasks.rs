//! Manipulation tasks over simulated objects and the evaluation suite that
//! runs the planner on them.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigengrasp::{fit_pca, synth_grasp_dataset, EigengraspBasis, EigengraspError};
use crate::geometry::{Point3, Vector3};
use crate::model::{urdf, ArticulatedModel, JointKind, JointState};
use crate::mpc::{plan, Env, ICEMConfig, PlanError, Trajectory};
use crate::rewards::{reward, RewardBreakdown, RewardConfig};
use crate::sim::{ActionSpace, Effector, EffectorKind, RobotSpec, SimConfig, SimError, SimState, TargetSpec, World};
use crate::synthgen::{self, Category, Placement, SynthError};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task: {0}")]
    Invalid(String),
    #[error("unloadable model: {0}")]
    Model(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eigengrasp(#[from] EigengraspError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// The simulator seen through a reward function.
pub struct SimEnv {
    pub world: World,
    pub reward: RewardConfig,
}

impl SimEnv {
    pub fn new(world: World, reward: RewardConfig) -> Result<SimEnv, TaskError> {
        reward.validate().map_err(|e| TaskError::Invalid(e.to_string()))?;
        if reward.effector != world.robot.effector.kind() {
            return Err(TaskError::Invalid("reward effector differs from robot effector".into()));
        }
        if reward.target_joint + 1 != world.target.part {
            return Err(TaskError::Invalid("reward target joint differs from the simulated target part".into()));
        }
        Ok(SimEnv { world, reward })
    }
}

impl Env for SimEnv {
    type State = SimState;

    fn action_dim(&self) -> usize {
        self.world.action_dim()
    }

    fn step(&self, state: &SimState, action: &[f64]) -> SimState {
        self.world.step(state, action).expect("planner actions have the right length and are finite")
    }

    fn reward(&self, state: &SimState) -> RewardBreakdown {
        reward(state, &self.reward)
    }

    fn succeeded(&self, state: &SimState) -> bool {
        self.reward.succeeded(state.object_s.values[self.reward.target_joint])
    }

    fn progress(&self, state: &SimState) -> f64 {
        state.object_s.values[self.reward.target_joint]
    }

    fn goal(&self) -> (f64, f64) {
        (self.reward.s_initial, self.reward.s_target)
    }

    /// The hand reward has no collision term; a colliding hand rollout ends
    /// with the collision weight as penalty instead.
    fn terminal(&self, state: &SimState) -> Option<f64> {
        (self.reward.effector == EffectorKind::Hand && state.contact.unexpected_collision).then_some(self.reward.w_collision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HandModel {
    #[default]
    FourFinger,
    FiveFinger,
}

impl HandModel {
    pub fn effector(&self) -> Effector {
        match self {
            HandModel::FourFinger => Effector::four_finger_hand(),
            HandModel::FiveFinger => Effector::five_finger_hand(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HandModel::FourFinger => "four_finger",
            HandModel::FiveFinger => "five_finger",
        }
    }
}

/// Grasp postures the eigengrasp bases of the standard hands are fitted to.
pub const GRASP_SAMPLES: usize = 2000;

/// PCA basis with `m` components for a standard hand.
pub fn hand_basis(hand: HandModel, m: usize) -> Result<EigengraspBasis, TaskError> {
    let grasp_hand = hand.effector().grasp_hand(hand.name()).expect("hand effector");
    let data = synth_grasp_dataset(&grasp_hand, GRASP_SAMPLES, 0)?;
    Ok(fit_pca(&data, m)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    /// A generated object; ignored when `urdf` is set.
    #[serde(default)]
    pub category: Option<Category>,
    #[serde(default)]
    pub placement: Option<Placement>,
    #[serde(default)]
    pub urdf: Option<PathBuf>,
    pub effector: EffectorKind,
    #[serde(default)]
    pub hand: HandModel,
    /// Eigengrasp components for hand tasks; full joint space when absent.
    #[serde(default)]
    pub eigengrasp_dim: Option<usize>,
    /// Movable part id (1-based).
    pub part: usize,
    pub s_initial: f64,
    pub s_target: f64,
    /// Target point and inward approach in the part frame; generated
    /// objects supply defaults.
    #[serde(default)]
    pub target_point: Option<Point3>,
    #[serde(default)]
    pub approach: Option<Vector3>,
    #[serde(default)]
    pub icem: Option<ICEMConfig>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
}

impl Task {
    pub fn generated(name: &str, category: Category, effector: EffectorKind, s_initial: f64, s_target: f64) -> Task {
        Task {
            name: name.into(),
            category: Some(category),
            placement: None,
            urdf: None,
            effector,
            hand: HandModel::default(),
            eigengrasp_dim: None,
            part: 1,
            s_initial,
            s_target,
            target_point: None,
            approach: None,
            icem: None,
            sim: None,
        }
    }

    pub fn robot(&self) -> RobotSpec {
        RobotSpec::seven_dof(match self.effector {
            EffectorKind::Suction => Effector::default_suction(),
            EffectorKind::Gripper => Effector::default_gripper(),
            EffectorKind::Hand => self.hand.effector(),
        })
    }

    fn model(&self) -> Result<(ArticulatedModel, Option<synthgen::PartTargets>), TaskError> {
        if let Some(path) = &self.urdf {
            let mut model = urdf::load_urdf(path).map_err(|e| TaskError::Model(format!("{}: {e}", path.display())))?;
            if let Some(p) = &self.placement {
                model.base_pose = p.transform();
            }
            return Ok((model, None));
        }
        let category = self.category.ok_or_else(|| TaskError::Invalid("task needs a category or a urdf".into()))?;
        let placement = self.placement.unwrap_or_else(|| default_placement(category));
        let model = synthgen::build_model(category, &placement)?;
        let targets = synthgen::blueprint(category).targets.get(self.part.wrapping_sub(1)).copied();
        Ok((model, targets))
    }

    /// Planner configuration: the task's own, or the effector defaults.
    pub fn icem(&self) -> ICEMConfig {
        self.icem.clone().unwrap_or_else(|| ICEMConfig::for_effector(self.effector))
    }

    /// Simulator, reward and initial state for this task.
    pub fn build(&self) -> Result<(SimEnv, SimState), TaskError> {
        let (model, targets) = self.model()?;
        let joint = model.joint(self.part).ok_or_else(|| TaskError::Invalid(format!("part {} has no joint", self.part)))?;
        let kind = joint.kind;
        let (grasp, face, approach) = match targets {
            Some(t) => (t.grasp, t.face, t.approach),
            None => (Point3::origin(), Point3::origin(), Vector3::x()),
        };
        let default_point = if self.effector == EffectorKind::Suction { face } else { grasp };
        let point = self.target_point.unwrap_or(default_point);
        let approach = self.approach.unwrap_or(approach);
        if targets.is_none() && self.target_point.is_none() {
            return Err(TaskError::Invalid("urdf tasks need a target_point".into()));
        }
        let robot = self.robot();
        let space = match (self.effector, self.eigengrasp_dim) {
            (EffectorKind::Hand, Some(m)) => ActionSpace::Eigengrasp(hand_basis(self.hand, m)?),
            (_, Some(_)) => return Err(TaskError::Invalid("eigengrasp_dim needs a hand effector".into())),
            _ => ActionSpace::Joint,
        };
        let mut values = model.zero_state().values;
        values[self.part - 1] = self.s_initial;
        let world = World::new(model, robot, TargetSpec { part: self.part, point, approach }, space, self.sim.unwrap_or_default())?;
        let q = home_configuration(&world.robot);
        let state = world.initial_state(q, vec![], JointState::new(values))?;
        let cfg = RewardConfig::new(self.effector, kind, self.part - 1, self.s_initial, self.s_target);
        Ok((SimEnv::new(world, cfg)?, state))
    }

    pub fn run(&self, seed: u64) -> Result<(Trajectory, f64), TaskError> {
        let (env, state) = self.build()?;
        let cfg = ICEMConfig { seed, ..self.icem() };
        let start = Instant::now();
        let traj = plan(&env, &state, &cfg)?;
        let per_step = start.elapsed().as_secs_f64() / traj.actions.len().max(1) as f64;
        Ok((traj, per_step))
    }
}

/// Arm at zero, gripper fully open, hand joints at their lower limits.
pub fn home_configuration(robot: &RobotSpec) -> Vec<f64> {
    let (lo, hi) = robot.limits();
    let n = robot.arm_dof();
    let mut q = vec![0.0; robot.dof()];
    for i in n..q.len() {
        q[i] = match robot.effector {
            Effector::Gripper { .. } => hi[i],
            _ => 0f64.clamp(lo[i], hi[i]),
        };
    }
    q
}

/// Where the standard tasks put each object relative to the robot base.
pub fn default_placement(category: Category) -> Placement {
    let (x, z) = match category {
        Category::Drawer => (0.75, 0.0),
        Category::Cabinet => (0.72, 0.1),
        Category::Laptop => (0.5, 0.3),
        Category::Lamp => (0.7, 0.2),
        Category::TwoDoorCabinet => (0.72, 0.1),
        Category::Fridge => (0.75, 0.0),
    };
    Placement { translation: Vector3::new(x, 0.0, z), yaw: 0.0 }
}

/// Open and close tasks for one effector on the given categories.
pub fn open_close_tasks(effector: EffectorKind, categories: &[Category]) -> Vec<Task> {
    let mut out = Vec::new();
    for &c in categories {
        let (closed, open) = match c {
            Category::Drawer => (0.02, 0.10),
            Category::Cabinet => (0.2, 0.8),
            Category::Laptop => (0.5, 1.2),
            _ => continue,
        };
        let tag = match effector {
            EffectorKind::Suction => "suction",
            EffectorKind::Gripper => "gripper",
            EffectorKind::Hand => "hand",
        };
        let mut open_task = Task::generated(&format!("{tag}_{}_open", c.name()), c, effector, closed, open);
        let mut close_task = Task::generated(&format!("{tag}_{}_close", c.name()), c, effector, open, closed);
        if effector == EffectorKind::Hand {
            open_task.eigengrasp_dim = Some(2);
            close_task.eigengrasp_dim = Some(2);
        }
        out.push(open_task);
        out.push(close_task);
    }
    out
}

/// Gripper on drawer, laptop and cabinet; suction and hand on drawer and cabinet.
pub fn standard_suite() -> Vec<Task> {
    let mut tasks = open_close_tasks(EffectorKind::Gripper, &[Category::Drawer, Category::Laptop, Category::Cabinet]);
    tasks.extend(open_close_tasks(EffectorKind::Suction, &[Category::Drawer, Category::Cabinet]));
    tasks.extend(open_close_tasks(EffectorKind::Hand, &[Category::Drawer, Category::Cabinet]));
    tasks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub tasks: Vec<Task>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub delta: f64,
    pub delta_r: f64,
    pub seconds_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub runs: usize,
    pub success_rate: f64,
    /// Mean steps over successful runs; NaN without any.
    pub steps_to_success: f64,
    pub mean_abs_delta: f64,
    pub mean_abs_delta_r: f64,
    pub seconds_per_step: f64,
    pub error: Option<String>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn summarize(task: &str, runs: &[RunRecord]) -> TaskMetrics {
    TaskMetrics {
        task: task.into(),
        runs: runs.len(),
        success_rate: if runs.is_empty() { 0.0 } else { runs.iter().filter(|r| r.success).count() as f64 / runs.len() as f64 },
        steps_to_success: mean(runs.iter().filter(|r| r.success).map(|r| r.steps as f64)),
        mean_abs_delta: mean(runs.iter().map(|r| r.delta.abs())),
        mean_abs_delta_r: mean(runs.iter().map(|r| r.delta_r.abs())),
        seconds_per_step: mean(runs.iter().map(|r| r.seconds_per_step)),
        error: None,
    }
}

/// Runs every task for every seed. A task that cannot be built records its
/// error and the suite moves on.
pub fn evaluate_suite(suite: &Suite) -> (Vec<TaskMetrics>, Vec<RunRecord>) {
    let mut metrics = Vec::new();
    let mut records = Vec::new();
    for task in &suite.tasks {
        let mut runs = Vec::new();
        let mut error = None;
        for &seed in &suite.seeds {
            match task.run(seed) {
                Ok((t, sec)) => runs.push(RunRecord {
                    task: task.name.clone(),
                    seed,
                    success: t.success,
                    steps: t.actions.len(),
                    delta: t.delta,
                    delta_r: t.delta_r,
                    seconds_per_step: sec,
                }),
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let mut m = summarize(&task.name, &runs);
        m.error = error;
        metrics.push(m);
        records.extend(runs);
    }
    (metrics, records)
}

pub fn metrics_csv(metrics: &[TaskMetrics]) -> String {
    let mut out = String::from("task,runs,success_rate,steps_to_success,mean_abs_delta,mean_abs_delta_r,seconds_per_step,error\n");
    for m in metrics {
        let err = m.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        out += &format!(
            "{},{},{},{},{},{},{},\"{}\"\n",
            m.task, m.runs, m.success_rate, m.steps_to_success, m.mean_abs_delta, m.mean_abs_delta_r, m.seconds_per_step, err
        );
    }
    out
}

/// Joint kind of a task's target joint, for choosing ε.
pub fn target_kind(task: &Task) -> Result<JointKind, TaskError> {
    let (model, _) = task.model()?;
    Ok(model.joint(task.part).ok_or_else(|| TaskError::Invalid(format!("part {} has no joint", task.part)))?.kind)
}
