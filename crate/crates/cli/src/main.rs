//! `twinforge`: build articulated digital twins from observations and plan
//! manipulation trajectories against them.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use twinforge::affordance::{self, AffordanceError, AffordanceFile};
use twinforge::eigengrasp::{self, EigengraspBasis, EigengraspError};
use twinforge::geometry::{GeometryError, Point3, PointCloud, Vector3};
use twinforge::io::{self, IoError};
use twinforge::kinematics::{self, FitConfig, FitError, GeometrySource, JointEstimate};
use twinforge::model::{mesh, urdf, ArticulatedModel, JointState, ModelError};
use twinforge::mpc::{self, ICEMConfig, PlanError};
use twinforge::rewards::{RewardConfig, RewardError};
use twinforge::scale::{self, ScaleError, SearchConfig};
use twinforge::segmentation::{self, SegmentConfig, SegmentationError, SegmentationLabels, SubPart};
use twinforge::sim::{ActionSpace, Effector, EffectorKind, RobotSpec, SimConfig, SimError, TargetSpec, World};
use twinforge::synthgen::{self, SceneRecipe, SynthError};
use twinforge::tasks::{self, HandModel, SimEnv, Suite, TaskError};

#[derive(Debug, Error)]
enum CliError {
    #[error("IoError: {0}")]
    Io(#[from] IoError),
    #[error("GeometryError: {0}")]
    Geometry(#[from] GeometryError),
    #[error("SegmentationError: {0}")]
    Segmentation(#[from] SegmentationError),
    #[error("FitError: {0}")]
    Fit(#[from] FitError),
    #[error("ModelError: {0}")]
    Model(#[from] ModelError),
    #[error("UrdfError: {0}")]
    Urdf(#[from] urdf::UrdfError),
    #[error("OffError: {0}")]
    Off(#[from] mesh::OffError),
    #[error("ScaleError: {0}")]
    Scale(#[from] ScaleError),
    #[error("AffordanceError: {0}")]
    Affordance(#[from] AffordanceError),
    #[error("EigengraspError: {0}")]
    Eigengrasp(#[from] EigengraspError),
    #[error("SimError: {0}")]
    Sim(#[from] SimError),
    #[error("RewardError: {0}")]
    Reward(#[from] RewardError),
    #[error("PlanError: {0}")]
    Plan(#[from] PlanError),
    #[error("TaskError: {0}")]
    Task(#[from] TaskError),
    #[error("SynthError: {0}")]
    Synth(#[from] SynthError),
    #[error("invalid input: {0}")]
    Input(String),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "twinforge", version, about = "Articulated digital twins: segmentation, joint fitting, scale alignment, simulation and planning")]
struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `plan` and `eval`; TWINFORGE_WORKERS takes precedence.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Repeat for more progress output on standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Label movable parts across interaction frames.
    ///
    /// Frames are APC point clouds (`x y z [label]` per line after an
    /// `APC1 <n>` header) with index-aligned points. The contacts file is a
    /// JSON list of 3-vectors, one per interaction (frame k+1). Optional
    /// sub-part files hold `{"subparts": [[indices...], ...]}`, one per frame.
    /// Output: `{"labels": [...], "frames": [[...], ...]}`.
    Segment {
        #[arg(long, num_args = 1.., required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        contacts: PathBuf,
        #[arg(long, num_args = 1..)]
        subparts: Vec<PathBuf>,
        /// JSON segmentation config; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one joint per movable label.
    ///
    /// Output joints.json: list of `{part, kind, axis, origin, displacements,
    /// residual}` with `kind` "prismatic" or "revolute" and `origin` null for
    /// prismatic joints.
    FitJoints {
        #[arg(long, num_args = 1.., required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble a URDF model from the final frame, labels and fitted joints.
    ///
    /// Part geometry is the convex hull of each label's final-frame points,
    /// written as OFF meshes next to the URDF.
    BuildModel {
        #[arg(long, num_args = 1.., required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        joints: PathBuf,
        #[arg(long, default_value = "object")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search yaw and translation of a mesh against a mask, then estimate
    /// its metric scale from depth.
    ///
    /// Mesh: OFF. Depth: 16-bit PGM in millimetres. Mask: PBM. Camera:
    /// `{fx, fy, cx, cy, width, height, H}` with H the row-major 4x4
    /// base-to-camera transform. Output: `{yaw, translation, scale, iou}`.
    AlignScale {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value_t = 72)]
        yaw_samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lift a pair of 2D affordances (real and virtual view) to a 3D
    /// contact point and motion direction.
    ///
    /// Affordance files: `{"view": "real"|"virtual", "contact": [u, v],
    /// "trajectory": [du, dv]}`. Output: `{contact, direction}`.
    ProjectAffordance {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        camera_real: PathBuf,
        /// Camera file of the virtual view; its intrinsics are ignored.
        #[arg(long)]
        camera_virtual: Option<PathBuf>,
        #[arg(long)]
        aff_real: PathBuf,
        #[arg(long)]
        aff_virtual: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grasp-posture datasets and eigengrasp bases.
    #[command(subcommand)]
    Eigengrasp(EigengraspCommand),
    /// Plan a trajectory that moves one object joint to a target value.
    ///
    /// robot.json is a robot description (`{"arm": ..., "effector": ...}`);
    /// without it the built-in 7-DoF arm with the chosen effector is used.
    /// icem.json and reward.json may hold any subset of the planner and
    /// reward fields. Output traj.json: actions, per-step reward
    /// breakdowns, success, s_final, delta, delta_r.
    Plan {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long)]
        target_value: f64,
        #[arg(long)]
        icem: Option<PathBuf>,
        #[arg(long)]
        reward: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay an action script and trace every state.
    ///
    /// Script: JSON list of action vectors. Trace: JSON Lines, one
    /// `{"step", "state"}` record per state starting with the initial one.
    Simulate {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run a task suite and write a metrics table.
    ///
    /// Suite: `{"tasks": [...], "seeds": [...]}`; each task names a
    /// generated `category` or a `urdf`, an `effector`, the `part`, and
    /// `s_initial`/`s_target`. Output CSV columns: task, runs, success_rate,
    /// steps_to_success, mean_abs_delta, mean_abs_delta_r, seconds_per_step, error.
    Eval {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON Lines file with one record per run.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Generate a ground-truth articulated object and its observations.
    ///
    /// Recipe: `{"category": "drawer"|"cabinet"|"laptop"|"lamp"|
    /// "two_door_cabinet"|"fridge", "frames", "density", "noise", "seed",
    /// "placement", "camera"}`. Writes frame_<k>.apc, frame_<k>_depth.pgm,
    /// frame_<k>_mask.pbm, camera.json, contacts.json, recipe.json and
    /// model.urdf with its meshes.
    Synthgen {
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum EigengraspCommand {
    /// Sample a synthetic grasp-posture dataset for a built-in hand.
    ///
    /// Output: EGDS binary (magic, u32 N, u32 d, little-endian f64
    /// row-major) plus a `<out>.json` metadata sidecar.
    Synth {
        #[arg(long, value_enum, default_value = "four-finger")]
        hand: HandArg,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a PCA basis with `m` components. Output: basis JSON.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map coefficients to hand joint values. Output: JSON list.
    Reconstruct {
        #[arg(long)]
        basis: PathBuf,
        /// Comma-separated coefficients.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        coeffs: Vec<f64>,
        /// Leave out the mean posture.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HandArg {
    FourFinger,
    FiveFinger,
}

impl From<HandArg> for HandModel {
    fn from(h: HandArg) -> HandModel {
        match h {
            HandArg::FourFinger => HandModel::FourFinger,
            HandArg::FiveFinger => HandModel::FiveFinger,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EffectorArg {
    Suction,
    Gripper,
    Hand,
}

impl From<EffectorArg> for EffectorKind {
    fn from(e: EffectorArg) -> EffectorKind {
        match e {
            EffectorArg::Suction => EffectorKind::Suction,
            EffectorArg::Gripper => EffectorKind::Gripper,
            EffectorArg::Hand => EffectorKind::Hand,
        }
    }
}

#[derive(Args, Debug)]
struct WorldArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    robot: Option<PathBuf>,
    #[arg(long, value_enum)]
    effector: Option<EffectorArg>,
    #[arg(long, value_enum, default_value = "four-finger")]
    hand: HandArg,
    /// Eigengrasp components for a hand (fitted to the built-in dataset).
    #[arg(long)]
    eigengrasp_dim: Option<usize>,
    /// Eigengrasp basis file; overrides --eigengrasp-dim.
    #[arg(long)]
    basis: Option<PathBuf>,
    /// Index of the object joint (movable part id minus one).
    #[arg(long, default_value_t = 0)]
    target_joint: usize,
    #[arg(long)]
    initial_value: Option<f64>,
    /// Target point in the part frame; the part's geometry centre when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    target_point: Option<Vec<f64>>,
    /// Inward approach direction in the part frame.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    approach: Option<Vec<f64>>,
}

fn vec3(v: &[f64], what: &str) -> Result<Vector3> {
    match v {
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(CliError::Input(format!("{what} needs three comma-separated numbers"))),
    }
}

struct Setup {
    world: World,
    state: twinforge::sim::SimState,
    joint_kind: twinforge::model::JointKind,
}

impl WorldArgs {
    fn build(&self) -> Result<Setup> {
        let model = urdf::load_urdf(&self.model)?;
        let robot: RobotSpec = match (&self.robot, self.effector) {
            (Some(p), effector) => {
                let r: RobotSpec = io::read_json(p)?;
                if let Some(e) = effector {
                    if EffectorKind::from(e) != r.effector.kind() {
                        return Err(CliError::Input("--effector differs from the robot file".into()));
                    }
                }
                r
            }
            (None, Some(e)) => RobotSpec::seven_dof(match e {
                EffectorArg::Suction => Effector::default_suction(),
                EffectorArg::Gripper => Effector::default_gripper(),
                EffectorArg::Hand => HandModel::from(self.hand).effector(),
            }),
            (None, None) => return Err(CliError::Input("give --robot or --effector".into())),
        };
        let part = self.target_joint + 1;
        let info = model.parts.get(part).filter(|p| p.joint.is_some()).ok_or_else(|| CliError::Input(format!("no object joint {}", self.target_joint)))?;
        let joint = info.joint.expect("checked");
        let point = match &self.target_point {
            Some(v) => Point3::from(vec3(v, "--target-point")?),
            None => info.geometry_center().unwrap_or_else(Point3::origin),
        };
        let approach = match &self.approach {
            Some(v) => vec3(v, "--approach")?,
            None => Vector3::x(),
        };
        let space = match (&self.basis, self.eigengrasp_dim) {
            (Some(p), _) => ActionSpace::Eigengrasp(io::read_json::<EigengraspBasis>(p)?),
            (None, Some(m)) => ActionSpace::Eigengrasp(tasks::hand_basis(self.hand.into(), m)?),
            (None, None) => ActionSpace::Joint,
        };
        let mut values = model.zero_state().values;
        values[self.target_joint] = self.initial_value.unwrap_or(joint.state).clamp(joint.lower, joint.upper);
        let world = World::new(model, robot, TargetSpec { part, point, approach }, space, SimConfig::default())?;
        let q = tasks::home_configuration(&world.robot);
        let state = world.initial_state(q, vec![], JointState::new(values))?;
        Ok(Setup { world, state, joint_kind: joint.kind })
    }
}

/// Overlays the fields present in `path` onto `base`.
fn merge_json<T: Serialize + serde::de::DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(base) };
    let overlay: serde_json::Value = io::read_json(path)?;
    let mut value = serde_json::to_value(base).map_err(|e| CliError::Input(e.to_string()))?;
    match (value.as_object_mut(), overlay) {
        (Some(obj), serde_json::Value::Object(extra)) => obj.extend(extra),
        _ => return Err(CliError::Input(format!("{}: expected a JSON object", path.display()))),
    }
    serde_json::from_value(value).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_frames(paths: &[PathBuf]) -> Result<Vec<PointCloud>> {
    paths.iter().map(|p| io::read_apc(p).map_err(CliError::from)).collect()
}

#[derive(Deserialize)]
struct SubPartFile {
    subparts: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    step: usize,
    state: &'a twinforge::sim::SimState,
}

fn write_lines<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, &r).map_err(|e| CliError::Input(e.to_string()))?;
        buf.push(b'\n');
    }
    Ok(io::write_bytes(path, &buf)?)
}

fn pool(cli: &Cli) -> Result<twinforge::mpc::ThreadPool> {
    let n = mpc::workers_from_env().or(cli.workers).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok(mpc::worker_pool(n)?)
}

fn run(cli: &Cli) -> Result<()> {
    let log = |level: u8, msg: &str| {
        if cli.verbose >= level {
            let _ = writeln!(std::io::stderr(), "{msg}");
        }
    };
    match &cli.command {
        Command::Segment { frames, contacts, subparts, config, out } => {
            let clouds = read_frames(frames)?;
            let contacts: Vec<Point3> = io::read_json(contacts)?;
            let cfg: SegmentConfig = match config {
                Some(p) => io::read_json(p)?,
                None => SegmentConfig::default(),
            };
            let proposals: Vec<Vec<SubPart>> = subparts
                .iter()
                .map(|p| {
                    let f: SubPartFile = io::read_json(p)?;
                    Ok(f.subparts.into_iter().enumerate().map(|(id, point_indices)| SubPart { id, point_indices }).collect())
                })
                .collect::<Result<_>>()?;
            let sp = (!proposals.is_empty()).then_some(proposals.as_slice());
            let labels = segmentation::segment_movable_parts(&clouds, sp, &contacts, &cfg)?;
            log(1, &format!("{} movable parts", labels.labels.iter().max().copied().unwrap_or(0)));
            io::write_json(out, &labels)?;
        }
        Command::FitJoints { frames, labels, config, out } => {
            let clouds = read_frames(frames)?;
            let labels: SegmentationLabels = io::read_json(labels)?;
            let cfg: FitConfig = match config {
                Some(p) => io::read_json(p)?,
                None => FitConfig::default(),
            };
            let per_frame = (!labels.frames.is_empty()).then_some(labels.frames.as_slice());
            let joints = kinematics::fit_all_joints(&clouds, &labels.labels, per_frame, &cfg)?;
            io::write_json(out, &joints)?;
        }
        Command::BuildModel { frames, labels, joints, name, out } => {
            let clouds = read_frames(frames)?;
            let labels: SegmentationLabels = io::read_json(labels)?;
            let joints: Vec<JointEstimate> = io::read_json(joints)?;
            let last = clouds.last().ok_or_else(|| CliError::Input("no frames".into()))?;
            let model = kinematics::build_model(name, &labels.labels, last, &joints, GeometrySource::Hulls, &FitConfig::default())?;
            write_model(&model, out)?;
        }
        Command::AlignScale { mesh: mesh_path, depth, mask, camera, yaw_samples, out } => {
            let piece = mesh::read_off(&io::read_text(mesh_path)?)?;
            let depth = io::read_depth(depth)?;
            let mask = io::read_mask(mask)?;
            let (intr, extr) = io::read_camera(camera)?;
            let cfg = SearchConfig { yaw_samples: *yaw_samples, ..SearchConfig::default() };
            let pose = scale::align_and_scale(&piece.triangles, &depth, &mask, &intr, &extr, &cfg)?;
            io::write_json(out, &pose)?;
        }
        Command::ProjectAffordance { depth, mask, camera_real, camera_virtual, aff_real, aff_virtual, out } => {
            let depth = io::read_depth(depth)?;
            let mask = io::read_mask(mask)?;
            let (intr, extr_real) = io::read_camera(camera_real)?;
            let extr_virtual = match camera_virtual {
                Some(p) => io::read_camera(p)?.1,
                None => affordance::default_virtual_camera(),
            };
            let real = io::read_json::<AffordanceFile>(aff_real)?.to_pixel()?;
            let virt = io::read_json::<AffordanceFile>(aff_virtual)?.to_pixel()?;
            let lifted = affordance::project_affordance(&depth, &mask, &intr, &extr_real, &extr_virtual, &real, &virt)?;
            io::write_json(out, &lifted)?;
        }
        Command::Eigengrasp(cmd) => match cmd {
            EigengraspCommand::Synth { hand, count, out } => {
                let model = HandModel::from(*hand);
                let grasp_hand = model.effector().grasp_hand(model.name()).expect("built-in hand");
                let data = eigengrasp::synth_grasp_dataset(&grasp_hand, *count, cli.seed.unwrap_or(0))?;
                eigengrasp::write_dataset(out, &data)?;
            }
            EigengraspCommand::Fit { dataset, m, out } => {
                let data = eigengrasp::read_dataset(dataset)?;
                let basis = eigengrasp::fit_pca(&data, *m)?;
                io::write_json(out, &basis)?;
            }
            EigengraspCommand::Reconstruct { basis, coeffs, strict, out } => {
                let basis: EigengraspBasis = io::read_json(basis)?;
                let q = basis.reconstruct(coeffs, !strict)?;
                io::write_json(out, &q)?;
            }
        },
        Command::Plan { world, target_value, icem, reward, out } => {
            let setup = world.build()?;
            let kind = setup.world.robot.effector.kind();
            let s0 = setup.state.object_s.values[world.target_joint];
            let base = RewardConfig::new(kind, setup.joint_kind, world.target_joint, s0, *target_value);
            let mut reward_cfg: RewardConfig = merge_json(base, reward.as_deref())?;
            reward_cfg.target_joint = world.target_joint;
            reward_cfg.s_initial = s0;
            reward_cfg.s_target = *target_value;
            let mut cfg: ICEMConfig = merge_json(ICEMConfig::for_effector(kind), icem.as_deref())?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let traj = if reward_cfg.succeeded(s0) {
                // already there: nothing to plan
                let env = SimEnv { world: setup.world, reward: reward_cfg };
                mpc::plan(&env, &setup.state, &cfg)?
            } else {
                let env = SimEnv::new(setup.world, reward_cfg)?;
                log(1, &format!("planning {} dims, population {}", mpc::Env::action_dim(&env), cfg.population));
                pool(cli)?.install(|| mpc::plan(&env, &setup.state, &cfg))?
            };
            log(1, &format!("success {} after {} steps", traj.success, traj.actions.len()));
            io::write_json(out, &traj)?;
        }
        Command::Simulate { world, script, trace } => {
            let setup = world.build()?;
            let actions: Vec<Vec<f64>> = io::read_json(script)?;
            let mut states = vec![setup.state];
            for a in &actions {
                let next = setup.world.step(states.last().expect("non-empty"), a)?;
                states.push(next);
            }
            write_lines(trace, states.iter().enumerate().map(|(step, state)| TraceRecord { step, state }))?;
        }
        Command::Eval { suite, out, runs } => {
            let mut suite: Suite = io::read_json(suite)?;
            if let Some(seed) = cli.seed {
                suite.seeds = vec![seed];
            }
            let (metrics, records) = pool(cli)?.install(|| tasks::evaluate_suite(&suite));
            for m in &metrics {
                log(1, &format!("{}: success {:.2}", m.task, m.success_rate));
            }
            io::write_bytes(out, tasks::metrics_csv(&metrics).as_bytes())?;
            if let Some(p) = runs {
                write_lines(p, &records)?;
            }
        }
        Command::Synthgen { recipe, out } => {
            let mut recipe: SceneRecipe = io::read_json(recipe)?;
            if let Some(seed) = cli.seed {
                recipe.seed = seed;
            }
            let scene = synthgen::generate(&recipe)?;
            std::fs::create_dir_all(out).map_err(|source| IoError::Io { path: out.display().to_string(), source })?;
            synthgen::write_scene(&scene, out)?;
            log(1, &format!("{} frames, {} points", scene.frames.len(), scene.frames[0].cloud.len()));
        }
    }
    Ok(())
}

fn write_model(model: &ArticulatedModel, out: &Path) -> Result<()> {
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file = out.file_name().and_then(|f| f.to_str()).ok_or_else(|| CliError::Input(format!("bad output path {}", out.display())))?;
    urdf::write_package(model, dir, file).map_err(|source| IoError::Io { path: out.display().to_string(), source })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
