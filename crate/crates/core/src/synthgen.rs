//! Procedural box-assembly objects with known articulation, plus the
//! observations an interaction sequence would produce: tracked point clouds,
//! depth and mask renders, and the contact point of each interaction.
//!
//! Objects face −x in their own frame. Frame `k` (k ≥ 1) moves part `k`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraExtrinsics, CameraIntrinsics, DepthMap, GeometryError, Mask, Point3, PointCloud, RigidTransform, Vector3};
use crate::io::{self, CameraFile, IoError};
use crate::model::{urdf, ArticulatedModel, ConvexPiece, Joint, JointState, ModelError, Part, Triangle};
use crate::scale::render_depth;
use crate::sim::Collider;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Drawer,
    Cabinet,
    Laptop,
    Lamp,
    TwoDoorCabinet,
    Fridge,
}

impl Category {
    pub const ALL: [Category; 6] = [Category::Drawer, Category::Cabinet, Category::Laptop, Category::Lamp, Category::TwoDoorCabinet, Category::Fridge];

    pub fn name(&self) -> &'static str {
        match self {
            Category::Drawer => "drawer",
            Category::Cabinet => "cabinet",
            Category::Laptop => "laptop",
            Category::Lamp => "lamp",
            Category::TwoDoorCabinet => "two_door_cabinet",
            Category::Fridge => "fridge",
        }
    }
}

/// Interaction targets on a movable part, in its frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartTargets {
    /// Handle centre (or free edge when there is no handle).
    pub grasp: Point3,
    /// A flat spot on the part's front face, for suction.
    pub face: Point3,
    /// Inward normal of that face.
    pub approach: Vector3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blueprint {
    /// Part 0 is the fixed body; parts hang off it in interaction order.
    pub pieces: Vec<Vec<ConvexPiece>>,
    pub joints: Vec<Joint>,
    pub targets: Vec<PartTargets>,
    pub default_frames: Vec<Vec<f64>>,
}

fn cuboid(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> ConvexPiece {
    ConvexPiece::cuboid(Point3::new(x.0, y.0, z.0), Point3::new(x.1, y.1, z.1))
}

fn front_targets(grasp: Point3, face: Point3) -> PartTargets {
    PartTargets { grasp, face, approach: Vector3::x() }
}

/// Door hinged on a vertical axis `gap` in front of the body. `side` −1
/// hinges on the −y edge, +1 on the +y edge; opening swings toward −x.
fn door(y: (f64, f64), z: (f64, f64), side: f64, handle_y: (f64, f64), handle_z: (f64, f64)) -> (Vec<ConvexPiece>, Joint, PartTargets) {
    let hinge_y = if side < 0.0 { y.0 - 0.02 } else { y.1 + 0.02 };
    let joint = Joint::revolute(Vector3::z() * -side, Point3::new(-0.05, hinge_y, 0.0), 0.0, 1.8);
    let pieces = vec![cuboid((-0.05, -0.03), y, z), cuboid((-0.08, -0.05), handle_y, handle_z)];
    let hy = 0.5 * (handle_y.0 + handle_y.1);
    let hz = 0.5 * (handle_z.0 + handle_z.1);
    let fz = if z.1 - hz > hz - z.0 { 0.5 * (hz + z.1) } else { 0.5 * (hz + z.0) };
    (pieces, joint, front_targets(Point3::new(-0.065, hy, hz), Point3::new(-0.05, hy, fz)))
}

fn drawer_part(y: (f64, f64), z: (f64, f64), handle_y: (f64, f64), handle_z: (f64, f64)) -> (Vec<ConvexPiece>, Joint, PartTargets) {
    let joint = Joint::prismatic(-Vector3::x(), 0.0, 0.3);
    let pieces = vec![cuboid((-0.02, 0.0), y, z), cuboid((-0.05, -0.02), handle_y, handle_z)];
    let hz = 0.5 * (handle_z.0 + handle_z.1);
    let fz = 0.5 * (handle_z.1 + z.1);
    (pieces, joint, front_targets(Point3::new(-0.035, 0.5 * (handle_y.0 + handle_y.1), hz), Point3::new(-0.02, 0.0, fz)))
}

pub fn blueprint(category: Category) -> Blueprint {
    let mut pieces = Vec::new();
    let mut joints = Vec::new();
    let mut targets = Vec::new();
    let mut add = |(p, j, t): (Vec<ConvexPiece>, Joint, PartTargets)| {
        pieces.push(p);
        joints.push(j);
        targets.push(t);
    };
    let (body, frames) = match category {
        Category::Drawer => {
            add(drawer_part((-0.15, 0.15), (0.2, 0.36), (-0.06, 0.06), (0.27, 0.29)));
            (vec![cuboid((0.0, 0.4), (-0.2, 0.2), (0.0, 0.4))], vec![vec![0.0], vec![0.08]])
        }
        Category::Cabinet => {
            add(door((-0.19, 0.19), (0.02, 0.48), -1.0, (0.08, 0.16), (0.24, 0.26)));
            (vec![cuboid((0.0, 0.4), (-0.2, 0.2), (0.0, 0.5))], vec![vec![0.0], vec![0.44]])
        }
        Category::Laptop => {
            // lid hinged behind and above the base so the parts never touch
            let joint = Joint::revolute(Vector3::y(), Point3::new(0.27, 0.0, 0.05), 0.0, 2.0);
            let lid = cuboid((0.0, 0.25), (-0.17, 0.17), (0.045, 0.055));
            add((vec![lid], joint, PartTargets { grasp: Point3::new(0.0, 0.0, 0.05), face: Point3::new(0.1, 0.0, 0.055), approach: -Vector3::z() }));
            (vec![cuboid((0.0, 0.25), (-0.17, 0.17), (0.0, 0.02))], vec![vec![0.4], vec![0.4 + 25f64.to_radians()]])
        }
        Category::Lamp => {
            let joint = Joint::revolute(Vector3::y(), Point3::new(0.0, 0.0, 0.30), -0.8, 0.8);
            let arm = vec![cuboid((-0.30, -0.05), (-0.015, 0.015), (0.35, 0.38)), cuboid((-0.34, -0.26), (-0.05, 0.05), (0.27, 0.35))];
            add((arm, joint, PartTargets { grasp: Point3::new(-0.3, 0.0, 0.31), face: Point3::new(-0.34, 0.0, 0.31), approach: Vector3::x() }));
            (vec![cuboid((-0.08, 0.08), (-0.08, 0.08), (0.0, 0.03)), cuboid((-0.015, 0.015), (-0.015, 0.015), (0.03, 0.30))], vec![vec![0.0], vec![0.4]])
        }
        Category::TwoDoorCabinet => {
            add(door((-0.29, -0.01), (0.02, 0.48), -1.0, (-0.10, -0.04), (0.24, 0.26)));
            add(door((0.01, 0.29), (0.02, 0.48), 1.0, (0.04, 0.10), (0.24, 0.26)));
            (vec![cuboid((0.0, 0.4), (-0.3, 0.3), (0.0, 0.5))], vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.5, 0.5]])
        }
        Category::Fridge => {
            add(door((-0.24, 0.24), (0.5, 0.88), -1.0, (0.14, 0.20), (0.64, 0.66)));
            add(door((-0.24, 0.24), (0.22, 0.46), 1.0, (-0.20, -0.14), (0.33, 0.35)));
            add(drawer_part((-0.22, 0.22), (0.02, 0.18), (-0.08, 0.08), (0.09, 0.11)));
            (
                vec![cuboid((0.0, 0.4), (-0.25, 0.25), (0.0, 0.9))],
                vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0], vec![0.5, 0.5, 0.0], vec![0.5, 0.5, 0.08]],
            )
        }
    };
    pieces.insert(0, body);
    Blueprint { pieces, joints, targets, default_frames: frames }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Placement {
    pub translation: Vector3,
    pub yaw: f64,
}

impl Placement {
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::from_rpy(self.translation, 0.0, 0.0, self.yaw)
    }
}

fn default_density() -> f64 {
    10_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub category: Category,
    /// Joint values per frame; the category default when absent.
    #[serde(default)]
    pub frames: Option<Vec<Vec<f64>>>,
    /// Surface samples per square metre.
    #[serde(default = "default_density")]
    pub density: f64,
    /// Per-coordinate Gaussian noise, metres.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default)]
    pub camera: Option<CameraFile>,
}

impl SceneRecipe {
    pub fn new(category: Category) -> SceneRecipe {
        SceneRecipe { category, frames: None, density: default_density(), noise: 0.0, seed: 0, placement: Placement::default(), camera: None }
    }

    pub fn frames(&self) -> Vec<Vec<f64>> {
        self.frames.clone().unwrap_or_else(|| blueprint(self.category).default_frames)
    }
}

/// Camera in front of and above the object, looking at its middle.
pub fn default_camera(placement: &Placement) -> (CameraIntrinsics, CameraExtrinsics) {
    let intr = CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).expect("valid intrinsics");
    let t = placement.transform();
    let eye = t.apply(&Point3::new(-0.75, -0.3, 0.75));
    let look = t.apply(&Point3::new(0.2, 0.0, 0.25));
    (intr, CameraExtrinsics::looking_along(eye, look - eye, -t.apply_vector(&Vector3::y())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub state: Vec<f64>,
    pub cloud: PointCloud,
    pub depth: DepthMap,
    pub mask: Mask,
    /// Interaction contact; `None` for the first frame.
    pub contact: Option<Point3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub recipe: SceneRecipe,
    /// Ground truth, joint states at the last frame.
    pub model: ArticulatedModel,
    pub frames: Vec<SceneFrame>,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    pub targets: Vec<PartTargets>,
}

impl Scene {
    pub fn clouds(&self) -> Vec<PointCloud> {
        self.frames.iter().map(|f| f.cloud.clone()).collect()
    }

    pub fn contacts(&self) -> Vec<Point3> {
        self.frames.iter().filter_map(|f| f.contact).collect()
    }

    /// True per-point labels (identical in every frame).
    pub fn labels(&self) -> &[u32] {
        self.frames[0].cloud.labels.as_deref().unwrap_or(&[])
    }
}

/// Model with the given base pose; joint states all zero.
pub fn build_model(category: Category, placement: &Placement) -> Result<ArticulatedModel, SynthError> {
    let bp = blueprint(category);
    let mut parts = vec![Part::root(bp.pieces[0].clone())];
    for (i, j) in bp.joints.iter().enumerate() {
        parts.push(Part::movable(i + 1, 0, *j, bp.pieces[i + 1].clone()));
    }
    Ok(ArticulatedModel::new(category.name(), parts, placement.transform())?)
}

/// World-space triangles of every part at joint values `s`.
pub fn object_mesh(model: &ArticulatedModel, s: &[f64]) -> Vec<Triangle> {
    let poses = model.poses_unchecked(s);
    model
        .parts
        .iter()
        .zip(&poses)
        .flat_map(|(p, pose)| p.geometry.iter().flat_map(move |g| g.triangles.iter().map(move |t| t.map(|v| pose.apply(&v)))))
        .collect()
}

/// Jittered grid over the six faces of a cuboid piece.
fn sample_cuboid(piece: &ConvexPiece, density: f64, rng: &mut ChaCha8Rng, out: &mut Vec<Point3>) {
    let (lo, hi) = piece.bounds();
    let h = 1.0 / density.sqrt();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let (nu, nv) = (((hi[u] - lo[u]) / h).ceil().max(1.0) as usize, ((hi[v] - lo[v]) / h).ceil().max(1.0) as usize);
        let (du, dv) = ((hi[u] - lo[u]) / nu as f64, (hi[v] - lo[v]) / nv as f64);
        for side in [lo[axis], hi[axis]] {
            for i in 0..nu {
                for j in 0..nv {
                    let mut p = Point3::origin();
                    p[axis] = side;
                    p[u] = lo[u] + du * (i as f64 + 0.5 + rng.random_range(-0.3..0.3));
                    p[v] = lo[v] + dv * (j as f64 + 0.5 + rng.random_range(-0.3..0.3));
                    out.push(p);
                }
            }
        }
    }
}

/// Centroid of the face whose outward normal points most toward −x.
fn free_face_centroid(piece: &ConvexPiece) -> Point3 {
    let (lo, hi) = piece.bounds();
    let mut c = Point3::from((lo.coords + hi.coords) / 2.0);
    c.x = lo.x;
    c
}

pub fn generate(recipe: &SceneRecipe) -> Result<Scene, SynthError> {
    let bp = blueprint(recipe.category);
    let frames = recipe.frames();
    let k = bp.joints.len();
    if frames.is_empty() || frames.iter().any(|f| f.len() != k) {
        return Err(SynthError::InvalidRecipe(format!("every frame needs {k} joint values")));
    }
    if !(recipe.noise >= 0.0) || !(recipe.density > 0.0) {
        return Err(SynthError::InvalidRecipe("noise must be >= 0 and density > 0".into()));
    }
    let mut model = build_model(recipe.category, &recipe.placement)?;
    for f in &frames {
        model.check_state(&JointState::new(f.clone()))?;
    }

    // sample in part frames, then drop points buried in other pieces in any frame
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut local: Vec<(usize, usize, Point3)> = Vec::new();
    for (part, pieces) in bp.pieces.iter().enumerate() {
        for (pi, piece) in pieces.iter().enumerate() {
            let mut pts = Vec::new();
            sample_cuboid(piece, recipe.density, &mut rng, &mut pts);
            local.extend(pts.into_iter().map(|p| (part, pi, p)));
        }
    }
    let colliders: Vec<Vec<Collider>> = bp.pieces.iter().map(|ps| ps.iter().map(|p| Collider::new(std::slice::from_ref(p))).collect()).collect();
    let all_poses: Vec<Vec<RigidTransform>> = frames.iter().map(|f| model.poses_unchecked(f)).collect();
    local.retain(|(part, pi, p)| {
        all_poses.iter().all(|poses| {
            let w = poses[*part].apply(p);
            colliders.iter().enumerate().all(|(q, cs)| {
                let inv = poses[q].inverse().apply(&w);
                cs.iter().enumerate().all(|(qi, c)| (q == *part && qi == *pi) || c.proximity(&inv, 1e-9).is_none_or(|h| h.distance > 1e-9))
            })
        })
    });
    let labels: Vec<u32> = local.iter().map(|(part, _, _)| *part as u32).collect();

    let (intr, extr) = match &recipe.camera {
        Some(c) => c.split()?,
        None => default_camera(&recipe.placement),
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(recipe.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, recipe.noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut out = Vec::with_capacity(frames.len());
    for (fi, state) in frames.iter().enumerate() {
        let poses = &all_poses[fi];
        let points: Vec<Point3> = local
            .iter()
            .map(|(part, _, p)| {
                let mut w = poses[*part].apply(p);
                if recipe.noise > 0.0 {
                    for a in 0..3 {
                        w[a] += noise.sample(&mut noise_rng);
                    }
                }
                w
            })
            .collect();
        let cloud = PointCloud::with_labels(points, labels.clone())?;
        let (depth, mask) = render_depth(&object_mesh(&model, state), &extr.transform, 1.0, &intr);
        let contact = (fi > 0).then(|| poses[fi.min(k)].apply(&free_face_centroid(&bp.pieces[fi.min(k)][0])));
        out.push(SceneFrame { state: state.clone(), cloud, depth, mask, contact });
    }
    for (j, v) in frames.last().expect("non-empty").iter().enumerate() {
        model.parts[j + 1].joint.as_mut().expect("movable").state = *v;
    }
    Ok(Scene { recipe: recipe.clone(), model, frames: out, intrinsics: intr, extrinsics: extr, targets: bp.targets })
}

/// Writes `frame_<k>.apc`, `frame_<k>_depth.pgm`, `frame_<k>_mask.pbm`,
/// `camera.json`, `contacts.json` (contact k moves frame k + 1), `recipe.json` and the ground-truth
/// `model.urdf` with its meshes.
pub fn write_scene(scene: &Scene, dir: &Path) -> Result<(), SynthError> {
    for (k, f) in scene.frames.iter().enumerate() {
        io::write_apc(&dir.join(format!("frame_{k}.apc")), &f.cloud)?;
        io::write_depth(&dir.join(format!("frame_{k}_depth.pgm")), &f.depth)?;
        io::write_mask(&dir.join(format!("frame_{k}_mask.pbm")), &f.mask)?;
    }
    io::write_camera(&dir.join("camera.json"), &scene.intrinsics, &scene.extrinsics)?;
    io::write_json(&dir.join("contacts.json"), &scene.contacts())?;
    io::write_json(&dir.join("recipe.json"), &scene.recipe)?;
    urdf::write_package(&scene.model, dir, "model.urdf").map_err(|source| IoError::Io { path: dir.display().to_string(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drawer_labels_follow_the_front() {
        let scene = generate(&SceneRecipe::new(Category::Drawer)).unwrap();
        assert_eq!(scene.frames.len(), 2);
        let (a, b) = (&scene.frames[0].cloud, &scene.frames[1].cloud);
        assert_eq!(a.len(), b.len());
        let labels = scene.labels();
        for ((pa, pb), l) in a.points.iter().zip(&b.points).zip(labels) {
            let d = pb - pa;
            if *l == 1 {
                assert!((d - Vector3::new(-0.08, 0.0, 0.0)).norm() < 1e-12);
            } else {
                assert_eq!(d.norm(), 0.0);
            }
        }
        // both parts present, buried faces removed
        assert!(labels.contains(&1) && labels.contains(&0));
        assert!(a.points.iter().zip(labels).all(|(p, l)| *l == 1 || p.x >= 0.0));
        assert!(!a.points.iter().zip(labels).any(|(p, l)| *l == 1 && p.x.abs() < 1e-12 && p.y.abs() < 0.14 && p.z > 0.21 && p.z < 0.35));
        assert!(scene.frames[1].mask.count() > 1000);
        let c = scene.frames[1].contact.unwrap();
        assert!((c - Point3::new(-0.10, 0.0, 0.28)).norm() < 1e-12);
    }

    #[test]
    fn model_fk_reproduces_clouds() {
        for cat in Category::ALL {
            let scene = generate(&SceneRecipe { seed: 3, ..SceneRecipe::new(cat) }).unwrap();
            let base = &scene.frames[0];
            let poses0 = scene.model.poses_unchecked(&base.state);
            for f in &scene.frames[1..] {
                let poses = scene.model.poses_unchecked(&f.state);
                for (i, p) in f.cloud.points.iter().enumerate() {
                    let l = scene.labels()[i] as usize;
                    let expect = poses[l].apply(&poses0[l].inverse().apply(&base.cloud.points[i]));
                    assert!((expect - p).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_noisy() {
        let r = SceneRecipe { noise: 0.005, seed: 9, ..SceneRecipe::new(Category::Laptop) };
        let a = generate(&r).unwrap();
        assert_eq!(a, generate(&r).unwrap());
        let clean = generate(&SceneRecipe { noise: 0.0, ..r.clone() }).unwrap();
        let dev: f64 = a.frames[0].cloud.points.iter().zip(&clean.frames[0].cloud.points).map(|(p, q)| (p - q).norm_squared()).sum::<f64>()
            / (3 * a.frames[0].cloud.len()) as f64;
        assert!((dev.sqrt() - 0.005).abs() < 0.0003);
    }

    #[test]
    fn multi_part_objects_move_one_part_per_frame() {
        let scene = generate(&SceneRecipe::new(Category::Fridge)).unwrap();
        assert_eq!(scene.model.num_movable(), 3);
        assert_eq!(scene.contacts().len(), 3);
        for k in 1..4 {
            let (a, b) = (&scene.frames[k - 1].cloud, &scene.frames[k].cloud);
            for i in 0..a.len() {
                let moved = (a.points[i] - b.points[i]).norm() > 0.0;
                assert_eq!(moved, scene.labels()[i] == k as u32);
            }
        }
        assert!(generate(&SceneRecipe { frames: Some(vec![vec![0.0]]), ..SceneRecipe::new(Category::Fridge) }).is_err());
    }

    #[test]
    fn scene_files_round_trip() {
        let scene = generate(&SceneRecipe::new(Category::Cabinet)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_scene(&scene, dir.path()).unwrap();
        let cloud = io::read_apc(&dir.path().join("frame_1.apc")).unwrap();
        assert_eq!(cloud.labels, scene.frames[1].cloud.labels);
        let model = urdf::load_urdf(&dir.path().join("model.urdf")).unwrap();
        assert_eq!(model.num_movable(), 1);
        let j = model.parts[1].joint.unwrap();
        assert!((j.axis - Vector3::z()).norm() < 1e-9);
        assert!((j.upper - 1.8).abs() < 1e-9);
    }
}
