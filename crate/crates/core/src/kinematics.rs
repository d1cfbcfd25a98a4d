//! Joint estimation from per-part rigid motions, and assembly of the fitted
//! joints into an articulated model.

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{fit_rigid_transform, nearest_in_tree, GeometryError, KdTree, Point3, PointCloud, RigidTransform, Vector3};
use crate::model::{ArticulatedModel, ConvexPiece, Joint, JointKind, ModelError, Part};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("insufficient motion (angle {angle_deg:.4}°, translation {translation:.5} m); interact with the part again")]
    InsufficientMotion { angle_deg: f64, translation: f64 },
    #[error("frame pairs disagree on joint kind: {0}")]
    ConflictingEvidence(String),
    #[error("no joint estimate for movable label {0}")]
    IncompleteModel(u32),
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Rotation by `rotation_angle` about the line (`rotation_axis`, `axis_origin`)
/// followed by `translation_along_axis` along it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrewMotion {
    pub rotation_angle: f64,
    pub rotation_axis: Vector3,
    pub axis_origin: Point3,
    pub translation_along_axis: f64,
}

const PURE_TRANSLATION_ANGLE: f64 = 1e-8;

pub fn screw_decompose(t: &RigidTransform) -> ScrewMotion {
    let rot = Rotation3::from_matrix_unchecked(t.rotation);
    let (axis, angle) = match rot.axis_angle() {
        Some((axis, angle)) if angle >= PURE_TRANSLATION_ANGLE => (axis.into_inner(), angle),
        _ => {
            let n = t.translation.norm();
            let axis = if n > 0.0 { t.translation / n } else { Vector3::z() };
            return ScrewMotion {
                rotation_angle: 0.0,
                rotation_axis: axis,
                axis_origin: Point3::origin(),
                translation_along_axis: n,
            };
        }
    };
    let along = axis.dot(&t.translation);
    let t_perp = t.translation - axis * along;
    // minimum-norm solution of (I − R) o = t_perp, which lies orthogonal to the axis
    let origin = (t_perp + axis.cross(&t_perp) / (angle / 2.0).tan()) / 2.0;
    ScrewMotion { rotation_angle: angle, rotation_axis: axis, axis_origin: Point3::from(origin), translation_along_axis: along }
}

pub fn screw_compose(s: &ScrewMotion) -> RigidTransform {
    let rot = RigidTransform::about_axis(&s.rotation_axis, &s.axis_origin, s.rotation_angle);
    RigidTransform::new(rot.rotation, rot.translation + s.rotation_axis * s.translation_along_axis)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Rotations below this are prismatic, radians.
    pub angle_threshold: f64,
    /// Translations below this (with sub-threshold rotation) are noise, metres.
    pub translation_floor: f64,
    /// Fraction of the observed range added on each side of the joint limits.
    pub limit_margin: f64,
    pub icp_max_iterations: usize,
    pub icp_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            angle_threshold: 3f64.to_radians(),
            translation_floor: 0.005,
            limit_margin: 0.5,
            icp_max_iterations: 50,
            icp_tolerance: 1e-6,
        }
    }
}

pub fn classify_joint(screw: &ScrewMotion, angle_threshold: f64, translation_floor: f64) -> Result<JointKind, FitError> {
    if screw.rotation_angle >= angle_threshold {
        return Ok(JointKind::Revolute);
    }
    let translation = screw_compose(screw).translation.norm();
    if translation > translation_floor {
        Ok(JointKind::Prismatic)
    } else {
        Err(FitError::InsufficientMotion { angle_deg: screw.rotation_angle.to_degrees(), translation })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformEstimate {
    pub transform: RigidTransform,
    pub converged: bool,
    pub iterations: usize,
    /// Mean correspondence distance after the fit, metres.
    pub residual: f64,
}

/// Rigid motion of a part between two frames. With correspondences this is a
/// single least-squares fit; otherwise point-to-point ICP from identity.
pub fn estimate_part_transform(
    prev: &PointCloud,
    cur: &PointCloud,
    correspondences: Option<&[(usize, usize)]>,
    cfg: &FitConfig,
) -> Result<TransformEstimate, FitError> {
    if let Some(pairs) = correspondences {
        let (src, dst): (Vec<Point3>, Vec<Point3>) = pairs
            .iter()
            .map(|&(i, j)| {
                let a = prev.points.get(i).copied();
                let b = cur.points.get(j).copied();
                a.zip(b).ok_or_else(|| FitError::InvalidInput(format!("correspondence ({i}, {j}) out of range")))
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .unzip();
        let transform = fit_rigid_transform(&src, &dst)?;
        let residual = mean_distance(&src, &dst, &transform);
        return Ok(TransformEstimate { transform, converged: true, iterations: 1, residual });
    }
    if prev.len() < 3 || cur.len() < 3 {
        return Err(GeometryError::RankDeficient("need at least 3 points per frame".into()).into());
    }
    let tree = KdTree::new(&cur.points);
    let mut transform = RigidTransform::identity();
    let mut last = f64::INFINITY;
    let mut best = (f64::INFINITY, transform);
    for it in 1..=cfg.icp_max_iterations {
        let moved: Vec<Point3> = prev.points.iter().map(|p| transform.apply(p)).collect();
        let nn = nearest_in_tree(&moved, &tree);
        let residual = nn.iter().map(|m| m.1).sum::<f64>() / nn.len() as f64;
        if residual < best.0 {
            best = (residual, transform);
        }
        if (last - residual).abs() < cfg.icp_tolerance {
            return Ok(TransformEstimate { transform, converged: true, iterations: it, residual });
        }
        last = residual;
        let targets: Vec<Point3> = nn.iter().map(|m| cur.points[m.0]).collect();
        transform = fit_rigid_transform(&prev.points, &targets)?;
    }
    Ok(TransformEstimate { transform: best.1, converged: false, iterations: cfg.icp_max_iterations, residual: best.0 })
}

fn mean_distance(src: &[Point3], dst: &[Point3], t: &RigidTransform) -> f64 {
    src.iter().zip(dst).map(|(a, b)| (t.apply(a) - b).norm()).sum::<f64>() / src.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEstimate {
    /// Movable label this joint drives.
    pub part: u32,
    pub kind: JointKind,
    pub axis: Vector3,
    /// Point on the axis (revolute only).
    pub origin: Option<Point3>,
    /// Joint value of every frame relative to frame 0.
    pub displacements: Vec<f64>,
    /// Mean point error of the fitted joint applied to frame 0, metres.
    pub residual: f64,
}

impl JointEstimate {
    pub fn motion(&self, s: f64) -> RigidTransform {
        match self.kind {
            JointKind::Prismatic => RigidTransform::from_translation(self.axis * s),
            JointKind::Revolute => RigidTransform::about_axis(&self.axis, &self.origin.unwrap_or_else(Point3::origin), s),
        }
    }
}

/// One part's points in every frame. `aligned` means point `i` is the same
/// physical point in all frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PartTrack {
    pub frames: Vec<PointCloud>,
    pub aligned: bool,
}

impl PartTrack {
    /// Selects label `label` from every frame. Equal-length frames are
    /// treated as tracked and use the final-frame labels throughout;
    /// otherwise `per_frame` labels are required.
    pub fn from_labels(
        frames: &[PointCloud],
        final_labels: &[u32],
        per_frame: Option<&[Vec<u32>]>,
        label: u32,
    ) -> Result<PartTrack, FitError> {
        let n = final_labels.len();
        let tracked = frames.iter().all(|f| f.len() == n);
        if tracked {
            let idx: Vec<usize> = (0..n).filter(|&i| final_labels[i] == label).collect();
            return Ok(PartTrack { frames: frames.iter().map(|f| f.select(&idx)).collect(), aligned: true });
        }
        let per_frame = per_frame.ok_or_else(|| {
            FitError::InvalidInput("frames differ in size; per-frame labels are required".into())
        })?;
        if per_frame.len() != frames.len() {
            return Err(FitError::InvalidInput(format!("{} label sets for {} frames", per_frame.len(), frames.len())));
        }
        let mut out = Vec::with_capacity(frames.len());
        for (f, l) in frames.iter().zip(per_frame) {
            if l.len() != f.len() {
                return Err(FitError::InvalidInput("label count differs from point count".into()));
            }
            let idx: Vec<usize> = (0..f.len()).filter(|&i| l[i] == label).collect();
            out.push(f.select(&idx));
        }
        Ok(PartTrack { frames: out, aligned: false })
    }
}

fn pair_transform(track: &PartTrack, a: usize, b: usize, cfg: &FitConfig) -> Result<RigidTransform, FitError> {
    let (pa, pb) = (&track.frames[a], &track.frames[b]);
    if track.aligned {
        Ok(fit_rigid_transform(&pa.points, &pb.points)?)
    } else {
        Ok(estimate_part_transform(pa, pb, None, cfg)?.transform)
    }
}

/// Rotation angle of `t` about `axis`, signed by the axis orientation.
fn signed_angle(t: &RigidTransform, axis: &Vector3) -> f64 {
    let s = screw_decompose(t);
    if s.rotation_angle == 0.0 {
        0.0
    } else {
        s.rotation_angle * s.rotation_axis.dot(axis).signum()
    }
}

/// Least-squares point closest to a set of lines, minimum norm when the
/// lines are parallel.
fn closest_point_to_lines(lines: &[(Point3, Vector3)]) -> Point3 {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (o, w) in lines {
        let p = Matrix3::identity() - w * w.transpose();
        a += p;
        b += p * o.coords;
    }
    let pinv = a.pseudo_inverse(1e-9 * lines.len() as f64).expect("non-negative tolerance");
    Point3::from(pinv * b)
}

pub fn fit_joint(track: &PartTrack, label: u32, cfg: &FitConfig) -> Result<JointEstimate, FitError> {
    let k = track.frames.len();
    if k < 2 {
        return Err(FitError::InvalidInput("need at least two frames".into()));
    }
    if track.frames.iter().any(|f| f.len() < 3) {
        return Err(GeometryError::RankDeficient(format!("part {label} has fewer than 3 points in some frame")).into());
    }

    // consecutive pairs that moved enough to classify
    let mut pairs: Vec<(usize, ScrewMotion, JointKind, f64)> = Vec::new();
    let mut first_err = None;
    for j in 1..k {
        let t = pair_transform(track, j - 1, j, cfg)?;
        let screw = screw_decompose(&t);
        match classify_joint(&screw, cfg.angle_threshold, cfg.translation_floor) {
            Ok(kind) => {
                let magnitude = match kind {
                    JointKind::Revolute => screw.rotation_angle,
                    JointKind::Prismatic => t.translation.norm(),
                };
                pairs.push((j, screw, kind, magnitude));
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if pairs.is_empty() {
        return Err(first_err.expect("at least one pair evaluated"));
    }
    let reference = pairs
        .iter()
        .enumerate()
        .max_by(|a, b| {
            let rank = |p: &(usize, ScrewMotion, JointKind, f64)| (p.2 == JointKind::Revolute, p.3);
            let (ra, rb) = (rank(a.1), rank(b.1));
            ra.0.cmp(&rb.0).then(ra.1.total_cmp(&rb.1)).then(b.0.cmp(&a.0))
        })
        .map(|(i, _)| i)
        .expect("non-empty");
    let kind = pairs[reference].2;
    if pairs.iter().any(|p| p.2 != kind) {
        let listing: Vec<String> = pairs
            .iter()
            .map(|p| format!("frames {}-{}: {} ({:.3}°)", p.0 - 1, p.0, p.2.as_str(), p.1.rotation_angle.to_degrees()))
            .collect();
        return Err(FitError::ConflictingEvidence(listing.join("; ")));
    }

    let pair_axis = |s: &ScrewMotion| -> Vector3 {
        match kind {
            JointKind::Revolute => s.rotation_axis,
            JointKind::Prismatic => {
                let t = screw_compose(s).translation;
                t / t.norm()
            }
        }
    };
    let ref_axis = pair_axis(&pairs[reference].1);
    let mut sum = Vector3::zeros();
    for p in &pairs {
        let a = pair_axis(&p.1);
        sum += if a.dot(&ref_axis) < 0.0 { -a } else { a };
    }
    let mut axis = sum.normalize();
    let origin = match kind {
        JointKind::Revolute => {
            let lines: Vec<(Point3, Vector3)> = pairs.iter().map(|p| (p.1.axis_origin, p.1.rotation_axis)).collect();
            Some(closest_point_to_lines(&lines))
        }
        JointKind::Prismatic => None,
    };

    let mut displacements = vec![0.0; k];
    for (j, d) in displacements.iter_mut().enumerate().skip(1) {
        let t = pair_transform(track, 0, j, cfg)?;
        *d = match kind {
            JointKind::Revolute => signed_angle(&t, &axis),
            JointKind::Prismatic => axis.dot(&t.translation),
        };
    }
    // orient the axis so the largest observed motion is positive
    let extreme = displacements.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
    if extreme < 0.0 {
        axis = -axis;
        displacements.iter_mut().for_each(|d| *d = -*d);
    }

    let mut est = JointEstimate { part: label, kind, axis, origin, displacements, residual: 0.0 };
    est.residual = joint_residual(track, &est);
    Ok(est)
}

fn joint_residual(track: &PartTrack, est: &JointEstimate) -> f64 {
    let base = &track.frames[0].points;
    let mut total = 0.0;
    let mut count = 0usize;
    for (j, frame) in track.frames.iter().enumerate().skip(1) {
        let t = est.motion(est.displacements[j]);
        let moved: Vec<Point3> = base.iter().map(|p| t.apply(p)).collect();
        if track.aligned {
            total += moved.iter().zip(&frame.points).map(|(a, b)| (a - b).norm()).sum::<f64>();
        } else {
            total += nearest_in_tree(&moved, &KdTree::new(&frame.points)).iter().map(|m| m.1).sum::<f64>();
        }
        count += moved.len();
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Fits one joint per movable label `1..=K`.
pub fn fit_all_joints(
    frames: &[PointCloud],
    final_labels: &[u32],
    per_frame: Option<&[Vec<u32>]>,
    cfg: &FitConfig,
) -> Result<Vec<JointEstimate>, FitError> {
    let k = final_labels.iter().copied().max().unwrap_or(0);
    (1..=k)
        .map(|label| {
            let track = PartTrack::from_labels(frames, final_labels, per_frame, label)?;
            fit_joint(&track, label, cfg)
        })
        .collect()
}

pub enum GeometrySource {
    /// Convex hull of each label's final-frame points.
    Hulls,
    /// Explicit pieces per part (index = part id), in the rest configuration.
    Meshes(Vec<Vec<ConvexPiece>>),
}

/// Star-topology model: every fitted joint hangs off the root.
pub fn build_model(
    name: &str,
    final_labels: &[u32],
    final_frame: &PointCloud,
    estimates: &[JointEstimate],
    geometry: GeometrySource,
    cfg: &FitConfig,
) -> Result<ArticulatedModel, FitError> {
    if final_labels.len() != final_frame.len() {
        return Err(FitError::InvalidInput("label count differs from final-frame point count".into()));
    }
    let k = final_labels.iter().copied().max().unwrap_or(0);
    let mut ordered = Vec::with_capacity(k as usize);
    for label in 1..=k {
        ordered.push(estimates.iter().find(|e| e.part == label).ok_or(FitError::IncompleteModel(label))?);
    }
    let mut meshes = match geometry {
        GeometrySource::Meshes(m) => {
            if m.len() != k as usize + 1 {
                return Err(FitError::InvalidInput(format!("{} mesh sets for {} parts", m.len(), k + 1)));
            }
            Some(m)
        }
        GeometrySource::Hulls => None,
    };
    let hull = |label: u32, back: &RigidTransform| -> Vec<ConvexPiece> {
        let pts: Vec<Point3> = final_labels
            .iter()
            .zip(&final_frame.points)
            .filter(|(l, _)| **l == label)
            .map(|(_, p)| back.apply(p))
            .collect();
        ConvexPiece::hull_of(&pts).into_iter().collect()
    };

    let root_geom = match &mut meshes {
        Some(m) => std::mem::take(&mut m[0]),
        None => hull(0, &RigidTransform::identity()),
    };
    let mut parts = vec![Part::root(root_geom)];
    for est in ordered {
        let final_value = *est.displacements.last().unwrap_or(&0.0);
        let (lo, hi) = est.displacements.iter().fold((0f64, 0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        let margin = cfg.limit_margin * (hi - lo);
        let mut joint = match est.kind {
            JointKind::Prismatic => Joint::prismatic(est.axis, lo - margin, hi + margin),
            JointKind::Revolute => Joint::revolute(est.axis, est.origin.unwrap_or_else(Point3::origin), lo - margin, hi + margin),
        };
        joint.state = final_value;
        let geom = match &mut meshes {
            Some(m) => std::mem::take(&mut m[est.part as usize]),
            None => hull(est.part, &est.motion(final_value).inverse()),
        };
        parts.push(Part::movable(est.part as usize, 0, joint, geom));
    }
    Ok(ArticulatedModel::new(name, parts, RigidTransform::identity())?)
}

/// Distance from `p` to the line through `origin` along unit `axis`.
pub fn point_to_axis(p: &Point3, origin: &Point3, axis: &Vector3) -> f64 {
    let d = p - origin;
    (d - axis * d.dot(axis)).norm()
}

/// Angle between two axis directions, ignoring orientation, radians.
pub fn axis_angle_error(a: &Vector3, b: &Vector3) -> f64 {
    let (a, b) = (a.normalize(), b.normalize());
    a.cross(&b).norm().atan2(a.dot(&b).abs())
}
