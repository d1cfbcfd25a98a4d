//! Shared 3D primitives: point clouds, rigid transforms, cameras, exact
//! nearest-neighbour queries and least-squares rigid registration.

pub mod camera;
pub mod hull;
pub mod kdtree;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3 as NVector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use camera::{
    back_project, project, CameraExtrinsics, CameraIntrinsics, DepthMap, Mask,
};
pub use kdtree::KdTree;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = NVector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("rank-deficient point configuration: {0}")]
    RankDeficient(String),
    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),
    #[error("point is outside the camera frustum (camera-frame z = {0})")]
    OutOfFrustum(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Points with optional per-point labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud { points, labels: None }
    }

    pub fn with_labels(points: Vec<Point3>, labels: Vec<u32>) -> Result<Self, GeometryError> {
        if points.len() != labels.len() {
            return Err(GeometryError::InvalidInput(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        Ok(PointCloud { points, labels: Some(labels) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-cloud at the given indices, labels carried along.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let mut acc = Vector3::zeros();
    for p in points {
        acc += p.coords;
    }
    Point3::from(acc / points.len().max(1) as f64)
}

/// Proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn from_translation(t: Vector3) -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation by `angle` about the line through `origin` with direction `axis`.
    pub fn about_axis(axis: &Vector3, origin: &Point3, angle: f64) -> Self {
        let r = rotation_about(axis, angle);
        RigidTransform { rotation: r, translation: origin.coords - r * origin.coords }
    }

    pub fn from_rpy(xyz: Vector3, roll: f64, pitch: f64, yaw: f64) -> Self {
        let r = Rotation3::from_euler_angles(roll, pitch, yaw);
        RigidTransform { rotation: *r.matrix(), translation: xyz }
    }

    /// Roll, pitch, yaw (fixed-axis XYZ convention, as used by URDF).
    pub fn rpy(&self) -> (f64, f64, f64) {
        Rotation3::from_matrix_unchecked(self.rotation).euler_angles()
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3) -> Vector3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        ortho <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Rotation angle in [0, π].
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// 4×4 homogeneous matrix, row-major.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_row_major(m: &[f64; 16]) -> Self {
        RigidTransform {
            rotation: Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vector3::new(m[3], m[7], m[11]),
        }
    }
}

pub fn rotation_about(axis: &Vector3, angle: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).matrix()
}

fn ensure_non_empty(cloud: &PointCloud, what: &str) -> Result<(), GeometryError> {
    if cloud.is_empty() {
        return Err(GeometryError::InvalidInput(format!("{what} cloud is empty")));
    }
    Ok(())
}

/// For each query point, the index of and distance to its nearest target point.
pub fn nearest_neighbors(
    query: &PointCloud,
    target: &PointCloud,
) -> Result<Vec<(usize, f64)>, GeometryError> {
    ensure_non_empty(query, "query")?;
    ensure_non_empty(target, "target")?;
    let tree = KdTree::new(&target.points);
    Ok(nearest_in_tree(&query.points, &tree))
}

pub fn nearest_in_tree(query: &[Point3], tree: &KdTree) -> Vec<(usize, f64)> {
    query
        .iter()
        .map(|q| {
            let (i, d2) = tree.nearest_sq(q).expect("non-empty tree");
            (i, d2.sqrt())
        })
        .collect()
}

/// Directed chamfer distances: `d_i` is the distance from source point `i`
/// to the closest target point.
pub fn chamfer_directed(source: &PointCloud, target: &PointCloud) -> Result<Vec<f64>, GeometryError> {
    Ok(nearest_neighbors(source, target)?.into_iter().map(|(_, d)| d).collect())
}

/// Least-squares rigid transform (no scale) mapping `source[i]` onto `target[i]`.
pub fn fit_rigid_transform(
    source: &[Point3],
    target: &[Point3],
) -> Result<RigidTransform, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::InvalidInput(format!(
            "correspondence lists differ in length ({} vs {})",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(GeometryError::RankDeficient(format!(
            "need at least 3 correspondences, got {}",
            source.len()
        )));
    }
    let cs = centroid(source);
    let ct = centroid(target);
    let mut cov = Matrix3::zeros();
    let mut spread_s = Matrix3::zeros();
    let mut spread_t = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = s - cs;
        let dt = t - ct;
        cov += dt * ds.transpose();
        spread_s += ds * ds.transpose();
        spread_t += dt * dt.transpose();
    }
    check_spread(&spread_s, "source")?;
    check_spread(&spread_t, "target")?;

    let svd = cov.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let translation = ct.coords - rotation * cs.coords;
    Ok(RigidTransform { rotation, translation })
}

fn check_spread(spread: &Matrix3<f64>, what: &str) -> Result<(), GeometryError> {
    let mut ev: Vec<f64> = spread.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let scale = ev[0].max(f64::MIN_POSITIVE);
    if ev[0] <= 1e-24 || ev[1] <= 1e-12 * scale {
        return Err(GeometryError::RankDeficient(format!(
            "{what} points are coincident or collinear"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn brute_nearest(q: &Point3, target: &[Point3]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, t) in target.iter().enumerate() {
            let d = (t - q).norm();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
    }

    #[test]
    fn nearest_two_point_minimum() {
        let q = PointCloud::new(vec![Point3::origin()]);
        let t = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 0.0, 0.5)]);
        assert_eq!(nearest_neighbors(&q, &t).unwrap(), vec![(1, 0.5)]);
    }

    #[test]
    fn nearest_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_cloud(&mut rng, 50);
        for (i, (j, d)) in nearest_neighbors(&c, &c).unwrap().into_iter().enumerate() {
            assert_eq!((i, 0.0), (j, d));
        }
    }

    #[test]
    fn nearest_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_cloud(&mut rng, 100);
        let t = random_cloud(&mut rng, 100);
        let got = nearest_neighbors(&q, &t).unwrap();
        for (p, g) in q.points.iter().zip(got) {
            assert_eq!(g, brute_nearest(p, &t.points));
        }
    }

    #[test]
    fn empty_clouds_rejected() {
        let e = PointCloud::new(vec![]);
        let c = PointCloud::new(vec![Point3::origin()]);
        assert!(matches!(nearest_neighbors(&e, &c), Err(GeometryError::InvalidInput(_))));
        assert!(matches!(chamfer_directed(&c, &e), Err(GeometryError::InvalidInput(_))));
    }

    #[test]
    fn chamfer_shifted_plane() {
        let mut plane = Vec::new();
        for i in 0..=100 {
            for j in 0..=100 {
                plane.push(Point3::new(0.0, i as f64 * 0.002, j as f64 * 0.002));
            }
        }
        let target = PointCloud::new(plane);
        let source = PointCloud::new(
            (0..30)
                .map(|k| Point3::new(0.03, 0.05 + k as f64 * 0.004, 0.1))
                .collect(),
        );
        for d in chamfer_directed(&source, &target).unwrap() {
            assert!((d - 0.03).abs() < 1e-12);
        }
    }

    #[test]
    fn chamfer_is_asymmetric_for_subsets() {
        let b: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let a = PointCloud::new(b[..5].to_vec());
        let b = PointCloud::new(b);
        let ab = chamfer_directed(&a, &b).unwrap();
        let ba = chamfer_directed(&b, &a).unwrap();
        assert!(ab.iter().all(|&d| d == 0.0));
        assert!(ba.iter().any(|&d| d > 0.0));
        assert_ne!(ab.len(), ba.len());
    }

    #[test]
    fn fit_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_cloud(&mut rng, 20);
        let t = fit_rigid_transform(&c.points, &c.points).unwrap();
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn fit_recovers_30_degree_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = random_cloud(&mut rng, 20);
        let truth = RigidTransform::about_axis(&Vector3::z(), &Point3::origin(), 30f64.to_radians());
        let moved: Vec<_> = c.points.iter().map(|p| truth.apply(p)).collect();
        let t = fit_rigid_transform(&c.points, &moved).unwrap();
        assert!((t.rotation_angle() - 30f64.to_radians()).abs() < 1e-9);
        let axis = Rotation3::from_matrix_unchecked(t.rotation).axis().unwrap();
        assert!((axis.into_inner() - Vector3::z()).norm() < 1e-9);
    }

    #[test]
    fn fit_noisy_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, 0.001).unwrap();
        let src: Vec<Point3> = (0..200)
            .map(|_| {
                Point3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                )
            })
            .collect();
        let truth = RigidTransform::about_axis(
            &Vector3::new(0.3, -0.5, 0.8),
            &Point3::new(0.1, 0.2, -0.1),
            0.7,
        );
        let dst: Vec<Point3> = src
            .iter()
            .map(|p| {
                truth.apply(p)
                    + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            })
            .collect();
        let t = fit_rigid_transform(&src, &dst).unwrap();
        let err = t.compose(&truth.inverse());
        assert!(err.rotation_angle().to_degrees() < 0.2);
        assert!((t.translation - truth.translation).norm() < 0.001);
    }

    #[test]
    fn fit_rejects_collinear() {
        let line: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(fit_rigid_transform(&line, &line), Err(GeometryError::RankDeficient(_))));
        let same = vec![Point3::origin(); 4];
        assert!(matches!(fit_rigid_transform(&same, &same), Err(GeometryError::RankDeficient(_))));
    }
}
