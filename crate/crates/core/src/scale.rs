//! Silhouette-based placement of a canonical mesh and the depth-ratio scale.
//!
//! The render scale multiplies mesh vertices in the object frame. An object
//! of true scale `s` at translation `t` shows the same silhouette as the
//! unscaled mesh at `t / s`, with every depth divided by `s`, so the ratio of
//! depth sums at the silhouette-matched pose recovers `s`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraExtrinsics, CameraIntrinsics, DepthMap, GeometryError, Mask, Point3, RigidTransform, Vector3};
use crate::model::Triangle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaleError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("observed mask is empty")]
    EmptyMask,
    #[error("alignment failed: best silhouette IoU {0:.3} is below 0.2")]
    AlignmentFailure(f64),
    #[error("no pixel is valid in both depth maps under the mask")]
    InvalidRender,
    #[error("mesh has no triangles")]
    EmptyMesh,
}

const NEAR: f64 = 1e-4;
pub const MIN_IOU: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseHypothesis {
    /// Rotation about world z, radians.
    pub yaw: f64,
    /// Unscaled world translation of the mesh origin.
    pub translation: Vector3,
    pub scale: f64,
    /// Silhouette IoU against the observed mask.
    #[serde(rename = "iou")]
    pub score: f64,
}

impl PoseHypothesis {
    pub fn world_pose(&self) -> RigidTransform {
        RigidTransform::from_rpy(self.translation, 0.0, 0.0, self.yaw)
    }

    /// Object-to-camera transform of the unscaled mesh.
    pub fn camera_pose(&self, extr: &CameraExtrinsics) -> RigidTransform {
        extr.transform.compose(&self.world_pose())
    }
}

/// Z-buffered rasterisation sampled at integer pixel coordinates. Depth is
/// the exact ray/triangle-plane intersection. Triangles crossing the near
/// plane are skipped.
pub fn render_depth(mesh: &[Triangle], pose: &RigidTransform, scale: f64, intr: &CameraIntrinsics) -> (DepthMap, Mask) {
    let mut depth = DepthMap::zeros(intr.width, intr.height);
    let mut mask = Mask::empty(intr.width, intr.height);
    for tri in mesh {
        let c = tri.map(|p| pose.apply(&Point3::from(p.coords * scale)));
        if c.iter().any(|p| p.z <= NEAR) {
            continue;
        }
        let px: [(f64, f64); 3] = c.map(|p| (intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy));
        let area = edge(px[0], px[1], px[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let n = (c[1] - c[0]).cross(&(c[2] - c[0]));
        let plane = n.dot(&c[0].coords);
        let (min_u, max_u) = (px.iter().map(|p| p.0).fold(f64::INFINITY, f64::min), px.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max));
        let (min_v, max_v) = (px.iter().map(|p| p.1).fold(f64::INFINITY, f64::min), px.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max));
        let u0 = min_u.ceil().max(0.0) as usize;
        let v0 = min_v.ceil().max(0.0) as usize;
        let u1 = max_u.floor().min(intr.width as f64 - 1.0);
        let v1 = max_v.floor().min(intr.height as f64 - 1.0);
        if u1 < 0.0 || v1 < 0.0 {
            continue;
        }
        let (u1, v1) = (u1 as usize, v1 as usize);
        for v in v0..=v1 {
            for u in u0..=u1 {
                let p = (u as f64, v as f64);
                let w0 = edge(px[1], px[2], p) * area.signum();
                let w1 = edge(px[2], px[0], p) * area.signum();
                let w2 = edge(px[0], px[1], p) * area.signum();
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let ray = intr.ray(p.0, p.1);
                let denom = n.dot(&ray);
                if denom.abs() < 1e-15 {
                    continue;
                }
                let z = plane / denom;
                if z <= NEAR {
                    continue;
                }
                let cur = depth.get(u, v);
                if cur == 0.0 || z < cur {
                    depth.set(u, v, z);
                    mask.set(u, v, true);
                }
            }
        }
    }
    (depth, mask)
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// `s = Σ D / Σ D̃` over masked pixels valid in both maps.
pub fn estimate_scale(observed: &DepthMap, rendered_unscaled: &DepthMap, mask: &Mask) -> Result<f64, ScaleError> {
    if observed.values.len() != rendered_unscaled.values.len() || observed.values.len() != mask.bits.len() {
        return Err(GeometryError::InvalidInput("depth maps and mask differ in size".into()).into());
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((&d, &r), &m) in observed.values.iter().zip(&rendered_unscaled.values).zip(&mask.bits) {
        if m && d > 0.0 && r > 0.0 {
            num += d;
            den += r;
        }
    }
    if den <= 0.0 {
        return Err(ScaleError::InvalidRender);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub yaw_samples: usize,
    pub refine_steps: usize,
    /// Yaw-sweep maxima refined independently.
    #[serde(default = "default_candidates")]
    pub candidates: usize,
}

fn default_candidates() -> usize {
    6
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { yaw_samples: 72, refine_steps: 60, candidates: default_candidates() }
    }
}

fn mesh_center(mesh: &[Triangle]) -> Vector3 {
    let (lo, hi) = bounds(mesh);
    (lo + hi) / 2.0
}

fn bounds(mesh: &[Triangle]) -> (Vector3, Vector3) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in mesh.iter().flatten() {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    yaw: f64,
    t: Vector3,
    iou: f64,
    score: f64,
}

struct Scorer<'a> {
    mesh: &'a [Triangle],
    observed: &'a Mask,
    depth: Option<&'a DepthMap>,
    intr: &'a CameraIntrinsics,
    extr: &'a CameraExtrinsics,
}

impl Scorer<'_> {
    fn render(&self, yaw: f64, t: &Vector3) -> (DepthMap, Mask) {
        let h = PoseHypothesis { yaw, translation: *t, scale: 1.0, score: 0.0 };
        render_depth(self.mesh, &h.camera_pose(self.extr), 1.0, self.intr)
    }

    /// Observed over rendered depth where both silhouettes agree.
    fn depth_ratio(&self, c: &Candidate) -> Option<f64> {
        let depth = self.depth?;
        let (rendered, mask) = self.render(c.yaw, &c.t);
        let both = Mask::new(mask.width, mask.height, mask.bits.iter().zip(&self.observed.bits).map(|(a, b)| *a && *b).collect()).ok()?;
        estimate_scale(depth, &rendered, &both).ok()
    }

    fn candidate(&self, yaw: f64, t: Vector3) -> Candidate {
        let (rendered, mask) = self.render(yaw, &t);
        let iou = mask.iou(self.observed);
        let residual = self.depth.map_or(0.0, |d| depth_residual(d, &rendered, self.observed, &mask));
        Candidate { yaw, t, iou, score: iou - residual }
    }

    /// Pattern search over yaw and camera-frame translation, taking the best
    /// of the eight moves each round and halving the steps when none helps.
    /// Camera axes separate image-plane shifts from depth, which the
    /// silhouette and the depth fit constrain very differently.
    fn refine(&self, start: Candidate, mut yaw_step: f64, mut t_step: f64, steps: usize, objective: impl Fn(&Candidate) -> f64) -> Candidate {
        let to_world = self.extr.transform.rotation.transpose();
        let (yaw_floor, t_floor) = (yaw_step * 1e-9, t_step * 1e-9);
        let mut best = start;
        let mut best_value = objective(&best);
        for _ in 0..steps {
            let (round, round_value) = (best, best_value);
            for coord in 0..4 {
                for sign in [1.0, -1.0] {
                    let (mut yaw, mut t) = (round.yaw, round.t);
                    if coord == 0 {
                        yaw += sign * yaw_step;
                    } else {
                        t += to_world.column(coord - 1) * (sign * t_step);
                    }
                    let c = self.candidate(yaw, t);
                    let value = objective(&c);
                    if value > best_value {
                        best = c;
                        best_value = value;
                    }
                }
            }
            if best_value <= round_value {
                yaw_step /= 2.0;
                t_step /= 2.0;
                if yaw_step < yaw_floor && t_step < t_floor {
                    break;
                }
            }
        }
        best
    }

    /// World translation that puts the rotated mesh centre on the camera ray
    /// through `pixel` at camera depth `z`.
    fn place(&self, yaw: f64, pixel: (f64, f64), z: f64) -> Vector3 {
        let target = self.extr.to_base(&Point3::from(self.intr.ray(pixel.0, pixel.1) * z));
        let r = crate::geometry::rotation_about(&Vector3::z(), yaw);
        target.coords - r * mesh_center(self.mesh)
    }
}

/// Relative residual of the least-squares fit `observed ≈ s · rendered` over
/// pixels covered by both masks; 1 when there is no overlap.
fn depth_residual(observed: &DepthMap, rendered: &DepthMap, observed_mask: &Mask, rendered_mask: &Mask) -> f64 {
    let (mut dr, mut rr, mut dd) = (0.0, 0.0, 0.0);
    for i in 0..observed.values.len() {
        let (d, r) = (observed.values[i], rendered.values[i]);
        if observed_mask.bits[i] && rendered_mask.bits[i] && d > 0.0 && r > 0.0 {
            dr += d * r;
            rr += r * r;
            dd += d * d;
        }
    }
    if rr == 0.0 || dd == 0.0 {
        return 1.0;
    }
    (1.0 - dr * dr / (dd * rr)).max(0.0).sqrt()
}

/// Best unscaled pose for the observed silhouette. The initial depth comes
/// from the median observed depth (1 m without one) and is corrected by the
/// silhouette area ratio, since unscaled and true sizes differ.
///
/// The best local maxima of a yaw sweep are refined by coordinate descent.
/// With observed depth the score also penalises the relative residual of
/// the best scaled depth fit, which pins the pose far below pixel size:
/// sliding along a viewing ray shifts depths additively, while scale
/// multiplies them, so only the true pose fits exactly.
pub fn search_pose(
    mesh: &[Triangle],
    observed_mask: &Mask,
    observed_depth: Option<&DepthMap>,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    cfg: &SearchConfig,
) -> Result<PoseHypothesis, ScaleError> {
    if mesh.is_empty() {
        return Err(ScaleError::EmptyMesh);
    }
    let centroid = observed_mask.centroid().ok_or(ScaleError::EmptyMask)?;
    let z0 = observed_depth.and_then(|d| median_masked(d, observed_mask)).unwrap_or(1.0);
    let observed_area = observed_mask.count() as f64;
    let scorer = Scorer { mesh, observed: observed_mask, depth: observed_depth, intr, extr };

    // one area-corrected placement per yaw
    let n = cfg.yaw_samples.max(1);
    let sweep: Vec<Candidate> = (0..n)
        .map(|k| {
            let yaw = k as f64 * std::f64::consts::TAU / n as f64;
            let mut z = z0;
            let mut t = scorer.place(yaw, centroid, z);
            for _ in 0..3 {
                let area = scorer.render(yaw, &t).1.count() as f64;
                if area == 0.0 {
                    break;
                }
                z *= (area / observed_area).sqrt();
                t = scorer.place(yaw, centroid, z);
            }
            scorer.candidate(yaw, t)
        })
        .collect();
    let mut seeds: Vec<usize> =
        (0..n).filter(|&k| sweep[k].score >= sweep[(k + n - 1) % n].score && sweep[k].score >= sweep[(k + 1) % n].score).collect();
    seeds.sort_by(|a, b| sweep[*b].score.total_cmp(&sweep[*a].score).then(a.cmp(b)));
    seeds.truncate(cfg.candidates.max(1));

    let (lo, hi) = bounds(mesh);
    let (yaw_step, t_step) = (std::f64::consts::PI / n as f64, 0.05 * (hi - lo).norm());
    let coarse: Vec<Candidate> = seeds.iter().map(|&k| scorer.refine(sweep[k], yaw_step, t_step, cfg.refine_steps, |c| c.score)).collect();
    let best = match observed_depth.map(|d| surface_points(d, observed_mask, intr, extr)) {
        Some(points) if points.len() >= 6 => {
            // the IoU term is stepwise at pixel scale; finish on the 3D fit
            let exact = 1e-9 * (hi - lo).norm();
            // a registered pose reseeds the scale better than the coarse one
            let chain = |start: (Candidate, f64), stretch: f64| {
                let (mut best, mut seed) = (start, start.0);
                for _ in 0..3 {
                    let s0 = scorer.depth_ratio(&seed).map(|s| s * stretch);
                    let Some((yaw, t, rms)) = register(mesh, &points, &seed, s0, extr) else { break };
                    if rms >= best.1 {
                        break;
                    }
                    best = (scorer.candidate(yaw, t), rms);
                    if rms <= exact {
                        break;
                    }
                    // re-fit the silhouette at the registered yaw before reseeding
                    seed = scorer.refine(best.0, yaw_step / 8.0, t_step / 8.0, cfg.refine_steps / 2, |c| c.score);
                }
                best
            };
            let mut fitted: Vec<(Candidate, f64)> = coarse.iter().map(|c| chain((*c, f64::INFINITY), 1.0)).collect();
            // scaling about the eye keeps the silhouette, so the tightest fits
            // also restart along the ray to escape a wrong scale basin
            let mut order: Vec<usize> = (0..fitted.len()).collect();
            order.sort_by(|a, b| fitted[*a].1.total_cmp(&fitted[*b].1));
            if fitted[order[0]].1 > exact {
                for &k in order.iter().take(2) {
                    for stretch in [0.8, 0.9, 1.1, 1.25] {
                        let (c, rms) = chain((fitted[k].0, f64::INFINITY), stretch);
                        if rms < fitted[k].1 {
                            fitted[k] = (c, rms);
                        }
                    }
                }
            }
            for (f, c) in fitted.iter_mut().zip(&coarse) {
                if f.0.iou < c.iou - 0.05 {
                    *f = (*c, f64::INFINITY);
                }
            }
            let top_iou = fitted.iter().map(|f| f.0.iou).fold(f64::NEG_INFINITY, f64::max);
            fitted
                .into_iter()
                .filter(|f| f.0.iou >= top_iou - 0.05)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|f| f.0)
                .expect("the best fit passes its own filter")
        }
        _ => coarse.into_iter().reduce(|a, b| if b.score > a.score { b } else { a }).expect("at least one seed"),
    };
    if best.iou < MIN_IOU {
        return Err(ScaleError::AlignmentFailure(best.iou.max(0.0)));
    }
    Ok(PoseHypothesis { yaw: best.yaw.rem_euclid(std::f64::consts::TAU), translation: best.t, scale: 1.0, score: best.iou })
}

/// Masked depth pixels lifted to world points, thinned to at most 2000.
fn surface_points(depth: &DepthMap, mask: &Mask, intr: &CameraIntrinsics, extr: &CameraExtrinsics) -> Vec<Point3> {
    let valid: Vec<usize> = (0..depth.values.len()).filter(|&i| mask.bits[i] && depth.values[i] > 0.0).collect();
    let stride = valid.len().div_ceil(2000).max(1);
    valid
        .iter()
        .step_by(stride)
        .map(|&i| {
            let (u, v) = ((i % depth.width) as f64, (i / depth.width) as f64);
            extr.to_base(&Point3::from(intr.ray(u, v) * depth.values[i]))
        })
        .collect()
}

/// Closest point of a triangle to `p`, by Voronoi region.
fn closest_on_triangle(p: &Point3, [a, b, c]: &Triangle) -> Point3 {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Closest mesh point and the normal of its triangle.
fn closest_on_mesh(p: &Point3, mesh: &[Triangle], normals: &[Vector3]) -> (Point3, Vector3) {
    let mut best = (f64::INFINITY, Point3::origin(), Vector3::z());
    for (tri, n) in mesh.iter().zip(normals) {
        let q = closest_on_triangle(p, tri);
        let d = (q - p).norm_squared();
        if d < best.0 {
            best = (d, q, *n);
        }
    }
    (best.1, best.2)
}

/// Damped Gauss-Newton fit of yaw, translation and scale so that the posed,
/// scaled mesh passes through `points`, on exact point-to-mesh distances. Starts from an
/// unscaled candidate and returns it in the same form with the RMS distance.
fn register(
    mesh: &[Triangle],
    points: &[Point3],
    start: &Candidate,
    s0: Option<f64>,
    extr: &CameraExtrinsics,
) -> Option<(f64, Vector3, f64)> {
    let normals: Vec<Vector3> = mesh.iter().map(|t| crate::model::mesh::triangle_normal(t).normalize()).collect();
    let eye = extr.center().coords;
    // equal silhouettes are related by scaling about the camera centre
    let mut s = s0.filter(|s| *s > 0.0 && s.is_finite())?;
    let mut tau = eye + (start.t - eye) * s;
    let mut yaw = start.yaw;

    let residuals = |yaw: f64, tau: &Vector3, s: f64| -> (Vec<f64>, Vec<[f64; 5]>) {
        let rt = crate::geometry::rotation_about(&Vector3::z(), -yaw);
        let mut r = Vec::with_capacity(points.len());
        let mut jac = Vec::with_capacity(points.len());
        for q in points {
            let x = Point3::from(rt * (q.coords - tau) / s);
            let (c, face) = closest_on_mesh(&x, mesh, &normals);
            // gradient of the true distance; the face normal only at contact,
            // so points overhanging an edge are pulled back
            let gap = x - c;
            let n = if gap.norm() > 1e-12 { gap / gap.norm() } else { face };
            // measured in world units, else growing s shrinks every residual
            let d = n.dot(&gap);
            r.push(s * d);
            let dyaw = -Vector3::z().cross(&x.coords);
            let dtau = -(rt.transpose() * n);
            jac.push([s * n.dot(&dyaw), dtau.x, dtau.y, dtau.z, s * (d - n.dot(&x.coords))]);
        }
        (r, jac)
    };
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();

    let (mut r, mut jac) = residuals(yaw, &tau, s);
    let mut current = cost(&r);
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let mut jtj = nalgebra::Matrix5::<f64>::zeros();
        let mut jtr = nalgebra::Vector5::<f64>::zeros();
        for (ri, ji) in r.iter().zip(&jac) {
            let j = nalgebra::Vector5::from_row_slice(ji);
            jtj += j * j.transpose();
            jtr += j * *ri;
        }
        let mut accepted = None;
        for _ in 0..10 {
            let damped = jtj + nalgebra::Matrix5::from_diagonal(&jtj.diagonal().map(|d| lambda * d.max(1e-12)));
            let Some(step) = damped.lu().solve(&-jtr) else { break };
            let (y2, t2, s2) = (yaw + step[0], tau + Vector3::new(step[1], step[2], step[3]), s * step[4].exp());
            let (r2, j2) = residuals(y2, &t2, s2);
            let c2 = cost(&r2);
            if c2 < current {
                (yaw, tau, s, r, jac, current) = (y2, t2, s2, r2, j2, c2);
                lambda = (lambda / 3.0).max(1e-12);
                accepted = Some(step.norm());
                break;
            }
            lambda *= 4.0;
        }
        match accepted {
            Some(step) if step > 1e-14 && current > 1e-26 * points.len() as f64 => {}
            _ => break,
        }
    }
    let rms = (current / points.len() as f64).sqrt();
    (rms.is_finite() && s > 0.0).then(|| (yaw, eye + (tau - eye) / s, rms))
}

fn median_masked(depth: &DepthMap, mask: &Mask) -> Option<f64> {
    let mut v: Vec<f64> = depth.values.iter().zip(&mask.bits).filter(|(d, m)| **m && **d > 0.0).map(|(d, _)| *d).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

/// Pose search followed by the depth-ratio scale at the found pose.
pub fn align_and_scale(
    mesh: &[Triangle],
    observed_depth: &DepthMap,
    observed_mask: &Mask,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    cfg: &SearchConfig,
) -> Result<PoseHypothesis, ScaleError> {
    let mut pose = search_pose(mesh, observed_mask, Some(observed_depth), intr, extr, cfg)?;
    let (rendered, rmask) = render_depth(mesh, &pose.camera_pose(extr), 1.0, intr);
    let both = Mask::new(
        observed_mask.width,
        observed_mask.height,
        observed_mask.bits.iter().zip(&rmask.bits).map(|(a, b)| *a && *b).collect(),
    )?;
    pose.scale = estimate_scale(observed_depth, &rendered, &both)?;
    Ok(pose)
}
