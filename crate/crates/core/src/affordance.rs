//! Lifting 2D affordances (contact pixel + post-contact pixel direction) from
//! a real and a virtual camera into a 3D contact point and motion direction.
//!
//! Each view's contact ray and trajectory ray span a plane through that
//! camera's centre; the 3D motion lies in both planes, so it is recovered as
//! the planes' intersection line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::camera::project_direction;
use crate::geometry::{back_project, CameraExtrinsics, CameraIntrinsics, DepthMap, GeometryError, Mask, Point3, Vector3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffordanceError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("no masked pixel lands inside the virtual view")]
    EmptyWarp,
    #[error("trajectory is parallel to the contact ray; the projection plane is undefined")]
    DegeneratePlane,
    #[error("projection planes are nearly parallel (|n0·n1| = {0}); move the virtual camera")]
    IllConditioned(f64),
    #[error("no valid depth near contact pixel ({0}, {1})")]
    NoDepth(f64, f64),
    #[error("trajectory vector must be non-zero")]
    ZeroTrajectory,
}

/// Reject plane pairs whose normals are closer than this to parallel.
pub const PARALLEL_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelAffordance {
    pub contact: (f64, f64),
    pub trajectory: (f64, f64),
}

impl PixelAffordance {
    pub fn new(contact: (f64, f64), trajectory: (f64, f64)) -> Result<Self, AffordanceError> {
        if !(trajectory.0.is_finite() && trajectory.1.is_finite()) || (trajectory.0 == 0.0 && trajectory.1 == 0.0) {
            return Err(AffordanceError::ZeroTrajectory);
        }
        Ok(PixelAffordance { contact, trajectory })
    }
}

/// File form: `{view, contact: [u, v], trajectory: [du, dv]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffordanceFile {
    pub view: String,
    pub contact: [f64; 2],
    pub trajectory: [f64; 2],
}

impl AffordanceFile {
    pub fn to_pixel(&self) -> Result<PixelAffordance, AffordanceError> {
        PixelAffordance::new((self.contact[0], self.contact[1]), (self.trajectory[0], self.trajectory[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPlane {
    pub normal: Vector3,
    pub anchor: Point3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affordance3D {
    pub contact: Point3,
    pub direction: Vector3,
}

/// Default virtual camera: 0.2 m ahead of the base, 0.7 m up, pitched 52° down.
pub fn default_virtual_camera() -> CameraExtrinsics {
    CameraExtrinsics::looking_forward(Point3::new(0.2, 0.0, 0.7), 52f64.to_radians())
}

/// Forward-warps masked depth into another camera with z-buffering.
pub fn warp_to_virtual_view(
    depth: &DepthMap,
    mask: &Mask,
    intr: &CameraIntrinsics,
    extr_real: &CameraExtrinsics,
    extr_virtual: &CameraExtrinsics,
) -> Result<(DepthMap, Mask), AffordanceError> {
    if depth.width != mask.width || depth.height != mask.height {
        return Err(GeometryError::InvalidInput("depth and mask sizes differ".into()).into());
    }
    let mut out = DepthMap::zeros(intr.width, intr.height);
    let mut out_mask = Mask::empty(intr.width, intr.height);
    let to_virtual = extr_virtual.transform.compose(&extr_real.transform.inverse());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let z = depth.get(u, v);
            if !mask.get(u, v) || z <= 0.0 {
                continue;
            }
            let cam = Point3::from(intr.ray(u as f64, v as f64) * z);
            let c = to_virtual.apply(&cam);
            if c.z <= 0.0 {
                continue;
            }
            let pu = (intr.fx * c.x / c.z + intr.cx).round();
            let pv = (intr.fy * c.y / c.z + intr.cy).round();
            if !intr.contains(pu, pv) {
                continue;
            }
            let (pu, pv) = (pu as usize, pv as usize);
            let cur = out.get(pu, pv);
            if cur == 0.0 || c.z < cur {
                out.set(pu, pv, c.z);
                out_mask.set(pu, pv, true);
            }
        }
    }
    if out_mask.count() == 0 {
        return Err(AffordanceError::EmptyWarp);
    }
    Ok((out, out_mask))
}

/// The plane through the camera centre that contains the contact ray and the
/// trajectory ray. The trajectory end is lifted at the contact depth.
pub fn plane_from_affordance(
    aff: &PixelAffordance,
    z_c: f64,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> Result<ProjectionPlane, AffordanceError> {
    let p_c = back_project(aff.contact, z_c, intr, extr)?;
    // the trajectory end may leave the image, so lift it without bounds checks
    let (u1, v1) = (aff.contact.0 + aff.trajectory.0, aff.contact.1 + aff.trajectory.1);
    let p_end = extr.to_base(&Point3::from(intr.ray(u1, v1) * z_c));
    let along = p_end - p_c;
    let viewing = p_c - extr.center();
    let n = along.cross(&viewing);
    let scale = along.norm() * viewing.norm();
    if !(scale > 0.0) || n.norm() <= 1e-12 * scale {
        return Err(AffordanceError::DegeneratePlane);
    }
    Ok(ProjectionPlane { normal: n / n.norm(), anchor: p_c })
}

/// Intersection direction of the two planes, oriented to agree with the
/// real-view trajectory.
pub fn intersect_post_contact(
    plane_real: &ProjectionPlane,
    plane_virtual: &ProjectionPlane,
    aff_real: &PixelAffordance,
    intr: &CameraIntrinsics,
    extr_real: &CameraExtrinsics,
) -> Result<Affordance3D, AffordanceError> {
    let dot = plane_real.normal.dot(&plane_virtual.normal);
    if dot.abs() > 1.0 - PARALLEL_GUARD {
        return Err(AffordanceError::IllConditioned(dot.abs()));
    }
    let mut dir = plane_real.normal.cross(&plane_virtual.normal).normalize();
    let (du, dv) = project_direction(&plane_real.anchor, &dir, intr, extr_real)?;
    if du * aff_real.trajectory.0 + dv * aff_real.trajectory.1 < 0.0 {
        dir = -dir;
    }
    Ok(Affordance3D { contact: plane_real.anchor, direction: dir })
}

/// Depth at the contact pixel, or the nearest valid masked depth within a few pixels.
pub fn depth_at(depth: &DepthMap, mask: Option<&Mask>, pixel: (f64, f64)) -> Result<f64, AffordanceError> {
    let (u0, v0) = (pixel.0.round() as i64, pixel.1.round() as i64);
    let mut best: Option<(i64, f64)> = None;
    for r in 0..=4i64 {
        for dv in -r..=r {
            for du in -r..=r {
                if du.abs().max(dv.abs()) != r {
                    continue;
                }
                let (u, v) = (u0 + du, v0 + dv);
                if u < 0 || v < 0 || u >= depth.width as i64 || v >= depth.height as i64 {
                    continue;
                }
                let (u, v) = (u as usize, v as usize);
                let z = depth.get(u, v);
                if z > 0.0 && mask.is_none_or(|m| m.get(u, v)) {
                    let d2 = du * du + dv * dv;
                    if best.is_none_or(|(bd, _)| d2 < bd) {
                        best = Some((d2, z));
                    }
                }
            }
        }
        if let Some((_, z)) = best {
            return Ok(z);
        }
    }
    Err(AffordanceError::NoDepth(pixel.0, pixel.1))
}

/// Full lifting: depth at each contact, both planes, intersection.
#[allow(clippy::too_many_arguments)]
pub fn project_affordance(
    depth: &DepthMap,
    mask: &Mask,
    intr: &CameraIntrinsics,
    extr_real: &CameraExtrinsics,
    extr_virtual: &CameraExtrinsics,
    aff_real: &PixelAffordance,
    aff_virtual: &PixelAffordance,
) -> Result<Affordance3D, AffordanceError> {
    let z_real = depth_at(depth, Some(mask), aff_real.contact)?;
    let (vdepth, vmask) = warp_to_virtual_view(depth, mask, intr, extr_real, extr_virtual)?;
    let z_virtual = depth_at(&vdepth, Some(&vmask), aff_virtual.contact)?;
    let real = plane_from_affordance(aff_real, z_real, intr, extr_real)?;
    let virt = plane_from_affordance(aff_virtual, z_virtual, intr, extr_virtual)?;
    intersect_post_contact(&real, &virt, aff_real, intr, extr_real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    /// 2D affordance of a 3D motion `v` at `p`, as seen by `extr`.
    fn observe(p: &Point3, v: &Vector3, extr: &CameraExtrinsics, len: f64) -> PixelAffordance {
        let (u, w, _) = project(p, &intr(), extr).unwrap();
        let (du, dv) = project_direction(p, v, &intr(), extr).unwrap();
        let n = (du * du + dv * dv).sqrt();
        PixelAffordance::new((u, w), (du / n * len, dv / n * len)).unwrap()
    }

    fn angle(a: (f64, f64), b: (f64, f64)) -> f64 {
        let c = (a.0 * b.0 + a.1 * b.1) / ((a.0.hypot(a.1)) * (b.0.hypot(b.1)));
        c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn plane_normal_is_orthogonal_to_both_spanning_vectors() {
        // camera at the origin looking down -z
        let extr = CameraExtrinsics::looking_along(Point3::origin(), -Vector3::z(), Vector3::x());
        let aff = PixelAffordance::new((300.0, 200.0), (40.0, 0.0)).unwrap();
        let plane = plane_from_affordance(&aff, 1.5, &intr(), &extr).unwrap();
        let p_end = extr.to_base(&Point3::from(intr().ray(340.0, 200.0) * 1.5));
        assert!(plane.normal.dot(&(p_end - plane.anchor)).abs() < 1e-12);
        assert!(plane.normal.dot(&(plane.anchor - extr.center())).abs() < 1e-12);
    }

    #[test]
    fn plane_contains_true_motion_and_ignores_trajectory_length() {
        let extr = CameraExtrinsics::looking_forward(Point3::new(0.0, 0.1, 0.5), 0.4);
        let p = Point3::new(0.8, 0.05, 0.1);
        let v = Vector3::new(-0.3, 0.2, 0.5).normalize();
        let aff = observe(&p, &v, &extr, 30.0);
        let z = extr.to_camera(&p).z;
        let plane = plane_from_affordance(&aff, z, &intr(), &extr).unwrap();
        assert!(plane.normal.dot(&v).abs() < 1e-9);
        let long = PixelAffordance { trajectory: (aff.trajectory.0 * 5.0, aff.trajectory.1 * 5.0), ..aff };
        let plane5 = plane_from_affordance(&long, z, &intr(), &extr).unwrap();
        assert!(plane.normal.cross(&plane5.normal).norm() < 1e-9);
    }

    #[test]
    fn degenerate_and_parallel_inputs_rejected() {
        let extr = CameraExtrinsics::identity();
        assert!(PixelAffordance::new((1.0, 1.0), (0.0, 0.0)).is_err());
        let a = ProjectionPlane { normal: Vector3::x(), anchor: Point3::new(0.0, 0.0, 1.0) };
        let aff = PixelAffordance::new((320.0, 240.0), (1.0, 0.0)).unwrap();
        assert!(matches!(
            intersect_post_contact(&a, &a, &aff, &intr(), &extr),
            Err(AffordanceError::IllConditioned(_))
        ));
    }

    #[test]
    fn orthogonal_planes_give_signed_z() {
        // camera looking along base +y with image y = base -z
        let extr = CameraExtrinsics::looking_along(Point3::new(0.0, -1.0, 0.0), Vector3::y(), Vector3::x());
        let a = ProjectionPlane { normal: Vector3::x(), anchor: Point3::origin() };
        let b = ProjectionPlane { normal: Vector3::y(), ..a };
        let up = PixelAffordance::new((320.0, 240.0), (0.0, -10.0)).unwrap();
        let d = intersect_post_contact(&a, &b, &up, &intr(), &extr).unwrap();
        assert!((d.direction - Vector3::z()).norm() < 1e-12);
        let down = PixelAffordance::new((320.0, 240.0), (0.0, 10.0)).unwrap();
        let d = intersect_post_contact(&a, &b, &down, &intr(), &extr).unwrap();
        assert!((d.direction + Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn identity_warp_preserves_masked_depth() {
        let mut depth = DepthMap::zeros(640, 480);
        let mut mask = Mask::empty(640, 480);
        for v in 100..200 {
            for u in 150..300 {
                depth.set(u, v, 1.0 + 0.001 * u as f64);
                mask.set(u, v, true);
            }
        }
        let e = CameraExtrinsics::looking_forward(Point3::new(0.0, 0.0, 0.5), 0.3);
        let (w, m) = warp_to_virtual_view(&depth, &mask, &intr(), &e, &e).unwrap();
        assert_eq!(m, mask);
        for i in 0..depth.values.len() {
            if mask.bits[i] {
                assert!((w.values[i] - depth.values[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translation_toward_plane_halves_depth() {
        let real = CameraExtrinsics::identity();
        let mut depth = DepthMap::zeros(640, 480);
        let mask = Mask::new(640, 480, vec![true; 640 * 480]).unwrap();
        depth.values.iter_mut().for_each(|z| *z = 2.0);
        let closer = CameraExtrinsics { transform: crate::geometry::RigidTransform::from_translation(Vector3::new(0.0, 0.0, -1.0)) };
        let (w, m) = warp_to_virtual_view(&depth, &mask, &intr(), &real, &closer).unwrap();
        for i in 0..w.values.len() {
            if m.bits[i] {
                assert!((w.values[i] - 1.0).abs() < 1e-12);
            }
        }
        // every warped pixel lifts back onto the plane z = 2
        for v in (0..480).step_by(7) {
            for u in (0..640).step_by(7) {
                if m.get(u, v) {
                    let p = back_project((u as f64, v as f64), w.get(u, v), &intr(), &closer).unwrap();
                    assert!((p.z - 2.0).abs() < 2e-3);
                }
            }
        }
        let behind = CameraExtrinsics { transform: crate::geometry::RigidTransform::from_translation(Vector3::new(0.0, 0.0, -5.0)) };
        assert_eq!(warp_to_virtual_view(&depth, &mask, &intr(), &real, &behind), Err(AffordanceError::EmptyWarp));
    }

    fn arb_unit() -> impl Strategy<Value = Vector3> {
        prop::array::uniform3(-1.0f64..1.0)
            .prop_filter("non-zero", |a| Vector3::from(*a).norm() > 0.2)
            .prop_map(|a| Vector3::from(a).normalize())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn direction_lies_in_both_planes_and_reprojects(
            v in arb_unit(),
            yaw in -0.6f64..0.6,
            pitch in 0.2f64..1.1,
            len_r in 1.0f64..80.0,
            len_v in 1.0f64..80.0,
        ) {
            let p = Point3::new(0.8, 0.0, 0.2);
            let real = CameraExtrinsics::looking_forward(Point3::new(0.0, 0.0, 0.5), 0.3);
            let cam = Point3::new(p.x - 0.7 * yaw.cos() * pitch.cos(), p.y - 0.7 * yaw.sin() * pitch.cos(), p.z + 0.7 * pitch.sin());
            let virt = CameraExtrinsics::looking_along(cam, p - cam, Vector3::new(yaw.sin(), -yaw.cos(), 0.0));
            let visible = |e: &CameraExtrinsics| {
                let (du, dv) = project_direction(&p, &v, &intr(), e).unwrap();
                du.hypot(dv) > 1.0
            };
            prop_assume!(visible(&real) && visible(&virt));
            let ar = observe(&p, &v, &real, len_r);
            let av = observe(&p, &v, &virt, len_v);
            let pr = plane_from_affordance(&ar, real.to_camera(&p).z, &intr(), &real).unwrap();
            let pv = plane_from_affordance(&av, virt.to_camera(&p).z, &intr(), &virt).unwrap();
            match intersect_post_contact(&pr, &pv, &ar, &intr(), &real) {
                Ok(out) => {
                    prop_assert!(out.direction.dot(&pr.normal).abs() < 1e-9);
                    prop_assert!(out.direction.dot(&pv.normal).abs() < 1e-9);
                    prop_assert!(out.direction.dot(&v) > 1.0 - 1e-9);
                    let r2 = project_direction(&pr.anchor, &out.direction, &intr(), &real).unwrap();
                    let v2 = project_direction(&pv.anchor, &out.direction, &intr(), &virt).unwrap();
                    prop_assert!(angle(r2, ar.trajectory) < 1e-6);
                    prop_assert!(angle(v2, av.trajectory) < 1e-6);
                }
                Err(AffordanceError::IllConditioned(_)) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
