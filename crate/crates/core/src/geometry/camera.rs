//! Pinhole camera model. Extrinsics `H` map robot-base coordinates into the
//! camera frame (x right, y down, z along the optical axis), so a camera point
//! returns to the base frame through `H⁻¹`.

use serde::{Deserialize, Serialize};

use super::{GeometryError, Point3, RigidTransform, Vector3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let k = CameraIntrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidCamera("principal point outside the image".into()));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    /// Camera-frame ray direction (z = 1) through pixel coordinates.
    pub fn ray(&self, u: f64, v: f64) -> Vector3 {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    /// base → camera.
    pub transform: RigidTransform,
}

impl CameraExtrinsics {
    pub fn identity() -> Self {
        CameraExtrinsics { transform: RigidTransform::identity() }
    }

    pub fn from_matrix(m: &[f64; 16]) -> Result<Self, GeometryError> {
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(GeometryError::InvalidCamera("extrinsic bottom row must be (0,0,0,1)".into()));
        }
        let transform = RigidTransform::from_row_major(m);
        if !transform.is_valid(1e-6) {
            return Err(GeometryError::InvalidCamera("extrinsic rotation is not a proper rotation".into()));
        }
        Ok(CameraExtrinsics { transform })
    }

    pub fn matrix(&self) -> [f64; 16] {
        self.transform.to_row_major()
    }

    /// Camera centre expressed in the base frame.
    pub fn center(&self) -> Point3 {
        self.transform.inverse().apply(&Point3::origin())
    }

    /// Camera at `position` looking along base +x, pitched down by `pitch`.
    pub fn looking_forward(position: Point3, pitch: f64) -> Self {
        let z = Vector3::new(pitch.cos(), 0.0, -pitch.sin());
        Self::looking_along(position, z, Vector3::new(0.0, -1.0, 0.0))
    }

    /// Camera at `position` with optical axis `forward`; `right_hint` is
    /// orthogonalised against it to give the image x axis.
    pub fn looking_along(position: Point3, forward: Vector3, right_hint: Vector3) -> Self {
        let z = forward.normalize();
        let x = (right_hint - z * z.dot(&right_hint)).normalize();
        let y = z.cross(&x);
        // rows of the base→camera rotation are the camera axes in base coordinates
        let r = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        CameraExtrinsics { transform: RigidTransform::new(r, -(r * position.coords)) }
    }

    pub fn to_camera(&self, p: &Point3) -> Point3 {
        self.transform.apply(p)
    }

    pub fn to_base(&self, p: &Point3) -> Point3 {
        self.transform.inverse().apply(p)
    }
}

/// Row-major depth image in metres; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != width * height {
            return Err(GeometryError::InvalidInput(format!(
                "depth map {}x{} has {} values",
                width,
                height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GeometryError::InvalidInput("depth values must be finite and >= 0".into()));
        }
        Ok(DepthMap { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        DepthMap { width, height, values: vec![0.0; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, z: f64) {
        self.values[v * self.width + u] = z;
    }
}

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, GeometryError> {
        if bits.len() != width * height {
            return Err(GeometryError::InvalidInput(format!(
                "mask {}x{} has {} entries",
                width,
                height,
                bits.len()
            )));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Mask { width, height, bits: vec![false; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.bits[v * self.width + u] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Mean pixel coordinate of the set bits.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for v in 0..self.height {
            for u in 0..self.width {
                if self.get(u, v) {
                    su += u as f64;
                    sv += v as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (su / n as f64, sv / n as f64))
    }
}

/// Lift pixel `(u, v)` at camera depth `z` into the base frame: `H⁻¹ K⁻¹ z (u, v, 1)ᵀ`.
pub fn back_project(
    pixel: (f64, f64),
    z: f64,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> Result<Point3, GeometryError> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(GeometryError::InvalidDepth(z));
    }
    if !intr.contains(pixel.0, pixel.1) {
        return Err(GeometryError::InvalidInput(format!(
            "pixel ({}, {}) outside {}x{} image",
            pixel.0, pixel.1, intr.width, intr.height
        )));
    }
    let cam = Point3::from(intr.ray(pixel.0, pixel.1) * z);
    Ok(extr.to_base(&cam))
}

/// Pinhole projection of a base-frame point; returns `(u, v, z)` with `z` the camera depth.
pub fn project(
    point: &Point3,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> Result<(f64, f64, f64), GeometryError> {
    let c = extr.to_camera(point);
    if !(c.z > 0.0) {
        return Err(GeometryError::OutOfFrustum(c.z));
    }
    Ok((intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy, c.z))
}

/// Image-plane derivative of the projection at `point` applied to `direction`.
pub fn project_direction(
    point: &Point3,
    direction: &Vector3,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> Result<(f64, f64), GeometryError> {
    let c = extr.to_camera(point);
    if !(c.z > 0.0) {
        return Err(GeometryError::OutOfFrustum(c.z));
    }
    let d = extr.transform.apply_vector(direction);
    let du = intr.fx * (d.x * c.z - c.x * d.z) / (c.z * c.z);
    let dv = intr.fy * (d.y * c.z - c.y * d.z) / (c.z * c.z);
    Ok((du, dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vga() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn principal_point_is_optical_axis() {
        let p = back_project((320.0, 240.0), 1.0, &vga(), &CameraExtrinsics::identity()).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn pinhole_arithmetic() {
        let p = back_project((620.0, 240.0), 2.0, &vga(), &CameraExtrinsics::identity()).unwrap();
        assert!((p.x - 1.0).abs() < 1e-15);
        assert_eq!(p.z, 2.0);
    }

    #[test]
    fn invalid_depth_and_frustum() {
        let k = vga();
        let e = CameraExtrinsics::identity();
        assert!(matches!(back_project((1.0, 1.0), 0.0, &k, &e), Err(GeometryError::InvalidDepth(_))));
        assert!(matches!(back_project((1.0, 1.0), -1.0, &k, &e), Err(GeometryError::InvalidDepth(_))));
        assert!(matches!(project(&Point3::new(0.0, 0.0, -1.0), &k, &e), Err(GeometryError::OutOfFrustum(_))));
    }

    #[test]
    fn round_trip_cases() {
        let k = vga();
        let poses = [
            CameraExtrinsics::identity(),
            CameraExtrinsics::looking_forward(Point3::new(0.2, 0.0, 0.7), 52f64.to_radians()),
            CameraExtrinsics::looking_along(
                Point3::new(-0.5, 1.0, 1.5),
                Vector3::new(1.0, -1.0, -1.0),
                Vector3::new(1.0, 1.0, 0.0),
            ),
        ];
        for (e, px) in poses.iter().zip([(10.0, 20.0), (320.5, 100.25), (639.0, 479.0)]) {
            let p = back_project(px, 1.3, &k, e).unwrap();
            let (u, v, z) = project(&p, &k, e).unwrap();
            assert!((u - px.0).abs() < 1e-9 && (v - px.1).abs() < 1e-9);
            assert!((z - 1.3).abs() < 1e-12);
        }
    }

    #[test]
    fn extrinsic_matrix_validation() {
        let mut m = CameraExtrinsics::identity().matrix();
        assert!(CameraExtrinsics::from_matrix(&m).is_ok());
        m[15] = 2.0;
        assert!(CameraExtrinsics::from_matrix(&m).is_err());
        let mut m = CameraExtrinsics::identity().matrix();
        m[0] = -1.0;
        assert!(CameraExtrinsics::from_matrix(&m).is_err());
    }

    proptest! {
        #[test]
        fn back_project_project_inverse(
            u in 0.0f64..639.0, v in 0.0f64..479.0, z in 0.05f64..10.0,
            px in -2.0f64..2.0, py in -2.0f64..2.0, pz in -2.0f64..2.0,
            fx in -1.0f64..1.0, fy in -1.0f64..1.0,
        ) {
            let e = CameraExtrinsics::looking_along(
                Point3::new(px, py, pz),
                Vector3::new(fx, fy, 1.0),
                Vector3::new(1.0, 0.0, 0.0),
            );
            let k = vga();
            let p = back_project((u, v), z, &k, &e).unwrap();
            let (u2, v2, z2) = project(&p, &k, &e).unwrap();
            prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
            prop_assert!((z - z2).abs() < 1e-9 * z.max(1.0));
        }
    }
}
