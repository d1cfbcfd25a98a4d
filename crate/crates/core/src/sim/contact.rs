//! Signed distances from points to convex part geometry.

use crate::geometry::{Point3, Vector3};
use crate::model::ConvexPiece;

#[derive(Debug, Clone, PartialEq)]
enum ShapeKind {
    /// Axis-aligned in the part frame; exact distance everywhere.
    Cuboid { center: Vector3, half: Vector3 },
    /// Outward face planes `n·p = d`. Outside distances are the largest
    /// plane distance, exact over faces and a lower bound near edges.
    Polytope { planes: Vec<(Vector3, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    kind: ShapeKind,
    bound_center: Point3,
    bound_radius: f64,
}

/// Closest-feature query result. `distance` is negative inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proximity {
    pub distance: f64,
    /// Outward surface normal at the closest feature.
    pub normal: Vector3,
}

impl Shape {
    pub fn from_piece(piece: &ConvexPiece) -> Option<Shape> {
        let verts = piece.vertices();
        if verts.len() < 4 {
            return None;
        }
        let (lo, hi) = piece.bounds();
        let center = (lo.coords + hi.coords) / 2.0;
        let bound_radius = verts.iter().map(|v| (v.coords - center).norm()).fold(0.0, f64::max);
        let at_corner = |v: &Point3| (0..3).all(|a| (v[a] - lo[a]).abs() < 1e-12 || (v[a] - hi[a]).abs() < 1e-12);
        let kind = if verts.len() == 8 && verts.iter().all(at_corner) {
            ShapeKind::Cuboid { center, half: (hi.coords - lo.coords) / 2.0 }
        } else {
            let inner = verts.iter().fold(Vector3::zeros(), |a, v| a + v.coords) / verts.len() as f64;
            let mut planes: Vec<(Vector3, f64)> = Vec::new();
            for tri in &piece.triangles {
                let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
                if n.norm() < 1e-15 {
                    continue;
                }
                let mut n = n.normalize();
                let mut d = n.dot(&tri[0].coords);
                if n.dot(&inner) - d > 0.0 {
                    n = -n;
                    d = -d;
                }
                if !planes.iter().any(|(m, e)| (m - n).norm() < 1e-9 && (e - d).abs() < 1e-9) {
                    planes.push((n, d));
                }
            }
            if planes.len() < 4 {
                return None;
            }
            ShapeKind::Polytope { planes }
        };
        Some(Shape { kind, bound_center: Point3::from(center), bound_radius })
    }

    /// Coarse rejection: true when `p` is certainly farther than `margin`.
    #[inline]
    pub fn beyond(&self, p: &Point3, margin: f64) -> bool {
        let r = self.bound_radius + margin;
        (p - self.bound_center).norm_squared() > r * r
    }

    pub fn proximity(&self, p: &Point3) -> Proximity {
        match &self.kind {
            ShapeKind::Cuboid { center, half } => {
                let local = p.coords - center;
                let q = local.abs() - half;
                let outside = q.sup(&Vector3::zeros());
                let out_norm = outside.norm();
                if out_norm > 0.0 {
                    let dir = Vector3::new(
                        outside.x * local.x.signum(),
                        outside.y * local.y.signum(),
                        outside.z * local.z.signum(),
                    );
                    Proximity { distance: out_norm, normal: dir / out_norm }
                } else {
                    let a = if q.x >= q.y && q.x >= q.z { 0 } else if q.y >= q.z { 1 } else { 2 };
                    let mut normal = Vector3::zeros();
                    normal[a] = if local[a] >= 0.0 { 1.0 } else { -1.0 };
                    Proximity { distance: q[a], normal }
                }
            }
            ShapeKind::Polytope { planes } => {
                let (mut best, mut normal) = (f64::NEG_INFINITY, Vector3::z());
                for (n, d) in planes {
                    let s = n.dot(&p.coords) - d;
                    if s > best {
                        best = s;
                        normal = *n;
                    }
                }
                Proximity { distance: best, normal }
            }
        }
    }
}

/// All pieces of one part, in the part frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Collider {
    pub shapes: Vec<Shape>,
}

impl Collider {
    pub fn new(pieces: &[ConvexPiece]) -> Collider {
        Collider { shapes: pieces.iter().filter_map(Shape::from_piece).collect() }
    }

    /// Nearest surface among pieces within `margin`, if any.
    pub fn proximity(&self, p: &Point3, margin: f64) -> Option<Proximity> {
        let mut best: Option<Proximity> = None;
        for s in &self.shapes {
            if s.beyond(p, margin) {
                continue;
            }
            let q = s.proximity(p);
            if q.distance < margin && best.is_none_or(|b| q.distance < b.distance) {
                best = Some(q);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_distances() {
        let piece = ConvexPiece::cuboid(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 2.0, 3.0));
        let s = Shape::from_piece(&piece).unwrap();
        assert!(matches!(s.kind, ShapeKind::Cuboid { .. }));
        let q = s.proximity(&Point3::new(1.5, 1.0, 1.0));
        assert!((q.distance - 0.5).abs() < 1e-12);
        assert_eq!(q.normal, Vector3::x());
        let q = s.proximity(&Point3::new(0.2, 1.0, 1.5));
        assert!((q.distance + 0.2).abs() < 1e-12);
        assert_eq!(q.normal, -Vector3::x());
        let q = s.proximity(&Point3::new(2.0, 3.0, 1.0));
        assert!((q.distance - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn polytope_matches_cuboid_on_faces() {
        let cube = ConvexPiece::cuboid(Point3::new(-0.1, -0.1, -0.1), Point3::new(0.1, 0.1, 0.1));
        // a rotated cube is no longer axis aligned
        let rot = crate::geometry::RigidTransform::from_rpy(Vector3::zeros(), 0.3, 0.0, 0.0);
        let turned = cube.transformed(&rot);
        let a = Shape::from_piece(&cube).unwrap();
        let b = Shape::from_piece(&turned).unwrap();
        assert!(matches!(b.kind, ShapeKind::Polytope { .. }));
        for p in [Point3::new(0.15, 0.0, 0.0), Point3::new(0.0, 0.0, 0.05), Point3::new(-0.03, 0.02, 0.0)] {
            let pa = a.proximity(&p);
            let pb = b.proximity(&rot.apply(&p));
            assert!((pa.distance - pb.distance).abs() < 1e-12);
            assert!((rot.apply_vector(&pa.normal) - pb.normal).norm() < 1e-9);
        }
    }
}
