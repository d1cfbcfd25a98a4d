//! Convex triangle soups and ASCII OFF I/O.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{hull::convex_hull, Point3, RigidTransform, Vector3};

pub type Triangle = [Point3; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPiece {
    pub triangles: Vec<Triangle>,
}

impl ConvexPiece {
    pub fn new(triangles: Vec<Triangle>) -> Self {
        ConvexPiece { triangles }
    }

    /// Axis-aligned box with outward-facing triangles.
    pub fn cuboid(min: Point3, max: Point3) -> Self {
        let c = |i: usize| {
            Point3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            )
        };
        // each face as a quad (a, b, c, d) counter-clockwise seen from outside
        const QUADS: [[usize; 4]; 6] = [
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
        ];
        let mut triangles = Vec::with_capacity(12);
        for q in QUADS {
            triangles.push([c(q[0]), c(q[1]), c(q[2])]);
            triangles.push([c(q[0]), c(q[2]), c(q[3])]);
        }
        ConvexPiece { triangles }
    }

    pub fn hull_of(points: &[Point3]) -> Option<Self> {
        convex_hull(points).map(ConvexPiece::new)
    }

    /// Unique vertices in first-seen order.
    pub fn vertices(&self) -> Vec<Point3> {
        let mut out: Vec<Point3> = Vec::new();
        for tri in &self.triangles {
            for p in tri {
                if !out.iter().any(|q| q == p) {
                    out.push(*p);
                }
            }
        }
        out
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        ConvexPiece {
            triangles: self.triangles.iter().map(|tri| tri.map(|p| t.apply(&p))).collect(),
        }
    }

    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for tri in &self.triangles {
            for p in tri {
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
        (lo, hi)
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| triangle_normal(t).norm() * 0.5).sum()
    }
}

/// Unnormalised normal `(b - a) × (c - a)`.
pub fn triangle_normal(t: &Triangle) -> Vector3 {
    (t[1] - t[0]).cross(&(t[2] - t[0]))
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("OFF parse error at line {line}: {msg}")]
pub struct OffError {
    pub line: usize,
    pub msg: String,
}

pub fn write_off(piece: &ConvexPiece) -> String {
    let verts = piece.vertices();
    let index = |p: &Point3| verts.iter().position(|q| q == p).expect("vertex present");
    let mut s = String::from("OFF\n");
    let _ = writeln!(s, "{} {} 0", verts.len(), piece.triangles.len());
    for v in &verts {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    for t in &piece.triangles {
        let _ = writeln!(s, "3 {} {} {}", index(&t[0]), index(&t[1]), index(&t[2]));
    }
    s
}

/// Parses ASCII OFF; polygons with more than three vertices are fanned.
pub fn read_off(text: &str) -> Result<ConvexPiece, OffError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let err = |line: usize, msg: &str| OffError { line, msg: msg.to_string() };
    let (ln, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    let mut counts_inline = None;
    if header != "OFF" {
        if let Some(rest) = header.strip_prefix("OFF") {
            counts_inline = Some(rest.trim().to_string());
        } else {
            return Err(err(ln, "missing OFF header"));
        }
    }
    let (ln, counts) = match counts_inline {
        Some(c) if !c.is_empty() => (ln, c),
        _ => {
            let (l, c) = lines.next().ok_or_else(|| err(ln, "missing counts"))?;
            (l, c.to_string())
        }
    };
    let nums: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| err(ln, "bad count")))
        .collect::<Result<_, _>>()?;
    if nums.len() < 2 {
        return Err(err(ln, "expected vertex and face counts"));
    }
    let (nv, nf) = (nums[0], nums[1]);
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, line) = lines.next().ok_or_else(|| err(ln, "truncated vertex list"))?;
        let xyz: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse().map_err(|_| err(l, "bad coordinate")))
            .collect::<Result<_, _>>()?;
        if xyz.len() != 3 {
            return Err(err(l, "vertex needs three coordinates"));
        }
        verts.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, line) = lines.next().ok_or_else(|| err(ln, "truncated face list"))?;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(l, "bad index")))
            .collect::<Result<_, _>>()?;
        let n = *idx.first().ok_or_else(|| err(l, "empty face"))?;
        if n < 3 || idx.len() < n + 1 {
            return Err(err(l, "face needs at least three indices"));
        }
        let ids = &idx[1..=n];
        if ids.iter().any(|&i| i >= verts.len()) {
            return Err(err(l, "vertex index out of range"));
        }
        for k in 1..n - 1 {
            triangles.push([verts[ids[0]], verts[ids[k]], verts[ids[k + 1]]]);
        }
    }
    Ok(ConvexPiece { triangles })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_normals_point_outward() {
        let b = ConvexPiece::cuboid(Point3::new(-1.0, -2.0, -3.0), Point3::new(1.0, 2.0, 3.0));
        assert_eq!(b.triangles.len(), 12);
        for t in &b.triangles {
            let c = (t[0].coords + t[1].coords + t[2].coords) / 3.0;
            assert!(triangle_normal(t).dot(&c) > 0.0);
        }
        assert!((b.area() - 2.0 * (8.0 + 24.0 + 12.0)).abs() < 1e-12);
    }

    #[test]
    fn off_round_trip() {
        let b = ConvexPiece::cuboid(Point3::new(0.1, 0.2, 0.3), Point3::new(0.4, 0.5, 0.6));
        let back = read_off(&write_off(&b)).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn off_quads_are_fanned() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        assert_eq!(read_off(text).unwrap().triangles.len(), 2);
        assert!(read_off("PLY\n").is_err());
        assert!(read_off("OFF\n1 1 0\n0 0 0\n3 0 1 2\n").is_err());
    }
}
