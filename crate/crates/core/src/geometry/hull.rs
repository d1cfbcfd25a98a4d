//! 3D convex hull (quickhull).

use std::collections::HashSet;

use super::{Point3, Vector3};

struct Face {
    v: [usize; 3],
    normal: Vector3,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(points: &[Point3], v: [usize; 3]) -> Face {
        let n = (points[v[1]] - points[v[0]]).cross(&(points[v[2]] - points[v[0]]));
        let normal = n / n.norm().max(f64::MIN_POSITIVE);
        Face { v, normal, offset: normal.dot(&points[v[0]].coords), outside: Vec::new(), alive: true }
    }

    fn distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }
}

/// Outward-oriented triangles of the convex hull, or `None` when the points
/// are (numerically) coplanar.
pub fn convex_hull(points: &[Point3]) -> Option<Vec<[Point3; 3]>> {
    if points.len() < 4 {
        return None;
    }
    let (lo, hi) = bounds(points);
    let scale = (hi - lo).norm();
    if scale <= 0.0 {
        return None;
    }
    let eps = 1e-9 * scale;

    // initial simplex from extreme points
    let mut i0 = 0;
    let mut i1 = 0;
    let mut best = -1.0;
    for axis in 0..3 {
        let (mn, mx) = extreme_pair(points, axis);
        let d = (points[mx] - points[mn]).norm();
        if d > best {
            best = d;
            i0 = mn;
            i1 = mx;
        }
    }
    let dir = (points[i1] - points[i0]).normalize();
    let i2 = (0..points.len()).max_by(|&a, &b| {
        line_dist(&points[a], &points[i0], &dir).total_cmp(&line_dist(&points[b], &points[i0], &dir))
    })?;
    if line_dist(&points[i2], &points[i0], &dir) <= eps {
        return None;
    }
    let n = (points[i1] - points[i0]).cross(&(points[i2] - points[i0])).normalize();
    let i3 = (0..points.len())
        .max_by(|&a, &b| (points[a] - points[i0]).dot(&n).abs().total_cmp(&(points[b] - points[i0]).dot(&n).abs()))?;
    if (points[i3] - points[i0]).dot(&n).abs() <= eps {
        return None;
    }

    let interior = Point3::from((points[i0].coords + points[i1].coords + points[i2].coords + points[i3].coords) / 4.0);
    let mut faces: Vec<Face> = Vec::new();
    for tri in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let mut f = Face::new(points, tri);
        if f.distance(&interior) > 0.0 {
            f = Face::new(points, [tri[0], tri[2], tri[1]]);
        }
        faces.push(f);
    }
    let simplex = [i0, i1, i2, i3];
    for (pi, p) in points.iter().enumerate() {
        if simplex.contains(&pi) {
            continue;
        }
        assign(&mut faces, 0..4, pi, p, eps);
    }

    while let Some(fi) = faces.iter().position(|f| f.alive && !f.outside.is_empty()) {
        let apex = *faces[fi]
            .outside
            .iter()
            .max_by(|&&a, &&b| faces[fi].distance(&points[a]).total_cmp(&faces[fi].distance(&points[b])))
            .expect("non-empty outside set");
        let ap = points[apex];
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&i| faces[i].alive && faces[i].distance(&ap) > eps)
            .collect();
        let mut edges = HashSet::new();
        for &i in &visible {
            let v = faces[i].v;
            for k in 0..3 {
                edges.insert((v[k], v[(k + 1) % 3]));
            }
        }
        let mut orphans = Vec::new();
        for &i in &visible {
            faces[i].alive = false;
            orphans.append(&mut faces[i].outside);
        }
        let first_new = faces.len();
        let mut horizon: Vec<(usize, usize)> =
            edges.iter().copied().filter(|&(a, b)| !edges.contains(&(b, a))).collect();
        horizon.sort_unstable();
        for (a, b) in horizon {
            faces.push(Face::new(points, [a, b, apex]));
        }
        let new_range = first_new..faces.len();
        for pi in orphans {
            if pi != apex {
                assign(&mut faces, new_range.clone(), pi, &points[pi], eps);
            }
        }
    }

    Some(
        faces
            .iter()
            .filter(|f| f.alive)
            .map(|f| [points[f.v[0]], points[f.v[1]], points[f.v[2]]])
            .collect(),
    )
}

fn assign(faces: &mut [Face], range: std::ops::Range<usize>, pi: usize, p: &Point3, eps: f64) {
    for fi in range {
        if faces[fi].alive && faces[fi].distance(p) > eps {
            faces[fi].outside.push(pi);
            return;
        }
    }
}

fn bounds(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

fn extreme_pair(points: &[Point3], axis: usize) -> (usize, usize) {
    let mut mn = 0;
    let mut mx = 0;
    for (i, p) in points.iter().enumerate() {
        if p[axis] < points[mn][axis] {
            mn = i;
        }
        if p[axis] > points[mx][axis] {
            mx = i;
        }
    }
    (mn, mx)
}

fn line_dist(p: &Point3, origin: &Point3, dir: &Vector3) -> f64 {
    let d = p - origin;
    (d - dir * d.dot(dir)).norm()
}
