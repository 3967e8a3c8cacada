//! Small geometric kernel: planes, boxes, planar polygons and tetrahedra.

use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    /// Unit normal.
    pub n: Vec3,
    pub d: f64,
}

impl Plane {
    pub fn from_point_normal(p: &Vec3, n: &Vec3) -> Self {
        let n = n.normalize();
        Plane { n, d: n.dot(p) }
    }

    /// Signed distance, positive on the side the normal points to.
    #[inline]
    pub fn dist(&self, x: &Vec3) -> f64 {
        self.n.dot(x) - self.d
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a, I: IntoIterator<Item = &'a Vec3>>(pts: I) -> Self {
        let mut b = Aabb::empty();
        for p in pts {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    pub fn inflated(&self, eps: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(eps),
            max: self.max + Vec3::repeat(eps),
        }
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= o.max[k] && o.min[k] <= self.max[k])
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

/// Vector area of a closed planar polygon (normal times area, right-hand rule).
pub fn area_vector(pts: &[Vec3]) -> Vec3 {
    let mut s = Vec3::zeros();
    if pts.len() < 3 {
        return s;
    }
    let p0 = pts[0];
    for i in 1..pts.len() - 1 {
        s += (pts[i] - p0).cross(&(pts[i + 1] - p0));
    }
    0.5 * s
}

/// Centroid, area and unit normal of a planar (possibly non-convex) polygon.
pub fn polygon_props(pts: &[Vec3]) -> (Vec3, f64, Vec3) {
    let av = area_vector(pts);
    let area = av.norm();
    if area == 0.0 {
        let c = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / pts.len().max(1) as f64;
        return (c, 0.0, Vec3::zeros());
    }
    let n = av / area;
    let p0 = pts[0];
    let mut c = Vec3::zeros();
    let mut w = 0.0;
    for i in 1..pts.len() - 1 {
        let a = 0.5 * (pts[i] - p0).cross(&(pts[i + 1] - p0)).dot(&n);
        c += a * (p0 + pts[i] + pts[i + 1]) / 3.0;
        w += a;
    }
    (c / w, area, n)
}

/// Sutherland-Hodgman clip keeping the part with `plane.dist <= tol`.
pub fn clip_convex(poly: &[Vec3], plane: &Plane, tol: f64) -> Vec<Vec3> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let da = plane.dist(&a);
        let db = plane.dist(&b);
        let ain = da <= tol;
        let bin = db <= tol;
        if ain {
            out.push(a);
        }
        if ain != bin {
            let t = da / (da - db);
            out.push(a + t * (b - a));
        }
    }
    out
}

/// Signed tetrahedron volume, positive when (b-a, c-a, d-a) is right-handed.
#[inline]
pub fn tet_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

/// Two unit vectors completing `n` to an orthonormal right-handed frame.
pub fn frame(n: &Vec3) -> (Vec3, Vec3) {
    let a = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = (a - n * n.dot(&a)).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    if l2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / l2).clamp(0.0, 1.0);
    (p - (a + t * ab)).norm()
}

/// True when `p` lies in the closed planar polygon (within `tol`), `n` its unit normal.
pub fn point_in_polygon(p: &Vec3, pts: &[Vec3], n: &Vec3, tol: f64) -> bool {
    let (u, v) = frame(n);
    let q = (p.dot(&u), p.dot(&v));
    let m = pts.len();
    let mut wind = false;
    for i in 0..m {
        let a = &pts[i];
        let b = &pts[(i + 1) % m];
        if point_segment_distance(p, a, b) <= tol {
            return true;
        }
        let (ax, ay) = (a.dot(&u), a.dot(&v));
        let (bx, by) = (b.dot(&u), b.dot(&v));
        if (ay > q.1) != (by > q.1) {
            let x = ax + (q.1 - ay) * (bx - ax) / (by - ay);
            if q.0 < x {
                wind = !wind;
            }
        }
    }
    wind
}

/// Ear-clipping triangulation of a simple planar polygon; returns index triples
/// oriented like the input loop. Collinear vertices are kept as triangle corners.
pub fn triangulate(pts: &[Vec3], n: &Vec3) -> Option<Vec<[usize; 3]>> {
    let m = pts.len();
    if m < 3 {
        return None;
    }
    if m == 3 {
        return Some(vec![[0, 1, 2]]);
    }
    let (u, v) = frame(n);
    let p2: Vec<(f64, f64)> = pts.iter().map(|p| (p.dot(&u), p.dot(&v))).collect();
    let scale = {
        let b = Aabb::from_points(pts.iter());
        b.extent().norm().max(1e-300)
    };
    let eps = 1e-12 * scale * scale;
    let cross = |a: usize, b: usize, c: usize| {
        let (ax, ay) = p2[a];
        let (bx, by) = p2[b];
        let (cx, cy) = p2[c];
        (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    };
    let mut idx: Vec<usize> = (0..m).collect();
    let mut tris = Vec::with_capacity(m - 2);
    let mut guard = 0;
    while idx.len() > 3 {
        let k = idx.len();
        let mut clipped = false;
        for i in 0..k {
            let a = idx[(i + k - 1) % k];
            let b = idx[i];
            let c = idx[(i + 1) % k];
            if cross(a, b, c) <= eps {
                continue;
            }
            let blocked = idx.iter().any(|&q| {
                if q == a || q == b || q == c {
                    return false;
                }
                let d1 = cross(a, b, q);
                let d2 = cross(b, c, q);
                let d3 = cross(c, a, q);
                d1 >= -eps && d2 >= -eps && d3 >= -eps
            });
            if blocked {
                continue;
            }
            tris.push([a, b, c]);
            idx.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            // Remaining loop is degenerate (all collinear) or not simple.
            let area: f64 = (1..idx.len() - 1)
                .map(|i| cross(idx[0], idx[i], idx[i + 1]))
                .sum();
            if area.abs() <= eps * idx.len() as f64 {
                return Some(tris);
            }
            return None;
        }
        guard += 1;
        if guard > 4 * m {
            return None;
        }
    }
    if cross(idx[0], idx[1], idx[2]) > eps {
        tris.push([idx[0], idx[1], idx[2]]);
    }
    Some(tris)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_properties() {
        let sq = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(2.0, 2.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
        ];
        let (c, a, n) = polygon_props(&sq);
        assert!((a - 4.0).abs() < 1e-14);
        assert!((c - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-14);
        assert!((n - Vec3::z()).norm() < 1e-14);
        let cut = clip_convex(&sq, &Plane::from_point_normal(&Vec3::new(1.0, 0.0, 0.0), &Vec3::x()), 0.0);
        let (_, a2, _) = polygon_props(&cut);
        assert!((a2 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn triangulate_nonconvex_with_collinear_point() {
        // L-shape with an extra collinear vertex on the bottom edge.
        let pts = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(2.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(1.0, 2.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
        ];
        let tris = triangulate(&pts, &Vec3::z()).unwrap();
        let total: f64 = tris
            .iter()
            .map(|t| area_vector(&[pts[t[0]], pts[t[1]], pts[t[2]]]).z)
            .sum();
        assert!((total - 3.0).abs() < 1e-13);
        assert!(tris
            .iter()
            .all(|t| area_vector(&[pts[t[0]], pts[t[1]], pts[t[2]]]).z > 0.0));
    }

    #[test]
    fn polygon_membership() {
        let tri = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 1.0)];
        assert!(point_in_polygon(&Vec3::new(0.2, 0.2, 1.0), &tri, &Vec3::z(), 1e-12));
        assert!(point_in_polygon(&Vec3::new(0.5, 0.0, 1.0), &tri, &Vec3::z(), 1e-12));
        assert!(!point_in_polygon(&Vec3::new(0.6, 0.6, 1.0), &tri, &Vec3::z(), 1e-12));
    }
}
