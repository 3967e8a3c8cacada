//! Gauss rules on intervals and collapsed-product rules on tetrahedra.

use crate::geom::{tet_volume, Vec3};

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Collapsed Gauss rule on the reference tetrahedron, barycentric form
/// (l1, l2, l3) with weights summing to one. Exact for degree <= 2n - 3.
pub fn tet_rule(n: usize) -> Vec<([f64; 3], f64)> {
    let g = gauss_legendre(n);
    let mut out = Vec::with_capacity(n * n * n);
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            for &(w, ww) in &g {
                let x = u;
                let y = v * (1.0 - u);
                let z = w * (1.0 - u) * (1.0 - v);
                let jac = (1.0 - u) * (1.0 - u) * (1.0 - v);
                out.push(([x, y, z], 6.0 * wu * wv * ww * jac));
            }
        }
    }
    out
}

/// Integrates `f` over the signed tetrahedron (a, b, c, d).
pub fn integrate_tet<F: FnMut(&Vec3) -> f64>(t: &[Vec3; 4], rule: &[([f64; 3], f64)], mut f: F) -> f64 {
    let v = tet_volume(&t[0], &t[1], &t[2], &t[3]);
    let mut s = 0.0;
    for (l, w) in rule {
        let x = t[0] + l[0] * (t[1] - t[0]) + l[1] * (t[2] - t[0]) + l[2] * (t[3] - t[0]);
        s += w * f(&x);
    }
    s * v
}

/// Exact integral of x_a x_b over a tetrahedron, coordinates relative to `o`.
pub fn tet_second_moment(t: &[Vec3; 4], o: &Vec3, a: usize, b: usize) -> f64 {
    let v = tet_volume(&t[0], &t[1], &t[2], &t[3]);
    let p: Vec<Vec3> = t.iter().map(|x| x - o).collect();
    let sa: f64 = p.iter().map(|x| x[a]).sum();
    let sb: f64 = p.iter().map(|x| x[b]).sum();
    let sab: f64 = p.iter().map(|x| x[a] * x[b]).sum();
    v / 20.0 * (sab + sa * sb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials() {
        for n in 1..6 {
            let g = gauss_legendre(n);
            for p in 0..2 * n {
                let s: f64 = g.iter().map(|(x, w)| w * x.powi(p as i32)).sum();
                assert!((s - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn tet_rule_degree() {
        let t = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let r = tet_rule(4);
        // int x^2 y z over the unit tet = 2! 1! 1! / 7! * 3! ... = 2/5040
        let s = integrate_tet(&t, &r, |p| p.x * p.x * p.y * p.z);
        assert!((s - 2.0 / 5040.0).abs() < 1e-15);
        let m = tet_second_moment(&t, &Vec3::zeros(), 0, 1);
        assert!((m - 1.0 / 120.0).abs() < 1e-16);
    }
}
