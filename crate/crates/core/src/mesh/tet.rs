//! Conforming tetrahedral refinement of selected cells, used to interpolate
//! vertex fields inside polyhedra.

use std::collections::HashMap;

use super::PolyMesh;
use crate::error::{Error, Result};
use crate::geom::{tet_volume, triangulate, Vec3};

#[derive(Clone, Debug, Default)]
pub struct TetMesh {
    /// Mesh vertices followed by one Steiner point per centroid-fanned cell piece.
    pub points: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub tet_cell: Vec<usize>,
    /// Tetrahedra of each mesh cell (empty for cells left out).
    pub cell_tets: Vec<Vec<usize>>,
    /// Cell owning each Steiner point (`None` for mesh vertices).
    pub steiner_cell: Vec<Option<usize>>,
    /// Cell pieces that admit no fan (cell, outward boundary triangles);
    /// fields inside them use mean value coordinates.
    pub hulls: Vec<(usize, Vec<[usize; 3]>)>,
}

impl TetMesh {
    pub fn num_mesh_vertices(&self) -> usize {
        self.steiner_cell.iter().take_while(|s| s.is_none()).count()
    }

    /// Barycentric coordinates of `x` in tetrahedron `t`.
    pub fn barycentric(&self, t: usize, x: &Vec3) -> [f64; 4] {
        let [a, b, c, d] = self.tets[t].map(|i| self.points[i]);
        let v = tet_volume(&a, &b, &c, &d);
        [
            tet_volume(x, &b, &c, &d) / v,
            tet_volume(&a, x, &c, &d) / v,
            tet_volume(&a, &b, x, &d) / v,
            tet_volume(&a, &b, &c, x) / v,
        ]
    }

    /// Tetrahedron of `cell` containing `x`, with its barycentric coordinates.
    pub fn find_in_cell(&self, cell: usize, x: &Vec3) -> Option<(usize, [f64; 4])> {
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for &t in self.cell_tets.get(cell)? {
            let l = self.barycentric(t, x);
            let m = l.iter().copied().fold(f64::INFINITY, f64::min);
            if m >= 0.0 {
                return Some((t, l));
            }
            if best.as_ref().is_none_or(|b| m > b.2) {
                best = Some((t, l, m));
            }
        }
        best.filter(|b| b.2 >= -1e-9).map(|b| (b.0, b.1))
    }

    /// Linear interpolation of per-point values at `x`.
    pub fn interpolate(&self, mesh: &PolyMesh, values: &[f64], x: &Vec3) -> Option<f64> {
        for c in mesh.locate_point(x) {
            if let Some((t, l)) = self.find_in_cell(c, x) {
                let ids = self.tets[t];
                return Some((0..4).map(|k| l[k] * values[ids[k]]).sum());
            }
            if let Some(h) = self.hull_at(c, x) {
                return Some(self.hull_interpolate(h, values, x));
            }
        }
        None
    }

    /// Hull piece of `cell` enclosing `x`.
    pub fn hull_at(&self, cell: usize, x: &Vec3) -> Option<usize> {
        self.hulls
            .iter()
            .position(|(c, tris)| *c == cell && winding_number(&self.points, tris, x) > 0.5)
            .or_else(|| self.hulls.iter().position(|(c, _)| *c == cell))
    }

    /// Mean value interpolation over a hull piece.
    pub fn hull_interpolate(&self, hull: usize, values: &[f64], x: &Vec3) -> f64 {
        mean_value(&self.points, &self.hulls[hull].1, values, x)
    }

    pub fn total_volume(&self) -> f64 {
        self.tets
            .iter()
            .map(|t| tet_volume(&self.points[t[0]], &self.points[t[1]], &self.points[t[2]], &self.points[t[3]]))
            .sum()
    }
}

fn winding_number(points: &[Vec3], tris: &[[usize; 3]], x: &Vec3) -> f64 {
    let mut omega = 0.0;
    for t in tris {
        let [a, b, d] = t.map(|i| points[i] - x);
        let (la, lb, ld) = (a.norm(), b.norm(), d.norm());
        let num = a.dot(&b.cross(&d));
        let den = la * lb * ld + a.dot(&b) * ld + a.dot(&d) * lb + b.dot(&d) * la;
        omega += 2.0 * num.atan2(den);
    }
    omega / (4.0 * std::f64::consts::PI)
}

/// Mean value coordinates of a closed outward triangle surface applied to
/// vertex values (Ju, Schaefer and Warren, 2005).
fn mean_value(points: &[Vec3], tris: &[[usize; 3]], values: &[f64], x: &Vec3) -> f64 {
    const EPS: f64 = 1e-10;
    let (mut num, mut den) = (0.0, 0.0);
    for t in tris {
        let p = t.map(|i| points[i]);
        let d = p.map(|q| (q - x).norm());
        if let Some(k) = (0..3).find(|&k| d[k] < EPS) {
            return values[t[k]];
        }
        let u = [0, 1, 2].map(|k| (p[k] - x) / d[k]);
        let theta = [0, 1, 2].map(|k| {
            let l = (u[(k + 1) % 3] - u[(k + 2) % 3]).norm();
            2.0 * (l / 2.0).min(1.0).asin()
        });
        let h = theta.iter().sum::<f64>() / 2.0;
        if std::f64::consts::PI - h < EPS {
            // On the triangle: planar barycentric weights.
            let w = [0, 1, 2].map(|k| theta[k].sin() * d[(k + 2) % 3] * d[(k + 1) % 3]);
            let sw: f64 = w.iter().sum();
            return (0..3).map(|k| w[k] * values[t[k]]).sum::<f64>() / sw;
        }
        let c = [0, 1, 2].map(|k| {
            2.0 * h.sin() * (h - theta[k]).sin() / (theta[(k + 1) % 3].sin() * theta[(k + 2) % 3].sin()) - 1.0
        });
        let sign = u[0].dot(&u[1].cross(&u[2])).signum();
        let sn = c.map(|ci| sign * (1.0 - ci * ci).max(0.0).sqrt());
        if sn.iter().any(|v| v.abs() <= EPS) {
            continue;
        }
        for k in 0..3 {
            let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
            let w = (theta[k] - c[k1] * theta[k2] - c[k2] * theta[k1]) / (d[k] * theta[k1].sin() * sn[k2]);
            num += w * values[t[k]];
            den += w;
        }
    }
    num / den
}

/// Groups boundary triangles into vertex-connected pieces; carving can
/// leave a cell made of several disjoint pieces.
fn components(tris: &[[usize; 3]]) -> Vec<Vec<[usize; 3]>> {
    let mut parent: HashMap<usize, usize> = HashMap::new();
    fn find(p: &mut HashMap<usize, usize>, v: usize) -> usize {
        let mut r = v;
        while let Some(&q) = p.get(&r) {
            if q == r {
                break;
            }
            r = q;
        }
        p.insert(v, r);
        r
    }
    for t in tris {
        for &v in t {
            parent.entry(v).or_insert(v);
        }
        let r0 = find(&mut parent, t[0]);
        for &v in &t[1..] {
            let r = find(&mut parent, v);
            parent.insert(r, r0);
        }
    }
    let mut groups: Vec<(usize, Vec<[usize; 3]>)> = Vec::new();
    for t in tris {
        let r = find(&mut parent, t[0]);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => g.1.push(*t),
            None => groups.push((r, vec![*t])),
        }
    }
    groups.into_iter().map(|g| g.1).collect()
}

/// Fans one closed piece of cell `c` from a vertex of a hexahedron, the
/// piece centroid, one of its vertices or a kernel point. Pieces without
/// any valid apex are kept as hulls.
fn fan_part(mesh: &PolyMesh, c: usize, tris: &[[usize; 3]], out: &mut TetMesh) -> Result<()> {
    let cell = &mesh.cells[c];
    let o = mesh.vertices[tris[0][0]];
    let (mut volume, mut centroid) = (0.0, Vec3::zeros());
    for t in tris {
        let [a, b, d] = t.map(|i| mesh.vertices[i]);
        let v = tet_volume(&o, &a, &b, &d);
        volume += v;
        centroid += v * (o + a + b + d) / 4.0;
    }
    centroid /= volume;
    let vtol = 1e-12 * cell.volume;
    let fan = |apex: &Vec3, skip: Option<usize>| -> Option<Vec<[usize; 3]>> {
        let mut keep = Vec::new();
        let mut total = 0.0;
        for t in tris {
            if skip.is_some_and(|a| t.contains(&a)) {
                continue;
            }
            let v = tet_volume(apex, &mesh.vertices[t[0]], &mesh.vertices[t[1]], &mesh.vertices[t[2]]);
            if v < -vtol || (skip.is_none() && v <= vtol) {
                return None;
            }
            if v > vtol {
                keep.push(*t);
                total += v;
            }
        }
        ((total - volume).abs() <= 1e-9 * cell.volume).then_some(keep)
    };
    let mut chosen: Option<(usize, Vec<[usize; 3]>)> = None;
    if let Some(h) = cell.hex {
        chosen = fan(&mesh.vertices[h[0]], Some(h[0])).map(|k| (h[0], k));
    }
    if chosen.is_none() {
        if let Some(k) = fan(&centroid, None) {
            out.points.push(centroid);
            out.steiner_cell.push(Some(c));
            chosen = Some((out.points.len() - 1, k));
        }
    }
    if chosen.is_none() {
        let mut verts: Vec<usize> = tris.iter().flatten().copied().collect();
        verts.sort_unstable();
        verts.dedup();
        for v in verts {
            if let Some(k) = fan(&mesh.vertices[v], Some(v)) {
                chosen = Some((v, k));
                break;
            }
        }
    }
    if chosen.is_none() {
        if let Some(x) = kernel_point(mesh, tris) {
            if let Some(k) = fan(&x, None) {
                out.points.push(x);
                out.steiner_cell.push(Some(c));
                chosen = Some((out.points.len() - 1, k));
            }
        }
    }
    let Some((apex, keep)) = chosen else {
        out.hulls.push((c, tris.to_vec()));
        return Ok(());
    };
    for t in keep {
        out.cell_tets[c].push(out.tets.len());
        out.tets.push([apex, t[0], t[1], t[2]]);
        out.tet_cell.push(c);
    }
    Ok(())
}

/// Point inside the region every boundary triangle faces, taken as the mean
/// of the vertices of that convex region (triples of triangle planes).
fn kernel_point(mesh: &PolyMesh, tris: &[[usize; 3]]) -> Option<Vec3> {
    let mut planes: Vec<(Vec3, f64)> = Vec::new();
    for t in tris {
        let [a, b, c] = t.map(|i| mesh.vertices[i]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len == 0.0 {
            continue;
        }
        let n = n / len;
        let d = n.dot(&a);
        if !planes.iter().any(|(m, e)| (m - n).norm() < 1e-9 && (e - d).abs() < 1e-9 * (1.0 + d.abs())) {
            planes.push((n, d));
        }
    }
    let scale = tris.iter().flatten().map(|&v| mesh.vertices[v].norm()).fold(1.0, f64::max);
    let (mut sum, mut count) = (Vec3::zeros(), 0usize);
    for i in 0..planes.len() {
        for j in i + 1..planes.len() {
            for k in j + 1..planes.len() {
                let m = nalgebra::Matrix3::from_rows(&[
                    planes[i].0.transpose(),
                    planes[j].0.transpose(),
                    planes[k].0.transpose(),
                ]);
                if m.determinant().abs() < 1e-10 {
                    continue;
                }
                let Some(x) = m.try_inverse().map(|mi| mi * Vec3::new(planes[i].1, planes[j].1, planes[k].1)) else {
                    continue;
                };
                if planes.iter().all(|(n, d)| n.dot(&x) <= d + 1e-10 * scale) {
                    sum += x;
                    count += 1;
                }
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Tetrahedralizes the listed cells. Faces are triangulated once so shared
/// faces agree between neighbours; hexahedra are fanned from their first
/// corner, other cells from their centroid or, failing that, from a vertex.
pub fn build_tet_submesh(mesh: &PolyMesh, cells: &[usize]) -> Result<TetMesh> {
    let mut out = TetMesh {
        points: mesh.vertices.clone(),
        tets: Vec::new(),
        tet_cell: Vec::new(),
        cell_tets: vec![Vec::new(); mesh.num_cells()],
        steiner_cell: vec![None; mesh.num_vertices()],
        hulls: Vec::new(),
    };
    let mut face_tris: HashMap<usize, Vec<[usize; 3]>> = HashMap::new();
    for &c in cells {
        if !out.cell_tets[c].is_empty() {
            continue;
        }
        let cell = &mesh.cells[c];
        // Outward triangles of the cell boundary.
        let mut tris: Vec<[usize; 3]> = Vec::new();
        for (k, &fi) in cell.faces.iter().enumerate() {
            let ft = match face_tris.get(&fi) {
                Some(t) => t,
                None => {
                    let f = &mesh.faces[fi];
                    let pts: Vec<Vec3> = f.verts.iter().map(|&v| mesh.vertices[v]).collect();
                    let loc = triangulate(&pts, &f.normal).ok_or(Error::Tetrahedralize(c))?;
                    let glob = loc.into_iter().map(|t| t.map(|i| f.verts[i])).collect();
                    face_tris.entry(fi).or_insert(glob)
                }
            };
            for t in ft {
                tris.push(if cell.outward[k] { *t } else { [t[0], t[2], t[1]] });
            }
        }
        for part in components(&tris) {
            fan_part(mesh, c, &part, &mut out)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_hex, carve_spheres, Sphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cube_gives_six_tets() {
        let m = build_structured_hex([0.0; 3], [1.0; 3], 1.0).unwrap();
        let t = build_tet_submesh(&m, &[0]).unwrap();
        assert_eq!(t.tets.len(), 6);
        assert!((t.total_volume() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn carved_mesh_volume_and_interpolation() {
        let m = build_structured_hex([0.0; 3], [1.0; 3], 0.25).unwrap();
        let s = Sphere { center: [0.5, 0.5, 0.5], radius: 0.3, meridians: 8, parallels: 6 };
        let c = carve_spheres(&m, &[s]).unwrap();
        let all: Vec<usize> = (0..c.num_cells()).collect();
        let t = build_tet_submesh(&c, &all).unwrap();
        assert!((t.total_volume() - c.total_volume()).abs() < 1e-10);
        // Linear fields are reproduced, with Steiner values from the same field.
        let vals: Vec<f64> = t.points.iter().map(|p| 1.0 + 2.0 * p.x - p.y + 0.5 * p.z).collect();
        for x in [Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.5, 0.5, 0.85), Vec3::new(0.19, 0.5, 0.5)] {
            let v = t.interpolate(&c, &vals, &x).unwrap();
            assert!((v - (1.0 + 2.0 * x.x - x.y + 0.5 * x.z)).abs() < 1e-12);
        }
    }

    #[test]
    fn carved_cells_without_single_apex() {
        // Coarse grid around a stone: carving leaves cells made of disjoint
        // slivers and cap cells that are not star-shaped.
        let m = build_structured_hex([6.25, 6.25, -43.75], [25.0, 25.0, -28.125], 3.125).unwrap();
        let s = Sphere { center: [15.0, 15.0, -36.5], radius: 5.0, meridians: 8, parallels: 6 };
        let c = carve_spheres(&m, &[s]).unwrap();
        let all: Vec<usize> = (0..c.num_cells()).collect();
        let t = build_tet_submesh(&c, &all).unwrap();
        assert!(!t.hulls.is_empty());
        assert!(t.tets.iter().all(|q| {
            let [a, b, d, e] = q.map(|i| t.points[i]);
            tet_volume(&a, &b, &d, &e) > 0.0
        }));
        let hull_volume: f64 = t
            .hulls
            .iter()
            .flat_map(|(_, tris)| tris.iter())
            .map(|q| {
                let [a, b, d] = q.map(|i| t.points[i]);
                tet_volume(&Vec3::zeros(), &a, &b, &d)
            })
            .sum();
        assert!((t.total_volume() + hull_volume - c.total_volume()).abs() < 1e-9 * c.total_volume());
        // Mean value coordinates reproduce linear fields inside hulls.
        let f = |p: &Vec3| 1.0 + 2.0 * p.x - p.y + 0.5 * p.z;
        let vals: Vec<f64> = t.points.iter().map(f).collect();
        let mut checked = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (hi, (cell, tris)) in t.hulls.iter().enumerate() {
            let verts: Vec<usize> = tris.iter().flatten().copied().collect();
            for _ in 0..50 {
                let w = [0; 3].map(|_| verts[rng.random_range(0..verts.len())]);
                let l = [0; 3].map(|_| rng.random_range(0.1..1.0));
                let x = (0..3).map(|k| l[k] * t.points[w[k]]).sum::<Vec3>() / l.iter().sum::<f64>();
                if winding_number(&t.points, tris, &x) < 0.5 || !c.locate_point(&x).contains(cell) {
                    continue;
                }
                let v = t.hull_interpolate(hi, &vals, &x);
                assert!((v - f(&x)).abs() < 1e-9, "{v} {}", f(&x));
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn mean_value_on_cube() {
        let m = build_structured_hex([0.0; 3], [1.0; 3], 1.0).unwrap();
        let mut tris = Vec::new();
        let cell = &m.cells[0];
        for (k, &fi) in cell.faces.iter().enumerate() {
            let f = &m.faces[fi];
            let pts: Vec<Vec3> = f.verts.iter().map(|&v| m.vertices[v]).collect();
            for q in triangulate(&pts, &f.normal).unwrap() {
                let g = q.map(|i| f.verts[i]);
                tris.push(if cell.outward[k] { g } else { [g[0], g[2], g[1]] });
            }
        }
        let f = |p: &Vec3| 1.0 + 2.0 * p.x - p.y + 0.5 * p.z;
        let vals: Vec<f64> = m.vertices.iter().map(f).collect();
        for x in [Vec3::new(0.5, 0.5, 0.5), Vec3::new(0.1, 0.7, 0.3)] {
            assert!((winding_number(&m.vertices, &tris, &x) - 1.0).abs() < 1e-12);
            let v = mean_value(&m.vertices, &tris, &vals, &x);
            assert!((v - f(&x)).abs() < 1e-12, "{v} {}", f(&x));
        }
    }
}
