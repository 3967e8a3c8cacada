//! Removal of polyhedral stones (UV-tessellated spheres) from a mesh.
//!
//! Cells are classified by the volume of their intersection with the stone,
//! faces of cut cells are replaced by their set difference with the stone, and
//! each cut cell receives the stone facets clipped to its own half-spaces.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{FaceSpec, PolyMesh, NONE};
use crate::error::{Error, Result};
use crate::geom::{area_vector, clip_convex, frame, point_segment_distance, polygon_props, Aabb, Plane, Vec3};
use crate::mesh::BoundaryTag;

fn default_meridians() -> usize {
    8
}

fn default_parallels() -> usize {
    6
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
    #[serde(default = "default_meridians")]
    pub meridians: usize,
    /// Number of interior latitude rings.
    #[serde(default = "default_parallels")]
    pub parallels: usize,
}

impl Sphere {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || self.meridians < 3 || self.parallels < 1 {
            return Err(Error::Param(format!("invalid stone {self:?}")));
        }
        Ok(())
    }

    /// Inscribed polyhedron with poles on the z axis.
    pub fn tessellate(&self) -> ConvexPolyhedron {
        let (m, p) = (self.meridians, self.parallels);
        let c = Vec3::from(self.center);
        let r = self.radius;
        let mut verts = vec![c + Vec3::new(0.0, 0.0, r)];
        for k in 1..=p {
            let th = k as f64 * std::f64::consts::PI / (p + 1) as f64;
            for j in 0..m {
                let ph = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                verts.push(c + r * Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()));
            }
        }
        verts.push(c - Vec3::new(0.0, 0.0, r));
        let south = verts.len() - 1;
        let ring = |k: usize, j: usize| 1 + (k - 1) * m + j % m;
        let mut faces = Vec::new();
        for j in 0..m {
            faces.push(vec![0, ring(1, j), ring(1, j + 1)]);
        }
        for k in 1..p {
            for j in 0..m {
                faces.push(vec![ring(k, j), ring(k + 1, j), ring(k + 1, j + 1), ring(k, j + 1)]);
            }
        }
        for j in 0..m {
            faces.push(vec![south, ring(p, j + 1), ring(p, j)]);
        }
        ConvexPolyhedron::new(verts, faces)
    }
}

/// Convex polyhedron with outward counter-clockwise facets.
#[derive(Clone, Debug)]
pub struct ConvexPolyhedron {
    pub verts: Vec<Vec3>,
    pub faces: Vec<Vec<usize>>,
    pub planes: Vec<Plane>,
}

impl ConvexPolyhedron {
    pub fn new(verts: Vec<Vec3>, faces: Vec<Vec<usize>>) -> Self {
        let planes = faces
            .iter()
            .map(|f| {
                let pts: Vec<Vec3> = f.iter().map(|&v| verts[v]).collect();
                let (c, _, n) = polygon_props(&pts);
                Plane::from_point_normal(&c, &n)
            })
            .collect();
        ConvexPolyhedron { verts, faces, planes }
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(self.verts.iter())
    }

    pub fn volume(&self) -> f64 {
        polyhedron_volume(&self.faces.iter().map(|f| f.iter().map(|&v| self.verts[v]).collect()).collect::<Vec<_>>())
    }

    pub fn contains(&self, x: &Vec3, tol: f64) -> bool {
        self.planes.iter().all(|p| p.dist(x) <= tol)
    }
}

/// Volume of a closed polyhedron given by outward counter-clockwise facets.
fn polyhedron_volume(faces: &[Vec<Vec3>]) -> f64 {
    faces
        .iter()
        .filter(|f| f.len() >= 3)
        .map(|f| {
            let av = area_vector(f);
            f[0].dot(&av)
        })
        .sum::<f64>()
        / 3.0
}

/// Clips a closed convex polyhedron (facet list) to `plane.dist <= 0`.
fn clip_polyhedron(faces: &[Vec<Vec3>], plane: &Plane, tol: f64) -> Vec<Vec<Vec3>> {
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut cap: Vec<Vec3> = Vec::new();
    for f in faces {
        let c = clip_convex(f, plane, tol);
        if c.len() >= 3 {
            for p in &c {
                if plane.dist(p).abs() <= tol {
                    cap.push(*p);
                }
            }
            out.push(c);
        }
    }
    if cap.len() >= 3 {
        let centre = cap.iter().fold(Vec3::zeros(), |a, p| a + p) / cap.len() as f64;
        let (u, v) = frame(&plane.n);
        cap.sort_by(|a, b| {
            let (da, db) = (a - centre, b - centre);
            da.dot(&v).atan2(da.dot(&u)).total_cmp(&db.dot(&v).atan2(db.dot(&u)))
        });
        cap.dedup_by(|a, b| (*a - *b).norm() <= tol);
        if cap.len() >= 3 {
            out.push(cap);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Out,
    Cut,
    In,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Label {
    Orig(usize),
    Cut,
}

enum Sub {
    Unchanged,
    Removed,
    Pieces(Vec<Vec<Vec3>>),
}

/// F \ S for a planar face loop and a convex stone.
fn subtract(poly: &[Vec3], stone: &ConvexPolyhedron, tol: f64, depth: usize) -> Sub {
    let area_f = area_vector(poly).norm();
    let mut p: Vec<(Vec3, Label)> = poly.iter().enumerate().map(|(i, &x)| (x, Label::Orig(i))).collect();
    for pl in &stone.planes {
        p = clip_labeled(&p, pl, tol);
        if p.len() < 3 {
            return Sub::Unchanged;
        }
    }
    let pts: Vec<Vec3> = p.iter().map(|q| q.0).collect();
    let area_p = area_vector(&pts).norm();
    if area_p <= 1e-13 * area_f {
        return Sub::Unchanged;
    }
    if area_p >= (1.0 - 1e-13) * area_f {
        return Sub::Removed;
    }
    // Drop repeated points, keeping the label of the later one.
    let mut q: Vec<(Vec3, Label)> = Vec::with_capacity(p.len());
    for (x, l) in p {
        if let Some(last) = q.last_mut() {
            if (last.0 - x).norm() <= tol {
                last.1 = l;
                continue;
            }
        }
        q.push((x, l));
    }
    while q.len() > 1 && (q[0].0 - q[q.len() - 1].0).norm() <= tol {
        q.pop();
    }
    let n = q.len();
    if q.iter().all(|x| x.1 == Label::Cut) {
        if depth >= 3 {
            return Sub::Unchanged;
        }
        // Stone pierces the face interior: split through its centroid.
        let (c, _, nf) = polygon_props(&pts);
        let dir = (poly[1] - poly[0]).normalize();
        let split = Plane::from_point_normal(&c, &nf.cross(&dir));
        let mut pieces = Vec::new();
        for pl in [split, Plane { n: -split.n, d: -split.d }] {
            let half = clip_convex(poly, &pl, 0.0);
            if half.len() < 3 {
                continue;
            }
            match subtract(&half, stone, tol, depth + 1) {
                Sub::Unchanged => pieces.push(half),
                Sub::Removed => {}
                Sub::Pieces(ps) => pieces.extend(ps),
            }
        }
        return Sub::Pieces(pieces);
    }
    let m = poly.len();
    let edge_param = |k: usize, x: &Vec3| {
        let (a, b) = (poly[k], poly[(k + 1) % m]);
        (x - a).dot(&(b - a)) / (b - a).norm_squared()
    };
    let mut pieces = Vec::new();
    for i in 0..n {
        let prev = q[(i + n - 1) % n].1;
        let Label::Orig(ka) = prev else { continue };
        if q[i].1 != Label::Cut {
            continue;
        }
        let a = q[i].0;
        let mut chain = vec![a];
        let mut j = (i + 1) % n;
        while q[(j + n - 1) % n].1 == Label::Cut && j != i {
            chain.push(q[j].0);
            if q[j].1 != Label::Cut {
                break;
            }
            j = (j + 1) % n;
        }
        let Label::Orig(kb) = q[j].1 else { continue };
        let b = q[j].0;
        let mut comp = vec![a];
        let count = if ka == kb && edge_param(kb, &b) >= edge_param(ka, &a) {
            0
        } else {
            (kb + m - ka) % m + if ka == kb { m } else { 0 }
        };
        for s in 1..=count {
            comp.push(poly[(ka + s) % m]);
        }
        comp.push(b);
        for x in chain[1..chain.len() - 1].iter().rev() {
            comp.push(*x);
        }
        let mut clean: Vec<Vec3> = Vec::with_capacity(comp.len());
        for x in comp {
            if clean.last().is_none_or(|l: &Vec3| (l - x).norm() > tol) {
                clean.push(x);
            }
        }
        while clean.len() > 1 && (clean[0] - clean[clean.len() - 1]).norm() <= tol {
            clean.pop();
        }
        if clean.len() >= 3 && area_vector(&clean).norm() > 1e-13 * area_f {
            pieces.push(clean);
        }
    }
    Sub::Pieces(pieces)
}

fn clip_labeled(poly: &[(Vec3, Label)], plane: &Plane, tol: f64) -> Vec<(Vec3, Label)> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let (a, la) = poly[i];
        let (b, _) = poly[(i + 1) % n];
        let (da, db) = (plane.dist(&a), plane.dist(&b));
        let (ain, bin) = (da <= tol, db <= tol);
        if ain {
            out.push((a, la));
        }
        if ain && !bin {
            out.push((a + da / (da - db) * (b - a), Label::Cut));
        } else if !ain && bin {
            out.push((a + da / (da - db) * (b - a), la));
        }
    }
    out
}

/// Spatial hash used to weld nearby vertices.
struct Welder {
    cell: f64,
    tol: f64,
    map: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl Welder {
    fn key(&self, x: &Vec3) -> (i64, i64, i64) {
        ((x.x / self.cell).floor() as i64, (x.y / self.cell).floor() as i64, (x.z / self.cell).floor() as i64)
    }

    fn insert(&mut self, id: usize, x: &Vec3) {
        let k = self.key(x);
        self.map.entry(k).or_default().push(id);
    }

    fn find(&self, x: &Vec3, verts: &[Vec3]) -> Option<usize> {
        let (i, j, k) = self.key(x);
        let mut best: Option<(usize, f64)> = None;
        for di in -1..=1 {
            for dj in -1..=1 {
                for dk in -1..=1 {
                    if let Some(ids) = self.map.get(&(i + di, j + dj, k + dk)) {
                        for &id in ids {
                            let d = (verts[id] - x).norm();
                            if d <= self.tol && best.is_none_or(|b| d < b.1) {
                                best = Some((id, d));
                            }
                        }
                    }
                }
            }
        }
        best.map(|b| b.0)
    }

    fn weld(&mut self, x: Vec3, verts: &mut Vec<Vec3>) -> usize {
        if let Some(id) = self.find(&x, verts) {
            return id;
        }
        verts.push(x);
        let id = verts.len() - 1;
        self.insert(id, &x);
        id
    }
}

/// Carves every stone in turn.
pub fn carve_spheres(mesh: &PolyMesh, stones: &[Sphere]) -> Result<PolyMesh> {
    let mut m = mesh.clone();
    for s in stones {
        s.validate()?;
        m = carve_one(&m, &s.tessellate())?;
    }
    Ok(m)
}

fn carve_one(mesh: &PolyMesh, stone: &ConvexPolyhedron) -> Result<PolyMesh> {
    let h = mesh.h();
    let tol = 1e-12 * mesh.bbox.extent().amax().max(1.0);
    let sbox = stone.bbox();
    if !sbox.overlaps(&mesh.bbox) {
        log::warn!("stone does not meet the soil box; ignored");
        return Ok(mesh.clone());
    }
    if !(0..3).all(|k| sbox.min[k] >= mesh.bbox.min[k] && sbox.max[k] <= mesh.bbox.max[k]) {
        log::warn!("stone extends beyond the soil box; it is clipped to the box");
    }
    let near = mesh.cells_near(&sbox.inflated(tol));
    let mut class = vec![Class::Out; mesh.num_cells()];
    for &c in &near {
        let cell = &mesh.cells[c];
        if !cell.convex {
            if cell.verts.iter().any(|&v| stone.planes.iter().all(|p| p.dist(&mesh.vertices[v]) < -tol)) {
                return Err(Error::Carve { cell: c, reason: "non-convex cell meets the stone".into() });
            }
            continue;
        }
        let mut poly: Vec<Vec<Vec3>> = (0..cell.faces.len())
            .map(|k| mesh.face_loop(c, k).iter().map(|&v| mesh.vertices[v]).collect())
            .collect();
        for pl in &stone.planes {
            poly = clip_polyhedron(&poly, pl, tol);
            if poly.len() < 4 {
                break;
            }
        }
        let v = if poly.len() < 4 { 0.0 } else { polyhedron_volume(&poly) };
        class[c] = if v <= 1e-10 * cell.volume {
            Class::Out
        } else if v >= (1.0 - 1e-10) * cell.volume {
            Class::In
        } else {
            Class::Cut
        };
    }

    let weld_tol = 1e-6 * h;
    let mut verts = mesh.vertices.clone();
    let mut welder = Welder { cell: weld_tol.max(1e-300), tol: weld_tol, map: HashMap::new() };
    let mut region = sbox.inflated(weld_tol);
    for &c in &near {
        region.merge(&mesh.cells[c].bbox);
    }
    let region = region.inflated(weld_tol);
    for (i, x) in mesh.vertices.iter().enumerate() {
        if region.contains(x, 0.0) {
            welder.insert(i, x);
        }
    }

    let cls = |c: usize| if c == NONE { None } else { Some(class[c]) };
    let mut specs: Vec<FaceSpec> = Vec::with_capacity(mesh.faces.len());
    for f in &mesh.faces {
        let (a, b) = (cls(f.cells[0]), cls(f.cells[1]));
        let any_cut = a == Some(Class::Cut) || b == Some(Class::Cut);
        let live = |c: usize, k: Option<Class>| if k == Some(Class::In) { NONE } else { c };
        let (la, lb) = (live(f.cells[0], a), live(f.cells[1], b));
        if la == NONE && lb == NONE {
            continue;
        }
        let mut place = |verts_ids: Vec<usize>| {
            let removed_side = la == NONE || (lb == NONE && f.cells[1] != NONE);
            let tag = if removed_side { Some(BoundaryTag::Stone) } else { f.tag };
            if la == NONE {
                specs.push(FaceSpec { verts: verts_ids.into_iter().rev().collect(), cells: [lb, NONE], tag });
            } else {
                specs.push(FaceSpec { verts: verts_ids, cells: [la, lb], tag });
            }
        };
        if !any_cut {
            place(f.verts.clone());
            continue;
        }
        let pts: Vec<Vec3> = f.verts.iter().map(|&v| mesh.vertices[v]).collect();
        match subtract(&pts, stone, tol, 0) {
            Sub::Unchanged => place(f.verts.clone()),
            Sub::Removed => {}
            Sub::Pieces(ps) => {
                for piece in ps {
                    let ids: Vec<usize> = piece.into_iter().map(|x| welder.weld(x, &mut verts)).collect();
                    place(ids);
                }
            }
        }
    }
    for c in 0..mesh.num_cells() {
        if class[c] != Class::Cut {
            continue;
        }
        let cell = &mesh.cells[c];
        let planes: Vec<Plane> = (0..cell.faces.len())
            .map(|k| Plane::from_point_normal(&mesh.faces[cell.faces[k]].centroid, &mesh.face_normal(c, k)))
            .collect();
        let cut_area_tol = 1e-12 * cell.diameter * cell.diameter;
        for g in &stone.faces {
            let mut q: Vec<Vec3> = g.iter().map(|&v| stone.verts[v]).collect();
            for pl in &planes {
                q = clip_convex(&q, pl, tol);
                if q.len() < 3 {
                    break;
                }
            }
            if q.len() < 3 || area_vector(&q).norm() <= cut_area_tol {
                continue;
            }
            let ids: Vec<usize> = q.into_iter().rev().map(|x| welder.weld(x, &mut verts)).collect();
            specs.push(FaceSpec { verts: ids, cells: [c, NONE], tag: Some(BoundaryTag::Stone) });
        }
    }

    // Clean loops, then insert hanging vertices lying on other faces' edges.
    for s in specs.iter_mut() {
        s.verts.dedup();
        while s.verts.len() > 1 && s.verts[0] == s.verts[s.verts.len() - 1] {
            s.verts.pop();
        }
    }
    specs.retain(|s| s.verts.len() >= 3);
    insert_t_junctions(&mut specs, &verts, &region, weld_tol);

    // Drop In cells and compact vertices.
    let mut cell_map = vec![NONE; mesh.num_cells()];
    let mut ncells = 0;
    let mut hex = Vec::new();
    for c in 0..mesh.num_cells() {
        if class[c] != Class::In {
            cell_map[c] = ncells;
            ncells += 1;
            hex.push(if class[c] == Class::Out { mesh.cells[c].hex } else { None });
        }
    }
    let mut vmap = vec![NONE; verts.len()];
    let mut new_verts = Vec::new();
    for s in specs.iter_mut() {
        for v in s.verts.iter_mut() {
            if vmap[*v] == NONE {
                vmap[*v] = new_verts.len();
                new_verts.push(verts[*v]);
            }
            *v = vmap[*v];
        }
        for c in s.cells.iter_mut() {
            if *c != NONE {
                *c = cell_map[*c];
            }
        }
    }
    for h in hex.iter_mut() {
        if let Some(hx) = h {
            let mut ok = true;
            for v in hx.iter_mut() {
                if vmap[*v] == NONE {
                    ok = false;
                } else {
                    *v = vmap[*v];
                }
            }
            if !ok {
                *h = None;
            }
        }
    }
    let old_ids: Vec<usize> = (0..mesh.num_cells()).filter(|&c| class[c] != Class::In).collect();
    PolyMesh::from_parts(new_verts, specs, ncells, hex).map_err(|e| match e {
        Error::DegenerateCell(c) => Error::Carve { cell: old_ids[c], reason: "carved cell is not closed".into() },
        other => other,
    })
}

fn insert_t_junctions(specs: &mut [FaceSpec], verts: &[Vec3], region: &Aabb, tol: f64) {
    let cand: Vec<usize> = (0..verts.len()).filter(|&v| region.contains(&verts[v], 0.0)).collect();
    if cand.is_empty() {
        return;
    }
    let ext = region.extent().amax().max(1e-300);
    let bucket = (ext / 64.0).max(tol * 4.0);
    let key = |x: &Vec3| {
        (
            ((x.x - region.min.x) / bucket).floor() as i64,
            ((x.y - region.min.y) / bucket).floor() as i64,
            ((x.z - region.min.z) / bucket).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for &v in &cand {
        grid.entry(key(&verts[v])).or_default().push(v);
    }
    for s in specs.iter_mut() {
        let m = s.verts.len();
        let fb = Aabb::from_points(s.verts.iter().map(|&v| &verts[v]));
        if !fb.overlaps(region) {
            continue;
        }
        let mut out = Vec::with_capacity(m + 2);
        for i in 0..m {
            let (a, b) = (s.verts[i], s.verts[(i + 1) % m]);
            out.push(a);
            let (pa, pb) = (verts[a], verts[b]);
            let mut eb = Aabb::from_points([&pa, &pb]);
            eb = eb.inflated(tol);
            let (lo, hi) = (key(&eb.min), key(&eb.max));
            let len2 = (pb - pa).norm_squared();
            let mut hits: Vec<(f64, usize)> = Vec::new();
            for x in lo.0..=hi.0 {
                for y in lo.1..=hi.1 {
                    for z in lo.2..=hi.2 {
                        if let Some(ids) = grid.get(&(x, y, z)) {
                            for &w in ids {
                                if w == a || w == b {
                                    continue;
                                }
                                let t = (verts[w] - pa).dot(&(pb - pa)) / len2;
                                if t > 0.0 && t < 1.0 && point_segment_distance(&verts[w], &pa, &pb) <= tol {
                                    hits.push((t, w));
                                }
                            }
                        }
                    }
                }
            }
            hits.sort_by(|x, y| x.0.total_cmp(&y.0));
            hits.dedup_by_key(|h| h.1);
            out.extend(hits.into_iter().map(|h| h.1));
        }
        s.verts = out;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_hex;

    fn stone(c: [f64; 3], r: f64) -> Sphere {
        Sphere { center: c, radius: r, meridians: 8, parallels: 6 }
    }

    #[test]
    fn tessellation_is_convex_and_closed() {
        let s = stone([0.0; 3], 1.0).tessellate();
        assert_eq!(s.verts.len(), 2 + 8 * 6);
        for v in &s.verts {
            assert!(s.contains(v, 1e-12));
        }
        let vol = s.volume();
        assert!(vol > 0.0 && vol < 4.0 / 3.0 * std::f64::consts::PI);
    }

    #[test]
    fn carve_cube_centre() {
        let m = build_structured_hex([0.0; 3], [1.0; 3], 0.25).unwrap();
        let s = stone([0.5, 0.5, 0.5], 0.3);
        let c = carve_spheres(&m, &[s]).unwrap();
        c.validate().unwrap();
        let expect = 1.0 - s.tessellate().volume();
        assert!((c.total_volume() - expect).abs() < 1e-10, "{} vs {}", c.total_volume(), expect);
        // Idempotent on the carved mesh.
        let again = carve_spheres(&c, &[s]).unwrap();
        assert!((again.total_volume() - c.total_volume()).abs() < 1e-10);
        assert_eq!(again.num_cells(), c.num_cells());
    }

    #[test]
    fn stone_area_matches_polyhedron_surface() {
        let m = build_structured_hex([0.0; 3], [1.0; 3], 0.25).unwrap();
        let s = stone([0.45, 0.52, 0.48], 0.3);
        let p = s.tessellate();
        let surf: f64 = p.faces.iter().map(|f| area_vector(&f.iter().map(|&v| p.verts[v]).collect::<Vec<_>>()).norm()).sum();
        let c = carve_spheres(&m, &[s]).unwrap();
        let stone_area: f64 = c.faces.iter().filter(|f| f.tag == Some(BoundaryTag::Stone)).map(|f| f.area).sum();
        assert!((stone_area - surf).abs() < 1e-10, "{stone_area} vs {surf}");
    }
}
