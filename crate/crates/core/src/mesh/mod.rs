//! Explicit polyhedral meshes of the soil box: construction, geometric caches,
//! point location, obstacle carving and tetrahedral sub-meshes.

mod carve;
mod tet;

pub use carve::{carve_spheres, ConvexPolyhedron, Sphere};
pub use tet::{build_tet_submesh, TetMesh};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_in_polygon, polygon_props, tet_volume, Aabb, Plane, Vec3};

/// Marker for "no cell" on the outer side of a boundary face.
pub const NONE: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Top,
    Bottom,
    Lateral,
    Stone,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] =
        [BoundaryTag::Top, BoundaryTag::Bottom, BoundaryTag::Lateral, BoundaryTag::Stone];

    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Top => "top",
            BoundaryTag::Bottom => "bottom",
            BoundaryTag::Lateral => "lateral",
            BoundaryTag::Stone => "stone",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        BoundaryTag::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

#[derive(Clone, Debug)]
pub struct Face {
    /// Vertex loop, counter-clockwise when seen from outside `cells[0]`.
    pub verts: Vec<usize>,
    pub cells: [usize; 2],
    pub tag: Option<BoundaryTag>,
    pub area: f64,
    /// Unit normal pointing out of `cells[0]`.
    pub normal: Vec3,
    pub centroid: Vec3,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.cells[1] == NONE
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub faces: Vec<usize>,
    /// Whether the stored face normal points out of this cell.
    pub outward: Vec<bool>,
    /// Sorted distinct vertex ids.
    pub verts: Vec<usize>,
    pub volume: f64,
    pub centroid: Vec3,
    pub diameter: f64,
    pub bbox: Aabb,
    pub convex: bool,
    /// VTK-ordered corner list for untouched hexahedra.
    pub hex: Option<[usize; 8]>,
}

/// Face description used to assemble a mesh.
#[derive(Clone, Debug)]
pub struct FaceSpec {
    pub verts: Vec<usize>,
    pub cells: [usize; 2],
    pub tag: Option<BoundaryTag>,
}

#[derive(Clone, Debug)]
pub struct PolyMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<Face>,
    pub cells: Vec<Cell>,
    pub bbox: Aabb,
    /// Bit set of boundary tags touching each vertex.
    pub vertex_tags: Vec<u8>,
    locator: Locator,
}

impl PolyMesh {
    /// Builds all caches and checks closedness of every cell.
    pub fn from_parts(
        vertices: Vec<Vec3>,
        specs: Vec<FaceSpec>,
        ncells: usize,
        hex: Vec<Option<[usize; 8]>>,
    ) -> Result<PolyMesh> {
        let mut faces = Vec::with_capacity(specs.len());
        let mut cell_faces: Vec<Vec<(usize, bool)>> = vec![Vec::new(); ncells];
        for (fi, s) in specs.into_iter().enumerate() {
            let pts: Vec<Vec3> = s.verts.iter().map(|&v| vertices[v]).collect();
            let (centroid, area, normal) = polygon_props(&pts);
            if s.cells[0] == NONE {
                return Err(Error::Mesh(format!("face {fi} has no owning cell")));
            }
            cell_faces[s.cells[0]].push((fi, true));
            if s.cells[1] != NONE {
                cell_faces[s.cells[1]].push((fi, false));
            }
            faces.push(Face { verts: s.verts, cells: s.cells, tag: s.tag, area, normal, centroid });
        }
        let mut cells = Vec::with_capacity(ncells);
        for (ci, cf) in cell_faces.into_iter().enumerate() {
            let cell = build_cell(ci, &vertices, &faces, cf, hex.get(ci).copied().flatten())?;
            cells.push(cell);
        }
        let bbox = Aabb::from_points(vertices.iter());
        let mut vertex_tags = vec![0u8; vertices.len()];
        for f in &faces {
            if let Some(t) = f.tag {
                for &v in &f.verts {
                    vertex_tags[v] |= t.bit();
                }
            }
        }
        let locator = Locator::new(&cells, &bbox);
        Ok(PolyMesh { vertices, faces, cells, bbox, vertex_tags, locator })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Global mesh size: the largest cell diameter.
    pub fn h(&self) -> f64 {
        self.cells.iter().map(|c| c.diameter).fold(0.0, f64::max)
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    /// Absolute tolerance used to decide membership on faces.
    pub fn locate_tol(&self) -> f64 {
        1e-12 * self.bbox.extent().amax().max(1.0)
    }

    /// Oriented vertex loop of face `f` as seen from outside `cell`.
    pub fn face_loop(&self, cell: usize, k: usize) -> Vec<usize> {
        let c = &self.cells[cell];
        let f = &self.faces[c.faces[k]];
        if c.outward[k] {
            f.verts.clone()
        } else {
            f.verts.iter().rev().copied().collect()
        }
    }

    /// Outward unit normal of the `k`-th face of `cell`.
    pub fn face_normal(&self, cell: usize, k: usize) -> Vec3 {
        let c = &self.cells[cell];
        let n = self.faces[c.faces[k]].normal;
        if c.outward[k] {
            n
        } else {
            -n
        }
    }

    /// All cells whose closure contains `x`.
    pub fn locate_point(&self, x: &Vec3) -> Vec<usize> {
        let tol = self.locate_tol();
        let mut out = Vec::new();
        for &c in self.locator.candidates(x) {
            if self.cells[c].bbox.contains(x, tol) && self.cell_contains(c, x, tol) {
                out.push(c);
            }
        }
        out.sort_unstable();
        out
    }

    /// Cells whose bounding box meets `b`.
    pub fn cells_near(&self, b: &Aabb) -> Vec<usize> {
        let mut out = self.locator.candidates_box(b);
        out.retain(|&c| self.cells[c].bbox.overlaps(b));
        out
    }

    pub fn cell_contains(&self, c: usize, x: &Vec3, tol: f64) -> bool {
        let cell = &self.cells[c];
        if cell.convex {
            return (0..cell.faces.len()).all(|k| {
                let f = &self.faces[cell.faces[k]];
                let n = self.face_normal(c, k);
                n.dot(&(x - f.centroid)) <= tol
            });
        }
        for (k, &fi) in cell.faces.iter().enumerate() {
            let f = &self.faces[fi];
            let n = self.face_normal(c, k);
            if n.dot(&(x - f.centroid)).abs() <= tol {
                let pts: Vec<Vec3> = f.verts.iter().map(|&v| self.vertices[v]).collect();
                if point_in_polygon(x, &pts, &f.normal, tol) {
                    return true;
                }
            }
        }
        self.winding_number(c, x) > 0.5
    }

    /// Generalized winding number of the cell surface around `x`.
    fn winding_number(&self, c: usize, x: &Vec3) -> f64 {
        let mut omega = 0.0;
        for k in 0..self.cells[c].faces.len() {
            let lp = self.face_loop(c, k);
            let fc = self.faces[self.cells[c].faces[k]].centroid;
            for i in 0..lp.len() {
                let a = fc - x;
                let b = self.vertices[lp[i]] - x;
                let d = self.vertices[lp[(i + 1) % lp.len()]] - x;
                let (la, lb, ld) = (a.norm(), b.norm(), d.norm());
                let num = a.dot(&b.cross(&d));
                let den = la * lb * ld + a.dot(&b) * ld + a.dot(&d) * lb + b.dot(&d) * la;
                omega += 2.0 * num.atan2(den);
            }
        }
        omega / (4.0 * std::f64::consts::PI)
    }

    /// Signed tetrahedra (x_E, x_F, v_i, v_{i+1}) decomposing a cell exactly.
    pub fn cell_tets(&self, c: usize) -> Vec<[Vec3; 4]> {
        let cell = &self.cells[c];
        let mut out = Vec::new();
        for k in 0..cell.faces.len() {
            let lp = self.face_loop(c, k);
            let fc = self.faces[cell.faces[k]].centroid;
            for i in 0..lp.len() {
                out.push([
                    cell.centroid,
                    fc,
                    self.vertices[lp[i]],
                    self.vertices[lp[(i + 1) % lp.len()]],
                ]);
            }
        }
        out
    }

    /// Vertices lying on a face carrying one of the given tags.
    pub fn tagged_vertices(&self, tags: &[BoundaryTag]) -> Vec<usize> {
        let mask = tags.iter().fold(0u8, |m, t| m | t.bit());
        (0..self.vertices.len()).filter(|&v| self.vertex_tags[v] & mask != 0).collect()
    }

    /// Checks the closedness invariants of every cell.
    pub fn validate(&self) -> Result<()> {
        for (ci, c) in self.cells.iter().enumerate() {
            check_cell_closed(ci, &self.vertices, &self.faces, &c.faces, &c.outward)?;
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if f.is_boundary() != f.tag.is_some() {
                return Err(Error::Mesh(format!("face {fi}: boundary flag and tag disagree")));
            }
        }
        Ok(())
    }
}

fn check_cell_closed(
    ci: usize,
    vertices: &[Vec3],
    faces: &[Face],
    fl: &[usize],
    outward: &[bool],
) -> Result<()> {
    let mut sum = Vec3::zeros();
    let mut surf = 0.0;
    let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
    for (k, &fi) in fl.iter().enumerate() {
        let f = &faces[fi];
        let s = if outward[k] { 1.0 } else { -1.0 };
        sum += s * f.area * f.normal;
        surf += f.area;
        let m = f.verts.len();
        for i in 0..m {
            let (mut a, mut b) = (f.verts[i], f.verts[(i + 1) % m]);
            if !outward[k] {
                std::mem::swap(&mut a, &mut b);
            }
            *edges.entry((a, b)).or_insert(0) += 1;
        }
    }
    if sum.norm() > 1e-10 * surf.max(1e-300) {
        return Err(Error::DegenerateCell(ci));
    }
    for (&(a, b), &n) in &edges {
        if n != 1 || edges.get(&(b, a)).copied() != Some(1) {
            let _ = vertices;
            return Err(Error::DegenerateCell(ci));
        }
    }
    Ok(())
}

fn build_cell(
    ci: usize,
    vertices: &[Vec3],
    faces: &[Face],
    cf: Vec<(usize, bool)>,
    hex: Option<[usize; 8]>,
) -> Result<Cell> {
    if cf.len() < 4 {
        return Err(Error::DegenerateCell(ci));
    }
    let (fl, outward): (Vec<usize>, Vec<bool>) = cf.into_iter().unzip();
    check_cell_closed(ci, vertices, faces, &fl, &outward)?;
    let mut verts: Vec<usize> = fl.iter().flat_map(|&f| faces[f].verts.iter().copied()).collect();
    verts.sort_unstable();
    verts.dedup();
    let bbox = Aabb::from_points(verts.iter().map(|&v| &vertices[v]));
    // Volume and centroid from signed tetrahedra on a reference point.
    let r = verts.iter().fold(Vec3::zeros(), |a, &v| a + vertices[v]) / verts.len() as f64;
    let mut vol = 0.0;
    let mut mom = Vec3::zeros();
    for (k, &fi) in fl.iter().enumerate() {
        let f = &faces[fi];
        let m = f.verts.len();
        for i in 0..m {
            let (mut a, mut b) = (vertices[f.verts[i]], vertices[f.verts[(i + 1) % m]]);
            if !outward[k] {
                std::mem::swap(&mut a, &mut b);
            }
            let v = tet_volume(&r, &f.centroid, &a, &b);
            vol += v;
            mom += v * (r + f.centroid + a + b) / 4.0;
        }
    }
    if !(vol > 0.0) {
        return Err(Error::DegenerateCell(ci));
    }
    let centroid = mom / vol;
    let mut diameter: f64 = 0.0;
    for (i, &a) in verts.iter().enumerate() {
        for &b in &verts[i + 1..] {
            diameter = diameter.max((vertices[a] - vertices[b]).norm());
        }
    }
    let tol = 1e-10 * diameter;
    let convex = fl.iter().enumerate().all(|(k, &fi)| {
        let f = &faces[fi];
        let n = if outward[k] { f.normal } else { -f.normal };
        let pl = Plane { n, d: n.dot(&f.centroid) };
        verts.iter().all(|&v| pl.dist(&vertices[v]) <= tol)
    });
    let hex = hex.filter(|_| verts.len() == 8 && fl.len() == 6);
    Ok(Cell { faces: fl, outward, verts, volume: vol, centroid, diameter, bbox, convex, hex })
}

/// Uniform bucket grid over cell bounding boxes.
#[derive(Clone, Debug)]
struct Locator {
    origin: Vec3,
    step: Vec3,
    dims: [usize; 3],
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(cells: &[Cell], bbox: &Aabb) -> Locator {
        let ext = bbox.extent();
        let n = (cells.len().max(1) as f64).cbrt().ceil() as usize;
        let dims = [n.max(1), n.max(1), n.max(1)];
        let step = Vec3::new(
            (ext.x / dims[0] as f64).max(1e-300),
            (ext.y / dims[1] as f64).max(1e-300),
            (ext.z / dims[2] as f64).max(1e-300),
        );
        let mut loc = Locator { origin: bbox.min, step, dims, buckets: vec![Vec::new(); dims[0] * dims[1] * dims[2]] };
        for (ci, c) in cells.iter().enumerate() {
            let b = c.bbox.inflated(1e-9 * c.diameter);
            let (lo, hi) = (loc.index(&b.min), loc.index(&b.max));
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let id = loc.flat([i, j, k]);
                        loc.buckets[id].push(ci);
                    }
                }
            }
        }
        loc
    }

    fn index(&self, x: &Vec3) -> [usize; 3] {
        let mut out = [0; 3];
        for k in 0..3 {
            let t = ((x[k] - self.origin[k]) / self.step[k]).floor();
            out[k] = (t.max(0.0) as usize).min(self.dims[k] - 1);
        }
        out
    }

    fn flat(&self, i: [usize; 3]) -> usize {
        i[0] + self.dims[0] * (i[1] + self.dims[1] * i[2])
    }

    fn candidates(&self, x: &Vec3) -> &[usize] {
        &self.buckets[self.flat(self.index(x))]
    }

    fn candidates_box(&self, b: &Aabb) -> Vec<usize> {
        let (lo, hi) = (self.index(&b.min), self.index(&b.max));
        let mut out = Vec::new();
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    out.extend_from_slice(&self.buckets[self.flat([i, j, k])]);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Regular hexahedral mesh of an axis-aligned box.
pub fn build_structured_hex(min: [f64; 3], max: [f64; 3], spacing: f64) -> Result<PolyMesh> {
    if !(spacing > 0.0) {
        return Err(Error::Mesh(format!("spacing must be positive, got {spacing}")));
    }
    let mut n = [0usize; 3];
    for k in 0..3 {
        let ext = max[k] - min[k];
        if !(ext > 0.0) {
            return Err(Error::Mesh("degenerate box".into()));
        }
        let r = (ext / spacing).round();
        if r < 1.0 || (r * spacing - ext).abs() > 1e-9 * ext {
            return Err(Error::Mesh(format!("spacing {spacing} does not divide box edge {ext}")));
        }
        n[k] = r as usize;
    }
    build_hex_grid(min, max, n)
}

/// Hexahedral grid with `n[k]` cells along axis `k`.
pub fn build_hex_grid(min: [f64; 3], max: [f64; 3], n: [usize; 3]) -> Result<PolyMesh> {
    let [nx, ny, nz] = n;
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::Mesh("cell counts must be positive".into()));
    }
    let coord = |k: usize, i: usize| min[k] + (max[k] - min[k]) * i as f64 / n[k] as f64;
    let vid = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let cid = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Vec3::new(coord(0, i), coord(1, j), coord(2, k)));
            }
        }
    }
    let mut specs = Vec::new();
    let mut push = |mut verts: Vec<usize>, lo: Option<usize>, hi: Option<usize>, tag: BoundaryTag| {
        // `verts` is oriented along +axis; `lo` is the cell on the negative side.
        match (lo, hi) {
            (Some(a), Some(b)) => specs.push(FaceSpec { verts, cells: [a, b], tag: None }),
            (Some(a), None) => specs.push(FaceSpec { verts, cells: [a, NONE], tag: Some(tag) }),
            (None, Some(b)) => {
                verts.reverse();
                specs.push(FaceSpec { verts, cells: [b, NONE], tag: Some(tag) })
            }
            (None, None) => unreachable!(),
        }
    };
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..=nx {
                let lo = (i > 0).then(|| cid(i - 1, j, k));
                let hi = (i < nx).then(|| cid(i, j, k));
                let v = vec![vid(i, j, k), vid(i, j + 1, k), vid(i, j + 1, k + 1), vid(i, j, k + 1)];
                push(v, lo, hi, BoundaryTag::Lateral);
            }
        }
    }
    for k in 0..nz {
        for j in 0..=ny {
            for i in 0..nx {
                let lo = (j > 0).then(|| cid(i, j - 1, k));
                let hi = (j < ny).then(|| cid(i, j, k));
                let v = vec![vid(i, j, k), vid(i, j, k + 1), vid(i + 1, j, k + 1), vid(i + 1, j, k)];
                push(v, lo, hi, BoundaryTag::Lateral);
            }
        }
    }
    for k in 0..=nz {
        for j in 0..ny {
            for i in 0..nx {
                let lo = (k > 0).then(|| cid(i, j, k - 1));
                let hi = (k < nz).then(|| cid(i, j, k));
                let tag = if k == 0 { BoundaryTag::Bottom } else { BoundaryTag::Top };
                let v = vec![vid(i, j, k), vid(i + 1, j, k), vid(i + 1, j + 1, k), vid(i, j + 1, k)];
                push(v, lo, hi, tag);
            }
        }
    }
    let mut hex = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                hex.push(Some([
                    vid(i, j, k),
                    vid(i + 1, j, k),
                    vid(i + 1, j + 1, k),
                    vid(i, j + 1, k),
                    vid(i, j, k + 1),
                    vid(i + 1, j, k + 1),
                    vid(i + 1, j + 1, k + 1),
                    vid(i, j + 1, k + 1),
                ]));
            }
        }
    }
    PolyMesh::from_parts(vertices, specs, nx * ny * nz, hex)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_counts() {
        let m = build_structured_hex([0.0; 3], [1.0; 3], 0.5).unwrap();
        assert_eq!(m.num_cells(), 8);
        assert_eq!(m.num_vertices(), 27);
        assert!((m.total_volume() - 1.0).abs() < 1e-14);
        m.validate().unwrap();
    }

    #[test]
    fn single_cube_geometry() {
        let m = build_hex_grid([0.0; 3], [1.0; 3], [1, 1, 1]).unwrap();
        let c = &m.cells[0];
        assert!((c.volume - 1.0).abs() < 1e-15);
        assert!((c.centroid - Vec3::repeat(0.5)).norm() < 1e-15);
        assert!((c.diameter - 3f64.sqrt()).abs() < 1e-15);
        assert!(c.convex);
    }

    #[test]
    fn spacing_must_divide() {
        assert!(build_structured_hex([0.0; 3], [1.0; 3], 0.3).is_err());
        assert!(build_structured_hex([0.0; 3], [1.0; 3], -1.0).is_err());
    }

    #[test]
    fn locate_on_shared_face_and_edge() {
        let m = build_structured_hex([0.0; 3], [1.0; 3], 0.5).unwrap();
        assert_eq!(m.locate_point(&Vec3::new(0.25, 0.25, 0.25)).len(), 1);
        assert_eq!(m.locate_point(&Vec3::new(0.5, 0.25, 0.25)).len(), 2);
        assert_eq!(m.locate_point(&Vec3::new(0.5, 0.5, 0.25)).len(), 4);
        assert_eq!(m.locate_point(&Vec3::new(0.5, 0.5, 0.5)).len(), 8);
        assert!(m.locate_point(&Vec3::new(1.5, 0.5, 0.5)).is_empty());
    }

    #[test]
    fn tags_on_box() {
        let m = build_structured_hex([0.0, 0.0, -1.0], [1.0, 1.0, 0.0], 0.5).unwrap();
        for f in &m.faces {
            if let Some(t) = f.tag {
                let z = f.centroid.z;
                match t {
                    BoundaryTag::Top => assert!((z - 0.0).abs() < 1e-14 && f.normal.z > 0.99),
                    BoundaryTag::Bottom => assert!((z + 1.0).abs() < 1e-14 && f.normal.z < -0.99),
                    BoundaryTag::Lateral => assert!(f.normal.z.abs() < 1e-14),
                    BoundaryTag::Stone => panic!("no stones here"),
                }
            }
        }
    }
}
