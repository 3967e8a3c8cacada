//! File output: VTK XML unstructured grids for the soil and the root
//! network, CSV step logs and JSON checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::PolyMesh;
use crate::network::RootNetwork;

const VTK_LINE: u8 = 3;
const VTK_HEXAHEDRON: u8 = 12;
const VTK_POLYHEDRON: u8 = 42;

/// File name `<stem>_<step>.<ext>` with a zero-padded step index.
pub fn step_file(dir: &Path, stem: &str, step: usize, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_{step:05}.{ext}"))
}

enum Data<'a> {
    Scalar(&'a str, &'a [f64]),
    Vector(&'a str, &'a [Vec3]),
}

fn data_array(out: &mut String, d: &Data) {
    match d {
        Data::Scalar(name, v) => {
            let _ = writeln!(out, "<DataArray type=\"Float64\" Name=\"{name}\" format=\"ascii\">");
            for x in v.iter() {
                let _ = write!(out, "{x} ");
            }
        }
        Data::Vector(name, v) => {
            let _ = writeln!(out, "<DataArray type=\"Float64\" Name=\"{name}\" NumberOfComponents=\"3\" format=\"ascii\">");
            for x in v.iter() {
                let _ = write!(out, "{} {} {} ", x.x, x.y, x.z);
            }
        }
    }
    out.push_str("\n</DataArray>\n");
}

fn int_array<T: std::fmt::Display>(out: &mut String, name: &str, ty: &str, v: &[T]) {
    let _ = writeln!(out, "<DataArray type=\"{ty}\" Name=\"{name}\" format=\"ascii\">");
    for x in v {
        let _ = write!(out, "{x} ");
    }
    out.push_str("\n</DataArray>\n");
}

struct Grid<'a> {
    points: &'a [Vec3],
    conn: Vec<usize>,
    offsets: Vec<usize>,
    types: Vec<u8>,
    /// Polyhedron face streams and their end offsets (-1 for other cells).
    faces: Option<(Vec<i64>, Vec<i64>)>,
}

fn write_grid(path: &Path, g: &Grid, point_data: &[Data], cell_data: &[Data]) -> Result<()> {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\"?>\n<VTKFile type=\"UnstructuredGrid\" version=\"1.0\" byte_order=\"LittleEndian\">\n<UnstructuredGrid>\n");
    let _ = writeln!(out, "<Piece NumberOfPoints=\"{}\" NumberOfCells=\"{}\">", g.points.len(), g.types.len());
    out.push_str("<Points>\n");
    data_array(&mut out, &Data::Vector("points", g.points));
    out.push_str("</Points>\n<Cells>\n");
    int_array(&mut out, "connectivity", "Int64", &g.conn);
    int_array(&mut out, "offsets", "Int64", &g.offsets);
    int_array(&mut out, "types", "UInt8", &g.types);
    if let Some((faces, fo)) = &g.faces {
        int_array(&mut out, "faces", "Int64", faces);
        int_array(&mut out, "faceoffsets", "Int64", fo);
    }
    out.push_str("</Cells>\n<PointData>\n");
    for d in point_data {
        data_array(&mut out, d);
    }
    out.push_str("</PointData>\n<CellData>\n");
    for d in cell_data {
        data_array(&mut out, d);
    }
    out.push_str("</CellData>\n</Piece>\n</UnstructuredGrid>\n</VTKFile>\n");
    fs::write(path, out)?;
    Ok(())
}

fn mesh_grid(mesh: &PolyMesh) -> Grid<'_> {
    let mut g = Grid { points: &mesh.vertices, conn: Vec::new(), offsets: Vec::new(), types: Vec::new(), faces: None };
    let poly = mesh.cells.iter().any(|c| c.hex.is_none());
    let (mut faces, mut fo) = (Vec::new(), Vec::new());
    for (ci, c) in mesh.cells.iter().enumerate() {
        match c.hex {
            Some(h) => {
                g.conn.extend_from_slice(&h);
                g.types.push(VTK_HEXAHEDRON);
                fo.push(-1);
            }
            None => {
                g.conn.extend_from_slice(&c.verts);
                g.types.push(VTK_POLYHEDRON);
                faces.push(c.faces.len() as i64);
                for k in 0..c.faces.len() {
                    let l = mesh.face_loop(ci, k);
                    faces.push(l.len() as i64);
                    faces.extend(l.iter().map(|&v| v as i64));
                }
                fo.push(faces.len() as i64);
            }
        }
        g.offsets.push(g.conn.len());
    }
    if poly {
        g.faces = Some((faces, fo));
    }
    g
}

/// Mesh preview with cell volumes and vertex boundary tags.
pub fn write_mesh(path: &Path, mesh: &PolyMesh) -> Result<()> {
    let vol: Vec<f64> = mesh.cells.iter().map(|c| c.volume).collect();
    let tags: Vec<f64> = mesh.vertex_tags.iter().map(|&t| t as f64).collect();
    write_grid(path, &mesh_grid(mesh), &[Data::Scalar("boundary_tags", &tags)], &[Data::Scalar("volume", &vol)])
}

/// Soil pressure head at vertices and Darcy velocity per cell.
pub fn write_soil(path: &Path, mesh: &PolyMesh, psi: &[f64], velocity: &[Vec3]) -> Result<()> {
    write_grid(path, &mesh_grid(mesh), &[Data::Scalar("psi", psi)], &[Data::Vector("velocity", velocity)])
}

/// Per-node and per-segment fields exported with the network.
#[derive(Clone, Debug, Default)]
pub struct NetworkFields {
    pub psi_hat: Vec<f64>,
    pub u_hat: Vec<f64>,
    /// Uptake per unit length (cm²/day).
    pub uptake: Vec<f64>,
}

pub fn write_network(path: &Path, net: &RootNetwork, time: f64, f: &NetworkFields) -> Result<()> {
    let ns = net.segs.len();
    let mut g = Grid { points: &net.nodes, conn: Vec::new(), offsets: Vec::new(), types: Vec::new(), faces: None };
    for s in &net.segs {
        g.conn.extend([s.a, s.b]);
        g.offsets.push(g.conn.len());
        g.types.push(VTK_LINE);
    }
    let order: Vec<f64> = net.segs.iter().map(|s| s.order as f64).collect();
    let age: Vec<f64> = net.segs.iter().map(|s| time - s.birth).collect();
    let radius = vec![net.radius; ns];
    let pad = |v: &[f64], n: usize| if v.len() == n { v.to_vec() } else { vec![0.0; n] };
    let (ph, uh, up) = (pad(&f.psi_hat, net.nodes.len()), pad(&f.u_hat, ns), pad(&f.uptake, ns));
    write_grid(
        path,
        &g,
        &[Data::Scalar("psi_hat", &ph)],
        &[
            Data::Scalar("order", &order),
            Data::Scalar("age", &age),
            Data::Scalar("radius", &radius),
            Data::Scalar("u_hat", &uh),
            Data::Scalar("uptake", &up),
        ],
    )
}

/// One line of the per-step solver log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub time: f64,
    pub segments: usize,
    pub tips: usize,
    pub control_dofs: usize,
    pub picard: usize,
    pub cg_first: usize,
    pub cg_total: usize,
    /// Unpreconditioned CG iterations at the first Picard iteration, when measured.
    pub cg_plain: Option<usize>,
    pub cost: f64,
    pub uptake: f64,
    pub collar_flux: f64,
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|x| x.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn save_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let s = serde_json::to_string(v).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(path, s)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
