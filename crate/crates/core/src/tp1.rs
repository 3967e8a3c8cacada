//! Manufactured-solution benchmark on (-1, 1)³ with one straight root along
//! the z axis, used for convergence studies.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::Vec3;
use crate::interface::{soil_line_load, Interface, Refinement};
use crate::mesh::{build_hex_grid, BoundaryTag, PolyMesh};
use crate::network::RootNetwork;
use crate::quad::{gauss_legendre, tet_rule};
use crate::soil::SoilModel;
use crate::solver::{SoilSystem, SolverConfig, StepData, Workspace};
use crate::vem::{DofMap, Vem};
use crate::xylem::{segment_points, Conductance, EndCondition, Kappa, XylemParams, XylemSystem};

pub const RADIUS: f64 = 1e-2;

pub fn lp() -> f64 {
    2.0 * RADIUS / (RADIUS * RADIUS + 2.0)
}

pub fn psi(x: &Vec3, t: f64) -> f64 {
    0.5 * (x.x * x.x + x.y * x.y) * (1.0 - x.z * x.z) - 1.0 - t
}

pub fn grad_psi(x: &Vec3) -> Vec3 {
    let s = 1.0 - x.z * x.z;
    Vec3::new(x.x * s, x.y * s, -(x.x * x.x + x.y * x.y) * x.z)
}

pub fn laplacian_psi(x: &Vec3) -> f64 {
    2.0 * (1.0 - x.z * x.z) - (x.x * x.x + x.y * x.y)
}

pub fn psi_hat(z: f64, t: f64) -> f64 {
    z * z - 2.0 - t
}

pub fn u_hat(z: f64) -> f64 {
    -2.0 * z * (z * z / 3.0 + 0.5)
}

/// Volume source c(ψ) ∂ψ/∂t - Δψ.
pub fn source(x: &Vec3, t: f64) -> f64 {
    -SoilModel::Manufactured.capacity(psi(x, t)) - laplacian_psi(x)
}

/// Line source 2πR L_p (ψ|_Λ - ψ̂) of the soil equation.
pub fn line_source(x: &Vec3) -> f64 {
    2.0 * PI * RADIUS * lp() * (1.0 - x.z * x.z)
}

/// Xylem source πR² ∂û/∂s + 2πR L_p (ψ̂ - ψ|_Λ).
pub fn xylem_source(x: &Vec3) -> f64 {
    PI * RADIUS * RADIUS * (-2.0 * x.z * x.z - 1.0) + 2.0 * PI * RADIUS * lp() * (x.z * x.z - 1.0)
}

pub fn params(t: f64) -> XylemParams {
    XylemParams {
        radius: RADIUS,
        kappa: Kappa::Manufactured,
        lp: Conductance::Constant { value: lp() },
        gravity: false,
        collar: EndCondition::Pressure { value: psi_hat(-1.0, t) },
        tips: EndCondition::Pressure { value: psi_hat(1.0, t) },
    }
}

pub fn network() -> RootNetwork {
    let mut n = RootNetwork::new(Vec3::new(0.0, 0.0, -1.0), RADIUS);
    let t = n.add_node(Vec3::new(0.0, 0.0, 1.0));
    n.add_segment(0, t, 0, 0.0, 0).expect("axis");
    n
}

/// Relative errors in the order: soil L², soil H¹, xylem pressure, xylem
/// velocity, Φ_σ, Φ_χ.
pub const ERROR_NAMES: [&str; 6] = ["psi_L2", "psi_H1", "psi_hat_L2", "u_hat_L2", "phi_sigma_L2", "phi_chi_L2"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tp1Level {
    pub divisions: usize,
    pub h: f64,
    pub h_state: f64,
    pub h_ctrl: f64,
    pub errors: [f64; 6],
    pub picard: usize,
    pub cg: Vec<usize>,
    pub cost: f64,
}

/// Relative L² error on the axis of a P1 field given by nodal values per element.
fn line_error(n: usize, vals: &[f64], exact: impl Fn(f64) -> f64) -> (f64, f64) {
    let g = gauss_legendre(6);
    let h = 2.0 / n as f64;
    let (mut e, mut nn) = (0.0, 0.0);
    for k in 0..n {
        for &(t, w) in &g {
            let z = -1.0 + (k as f64 + t) * h;
            let v = (1.0 - t) * vals[k] + t * vals[k + 1];
            e += w * h * (exact(z) - v).powi(2);
            nn += w * h * exact(z).powi(2);
        }
    }
    (e, nn)
}

pub fn mesh(divisions: usize) -> Result<PolyMesh> {
    build_hex_grid([-1.0; 3], [1.0; 3], [divisions; 3])
}

/// One backward Euler step from t = 0 to t = 1 on an N³ hexahedral grid.
pub fn run_level(divisions: usize, cfg: &SolverConfig) -> Result<Tp1Level> {
    let t = 1.0;
    let mesh = mesh(divisions)?;
    let vem = Vem::new(&mesh)?;
    let dofs = DofMap::new(vem.ndof, &mesh.tagged_vertices(&BoundaryTag::ALL));
    let soil = SoilSystem { vem, model: SoilModel::Manufactured, dofs, gravity: false };
    let net = network();
    let p = params(t);
    let mut itf = Interface::new(Refinement::default());
    let ops = itf.assemble(&mesh, &soil.vem, &net, &p, t, None)?;
    let xs = |x: &Vec3| xylem_source(x);
    let xyl = XylemSystem::assemble(&net, &ops.state_counts, &p, t, Some(&xs))?;

    let psi0: Vec<f64> = mesh.vertices.iter().map(|x| psi(x, 0.0)).collect();
    let dir: Vec<f64> = mesh.vertices.iter().map(|x| psi(x, t)).collect();
    let rule = tet_rule(4);
    let mut load = soil.vem.load(&mesh, &rule, |x| source(x, t));
    let line = soil_line_load(&mesh, &soil.vem, &net, line_source)?;
    load.iter_mut().zip(&line).for_each(|(a, b)| *a += b);

    let data = StepData { psi_old: &psi0, dirichlet: &dir, load: Some(&load), dt: 1.0, xyl: &xyl, ops: &ops };
    let mut ws = Workspace::default();
    let out = soil.step(&data, vec![0.0; 2 * ops.nctrl()], cfg, &mut ws)?;

    let rule = tet_rule(6);
    let s = soil.vem.errors(&mesh, &out.psi, &rule, |x| psi(x, t), grad_psi);
    let n = ops.state_counts[0];
    let m = ops.ctrl.counts[0];
    let (a, b) = line_error(n, &xyl.pre.local(0, &out.ph), |z| psi_hat(z, t));
    let (c, d) = line_error(n, &xyl.vel.local(0, &out.u), u_hat);
    let nc = ops.nctrl();
    let (e, f) = line_error(m, &ops.ctrl.local(0, &out.x[..nc]), |_| -1.0 - t);
    let (g, hh) = line_error(m, &ops.ctrl.local(0, &out.x[nc..]), |z| psi_hat(z, t));
    debug_assert_eq!(segment_points(&net, 0, n).len(), n + 1);
    Ok(Tp1Level {
        divisions,
        h: mesh.h(),
        h_state: 2.0 / n as f64,
        h_ctrl: 2.0 / m as f64,
        errors: [
            (s[0] / s[1]).sqrt(),
            (s[2] / s[3]).sqrt(),
            (a / b).sqrt(),
            (c / d).sqrt(),
            (e / f).sqrt(),
            (g / hh).sqrt(),
        ],
        picard: out.picard,
        cg: out.cg,
        cost: out.cost,
    })
}

/// Empirical order of convergence between two levels.
pub fn eoc(e1: f64, e2: f64, h1: f64, h2: f64) -> f64 {
    (e1 / e2).ln() / (h1 / h2).ln()
}

/// Mesh size each error indicator converges against.
pub fn error_h(l: &Tp1Level, k: usize) -> f64 {
    match k {
        0 | 1 => l.h,
        2 | 3 => l.h_state,
        _ => l.h_ctrl,
    }
}

/// EOC table between consecutive levels.
pub fn eoc_table(levels: &[Tp1Level]) -> Vec<[f64; 6]> {
    levels
        .windows(2)
        .map(|w| std::array::from_fn(|k| eoc(w[0].errors[k], w[1].errors[k], error_h(&w[0], k), error_h(&w[1], k))))
        .collect()
}

/// Grid divisions of the default four-level study (h ≈ 0.49 to 0.23).
pub const LEVELS: [usize; 4] = [7, 9, 11, 15];
