//! Declarative scenarios and the growth / backward Euler time loop.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::interface::{Interface, InterfaceOps, Refinement};
use crate::io::{self, LogRow, NetworkFields};
use crate::mesh::{build_structured_hex, carve_spheres, BoundaryTag, PolyMesh, Sphere};
use crate::network::RootNetwork;
use crate::rsa::{mesocotyl, Environment, Growth, GrowthParams, RepulsionField, StepReport, TipSoil};
use crate::soil::{preset, SoilModel, VanGenuchten};
use crate::solver::{total_uptake, SoilSystem, SolverConfig, StepData, Workspace};
use crate::vem::{DofMap, Vem};
use crate::xylem::{Conductance, EndCondition, Kappa, XylemParams, XylemSystem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub spacing: f64,
    #[serde(default)]
    pub stones: Vec<Sphere>,
}

impl MeshSpec {
    pub fn build(&self) -> Result<PolyMesh> {
        let hex = build_structured_hex(self.min, self.max, self.spacing)?;
        if self.stones.is_empty() {
            Ok(hex)
        } else {
            carve_spheres(&hex, &self.stones)
        }
    }
}

/// Retention curves by preset name or explicit parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SoilSpec {
    Preset { preset: String },
    Curves(VanGenuchten),
}

impl SoilSpec {
    pub fn curves(&self) -> Result<VanGenuchten> {
        let c = match self {
            SoilSpec::Preset { preset: p } => preset(p).ok_or_else(|| Error::Config(format!("unknown soil preset {p:?}")))?,
            SoilSpec::Curves(c) => *c,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Seed position; the collar sits vertically above it on the top face.
    pub seed: [f64; 3],
    /// Optional fixed polyline continuing from the seed.
    #[serde(default)]
    pub polyline: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryKind {
    Dirichlet { value: f64 },
    NoFlux,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub region: String,
    #[serde(flatten)]
    pub kind: BoundaryKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Constant { value: f64 },
    /// Linear in z from `top` on the top face to `bottom` on the bottom face.
    Linear { top: f64, bottom: f64 },
    /// Steady solve without roots and without storage.
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_end: f64,
    /// Growth interval ΔI (day).
    pub growth_step: f64,
    /// Backward Euler substeps per growth interval.
    #[serde(default = "one")]
    pub substeps: usize,
    /// Solve every interval as a steady state.
    #[serde(default)]
    pub steady: bool,
}

fn one() -> usize {
    1
}

impl TimeGrid {
    pub fn steps(&self) -> usize {
        (self.t_end / self.growth_step - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepulsionSpec {
    pub regions: Vec<String>,
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Write VTK files every `every` steps (0 disables them).
    #[serde(default = "one")]
    pub every: usize,
    #[serde(default)]
    pub checkpoint: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { every: 1, checkpoint: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "yes")]
    pub gravity: bool,
    pub mesh: MeshSpec,
    pub soil: SoilSpec,
    pub xylem: XylemParams,
    pub network: NetworkSpec,
    #[serde(default)]
    pub growth: Option<GrowthParams>,
    #[serde(default)]
    pub repulsion: Option<RepulsionSpec>,
    #[serde(default)]
    pub boundary: Vec<BoundaryCondition>,
    pub initial: InitialCondition,
    pub time: TimeGrid,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

fn yes() -> bool {
    true
}

fn region(name: &str) -> Result<BoundaryTag> {
    BoundaryTag::parse(name).ok_or_else(|| Error::Config(format!("unknown boundary region {name:?}")))
}

impl ScenarioConfig {
    pub fn from_toml(s: &str) -> Result<ScenarioConfig> {
        let c: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&s)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.time;
        if !(t.t_end > 0.0 && t.growth_step > 0.0 && t.substeps >= 1) {
            return Err(Error::Config("time grid needs t_end > 0, growth_step > 0 and substeps >= 1".into()));
        }
        let has_stones = !self.mesh.stones.is_empty();
        let names = self.boundary.iter().map(|b| b.region.as_str());
        let rep = self.repulsion.iter().flat_map(|r| r.regions.iter().map(String::as_str));
        for n in names.chain(rep) {
            if region(n)? == BoundaryTag::Stone && !has_stones {
                return Err(Error::Config("region \"stone\" used but the mesh has no stones".into()));
            }
        }
        if let Some(th) = self.repulsion.as_ref().and_then(|r| r.threshold) {
            if !(0.0..1.0).contains(&th) {
                return Err(Error::Config(format!("repulsion threshold {th} outside [0, 1)")));
            }
        }
        for s in &self.mesh.stones {
            s.validate()?;
        }
        self.soil.curves()?;
        self.xylem.validate()?;
        self.solver.validate()?;
        if let Some(g) = &self.growth {
            g.validate()?;
        }
        let [x, y, z] = self.network.seed;
        let (lo, hi) = (self.mesh.min, self.mesh.max);
        if !(lo[0] <= x && x <= hi[0] && lo[1] <= y && y <= hi[1] && lo[2] <= z && z < hi[2]) {
            return Err(Error::Config("seed must lie below the top face inside the box".into()));
        }
        Ok(())
    }

    /// Bounded pot: 3 × 3 × 6 cm, h = 0.15 cm, 9 days in steps of 0.2 day.
    pub fn tp2() -> ScenarioConfig {
        ScenarioConfig {
            name: "tp2".into(),
            rng_seed: 1,
            gravity: true,
            mesh: MeshSpec { min: [0.0, 0.0, -6.0], max: [3.0, 3.0, 0.0], spacing: 0.15, stones: Vec::new() },
            soil: SoilSpec::Preset { preset: "tp2".into() },
            xylem: XylemParams {
                radius: 0.05,
                kappa: Kappa::Constant { value: 0.18 },
                lp: Conductance::Constant { value: 1.36e-6 },
                gravity: true,
                collar: EndCondition::Flux { value: 0.2 },
                tips: EndCondition::Flux { value: 0.0 },
            },
            network: NetworkSpec { seed: [1.5, 1.5, -0.1], polyline: Vec::new() },
            growth: Some(GrowthParams::tp2()),
            repulsion: Some(RepulsionSpec { regions: vec!["top".into(), "bottom".into(), "lateral".into()], threshold: None }),
            boundary: vec![BoundaryCondition { region: "bottom".into(), kind: BoundaryKind::Dirichlet { value: 0.0 } }],
            initial: InitialCondition::Linear { top: -6.0, bottom: 0.0 },
            time: TimeGrid { t_end: 9.0, growth_step: 0.2, substeps: 1, steady: false },
            solver: SolverConfig::default(),
            output: OutputSpec::default(),
        }
    }

    /// Stony soil box 50 × 50 × 100 cm with two carved stones, run for
    /// `days` days in steps of one day.
    pub fn tp3(days: f64) -> ScenarioConfig {
        let stone = |c: [f64; 3], r: f64| Sphere { center: c, radius: r, meridians: 8, parallels: 6 };
        ScenarioConfig {
            name: "tp3".into(),
            rng_seed: 1,
            gravity: true,
            mesh: MeshSpec {
                min: [0.0, 0.0, -100.0],
                max: [50.0, 50.0, 0.0],
                spacing: 3.125,
                stones: vec![stone([15.0, 15.0, -36.5], 5.0), stone([25.0, 31.25, -25.0], 6.0)],
            },
            soil: SoilSpec::Preset { preset: "tp3".into() },
            xylem: XylemParams { ..Self::tp2().xylem },
            network: NetworkSpec { seed: [25.0, 25.0, -5.0], polyline: Vec::new() },
            growth: Some(GrowthParams::tp3()),
            repulsion: Some(RepulsionSpec { regions: vec!["top".into(), "stone".into()], threshold: Some(0.9) }),
            boundary: vec![
                BoundaryCondition { region: "top".into(), kind: BoundaryKind::Dirichlet { value: -500.0 } },
                BoundaryCondition { region: "bottom".into(), kind: BoundaryKind::Dirichlet { value: -100.0 } },
            ],
            initial: InitialCondition::Stationary,
            time: TimeGrid { t_end: days, growth_step: 1.0, substeps: 1, steady: false },
            solver: SolverConfig { picard_max: 60, ..SolverConfig::default() },
            output: OutputSpec::default(),
        }
    }

    /// Small steady case with one fixed vertical root, used for mass balance.
    pub fn steady_root() -> ScenarioConfig {
        ScenarioConfig {
            name: "steady_root".into(),
            mesh: MeshSpec { min: [0.0, 0.0, -2.0], max: [1.0, 1.0, 0.0], spacing: 0.125, stones: Vec::new() },
            network: NetworkSpec { seed: [0.5, 0.5, -0.1], polyline: vec![[0.5, 0.5, -1.5]] },
            growth: None,
            repulsion: None,
            boundary: vec![
                BoundaryCondition { region: "top".into(), kind: BoundaryKind::Dirichlet { value: -20.0 } },
                BoundaryCondition { region: "bottom".into(), kind: BoundaryKind::Dirichlet { value: -10.0 } },
            ],
            initial: InitialCondition::Stationary,
            time: TimeGrid { t_end: 1.0, growth_step: 1.0, substeps: 1, steady: true },
            ..Self::tp2()
        }
    }
}

/// Result of one growth interval.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub log: LogRow,
    pub cg: Vec<usize>,
    pub growth: StepReport,
}

/// Restart data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub step: usize,
    pub time: f64,
    pub psi: Vec<f64>,
    pub ctrl_mean: Option<(f64, f64)>,
    pub network: RootNetwork,
    pub growth: Option<Growth>,
    pub cumulative_uptake: f64,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// A running scenario.
pub struct Simulation {
    pub cfg: ScenarioConfig,
    pub mesh: PolyMesh,
    pub soil: SoilSystem,
    pub curves: VanGenuchten,
    pub dirichlet: Vec<f64>,
    pub repulsion: Option<RepulsionField>,
    pub net: RootNetwork,
    pub growth: Option<Growth>,
    pub psi: Vec<f64>,
    /// Controls [Φ_σ; Φ_χ] on the current network.
    pub x: Vec<f64>,
    pub ctrl_mean: Option<(f64, f64)>,
    pub step: usize,
    pub time: f64,
    pub cumulative_uptake: f64,
    /// Operators of the last solved interval.
    pub ops: Option<InterfaceOps>,
    pub xyl: Option<XylemSystem>,
    pub u: Vec<f64>,
    pub ph: Vec<f64>,
    interface: Interface,
    ws: Workspace,
}

fn initial_network(cfg: &ScenarioConfig) -> Result<(RootNetwork, usize)> {
    let (mut net, seed) = mesocotyl(Vec3::from(cfg.network.seed), cfg.mesh.max[2], cfg.xylem.radius)?;
    let mut last = seed;
    for p in &cfg.network.polyline {
        let n = net.add_node(Vec3::from(*p));
        net.add_segment(last, n, 0, 0.0, 0)?;
        last = n;
    }
    Ok((net, seed))
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Simulation> {
        cfg.validate()?;
        let mesh = cfg.mesh.build()?;
        let curves = cfg.soil.curves()?;
        let vem = Vem::new(&mesh)?;
        let mut dirichlet = vec![0.0; vem.ndof];
        let mut fixed = Vec::new();
        for bc in &cfg.boundary {
            if let BoundaryKind::Dirichlet { value } = bc.kind {
                for v in mesh.tagged_vertices(&[region(&bc.region)?]) {
                    dirichlet[v] = value;
                    fixed.push(v);
                }
            }
        }
        fixed.sort_unstable();
        fixed.dedup();
        let dofs = DofMap::new(vem.ndof, &fixed);
        let soil = SoilSystem { vem, model: SoilModel::VanGenuchten(curves), dofs, gravity: cfg.gravity };
        let repulsion = match (&cfg.growth, &cfg.repulsion) {
            (Some(_), Some(r)) => {
                let tags = r.regions.iter().map(|n| region(n)).collect::<Result<Vec<_>>>()?;
                Some(RepulsionField::build(&mesh, &tags, r.threshold)?)
            }
            _ => None,
        };
        let (net, seed) = initial_network(&cfg)?;
        let growth = cfg.growth.clone().map(|g| Growth::new(g, seed, cfg.rng_seed)).transpose()?;
        let (lo, hi) = (mesh.bbox.min.z, mesh.bbox.max.z);
        let psi = match cfg.initial {
            InitialCondition::Constant { value } => vec![value; soil.vem.ndof],
            InitialCondition::Linear { top, bottom } => {
                mesh.vertices.iter().map(|x| bottom + (top - bottom) * (x.z - lo) / (hi - lo)).collect()
            }
            InitialCondition::Stationary => {
                let guess: Vec<f64> = mesh.vertices.iter().map(|_| dirichlet.iter().sum::<f64>() / fixed.len().max(1) as f64).collect();
                let (p, it) = soil.stationary(&dirichlet, &guess, &cfg.solver)?;
                log::info!("stationary initial state after {it} Picard iterations");
                p
            }
        };
        Ok(Simulation {
            cfg,
            mesh,
            soil,
            curves,
            dirichlet,
            repulsion,
            net,
            growth,
            psi,
            x: Vec::new(),
            ctrl_mean: None,
            step: 0,
            time: 0.0,
            cumulative_uptake: 0.0,
            ops: None,
            xyl: None,
            u: Vec::new(),
            ph: Vec::new(),
            interface: Interface::new(Refinement::default()),
            ws: Workspace::default(),
        })
    }

    pub fn total_steps(&self) -> usize {
        self.cfg.time.steps()
    }

    pub fn done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn inside(&self, x: &Vec3) -> bool {
        !self.mesh.locate_point(x).is_empty()
    }

    fn grow(&mut self) -> Result<StepReport> {
        let Some(g) = self.growth.as_mut() else { return Ok(StepReport::default()) };
        let (mesh, vem, model, curves, psi) = (&self.mesh, &self.soil.vem, &self.soil.model, &self.curves, &self.psi);
        let soil = |x: &Vec3| vem.eval_field(mesh, psi, x, model).map(|s| TipSoil::from_sample(&s, curves));
        let inside = |x: &Vec3| !mesh.locate_point(x).is_empty();
        let rep = self.repulsion.as_ref();
        let repulsion = |x: &Vec3| match rep {
            Some(r) => r.eval(mesh, x),
            None => Ok((0.0, Vec3::zeros())),
        };
        let env = Environment { soil: &soil, inside: &inside, repulsion: &repulsion, curves: Some(curves) };
        g.step(&mut self.net, &env, self.time, self.cfg.time.growth_step)
    }

    /// Grows the network over one interval, then solves the coupled problem on it.
    pub fn advance(&mut self) -> Result<StepRecord> {
        let report = self.grow()?;
        let di = self.cfg.time.growth_step;
        let t_end = self.time + di;
        let p = self.cfg.xylem.clone();
        let ops = self.interface.assemble(&self.mesh, &self.soil.vem, &self.net, &p, t_end, None)?;
        let xyl = XylemSystem::assemble(&self.net, &ops.state_counts, &p, t_end, None)?;
        let nc = ops.nctrl();
        let (ms, mc) = match self.ctrl_mean {
            Some(m) => m,
            None => {
                let vals: Vec<f64> = self
                    .net
                    .nodes
                    .iter()
                    .filter_map(|x| self.soil.vem.eval_field(&self.mesh, &self.psi, x, &self.soil.model).ok())
                    .map(|s| s.psi)
                    .collect();
                let m = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
                (m, m)
            }
        };
        let mut x: Vec<f64> = std::iter::repeat_n(ms, nc).chain(std::iter::repeat_n(mc, nc)).collect();
        let (dt, n) = if self.cfg.time.steady {
            (f64::INFINITY, 1)
        } else {
            (di / self.cfg.time.substeps as f64, self.cfg.time.substeps)
        };
        let (mut picard, mut cg, mut cg_plain, mut cost) = (0, Vec::new(), None, 0.0);
        let (mut u, mut ph) = (Vec::new(), Vec::new());
        for k in 0..n {
            let data = StepData { psi_old: &self.psi, dirichlet: &self.dirichlet, load: None, dt, xyl: &xyl, ops: &ops };
            let out = self.soil.step_with_fallback(&data, x, &self.cfg.solver, &mut self.ws)?;
            if k == 0 {
                cg_plain = out.cg_plain;
            }
            picard += out.picard;
            cg.extend(out.cg);
            cost = out.cost;
            self.psi = out.psi;
            x = out.x;
            u = out.u;
            ph = out.ph;
        }
        let uptake = total_uptake(&ops, &x);
        let collar_flux = xyl.collar_outflow(&self.net, &u, &p);
        self.ctrl_mean = Some((ops.mean(&x[..nc]), ops.mean(&x[nc..])));
        self.cumulative_uptake += uptake * di;
        self.step += 1;
        self.time = t_end;
        let log = LogRow {
            step: self.step,
            time: self.time,
            segments: self.net.segs.len(),
            tips: self.net.tips().len(),
            control_dofs: 2 * nc,
            picard,
            cg_first: cg.first().copied().unwrap_or(0),
            cg_total: cg.iter().sum(),
            cg_plain,
            cost,
            uptake,
            collar_flux,
        };
        self.x = x;
        self.u = u;
        self.ph = ph;
        self.ops = Some(ops);
        self.xyl = Some(xyl);
        Ok(StepRecord { log, cg, growth: report })
    }

    /// Node pressure heads, mean segment velocities and uptake per length.
    pub fn network_fields(&self) -> NetworkFields {
        let (Some(ops), Some(xyl)) = (&self.ops, &self.xyl) else { return NetworkFields::default() };
        if ops.weights.len() != self.net.segs.len() {
            return NetworkFields::default();
        }
        let nc = ops.nctrl();
        let mut psi_hat = vec![0.0; self.net.nodes.len()];
        let mut u_hat = Vec::new();
        for (s, seg) in self.net.segs.iter().enumerate() {
            let l = xyl.pre.local(s, &self.ph);
            psi_hat[seg.a] = l[0];
            psi_hat[seg.b] = l[l.len() - 1];
            let v = xyl.vel.local(s, &self.u);
            u_hat.push(v.iter().sum::<f64>() / v.len() as f64);
        }
        let uptake = ops
            .segment_uptake(&self.x[..nc], &self.x[nc..])
            .iter()
            .enumerate()
            .map(|(s, q)| q / self.net.length(s))
            .collect();
        NetworkFields { psi_hat, u_hat, uptake }
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        let vel = self.soil.vem.cell_velocity(&self.psi, &self.soil.model, self.soil.gravity);
        io::write_soil(&io::step_file(dir, "soil", self.step, "vtu"), &self.mesh, &self.psi, &vel)?;
        io::write_network(&io::step_file(dir, "roots", self.step, "vtu"), &self.net, self.time, &self.network_fields())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: self.step,
            time: self.time,
            psi: self.psi.clone(),
            ctrl_mean: self.ctrl_mean,
            network: self.net.clone(),
            growth: self.growth.clone(),
            cumulative_uptake: self.cumulative_uptake,
        }
    }

    pub fn restore(cfg: ScenarioConfig, ck: Checkpoint) -> Result<Simulation> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("checkpoint version {} not supported", ck.version)));
        }
        let mut sim = Simulation::new(cfg)?;
        if ck.psi.len() != sim.psi.len() {
            return Err(Error::Config("checkpoint does not match the mesh".into()));
        }
        ck.network.validate()?;
        sim.step = ck.step;
        sim.time = ck.time;
        sim.psi = ck.psi;
        sim.ctrl_mean = ck.ctrl_mean;
        sim.net = ck.network;
        sim.growth = ck.growth;
        sim.cumulative_uptake = ck.cumulative_uptake;
        Ok(sim)
    }

    /// Runs to the end, writing outputs to `out` when given.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Vec<StepRecord>> {
        let mut recs = Vec::new();
        let mut rows = Vec::new();
        let every = self.cfg.output.every;
        if let Some(d) = out {
            std::fs::create_dir_all(d)?;
            io::write_network(&io::step_file(d, "roots", self.step, "vtu"), &self.net, self.time, &NetworkFields::default())?;
        }
        while !self.done() {
            let r = self.advance()?;
            log::info!(
                "step {} t = {:.3}: {} segments, Picard {}, CG {:?}, uptake {:.4e}",
                r.log.step,
                r.log.time,
                r.log.segments,
                r.log.picard,
                r.cg,
                r.log.uptake
            );
            rows.push(r.log.clone());
            if let Some(d) = out {
                if every > 0 && (self.step % every == 0 || self.done()) {
                    self.write_outputs(d)?;
                }
                if self.cfg.output.checkpoint {
                    io::save_json(&io::step_file(d, "checkpoint", self.step, "json"), &self.checkpoint())?;
                }
                io::write_log(&d.join("log.csv"), &rows)?;
            }
            recs.push(r);
        }
        Ok(recs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for c in [ScenarioConfig::tp2(), ScenarioConfig::tp3(20.0), ScenarioConfig::steady_root()] {
            c.validate().unwrap();
            let s = c.to_toml().unwrap();
            let back = ScenarioConfig::from_toml(&s).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_toml().unwrap(), s);
        }
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut c = ScenarioConfig::tp2();
        c.boundary.push(BoundaryCondition { region: "stone".into(), kind: BoundaryKind::NoFlux });
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::tp2();
        c.boundary[0].region = "attic".into();
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::tp2();
        c.time.substeps = 0;
        assert!(c.validate().is_err());
        assert_eq!(ScenarioConfig::tp2().time.steps(), 45);
    }
}
