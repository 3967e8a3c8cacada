//! Tip-tracking root growth: tropisms, repulsion from impenetrable
//! boundaries, stochastic branching and seed emergence.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{build_tet_submesh, BoundaryTag, PolyMesh, TetMesh};
use crate::network::RootNetwork;
use crate::soil::{ImpedanceThresholds, VanGenuchten};
use crate::vem::FieldSample;

/// Scalar growth parameter: a fixed value, a lognormal law given by mean
/// and standard deviation, or a uniform law on [min, max].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dist {
    Fixed(f64),
    LogNormal { mean: f64, sd: f64 },
    Uniform { min: f64, max: f64 },
}

impl Dist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Fixed(v) => v,
            Dist::LogNormal { mean, sd } => LogNormal::from_mean_cv(mean, sd / mean)
                .expect("validated lognormal")
                .sample(rng),
            Dist::Uniform { min, max } => {
                if max > min {
                    rng.random_range(min..=max)
                } else {
                    min
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Fixed(v) => v,
            Dist::LogNormal { mean, .. } => mean,
            Dist::Uniform { min, max } => 0.5 * (min + max),
        }
    }

    fn check(&self, name: &str, positive: bool) -> Result<()> {
        let ok = match *self {
            Dist::Fixed(v) => v.is_finite() && if positive { v > 0.0 } else { v >= 0.0 },
            Dist::LogNormal { mean, sd } => mean > 0.0 && sd >= 0.0 && sd.is_finite(),
            Dist::Uniform { min, max } => min.is_finite() && max >= min && if positive { min > 0.0 } else { min >= 0.0 },
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Param(format!("growth parameter {name} out of range: {self:?}")))
        }
    }
}

/// Branching data of roots that carry laterals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchParams {
    /// Basal non-branching zone (cm).
    pub lb: Dist,
    /// Apical non-branching zone (cm).
    pub la: Dist,
    /// Inter-branch distance (cm).
    pub inter: Dist,
    /// Insertion angle (rad).
    pub alpha_i: Dist,
    /// Number of xylem poles.
    pub poles: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderParams {
    /// Maximal elongation rate (cm/day).
    pub va: Dist,
    /// Maximal root length for the age decay of the rate (cm).
    #[serde(default)]
    pub l_max: Option<f64>,
    pub kg: Dist,
    pub ks: Dist,
    pub kw: Dist,
    #[serde(default)]
    pub branch: Option<BranchParams>,
}

/// Zero-order roots emerging from the seed as laterals of the mesocotyl.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedParams {
    pub max_roots: usize,
    pub poles: u32,
    /// Angle between the mesocotyl and an emerging root (rad).
    pub insertion: Dist,
    /// Emit the first root at the first step with certainty.
    #[serde(default)]
    pub first_certain: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthParams {
    /// One entry per order 0..=ω_max.
    pub orders: Vec<OrderParams>,
    pub bc: f64,
    pub ma: Dist,
    /// Exponential decay of the rate with the axis age for orders ≥ 1.
    #[serde(default)]
    pub age_decay: bool,
    /// Pressure-head stress thresholds; `None` keeps Imp(ψ) = 1.
    #[serde(default)]
    pub psi_impedance: Option<ImpedanceThresholds>,
    /// Apply the soil-strength impedance.
    #[serde(default = "yes")]
    pub strength_impedance: bool,
    pub seed: SeedParams,
    /// Shortest segment the engine creates (cm).
    #[serde(default = "min_seg")]
    pub min_segment: f64,
}

fn yes() -> bool {
    true
}

fn min_seg() -> f64 {
    1e-6
}

impl GrowthParams {
    pub fn omega_max(&self) -> u8 {
        (self.orders.len() - 1) as u8
    }

    pub fn validate(&self) -> Result<()> {
        if self.orders.is_empty() {
            return Err(Error::Param("at least one root order is required".into()));
        }
        if !(self.bc >= 0.0 && self.min_segment > 0.0) {
            return Err(Error::Param("b_c must be non-negative and min_segment positive".into()));
        }
        self.ma.check("m_a", false)?;
        if self.ma.mean() > 1.0 || matches!(self.ma, Dist::Uniform { max, .. } if max > 1.0) {
            return Err(Error::Param("m_a must lie in [0, 1]".into()));
        }
        if let Some(t) = &self.psi_impedance {
            t.validate()?;
        }
        if self.seed.max_roots > 0 {
            if self.seed.poles == 0 {
                return Err(Error::Param("seed needs at least one pole".into()));
            }
            self.seed.insertion.check("seed insertion", false)?;
        }
        let wmax = self.orders.len() - 1;
        for (w, o) in self.orders.iter().enumerate() {
            o.va.check("V_a", true)?;
            o.kg.check("k_g", false)?;
            o.ks.check("k_s", false)?;
            o.kw.check("k_w", false)?;
            if self.age_decay && w > 0 && !o.l_max.is_some_and(|l| l > 0.0) {
                return Err(Error::Param(format!("order {w} needs a positive L_max for the age decay")));
            }
            match (&o.branch, w < wmax) {
                (Some(b), true) => {
                    b.lb.check("L_B", true)?;
                    b.la.check("L_A", true)?;
                    b.inter.check("I", true)?;
                    b.alpha_i.check("alpha_I", false)?;
                    if b.poles == 0 {
                        return Err(Error::Param(format!("order {w} needs at least one xylem pole")));
                    }
                }
                (None, true) => return Err(Error::Param(format!("order {w} < omega_max needs branching data"))),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn tp2() -> GrowthParams {
        let f = Dist::Fixed;
        let order = |va: f64, branch: Option<BranchParams>| OrderParams {
            va: f(va),
            l_max: None,
            kg: f(0.1),
            ks: f(0.25),
            kw: f(1.0),
            branch,
        };
        let br = |lb: f64, la: f64, i: f64, a: f64, x: u32| BranchParams { lb: f(lb), la: f(la), inter: f(i), alpha_i: f(a), poles: x };
        GrowthParams {
            orders: vec![
                order(1.0, Some(br(0.8, 2.0, 1.0, 1.4, 5))),
                order(0.8, Some(br(0.8, 0.5, 0.4, 1.2, 3))),
                order(0.6, None),
            ],
            bc: 1.0,
            ma: Dist::Uniform { min: 0.0, max: 1.0 },
            age_decay: false,
            psi_impedance: None,
            strength_impedance: true,
            seed: SeedParams { max_roots: 1, poles: 1, insertion: f(0.0), first_certain: true },
            min_segment: 1e-6,
        }
    }

    pub fn tp3() -> GrowthParams {
        let ln = |mean: f64, sd: f64| Dist::LogNormal { mean, sd };
        let kg = Dist::Uniform { min: 0.1, max: 0.2 };
        let ks = Dist::Uniform { min: 0.35, max: 0.45 };
        GrowthParams {
            orders: vec![
                OrderParams {
                    va: ln(1.2, 0.6),
                    l_max: None,
                    kg,
                    ks,
                    kw: Dist::Fixed(2.0),
                    branch: Some(BranchParams { lb: ln(0.8, 1.2), la: ln(4.2, 6.4), inter: ln(0.8, 0.4), alpha_i: ln(1.4, 0.2), poles: 5 }),
                },
                OrderParams {
                    va: ln(1.0, 0.2),
                    l_max: Some(5.0),
                    kg,
                    ks,
                    kw: Dist::Fixed(1.0),
                    branch: Some(BranchParams { lb: ln(0.8, 1.0), la: ln(1.8, 2.4), inter: ln(1.0, 0.5), alpha_i: ln(1.2, 0.4), poles: 3 }),
                },
                OrderParams { va: ln(0.4, 0.12), l_max: Some(2.0), kg, ks, kw: Dist::Fixed(1.0), branch: None },
            ],
            bc: 1.0,
            ma: Dist::Uniform { min: 0.0, max: 1.0 },
            age_decay: true,
            psi_impedance: Some(ImpedanceThresholds::tp3()),
            strength_impedance: true,
            seed: SeedParams { max_roots: 19, poles: 19, insertion: ln(1.4, 0.2), first_certain: false },
            min_segment: 1e-6,
        }
    }
}

/// Branching probability p_br(ω) = e^{-b_c(ω+1)} / Σ_{i=0}^{ω_max} e^{-b_c(i+1)},
/// zero on the highest order.
pub fn p_br(bc: f64, omega_max: u8, omega: u8) -> f64 {
    if omega >= omega_max {
        return 0.0;
    }
    let z: f64 = (0..=omega_max).map(|i| (-bc * (i as f64 + 1.0)).exp()).sum();
    (-bc * (omega as f64 + 1.0)).exp() / z
}

/// Number of potential branching nodes on an axis of length `l`.
pub fn potential_nodes(l: f64, la: f64, lb: f64, inter: f64) -> usize {
    // Absorbs round-off in sums of decimal lengths.
    const EPS: f64 = 1e-9;
    let x = (l - la - lb) / inter;
    if x < -EPS {
        0
    } else {
        (x + EPS).floor() as usize + 1
    }
}

/// Per-root values drawn once when the root is created.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Traits {
    pub va: f64,
    pub l_max: Option<f64>,
    pub kg: f64,
    pub ks: f64,
    pub kw: f64,
    pub ma: f64,
    pub lb: f64,
    pub la: f64,
    pub inter: f64,
    pub alpha_i: f64,
    pub poles: u32,
}

impl Traits {
    pub fn sample<R: Rng + ?Sized>(p: &GrowthParams, order: u8, rng: &mut R) -> Traits {
        let o = &p.orders[order as usize];
        let va = o.va.sample(rng);
        let kg = o.kg.sample(rng);
        let ks = o.ks.sample(rng);
        let kw = o.kw.sample(rng);
        let ma = p.ma.sample(rng).clamp(0.0, 1.0);
        let (lb, la, inter, alpha_i, poles) = match &o.branch {
            Some(b) => (b.lb.sample(rng), b.la.sample(rng), b.inter.sample(rng), b.alpha_i.sample(rng), b.poles),
            None => (0.0, 0.0, f64::INFINITY, 0.0, 1),
        };
        Traits { va, l_max: o.l_max, kg, ks, kw, ma, lb, la, inter, alpha_i, poles }
    }
}

/// Local soil state seen by a tip.
#[derive(Clone, Copy, Debug)]
pub struct TipSoil {
    pub psi: f64,
    /// Effective saturation Θ.
    pub saturation: f64,
    pub grad_saturation: Vec3,
}

impl TipSoil {
    pub fn from_sample(s: &FieldSample, curves: &VanGenuchten) -> TipSoil {
        let r = curves.theta_s - curves.theta_r;
        TipSoil { psi: s.psi, saturation: (s.theta - curves.theta_r) / r, grad_saturation: s.grad_theta / r }
    }

    /// Saturated soil without gradients.
    pub fn wet() -> TipSoil {
        TipSoil { psi: 0.0, saturation: 1.0, grad_saturation: Vec3::zeros() }
    }
}

/// Growth rate V = V_a Imp(σ) Imp(ψ) of a tip of order `order` and axis age `age`.
pub fn growth_rate(tr: &Traits, order: u8, age: f64, soil: &TipSoil, p: &GrowthParams, curves: Option<&VanGenuchten>) -> f64 {
    let mut va = tr.va;
    if p.age_decay && order >= 1 {
        if let Some(l) = tr.l_max {
            va *= (-tr.va * age / l).exp();
        }
    }
    let imp_s = match curves {
        Some(c) if p.strength_impedance => c.imp_sigma(c.strength_from_saturation(soil.saturation)),
        _ => 1.0,
    };
    let imp_p = p.psi_impedance.map_or(1.0, |t| t.imp_psi(soil.psi));
    va * imp_s * imp_p
}

/// Random perturbation R = I + m_a (m mᵀ - I) of the identity, |m| = 1, m_i ≥ 0.
pub fn perturbation<R: Rng + ?Sized>(ma: f64, rng: &mut R) -> Matrix3<f64> {
    let m = Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
    let n = m.norm();
    if n == 0.0 || ma == 0.0 {
        return Matrix3::identity();
    }
    let m = m / n;
    Matrix3::identity() + ma * (m * m.transpose() - Matrix3::identity())
}

/// Direction of growth and a flag telling whether the fallback -e_z was used.
///
/// `prev` is the previous unit direction, `phi`/`grad_phi` the repulsion
/// value and gradient at the tip.
pub fn growth_direction(prev: &Vec3, grad_sat: &Vec3, phi: f64, grad_phi: &Vec3, tr: &Traits, r: &Matrix3<f64>) -> (Vec3, bool) {
    let down = -Vec3::z();
    let ds = if grad_sat.norm() > 0.0 { grad_sat.normalize() } else { Vec3::zeros() };
    let rp = r * prev;
    let dt = if rp.norm() > 1e-14 { rp.normalize() } else { *prev };
    let raw = tr.ks * ds - tr.kg * Vec3::z() + tr.kw * dt;
    let mut fallback = false;
    let dp = if raw.norm() > 1e-14 {
        raw.normalize()
    } else {
        fallback = true;
        down
    };
    let dobs = if phi > 0.0 && grad_phi.norm() > 0.0 { -grad_phi.normalize() } else { Vec3::zeros() };
    let w = (1.0 - phi * phi) * dp + phi * phi * dobs;
    if w.norm() > 1e-14 {
        (w.normalize(), fallback)
    } else {
        (down, true)
    }
}

/// Unit direction at insertion angle `alpha` from `tangent` and radial angle
/// `radial` measured from the projection of +x (or +y) on the normal plane.
pub fn branch_direction(tangent: &Vec3, alpha: f64, radial: f64) -> Vec3 {
    let t = tangent.normalize();
    let a = if t.cross(&Vec3::x()).norm() > 1e-8 { Vec3::x() } else { Vec3::y() };
    let r0 = (a - t * t.dot(&a)).normalize();
    let r = r0 * radial.cos() + t.cross(&r0) * radial.sin();
    (alpha.cos() * t + alpha.sin() * r).normalize()
}

/// Piecewise linear repulsion function on a tetrahedral refinement of the
/// cells touching impenetrable boundaries.
#[derive(Clone, Debug)]
pub struct RepulsionField {
    pub tet: TetMesh,
    pub values: Vec<f64>,
    pub threshold: Option<f64>,
    grads: Vec<Vec3>,
}

impl RepulsionField {
    pub fn build(mesh: &PolyMesh, impenetrable: &[BoundaryTag], threshold: Option<f64>) -> Result<RepulsionField> {
        let flagged = mesh.tagged_vertices(impenetrable);
        let mut on = vec![false; mesh.num_vertices()];
        for &v in &flagged {
            on[v] = true;
        }
        let cells: Vec<usize> =
            (0..mesh.num_cells()).filter(|&c| mesh.cells[c].verts.iter().any(|&v| on[v])).collect();
        let tet = build_tet_submesh(mesh, &cells)?;
        let values: Vec<f64> = (0..tet.points.len()).map(|i| if i < on.len() && on[i] { 1.0 } else { 0.0 }).collect();
        let grads = tet
            .tets
            .iter()
            .map(|t| {
                let [a, b, c, d] = t.map(|i| tet.points[i]);
                let m = Matrix3::from_rows(&[(b - a).transpose(), (c - a).transpose(), (d - a).transpose()]);
                let rhs = Vec3::new(values[t[1]] - values[t[0]], values[t[2]] - values[t[0]], values[t[3]] - values[t[0]]);
                m.try_inverse().map_or(Vec3::zeros(), |mi| mi * rhs)
            })
            .collect();
        Ok(RepulsionField { tet, values, threshold, grads })
    }

    /// Φ (thresholded when configured) and ∇Φ at `x`.
    pub fn eval(&self, mesh: &PolyMesh, x: &Vec3) -> Result<(f64, Vec3)> {
        let cells = mesh.locate_point(x);
        if cells.is_empty() {
            return Err(Error::Outside(x.x, x.y, x.z));
        }
        for &c in &cells {
            let Some((t, l)) = self.tet.find_in_cell(c, x) else {
                let Some(h) = self.tet.hull_at(c, x) else { continue };
                let phi = self.tet.hull_interpolate(h, &self.values, x).clamp(0.0, 1.0);
                if phi <= self.threshold.unwrap_or(0.0) {
                    return Ok((0.0, Vec3::zeros()));
                }
                let e = 1e-6 * mesh.cells[c].volume.cbrt();
                let g = Vec3::from_fn(|k, _| {
                    let mut d = Vec3::zeros();
                    d[k] = e;
                    let f = |y: Vec3| self.tet.hull_interpolate(h, &self.values, &y);
                    (f(x + d) - f(x - d)) / (2.0 * e)
                });
                return Ok((phi, g));
            };
            let ids = self.tet.tets[t];
            let phi = (0..4).map(|k| l[k] * self.values[ids[k]]).sum::<f64>().clamp(0.0, 1.0);
            if phi <= self.threshold.unwrap_or(0.0) {
                return Ok((0.0, Vec3::zeros()));
            }
            let mut g = self.grads[t];
            if g.norm() < 1e-12 {
                // Tetrahedron with all corners on the obstacle: use the cell average.
                g = self.tet.cell_tets[c].iter().map(|&s| self.grads[s]).sum();
            }
            return Ok((phi, g));
        }
        Ok((0.0, Vec3::zeros()))
    }
}

/// A root axis ending in one tip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub order: u8,
    pub birth: f64,
    pub parent: Option<usize>,
    /// Node the axis starts from.
    pub base: usize,
    pub tip: usize,
    /// Segments from base to tip.
    pub segs: Vec<usize>,
    pub length: f64,
    /// Unit direction of the last step.
    pub dir: Vec3,
    pub speed: f64,
    pub traits: Traits,
    /// Potential node indices that already branched.
    pub fired: Vec<usize>,
}

/// Snapshot of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word: u128,
}

impl From<&ChaCha8Rng> for RngState {
    fn from(r: &ChaCha8Rng) -> Self {
        RngState { seed: r.get_seed(), stream: r.get_stream(), word: r.get_word_pos() }
    }
}

impl From<RngState> for ChaCha8Rng {
    fn from(s: RngState) -> Self {
        let mut r = ChaCha8Rng::from_seed(s.seed);
        r.set_stream(s.stream);
        r.set_word_pos(s.word);
        r
    }
}

/// Inputs the engine reads from the soil solution and geometry.
pub struct Environment<'a> {
    pub soil: &'a dyn Fn(&Vec3) -> Result<TipSoil>,
    pub inside: &'a dyn Fn(&Vec3) -> bool,
    pub repulsion: &'a dyn Fn(&Vec3) -> Result<(f64, Vec3)>,
    pub curves: Option<&'a VanGenuchten>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub advanced: usize,
    pub stalled: usize,
    pub clamped: usize,
    pub branched: usize,
    pub emerged: usize,
    pub fallbacks: usize,
    /// Largest | ‖W‖ - V | over advanced tips.
    pub speed_error: f64,
}

/// Growth engine state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub params: GrowthParams,
    pub axes: Vec<Axis>,
    pub seed_node: usize,
    pub emerged: usize,
    #[serde(with = "rng_serde")]
    rng: ChaCha8Rng,
}

mod rng_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &ChaCha8Rng, s: S) -> std::result::Result<S::Ok, S::Error> {
        RngState::from(r).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ChaCha8Rng, D::Error> {
        RngState::deserialize(d).map(ChaCha8Rng::from)
    }
}

/// Straight vertical mesocotyl from the soil surface down to the seed.
pub fn mesocotyl(seed: Vec3, top: f64, radius: f64) -> Result<(RootNetwork, usize)> {
    let mut net = RootNetwork::new(Vec3::new(seed.x, seed.y, top), radius);
    let s = net.add_node(seed);
    net.add_segment(0, s, 0, 0.0, usize::MAX)?;
    Ok((net, s))
}

struct Pending {
    node: usize,
    dir: Vec3,
    order: u8,
    parent: Option<usize>,
    traits: Traits,
    fired: Option<(usize, usize)>,
}

impl Growth {
    pub fn new(params: GrowthParams, seed_node: usize, rng_seed: u64) -> Result<Growth> {
        params.validate()?;
        Ok(Growth { params, axes: Vec::new(), seed_node, emerged: 0, rng: ChaCha8Rng::seed_from_u64(rng_seed) })
    }

    pub fn tips(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.tip).collect()
    }

    /// Point at arc length `s` along axis `k`: branch node, splitting a
    /// segment when needed; `None` when too close to a segment end to split
    /// and the end is not usable.
    fn node_at(&mut self, net: &mut RootNetwork, k: usize, s: f64) -> Result<Option<(usize, Vec3)>> {
        let tol = self.params.min_segment;
        let mut acc = 0.0;
        for i in 0..self.axes[k].segs.len() {
            let sg = self.axes[k].segs[i];
            let len = net.length(sg);
            if s <= acc + len + tol {
                let tan = net.tangent(sg);
                let local = s - acc;
                if local <= tol {
                    let n = net.segs[sg].a;
                    return Ok((n != self.axes[k].base).then_some((n, tan)));
                }
                if local >= len - tol {
                    let n = net.segs[sg].b;
                    return Ok((n != self.axes[k].tip).then_some((n, tan)));
                }
                let (n, new) = net.split_segment(sg, local / len)?;
                self.axes[k].segs.insert(i + 1, new);
                return Ok(Some((n, tan)));
            }
            acc += len;
        }
        Ok(None)
    }

    fn sample_pending(&mut self, net: &mut RootNetwork) -> Result<Vec<Pending>> {
        let mut out = Vec::new();
        let wmax = self.params.omega_max();
        // Seed emergence.
        let mut slots = self.params.seed.max_roots.saturating_sub(self.emerged);
        if slots > 0 {
            let p0 = p_br(self.params.bc, wmax, 0);
            let tangent = -Vec3::z();
            let mut fired = 0;
            while slots > 0 {
                slots -= 1;
                let certain = self.params.seed.first_certain && self.emerged + fired == 0;
                if !(certain || self.rng.random::<f64>() < p0) {
                    continue;
                }
                fired += 1;
                let alpha = self.params.seed.insertion.sample(&mut self.rng);
                let nr = self.rng.random_range(1..=self.params.seed.poles);
                let dir = branch_direction(&tangent, alpha, 2.0 * PI * nr as f64 / self.params.seed.poles as f64);
                let traits = Traits::sample(&self.params, 0, &mut self.rng);
                out.push(Pending { node: self.seed_node, dir, order: 0, parent: None, traits, fired: None });
            }
        }
        // Laterals.
        for k in 0..self.axes.len() {
            let a = &self.axes[k];
            if a.order >= wmax {
                continue;
            }
            let p = p_br(self.params.bc, wmax, a.order);
            let tr = a.traits;
            let nb = potential_nodes(a.length, tr.la, tr.lb, tr.inter);
            for i in 0..nb {
                if self.axes[k].fired.contains(&i) || self.rng.random::<f64>() >= p {
                    continue;
                }
                let alpha = tr.alpha_i;
                let nr = self.rng.random_range(1..=tr.poles);
                let order = self.axes[k].order + 1;
                let traits = Traits::sample(&self.params, order, &mut self.rng);
                let s = tr.lb + i as f64 * tr.inter;
                let Some((node, tan)) = self.node_at(net, k, s)? else {
                    log::debug!("potential node {i} of axis {k} not resolvable, retrying later");
                    continue;
                };
                let dir = branch_direction(&tan, alpha, 2.0 * PI * nr as f64 / tr.poles as f64);
                out.push(Pending { node, dir, order, parent: Some(k), traits, fired: Some((k, i)) });
            }
        }
        Ok(out)
    }

    /// Checks that every new segment stays in the domain.
    fn admissible(env: &Environment, a: &Vec3, b: &Vec3) -> bool {
        (1..=4).all(|k| (env.inside)(&(a + (b - a) * (k as f64 / 4.0))))
    }

    /// Advances the network from `t` to `t + dt`.
    pub fn step(&mut self, net: &mut RootNetwork, env: &Environment, t: f64, dt: f64) -> Result<StepReport> {
        let mut rep = StepReport::default();
        let pending = self.sample_pending(net)?;
        let n_old = self.axes.len();
        for k in 0..n_old {
            let a = &self.axes[k];
            let x = net.nodes[a.tip];
            let soil = (env.soil)(&x)?;
            let v = growth_rate(&a.traits, a.order, t - a.birth, &soil, &self.params, env.curves);
            let (phi, gphi) = (env.repulsion)(&x)?;
            let r = perturbation(a.traits.ma, &mut self.rng);
            let (d, fb) = growth_direction(&a.dir, &soil.grad_saturation, phi, &gphi, &a.traits, &r);
            if fb {
                log::warn!("growth direction of axis {k} degenerate, using -e_z");
                rep.fallbacks += 1;
            }
            let w = v * d;
            if dt * v <= self.params.min_segment {
                rep.stalled += 1;
                continue;
            }
            rep.speed_error = rep.speed_error.max((w.norm() - v).abs());
            let y = x + dt * w;
            if !Self::admissible(env, &x, &y) {
                log::warn!("tip of axis {k} would leave the soil at ({:.3}, {:.3}, {:.3}); kept in place", y.x, y.y, y.z);
                rep.clamped += 1;
                continue;
            }
            let n = net.add_node(y);
            let s = net.add_segment(self.axes[k].tip, n, self.axes[k].order, t, k)?;
            let a = &mut self.axes[k];
            a.tip = n;
            a.segs.push(s);
            a.length += dt * v;
            a.dir = d;
            a.speed = v;
            rep.advanced += 1;
        }
        for p in pending {
            let x = net.nodes[p.node];
            let soil = (env.soil)(&x)?;
            let v = growth_rate(&p.traits, p.order, 0.0, &soil, &self.params, env.curves);
            if dt * v <= self.params.min_segment {
                continue;
            }
            let y = x + dt * v * p.dir;
            if !Self::admissible(env, &x, &y) {
                rep.clamped += 1;
                continue;
            }
            let k = self.axes.len();
            let n = net.add_node(y);
            let s = net.add_segment(p.node, n, p.order, t, k)?;
            self.axes.push(Axis {
                order: p.order,
                birth: t,
                parent: p.parent,
                base: p.node,
                tip: n,
                segs: vec![s],
                length: dt * v,
                dir: p.dir,
                speed: v,
                traits: p.traits,
                fired: Vec::new(),
            });
            match p.fired {
                Some((a, i)) => {
                    self.axes[a].fired.push(i);
                    rep.branched += 1;
                }
                None => {
                    self.emerged += 1;
                    rep.emerged += 1;
                }
            }
        }
        net.validate()?;
        Ok(rep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hex_grid;

    fn unit_traits() -> Traits {
        Traits { va: 1.0, l_max: Some(2.0), kg: 0.1, ks: 0.25, kw: 1.0, ma: 0.0, lb: 0.8, la: 2.0, inter: 1.0, alpha_i: 1.4, poles: 5 }
    }

    #[test]
    fn branching_probability_and_node_counts() {
        let e = std::f64::consts::E;
        let want = e.powi(-1) / (e.powi(-1) + e.powi(-2) + e.powi(-3));
        assert!((p_br(1.0, 2, 0) - want).abs() < 1e-15);
        assert!((want - 0.6652).abs() < 1e-4);
        assert_eq!(p_br(1.0, 2, 2), 0.0);
        assert_eq!(potential_nodes(2.7, 2.0, 0.8, 1.0), 0);
        assert_eq!(potential_nodes(2.8, 2.0, 0.8, 1.0), 1);
        assert_eq!(potential_nodes(3.8, 2.0, 0.8, 1.0), 2);
    }

    #[test]
    fn rate_examples() {
        let p = GrowthParams::tp2();
        let tr = unit_traits();
        let wet = TipSoil::wet();
        assert_eq!(growth_rate(&tr, 0, 3.0, &wet, &p, None), 1.0);
        let vg = VanGenuchten::tp2();
        let dry = TipSoil { saturation: 0.0, ..wet };
        assert_eq!(growth_rate(&tr, 0, 0.0, &dry, &p, Some(&vg)), 0.0);
        let mut p3 = GrowthParams::tp3();
        p3.psi_impedance = None;
        let v = growth_rate(&tr, 1, 2.0, &wet, &p3, Some(&vg));
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn direction_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prev = Vec3::new(1.0, 0.0, 0.0);
        let id = perturbation(0.0, &mut rng);
        assert_eq!(id, Matrix3::identity());
        let tr = Traits { ks: 0.0, kw: 0.0, ..unit_traits() };
        let (d, _) = growth_direction(&prev, &Vec3::x(), 0.0, &Vec3::zeros(), &tr, &id);
        assert!((d + Vec3::z()).norm() < 1e-15);
        let tr = unit_traits();
        let (d, _) = growth_direction(&prev, &Vec3::x(), 1.0, &Vec3::new(0.0, 2.0, 0.0), &tr, &id);
        assert!((d + Vec3::y()).norm() < 1e-15);
        // Perturbed identity keeps unit-norm output.
        for _ in 0..100 {
            let r = perturbation(rng.random(), &mut rng);
            let (d, _) = growth_direction(&prev, &Vec3::zeros(), 0.3, &Vec3::z(), &tr, &r);
            assert!((d.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn radial_angles_span_poles() {
        let t = -Vec3::z();
        for nr in 1..=5 {
            let d = branch_direction(&t, 1.4, 2.0 * PI * nr as f64 / 5.0);
            assert!((d.dot(&t) - 1.4f64.cos()).abs() < 1e-14);
        }
        let d = branch_direction(&t, 0.5, 2.0 * PI);
        assert!(d.x > 0.0 && d.y.abs() < 1e-14);
    }

    #[test]
    fn repulsion_values() {
        let mesh = build_hex_grid([0.0; 3], [1.0; 3], [4; 3]).unwrap();
        let f = RepulsionField::build(&mesh, &BoundaryTag::ALL, None).unwrap();
        let (p, _) = f.eval(&mesh, &Vec3::new(0.0, 0.4, 0.6)).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        let (p, g) = f.eval(&mesh, &Vec3::new(0.5, 0.5, 0.5)).unwrap();
        assert_eq!((p, g), (0.0, Vec3::zeros()));
        let (p, g) = f.eval(&mesh, &Vec3::new(0.125, 0.5, 0.5)).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert!((g - Vec3::new(-4.0, 0.0, 0.0)).norm() < 1e-9);
        let th = RepulsionField::build(&mesh, &BoundaryTag::ALL, Some(0.9)).unwrap();
        assert_eq!(th.eval(&mesh, &Vec3::new(0.125, 0.5, 0.5)).unwrap().0, 0.0);
        assert!(f.eval(&mesh, &Vec3::new(2.0, 0.5, 0.5)).is_err());
    }

    #[test]
    fn vertical_growth_and_kink() {
        let mut p = GrowthParams::tp2();
        for o in &mut p.orders {
            o.kg = Dist::Fixed(0.0);
            o.ks = Dist::Fixed(0.0);
        }
        p.ma = Dist::Fixed(0.0);
        let (mut net, seed) = mesocotyl(Vec3::new(0.0, 0.0, -0.1), 0.0, 0.05).unwrap();
        let mut g = Growth::new(p, seed, 1).unwrap();
        let soil = |_: &Vec3| Ok(TipSoil::wet());
        let inside = |x: &Vec3| x.z <= 0.0;
        let rep = |_: &Vec3| Ok((0.0, Vec3::zeros()));
        let env = Environment { soil: &soil, inside: &inside, repulsion: &rep, curves: None };
        let r = g.step(&mut net, &env, 0.0, 0.2).unwrap();
        assert_eq!(r.emerged, 1);
        let tip = net.nodes[g.axes[0].tip];
        assert!((tip - Vec3::new(0.0, 0.0, -0.3)).norm() < 1e-14);
        g.step(&mut net, &env, 0.2, 0.2).unwrap();
        assert_eq!(g.axes.len(), 1);
        assert_eq!(net.segs.len(), 3);
        assert_eq!(net.tips(), vec![g.axes[0].tip]);
        assert!((g.axes[0].length - 0.4).abs() < 1e-14);
    }

    #[test]
    fn checkpoint_round_trip_keeps_rng_stream() {
        let mut g = Growth::new(GrowthParams::tp3(), 1, 42).unwrap();
        let _: f64 = g.rng.random();
        let s = serde_json::to_string(&g).unwrap();
        let mut h: Growth = serde_json::from_str(&s).unwrap();
        assert_eq!(g, h);
        assert_eq!(g.rng.random::<u64>(), h.rng.random::<u64>());
    }
}
