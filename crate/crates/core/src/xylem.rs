//! Mixed finite elements for the reduced xylem problem: continuous P1
//! velocity with junction balances built into the space, continuous P1
//! pressure head shared at junctions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::linalg::{Csr, SparseLu};
use crate::network::RootNetwork;
use crate::quad::gauss_legendre;

/// Lumped axial resistance κ̂.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kappa {
    Constant { value: f64 },
    /// πR²(z²/3 + 1/2)⁻¹, used by the manufactured test.
    Manufactured,
}

impl Kappa {
    pub fn eval(&self, x: &Vec3, r: f64) -> f64 {
        match *self {
            Kappa::Constant { value } => value,
            Kappa::Manufactured => std::f64::consts::PI * r * r / (x.z * x.z / 3.0 + 0.5),
        }
    }
}

/// κ̂ = F κ_ρ + F' ν_ρ for the profile f(y) = (γ+2)/γ (1 - y^γ).
pub fn kappa_from_profile(gamma: f64, nu: f64, kappa_rho: f64, r: f64) -> f64 {
    let c = (gamma + 2.0) / gamma;
    let int_f2 = c * c * (0.5 - 2.0 / (gamma + 2.0) + 1.0 / (2.0 * gamma + 2.0));
    let int_df2 = c * c * gamma / 2.0;
    let pi = std::f64::consts::PI;
    2.0 * pi * r * r * int_f2 * kappa_rho + 2.0 * pi * int_df2 * nu
}

/// Radial conductivity L_p, possibly switched off on old segments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conductance {
    Constant { value: f64 },
    AgeCutoff { value: f64, max_age: f64 },
}

impl Conductance {
    pub fn eval(&self, age: f64) -> f64 {
        match *self {
            Conductance::Constant { value } => value,
            Conductance::AgeCutoff { value, max_age } => {
                if age > max_age {
                    0.0
                } else {
                    value
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            Conductance::Constant { value } | Conductance::AgeCutoff { value, .. } => value,
        };
        if v >= 0.0 {
            Ok(())
        } else {
            Err(Error::Param(format!("L_p must be non-negative, got {v}")))
        }
    }
}

/// Condition at a network end (collar or tip).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndCondition {
    /// Volumetric flow leaving the network through this end (cm³/day).
    Flux { value: f64 },
    /// Prescribed pressure head (cm).
    Pressure { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XylemParams {
    pub radius: f64,
    pub kappa: Kappa,
    pub lp: Conductance,
    pub gravity: bool,
    pub collar: EndCondition,
    pub tips: EndCondition,
}

impl XylemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Param("root radius must be positive".into()));
        }
        if let Kappa::Constant { value } = self.kappa {
            if !(value > 0.0) {
                return Err(Error::Param("axial resistance must be positive".into()));
            }
        }
        self.lp.validate()
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }

    /// Radial weight 2πR L_p of segment `s` at time `t`.
    pub fn weight(&self, net: &RootNetwork, s: usize, t: f64) -> f64 {
        2.0 * std::f64::consts::PI * self.radius * self.lp.eval(t - net.segs[s].birth)
    }
}

/// Continuous P1 space on per-segment equispaced partitions, one shared DOF
/// per network node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalLayout {
    pub counts: Vec<usize>,
    /// Global DOF of each local node of each segment.
    pub map: Vec<Vec<usize>>,
    pub ndof: usize,
}

impl NodalLayout {
    pub fn new(net: &RootNetwork, counts: &[usize]) -> NodalLayout {
        let mut node_dof = vec![usize::MAX; net.nodes.len()];
        let mut next = 0;
        let mut map = Vec::with_capacity(net.segs.len());
        for (s, seg) in net.segs.iter().enumerate() {
            let n = counts[s];
            let mut m = vec![0; n + 1];
            for (k, node) in [(0, seg.a), (n, seg.b)] {
                if node_dof[node] == usize::MAX {
                    node_dof[node] = next;
                    next += 1;
                }
                m[k] = node_dof[node];
            }
            for mk in m.iter_mut().take(n).skip(1) {
                *mk = next;
                next += 1;
            }
            map.push(m);
        }
        NodalLayout { counts: counts.to_vec(), map, ndof: next }
    }

    /// Nodal values of segment `s`.
    pub fn local(&self, s: usize, v: &[f64]) -> Vec<f64> {
        self.map[s].iter().map(|&d| v[d]).collect()
    }
}

/// Velocity space: one DOF per interior node, collar and tip, and #Y_b - 1 per
/// junction. Local values are linear combinations of global DOFs.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityLayout {
    pub counts: Vec<usize>,
    pub map: Vec<Vec<Vec<(usize, f64)>>>,
    pub ndof: usize,
    /// Prescribed values (flux ends).
    pub fixed: Vec<Option<f64>>,
}

impl VelocityLayout {
    pub fn new(net: &RootNetwork, counts: &[usize], p: &XylemParams) -> VelocityLayout {
        let adj = net.adjacency();
        let area = p.area();
        let mut assigned = vec![false; net.nodes.len()];
        let mut map: Vec<Vec<Vec<(usize, f64)>>> =
            counts.iter().map(|&n| vec![Vec::new(); n + 1]).collect();
        let mut fixed: Vec<Option<f64>> = Vec::new();
        let mut new_dof = |fixed: &mut Vec<Option<f64>>, v: Option<f64>| {
            fixed.push(v);
            fixed.len() - 1
        };
        let end_of = |s: usize, node: usize| if net.segs[s].b == node { counts[s] } else { 0 };
        for s in 0..net.segs.len() {
            let seg = &net.segs[s];
            let n = counts[s];
            for node in [seg.a, seg.b] {
                if assigned[node] || node == seg.b {
                    continue;
                }
                assigned[node] = true;
                Self::assign_node(net, &adj[node], node, counts, p, area, &mut map, &mut fixed, &mut new_dof, &end_of);
            }
            for k in 1..n {
                let d = new_dof(&mut fixed, None);
                map[s][k] = vec![(d, 1.0)];
            }
            if !assigned[seg.b] {
                assigned[seg.b] = true;
                let node = seg.b;
                Self::assign_node(net, &adj[node], node, counts, p, area, &mut map, &mut fixed, &mut new_dof, &end_of);
            }
        }
        let ndof = fixed.len();
        VelocityLayout { counts: counts.to_vec(), map, ndof, fixed }
    }

    #[allow(clippy::too_many_arguments)]
    fn assign_node(
        net: &RootNetwork,
        inc: &[usize],
        node: usize,
        counts: &[usize],
        p: &XylemParams,
        area: f64,
        map: &mut [Vec<Vec<(usize, f64)>>],
        fixed: &mut Vec<Option<f64>>,
        new_dof: &mut impl FnMut(&mut Vec<Option<f64>>, Option<f64>) -> usize,
        end_of: &impl Fn(usize, usize) -> usize,
    ) {
        if inc.len() == 1 {
            let s = inc[0];
            let distal = net.segs[s].b == node;
            let cond = if node == net.collar { p.collar } else { p.tips };
            let val = match cond {
                // Outward direction is +s at a distal end, -s at a proximal one.
                EndCondition::Flux { value } => Some(if distal { value / area } else { -value / area }),
                EndCondition::Pressure { .. } => None,
            };
            let d = new_dof(fixed, val);
            map[s][end_of(s, node)] = vec![(d, 1.0)];
            return;
        }
        // Σ ε_i u_i = 0 with ε = +1 where the node is the distal end.
        let eps = |s: usize| if net.segs[s].b == node { 1.0 } else { -1.0 };
        let last = *inc.last().unwrap();
        let mut combo = Vec::with_capacity(inc.len() - 1);
        for &s in &inc[..inc.len() - 1] {
            let d = new_dof(fixed, None);
            map[s][end_of(s, node)] = vec![(d, 1.0)];
            combo.push((d, -eps(last) * eps(s)));
        }
        map[last][end_of(last, node)] = combo;
        let _ = counts;
    }

    /// Nodal values of segment `s`.
    pub fn local(&self, s: usize, u: &[f64]) -> Vec<f64> {
        self.map[s].iter().map(|c| c.iter().map(|&(d, w)| w * u[d]).sum()).collect()
    }
}

/// Gauss points of an element [x0, x1] of a segment: (point, weight, local coordinate in [0, 1]).
pub fn element_rule(x0: &Vec3, x1: &Vec3, g: &[(f64, f64)]) -> Vec<(Vec3, f64, f64)> {
    let h = (x1 - x0).norm();
    g.iter().map(|&(t, w)| (x0 + t * (x1 - x0), w * h, t)).collect()
}

/// Equispaced node positions of a segment.
pub fn segment_points(net: &RootNetwork, s: usize, n: usize) -> Vec<Vec3> {
    let (a, b) = (net.nodes[net.segs[s].a], net.nodes[net.segs[s].b]);
    (0..=n).map(|k| a + (k as f64 / n as f64) * (b - a)).collect()
}

/// Assembled xylem operators and the factorized saddle-point matrix.
pub struct XylemSystem {
    pub vel: VelocityLayout,
    pub pre: NodalLayout,
    /// (κ̂ u, v), full velocity space.
    pub a: Csr,
    /// -πR² (q, ∂u), pressure x full velocity.
    pub b: Csr,
    /// Plain pressure mass.
    pub m: Csr,
    /// 2πR L_p pressure mass.
    pub m_lp: Csr,
    /// Gravity and pressure-end terms, full velocity space.
    pub f: Vec<f64>,
    /// ∫ Ŝ q for an optional manufactured source.
    pub src: Vec<f64>,
    free: Vec<Option<usize>>,
    free_list: Vec<usize>,
    fixed_vals: Vec<f64>,
    saddle: SparseLu,
}

impl XylemSystem {
    pub fn assemble(
        net: &RootNetwork,
        counts: &[usize],
        p: &XylemParams,
        time: f64,
        source: Option<&dyn Fn(&Vec3) -> f64>,
    ) -> Result<XylemSystem> {
        p.validate()?;
        if counts.len() != net.segs.len() || counts.contains(&0) {
            return Err(Error::Network("every segment needs at least one element".into()));
        }
        let vel = VelocityLayout::new(net, counts, p);
        let pre = NodalLayout::new(net, counts);
        let (nu, np) = (vel.ndof, pre.ndof);
        let area = p.area();
        let g = gauss_legendre(4);
        let mut ta = Vec::new();
        let mut tb = Vec::new();
        let mut tm = Vec::new();
        let mut tl = Vec::new();
        let mut f = vec![0.0; nu];
        let mut src = vec![0.0; np];
        for s in 0..net.segs.len() {
            let n = counts[s];
            let pts = segment_points(net, s, n);
            let h = net.length(s) / n as f64;
            if !(h > 0.0) {
                return Err(Error::Network(format!("zero-length element on segment {s}")));
            }
            let es_z = net.tangent(s).z;
            let w = p.weight(net, s, time);
            for e in 0..n {
                let vm = [&vel.map[s][e], &vel.map[s][e + 1]];
                let pm = [pre.map[s][e], pre.map[s][e + 1]];
                let mut ka = [[0.0; 2]; 2];
                for (x, wq, t) in element_rule(&pts[e], &pts[e + 1], &g) {
                    let phi = [1.0 - t, t];
                    let k = p.kappa.eval(&x, p.radius);
                    let sv = source.map_or(0.0, |f| f(&x));
                    for i in 0..2 {
                        src[pm[i]] += wq * sv * phi[i];
                        for j in 0..2 {
                            ka[i][j] += wq * k * phi[i] * phi[j];
                        }
                    }
                }
                let mass = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
                let dphi = [-1.0 / h, 1.0 / h];
                for i in 0..2 {
                    for j in 0..2 {
                        for &(di, ci) in vm[i] {
                            for &(dj, cj) in vm[j] {
                                ta.push((di, dj, ci * cj * ka[i][j]));
                            }
                        }
                        // (q_i, ∂u_j) = (h/2) dphi_j
                        for &(dj, cj) in vm[j] {
                            tb.push((pm[i], dj, -area * cj * 0.5 * h * dphi[j]));
                        }
                        tm.push((pm[i], pm[j], mass[i][j]));
                        tl.push((pm[i], pm[j], w * mass[i][j]));
                    }
                    if p.gravity {
                        for &(di, ci) in vm[i] {
                            f[di] -= area * es_z * ci * 0.5 * h;
                        }
                    }
                }
            }
        }
        // Pressure ends: -πR² [ψ_D v] over the segment.
        let adj = net.adjacency();
        for (node, inc) in adj.iter().enumerate() {
            if inc.len() != 1 {
                continue;
            }
            let cond = if node == net.collar { p.collar } else { p.tips };
            if let EndCondition::Pressure { value } = cond {
                let s = inc[0];
                let (k, sign) = if net.segs[s].b == node { (counts[s], -1.0) } else { (0, 1.0) };
                for &(d, c) in &vel.map[s][k] {
                    f[d] += sign * area * value * c;
                }
            }
        }
        let a = Csr::from_triplets(nu, nu, &ta);
        let b = Csr::from_triplets(np, nu, &tb);
        let m = Csr::from_triplets(np, np, &tm);
        let m_lp = Csr::from_triplets(np, np, &tl);

        let mut free = vec![None; nu];
        let mut free_list = Vec::new();
        let mut fixed_vals = vec![0.0; nu];
        for d in 0..nu {
            match vel.fixed[d] {
                Some(v) => fixed_vals[d] = v,
                None => {
                    free[d] = Some(free_list.len());
                    free_list.push(d);
                }
            }
        }
        let nf = free_list.len();
        let mut t = Vec::with_capacity(a.nnz() + 2 * b.nnz() + m_lp.nnz());
        for i in 0..nu {
            if let Some(fi) = free[i] {
                for (j, v) in a.row(i) {
                    if let Some(fj) = free[j] {
                        t.push((fi, fj, v));
                    }
                }
            }
        }
        for i in 0..np {
            for (j, v) in b.row(i) {
                if let Some(fj) = free[j] {
                    t.push((nf + i, fj, v));
                    t.push((fj, nf + i, v));
                }
            }
            for (j, v) in m_lp.row(i) {
                t.push((nf + i, nf + j, -v));
            }
        }
        let saddle = SparseLu::new(&Csr::from_triplets(nf + np, nf + np, &t))
            .map_err(|e| Error::Solver(format!("xylem saddle system: {e}")))?;
        Ok(XylemSystem { vel, pre, a, b, m, m_lp, f, src, free, free_list, fixed_vals, saddle })
    }

    pub fn nfree(&self) -> usize {
        self.free_list.len()
    }

    pub fn np(&self) -> usize {
        self.pre.ndof
    }

    /// Solves the saddle system for right-hand sides on free velocity rows and
    /// pressure rows; returns (free velocity, pressure).
    pub fn solve(&self, ru: &[f64], rp: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nf = self.nfree();
        let mut rhs = Vec::with_capacity(nf + rp.len());
        rhs.extend_from_slice(ru);
        rhs.extend_from_slice(rp);
        let x = self.saddle.solve(&rhs);
        (x[..nf].to_vec(), x[nf..].to_vec())
    }

    /// Full state for a given Φ_σ contribution `d = D̂_Lp Φ_σ`:
    /// returns (full velocity, pressure).
    pub fn forward(&self, d: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lift_u = self.a.matvec(&self.fixed_vals);
        let lift_p = self.b.matvec(&self.fixed_vals);
        let ru: Vec<f64> = self.free_list.iter().map(|&i| self.f[i] - lift_u[i]).collect();
        let rp: Vec<f64> = (0..self.np()).map(|i| -d[i] - lift_p[i] - self.src[i]).collect();
        let (uf, p) = self.solve(&ru, &rp);
        (self.expand(&uf), p)
    }

    /// Pressure response to `d = D̂_Lp δΦ_σ` with homogeneous data.
    pub fn forward_homogeneous(&self, d: &[f64]) -> Vec<f64> {
        let ru = vec![0.0; self.nfree()];
        let rp: Vec<f64> = d.iter().map(|v| -v).collect();
        self.solve(&ru, &rp).1
    }

    /// Pressure block of Â*⁻¹ [0; r].
    pub fn adjoint(&self, r: &[f64]) -> Vec<f64> {
        self.solve(&vec![0.0; self.nfree()], r).1
    }

    pub fn expand(&self, uf: &[f64]) -> Vec<f64> {
        let mut u = self.fixed_vals.clone();
        for (k, &i) in self.free_list.iter().enumerate() {
            u[i] = uf[k];
        }
        u
    }

    pub fn is_free(&self, d: usize) -> bool {
        self.free[d].is_some()
    }

    /// Volumetric flow leaving through the collar, -πR² u(0).
    pub fn collar_outflow(&self, net: &RootNetwork, u: &[f64], p: &XylemParams) -> f64 {
        let adj = net.adjacency();
        match adj[net.collar].first() {
            Some(&s) => -p.area() * self.vel.local(s, u)[0],
            None => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> XylemParams {
        XylemParams {
            radius: 0.05,
            kappa: Kappa::Constant { value: 0.18 },
            lp: Conductance::Constant { value: 1.36e-6 },
            gravity: true,
            collar: EndCondition::Flux { value: 0.2 },
            tips: EndCondition::Flux { value: 0.0 },
        }
    }

    /// Collar -> a, then a branches into b and c.
    fn ybranch() -> RootNetwork {
        let mut n = RootNetwork::new(Vec3::new(0.0, 0.0, 0.0), 0.05);
        let a = n.add_node(Vec3::new(0.0, 0.0, -1.0));
        let b = n.add_node(Vec3::new(0.0, 0.0, -2.0));
        let c = n.add_node(Vec3::new(0.7, 0.0, -1.5));
        n.add_segment(0, a, 0, 0.0, 0).unwrap();
        n.add_segment(a, b, 0, 0.0, 0).unwrap();
        n.add_segment(a, c, 1, 0.0, 1).unwrap();
        n
    }

    #[test]
    fn dof_counts() {
        let mut line = RootNetwork::new(Vec3::zeros(), 0.05);
        let a = line.add_node(Vec3::new(0.0, 0.0, -1.0));
        line.add_segment(0, a, 0, 0.0, 0).unwrap();
        let p = params();
        let v = VelocityLayout::new(&line, &[5], &p);
        assert_eq!((v.ndof, NodalLayout::new(&line, &[5]).ndof), (6, 6));
        let y = ybranch();
        let v = VelocityLayout::new(&y, &[2, 2, 2], &p);
        let q = NodalLayout::new(&y, &[2, 2, 2]);
        // collar, tips: 3; interiors: 3; junction: 2.
        assert_eq!(v.ndof, 8);
        assert_eq!(q.ndof, 7);
        // Kink: one velocity DOF at the bend.
        let mut k = RootNetwork::new(Vec3::zeros(), 0.05);
        let a = k.add_node(Vec3::new(0.0, 0.0, -1.0));
        let b = k.add_node(Vec3::new(0.5, 0.0, -1.5));
        k.add_segment(0, a, 0, 0.0, 0).unwrap();
        k.add_segment(a, b, 0, 0.0, 0).unwrap();
        assert_eq!(VelocityLayout::new(&k, &[1, 1], &p).ndof, 3);
        assert_eq!(NodalLayout::new(&k, &[1, 1]).ndof, 3);
    }

    #[test]
    fn collar_value_and_mass_balance() {
        let net = ybranch();
        let p = params();
        let sys = XylemSystem::assemble(&net, &[3, 2, 4], &p, 0.0, None).unwrap();
        let v = &sys.vel;
        let collar = v.map[0][0][0].0;
        assert!((v.fixed[collar].unwrap() + 0.2 / (std::f64::consts::PI * 0.0025)).abs() < 1e-9);
        // Soil head uniform -10: (πR² ∂u, 1) = -∫ 2πR Lp (ψ̂ + 10), i.e. collar
        // outflow equals the radial inflow.
        let d = sys.m_lp.matvec(&vec![-10.0; sys.np()]);
        let (u, ph) = sys.forward(&d);
        let inflow: f64 = (0..sys.np()).map(|i| -sys.m_lp.matvec(&ph)[i] + d[i]).sum();
        assert!((sys.collar_outflow(&net, &u, &p) - 0.2).abs() < 1e-12);
        assert!((inflow - 0.2).abs() < 1e-9, "{inflow}");
    }
}
