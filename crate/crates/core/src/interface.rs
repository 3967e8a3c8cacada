//! Line integrals over the root centerlines coupling soil traces, xylem
//! pressure and the two control variables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geom::{point_in_polygon, Aabb, Vec3};
use crate::linalg::Csr;
use crate::mesh::PolyMesh;
use crate::network::RootNetwork;
use crate::quad::gauss_legendre;
use crate::vem::Vem;
use crate::xylem::{NodalLayout, XylemParams};

/// Ratios between 1D element counts and the mesh induced by the 3D cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refinement {
    pub state: f64,
    pub control: f64,
}

impl Default for Refinement {
    fn default() -> Self {
        Refinement { state: 1.0, control: 0.5 }
    }
}

fn count(ratio: f64, induced: usize) -> usize {
    ((ratio * induced as f64).round() as usize).max(1)
}

/// Parameters in [0, 1] where the segment crosses cell faces, endpoints included.
pub fn crossings(mesh: &PolyMesh, a: &Vec3, b: &Vec3) -> Vec<f64> {
    let d = b - a;
    let len = d.norm();
    let tol = mesh.locate_tol();
    let bb = Aabb::from_points([a, b]).inflated(tol);
    let mut ts = vec![0.0, 1.0];
    let mut seen = HashSet::new();
    for c in mesh.cells_near(&bb) {
        for &f in &mesh.cells[c].faces {
            if !seen.insert(f) {
                continue;
            }
            let face = &mesh.faces[f];
            let den = face.normal.dot(&d);
            if den.abs() <= 1e-12 * len {
                continue;
            }
            let t = face.normal.dot(&(face.centroid - a)) / den;
            if t <= 0.0 || t >= 1.0 {
                continue;
            }
            let x = a + t * d;
            let pts: Vec<Vec3> = face.verts.iter().map(|&v| mesh.vertices[v]).collect();
            if point_in_polygon(&x, &pts, &face.normal, tol) {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(ts.len());
    let merge = 1e-9_f64.max(tol / len.max(1e-300));
    for t in ts {
        match out.last() {
            Some(&l) if t - l <= merge => {
                if t == 1.0 {
                    *out.last_mut().unwrap() = 1.0;
                }
            }
            _ => out.push(t),
        }
    }
    out
}

type SegKey = ([u64; 6], usize, usize);

fn seg_key(a: &Vec3, b: &Vec3, n: usize, m: usize) -> SegKey {
    ([a.x, a.y, a.z, b.x, b.y, b.z].map(f64::to_bits), n, m)
}

/// Unweighted blocks of one segment. Soil indices are global, 1D indices local.
#[derive(Debug)]
struct SegBlocks {
    /// (trace, trace)
    mss: Vec<(usize, usize, f64)>,
    /// (trace, control node)
    dsc: Vec<(usize, usize, f64)>,
    /// (pressure node, control node)
    dpc: Vec<f64>,
    /// (control node, control node)
    gcc: Vec<f64>,
    /// ∫ control basis
    cint: Vec<f64>,
}

/// Element index and local coordinate of parameter t on an n-element partition.
fn locate_1d(t: f64, tm: f64, n: usize) -> (usize, f64) {
    let e = ((tm * n as f64).floor() as usize).min(n - 1);
    (e, t * n as f64 - e as f64)
}

fn build_blocks(mesh: &PolyMesh, vem: &Vem, a: &Vec3, b: &Vec3, cross: &[f64], n: usize, m: usize) -> Result<SegBlocks> {
    let len = (b - a).norm();
    let mut ts: Vec<f64> = cross.to_vec();
    ts.extend((0..=n).map(|k| k as f64 / n as f64));
    ts.extend((0..=m).map(|k| k as f64 / m as f64));
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|x, y| (*x - *y).abs() <= 1e-12);
    let g = gauss_legendre(3);
    let mut mss: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut dsc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut dpc = vec![0.0; (n + 1) * (m + 1)];
    let mut gcc = vec![0.0; (m + 1) * (m + 1)];
    let mut cint = vec![0.0; m + 1];
    for w in ts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let tm = 0.5 * (t0 + t1);
        for &(q, wq) in &g {
            let t = t0 + q * (t1 - t0);
            let x = a + t * (b - a);
            let wt = wq * (t1 - t0) * len;
            let tr = vem.trace_weights(mesh, &x)?;
            let (es, ls) = locate_1d(t, tm, n);
            let (ec, lc) = locate_1d(t, tm, m);
            let ps = [(es, 1.0 - ls), (es + 1, ls)];
            let pc = [(ec, 1.0 - lc), (ec + 1, lc)];
            for &(i, wi) in &tr {
                for &(j, wj) in &tr {
                    *mss.entry((i, j)).or_default() += wt * wi * wj;
                }
                for &(k, wk) in &pc {
                    *dsc.entry((i, k)).or_default() += wt * wi * wk;
                }
            }
            for &(i, wi) in &ps {
                for &(k, wk) in &pc {
                    dpc[i * (m + 1) + k] += wt * wi * wk;
                }
            }
            for &(i, wi) in &pc {
                cint[i] += wt * wi;
                for &(k, wk) in &pc {
                    gcc[i * (m + 1) + k] += wt * wi * wk;
                }
            }
        }
    }
    Ok(SegBlocks {
        mss: mss.into_iter().map(|((i, j), v)| (i, j, v)).collect(),
        dsc: dsc.into_iter().map(|((i, j), v)| (i, j, v)).collect(),
        dpc,
        gcc,
        cint,
    })
}

/// Assembled interface operators for one network state.
#[derive(Clone, Debug)]
pub struct InterfaceOps {
    /// Shared layout of Φ_σ and Φ_χ.
    pub ctrl: NodalLayout,
    /// State element counts per segment.
    pub state_counts: Vec<usize>,
    pub induced: Vec<usize>,
    /// Radial weight 2πR L_p per segment.
    pub weights: Vec<f64>,
    /// (trace, trace) mass M and its weighted version M_Lp.
    pub m: Csr,
    pub m_lp: Csr,
    /// (trace, control) D^σσ and D_Lp.
    pub d: Csr,
    pub d_lp: Csr,
    /// (xylem pressure, control) D̂^χχ and D̂_Lp.
    pub dh: Csr,
    pub dh_lp: Csr,
    /// Control mass (G = Ĝ).
    pub g: Csr,
    /// ∫ of each control basis function, per segment and local node.
    pub cint: Vec<Vec<f64>>,
}

impl InterfaceOps {
    pub fn nctrl(&self) -> usize {
        self.ctrl.ndof
    }

    /// Per-segment uptake w ∫ (Φ_σ - Φ_χ) (cm³/day).
    pub fn segment_uptake(&self, sigma: &[f64], chi: &[f64]) -> Vec<f64> {
        (0..self.cint.len())
            .map(|s| {
                let ds: f64 = self.ctrl.map[s].iter().zip(&self.cint[s]).map(|(&d, c)| c * (sigma[d] - chi[d])).sum();
                self.weights[s] * ds
            })
            .collect()
    }

    /// L²-mean of a control over the network.
    pub fn mean(&self, v: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for s in 0..self.cint.len() {
            for (&d, c) in self.ctrl.map[s].iter().zip(&self.cint[s]) {
                num += c * v[d];
                den += c;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

/// Builds interface operators, reusing per-segment blocks across calls.
#[derive(Default)]
pub struct Interface {
    pub refine: Refinement,
    cache: HashMap<SegKey, Arc<SegBlocks>>,
    cross_cache: HashMap<[u64; 6], Arc<Vec<f64>>>,
}

impl Interface {
    pub fn new(refine: Refinement) -> Interface {
        Interface { refine, cache: HashMap::new(), cross_cache: HashMap::new() }
    }

    pub fn cached_segments(&self) -> usize {
        self.cache.len()
    }

    pub fn assemble(
        &mut self,
        mesh: &PolyMesh,
        vem: &Vem,
        net: &RootNetwork,
        p: &XylemParams,
        time: f64,
        np: Option<&NodalLayout>,
    ) -> Result<InterfaceOps> {
        let ns = net.segs.len();
        let mut induced = Vec::with_capacity(ns);
        let mut state_counts = Vec::with_capacity(ns);
        let mut ctrl_counts = Vec::with_capacity(ns);
        let mut blocks = Vec::with_capacity(ns);
        let mut used = HashSet::new();
        let mut used_cross = HashSet::new();
        for s in 0..ns {
            let (a, b) = (net.nodes[net.segs[s].a], net.nodes[net.segs[s].b]);
            let ck = seg_key(&a, &b, 0, 0).0;
            let cross = match self.cross_cache.get(&ck) {
                Some(c) => c.clone(),
                None => {
                    let c = Arc::new(crossings(mesh, &a, &b));
                    self.cross_cache.insert(ck, c.clone());
                    c
                }
            };
            used_cross.insert(ck);
            let ni = cross.len() - 1;
            let n = count(self.refine.state, ni);
            let m = count(self.refine.control, ni);
            let key = seg_key(&a, &b, n, m);
            let blk = match self.cache.get(&key) {
                Some(bk) => bk.clone(),
                None => {
                    let bk = Arc::new(build_blocks(mesh, vem, &a, &b, &cross, n, m).map_err(|e| match e {
                        Error::Outside(..) => Error::Network(format!("segment {s} leaves the soil domain: {e}")),
                        e => e,
                    })?);
                    self.cache.insert(key, bk.clone());
                    bk
                }
            };
            used.insert(key);
            induced.push(ni);
            state_counts.push(n);
            ctrl_counts.push(m);
            blocks.push(blk);
        }
        self.cache.retain(|k, _| used.contains(k));
        self.cross_cache.retain(|k, _| used_cross.contains(k));

        let ctrl = NodalLayout::new(net, &ctrl_counts);
        let own;
        let pre = match np {
            Some(l) => l,
            None => {
                own = NodalLayout::new(net, &state_counts);
                &own
            }
        };
        let nsoil = vem.ndof;
        let nc = ctrl.ndof;
        let weights: Vec<f64> = (0..ns).map(|s| p.weight(net, s, time)).collect();
        let (mut tm, mut tml, mut td, mut tdl, mut th, mut thl, mut tg) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for s in 0..ns {
            let bk = &blocks[s];
            let w = weights[s];
            let cm = &ctrl.map[s];
            let pm = &pre.map[s];
            let m1 = ctrl_counts[s] + 1;
            for &(i, j, v) in &bk.mss {
                tm.push((i, j, v));
                tml.push((i, j, w * v));
            }
            for &(i, k, v) in &bk.dsc {
                td.push((i, cm[k], v));
                tdl.push((i, cm[k], w * v));
            }
            for (i, &pi) in pm.iter().enumerate() {
                for k in 0..m1 {
                    let v = bk.dpc[i * m1 + k];
                    th.push((pi, cm[k], v));
                    thl.push((pi, cm[k], w * v));
                }
            }
            for i in 0..m1 {
                for k in 0..m1 {
                    tg.push((cm[i], cm[k], bk.gcc[i * m1 + k]));
                }
            }
        }
        Ok(InterfaceOps {
            state_counts,
            induced,
            m: Csr::from_triplets(nsoil, nsoil, &tm),
            m_lp: Csr::from_triplets(nsoil, nsoil, &tml),
            d: Csr::from_triplets(nsoil, nc, &td),
            d_lp: Csr::from_triplets(nsoil, nc, &tdl),
            dh: Csr::from_triplets(pre.ndof, nc, &th),
            dh_lp: Csr::from_triplets(pre.ndof, nc, &thl),
            g: Csr::from_triplets(nc, nc, &tg),
            cint: blocks.iter().map(|b| b.cint.clone()).collect(),
            weights,
            ctrl,
        })
    }
}

/// State element counts alone (induced mesh times the state ratio).
pub fn state_counts(mesh: &PolyMesh, net: &RootNetwork, refine: Refinement) -> Vec<usize> {
    (0..net.segs.len())
        .map(|s| {
            let (a, b) = (net.nodes[net.segs[s].a], net.nodes[net.segs[s].b]);
            count(refine.state, crossings(mesh, &a, &b).len() - 1)
        })
        .collect()
}

/// ∫_Λ f φ_α ds for every soil basis function, integrated on the crossing partition.
pub fn soil_line_load<F: Fn(&Vec3) -> f64>(mesh: &PolyMesh, vem: &Vem, net: &RootNetwork, f: F) -> Result<Vec<f64>> {
    let mut out = vec![0.0; vem.ndof];
    let g = gauss_legendre(5);
    for s in 0..net.segs.len() {
        let (a, b) = (net.nodes[net.segs[s].a], net.nodes[net.segs[s].b]);
        let len = (b - a).norm();
        let ts = crossings(mesh, &a, &b);
        for w in ts.windows(2) {
            for &(q, wq) in &g {
                let t = w[0] + q * (w[1] - w[0]);
                let x = a + t * (b - a);
                let fx = f(&x);
                for (i, wi) in vem.trace_weights(mesh, &x)? {
                    out[i] += wq * (w[1] - w[0]) * len * fx * wi;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hex_grid;
    use crate::xylem::{Conductance, EndCondition, Kappa};

    fn params(lp: f64) -> XylemParams {
        XylemParams {
            radius: 0.01,
            kappa: Kappa::Manufactured,
            lp: Conductance::Constant { value: lp },
            gravity: false,
            collar: EndCondition::Pressure { value: -1.0 },
            tips: EndCondition::Pressure { value: -1.0 },
        }
    }

    fn axis() -> RootNetwork {
        let mut n = RootNetwork::new(Vec3::new(0.0, 0.0, -1.0), 0.01);
        let t = n.add_node(Vec3::new(0.0, 0.0, 1.0));
        n.add_segment(0, t, 0, 0.0, 0).unwrap();
        n
    }

    #[test]
    fn partition_of_unity_and_counts() {
        let mesh = build_hex_grid([-1.0; 3], [1.0; 3], [3, 3, 3]).unwrap();
        let vem = Vem::new(&mesh).unwrap();
        let net = axis();
        let mut itf = Interface::new(Refinement::default());
        let ops = itf.assemble(&mesh, &vem, &net, &params(0.3), 0.0, None).unwrap();
        assert_eq!(ops.induced, vec![3]);
        assert_eq!(ops.state_counts, vec![3]);
        assert_eq!(ops.ctrl.ndof, 3);
        // Σ_α ∫ B_α = |Λ| for each control column sum, and in total.
        let tot: f64 = ops.d.data.iter().sum();
        assert!((tot - 2.0).abs() < 1e-12);
        let g: f64 = ops.g.data.iter().sum();
        assert!((g - 2.0).abs() < 1e-12);
        let ones = vec![1.0; vem.ndof];
        assert!((crate::linalg::dot(&ones, &ops.m.matvec(&ones)) - 2.0).abs() < 1e-12);
        assert!(ops.m.max_asymmetry() < 1e-15);
        let zero = itf.assemble(&mesh, &vem, &net, &params(0.0), 0.0, None).unwrap();
        assert!(zero.m_lp.data.iter().chain(&zero.d_lp.data).chain(&zero.dh_lp.data).all(|&v| v == 0.0));
    }

    #[test]
    fn cached_blocks_match_fresh_assembly() {
        let mesh = build_hex_grid([-1.0; 3], [1.0; 3], [4, 4, 4]).unwrap();
        let vem = Vem::new(&mesh).unwrap();
        let mut net = RootNetwork::new(Vec3::new(0.1, 0.2, 0.9), 0.01);
        let a = net.add_node(Vec3::new(0.15, 0.1, 0.2));
        net.add_segment(0, a, 0, 0.0, 0).unwrap();
        let mut itf = Interface::new(Refinement::default());
        itf.assemble(&mesh, &vem, &net, &params(0.3), 0.0, None).unwrap();
        let b = net.add_node(Vec3::new(-0.3, 0.1, -0.4));
        net.add_segment(a, b, 0, 0.5, 0).unwrap();
        net.split_segment(0, 0.3).unwrap();
        let inc = itf.assemble(&mesh, &vem, &net, &params(0.3), 1.0, None).unwrap();
        let fresh = Interface::new(Refinement::default()).assemble(&mesh, &vem, &net, &params(0.3), 1.0, None).unwrap();
        for (x, y) in [(&inc.m, &fresh.m), (&inc.d_lp, &fresh.d_lp), (&inc.dh, &fresh.dh), (&inc.g, &fresh.g)] {
            assert_eq!(x.indices, y.indices);
            for (u, v) in x.data.iter().zip(&y.data) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
        assert_eq!(itf.cached_segments(), 3);
    }

    #[test]
    fn line_load_integrates_constants() {
        let mesh = build_hex_grid([-1.0; 3], [1.0; 3], [3, 3, 3]).unwrap();
        let vem = Vem::new(&mesh).unwrap();
        let l = soil_line_load(&mesh, &vem, &axis(), |x| x.z * x.z).unwrap();
        assert!((l.iter().sum::<f64>() - 2.0 / 3.0).abs() < 1e-12);
    }
}
