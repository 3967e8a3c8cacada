//! Optimization-based coupling: the reduced control problem is solved by
//! (preconditioned) conjugate gradients without forming its matrix, inside a
//! Picard loop for each backward Euler step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interface::InterfaceOps;
use crate::linalg::{dot, norm2, norm_inf, Cholesky, Csr};
use crate::soil::SoilModel;
use crate::vem::{DofMap, Vem};
use crate::xylem::XylemSystem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub picard_tol: f64,
    pub picard_max: usize,
    pub cg_tol: f64,
    pub cg_max: usize,
    pub precondition: bool,
    /// Also count plain CG iterations at the first Picard iteration.
    pub shadow_plain: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            picard_tol: 1e-8,
            picard_max: 30,
            cg_tol: 1e-6,
            cg_max: 5000,
            precondition: true,
            shadow_plain: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.picard_tol > 0.0 && self.cg_tol > 0.0) || self.picard_max == 0 || self.cg_max == 0 {
            return Err(Error::Config("solver tolerances and iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iters: usize,
    pub r0: f64,
    pub r: f64,
}

/// CG on a symmetric positive semi-definite operator given the initial
/// residual; stops when ‖r‖ < tol (1 + ‖r0‖).
pub fn pcg<A, P>(mut apply: A, x0: Vec<f64>, r0: Vec<f64>, tol: f64, max: usize, precond: Option<P>) -> Result<CgOutcome>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = x0;
    let mut r = r0;
    let rn0 = norm2(&r);
    let thr = tol * (1.0 + rn0);
    let mut rn = rn0;
    if rn < thr {
        return Ok(CgOutcome { x, iters: 0, r0: rn0, r: rn });
    }
    let pc = |r: &[f64]| match &precond {
        Some(p) => p(r),
        None => r.to_vec(),
    };
    let mut z = pc(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut k = 0;
    loop {
        let q = apply(&p)?;
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::Cg(format!("non-positive curvature {pq:e} at iteration {k}")));
        }
        let alpha = rz / pq;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        k += 1;
        rn = norm2(&r);
        if rn < thr {
            break;
        }
        if k >= max {
            return Err(Error::Cg(format!("no convergence in {max} iterations (residual {rn:e})")));
        }
        z = pc(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(CgOutcome { x, iters: k, r0: rn0, r: rn })
}

/// States and gradient of the reduced functional at a control vector.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Soil pressure head, all DOFs.
    pub psi: Vec<f64>,
    /// Xylem velocity, all DOFs (empty for homogeneous evaluations).
    pub u: Vec<f64>,
    pub ph: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Operators frozen within one Picard iteration.
pub struct Frozen<'a> {
    pub dofs: &'a DofMap,
    pub chol: &'a Cholesky,
    /// Free rows of f* - A* Ψ_D.
    pub rhs3: Vec<f64>,
    /// Dirichlet values, zeros on free DOFs.
    pub base3: Vec<f64>,
    pub xyl: &'a XylemSystem,
    pub ops: &'a InterfaceOps,
}

impl Frozen<'_> {
    pub fn nctrl(&self) -> usize {
        self.ops.nctrl()
    }

    fn split<'v>(&self, x: &'v [f64]) -> (&'v [f64], &'v [f64]) {
        x.split_at(self.nctrl())
    }

    /// Ψ(Φ_χ) from A* Ψ = D_Lp Φ_χ + f*.
    pub fn soil_state(&self, chi: &[f64], homogeneous: bool) -> Vec<f64> {
        let mut r = self.dofs.restrict(&self.ops.d_lp.matvec(chi));
        if !homogeneous {
            r.iter_mut().zip(&self.rhs3).for_each(|(a, b)| *a += b);
        }
        let sol = self.chol.solve(&r);
        if homogeneous {
            self.dofs.expand_zero(&sol)
        } else {
            self.dofs.expand(&sol, &self.base3)
        }
    }

    /// (Û, Ψ̂)(Φ_σ).
    pub fn xylem_state(&self, sigma: &[f64], homogeneous: bool) -> (Vec<f64>, Vec<f64>) {
        let d = self.ops.dh_lp.matvec(sigma);
        if homogeneous {
            (Vec::new(), self.xyl.forward_homogeneous(&d))
        } else {
            self.xyl.forward(&d)
        }
    }

    fn gradient(&self, psi: &[f64], ph: &[f64], sigma: &[f64], chi: &[f64]) -> Vec<f64> {
        let ops = self.ops;
        let mut r3 = ops.m.matvec(psi);
        ops.d.matvec_add(sigma, -1.0, &mut r3);
        let psid = self.dofs.expand_zero(&self.chol.solve(&self.dofs.restrict(&r3)));
        let mut r1 = self.xyl.m.matvec(ph);
        ops.dh.matvec_add(chi, -1.0, &mut r1);
        let phd = self.xyl.adjoint(&r1);
        let mut gs = ops.g.matvec(sigma);
        let a = ops.d.tmatvec(psi);
        let b = ops.dh_lp.tmatvec(&phd);
        let mut gc = ops.g.matvec(chi);
        let c = ops.dh.tmatvec(ph);
        let d = ops.d_lp.tmatvec(&psid);
        for i in 0..gs.len() {
            gs[i] -= a[i] + b[i];
            gc[i] += d[i] - c[i];
        }
        gs.extend(gc);
        gs
    }

    fn eval_impl(&self, x: &[f64], homogeneous: bool) -> Evaluation {
        let (sigma, chi) = self.split(x);
        let psi = self.soil_state(chi, homogeneous);
        let (u, ph) = self.xylem_state(sigma, homogeneous);
        let grad = self.gradient(&psi, &ph, sigma, chi);
        Evaluation { psi, u, ph, grad }
    }

    /// States and ∇J̃ = M X + d.
    pub fn evaluate(&self, x: &[f64]) -> Evaluation {
        self.eval_impl(x, false)
    }

    /// M δX by two state and two adjoint solves.
    pub fn apply(&self, dx: &[f64]) -> Vec<f64> {
        self.eval_impl(dx, true).grad
    }

    /// J̃ = ½ (‖Ψ - Φ_σ‖² + ‖Ψ̂ - Φ_χ‖²) on Λ.
    pub fn cost(&self, psi: &[f64], ph: &[f64], x: &[f64]) -> f64 {
        let (sigma, chi) = self.split(x);
        let ops = self.ops;
        let q1 = dot(psi, &ops.m.matvec(psi)) - 2.0 * dot(psi, &ops.d.matvec(sigma)) + dot(sigma, &ops.g.matvec(sigma));
        let q2 = dot(ph, &self.xyl.m.matvec(ph)) - 2.0 * dot(ph, &ops.dh.matvec(chi)) + dot(chi, &ops.g.matvec(chi));
        0.5 * (q1 + q2).max(0.0)
    }

    /// Minimizes J̃ starting from `x0`; returns the CG outcome and the final evaluation.
    pub fn minimize(&self, x0: Vec<f64>, cfg: &SolverConfig, pre: Option<&Cholesky>) -> Result<(CgOutcome, Evaluation)> {
        let e0 = self.evaluate(&x0);
        let r0: Vec<f64> = e0.grad.iter().map(|g| -g).collect();
        let apply = |p: &[f64]| Ok(self.apply(p));
        let out = match pre {
            Some(g) => {
                let n = self.nctrl();
                let pc = move |r: &[f64]| {
                    let mut z = g.solve(&r[..n]);
                    z.extend(g.solve(&r[n..]));
                    z
                };
                pcg(apply, x0, r0, cfg.cg_tol, cfg.cg_max, Some(pc))?
            }
            None => pcg(apply, x0, r0, cfg.cg_tol, cfg.cg_max, None::<fn(&[f64]) -> Vec<f64>>)?,
        };
        let ev = if out.iters == 0 { e0 } else { self.evaluate(&out.x) };
        Ok((out, ev))
    }
}

/// Soil discretization and constitutive data.
pub struct SoilSystem {
    pub vem: Vem,
    pub model: SoilModel,
    pub dofs: DofMap,
    pub gravity: bool,
}

/// Data of one backward Euler step on a fixed network.
pub struct StepData<'a> {
    pub psi_old: &'a [f64],
    /// Dirichlet values (only the Dirichlet entries are read).
    pub dirichlet: &'a [f64],
    /// Extra right-hand side on all soil DOFs (sources).
    pub load: Option<&'a [f64]>,
    /// Time step; infinity gives the stationary problem.
    pub dt: f64,
    pub xyl: &'a XylemSystem,
    pub ops: &'a InterfaceOps,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub psi: Vec<f64>,
    pub u: Vec<f64>,
    pub ph: Vec<f64>,
    pub x: Vec<f64>,
    pub picard: usize,
    pub cg: Vec<usize>,
    pub cg_plain: Option<usize>,
    pub cost: f64,
}

/// Reusable factorizations across Picard iterations and steps.
#[derive(Default)]
pub struct Workspace {
    soil: Option<Cholesky>,
    ctrl: Option<Cholesky>,
}

fn refactor(slot: &mut Option<Cholesky>, a: &Csr) -> Result<()> {
    match slot {
        Some(c) => c.refactor(a),
        None => {
            *slot = Some(Cholesky::new(a)?);
            Ok(())
        }
    }
}

impl SoilSystem {
    /// One backward Euler step with Picard linearization.
    pub fn step(&self, data: &StepData, x0: Vec<f64>, cfg: &SolverConfig, ws: &mut Workspace) -> Result<StepOutcome> {
        let nc = data.ops.nctrl();
        if x0.len() != 2 * nc {
            return Err(Error::Solver(format!("control vector has length {}, expected {}", x0.len(), 2 * nc)));
        }
        let mut base3 = vec![0.0; self.vem.ndof];
        for &d in &self.dofs.dirichlet {
            base3[d] = data.dirichlet[d];
        }
        let mut psi = data.psi_old.to_vec();
        for &d in &self.dofs.dirichlet {
            psi[d] = data.dirichlet[d];
        }
        let inv_dt = if data.dt.is_finite() { 1.0 / data.dt } else { 0.0 };
        if nc > 0 {
            refactor(&mut ws.ctrl, &data.ops.g).map_err(|e| Error::Solver(format!("control mass: {e}")))?;
        }
        let mut x = x0;
        let mut cg = Vec::new();
        let mut cg_plain = None;
        for it in 1..=cfg.picard_max {
            let sop = self.vem.assemble(&self.model, &psi, self.gravity)?;
            let astar = Csr::lin_comb(1.0, &Csr::lin_comb(1.0, &sop.a, inv_dt, &sop.c), 1.0, &data.ops.m_lp);
            let mut f = sop.f;
            if inv_dt > 0.0 {
                sop.c.matvec_add(data.psi_old, inv_dt, &mut f);
            }
            if let Some(l) = data.load {
                f.iter_mut().zip(l).for_each(|(a, b)| *a += b);
            }
            refactor(&mut ws.soil, &self.dofs.free_block(&astar))?;
            let lift = self.dofs.lifting(&astar, &base3);
            let rhs3: Vec<f64> = self.dofs.restrict(&f).iter().zip(&lift).map(|(a, b)| a - b).collect();
            let fr = Frozen {
                dofs: &self.dofs,
                chol: ws.soil.as_ref().unwrap(),
                rhs3,
                base3: base3.clone(),
                xyl: data.xyl,
                ops: data.ops,
            };
            let (out, ev) = if nc == 0 {
                let ev = fr.evaluate(&x);
                (CgOutcome { x: x.clone(), iters: 0, r0: 0.0, r: 0.0 }, ev)
            } else {
                if it == 1 && cfg.shadow_plain {
                    let plain = SolverConfig { precondition: false, ..cfg.clone() };
                    cg_plain = Some(fr.minimize(x.clone(), &plain, None)?.0.iters);
                }
                let pre = if cfg.precondition { ws.ctrl.as_ref() } else { None };
                fr.minimize(x.clone(), cfg, pre)?
            };
            cg.push(out.iters);
            x = out.x;
            let change = psi.iter().zip(&ev.psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let converged = change < cfg.picard_tol * (1.0 + norm_inf(&ev.psi));
            let cost = fr.cost(&ev.psi, &ev.ph, &x);
            psi = ev.psi;
            if !psi.iter().all(|v| v.is_finite()) {
                return Err(Error::Solver("non-finite soil pressure head".into()));
            }
            if converged {
                return Ok(StepOutcome { psi, u: ev.u, ph: ev.ph, x, picard: it, cg, cg_plain, cost });
            }
        }
        Err(Error::Picard(cfg.picard_max))
    }

    /// Steady Richards problem without roots (C = 0, L_p = 0), by Picard
    /// iteration from `psi0`. Returns the solution and the iteration count.
    pub fn stationary(&self, dirichlet: &[f64], psi0: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, usize)> {
        let mut base = vec![0.0; self.vem.ndof];
        for &d in &self.dofs.dirichlet {
            base[d] = dirichlet[d];
        }
        let mut psi = self.dofs.expand(&self.dofs.restrict(psi0), &base);
        let mut chol: Option<Cholesky> = None;
        for it in 1..=cfg.picard_max {
            let sop = self.vem.assemble(&self.model, &psi, self.gravity)?;
            refactor(&mut chol, &self.dofs.free_block(&sop.a))?;
            let lift = self.dofs.lifting(&sop.a, &base);
            let rhs: Vec<f64> = self.dofs.restrict(&sop.f).iter().zip(&lift).map(|(a, b)| a - b).collect();
            let new = self.dofs.expand(&chol.as_ref().unwrap().solve(&rhs), &base);
            let change = psi.iter().zip(&new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            psi = new;
            if change < cfg.picard_tol * (1.0 + norm_inf(&psi)) {
                return Ok((psi, it));
            }
        }
        Err(Error::Picard(cfg.picard_max))
    }

    /// Step of size dt; on failure retries once with two halved steps.
    pub fn step_with_fallback(&self, data: &StepData, x0: Vec<f64>, cfg: &SolverConfig, ws: &mut Workspace) -> Result<StepOutcome> {
        match self.step(data, x0.clone(), cfg, ws) {
            Ok(o) => Ok(o),
            Err(e @ (Error::Picard(_) | Error::Cg(_))) if data.dt.is_finite() => {
                log::warn!("step failed ({e}); retrying with dt/2");
                let half = StepData { dt: 0.5 * data.dt, ..*data };
                let a = self.step(&half, x0, cfg, ws)?;
                let second = StepData { psi_old: &a.psi, ..half };
                let mut b = self.step(&second, a.x.clone(), cfg, ws)?;
                b.picard += a.picard;
                let mut cg = a.cg;
                cg.extend(b.cg);
                b.cg = cg;
                b.cg_plain = a.cg_plain;
                Ok(b)
            }
            Err(e) => Err(e),
        }
    }
}

/// Total uptake ∫ 2πR L_p (Φ_σ - Φ_χ) ds.
pub fn total_uptake(ops: &InterfaceOps, x: &[f64]) -> f64 {
    let n = ops.nctrl();
    ops.segment_uptake(&x[..n], &x[n..]).iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_spd_system() {
        let a = Csr::from_triplets(3, 3, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0)]);
        let b = vec![1.0, 2.0, 3.0];
        let out = pcg(|p| Ok(a.matvec(p)), vec![0.0; 3], b.clone(), 1e-12, 10, None::<fn(&[f64]) -> Vec<f64>>).unwrap();
        let r = a.matvec(&out.x);
        assert!(r.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
        assert!(out.iters <= 3);
        // Starting at the solution costs nothing.
        let again = pcg(|p| Ok(a.matvec(p)), out.x.clone(), vec![0.0; 3], 1e-6, 10, None::<fn(&[f64]) -> Vec<f64>>).unwrap();
        assert_eq!(again.iters, 0);
        let neg = Csr::from_triplets(1, 1, &[(0, 0, -1.0)]);
        assert!(pcg(|p| Ok(neg.matvec(p)), vec![0.0], vec![1.0], 1e-6, 10, None::<fn(&[f64]) -> Vec<f64>>).is_err());
    }
}
