//! Acceptance criteria 1-10, one test each. Every test prints a single
//! PASS/FAIL line to stderr (bypassing output capture) before asserting.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhizoflow::geom::Vec3;
use rhizoflow::interface::{Interface, Refinement};
use rhizoflow::linalg::{Cholesky, Csr};
use rhizoflow::mesh::{build_hex_grid, build_structured_hex, carve_spheres, BoundaryTag, PolyMesh, Sphere};
use rhizoflow::network::RootNetwork;
use rhizoflow::rsa::{mesocotyl, p_br, Environment, Growth, GrowthParams, TipSoil};
use rhizoflow::scenario::{ScenarioConfig, Simulation, StepRecord};
use rhizoflow::soil::{ImpedanceThresholds, SoilModel, VanGenuchten};
use rhizoflow::solver::{Frozen, SolverConfig};
use rhizoflow::tp1::{self, Tp1Level};
use rhizoflow::vem::{DofMap, Vem};
use rhizoflow::xylem::{Conductance, EndCondition, Kappa, XylemParams, XylemSystem};

fn report(n: usize, ok: bool, msg: &str) {
    let _ = writeln!(std::io::stderr(), "criterion {n:>2}: {} | {msg}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {msg}");
}

fn tp1_levels() -> &'static Vec<Tp1Level> {
    static L: OnceLock<Vec<Tp1Level>> = OnceLock::new();
    L.get_or_init(|| tp1::LEVELS.iter().map(|&n| tp1::run_level(n, &SolverConfig::default()).unwrap()).collect())
}

struct Tp3Run {
    recs: Vec<StepRecord>,
    cumulative_uptake: f64,
    tips_outside: usize,
    error: Option<String>,
}

fn tp3_run() -> &'static Tp3Run {
    static R: OnceLock<Tp3Run> = OnceLock::new();
    R.get_or_init(|| {
        let mut cfg = ScenarioConfig::tp3(20.0);
        cfg.solver.shadow_plain = true;
        let mut run = Tp3Run { recs: Vec::new(), cumulative_uptake: 0.0, tips_outside: 0, error: None };
        let mut sim = match Simulation::new(cfg) {
            Ok(s) => s,
            Err(e) => {
                run.error = Some(e.to_string());
                return run;
            }
        };
        while !sim.done() {
            match sim.advance() {
                Ok(r) => run.recs.push(r),
                Err(e) => {
                    run.error = Some(e.to_string());
                    break;
                }
            }
            let tips = sim.growth.as_ref().map(|g| g.tips()).unwrap_or_default();
            run.tips_outside += tips.iter().filter(|&&n| !sim.inside(&sim.net.nodes[n])).count();
        }
        run.cumulative_uptake = sim.cumulative_uptake;
        run
    })
}

#[test]
fn criterion_01_tp1_convergence_rates() {
    let levels = tp1_levels();
    let table = tp1::eoc_table(levels);
    let last = table.last().unwrap();
    let ranges = [(1.75, 2.25), (0.8, 1.2), (1.75, 2.25), (1.75, 2.25), (1.75, 2.25), (1.75, 2.25)];
    let ok = (0..6).all(|k| last[k] >= ranges[k].0 && last[k] <= ranges[k].1);
    let hs: Vec<String> = levels.iter().map(|l| format!("{:.3}", l.h)).collect();
    let e: Vec<String> = (0..6).map(|k| format!("{}={:.3}", tp1::ERROR_NAMES[k], last[k])).collect();
    report(1, ok, &format!("h = [{}], last-pair EOC {}", hs.join(", "), e.join(" ")));
}

#[test]
fn criterion_02_tp1_picard_and_cg_pattern() {
    let fine = tp1_levels().last().unwrap();
    let nonincreasing = fine.cg.windows(2).all(|w| w[1] <= w[0]);
    let ok = fine.picard <= 12 && nonincreasing && fine.cg.last() == Some(&0);
    report(2, ok, &format!("finest mesh: {} Picard iterations, CG per iteration {:?}", fine.picard, fine.cg));
}

/// Restriction of a sparse matrix to the listed rows and columns, dense.
fn dense_block(a: &Csr, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a.get(rows[i], cols[j]))
}

#[test]
fn criterion_03_reduced_operator_oracle() {
    let mesh = build_hex_grid([0.0; 3], [1.0; 3], [1, 1, 1]).unwrap();
    let vem = Vem::new(&mesh).unwrap();
    let model = SoilModel::VanGenuchten(VanGenuchten::tp2());
    let dofs = DofMap::new(vem.ndof, &[]);
    let mut net = RootNetwork::new(Vec3::new(0.5, 0.5, 0.9), 0.05);
    let tip = net.add_node(Vec3::new(0.45, 0.55, 0.15));
    net.add_segment(0, tip, 0, 0.0, 0).unwrap();
    let p = XylemParams {
        radius: 0.05,
        kappa: Kappa::Constant { value: 0.18 },
        lp: Conductance::Constant { value: 0.05 },
        gravity: true,
        collar: EndCondition::Flux { value: 0.2 },
        tips: EndCondition::Flux { value: 0.0 },
    };
    let mut itf = Interface::new(Refinement { state: 4.0, control: 3.0 });
    let ops = itf.assemble(&mesh, &vem, &net, &p, 1.0, None).unwrap();
    let n = 2 * ops.nctrl();
    let xyl = XylemSystem::assemble(&net, &ops.state_counts, &p, 1.0, None).unwrap();
    let psi: Vec<f64> = mesh.vertices.iter().map(|x| -20.0 - 5.0 * x.z).collect();
    let sop = vem.assemble(&model, &psi, true).unwrap();
    let dt = 0.5;
    let astar = Csr::lin_comb(1.0, &Csr::lin_comb(1.0, &sop.a, 1.0 / dt, &sop.c), 1.0, &ops.m_lp);
    let chol = Cholesky::new(&dofs.free_block(&astar)).unwrap();
    let fr = Frozen {
        dofs: &dofs,
        chol: &chol,
        rhs3: vec![0.0; dofs.nfree()],
        base3: vec![0.0; vem.ndof],
        xyl: &xyl,
        ops: &ops,
    };

    // Matrix-free: one application per unit vector.
    let mut mf = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = fr.apply(&e);
        for i in 0..n {
            mf[(i, j)] = col[i];
        }
    }

    // Explicit blocks with dense inverses.
    let soil_all: Vec<usize> = (0..vem.ndof).collect();
    let ctrl: Vec<usize> = (0..ops.nctrl()).collect();
    let ainv = astar.to_dense().try_inverse().unwrap();
    let d = dense_block(&ops.d, &soil_all, &ctrl);
    let d_lp = dense_block(&ops.d_lp, &soil_all, &ctrl);
    let m = ops.m.to_dense();
    let g = ops.g.to_dense();
    let vfree: Vec<usize> = (0..xyl.vel.ndof).filter(|&i| xyl.is_free(i)).collect();
    let pres: Vec<usize> = (0..xyl.np()).collect();
    let (nf, np) = (vfree.len(), pres.len());
    let af = dense_block(&xyl.a, &vfree, &vfree);
    let bf = dense_block(&xyl.b, &pres, &vfree);
    let mlp = xyl.m_lp.to_dense();
    let mut w = DMatrix::zeros(nf + np, nf + np);
    w.view_mut((0, 0), (nf, nf)).copy_from(&af);
    w.view_mut((0, nf), (nf, np)).copy_from(&bf.transpose());
    w.view_mut((nf, 0), (np, nf)).copy_from(&bf);
    w.view_mut((nf, nf), (np, np)).copy_from(&(-&mlp));
    let winv = w.try_inverse().unwrap();
    let q = winv.view((nf, nf), (np, np)).into_owned();
    let dh = dense_block(&ops.dh, &pres, &ctrl);
    let dh_lp = dense_block(&ops.dh_lp, &pres, &ctrl);
    let mh = xyl.m.to_dense();
    // Pressure response to Φ_σ and soil response to Φ_χ.
    let x = -&q * &dh_lp;
    let s = &ainv * &d_lp;
    let mss = &g + x.transpose() * &mh * &x;
    let msc = -(d.transpose() * &s) - x.transpose() * &dh;
    let mcc = &g + s.transpose() * &m * &s;
    let nc = ops.nctrl();
    let mut ex = DMatrix::zeros(n, n);
    ex.view_mut((0, 0), (nc, nc)).copy_from(&mss);
    ex.view_mut((0, nc), (nc, nc)).copy_from(&msc);
    ex.view_mut((nc, 0), (nc, nc)).copy_from(&msc.transpose());
    ex.view_mut((nc, nc), (nc, nc)).copy_from(&mcc);

    let scale = mf.abs().max();
    let asym = (&mf - mf.transpose()).abs().max() / scale;
    let diff = (&mf - &ex).abs().max() / scale;
    let sym = (&mf + mf.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min() / scale;
    let ok = n <= 8 && asym < 1e-10 && min_eig > -1e-10 && diff < 1e-8;
    report(
        3,
        ok,
        &format!("{n} control DOFs: asymmetry {asym:.2e}, min eigenvalue {min_eig:.2e}, max entry mismatch {diff:.2e} (relative to max |M| = {scale:.3e})"),
    );
}

/// Least-squares slope of log y against log x.
fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = pts.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn criterion_04_preconditioner_study() {
    let run = tp3_run();
    assert!(run.error.is_none(), "growing-network run failed: {:?}", run.error);
    let rows: Vec<_> = run.recs.iter().map(|r| &r.log).filter(|l| l.control_dofs > 0).collect();
    let (lo, hi) = (rows.first().unwrap().control_dofs, rows.last().unwrap().control_dofs);
    let plain: Vec<(f64, f64)> = rows.iter().map(|l| (l.control_dofs as f64, l.cg_plain.unwrap() as f64)).collect();
    let slope = loglog_slope(&plain);
    let n = plain.len();
    let last_slope = loglog_slope(&plain[n - 2..]);
    let pre_max = rows.iter().map(|l| l.cg_first).max().unwrap();
    let span = hi as f64 / lo as f64;
    let table: Vec<String> =
        rows.iter().step_by(4).map(|l| format!("{}:{}/{}", l.control_dofs, l.cg_plain.unwrap(), l.cg_first)).collect();
    let ok = span >= 10.0 && pre_max <= 20 && slope > 1.0;
    report(
        4,
        ok,
        &format!(
            "DOFs {lo} -> {hi} ({span:.0}x); preconditioned max {pre_max}; plain log-log slope {slope:.2} (last interval {last_slope:.2}); dofs:plain/prec {}",
            table.join(" ")
        ),
    );
}

fn patch_error(mesh: &PolyMesh) -> f64 {
    let vem = Vem::new(mesh).unwrap();
    let ops = vem.assemble_with(&vec![1.0; mesh.num_cells()], &vec![0.0; mesh.num_cells()], false).unwrap();
    let dm = DofMap::new(vem.ndof, &mesh.tagged_vertices(&BoundaryTag::ALL));
    let u = |x: &Vec3| 0.3 - x.x + 2.0 * x.y + 0.7 * x.z;
    let exact: Vec<f64> = mesh.vertices.iter().map(u).collect();
    let rhs: Vec<f64> = dm.lifting(&ops.a, &exact).iter().map(|v| -v).collect();
    let xf = Cholesky::new(&dm.free_block(&ops.a)).unwrap().solve(&rhs);
    let sol = dm.expand(&xf, &exact);
    sol.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_05_vem_patch_test() {
    let hex = build_structured_hex([0.0; 3], [1.0; 3], 0.2).unwrap();
    let carved = carve_spheres(&hex, &[Sphere { center: [0.45, 0.55, 0.5], radius: 0.27, meridians: 8, parallels: 6 }]).unwrap();
    let two = carve_spheres(
        &hex,
        &[
            Sphere { center: [0.27, 0.28, 0.3], radius: 0.15, meridians: 10, parallels: 7 },
            Sphere { center: [0.72, 0.7, 0.68], radius: 0.17, meridians: 8, parallels: 6 },
        ],
    )
    .unwrap();
    let errs = [patch_error(&hex), patch_error(&carved), patch_error(&two)];
    let ok = errs.iter().all(|&e| e < 1e-10);
    report(5, ok, &format!("max vertex error hex {:.2e}, one stone {:.2e}, two stones {:.2e}", errs[0], errs[1], errs[2]));
}

#[test]
fn criterion_06_junction_conservation() {
    let mut net = RootNetwork::new(Vec3::new(0.0, 0.0, 0.0), 0.05);
    let a = net.add_node(Vec3::new(0.0, 0.0, -1.0));
    let b = net.add_node(Vec3::new(0.0, 0.0, -2.0));
    let c = net.add_node(Vec3::new(0.7, 0.0, -1.5));
    let d = net.add_node(Vec3::new(-0.5, 0.4, -1.6));
    let e = net.add_node(Vec3::new(-0.4, 0.9, -2.1));
    net.add_segment(0, a, 0, 0.0, 0).unwrap();
    net.add_segment(a, b, 0, 0.0, 0).unwrap();
    net.add_segment(a, c, 1, 0.0, 1).unwrap();
    net.add_segment(a, d, 1, 0.0, 2).unwrap();
    net.add_segment(d, e, 1, 0.0, 2).unwrap();
    let p = XylemParams {
        radius: 0.05,
        kappa: Kappa::Constant { value: 0.18 },
        lp: Conductance::Constant { value: 1.36e-6 },
        gravity: true,
        collar: EndCondition::Flux { value: 0.2 },
        tips: EndCondition::Flux { value: 0.0 },
    };
    let sys = XylemSystem::assemble(&net, &[3, 2, 4, 1, 2], &p, 0.0, None).unwrap();
    let adj = net.adjacency();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst, mut checked) = (0.0_f64, 0);
    for _ in 0..1000 {
        let u: Vec<f64> = (0..sys.vel.ndof).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (node, inc) in adj.iter().enumerate() {
            if inc.len() < 2 {
                continue;
            }
            let mut sum = 0.0;
            for &s in inc {
                let loc = sys.vel.local(s, &u);
                sum += if net.segs[s].b == node { loc[loc.len() - 1] } else { -loc[0] };
            }
            worst = worst.max(sum.abs());
            checked += 1;
        }
    }
    report(6, worst <= 1e-14, &format!("{checked} junction balances over 1000 random velocity vectors, max |net flux| {worst:.2e}"));
}

#[test]
fn criterion_07_constitutive_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    for vg in [VanGenuchten::tp2(), VanGenuchten::tp3()] {
        for _ in 0..100 {
            let psi = -(10f64).powf(rng.random_range(-2.0..4.0));
            // Five-point stencil; theta sits within 1e-10 of theta_s near
            // saturation, so small steps drown in round-off.
            let h = 1e-2 * psi.abs();
            let t = |x: f64| vg.theta(x);
            let fd = (t(psi - 2.0 * h) - 8.0 * t(psi - h) + 8.0 * t(psi + h) - t(psi + 2.0 * h)) / (12.0 * h);
            worst = worst.max((vg.capacity(psi) - fd).abs() / fd.abs());
        }
    }
    let t = ImpedanceThresholds::tp3();
    let from_params = GrowthParams::tp3().psi_impedance;
    let brk = [(1.0, 0.0), (510.0, 1.0), (920.0, 1.0), (1.6e4, 0.0)];
    let mut imp_ok = from_params == Some(t);
    let mut jump = 0.0_f64;
    for (b, v) in brk {
        imp_ok &= t.imp_psi(-b) == v;
        for eps in [1e-9, -1e-9] {
            jump = jump.max((t.imp_psi(-b * (1.0 + eps)) - v).abs());
        }
    }
    // Linear ramps between the breakpoints.
    imp_ok &= (t.imp_psi(-(1.0 + 510.0) / 2.0) - 0.5).abs() < 1e-14;
    imp_ok &= (t.imp_psi(-(920.0 + 1.6e4) / 2.0) - 0.5).abs() < 1e-14;
    let ok = worst < 1e-5 && imp_ok && jump < 1e-6;
    report(
        7,
        ok,
        &format!("capacity vs finite difference max rel. error {worst:.2e} (200 points); Imp breakpoints 1/510/920/1.6e4 cm, max jump {jump:.2e}"),
    );
}

fn total_length(net: &RootNetwork) -> f64 {
    (0..net.segs.len()).map(|s| net.length(s)).sum()
}

/// Runs `steps` growth intervals of the TP2 scenario, checking invariants on the way.
fn tp2_checked(seed: u64, steps: usize) -> (Simulation, Vec<String>, f64) {
    let mut cfg = ScenarioConfig::tp2();
    cfg.rng_seed = seed;
    let mut sim = Simulation::new(cfg).unwrap();
    let mut problems = Vec::new();
    let mut speed = 0.0_f64;
    for _ in 0..steps {
        let (nodes, len, nseg) = (sim.net.nodes.clone(), total_length(&sim.net), sim.net.segs.len());
        let r = sim.advance().unwrap();
        speed = speed.max(r.growth.speed_error);
        if sim.net.nodes.len() < nodes.len() || sim.net.nodes[..nodes.len()] != nodes[..] {
            problems.push(format!("step {}: existing nodes moved", r.log.step));
        }
        if sim.net.segs.len() < nseg || total_length(&sim.net) < len - 1e-12 {
            problems.push(format!("step {}: network shrank", r.log.step));
        }
        for t in sim.growth.as_ref().unwrap().tips() {
            if !sim.inside(&sim.net.nodes[t]) {
                problems.push(format!("step {}: tip {t} outside the soil", r.log.step));
            }
        }
    }
    (sim, problems, speed)
}

#[test]
fn criterion_08_growth_invariants() {
    let steps = 15;
    let (a, pa, sa) = tp2_checked(1, steps);
    let (b, pb, sb) = tp2_checked(1, steps);
    let (c, pc, sc) = tp2_checked(2, steps);
    let same = a.net == b.net
        && a.growth == b.growth
        && a.psi.iter().zip(&b.psi).all(|(x, y)| x.to_bits() == y.to_bits());
    let differs = a.net != c.net;
    let speed = sa.max(sb).max(sc);
    let problems: Vec<String> = pa.into_iter().chain(pb).chain(pc).collect();

    // Emergence draws at order 0 through the engine.
    let mut gp = GrowthParams::tp2();
    gp.seed.max_roots = 4000;
    gp.seed.first_certain = false;
    let omega_max = gp.omega_max();
    let p0 = p_br(gp.bc, omega_max, 0);
    let (mut net, seed) = mesocotyl(Vec3::new(0.0, 0.0, -0.1), 0.0, 0.05).unwrap();
    let mut g = Growth::new(gp, seed, 11).unwrap();
    let soil = |_: &Vec3| Ok(TipSoil::wet());
    let inside = |_: &Vec3| true;
    let repulsion = |_: &Vec3| Ok((0.0, Vec3::zeros()));
    let env = Environment { soil: &soil, inside: &inside, repulsion: &repulsion, curves: None };
    let rep = g.step(&mut net, &env, 0.0, 0.2).unwrap();
    let n = 4000.0;
    let sigma = (n * p0 * (1.0 - p0)).sqrt();
    let dev = (rep.emerged as f64 - n * p0).abs() / sigma;

    let ok = same && differs && speed <= 1e-12 && problems.is_empty() && dev <= 3.0 && (p0 - 0.6652).abs() < 5e-5 && omega_max == 2;
    report(
        8,
        ok,
        &format!(
            "3 TP2 runs x {steps} steps: {} segments (seed 1), reproducible {same}, seed-sensitive {differs}, max |‖W‖-V| {speed:.1e}, violations {}; p_br(0) = {p0:.4}, {} of 4000 draws fired ({dev:.2} sigma)",
            a.net.segs.len(),
            problems.len(),
            rep.emerged
        ),
    );
}

#[test]
fn criterion_09_mass_balance() {
    let mut sim = Simulation::new(ScenarioConfig::steady_root()).unwrap();
    let recs = sim.run(None).unwrap();
    let r = &recs.last().unwrap().log;
    let t = 0.2;
    let rel = (r.uptake - t).abs() / t;
    report(9, rel < 0.01, &format!("total uptake {:.10} vs transpiration {t} (rel. error {rel:.2e}), collar flux {:.6}", r.uptake, r.collar_flux));
}

#[test]
fn criterion_10_scaled_stony_soil_run() {
    let run = tp3_run();
    let last = run.recs.last().map(|r| r.log.clone());
    let ok = run.error.is_none() && run.recs.len() == 20 && run.cumulative_uptake >= 0.0 && run.tips_outside == 0;
    report(
        10,
        ok,
        &format!(
            "{} of 20 days solved{}; cumulative uptake {:.4} cm³; tips outside soil or inside stones: {}; final network {} segments, {} tips",
            run.recs.len(),
            run.error.as_ref().map(|e| format!(" (error: {e})")).unwrap_or_default(),
            run.cumulative_uptake,
            run.tips_outside,
            last.as_ref().map_or(0, |l| l.segments),
            last.as_ref().map_or(0, |l| l.tips)
        ),
    );
}
