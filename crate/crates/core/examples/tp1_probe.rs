use rhizoflow::solver::SolverConfig;
use rhizoflow::tp1;

fn main() {
    let cfg = SolverConfig::default();
    let mut levels = Vec::new();
    for n in tp1::LEVELS {
        let t = std::time::Instant::now();
        let l = tp1::run_level(n, &cfg).unwrap();
        println!("N={n} h={:.3} err={:?} picard={} cg={:?} J={:e} ({:.1}s)", l.h, l.errors, l.picard, l.cg, l.cost, t.elapsed().as_secs_f64());
        levels.push(l);
    }
    for r in tp1::eoc_table(&levels) {
        println!("{r:?}");
    }
}
