use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rhizoflow::scenario::{Checkpoint, ScenarioConfig, Simulation};
use rhizoflow::solver::SolverConfig;
use rhizoflow::{io, tp1, Error, Result};

#[derive(Parser)]
#[command(name = "rhizoflow", version, about = "Coupled soil and root water flow with root growth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario described by a TOML file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the random seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Convergence study on the manufactured benchmark.
    Converge {
        #[arg(long, value_enum)]
        case: Case,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the mesh of a scenario and write it for inspection.
    Mesh {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a built-in scenario as TOML.
    Preset {
        #[arg(value_enum)]
        name: Preset,
        /// Simulated days for the stony-soil scenario.
        #[arg(long, default_value_t = 20.0)]
        days: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Case {
    Tp1,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Tp2,
    Tp3,
    SteadyRoot,
}

/// 2 for bad input, 3 for anything that went wrong while solving.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Param(_) | Error::Mesh(_) => 2,
        _ => 3,
    }
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>, resume: Option<&Path>) -> Result<()> {
    let mut cfg = ScenarioConfig::load(config)?;
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let mut sim = match resume {
        Some(p) => {
            let ck: Checkpoint = io::load_json(p)?;
            Simulation::restore(cfg, ck)?
        }
        None => Simulation::new(cfg)?,
    };
    let recs = sim.run(Some(out))?;
    let total: f64 = recs.iter().map(|r| r.log.uptake * sim.cfg.time.growth_step).sum();
    println!(
        "{} steps, {} segments, {} tips, uptake over run {:.6e} cm³",
        recs.len(),
        sim.net.segs.len(),
        recs.last().map_or(0, |r| r.log.tips),
        total
    );
    Ok(())
}

fn converge(levels: usize, out: &Path) -> Result<()> {
    if !(2..=tp1::LEVELS.len()).contains(&levels) {
        return Err(Error::Config(format!("levels must be between 2 and {}", tp1::LEVELS.len())));
    }
    fs::create_dir_all(out)?;
    let cfg = SolverConfig::default();
    let mut runs = Vec::new();
    for &n in &tp1::LEVELS[..levels] {
        let l = tp1::run_level(n, &cfg)?;
        log::info!("N = {n}: h = {:.3e}, Picard {}, CG {:?}", l.h, l.picard, l.cg);
        runs.push(l);
    }
    let table = tp1::eoc_table(&runs);
    let mut w = String::from("h");
    for name in tp1::ERROR_NAMES {
        w.push_str(&format!(",{name},eoc_{name}"));
    }
    w.push('\n');
    for (i, l) in runs.iter().enumerate() {
        w.push_str(&format!("{:.6e}", l.h));
        for k in 0..6 {
            let e = if i == 0 { String::new() } else { format!("{:.4}", table[i - 1][k]) };
            w.push_str(&format!(",{:.6e},{e}", l.errors[k]));
        }
        w.push('\n');
    }
    fs::write(out.join("eoc.csv"), &w)?;
    io::save_json(&out.join("levels.json"), &runs)?;
    print!("{w}");
    Ok(())
}

fn mesh(config: &Path, out: &Path) -> Result<()> {
    let cfg = ScenarioConfig::load(config)?;
    let m = cfg.mesh.build()?;
    if let Some(d) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d)?;
    }
    io::write_mesh(out, &m)?;
    println!("{} cells, {} vertices, volume {:.6e}", m.num_cells(), m.num_vertices(), m.total_volume());
    Ok(())
}

fn preset(name: Preset, days: f64) -> Result<()> {
    let cfg = match name {
        Preset::Tp2 => ScenarioConfig::tp2(),
        Preset::Tp3 => ScenarioConfig::tp3(days),
        Preset::SteadyRoot => ScenarioConfig::steady_root(),
    };
    print!("{}", cfg.to_toml()?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate { config, out, seed, resume } => simulate(config, out, *seed, resume.as_deref()),
        Command::Converge { case: Case::Tp1, levels, out } => converge(*levels, out),
        Command::Mesh { config, out } => mesh(config, out),
        Command::Preset { name, days } => preset(*name, *days),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
