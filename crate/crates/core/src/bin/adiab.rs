use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use adiab_core::boundstate::{track_family, write_family_csv, StationaryOptions};
use adiab_core::eigen::{track_branch, uniform_times};
use adiab_core::harness::{run_experiment, ExperimentConfig, SweepReport};

#[derive(Parser)]
#[command(
    name = "adiab",
    about = "Adiabatic approximation experiments for the scaled NLS"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every `*.toml` experiment in a directory.
    Suite {
        #[arg(long)]
        config_dir: PathBuf,
        /// Root for per-experiment output directories.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Track the configured eigenbranch and print energies and gaps.
    Eig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue the bound-state family of mass `sqrt(eps)` for each configured `eps`.
    Boundstate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn summarize(report: &SweepReport) {
    println!("{} ({})", report.name, report.kind.name());
    for f in &report.fits {
        let target = match (f.window, f.min_slope) {
            (Some([lo, hi]), _) => format!("[{lo:.2}, {hi:.2}]"),
            (None, Some(m)) => format!(">= {m:.2}"),
            _ => "info".to_string(),
        };
        let verdict = if f.informational {
            "info"
        } else if f.pass {
            "PASS"
        } else {
            "FAIL"
        };
        println!(
            "  slope {:<16} {:>7.3}  {:<14} {verdict}",
            f.metric, f.fit.slope, target
        );
    }
    for c in &report.checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        println!(
            "  check {:<16} {:>10.4e} (threshold {:.3e}) {verdict}",
            c.name, c.value, c.threshold
        );
    }
    match report.eps0 {
        Some(e) => println!("  empirical eps0 = {e}"),
        None => println!("  no eps satisfied every invariant"),
    }
    for w in &report.warnings {
        println!("  warning: {w}");
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config, out)?;
            let report =
                run_experiment(&cfg).with_context(|| format!("running {}", config.display()))?;
            summarize(&report);
            Ok(report.pass)
        }
        Command::Suite { config_dir, out } => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&config_dir)
                .with_context(|| format!("reading {}", config_dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "toml"))
                .collect();
            paths.sort();
            let mut all = true;
            for p in paths {
                let mut cfg = load(&p, None)?;
                if let Some(root) = &out {
                    cfg.output_dir = root.join(cfg.name());
                }
                let report =
                    run_experiment(&cfg).with_context(|| format!("running {}", p.display()))?;
                summarize(&report);
                all &= report.pass;
            }
            Ok(all)
        }
        Command::Eig { config, out } => {
            let cfg = load(&config, out)?;
            cfg.validate()?;
            let grid = cfg.grid()?;
            let [t0, t1] = cfg.interval();
            let times = uniform_times(t0, t1, cfg.mesh.intervals);
            let branch = track_branch(&cfg.potential, &grid, &times, cfg.which, cfg.gauge)?;
            println!("{:>10} {:>18} {:>12}", "t", "E", "gap");
            let stride = (branch.len() / 20).max(1);
            for i in (0..branch.len()).step_by(stride) {
                println!(
                    "{:>10.4} {:>18.12} {:>12.6}",
                    branch.times()[i],
                    branch.energy(i),
                    branch.gaps()[i]
                );
            }
            println!("min gap {:.6}", branch.min_gap());
            std::fs::create_dir_all(&cfg.output_dir)?;
            branch.write_csv(&cfg.output_dir.join("branch.csv"))?;
            Ok(true)
        }
        Command::Boundstate { config, out } => {
            let cfg = load(&config, out)?;
            cfg.validate()?;
            let grid = cfg.grid()?;
            let [t0, t1] = cfg.interval();
            let times = uniform_times(t0, t1, cfg.mesh.intervals);
            let branch = track_branch(&cfg.potential, &grid, &times, cfg.which, cfg.gauge)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            for &eps in &cfg.epsilons {
                let mut opts = StationaryOptions::new(cfg.lambda, cfg.sigma, eps.sqrt());
                opts.max_mass = cfg.boundstate.max_mass;
                let family = track_family(&branch, &opts)
                    .with_context(|| format!("family at eps = {eps}"))?;
                let mean =
                    family.iter().map(|s| s.e_star - s.energy).sum::<f64>() / family.len() as f64;
                let worst = family.iter().map(|s| s.residual).fold(0.0, f64::max);
                println!(
                    "eps {eps:<8} mass {:.6}  mean E*-E {mean:.6e}  max residual {worst:.2e}",
                    eps.sqrt()
                );
                write_family_csv(
                    &family,
                    &cfg.output_dir.join(format!("family_eps_{eps}.csv")),
                )?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
