use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qdm_core::error::Error;
use qdm_core::sim::experiments::{sigma_check, simulate};
use qdm_core::sim::{
    emit, presets, run_oscillation, run_stp_surface, run_verify, write_json, ExperimentConfig, Format, VerifySettings,
};

#[derive(Parser)]
#[command(name = "qdm", version, about = "Lindbladian decision maker under stochastic Lyapunov feedback")]
struct Cli {
    /// Use composed single-step channels instead of the T-step Kraus set.
    #[arg(long, global = true)]
    substep: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; the built-in preset is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop runs from a configuration file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Two states, four actions, phi1 = 0.8.
    Example1 {
        #[command(flatten)]
        common: Common,
        /// Draw the interval uniformly from {5, 10, 15}.
        #[arg(long)]
        random_t: bool,
    },
    /// Two states, two actions, phi1 = 0.25.
    Example2 {
        #[command(flatten)]
        common: Common,
    },
    /// Steady-state action probabilities over the phi3 sweep; writes stp.csv.
    StpSurface {
        #[command(flatten)]
        common: Common,
    },
    /// Uncontrolled evolution of the action probabilities; writes oscillation.csv.
    Oscillate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        phi1: f64,
    },
    /// Builds the Lyapunov weights for round zero and classifies u = 0.
    SigmaCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Drift and convergence checks; writes verify.json.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = VerifySettings::default().paths)]
        paths: usize,
        #[arg(long, default_value_t = VerifySettings::default().horizon)]
        horizon: usize,
        #[arg(long, default_value_t = VerifySettings::default().replications)]
        replications: usize,
    },
}

fn load(
    config: &Option<PathBuf>,
    preset: impl FnOnce() -> ExperimentConfig,
    substep: bool,
) -> Result<ExperimentConfig, Error> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => preset(),
    };
    cfg.substep |= substep;
    Ok(cfg)
}

fn seeds(cfg: &ExperimentConfig, seed: Option<u64>) -> Vec<u64> {
    seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s])
}

fn first_seed(cfg: &ExperimentConfig, seed: Option<u64>) -> u64 {
    seed.or_else(|| cfg.seeds.first().copied()).unwrap_or(0)
}

fn mkdir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })
}

fn run_sim(cfg: &ExperimentConfig, seed: Option<u64>, out: &Path) -> Result<(), Error> {
    let header = simulate(cfg, &seeds(cfg, seed), out)?;
    println!("{} of {} seeds converged; wrote {}", header.converged, header.seeds.len(), out.display());
    for r in &header.runs {
        match r.converged_round {
            Some(k) => println!("seed {}: target {} converged at round {k}", r.seed, r.target),
            None => println!("seed {}: target {} not converged", r.seed, r.target),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let sub = cli.substep;
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let cfg = load(&Some(config), presets::example1, sub)?;
            run_sim(&cfg, seed, &out)
        }
        Command::Example1 { common, random_t } => {
            let preset = if random_t { presets::example1_random_t } else { presets::example1 };
            let cfg = load(&common.config, preset, sub)?;
            run_sim(&cfg, common.seed, &common.out)
        }
        Command::Example2 { common } => {
            let cfg = load(&common.config, presets::example2, sub)?;
            run_sim(&cfg, common.seed, &common.out)
        }
        Command::StpSurface { common } => {
            let cfg = load(&common.config, presets::stp_surface, sub)?;
            mkdir(&common.out)?;
            let seed = first_seed(&cfg, common.seed);
            let recs = run_stp_surface(&cfg, seed)?;
            let path = common.out.join("stp.csv");
            emit(&recs, 0, &path, Format::Csv)?;
            let violated: Vec<f64> = recs.iter().filter(|r| r.violated).map(|r| r.phi3).collect();
            println!("seed {seed}: {} of {} grid points violate; wrote {}", violated.len(), recs.len(), path.display());
            Ok(())
        }
        Command::Oscillate { common, phi1 } => {
            let cfg = load(&common.config, || presets::oscillation(phi1), sub)?;
            mkdir(&common.out)?;
            let run = run_oscillation(&cfg, first_seed(&cfg, common.seed))?;
            let path = common.out.join("oscillation.csv");
            emit(&run.samples, cfg.m, &path, Format::Csv)?;
            println!(
                "u = {}, phi3 = {}; derivative sign changes {:?} (after transient {:?}); wrote {}",
                run.u,
                run.phi3,
                run.sign_changes,
                run.sign_changes_after_transient,
                path.display()
            );
            Ok(())
        }
        Command::SigmaCheck { common } => {
            let cfg = load(&common.config, presets::example1, sub)?;
            mkdir(&common.out)?;
            let check = sigma_check(&cfg, first_seed(&cfg, common.seed))?;
            let path = common.out.join("sigma.json");
            write_json(&check, &path)?;
            println!("target {}: sigma {:?}, epsilon {}", check.target, check.weights.sigma, check.weights.epsilon);
            if let Some(e) = &check.strict_solve {
                println!("single-class solve: {e}");
            }
            println!("wrote {}", path.display());
            if check.report.passed {
                Ok(())
            } else {
                Err(Error::Sigma(format!("u = 0 misclassified for target {}", check.target)))
            }
        }
        Command::Verify { common, paths, horizon, replications } => {
            let cfg = load(&common.config, presets::example1_random_t, sub)?;
            mkdir(&common.out)?;
            let report =
                run_verify(&cfg, first_seed(&cfg, common.seed), VerifySettings { paths, horizon, replications });
            let path = common.out.join("verify.json");
            write_json(&report, &path)?;
            for s in &report.systems {
                println!(
                    "{}: drift {} ({} one-step, {} T-step violations of {}), convergence {:.3} vs bound {:.3}",
                    s.drift.system,
                    if s.drift_passed { "pass" } else { "fail" },
                    s.drift.onestep_violations,
                    s.drift.tstep_violations,
                    s.drift.anchors,
                    s.convergence.empirical,
                    s.convergence.bound
                );
            }
            for f in &report.failures {
                println!("{f}");
            }
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Sigma(_) | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
