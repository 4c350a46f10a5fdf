//! The uncontrolled and verification experiments, and seed sweeps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nalgebra::DVector;

use super::closed_loop::{
    averaged_r, design_weights, drift_tolerance, run_closed_loop, select_target, sense, validation_grid, ClosedLoopRun,
    RunSummary,
};
use super::config::ExperimentConfig;
use super::emit::{emit, write_json, Format};
use super::rng::{stream, Stream};
use crate::controller::sigma::strongly_connected;
use crate::controller::{
    solve_sigma, solve_sigma_blockwise, validate_sigma, ControlContext, SigmaReport, SigmaWeights,
};
use crate::error::{Error, Result};
use crate::lindblad_model::{phi3_of, steady_state, ControlInput, Integrator, Model, Posterior};
use crate::lyapunov_verifier::{
    convergence_probability, estimate_drift, halving_system, random_walk_system, wrap_decision_system,
    ConvergenceReport, DriftReport, SystemUnderTest,
};
use crate::quantum_core::{Basis, ComplexMatrix};
use crate::sensor::sample_state;
use crate::tolerances;

/// Runs every seed of a sweep in parallel; results are ordered by seed.
pub fn run_sweep(cfg: &ExperimentConfig, seeds: &[u64]) -> Vec<(u64, Result<ClosedLoopRun>)> {
    let mut out: Vec<_> = seeds.par_iter().map(|&s| (s, run_closed_loop(cfg, s))).collect();
    out.sort_by_key(|(s, _)| *s);
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationHeader {
    pub n: usize,
    pub m: usize,
    pub phi1: f64,
    pub phi2: f64,
    pub seeds: Vec<u64>,
    pub converged: usize,
    pub runs: Vec<RunSummary>,
    pub failures: Vec<String>,
}

/// Writes `trajectory.csv` and `summary.json` for a sweep. Failed seeds are
/// listed in the summary; the first failure is returned after the files are written.
pub fn simulate(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<SimulationHeader> {
    std::fs::create_dir_all(out).map_err(|source| Error::Io { path: out.display().to_string(), source })?;
    let results = run_sweep(cfg, seeds);
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut first_err = None;
    for (seed, r) in results {
        match r {
            Ok(run) => {
                rows.extend(run.rows);
                runs.push(run.summary);
            }
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                first_err.get_or_insert(e);
            }
        }
    }
    emit(&rows, cfg.m, &out.join("trajectory.csv"), Format::Csv)?;
    let header = SimulationHeader {
        n: cfg.n,
        m: cfg.m,
        phi1: cfg.phi1,
        phi2: cfg.phi2,
        seeds: seeds.to_vec(),
        converged: runs.iter().filter(|r| r.converged_round.is_some()).count(),
        runs,
        failures,
    };
    write_json(&header, &out.join("summary.json"))?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(header),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StpRecord {
    pub phi1: f64,
    pub phi3: f64,
    pub p_e1: f64,
    pub p_e2: f64,
    pub p_gamma: f64,
    pub violated: bool,
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

fn action_marginals(basis: &Basis, rho: &ComplexMatrix) -> Vec<f64> {
    let mut p = vec![0.0; basis.m];
    for r in 0..basis.dim() {
        p[basis.action_of(r)] += rho[(r, r)].re;
    }
    p
}

fn with_phi1(cfg: &ExperimentConfig, seed: u64, phi1: f64) -> Result<Model> {
    let mut params = cfg.params_for_seed(seed)?;
    params.phi1 = phi1;
    Model::new(params)
}

/// Steady-state probability of the second action under `e_1`, `e_2` and `Gamma`
/// over the `phi1 x phi3` grid, with `phi3` overridden and the control held at
/// `coupling` (zero when unset).
pub fn run_stp_surface(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<StpRecord>> {
    if cfg.n != 2 || cfg.m < 2 {
        return Err(Error::Config("the STP surface needs n = 2 and m >= 2".into()));
    }
    let phi1s = cfg.phi1_grid.clone().unwrap_or_else(|| vec![cfg.phi1]);
    let phi3s = cfg.phi3_sweep.clone().unwrap_or_else(|| linspace(0.0, 1.0, 41));
    let gamma = Posterior::new(cfg.gamma.clone().unwrap_or_else(|| vec![0.5, 0.5]))?;
    let e1 = Posterior::one_hot(2, 0)?;
    let e2 = Posterior::one_hot(2, 1)?;
    let u = ControlInput::new(cfg.coupling.unwrap_or(0.0), cfg.u_bar)?;
    let grid: Vec<(f64, f64)> = phi1s.iter().flat_map(|&a| phi3s.iter().map(move |&b| (a, b))).collect();
    grid.par_iter()
        .map(|&(phi1, phi3)| {
            let model = with_phi1(cfg, seed, phi1)?;
            let p2 = |alpha: &Posterior| -> Result<f64> {
                let rho = steady_state(&model, alpha, u, Some(phi3))?;
                Ok(action_marginals(&model.basis, rho.mat())[1])
            };
            let (p_e1, p_e2, p_gamma) = (p2(&e1)?, p2(&e2)?, p2(&gamma)?);
            let violated =
                p_gamma < p_e1.min(p_e2) - tolerances::STP_MARGIN || p_gamma > p_e1.max(p_e2) + tolerances::STP_MARGIN;
            Ok(StpRecord { phi1, phi3, p_e1, p_e2, p_gamma, violated })
        })
        .collect()
}

/// Whether the flagged entries form one nonempty run.
pub fn contiguous_region(flags: &[bool]) -> bool {
    let first = flags.iter().position(|f| *f);
    let last = flags.iter().rposition(|f| *f);
    match (first, last) {
        (Some(a), Some(b)) => flags[a..=b].iter().all(|f| *f),
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationSample {
    pub t: f64,
    pub p_a: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OscillationRun {
    pub u: f64,
    pub phi3: f64,
    pub samples: Vec<OscillationSample>,
    /// Sign changes of the discrete derivative of each action probability over the whole series.
    pub sign_changes: Vec<usize>,
    /// The same count with the first 5% of the horizon dropped.
    pub sign_changes_after_transient: Vec<usize>,
}

/// Number of sign changes of the first difference, ignoring steps flatter than `flat`.
pub fn derivative_sign_changes(series: &[f64], flat: f64) -> usize {
    let mut last = 0.0f64;
    let mut changes = 0;
    for w in series.windows(2) {
        let d = w[1] - w[0];
        if d.abs() <= flat {
            continue;
        }
        if last != 0.0 && d.signum() != last {
            changes += 1;
        }
        last = d.signum();
    }
    changes
}

/// Integrates the master equation with no measurement at a fixed control and
/// records the action probabilities every ten Euler steps.
///
/// The control defaults to the one whose `u^(2l)` equals the configured `phi3`.
pub fn run_oscillation(cfg: &ExperimentConfig, seed: u64) -> Result<OscillationRun> {
    let model = cfg.model_for_seed(seed)?;
    let l = cfg.l;
    let u = match (cfg.coupling, cfg.phi3) {
        (Some(u), _) => u,
        (None, Some(p3)) => p3.powf(1.0 / (2 * l) as f64),
        (None, None) => 0.0,
    };
    let u = ControlInput::new(u, cfg.u_bar)?;
    let phi3 = cfg.phi3.unwrap_or_else(|| phi3_of(u.value(), l));
    let alpha = Posterior::new(cfg.nature()?.prior)?;
    let integ = Integrator::new(model.hamiltonian(u), model.cognitive(&alpha, u, Some(phi3))?, model.params.phi1);
    let dt = cfg.dt;
    let sub = (dt / integ.step).ceil().max(1.0) as usize;
    let integ = integ.with_step(dt / sub as f64);
    let horizon = cfg.horizon.unwrap_or(20.0);
    let euler_steps = (horizon / dt).round() as usize;
    let mut rho = cfg.rho0()?.into_mat();
    let mut samples = Vec::with_capacity(euler_steps / 10 + 1);
    for k in 0..=euler_steps {
        if k % 10 == 0 {
            let p_a = action_marginals(&model.basis, &rho);
            if p_a.iter().any(|p| !(-tolerances::FLOW_PROBABILITY..=1.0 + tolerances::FLOW_PROBABILITY).contains(p)) {
                return Err(Error::InvalidDensity(format!(
                    "action probabilities {p_a:?} left [0, 1] at t = {}",
                    k as f64 * dt
                )));
            }
            samples.push(OscillationSample { t: k as f64 * dt, p_a });
        }
        if k < euler_steps {
            for _ in 0..sub {
                rho = integ.advance(&rho)?;
            }
        }
    }
    let skip = (samples.len() as f64 * tolerances::OSC_TRANSIENT).ceil() as usize;
    let count = |from: usize| -> Vec<usize> {
        (0..model.basis.m)
            .map(|a| {
                let s: Vec<f64> = samples[from..].iter().map(|x| x.p_a[a]).collect();
                derivative_sign_changes(&s, tolerances::OSC_FLAT)
            })
            .collect()
    };
    Ok(OscillationRun {
        u: u.value(),
        phi3,
        sign_changes: count(0),
        sign_changes_after_transient: count(skip.min(samples.len())),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifySettings {
    pub paths: usize,
    pub horizon: usize,
    pub replications: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self { paths: 4, horizon: 40, replications: 16 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemReport {
    pub drift: DriftReport,
    pub convergence: ConvergenceReport,
    pub drift_passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub settings: VerifySettings,
    pub systems: Vec<SystemReport>,
    pub failures: Vec<String>,
}

fn report_for(sut: &SystemUnderTest, s: VerifySettings, seed: u64) -> Result<SystemReport> {
    let drift = estimate_drift(sut, s.paths, s.horizon, s.replications, seed)?;
    let convergence = convergence_probability(sut, s.paths.max(20), s.horizon, seed)?;
    Ok(SystemReport { drift_passed: drift.passed(), drift, convergence })
}

/// Control context and target after the round-zero observation of a run.
pub fn round_zero(cfg: &ExperimentConfig, seed: u64) -> Result<(ControlContext, usize)> {
    let model = cfg.model_for_seed(seed)?;
    let nature = cfg.nature()?;
    let mut rng = stream(seed, Stream::Nature);
    let s = sample_state(&nature, &mut rng);
    let (mut alpha, mut beta) = (nature.prior.clone(), nature.prior.clone());
    sense(&nature, s, &mut alpha, &mut beta, &mut rng)?;
    let mut ctx = ControlContext::new(model.clone(), Posterior::new(alpha)?, cfg.tdist()?);
    ctx.substep = cfg.substep;
    let n_bar = select_target(&model, &cfg.target, &ctx.alpha, &beta)?;
    Ok((ctx, n_bar))
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaCheck {
    pub seed: u64,
    pub target: usize,
    pub strongly_connected: bool,
    /// Error from the single-class solve, when it refuses.
    pub strict_solve: Option<String>,
    pub stochastic_defect: f64,
    /// `max_r |(R sigma)_r - lambda_r|`.
    pub residual: f64,
    pub weights: SigmaWeights,
    pub report: SigmaReport,
}

/// Builds `R` for the round-zero belief of a run, solves for the weights and classifies `u = 0`.
pub fn sigma_check(cfg: &ExperimentConfig, seed: u64) -> Result<SigmaCheck> {
    let (ctx, n_bar) = round_zero(cfg, seed)?;
    let r = averaged_r(&ctx)?;
    let weights = solve_sigma_blockwise(&r, n_bar)?;
    let report = validate_sigma(&weights, &ctx, &validation_grid())?;
    let rs = &r.mat * DVector::from_column_slice(&weights.sigma);
    let residual = rs.iter().zip(&weights.lambda).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(SigmaCheck {
        seed,
        target: n_bar,
        strongly_connected: strongly_connected(&r.mat),
        strict_solve: solve_sigma(&r, n_bar).err().map(|e| e.to_string()),
        stochastic_defect: r.stochastic_defect(),
        residual,
        weights,
        report,
    })
}

/// The closed-loop system of `cfg` after round-zero sensing and weight design.
pub fn decision_system(cfg: &ExperimentConfig, seed: u64) -> Result<SystemUnderTest> {
    let (ctx, n_bar) = round_zero(cfg, seed)?;
    let (w, report) = design_weights(&ctx, n_bar)?;
    if !report.passed {
        return Err(Error::Sigma(format!("seed {seed}: weights for target {n_bar} failed validation")));
    }
    let tol = drift_tolerance(&ctx);
    Ok(wrap_decision_system(ctx, w, &cfg.rho0()?, cfg.grid_points, tol))
}

/// Drift and convergence reports for the halving system, the random-walk
/// control and the decision system of `cfg`. Failures are recorded, not raised.
pub fn run_verify(cfg: &ExperimentConfig, seed: u64, settings: VerifySettings) -> VerifyReport {
    let mut systems = Vec::new();
    let mut failures = Vec::new();
    let candidates: Vec<Result<SystemUnderTest>> = vec![
        Ok(halving_system(vec![1.0, -2.0, 0.5], f64::INFINITY)),
        Ok(random_walk_system(vec![0.0])),
        decision_system(cfg, seed),
    ];
    for c in candidates {
        match c.and_then(|sut| report_for(&sut, settings, seed).map(|r| (sut.name.clone(), r))) {
            Ok((name, r)) => {
                if !r.drift_passed {
                    failures.push(format!("{name}: drift check failed"));
                }
                systems.push(r);
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    VerifyReport { seed, settings, systems, failures }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: &str = r#"{"n": 2, "m": 2, "phi1": 0.2857, "phi2": 10, "zeta": "uniform_random(lo=0, hi=10, seed)",
        "t_law": 10, "rounds": 5, "seeds": [0]}"#;

    #[test]
    fn sign_changes() {
        assert_eq!(derivative_sign_changes(&[0.0, 1.0, 2.0, 1.0, 0.0, 1.0], 0.0), 2);
        assert_eq!(derivative_sign_changes(&[0.0, 1.0, 1.0, 2.0], 0.0), 0);
        assert_eq!(derivative_sign_changes(&[1.0, 1.0, 1.0], 0.0), 0);
    }

    #[test]
    fn contiguity() {
        assert!(contiguous_region(&[false, true, true, false]));
        assert!(!contiguous_region(&[true, false, true]));
        assert!(!contiguous_region(&[false, false]));
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(0.0, 1.0, 41);
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[40], 1.0);
        assert!((g[1] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn stp_row_count_and_decoupled_case() {
        let mut cfg = ExperimentConfig::from_json(CFG).unwrap();
        cfg.phi1_grid = Some(vec![1.0, 0.5]);
        cfg.phi3_sweep = Some(vec![0.0, 0.5, 1.0]);
        let recs = run_stp_surface(&cfg, 0).unwrap();
        assert_eq!(recs.len(), 6);
        let r = &recs[0];
        assert_eq!((r.phi1, r.phi3), (1.0, 0.0));
        assert!(!r.violated);
        // with no B term the blocks decouple and the mixture law holds
        assert!((r.p_gamma - 0.5 * (r.p_e1 + r.p_e2)).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn uncontrolled_uniform_state_is_stationary_at_phi1_one() {
        let mut cfg = ExperimentConfig::from_json(CFG).unwrap();
        cfg.phi1 = 1.0;
        cfg.horizon = Some(2.0);
        cfg.phi3 = Some(0.0);
        cfg.coupling = Some(0.0);
        cfg.rho0 = None;
        let run = run_oscillation(&cfg, 0).unwrap();
        assert_eq!(run.samples.len(), 21);
        for s in &run.samples {
            assert!(s.p_a.iter().all(|p| (p - 0.5).abs() < 1e-12), "{s:?}");
        }
        assert_eq!(run.sign_changes, vec![0, 0]);
    }
}
