//! Acceptance suite: one pass/fail line per criterion, tolerances pinned here.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use qdm_core::controller::Extremum;
use qdm_core::lindblad_model::{hamiltonian_real, kraus_set, outcomes, ControlInput, Model, Posterior};
use qdm_core::lyapunov_verifier::{
    estimate_drift, halving_system, random_walk_system, subsequence_check, tends_to_zero,
};
use qdm_core::quantum_core::{is_diagonal, population, ComplexMatrix, DensityOperator, Projector};
use qdm_core::sim::experiments::{contiguous_region, derivative_sign_changes, sigma_check, simulate};
use qdm_core::sim::{
    presets, run_oscillation, run_stp_surface, run_sweep, run_verify, ExperimentConfig, VerifySettings,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

// criterion 1
const ROW_SUM_TOL: f64 = 1e-12;
const U_GRID_POINTS: usize = 101;
// criterion 2
const SCALING_LO: f64 = 3.5;
const SCALING_HI: f64 = 4.5;
const SCALING_PAIRS: usize = 10;
// criterion 3
const MARTINGALE_STATES: usize = 100;
// criterion 4
const STOCHASTIC_TOL: f64 = 1e-8;
const SIGMA_RESIDUAL_TOL: f64 = 1e-8;
// criterion 5, 6
const SEEDS: u64 = 20;
const MIN_EXTREMA: usize = 2;
// criterion 7
const STP_SEEDS: u64 = 10;
// criterion 8
const OSC_MIN_CHANGES: usize = 2;
const OSC_MAX_CHANGES_DAMPED: usize = 1;
const OSC_FLAT: f64 = 1e-12;
// criterion 9
const DRIFT_IDENTITY_TOL: f64 = 1e-12;
const SYNTHETIC_PATHS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn criterion(id: u32, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f));
    let took = start.elapsed();
    let (pass, detail) = match res {
        Ok(o) => (o.pass && took < limit, o.detail),
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        }
    };
    println!(
        "criterion {id:>2}: {} ({:.1} s, limit {} s) {detail}",
        if pass { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn example1_model(seed: u64) -> Model {
    presets::example1().model_for_seed(seed).unwrap()
}

fn structural() -> Outcome {
    let model = example1_model(0);
    let basis = model.basis;
    let d = basis.dim();
    let mut worst_row = 0.0f64;
    for i in 0..U_GRID_POINTS {
        let u = -1.0 + 2.0 * i as f64 / (U_GRID_POINTS - 1) as f64;
        let h = hamiltonian_real(&basis, u);
        for r in 0..d {
            worst_row = worst_row.max((h.row(r).sum() - 1.0).abs());
        }
    }
    let alpha = Posterior::new(vec![0.3, 0.7]).unwrap();
    let c0 = model.cognitive(&alpha, ControlInput::ZERO, None).unwrap();
    let c_is_identity = c0 == nalgebra::DMatrix::identity(d, d);
    let ops = kraus_set(&model, &alpha, ControlInput::ZERO, 10).unwrap().operators();
    let all_diagonal = ops.iter().all(|k| is_diagonal(k, 0.0));
    let sum: ComplexMatrix = Projector::all(&basis).iter().fold(ComplexMatrix::zeros(d, d), |acc, p| acc + &p.mat);
    let projectors_complete = sum == ComplexMatrix::identity(d, d);
    outcome(
        worst_row <= ROW_SUM_TOL && c_is_identity && all_diagonal && projectors_complete,
        format!(
            "max |H row sum - 1| = {worst_row:e}; C(0) = I: {c_is_identity}; {} channel operators diagonal at u = 0: {all_diagonal}; sum P_a = I: {projectors_complete}",
            ops.len()
        ),
    )
}

fn kraus_scaling() -> Outcome {
    let cfg = presets::example1();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let alpha = Posterior::new(vec![0.6, 0.4]).unwrap();
    let mut ratios = Vec::new();
    for _ in 0..SCALING_PAIRS {
        let u = ControlInput::new(rng.gen_range(-1.0..1.0), 1.0).unwrap();
        let t = rng.gen_range(1..=15u32);
        let residual = |dt: f64| {
            let mut p = cfg.params_for_seed(0).unwrap();
            p.dt = dt;
            kraus_set(&Model::new(p).unwrap(), &alpha, u, t).unwrap().completeness_residual()
        };
        ratios.push(residual(0.01) / residual(0.005));
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    outcome(
        lo >= SCALING_LO && hi <= SCALING_HI,
        format!("residual ratios over {SCALING_PAIRS} (u, T) pairs in [{lo:.6}, {hi:.6}]"),
    )
}

fn random_density(rng: &mut ChaCha20Rng, d: usize) -> DensityOperator {
    let g = ComplexMatrix::from_fn(d, d, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im)
    });
    let rho = &g * g.adjoint();
    let tr = rho.trace();
    DensityOperator::new(rho / tr).unwrap()
}

fn martingale() -> Outcome {
    let model = example1_model(1);
    let d = model.dim();
    let alpha = Posterior::new(vec![0.5, 0.5]).unwrap();
    let t = 10;
    let channel = kraus_set(&model, &alpha, ControlInput::ZERO, t).unwrap();
    let gamma_max = model.cognitive(&alpha, ControlInput::ZERO, None).unwrap().max();
    let p = &model.params;
    let bound = (t as f64 * p.dt * p.phi1 * gamma_max).powi(2);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..MARTINGALE_STATES {
        let rho = random_density(&mut rng, d);
        let outs = outcomes(&model.basis, &rho, &channel).unwrap();
        for r in 0..d {
            let expected: f64 =
                outs.iter().filter_map(|(w, post)| post.as_ref().map(|s| w * population(s, r).unwrap())).sum();
            worst = worst.max((expected - population(&rho, r).unwrap()).abs());
        }
    }
    outcome(
        worst <= bound,
        format!("d = {d}, max |E[p_r'] - p_r| = {worst:e} over {MARTINGALE_STATES} states, bound {bound:e}"),
    )
}

fn sigma_construction() -> Outcome {
    let cfg = presets::example2();
    let check = sigma_check(&cfg, 0).unwrap();
    let w = &check.weights;
    let positive = w.sigma.iter().enumerate().all(|(r, s)| r == w.n_bar || *s > 0.0);
    let classes_ok = check
        .report
        .rows
        .iter()
        .all(|r| r.classification == if r.is_target { Extremum::LocalMin } else { Extremum::LocalMax });
    let pass = check.stochastic_defect <= STOCHASTIC_TOL
        && check.residual <= SIGMA_RESIDUAL_TOL
        && positive
        && classes_ok
        && check.report.passed;
    outcome(
        pass,
        format!(
            "target {}, sigma {:?}, P row-sum defect {:e}, |R sigma - lambda| = {:e}, u = 0 classified correctly: {classes_ok}; single-class solve: {}",
            check.target,
            w.sigma,
            check.stochastic_defect,
            check.residual,
            check.strict_solve.as_deref().unwrap_or("ok")
        ),
    )
}

struct SweepStats {
    converged: usize,
    action_converged: usize,
    aborted: Vec<u64>,
    max_extrema: usize,
}

fn sweep(cfg: &ExperimentConfig) -> SweepStats {
    let seeds: Vec<u64> = (0..SEEDS).collect();
    let mut s = SweepStats { converged: 0, action_converged: 0, aborted: vec![], max_extrema: 0 };
    for (seed, run) in run_sweep(cfg, &seeds) {
        match run {
            Ok(run) => {
                if let Some(k) = run.summary.converged_round {
                    s.converged += 1;
                    let series: Vec<f64> = run.rows[..=k].iter().map(|r| r.pop_target).collect();
                    s.max_extrema = s.max_extrema.max(derivative_sign_changes(&series, OSC_FLAT));
                }
                if run.summary.action_converged_round.is_some() {
                    s.action_converged += 1;
                }
            }
            Err(_) => s.aborted.push(seed),
        }
    }
    s
}

fn describe(name: &str, s: &SweepStats) -> String {
    format!(
        "{name}: {}/{SEEDS} converged (target action alone: {}/{SEEDS}), sigma aborts at seeds {:?}",
        s.converged, s.action_converged, s.aborted
    )
}

fn theorem2() -> Outcome {
    let e1 = sweep(&presets::example1());
    let e2 = sweep(&presets::example2());
    let pass = e1.converged == SEEDS as usize && e2.converged == SEEDS as usize && e2.max_extrema >= MIN_EXTREMA;
    outcome(
        pass,
        format!(
            "{}; {}, most pre-convergence extrema {}",
            describe("example 1", &e1),
            describe("example 2", &e2),
            e2.max_extrema
        ),
    )
}

fn random_t() -> Outcome {
    let cfg = presets::example1_random_t();
    let s = sweep(&cfg);
    let report = run_verify(&cfg, 0, VerifySettings::default());
    let decision = report.systems.iter().find(|r| r.drift.system == "decision_system");
    let drift_ok = decision.is_some_and(|r| r.drift.tstep_violations == 0);
    let drift_detail = match decision {
        Some(r) => format!(
            "decision system: {} (b)-violations, {} (a)-violations over {} anchors",
            r.drift.tstep_violations, r.drift.onestep_violations, r.drift.anchors
        ),
        None => format!("decision system not built: {:?}", report.failures),
    };
    outcome(s.converged == SEEDS as usize && drift_ok, format!("{}; {drift_detail}", describe("T in {5, 10, 15}", &s)))
}

fn stp() -> Outcome {
    let mut found = Vec::new();
    let mut decoupled_clean = true;
    for seed in 0..STP_SEEDS {
        let cfg = presets::stp_surface();
        let recs = run_stp_surface(&cfg, seed).unwrap();
        let flags: Vec<bool> = recs.iter().map(|r| r.violated).collect();
        if contiguous_region(&flags) {
            let lo = recs.iter().find(|r| r.violated).unwrap().phi3;
            let hi = recs.iter().rev().find(|r| r.violated).unwrap().phi3;
            found.push(format!("seed {seed}: [{lo}, {hi}]"));
        }
        let mut base = cfg.clone();
        base.phi1_grid = Some(vec![1.0]);
        base.phi3_sweep = Some(vec![0.0]);
        decoupled_clean &= run_stp_surface(&base, seed).unwrap().iter().all(|r| !r.violated);
    }
    outcome(
        !found.is_empty() && decoupled_clean,
        format!(
            "contiguous violation regions in {}/{STP_SEEDS} zeta seeds ({}); phi3 = 0, phi1 = 1 free of violations: {decoupled_clean}",
            found.len(),
            found.join(", ")
        ),
    )
}

fn oscillation() -> Outcome {
    let a = run_oscillation(&presets::oscillation(0.5), 0).unwrap();
    let b = run_oscillation(&presets::oscillation(0.98), 0).unwrap();
    let osc = a.sign_changes.iter().copied().max().unwrap_or(0);
    let damped = b.sign_changes_after_transient.iter().copied().max().unwrap_or(0);
    outcome(
        osc >= OSC_MIN_CHANGES && damped <= OSC_MAX_CHANGES_DAMPED,
        format!(
            "phi1 = 0.5: sign changes {:?}; phi1 = 0.98 after transient: {:?}",
            a.sign_changes, b.sign_changes_after_transient
        ),
    )
}

fn synthetic_paths() -> Vec<(Vec<f64>, usize, bool)> {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let len = 300;
    let mut paths = vec![(vec![0.0, 0.0, 1.0].repeat(len / 3), 3, false)];
    paths.push(((1..=len).map(|k| 1.0 / k as f64).collect(), 3, true));
    paths.push((vec![0.4; len], 3, false));
    while paths.len() < SYNTHETIC_PATHS {
        let t = rng.gen_range(1..=5usize);
        match paths.len() % 4 {
            0 => {
                let r: f64 = rng.gen_range(0.5..0.98);
                paths.push(((0..len).map(|k| r.powi(k as i32)).collect(), t, true));
            }
            1 => {
                let c: f64 = rng.gen_range(0.01..2.0);
                paths.push((vec![c; len], t, false));
            }
            2 if t > 1 => {
                // one offset stays away from zero while the others decay
                let bad = rng.gen_range(0..t);
                let c: f64 = rng.gen_range(0.1..1.0);
                paths.push((
                    (0..len).map(|k| if k % t == bad { c } else { 0.9f64.powi(k as i32) }).collect(),
                    t,
                    false,
                ));
            }
            _ => {
                let a: f64 = rng.gen_range(0.5..3.0);
                paths.push((
                    (0..len).map(|k| a / (1.0 + k as f64).powf(1.5) * rng.gen_range(0.5..1.0)).collect(),
                    t,
                    true,
                ));
            }
        }
    }
    paths
}

fn verifier() -> Outcome {
    let halving = halving_system(vec![1.5, -0.5, 2.0], f64::INFINITY);
    let drift = estimate_drift(&halving, 3, 25, 4, 11).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut identity_gap = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let next = (halving.step)(&x, &mut rng).unwrap();
        let gap = (halving.v)(&next).unwrap() - (halving.v)(&x).unwrap() + (halving.phi)(&x).unwrap();
        identity_gap = identity_gap.max(gap.abs());
    }
    let halving_ok =
        drift.passed() && drift.tstep_margin.abs() <= DRIFT_IDENTITY_TOL && identity_gap <= DRIFT_IDENTITY_TOL;
    let walk = estimate_drift(&random_walk_system(vec![0.0]), 4, 25, 100, 12).unwrap();
    let mut agree = 0;
    let mut labelled = 0;
    for (path, t, truth) in synthetic_paths() {
        let v = subsequence_check(&path, |x| *x, t).unwrap();
        if v.consistent && v.full == tends_to_zero(&path, 1e-6) {
            agree += 1;
        }
        if v.full == truth {
            labelled += 1;
        }
    }
    outcome(
        halving_ok && !walk.passed() && agree == SYNTHETIC_PATHS && labelled == SYNTHETIC_PATHS,
        format!(
            "halving: pass {}, drift identity gap {identity_gap:e}, margin {:e}; random walk flagged: {} ({} violations); subsequence verdicts consistent {agree}/{SYNTHETIC_PATHS}, matching construction {labelled}/{SYNTHETIC_PATHS}",
            drift.passed(),
            drift.tstep_margin,
            !walk.passed(),
            walk.onestep_violations
        ),
    )
}

fn determinism() -> Outcome {
    let mut cfg = presets::example1();
    cfg.rounds = 60;
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, seeds: &[u64], threads: usize| -> Vec<u8> {
        let out = dir.path().join(name);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate(&cfg, seeds, &out)).unwrap();
        std::fs::read(out.join("trajectory.csv")).unwrap()
    };
    let single_a = write("a", &[2], 1);
    let single_b = write("b", &[2], 1);
    let sweep_1 = write("c", &[0, 1, 2, 3], 1);
    let sweep_4 = write("d", &[3, 1, 0, 2], 4);
    let pass = single_a == single_b && sweep_1 == sweep_4 && !single_a.is_empty();
    outcome(
        pass,
        format!(
            "repeat run identical: {}; 1-thread vs 4-thread sweep identical: {} ({} bytes)",
            single_a == single_b,
            sweep_1 == sweep_4,
            sweep_1.len()
        ),
    )
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        criterion(1, s(1), structural),
        criterion(2, s(5), kraus_scaling),
        criterion(3, s(10), martingale),
        criterion(4, s(30), sigma_construction),
        criterion(5, s(300), theorem2),
        criterion(6, s(300), random_t),
        criterion(7, s(120), stp),
        criterion(8, s(30), oscillation),
        criterion(9, s(30), verifier),
        criterion(10, s(60), determinism),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
