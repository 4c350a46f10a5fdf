//! Empirical checks of finite-step stochastic Lyapunov conditions on
//! arbitrary systems `x_{k+1} = f(x_k, y_{k+1})`.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::{choose_u, expected_v, lyapunov_v, ControlContext, SigmaWeights};
use crate::error::{Error, Result};
use crate::lindblad_model::measure;
use crate::quantum_core::{population, ComplexMatrix, DensityOperator};
use crate::sensor::{sample_t, TDistribution};
use crate::sim::rng::{indexed_stream, Stream};
use crate::tolerances;

pub type StepFn = dyn Fn(&[f64], &mut ChaCha20Rng) -> Result<Vec<f64>> + Send + Sync;
pub type ScalarFn = dyn Fn(&[f64]) -> Result<f64> + Send + Sync;
pub type PredicateFn = dyn Fn(&[f64]) -> Result<bool> + Send + Sync;

#[derive(Clone)]
pub struct SystemUnderTest {
    pub name: String,
    pub x0: Vec<f64>,
    pub step: Arc<StepFn>,
    pub v: Arc<ScalarFn>,
    pub phi: Arc<ScalarFn>,
    /// Level of the sublevel set `Q_lambda`; infinite for the global statement.
    pub lambda: f64,
    pub t_law: TDistribution,
    pub d1: Arc<PredicateFn>,
    /// Known deterministic slack in the drift inequalities (zero for exact systems).
    pub drift_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub system: String,
    pub paths: usize,
    pub horizon: usize,
    pub replications: usize,
    pub anchors: usize,
    /// Anchors in `Q_lambda` where the one-step drift is positive beyond the slack.
    pub onestep_violations: usize,
    pub onestep_rate: f64,
    /// Worst observed one-step `mean V(x') - V(x)`.
    pub onestep_margin: f64,
    pub tstep_violations: usize,
    pub tstep_rate: f64,
    /// Worst observed `mean V(x_{k+T}) - V(x_k) + phi(x_k)`.
    pub tstep_margin: f64,
    /// Sampled states where `V` was negative or not finite.
    pub invalid_states: usize,
    pub notes: Vec<String>,
}

impl DriftReport {
    pub fn passed(&self) -> bool {
        self.onestep_violations == 0 && self.tstep_violations == 0 && self.invalid_states == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub system: String,
    pub paths: usize,
    pub horizon: usize,
    pub converged: usize,
    pub empirical: f64,
    pub bound: f64,
    pub slack: f64,
    pub passed: bool,
}

struct Estimate {
    mean: f64,
    stderr: f64,
}

fn estimate(samples: &[f64]) -> Estimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return Estimate { mean, stderr: 0.0 };
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate { mean, stderr: (var / n).sqrt() }
}

fn run_steps(sut: &SystemUnderTest, x: &[f64], steps: u32, rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
    let mut y = x.to_vec();
    for _ in 0..steps {
        y = (sut.step)(&y, rng)?;
    }
    Ok(y)
}

fn exceeds(e: &Estimate, tol: f64, scale: f64) -> bool {
    e.mean - tol > tolerances::SIGMA_SLACK * e.stderr + 1e-12 * scale.max(1.0)
}

#[derive(Default)]
struct PathTally {
    anchors: usize,
    onestep_violations: usize,
    onestep_margin: f64,
    tstep_violations: usize,
    tstep_margin: f64,
    invalid: usize,
}

fn drift_on_path(
    sut: &SystemUnderTest,
    horizon: usize,
    replications: usize,
    rng: &mut ChaCha20Rng,
) -> Result<PathTally> {
    let mut tally =
        PathTally { onestep_margin: f64::NEG_INFINITY, tstep_margin: f64::NEG_INFINITY, ..Default::default() };
    let unit_t = tally_unit(&sut.t_law);
    let mut x = sut.x0.clone();
    for _ in 0..horizon {
        let v = (sut.v)(&x)?;
        if !(v.is_finite() && v >= 0.0) {
            tally.invalid += 1;
        }
        let phi = (sut.phi)(&x)?;
        tally.anchors += 1;
        let mut one = Vec::with_capacity(replications);
        for _ in 0..replications {
            let y = run_steps(sut, &x, 1, rng)?;
            one.push((sut.v)(&y)? - v);
        }
        let e1 = estimate(&one);
        if v < sut.lambda {
            tally.onestep_margin = tally.onestep_margin.max(e1.mean);
            if exceeds(&e1, sut.drift_tolerance, v) {
                tally.onestep_violations += 1;
            }
        }
        let et = if unit_t {
            Estimate { mean: e1.mean + phi, stderr: e1.stderr }
        } else {
            let mut many = Vec::with_capacity(replications);
            for _ in 0..replications {
                let t = sample_t(&sut.t_law, rng);
                let y = run_steps(sut, &x, t, rng)?;
                many.push((sut.v)(&y)? - v + phi);
            }
            estimate(&many)
        };
        tally.tstep_margin = tally.tstep_margin.max(et.mean);
        if exceeds(&et, sut.drift_tolerance, v) {
            tally.tstep_violations += 1;
        }
        x = (sut.step)(&x, rng)?;
    }
    Ok(tally)
}

fn tally_unit(t: &TDistribution) -> bool {
    t.support() == [1]
}

/// Monte-Carlo check of conditions (a) and (b) at the states visited by `paths` sample paths.
///
/// At every anchor state the one-step drift is estimated from
/// `replications` independent successors and compared with zero; the
/// `T`-step drift, with `T` drawn from the system's law per replication,
/// is compared with `-phi`. A violation is a mean exceeding the bound by
/// more than three standard errors.
pub fn estimate_drift(
    sut: &SystemUnderTest,
    paths: usize,
    horizon: usize,
    replications: usize,
    seed: u64,
) -> Result<DriftReport> {
    if paths == 0 || horizon == 0 || replications == 0 {
        return Err(Error::InvalidParameter("paths, horizon and replications must be positive".into()));
    }
    let tallies = (0..paths)
        .into_par_iter()
        .map(|p| drift_on_path(sut, horizon, replications, &mut indexed_stream(seed, Stream::Verifier, p as u64)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let anchors: usize = tallies.iter().map(|t| t.anchors).sum();
    let onestep_violations: usize = tallies.iter().map(|t| t.onestep_violations).sum();
    let tstep_violations: usize = tallies.iter().map(|t| t.tstep_violations).sum();
    let mut notes = vec![format!(
        "violation = mean drift above bound + tolerance {:e} by more than {} standard errors",
        sut.drift_tolerance,
        tolerances::SIGMA_SLACK
    )];
    if sut.lambda.is_infinite() {
        notes.push("lambda = infinity: condition (a) checked everywhere, no stopping".into());
    }
    if tally_unit(&sut.t_law) {
        notes.push("T = 1: condition (b) reuses the one-step samples".into());
    }
    Ok(DriftReport {
        system: sut.name.clone(),
        paths,
        horizon,
        replications,
        anchors,
        onestep_violations,
        onestep_rate: onestep_violations as f64 / anchors as f64,
        onestep_margin: tallies.iter().map(|t| t.onestep_margin).fold(f64::NEG_INFINITY, f64::max),
        tstep_violations,
        tstep_rate: tstep_violations as f64 / anchors as f64,
        tstep_margin: tallies.iter().map(|t| t.tstep_margin).fold(f64::NEG_INFINITY, f64::max),
        invalid_states: tallies.iter().map(|t| t.invalid).sum(),
        notes,
    })
}

fn window(horizon: usize) -> usize {
    ((horizon as f64 * tolerances::VERIFY_WINDOW).ceil() as usize).max(1)
}

/// Fraction of paths that sit in `D_1` over the last tenth of the horizon,
/// compared with `1 - V(x0)/lambda` less a three-sigma binomial slack.
pub fn convergence_probability(
    sut: &SystemUnderTest,
    paths: usize,
    horizon: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if paths == 0 || horizon == 0 {
        return Err(Error::InvalidParameter("paths and horizon must be positive".into()));
    }
    let w = window(horizon);
    let flags = (0..paths)
        .into_par_iter()
        .map(|p| -> Result<bool> {
            let mut rng = indexed_stream(seed, Stream::Verifier, p as u64);
            let mut x = sut.x0.clone();
            let mut inside = true;
            for k in 1..=horizon {
                x = (sut.step)(&x, &mut rng)?;
                if k > horizon - w && !(sut.d1)(&x)? {
                    inside = false;
                }
            }
            Ok(inside)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let converged = flags.iter().filter(|f| **f).count();
    let empirical = converged as f64 / paths as f64;
    let bound = if sut.lambda.is_infinite() { 1.0 } else { (1.0 - (sut.v)(&sut.x0)? / sut.lambda).max(0.0) };
    let slack = tolerances::SIGMA_SLACK * (bound * (1.0 - bound) / paths as f64).sqrt();
    Ok(ConvergenceReport {
        system: sut.name.clone(),
        paths,
        horizon,
        converged,
        empirical,
        bound,
        slack,
        passed: empirical >= bound - slack,
    })
}

/// Whether a finite sequence of nonnegative values behaves as one tending to zero.
///
/// True when the second half is within `tol`. Otherwise the sup over the
/// second half must have contracted to at most half of the first half's sup,
/// and the sup over the last quarter must still be strictly below the sup
/// over the second half, so a tail that settles at a positive level fails.
pub fn tends_to_zero(seq: &[f64], tol: f64) -> bool {
    if seq.is_empty() {
        return true;
    }
    let half = seq.len() / 2;
    let sup = |s: &[f64]| s.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let tail = sup(&seq[half..]);
    if tail <= tol {
        return true;
    }
    let late = sup(&seq[seq.len() - seq.len() / 4..]);
    tail <= tolerances::VERIFY_DECAY * sup(&seq[..half]) && late < tail
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsequenceVerdict {
    pub full: bool,
    pub offsets: Vec<bool>,
    /// All offset subsequences tend to zero exactly when the full path does.
    pub consistent: bool,
}

/// Compares convergence of `phi` along the path with convergence along each
/// offset subsequence `k0, k0 + T, k0 + 2T, ...`.
pub fn subsequence_check<S>(path: &[S], phi: impl Fn(&S) -> f64, t: usize) -> Result<SubsequenceVerdict> {
    if t == 0 || path.len() < 3 * t {
        return Err(Error::PathTooShort { need: 3 * t.max(1), got: path.len() });
    }
    let values: Vec<f64> = path.iter().map(phi).collect();
    let full = tends_to_zero(&values, tolerances::D1_PHI);
    let offsets: Vec<bool> = (0..t)
        .map(|k0| {
            let sub: Vec<f64> = values.iter().skip(k0).step_by(t).copied().collect();
            tends_to_zero(&sub, tolerances::D1_PHI)
        })
        .collect();
    let consistent = offsets.iter().all(|b| *b) == full;
    Ok(SubsequenceVerdict { full, offsets, consistent })
}

/// `x' = x / 2`, `V = |x|^2`, `phi = 0.75 |x|^2`, deterministic.
pub fn halving_system(x0: Vec<f64>, lambda: f64) -> SystemUnderTest {
    SystemUnderTest {
        name: "halving".into(),
        x0,
        step: Arc::new(|x, _| Ok(x.iter().map(|v| v / 2.0).collect())),
        v: Arc::new(|x| Ok(x.iter().map(|v| v * v).sum())),
        phi: Arc::new(|x| Ok(0.75 * x.iter().map(|v| v * v).sum::<f64>())),
        lambda,
        t_law: TDistribution::fixed(1).expect("T = 1 is valid"),
        d1: Arc::new(|x| Ok(0.75 * x.iter().map(|v| v * v).sum::<f64>() <= tolerances::D1_PHI)),
        drift_tolerance: 0.0,
    }
}

/// `x' = x + N(0, 1)`, `V = |x|^2`, `phi = 0`; D_1 taken as `{0}`.
pub fn random_walk_system(x0: Vec<f64>) -> SystemUnderTest {
    SystemUnderTest {
        name: "random_walk".into(),
        x0,
        step: Arc::new(|x, rng| {
            Ok(x.iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(rng);
                    v + z
                })
                .collect())
        }),
        v: Arc::new(|x| Ok(x.iter().map(|v| v * v).sum())),
        phi: Arc::new(|_| Ok(0.0)),
        lambda: f64::INFINITY,
        t_law: TDistribution::fixed(1).expect("T = 1 is valid"),
        d1: Arc::new(|x| Ok(x.iter().all(|v| v.abs() <= tolerances::D1_PHI))),
        drift_tolerance: 0.0,
    }
}

/// Real and imaginary parts of `rho`, row-major, real block first.
pub fn flatten_density(rho: &ComplexMatrix) -> Vec<f64> {
    let d = rho.nrows();
    let mut out = Vec::with_capacity(2 * d * d);
    for part in 0..2 {
        for r in 0..d {
            for c in 0..d {
                let z = rho[(r, c)];
                out.push(if part == 0 { z.re } else { z.im });
            }
        }
    }
    out
}

pub fn unflatten_density(x: &[f64]) -> Result<DensityOperator> {
    let d = ((x.len() / 2) as f64).sqrt().round() as usize;
    if 2 * d * d != x.len() || d == 0 {
        return Err(Error::Dimension(format!("{} reals do not encode a square complex matrix", x.len())));
    }
    let mat = ComplexMatrix::from_fn(d, d, |r, c| num_complex::Complex64::new(x[r * d + c], x[d * d + r * d + c]));
    DensityOperator::with_tolerance(mat, tolerances::POST_MEASURE)
}

/// The closed-loop decision process as a generic system: one step is one
/// interaction round under the argmin control.
pub fn wrap_decision_system(
    ctx: ControlContext,
    weights: SigmaWeights,
    rho0: &DensityOperator,
    grid_points: usize,
    drift_tolerance: f64,
) -> SystemUnderTest {
    let ctx = Arc::new(ctx);
    let w = Arc::new(weights);
    let (c1, w1) = (ctx.clone(), w.clone());
    let step = move |x: &[f64], rng: &mut ChaCha20Rng| -> Result<Vec<f64>> {
        let rho = unflatten_density(x)?;
        let (u, _) = choose_u(&rho, &c1, &w1, grid_points)?;
        let t = sample_t(&c1.tdist, rng);
        let ch = c1.channel(u, t)?;
        let (_, post) = measure(&c1.model.basis, &rho, ch.as_ref(), rng.gen())?;
        Ok(flatten_density(post.mat()))
    };
    let w2 = w.clone();
    let v = move |x: &[f64]| -> Result<f64> { Ok(lyapunov_v(&unflatten_density(x)?, &w2)) };
    let (c3, w3) = (ctx.clone(), w.clone());
    let phi = move |x: &[f64]| -> Result<f64> {
        let rho = unflatten_density(x)?;
        let (u, _) = choose_u(&rho, &c3, &w3, grid_points)?;
        Ok((lyapunov_v(&rho, &w3) - expected_v(&rho, u, &c3, &w3)?).max(0.0))
    };
    let n_bar = w.n_bar;
    let d1 = move |x: &[f64]| -> Result<bool> {
        Ok(population(&unflatten_density(x)?, n_bar)? >= tolerances::CONVERGED_POPULATION)
    };
    SystemUnderTest {
        name: "decision_system".into(),
        x0: flatten_density(rho0.mat()),
        step: Arc::new(step),
        v: Arc::new(v),
        phi: Arc::new(phi),
        lambda: f64::INFINITY,
        t_law: TDistribution::fixed(1).expect("T = 1 is valid"),
        d1: Arc::new(d1),
        drift_tolerance,
    }
}
