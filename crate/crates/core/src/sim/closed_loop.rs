//! Seeded human-machine interaction rounds under the Lyapunov controller.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TargetSpec};
use super::rng::{stream, Stream};
use crate::controller::{
    analytic_derivatives, build_r, choose_u, expected_v, lyapunov_v, solve_sigma_blockwise, validate_sigma,
    ControlContext, Extremum, RMatrix, SigmaReport, SigmaWeights,
};
use crate::error::{Error, Result};
use crate::lindblad_model::{action_distribution, measure, ControlInput, Model, Posterior};
use crate::quantum_core::population;
use crate::sensor::{bayes_update, likelihood_column, sample_observation, sample_state, target_action, NatureModel};
use crate::tolerances;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub seed: u64,
    pub round: usize,
    pub t_realized: u32,
    pub u: f64,
    pub action: usize,
    pub v_eps: f64,
    pub pop_target: f64,
    pub p_a: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub true_state: usize,
    pub target: usize,
    pub target_action: usize,
    pub converged_round: Option<usize>,
    /// First round of a sustained run with the target action's probability at or above the threshold.
    pub action_converged_round: Option<usize>,
    /// Rounds whose predicted expected V exceeded the current V beyond the quadratic tolerance.
    pub drift_violations: usize,
    pub drift_tolerance: f64,
    pub sigma: SigmaWeights,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub rows: Vec<TrajectoryRow>,
    pub summary: RunSummary,
}

/// Grid on which [`validate_sigma`] inspects the neighbourhood of zero.
pub fn validation_grid() -> Vec<f64> {
    (0..41).map(|i| -0.2 + 0.01 * i as f64).collect()
}

/// Round-zero choice of the target basis state.
///
/// The action is the Bayesian utility maximiser for the machine's belief.
/// The state is the one that the belief-transfer term feeds: population in
/// state `s` leaves at a rate proportional to `alpha_s`, so the block with
/// the smallest human posterior is the only one that can hold the target.
pub fn select_target(model: &Model, target: &TargetSpec, alpha: &Posterior, beta: &[f64]) -> Result<usize> {
    match target {
        TargetSpec::Index(i) => Ok(*i),
        TargetSpec::Named(_) => {
            let a = target_action(beta, &model.params.zeta)?;
            let p = alpha.probs();
            let mut s = 0;
            for (i, x) in p.iter().enumerate() {
                if *x < p[s] {
                    s = i;
                }
            }
            Ok(model.basis.index(s, a)?.flat)
        }
    }
}

/// Second-order matrix averaged over the interval law.
pub fn averaged_r(ctx: &ControlContext) -> Result<RMatrix> {
    let parts = ctx
        .tdist
        .iter()
        .map(|(t, p)| Ok((p, build_r(&analytic_derivatives(&ctx.model, &ctx.alpha, t)?)?)))
        .collect::<Result<Vec<_>>>()?;
    RMatrix::mixture(&parts)
}

/// Builds and checks the Lyapunov weights for a target.
pub fn design_weights(ctx: &ControlContext, n_bar: usize) -> Result<(SigmaWeights, SigmaReport)> {
    let r = averaged_r(ctx)?;
    let w = solve_sigma_blockwise(&r, n_bar)?;
    let report = validate_sigma(&w, ctx, &validation_grid())?;
    Ok((w, report))
}

/// Quadratic completeness tolerance `(T_max dt phi1 gamma_max)^2` with `gamma_max <= n`.
pub fn drift_tolerance(ctx: &ControlContext) -> f64 {
    let p = &ctx.model.params;
    (ctx.tdist.max() as f64 * p.dt * p.phi1 * p.n as f64).powi(2)
}

pub fn converged_round(rows: &[TrajectoryRow]) -> Option<usize> {
    sustained(rows, |r| r.pop_target)
}

fn sustained(rows: &[TrajectoryRow], value: impl Fn(&TrajectoryRow) -> f64) -> Option<usize> {
    let mut start = None;
    for (i, r) in rows.iter().enumerate() {
        if value(r) >= tolerances::CONVERGED_POPULATION {
            start.get_or_insert(i);
        } else {
            start = None;
        }
    }
    start.filter(|s| rows.len() - s >= tolerances::CONVERGED_ROUNDS).map(|s| rows[s].round)
}

pub(crate) fn sense(
    nature: &NatureModel,
    s: usize,
    alpha: &mut Vec<f64>,
    beta: &mut Vec<f64>,
    rng: &mut impl Rng,
) -> Result<()> {
    let row_y: Vec<f64> = nature.likelihood_y.row(s).iter().copied().collect();
    let y = sample_observation(&row_y, rng);
    *alpha = bayes_update(alpha, &likelihood_column(&nature.likelihood_y, y))?;
    let row_z: Vec<f64> = nature.likelihood_z.row(s).iter().copied().collect();
    let z = sample_observation(&row_z, rng);
    *beta = bayes_update(beta, &likelihood_column(&nature.likelihood_z, z))?;
    Ok(())
}

pub fn run_closed_loop(cfg: &ExperimentConfig, seed: u64) -> Result<ClosedLoopRun> {
    let model = cfg.model_for_seed(seed)?;
    let nature = cfg.nature()?;
    let tdist = cfg.tdist()?;
    let mut nature_rng = stream(seed, Stream::Nature);
    let mut measure_rng = stream(seed, Stream::Measurement);
    let mut t_rng = stream(seed, Stream::Interval);

    let s_true = sample_state(&nature, &mut nature_rng);
    let mut alpha = nature.prior.clone();
    let mut beta = nature.prior.clone();
    let mut rho = cfg.rho0()?;
    let mut ctx = ControlContext::new(model.clone(), Posterior::new(alpha.clone())?, tdist.clone());
    ctx.substep = cfg.substep;

    let mut design: Option<(usize, SigmaWeights)> = None;
    let mut rows = Vec::with_capacity(cfg.rounds);
    let mut drift_violations = 0;
    let tol = drift_tolerance(&ctx);
    for round in 0..cfg.rounds {
        sense(&nature, s_true, &mut alpha, &mut beta, &mut nature_rng)?;
        ctx.alpha = Posterior::new(alpha.clone())?;
        if design.is_none() {
            let n_bar = select_target(&model, &cfg.target, &ctx.alpha, &beta)?;
            let (w, report) = design_weights(&ctx, n_bar)?;
            if !report.passed {
                let bad: Vec<String> = report
                    .rows
                    .iter()
                    .filter(|r| r.classification != if r.is_target { Extremum::LocalMin } else { Extremum::LocalMax })
                    .map(|r| {
                        format!(
                            "{} ({:?}: V(0) = {:e}, left - V(0) = {:e}, right - V(0) = {:e})",
                            r.index,
                            r.classification,
                            r.v_zero,
                            r.v_left - r.v_zero,
                            r.v_right - r.v_zero
                        )
                    })
                    .collect();
                return Err(Error::Sigma(format!(
                    "seed {seed}: target {n_bar}, u = 0 misclassified at basis states {}",
                    bad.join("; ")
                )));
            }
            design = Some((n_bar, w));
        }
        let (n_bar, w) = design.as_ref().expect("designed at round 0");
        let (u, predicted) = choose_u(&rho, &ctx, w, cfg.grid_points)?;
        let v_now = lyapunov_v(&rho, w);
        let v_open = expected_v(&rho, ControlInput::ZERO, &ctx, w)?;
        if predicted > v_now + tol || v_open > v_now + tol {
            drift_violations += 1;
        }
        let t = crate::sensor::sample_t(&tdist, &mut t_rng);
        let channel = ctx.channel(u, t)?;
        let p_a = action_distribution(&model.basis, &rho, channel.as_ref())?;
        let (action, post) = measure(&model.basis, &rho, channel.as_ref(), measure_rng.gen())?;
        rho = post;
        rows.push(TrajectoryRow {
            seed,
            round,
            t_realized: t,
            u: u.value(),
            action,
            v_eps: lyapunov_v(&rho, w),
            pop_target: population(&rho, *n_bar)?,
            p_a,
        });
    }
    let (n_bar, sigma) = design.ok_or_else(|| Error::Config("rounds must be positive".into()))?;
    let summary = RunSummary {
        seed,
        true_state: s_true,
        target: n_bar,
        target_action: model.basis.action_of(n_bar),
        converged_round: converged_round(&rows),
        action_converged_round: sustained(&rows, |r| r.p_a[model.basis.action_of(n_bar)]),
        drift_violations,
        drift_tolerance: tol,
        sigma,
    };
    Ok(ClosedLoopRun { rows, summary })
}
