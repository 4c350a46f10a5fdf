//! Lyapunov function, its exact one-round expectation and the argmin control law.

use rayon::prelude::*;
use serde::Serialize;

use super::sigma::SigmaWeights;
use crate::error::{Error, Result};
use crate::lindblad_model::{composed_channel, kraus_set, Channel, ControlInput, Model, Posterior};
use crate::quantum_core::{ComplexMatrix, DensityOperator};
use crate::sensor::TDistribution;

/// Everything the machine needs to predict one interaction round.
#[derive(Debug, Clone)]
pub struct ControlContext {
    pub model: Model,
    pub alpha: Posterior,
    pub tdist: TDistribution,
    /// Compose `T` single-step channels instead of one Euler step of size `T dt`.
    pub substep: bool,
}

impl ControlContext {
    pub fn new(model: Model, alpha: Posterior, tdist: TDistribution) -> Self {
        Self { model, alpha, tdist, substep: false }
    }

    pub fn channel(&self, u: ControlInput, t: u32) -> Result<Box<dyn Channel>> {
        if self.substep {
            Ok(Box::new(composed_channel(&self.model, &self.alpha, u, t)?))
        } else {
            Ok(Box::new(kraus_set(&self.model, &self.alpha, u, t)?))
        }
    }

    pub fn u_bar(&self) -> f64 {
        self.model.params.u_bar
    }
}

/// `sum sigma_r p_r - (eps/2) sum p_r^2 + offset`.
pub fn lyapunov_v(rho: &DensityOperator, w: &SigmaWeights) -> f64 {
    v_of_populations(&rho.populations(), w)
}

pub fn v_of_populations(pops: &[f64], w: &SigmaWeights) -> f64 {
    let lin: f64 = pops.iter().zip(&w.sigma).map(|(p, s)| p * s).sum();
    let sq: f64 = pops.iter().map(|p| p * p).sum();
    lin - 0.5 * w.epsilon * sq + w.offset
}

/// Diagonal of `E(rho)` where `E` is the channel.
fn evolved_diagonal(rho: &ComplexMatrix, channel: &dyn Channel) -> Vec<f64> {
    let e = channel.apply(rho);
    (0..e.nrows()).map(|r| e[(r, r)].re).collect()
}

/// Expected `V` after one measured round with a given interval `T`.
pub fn expected_v_given_t(
    rho: &DensityOperator,
    channel: &dyn Channel,
    model: &Model,
    w: &SigmaWeights,
) -> Result<f64> {
    let b = model.basis;
    let e = evolved_diagonal(rho.mat(), channel);
    let mut block = vec![0.0; b.m];
    for (r, x) in e.iter().enumerate() {
        block[b.action_of(r)] += x;
    }
    let total: f64 = block.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeight(total));
    }
    // sum_a p_a V(post_a) with post_a populations e_r / w_a on block a
    let mut lin = 0.0;
    let mut sq = 0.0;
    for (r, x) in e.iter().enumerate() {
        lin += w.sigma[r] * x;
        let wa = block[b.action_of(r)];
        if wa > 0.0 {
            sq += x * x / wa;
        }
    }
    Ok((lin - 0.5 * w.epsilon * sq) / total + w.offset)
}

/// Exact expectation over the action outcome and over `T ~ pi_T`.
pub fn expected_v(rho: &DensityOperator, u: ControlInput, ctx: &ControlContext, w: &SigmaWeights) -> Result<f64> {
    let mut acc = 0.0;
    for (t, pt) in ctx.tdist.iter() {
        let ch = ctx.channel(u, t)?;
        acc += pt * expected_v_given_t(rho, ch.as_ref(), &ctx.model, w)?;
    }
    Ok(acc)
}

pub fn control_grid(u_bar: f64, points: usize) -> Result<Vec<f64>> {
    if points < 3 || points % 2 == 0 {
        return Err(Error::InvalidParameter(format!("grid needs an odd number >= 3 of points, got {points}")));
    }
    let half = (points / 2) as f64;
    Ok((0..points).map(|i| u_bar * (i as f64 - half) / half).collect())
}

/// Grid argmin of the expected Lyapunov value; ties go to smaller |u|, then to negative u.
pub fn choose_u(
    rho: &DensityOperator,
    ctx: &ControlContext,
    w: &SigmaWeights,
    grid_points: usize,
) -> Result<(ControlInput, f64)> {
    let grid = control_grid(ctx.u_bar(), grid_points)?;
    let values: Vec<Result<f64>> =
        grid.par_iter().map(|&u| expected_v(rho, ControlInput::new(u, ctx.u_bar())?, ctx, w)).collect();
    let mut best: Option<(f64, f64)> = None;
    for (&u, v) in grid.iter().zip(values) {
        let v = v?;
        let better = match best {
            None => true,
            Some((bu, bv)) => v < bv || (v == bv && (u.abs() < bu.abs() || (u.abs() == bu.abs() && u < bu))),
        };
        if better {
            best = Some((u, v));
        }
    }
    let (u, v) = best.expect("grid is non-empty");
    Ok((ControlInput::new(u, ctx.u_bar())?, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Extremum {
    LocalMin,
    LocalMax,
    Neither,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaRow {
    pub index: usize,
    pub is_target: bool,
    pub classification: Extremum,
    pub v_zero: f64,
    pub v_left: f64,
    pub v_right: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaReport {
    pub rows: Vec<SigmaRow>,
    pub passed: bool,
}

/// Classifies `u = 0` for every basis pure state from the expected-V profile
/// at the two grid points adjacent to zero.
pub fn validate_sigma(w: &SigmaWeights, ctx: &ControlContext, grid: &[f64]) -> Result<SigmaReport> {
    let mut pos: Vec<f64> = grid.iter().copied().filter(|u| *u > 0.0).collect();
    let mut neg: Vec<f64> = grid.iter().copied().filter(|u| *u < 0.0).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(|a, b| b.total_cmp(a));
    let (Some(&up), Some(&un)) = (pos.first(), neg.first()) else {
        return Err(Error::InvalidParameter("validation grid must straddle zero".into()));
    };
    let d = w.dim();
    let rows: Vec<Result<SigmaRow>> = (0..d)
        .into_par_iter()
        .map(|r| {
            let rho = DensityOperator::pure_basis(d, r)?;
            let at = |u: f64| -> Result<f64> { expected_v(&rho, ControlInput::new(u, ctx.u_bar())?, ctx, w) };
            let (v0, vl, vr) = (at(0.0)?, at(un)?, at(up)?);
            let classification = if v0 < vl && v0 < vr {
                Extremum::LocalMin
            } else if v0 > vl && v0 > vr {
                Extremum::LocalMax
            } else {
                Extremum::Neither
            };
            Ok(SigmaRow { index: r, is_target: r == w.n_bar, classification, v_zero: v0, v_left: vl, v_right: vr })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let passed = rows
        .iter()
        .all(|row| row.classification == if row.is_target { Extremum::LocalMin } else { Extremum::LocalMax });
    Ok(SigmaReport { rows, passed })
}
