//! Built-in experiment configurations.
//!
//! The human sensor is exact and the machine sensor carries no information,
//! so the machine's target action is the utility maximiser under the prior.

use super::config::{ExperimentConfig, NatureSpec, Rho0Spec, TLaw, TargetSpec, ZetaSpec};

fn nature(n: usize) -> NatureSpec {
    NatureSpec {
        prior: vec![1.0 / n as f64; n],
        likelihood_y: (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        likelihood_z: vec![vec![1.0 / n as f64; n]; n],
    }
}

fn base(n: usize, m: usize, phi1: f64) -> ExperimentConfig {
    ExperimentConfig {
        n,
        m,
        phi1,
        phi2: 10.0,
        l: 2,
        zeta: ZetaSpec::Random("uniform_random(lo=0, hi=10, seed)".into()),
        dt: 0.01,
        t_law: TLaw::Fixed(10),
        rounds: 200,
        seeds: (0..20).collect(),
        target: TargetSpec::Named("auto".into()),
        nature: Some(nature(n)),
        phi3_sweep: None,
        u_bar: 1.0,
        grid_points: 201,
        coupling: None,
        rho0: Some(Rho0Spec::Named("uniform".into())),
        substep: false,
        phi1_grid: None,
        gamma: None,
        phi3: None,
        horizon: None,
    }
}

/// Two states, four actions, `phi1 = 0.8`, `T = 10`.
pub fn example1() -> ExperimentConfig {
    base(2, 4, 0.8)
}

/// [`example1`] with the interval drawn uniformly from {5, 10, 15}.
pub fn example1_random_t() -> ExperimentConfig {
    ExperimentConfig { t_law: TLaw::Distribution { support: vec![5, 10, 15], probs: vec![1.0 / 3.0; 3] }, ..example1() }
}

/// Two states, two actions, `phi1 = 0.25`.
pub fn example2() -> ExperimentConfig {
    base(2, 2, 0.25)
}

/// Cross-section at `phi1 = 0.2857` over 41 values of `phi3`, control held at 0.5.
pub fn stp_surface() -> ExperimentConfig {
    ExperimentConfig {
        phi3_sweep: Some((0..41).map(|i| i as f64 / 40.0).collect()),
        coupling: Some(0.5),
        gamma: Some(vec![0.5, 0.5]),
        seeds: vec![2],
        ..base(2, 2, 0.2857)
    }
}

/// Uncontrolled evolution with `phi3 = 0.5` from the uniform state.
pub fn oscillation(phi1: f64) -> ExperimentConfig {
    ExperimentConfig { phi3: Some(0.5), horizon: Some(20.0), seeds: vec![0], ..base(2, 2, phi1) }
}
