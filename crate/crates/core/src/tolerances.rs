//! Numerical tolerances shared across the crate.
//!
//! Every threshold used by a validity check lives here so tests and
//! runtime checks agree on the same numbers.

/// Hermiticity defect allowed for a density operator, Frobenius norm.
pub const HERMITIAN: f64 = 1e-10;
/// Allowed deviation of the trace from one.
pub const TRACE: f64 = 1e-10;
/// Most negative eigenvalue tolerated before a state is rejected.
pub const PSD: f64 = 1e-9;
/// Tolerance applied to post-measurement states.
pub const POST_MEASURE: f64 = 1e-8;
/// Imaginary part allowed on a diagonal (population) entry.
pub const POPULATION_IMAG: f64 = 1e-12;
/// Simplex membership of probability vectors.
pub const SIMPLEX: f64 = 1e-10;
/// Row sums of likelihood matrices.
pub const LIKELIHOOD_ROW: f64 = 1e-12;
/// Rates below this produce no jump operator.
pub const JUMP_PRUNE: f64 = 1e-15;
/// Upper bound on `T dt phi1 gamma_max` for the Euler channel.
pub const EULER_STABILITY: f64 = 0.5;
/// Residual accepted for the steady state, Frobenius norm of the generator.
pub const STEADY_RESIDUAL: f64 = 1e-9;
/// Step budget for the steady state integrator.
pub const STEADY_MAX_STEPS: usize = 1_000_000;
/// Relative row-sum defect accepted for the R matrix.
pub const R_ROW_SUM: f64 = 1e-8;
/// Off-diagonal entries of R may dip below zero by this much (relative).
pub const R_OFFDIAG: f64 = 1e-12;
/// Componentwise backward error of `R sigma = lambda`.
pub const SIGMA_RESIDUAL: f64 = 1e-8;
/// Margin used when deciding that `p_gamma` leaves the conditional interval.
pub const STP_MARGIN: f64 = 1e-6;
/// Target population counted as converged.
pub const CONVERGED_POPULATION: f64 = 0.99;
/// Consecutive rounds above the threshold needed to declare convergence.
pub const CONVERGED_ROUNDS: usize = 5;
/// Default membership tolerance for `phi(x) = 0`.
pub const D1_PHI: f64 = 1e-6;
/// Standard errors used by the verifier before flagging a violation.
pub const SIGMA_SLACK: f64 = 3.0;
/// Probability range slack for integrated continuous-time flows.
pub const FLOW_PROBABILITY: f64 = 1e-9;
/// Default finite-difference step for channel derivatives.
pub const FD_STEP: f64 = 1e-4;
/// Fraction of the oscillation horizon treated as transient.
pub const OSC_TRANSIENT: f64 = 0.05;
/// Fraction of the horizon used as the convergence window by the verifier.
pub const VERIFY_WINDOW: f64 = 0.10;
/// A finite sequence counts as tending to zero when the sup over its second
/// half is at most this fraction of the sup over its first half.
pub const VERIFY_DECAY: f64 = 0.5;
/// First differences at or below this are treated as flat when counting
/// derivative sign changes.
pub const OSC_FLAT: f64 = 1e-12;
