//! Stochastic Lyapunov feedback: weight construction, the Lyapunov function
//! and the argmin control law.

pub mod derivatives;
pub mod lyapunov;
pub mod rmatrix;
pub mod sigma;

pub use derivatives::{analytic_derivatives, channel_derivatives, ChannelDerivatives};
pub use lyapunov::{
    choose_u, control_grid, expected_v, lyapunov_v, validate_sigma, ControlContext, Extremum, SigmaReport,
};
pub use rmatrix::{build_r, lemma_matrix, RMatrix};
pub use sigma::{solve_sigma, solve_sigma_blockwise, SigmaWeights};
