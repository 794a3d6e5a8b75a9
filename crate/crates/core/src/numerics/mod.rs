//! Linear algebra and ODE integration shared by every other module.

pub mod linalg;
pub mod ode;

pub use linalg::{
    check_hurwitz, diag, frobenius, gain_matrices, pack, solve_lyapunov, unpack, solve_lyapunov_diag, spectral_norm, ComplexMatrix,
    GainMatrices, LyapunovSolution,
};
pub use ode::{integrate, integrate_to, integrate_with, suggest_first_step, DenseStep, Escape, EscapeReason, OdeOptions, Trajectory};
