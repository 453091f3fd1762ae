//! Per-sample projection onto the constraint set.
//!
//! [`project_newton`] runs damped, Tikhonov-regularized Gauss-Newton on a
//! compiled [`KktSystem`](crate::compiler::KktSystem). Problems that are
//! affine in the outputs can use [`AffineProjector`] instead. Gradients of the
//! projection map with respect to the raw prediction come from
//! [`projection_vjp`].

mod affine;
mod newton;
mod oracle;
mod vjp;

pub use affine::{AffineProjector, LinearOutputProjector, PinvMode};
pub use newton::{jacobian, project_batch, project_newton, residual, Instance};
pub use oracle::{project_oracle, OracleError};
pub use vjp::{projection_vjp, projection_vjp_unchecked, VjpMode};

/// Step length rule of the Gauss-Newton update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    Fixed(f64),
    /// Armijo backtracking on `½‖F‖²`: start at `alpha0`, shrink by `beta`
    /// until the decrease exceeds `c·α·∇φᵀΔ`.
    Backtracking { c: f64, beta: f64, alpha0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop when `‖F‖∞ ≤ tol`.
    pub tol: f64,
    /// Tikhonov constant of `(JᵀJ + γₖI)Δ = −JᵀF`, applied as
    /// `γₖ = γ·min(1, ‖F‖∞)²`. Columns of logs of vanishing quantities scale
    /// with those quantities, so larger values stall convergence.
    pub gamma: f64,
    pub step: StepPolicy,
    /// Start value of positive multipliers and slacks. Logs of variables
    /// that end at zero shrink by about one unit per step, so a small seed
    /// saves iterations.
    pub eps_init: f64,
    /// Keep the iterates needed by unrolled differentiation.
    pub record_trajectory: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 30,
            tol: 1e-10,
            gamma: 1e-12,
            step: StepPolicy::Backtracking {
                c: 1e-4,
                beta: 0.5,
                alpha0: 1.0,
            },
            eps_init: 1e-9,
            record_trajectory: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let ok_step = match self.step {
            StepPolicy::Fixed(a) => a > 0.0 && a <= 1.0,
            StepPolicy::Backtracking { c, beta, alpha0 } => {
                c > 0.0 && c < 1.0 && beta > 0.0 && beta < 1.0 && alpha0 > 0.0 && alpha0 <= 1.0
            }
        };
        if self.max_iters == 0 || !(self.tol > 0.0) || !(self.gamma > 0.0) || !(self.eps_init > 0.0) || !ok_step {
            return Err(SolverError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

/// One accepted Gauss-Newton step, kept for unrolled differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// Iterate before the step.
    pub tau: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Full unknown vector `[y | z | λ]`.
    pub tau: Vec<f64>,
    /// Lifted inputs.
    pub xs: Vec<f64>,
    pub y0: Vec<f64>,
    /// Output start of the run that produced `tau`; differs from `y0` after
    /// a restart.
    pub start: Vec<f64>,
    pub residual_inf: f64,
    pub iters: usize,
    pub converged: bool,
    /// Times γ had to be raised for a linear solve.
    pub gamma_escalations: usize,
    pub trajectory: Vec<Step>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("system carries no KKT rows; compile it with assemble_kkt")]
    NotKkt,
    #[error("exponential overflow in row {row}")]
    Overflow { row: usize },
    #[error("linear solve failed even with gamma = {gamma}")]
    LinearSolve { gamma: f64 },
    #[error("projection did not converge (residual {residual:e})")]
    NotConverged { residual: f64 },
    #[error("constraint matrix has rank {rank} < {rows} rows; enable pseudo-inverse mode")]
    RankDeficient { rank: usize, rows: usize },
    #[error("constraints are not affine in the outputs: {0}")]
    NotAffine(String),
}
