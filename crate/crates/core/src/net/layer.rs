use rayon::prelude::*;

use crate::compiler::{assemble_kkt, logexp_transform, CompileError, CompileOptions, KktSystem};
use crate::expr::ConstraintSet;
use crate::solver::{
    project_newton, projection_vjp_unchecked, AffineProjector, LinearOutputProjector, PinvMode, ProjectionResult,
    SolverConfig, SolverError, VjpMode,
};

/// Differentiable map from the raw prediction `ŷ0` to a feasible output.
#[derive(Debug, Clone)]
pub enum Projection {
    /// Gauss-Newton on the compiled KKT system.
    Newton {
        sys: KktSystem,
        solver: SolverConfig,
        vjp: VjpMode,
    },
    /// Closed form for outputs entering linearly with constant coefficients.
    Affine { sys: KktSystem, projector: AffineProjector },
    /// Closed form rebuilt per sample for input-dependent coefficients.
    LinearOutput(LinearOutputProjector),
}

#[derive(Debug, Clone)]
pub struct Projected {
    pub y: Vec<f64>,
    pub converged: bool,
    /// Solver state; absent for closed forms and when the solver errored,
    /// in which case `y = ŷ0`.
    pub result: Option<Box<ProjectionResult>>,
}

#[derive(Debug, thiserror::Error)]
pub enum LayerError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl Projection {
    pub fn newton(cs: &ConstraintSet, opts: &CompileOptions, solver: SolverConfig, vjp: VjpMode) -> Result<Self, LayerError> {
        let sys = assemble_kkt(cs, opts)?;
        let solver = SolverConfig {
            record_trajectory: solver.record_trajectory || vjp == VjpMode::Unrolled,
            ..solver
        };
        solver.validate()?;
        Ok(Projection::Newton { sys, solver, vjp })
    }

    pub fn affine(cs: &ConstraintSet, mode: PinvMode) -> Result<Self, LayerError> {
        let sys = logexp_transform(cs, &CompileOptions::default())?;
        let projector = AffineProjector::from_system(&sys, mode)?;
        Ok(Projection::Affine { sys, projector })
    }

    pub fn linear_output(cs: &ConstraintSet, mode: PinvMode) -> Result<Self, LayerError> {
        Ok(Projection::LinearOutput(LinearOutputProjector::new(cs, mode)?))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Projection::Newton { .. } => "newton",
            Projection::Affine { .. } => "affine",
            Projection::LinearOutput(_) => "linear-output",
        }
    }

    pub fn project(&self, x: &[f64], y0: &[f64]) -> Result<Projected, SolverError> {
        match self {
            Projection::Newton { sys, solver, .. } => match project_newton(sys, x, y0, solver) {
                Ok(r) => Ok(Projected {
                    y: r.y.clone(),
                    converged: r.converged,
                    result: Some(Box::new(r)),
                }),
                Err(SolverError::Overflow { .. } | SolverError::LinearSolve { .. }) => Ok(Projected {
                    y: y0.to_vec(),
                    converged: false,
                    result: None,
                }),
                Err(e) => Err(e),
            },
            Projection::Affine { sys, projector } => Ok(Projected {
                y: projector.project(&sys.lift_inputs(x), y0),
                converged: true,
                result: None,
            }),
            Projection::LinearOutput(lp) => Ok(Projected {
                y: lp.project(x, y0)?,
                converged: true,
                result: None,
            }),
        }
    }

    /// Projects every sample concurrently; results keep the input order.
    pub fn project_all(&self, xs: &[Vec<f64>], y0s: &[Vec<f64>]) -> Result<Vec<Projected>, SolverError> {
        xs.par_iter().zip(y0s.par_iter()).map(|(x, y0)| self.project(x, y0)).collect()
    }

    /// `vᵀ ∂ỹ/∂ŷ0`. Unconverged Newton projections are differentiated at
    /// their best iterate; a solver failure passes `v` through unchanged.
    pub fn vjp(&self, x: &[f64], out: &Projected, v: &[f64]) -> Result<Vec<f64>, SolverError> {
        match self {
            Projection::Newton { sys, vjp, .. } => match &out.result {
                Some(r) => projection_vjp_unchecked(sys, r, v, *vjp),
                None => Ok(v.to_vec()),
            },
            Projection::Affine { projector, .. } => {
                let bt = projector.b_star.transpose();
                Ok((bt * nalgebra::DVector::from_column_slice(v)).iter().copied().collect())
            }
            Projection::LinearOutput(lp) => lp.vjp(x, v),
        }
    }
}
