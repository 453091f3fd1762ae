use nalgebra::{DMatrix, DVector};

use super::newton::{exp_values, DampedNormal, Instance};
use super::{ProjectionResult, SolverError};
use crate::compiler::KktSystem;

/// Differentiation strategy for the projection map `ŷ0 ↦ ỹ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VjpMode {
    /// Implicit function theorem at the solution: `Jᵀw = Sᵀv`, grad `= Pᵀw`.
    #[default]
    Implicit,
    /// Forward-mode tangents through the recorded Gauss-Newton iterations,
    /// step lengths held fixed. Needs `record_trajectory`.
    Unrolled,
}

/// Regularization of the normal-equation fallback of the implicit adjoint.
const ADJOINT_GAMMA: f64 = 1e-12;

/// `vᵀ ∂ỹ/∂ŷ0` for a converged projection.
pub fn projection_vjp(
    sys: &KktSystem,
    sol: &ProjectionResult,
    v: &[f64],
    mode: VjpMode,
) -> Result<Vec<f64>, SolverError> {
    if !sol.converged {
        return Err(SolverError::NotConverged {
            residual: sol.residual_inf,
        });
    }
    projection_vjp_unchecked(sys, sol, v, mode)
}

/// Like [`projection_vjp`] but also accepts a best, non-converged iterate.
pub fn projection_vjp_unchecked(
    sys: &KktSystem,
    sol: &ProjectionResult,
    v: &[f64],
    mode: VjpMode,
) -> Result<Vec<f64>, SolverError> {
    let p = sys.catalog.p();
    if v.len() != p {
        return Err(SolverError::Dimension(format!("upstream has {} entries, expected {p}", v.len())));
    }
    let x = &sol.xs[..sys.catalog.base_inputs];
    let inst = Instance::new(sys, x, &sol.y0)?;
    match mode {
        VjpMode::Implicit => implicit(&inst, sol, v),
        VjpMode::Unrolled => unrolled(sys, &inst, sol, v),
    }
}

fn implicit(inst: &Instance, sol: &ProjectionResult, v: &[f64]) -> Result<Vec<f64>, SolverError> {
    let j = inst.jacobian(&sol.tau)?;
    let n = j.ncols();
    let mut sv = DVector::zeros(n);
    sv.rows_mut(0, v.len()).copy_from_slice(v);
    let jt = j.transpose();
    let w = match jt.clone().lu().solve(&sv) {
        Some(w) if w.iter().all(|x| x.is_finite()) && (&jt * &w - &sv).amax() <= 1e-8 * (1.0 + sv.amax()) => w,
        _ => {
            // Jᵀw = Sᵀv in least-squares form: w = J (JᵀJ + γI)⁻¹ Sᵀv
            let mut m = &jt * &j;
            for d in 0..n {
                m[(d, d)] += ADJOINT_GAMMA * (1.0 + m[(d, d)]);
            }
            let u = m
                .cholesky()
                .ok_or(SolverError::LinearSolve { gamma: ADJOINT_GAMMA })?
                .solve(&sv);
            &j * u
        }
    };
    // dτ/dŷ0 = −J⁻¹ ∂F/∂ŷ0
    let g = -(inst.d_y0().transpose() * w);
    Ok(g.iter().copied().collect())
}

fn unrolled(sys: &KktSystem, inst: &Instance, sol: &ProjectionResult, v: &[f64]) -> Result<Vec<f64>, SolverError> {
    if sol.iters > 0 && sol.trajectory.is_empty() {
        return Err(SolverError::Config("unrolled differentiation needs record_trajectory".into()));
    }
    // Steps leading to the returned iterate (the best one if not converged).
    let mut steps = sol.trajectory.len();
    if let Some(k) = sol.trajectory.iter().position(|s| s.tau == sol.tau) {
        steps = k;
    }
    let tau0 = sol.trajectory.first().map_or(&sol.tau, |s| &s.tau);
    let p = v.len();
    let n = sys.n_unknowns();
    let dfdy0 = inst.d_y0();
    let plan = sys.plan();
    let active = sys.active_rows();
    let mut local = vec![usize::MAX; plan.n_rows];
    for (k, &i) in active.iter().enumerate() {
        local[i] = k;
    }
    let mut tangents = DMatrix::zeros(n, p);
    for j in 0..p {
        // components clamped by a restart do not follow ŷ0
        let mut e = vec![0.0; p];
        e[j] = if sol.start[j] == sol.y0[j] { 1.0 } else { 0.0 };
        let t = sys.initial_tangent(&inst.xs, tau0, &sol.start, &e);
        tangents.column_mut(j).copy_from_slice(&t);
    }
    for step in &sol.trajectory[..steps] {
        let tau = &step.tau;
        let f = inst.residual(tau)?;
        let jac = inst.jacobian(tau)?;
        let jt = jac.transpose();
        let normal = DampedNormal::new(&jac, step.gamma);
        let failed = SolverError::LinearSolve { gamma: step.gamma };
        let delta = -normal.solve(&(&jt * &f)).ok_or(failed.clone())?;
        let exps = exp_values(plan, tau)?;
        for j in 0..p {
            let dt = tangents.column(j).clone_owned();
            let df = &jac * &dt + dfdy0.column(j);
            // dJ from the exponential terms: −g e^{h·τ} (h·dτ) h
            let mut dj = DMatrix::zeros(jac.nrows(), n);
            for ((rows, h), ev) in plan.exps.iter().zip(&exps) {
                let hd: f64 = h.iter().map(|&(c, hv)| hv * dt[c]).sum();
                for &(r, g) in rows {
                    for &(c, hv) in h {
                        dj[(local[r], c)] -= g * ev * hd * hv;
                    }
                }
            }
            let dm_delta = dj.transpose() * (&jac * &delta) + &jt * (&dj * &delta);
            let djtf = dj.transpose() * &f + &jt * df;
            let ddelta = -normal.solve(&(dm_delta + djtf)).ok_or(failed.clone())?;
            let next = dt + step.alpha * ddelta;
            tangents.column_mut(j).copy_from(&next);
        }
    }
    Ok((0..p)
        .map(|j| (0..p).map(|i| v[i] * tangents[(i, j)]).sum())
        .collect())
}
