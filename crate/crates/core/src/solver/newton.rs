use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{ProjectionResult, SolverConfig, SolverError, Step, StepPolicy};
use crate::compiler::{row_constant, AuxDef, KktSystem, Segment, SparsePlan};

/// Largest exponent accepted before `exp` overflows.
const MAX_EXPONENT: f64 = 709.0;
const MAX_BACKTRACKS: usize = 40;
const GAMMA_ESCALATIONS: usize = 3;
const RESTART_FLOOR: f64 = 1.0;
const LU_PIVOT_RATIO: f64 = 1e-6;
/// Multiplier and slack seed of the last restart, relative to the tolerance.
const SMALL_SEED: f64 = 1e-2;

/// Values `e^{hₑ·τ}` of every exponential term.
pub(crate) fn exp_values(plan: &SparsePlan, tau: &[f64]) -> Result<Vec<f64>, SolverError> {
    plan.exps
        .iter()
        .map(|(rows, h)| {
            let arg: f64 = h.iter().map(|&(j, v)| v * tau[j]).sum();
            if arg > MAX_EXPONENT || arg.is_nan() {
                Err(SolverError::Overflow {
                    row: rows.first().map_or(0, |r| r.0),
                })
            } else {
                Ok(arg.exp())
            }
        })
        .collect()
}

/// One projection problem: a compiled system at fixed inputs and raw output.
#[derive(Debug, Clone)]
pub struct Instance<'a> {
    pub sys: &'a KktSystem,
    pub xs: Vec<f64>,
    pub y0: Vec<f64>,
    consts: Vec<f64>,
    /// Active-row position of each global row.
    local: Vec<Option<usize>>,
}

impl<'a> Instance<'a> {
    pub fn new(sys: &'a KktSystem, x: &[f64], y0: &[f64]) -> Result<Self, SolverError> {
        let cat = &sys.catalog;
        if x.len() != cat.base_inputs || y0.len() != cat.p() {
            return Err(SolverError::Dimension(format!(
                "expected {} inputs and {} outputs, got {} and {}",
                cat.base_inputs,
                cat.p(),
                x.len(),
                y0.len()
            )));
        }
        let xs = sys.lift_inputs(x);
        let plan = sys.plan();
        let consts = (0..plan.n_rows).map(|i| row_constant(plan, i, &xs, y0)).collect();
        let mut local = vec![None; plan.n_rows];
        for (k, &i) in sys.active_rows().iter().enumerate() {
            local[i] = Some(k);
        }
        Ok(Instance {
            sys,
            xs,
            y0: y0.to_vec(),
            consts,
            local,
        })
    }

    fn plan(&self) -> &SparsePlan {
        self.sys.plan()
    }

    /// Residual of every row, including rows over inputs only.
    pub fn residual_all(&self, tau: &[f64]) -> Result<Vec<f64>, SolverError> {
        let plan = self.plan();
        let exps = exp_values(plan, tau)?;
        let mut f: Vec<f64> = (0..plan.n_rows)
            .map(|i| self.consts[i] + plan.lin[i].iter().map(|&(j, v)| v * tau[j]).sum::<f64>())
            .collect();
        for ((rows, _), e) in plan.exps.iter().zip(&exps) {
            for &(r, g) in rows {
                f[r] -= g * e;
            }
        }
        Ok(f)
    }

    /// Residual restricted to the active rows.
    pub fn residual(&self, tau: &[f64]) -> Result<DVector<f64>, SolverError> {
        let all = self.residual_all(tau)?;
        Ok(DVector::from_iterator(
            self.sys.active_rows().len(),
            self.sys.active_rows().iter().map(|&i| all[i]),
        ))
    }

    /// Jacobian of the active rows with respect to τ.
    pub fn jacobian(&self, tau: &[f64]) -> Result<DMatrix<f64>, SolverError> {
        let plan = self.plan();
        let exps = exp_values(plan, tau)?;
        let mut j = DMatrix::zeros(self.sys.active_rows().len(), plan.n_unknowns);
        for (k, &i) in self.sys.active_rows().iter().enumerate() {
            for &(c, v) in &plan.lin[i] {
                j[(k, c)] += v;
            }
        }
        for ((rows, h), e) in plan.exps.iter().zip(&exps) {
            for &(r, g) in rows {
                let k = self.local[r].expect("exponential row is active");
                for &(c, hv) in h {
                    j[(k, c)] -= g * e * hv;
                }
            }
        }
        Ok(j)
    }

    /// `∂F/∂ŷ0` over the active rows.
    pub fn d_y0(&self) -> DMatrix<f64> {
        let plan = self.plan();
        let mut d = DMatrix::zeros(self.sys.active_rows().len(), self.y0.len());
        for (k, &i) in self.sys.active_rows().iter().enumerate() {
            for &(j, v) in &plan.y0[i] {
                d[(k, j)] -= v;
            }
        }
        d
    }
}

/// Residual `F` of all rows at `τ`.
pub fn residual(sys: &KktSystem, x: &[f64], y0: &[f64], tau: &[f64]) -> Result<Vec<f64>, SolverError> {
    check_tau(sys, tau)?;
    Instance::new(sys, x, y0)?.residual_all(tau)
}

/// Jacobian of all rows with respect to τ; independent of the inputs.
pub fn jacobian(sys: &KktSystem, tau: &[f64]) -> Result<DMatrix<f64>, SolverError> {
    check_tau(sys, tau)?;
    let plan = sys.plan();
    let exps = exp_values(plan, tau)?;
    let mut j = DMatrix::zeros(plan.n_rows, plan.n_unknowns);
    for (i, row) in plan.lin.iter().enumerate() {
        for &(c, v) in row {
            j[(i, c)] += v;
        }
    }
    for ((rows, h), e) in plan.exps.iter().zip(&exps) {
        for &(r, g) in rows {
            for &(c, hv) in h {
                j[(r, c)] -= g * e * hv;
            }
        }
    }
    Ok(j)
}

fn check_tau(sys: &KktSystem, tau: &[f64]) -> Result<(), SolverError> {
    if tau.len() != sys.n_unknowns() {
        return Err(SolverError::Dimension(format!(
            "expected {} unknowns, got {}",
            sys.n_unknowns(),
            tau.len()
        )));
    }
    Ok(())
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| if x.is_nan() { f64::NAN } else { a.max(x.abs()) })
}

/// Factorization `JᵀJ + γI = RᵀR` from a QR of `[J; √γ I]`, which avoids
/// squaring the condition number of `J`.
pub(crate) struct DampedNormal {
    r: DMatrix<f64>,
}

impl DampedNormal {
    pub(crate) fn new(j: &DMatrix<f64>, gamma: f64) -> Self {
        let (m, n) = j.shape();
        let mut aug = DMatrix::zeros(m + n, n);
        aug.view_mut((0, 0), (m, n)).copy_from(j);
        for d in 0..n {
            aug[(m + d, d)] = gamma.sqrt();
        }
        DampedNormal { r: aug.qr().r() }
    }

    /// `(JᵀJ + γI)⁻¹ rhs`.
    pub(crate) fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let y = self.r.tr_solve_upper_triangular(rhs)?;
        let x = self.r.solve_upper_triangular(&y)?;
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Solves `(JᵀJ + γI)Δ = −JᵀF`, raising γ tenfold if the solve fails.
///
/// A square `J` whose LU pivots stay within `LU_PIVOT_RATIO` of each other
/// takes the plain Newton step, which differs from the damped one by
/// `O(γ/σ_min²)`.
pub(crate) fn gauss_newton_step(
    j: &DMatrix<f64>,
    f: &DVector<f64>,
    gamma: f64,
) -> Result<(DVector<f64>, f64, usize), SolverError> {
    if j.is_square() {
        let lu = j.clone().lu();
        let u = lu.u();
        let pivots = u.diagonal().abs();
        if pivots.min() > LU_PIVOT_RATIO * pivots.max() {
            if let Some(delta) = lu.solve(&(-f)).filter(|d| d.iter().all(|v| v.is_finite())) {
                return Ok((delta, gamma, 0));
            }
        }
    }
    let g = -(j.transpose() * f);
    let mut gamma = gamma;
    for esc in 0..=GAMMA_ESCALATIONS {
        if let Some(delta) = DampedNormal::new(j, gamma).solve(&g) {
            return Ok((delta, gamma, esc));
        }
        gamma *= 10.0;
    }
    Err(SolverError::LinearSolve { gamma: gamma / 10.0 })
}

/// Exponential links `v = e^{h·τ}`: rows whose only linear term is `v` with
/// unit coefficient and that carry a single unit exponential.
pub(crate) fn exp_links(sys: &KktSystem) -> Vec<(usize, Vec<(usize, f64)>)> {
    let plan = sys.plan();
    let mut out = Vec::new();
    for (rows, h) in &plan.exps {
        let [(r, g)] = rows.as_slice() else { continue };
        let [(v, c)] = plan.lin[*r].as_slice() else { continue };
        let homogeneous = plan.rhs[*r] == 0.0 && plan.input_lin[*r].is_empty() && plan.input_exp[*r].is_empty();
        if *g == 1.0 && *c == 1.0 && homogeneous && plan.y0[*r].is_empty() && h.iter().all(|t| t.0 != *v) {
            out.push((*v, h.clone()));
        }
    }
    out
}

/// Puts every exponential link back on its curve after a step. Keeps
/// exp-parameterized multipliers strictly positive and lets the logs carry
/// the step.
pub(crate) fn resync(tau: &mut [f64], links: &[(usize, Vec<(usize, f64)>)]) {
    for (v, h) in links {
        let arg: f64 = h.iter().map(|&(j, c)| c * tau[j]).sum();
        tau[*v] = arg.exp();
    }
}

struct Attempt {
    tau: Vec<f64>,
    norm: f64,
    iters: usize,
    escalations: usize,
    trajectory: Vec<Step>,
}

/// Gauss-Newton from `tau`; returns the last iterate if converged, else the best.
fn attempt(
    inst: &Instance,
    mut tau: Vec<f64>,
    links: &[(usize, Vec<(usize, f64)>)],
    cfg: &SolverConfig,
) -> Result<Attempt, SolverError> {
    let mut f = inst.residual(&tau)?;
    let mut norm = inf_norm(&f);
    let mut best = (norm, tau.clone());
    let mut iters = 0;
    let mut escalations = 0;
    let mut trajectory = Vec::new();

    while iters < cfg.max_iters && !(norm <= cfg.tol) {
        let j = inst.jacobian(&tau)?;
        // damping fades as the residual shrinks so the last steps are full Newton
        let (delta, gamma, esc) = gauss_newton_step(&j, &f, cfg.gamma * norm.min(1.0).powi(2))?;
        escalations += esc;
        let phi = 0.5 * f.norm_squared();
        let slope = (j.transpose() * &f).dot(&delta);
        let (mut alpha, armijo) = match cfg.step {
            StepPolicy::Fixed(a) => (a, None),
            StepPolicy::Backtracking { c, beta, alpha0 } => (alpha0, Some((c, beta))),
        };
        let shrink = armijo.map_or(0.5, |(_, b)| b);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = tau.iter().zip(delta.iter()).map(|(t, d)| t + alpha * d).collect();
            resync(&mut trial, links);
            match inst.residual(&trial) {
                Ok(ft) if ft.iter().all(|v| v.is_finite()) => {
                    let ok = match armijo {
                        None => true,
                        Some((c, _)) => 0.5 * ft.norm_squared() <= phi + c * alpha * slope,
                    };
                    if ok {
                        accepted = Some((trial, ft));
                        break;
                    }
                }
                _ => {}
            }
            alpha *= shrink;
        }
        let Some((trial, ft)) = accepted else {
            log::debug!("line search stalled at iteration {iters}, residual {norm:e}");
            break;
        };
        if cfg.record_trajectory {
            trajectory.push(Step {
                tau: tau.clone(),
                alpha,
                gamma,
            });
        }
        tau = trial;
        f = ft;
        norm = inf_norm(&f);
        iters += 1;
        if norm < best.0 || best.0.is_nan() {
            best = (norm, tau.clone());
        }
    }
    if !(norm <= cfg.tol) && best.0 < norm {
        norm = best.0;
        tau = best.1;
    }
    Ok(Attempt {
        tau,
        norm,
        iters,
        escalations,
        trajectory,
    })
}

/// Restart point: outputs that enter log chains are raised to at least
/// [`RESTART_FLOOR`], away from the region where those chains go stiff.
fn restart_start(sys: &KktSystem, y0: &[f64]) -> Option<Vec<f64>> {
    let cat = &sys.catalog;
    let logged: Vec<usize> = cat
        .defs
        .iter()
        .filter_map(|(_, d)| match d {
            AuxDef::Log { of } if of.seg == Segment::Y => Some(of.idx),
            _ => None,
        })
        .collect();
    let mut start = y0.to_vec();
    for i in logged {
        start[i] = start[i].max(RESTART_FLOOR);
    }
    (start != y0).then_some(start)
}

/// Projects `ŷ0` onto the constraint set at inputs `x`.
///
/// If the first run from `y = ŷ0` fails, up to two restarts are made, each
/// with a fresh budget. Non-convergence is not an error: the best iterate
/// is returned with `converged = false`.
pub fn project_newton(
    sys: &KktSystem,
    x: &[f64],
    y0: &[f64],
    cfg: &SolverConfig,
) -> Result<ProjectionResult, SolverError> {
    cfg.validate()?;
    if !sys.is_kkt {
        return Err(SolverError::NotKkt);
    }
    let inst = Instance::new(sys, x, y0)?;
    let links = exp_links(sys);
    let (_, tau0) = sys.initial_point(x, y0, cfg.eps_init);
    let mut run = attempt(&inst, tau0, &links, cfg)?;
    let mut start = y0.to_vec();
    // A shifted start for logged outputs, then a near-zero seed for
    // multipliers and slacks, which suits solutions on a degenerate boundary.
    let mut retries = Vec::new();
    if let Some(alt) = restart_start(sys, y0) {
        retries.push((alt, cfg.eps_init));
    }
    retries.push((y0.to_vec(), cfg.tol * SMALL_SEED));
    for (alt, eps) in retries {
        if run.norm <= cfg.tol {
            break;
        }
        let (_, tau1) = sys.initial_point(x, &alt, eps);
        let next = attempt(&inst, tau1, &links, cfg)?;
        if next.norm <= cfg.tol || next.norm < run.norm {
            run = next;
            start = alt;
        }
    }
    let cat = &sys.catalog;
    let (p, q) = (cat.p(), cat.q());
    let tau = run.tau;
    Ok(ProjectionResult {
        y: tau[..p].to_vec(),
        z: tau[p..p + q].to_vec(),
        lambda: tau[p + q..].to_vec(),
        xs: inst.xs.clone(),
        y0: y0.to_vec(),
        start,
        tau,
        residual_inf: run.norm,
        iters: run.iters,
        converged: run.norm <= cfg.tol,
        gamma_escalations: run.escalations,
        trajectory: run.trajectory,
    })
}

/// Projects every sample concurrently.
pub fn project_batch(
    sys: &KktSystem,
    xs: &[Vec<f64>],
    y0s: &[Vec<f64>],
    cfg: &SolverConfig,
) -> Vec<Result<ProjectionResult, SolverError>> {
    xs.par_iter()
        .zip(y0s.par_iter())
        .map(|(x, y0)| project_newton(sys, x, y0, cfg))
        .collect()
}
