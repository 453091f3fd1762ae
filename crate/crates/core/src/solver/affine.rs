use nalgebra::{DMatrix, DVector};

use super::SolverError;
use crate::compiler::KktSystem;
use crate::expr::{ConstraintSet, Polynomial, SlotExpr};

/// Handling of a rank-deficient `BBᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PinvMode {
    /// Require full row rank; zero rows of `B` are dropped first.
    #[default]
    Strict,
    /// Keep every row and use the Moore-Penrose pseudo-inverse of `BBᵀ`.
    Pinv,
}

const RANK_TOL: f64 = 1e-12;

/// Closed-form projector for constraints `B y + A x + A_x e^{x} = b`:
/// `ỹ = A* x + B* ŷ0 + A_x* e^{x} + b*`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineProjector {
    pub a_star: DMatrix<f64>,
    pub b_star: DMatrix<f64>,
    pub ax_star: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    /// Rows of `B` the projector was built from.
    pub b_active: DMatrix<f64>,
    pub active_rows: Vec<usize>,
    coef: DMatrix<f64>,
}

fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|s| **s > RANK_TOL * top.max(1.0)).count()
}

impl AffineProjector {
    pub fn build(
        b: &DMatrix<f64>,
        a: &DMatrix<f64>,
        a_x: &DMatrix<f64>,
        rhs: &DVector<f64>,
        mode: PinvMode,
    ) -> Result<Self, SolverError> {
        let rows: Vec<usize> = match mode {
            PinvMode::Strict => (0..b.nrows()).filter(|&i| b.row(i).iter().any(|v| *v != 0.0)).collect(),
            PinvMode::Pinv => (0..b.nrows()).collect(),
        };
        let pick = |m: &DMatrix<f64>| m.select_rows(rows.iter());
        let (bb, aa, ax) = (pick(b), pick(a), pick(a_x));
        let r = DVector::from_iterator(rows.len(), rows.iter().map(|&i| rhs[i]));
        let gram = &bb * bb.transpose();
        let k = match mode {
            PinvMode::Strict => {
                let rk = rank(&gram);
                if rk < rows.len() {
                    return Err(SolverError::RankDeficient { rank: rk, rows: rows.len() });
                }
                gram.clone()
                    .try_inverse()
                    .ok_or(SolverError::RankDeficient { rank: rk, rows: rows.len() })?
            }
            PinvMode::Pinv => gram
                .clone()
                .pseudo_inverse(RANK_TOL)
                .map_err(|e| SolverError::Dimension(e.to_string()))?,
        };
        let coef = bb.transpose() * k;
        let p = b.ncols();
        Ok(AffineProjector {
            a_star: -(&coef * aa),
            b_star: DMatrix::identity(p, p) - &coef * &bb,
            ax_star: -(&coef * ax),
            b_vec: &coef * r,
            b_active: bb,
            active_rows: rows,
            coef,
        })
    }

    /// Builds from a constraint transform whose outputs enter linearly and
    /// need no auxiliaries.
    pub fn from_system(sys: &KktSystem, mode: PinvMode) -> Result<Self, SolverError> {
        let cat = &sys.catalog;
        let s = &sys.structured;
        let (_, n2, n3) = s.block_sizes();
        if cat.q() > 0 || cat.r() > 0 || n2 + n3 > 0 {
            return Err(SolverError::NotAffine(format!(
                "{} auxiliaries and {} multipliers on the unknown side",
                cat.q(),
                cat.r()
            )));
        }
        Self::build(&s.b_y, &s.a, &s.a_x, &s.b, mode)
    }

    /// `Bᵀ(BBᵀ)⁻¹`, the update applied to the constraint residual.
    pub fn update_coefficients(&self) -> &DMatrix<f64> {
        &self.coef
    }

    /// Projection at lifted inputs `xs`.
    pub fn project(&self, xs: &[f64], y0: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(xs);
        // only exponentiate columns that carry a coefficient
        let ex = DVector::from_iterator(
            xs.len(),
            xs.iter().enumerate().map(|(j, v)| {
                if self.ax_star.column(j).iter().any(|a| *a != 0.0) {
                    v.exp()
                } else {
                    0.0
                }
            }),
        );
        let y = &self.a_star * x + &self.b_star * DVector::from_column_slice(y0) + &self.ax_star * ex + &self.b_vec;
        y.iter().copied().collect()
    }
}

/// Projector for equality sets affine in the outputs with input-dependent
/// coefficients, e.g. `L − R·F_D = 0`. The matrix `B(x)` is rebuilt per sample.
#[derive(Debug, Clone)]
pub struct LinearOutputProjector {
    m: usize,
    p: usize,
    residuals: Vec<SlotExpr>,
    gradients: Vec<Vec<SlotExpr>>,
    mode: PinvMode,
}

impl LinearOutputProjector {
    pub fn new(cs: &ConstraintSet, mode: PinvMode) -> Result<Self, SolverError> {
        if !cs.inequalities.is_empty() {
            return Err(SolverError::NotAffine("inequalities present".into()));
        }
        let mut slots: Vec<&str> = cs.input_names();
        slots.extend(cs.output_names());
        let outputs = cs.output_names();
        let mut residuals = Vec::new();
        let mut gradients = Vec::new();
        for c in &cs.equalities {
            let mut row = Vec::new();
            for y in &outputs {
                let d = c.lhs.diff(y);
                for y2 in &outputs {
                    if !Polynomial::from_expr(&d.diff(y2)).terms.is_empty() {
                        return Err(SolverError::NotAffine(format!("`{}` is nonlinear in {y} and {y2}", c.label)));
                    }
                }
                row.push(SlotExpr::compile(&d, &slots));
            }
            residuals.push(SlotExpr::compile(&c.lhs, &slots));
            gradients.push(row);
        }
        Ok(LinearOutputProjector {
            m: cs.m(),
            p: cs.p(),
            residuals,
            gradients,
            mode,
        })
    }

    /// `(B(x), c(x, 0))` with `c(x, y) = B(x) y + c(x, 0)`.
    pub fn linearize(&self, x: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let mut pt = x.to_vec();
        pt.resize(self.m + self.p, 0.0);
        let n = self.residuals.len();
        let b = DMatrix::from_fn(n, self.p, |k, j| self.gradients[k][j].eval(&pt));
        let c0 = DVector::from_iterator(n, self.residuals.iter().map(|r| r.eval(&pt)));
        (b, c0)
    }

    pub fn projector_at(&self, x: &[f64]) -> Result<AffineProjector, SolverError> {
        let (b, c0) = self.linearize(x);
        let n = b.nrows();
        AffineProjector::build(&b, &DMatrix::zeros(n, 0), &DMatrix::zeros(n, 0), &(-c0), self.mode)
    }

    pub fn project(&self, x: &[f64], y0: &[f64]) -> Result<Vec<f64>, SolverError> {
        Ok(self.projector_at(x)?.project(&[], y0))
    }

    /// Jacobian `∂ỹ/∂ŷ0 = B*` at `x`; the map is affine in `ŷ0`.
    pub fn vjp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, SolverError> {
        let pr = self.projector_at(x)?;
        Ok((pr.b_star.transpose() * DVector::from_column_slice(v)).iter().copied().collect())
    }
}
