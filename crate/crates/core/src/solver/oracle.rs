//! Reference projection without the log-exp machinery: multi-start penalty
//! minimization followed by Newton on the smooth active-set KKT system.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::{ConstraintSet, Relation, SlotExpr};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("oracle did not converge: {0}")]
    NoConvergence(String),
    #[error("dimension mismatch")]
    Dimension,
}

struct Model {
    m: usize,
    p: usize,
    rel: Vec<Relation>,
    val: Vec<SlotExpr>,
    grad: Vec<Vec<SlotExpr>>,
    hess: Vec<Vec<Vec<SlotExpr>>>,
}

impl Model {
    fn new(cs: &ConstraintSet) -> Self {
        let mut slots: Vec<&str> = cs.input_names();
        slots.extend(cs.output_names());
        let ys = cs.output_names();
        let mut model = Model {
            m: cs.m(),
            p: cs.p(),
            rel: Vec::new(),
            val: Vec::new(),
            grad: Vec::new(),
            hess: Vec::new(),
        };
        for c in cs.all() {
            model.rel.push(c.relation);
            model.val.push(SlotExpr::compile(&c.lhs, &slots));
            let g: Vec<_> = ys.iter().map(|y| c.lhs.diff(y)).collect();
            model.hess.push(
                g.iter()
                    .map(|gi| ys.iter().map(|y| SlotExpr::compile(&gi.diff(y), &slots)).collect())
                    .collect(),
            );
            model.grad.push(g.iter().map(|gi| SlotExpr::compile(gi, &slots)).collect());
        }
        model
    }

    fn point(&self, x: &[f64], y: &DVector<f64>) -> Vec<f64> {
        let mut v = x.to_vec();
        v.extend(y.iter());
        v
    }

    fn values(&self, pt: &[f64]) -> Vec<f64> {
        self.val.iter().map(|e| e.eval(pt)).collect()
    }

    fn gradient(&self, k: usize, pt: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.p, self.grad[k].iter().map(|e| e.eval(pt)))
    }

    fn hessian(&self, k: usize, pt: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.p, |i, j| self.hess[k][i][j].eval(pt))
    }
}

/// Minimizes `½‖y − ŷ0‖² + ½ρ(‖h‖² + ‖max(g, 0)‖²)` by Levenberg-Marquardt.
fn penalty_solve(model: &Model, x: &[f64], y0: &DVector<f64>, start: DVector<f64>, rho: f64) -> DVector<f64> {
    let p = model.p;
    let objective = |y: &DVector<f64>| -> f64 {
        let vals = model.values(&model.point(x, y));
        let pen: f64 = vals
            .iter()
            .zip(&model.rel)
            .map(|(v, r)| match r {
                Relation::Eq => v * v,
                Relation::Le => v.max(0.0).powi(2),
            })
            .sum();
        0.5 * (y - y0).norm_squared() + 0.5 * rho * pen
    };
    let mut y = start;
    let mut mu = 1e-3;
    let mut obj = objective(&y);
    for _ in 0..200 {
        let pt = model.point(x, &y);
        let vals = model.values(&pt);
        let mut jtj = DMatrix::identity(p, p);
        let mut jtr = &y - y0;
        for (k, v) in vals.iter().enumerate() {
            let active = match model.rel[k] {
                Relation::Eq => *v,
                Relation::Le => v.max(0.0),
            };
            if active == 0.0 {
                continue;
            }
            let g = model.gradient(k, &pt);
            jtj += rho * &g * g.transpose();
            jtr += rho * active * &g;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..p {
                a[(d, d)] += mu * (1.0 + a[(d, d)]);
            }
            let Some(ch) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = -ch.solve(&jtr);
            let trial = &y + &step;
            let t = objective(&trial);
            if t.is_finite() && t < obj {
                let small = step.amax() <= 1e-15 * (1.0 + y.amax());
                y = trial;
                obj = t;
                mu = (mu * 0.3).max(1e-12);
                improved = !small;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    y
}

/// Newton on `y − ŷ0 + Σ νₖ∇cₖ = 0, cₖ = 0` over the active constraints.
fn kkt_refine(
    model: &Model,
    x: &[f64],
    y0: &DVector<f64>,
    mut y: DVector<f64>,
    active: &[usize],
    mut nu: DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let p = model.p;
    let na = active.len();
    for _ in 0..60 {
        let pt = model.point(x, &y);
        let vals = model.values(&pt);
        let mut f = DVector::zeros(p + na);
        let mut j = DMatrix::zeros(p + na, p + na);
        let mut stat = &y - y0;
        let mut h = DMatrix::identity(p, p);
        for (a, &k) in active.iter().enumerate() {
            let g = model.gradient(k, &pt);
            stat += nu[a] * &g;
            h += nu[a] * model.hessian(k, &pt);
            f[p + a] = vals[k];
            for i in 0..p {
                j[(i, p + a)] = g[i];
                j[(p + a, i)] = g[i];
            }
        }
        f.rows_mut(0, p).copy_from(&stat);
        j.view_mut((0, 0), (p, p)).copy_from(&h);
        let scale = 1.0 + y.amax() + y0.amax();
        if f.amax() <= 1e-13 * scale {
            return Some((y, nu));
        }
        let d = j.lu().solve(&(-f))?;
        y += d.rows(0, p);
        nu += d.rows(p, na);
        if !y.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    let pt = model.point(x, &y);
    let ok = active
        .iter()
        .all(|&k| model.values(&pt)[k].abs() <= 1e-10 * (1.0 + y.amax()));
    ok.then_some((y, nu))
}

/// Nearest point to `ŷ0` on the constraint set at inputs `x`, found without
/// the compiled system. Intended for tests.
pub fn project_oracle(cs: &ConstraintSet, x: &[f64], y0: &[f64]) -> Result<Vec<f64>, OracleError> {
    let model = Model::new(cs);
    if x.len() != model.m || y0.len() != model.p {
        return Err(OracleError::Dimension);
    }
    let y0v = DVector::from_column_slice(y0);
    let mut rng = ChaCha8Rng::seed_from_u64(0x0c_a1e);
    let spread = 1.0 + y0v.amax();
    let mut starts = vec![y0v.clone()];
    for _ in 0..6 {
        starts.push(DVector::from_fn(model.p, |i, _| y0[i] + spread * rng.gen_range(-0.5..0.5)));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for start in starts {
        let mut y = start;
        let mut rho = 1.0;
        for _ in 0..7 {
            y = penalty_solve(&model, x, &y0v, y, rho);
            rho *= 100.0;
        }
        rho /= 100.0;
        let Some(refined) = refine(&model, x, &y0v, y, rho) else { continue };
        let d = (&refined - &y0v).norm();
        if best.as_ref().is_none_or(|b| d < b.0) {
            best = Some((d, refined));
        }
    }
    best.map(|b| b.1.iter().copied().collect())
        .ok_or_else(|| OracleError::NoConvergence("no start reached a KKT point".into()))
}

/// Active-set loop around [`kkt_refine`].
fn refine(model: &Model, x: &[f64], y0: &DVector<f64>, y: DVector<f64>, rho: f64) -> Option<DVector<f64>> {
    let pt = model.point(x, &y);
    let vals = model.values(&pt);
    let tol = 1e-6 * (1.0 + y.amax());
    let mut active: Vec<usize> = (0..vals.len())
        .filter(|&k| model.rel[k] == Relation::Eq || vals[k] > -tol)
        .collect();
    for _ in 0..2 * vals.len() + 1 {
        let nu = DVector::from_iterator(
            active.len(),
            active.iter().map(|&k| rho * match model.rel[k] {
                Relation::Eq => vals[k],
                Relation::Le => vals[k].max(0.0),
            }),
        );
        let (ys, nus) = kkt_refine(model, x, y0, y.clone(), &active, nu)?;
        let pt = model.point(x, &ys);
        let now = model.values(&pt);
        // drop inequalities with negative multipliers, add violated ones
        let negative: Vec<usize> = active
            .iter()
            .zip(nus.iter())
            .filter(|(k, n)| model.rel[**k] == Relation::Le && **n < -1e-10)
            .map(|(k, _)| *k)
            .collect();
        let violated: Vec<usize> = (0..now.len())
            .filter(|k| model.rel[*k] == Relation::Le && !active.contains(k) && now[*k] > 1e-12 * (1.0 + ys.amax()))
            .collect();
        if negative.is_empty() && violated.is_empty() {
            return Some(ys);
        }
        active.retain(|k| !negative.contains(k));
        active.extend(violated);
        active.sort_unstable();
    }
    None
}
