use crate::expr::{ConstraintEvaluator, Relation};

/// Denominator floor of the percentage error.
pub const MAPE_FLOOR: f64 = 1e-8;

fn check(pred: &[Vec<f64>], target: &[Vec<f64>]) {
    assert_eq!(pred.len(), target.len(), "prediction and target counts differ");
}

fn sq_sum(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    check(pred, target);
    pred.iter()
        .zip(target)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum()
}

/// Training loss `(1/2N) Σ‖ŷ − y‖²`.
pub fn half_mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    sq_sum(pred, target) / (2.0 * pred.len() as f64)
}

/// Reported error `(1/N) Σ‖ŷ − y‖²`, twice the training loss.
pub fn mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    2.0 * half_mse(pred, target)
}

/// Mean of `|ŷ − y| / max(|y|, MAPE_FLOOR)` over samples and outputs, as a fraction.
pub fn mape(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    check(pred, target);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(target) {
        for (a, b) in p.iter().zip(t) {
            sum += (a - b).abs() / b.abs().max(MAPE_FLOOR);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-output RMSE divided by `ranges`, averaged over outputs.
pub fn nrmse(pred: &[Vec<f64>], target: &[Vec<f64>], ranges: &[f64]) -> f64 {
    check(pred, target);
    if pred.is_empty() || ranges.is_empty() {
        return 0.0;
    }
    let n = pred.len() as f64;
    ranges
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let s: f64 = pred.iter().zip(target).map(|(p, t)| (p[j] - t[j]).powi(2)).sum();
            (s / n).sqrt() / r
        })
        .sum::<f64>()
        / ranges.len() as f64
}

/// Mean `|h|` over samples and equalities, and mean `max(g, 0)` over samples
/// and inequalities. Either is 0 when its kind is absent.
pub fn violations(ev: &ConstraintEvaluator, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> (f64, f64) {
    let (mut eq, mut ne, mut le, mut nl) = (0.0, 0usize, 0.0, 0usize);
    for (x, y) in xs.iter().zip(ys) {
        for (v, rel) in ev.violations(x, y).into_iter().zip(ev.relations()) {
            match rel {
                Relation::Eq => {
                    eq += v;
                    ne += 1;
                }
                Relation::Le => {
                    le += v;
                    nl += 1;
                }
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    (mean(eq, ne), mean(le, nl))
}

/// Soft penalty `ω · mean(r²)` over samples and constraints, with `r = h` or
/// `max(g, 0)`.
pub fn penalty(ev: &ConstraintEvaluator, xs: &[Vec<f64>], ys: &[Vec<f64>], omega: f64) -> f64 {
    let k = ev.len();
    if xs.is_empty() || k == 0 {
        return 0.0;
    }
    let s: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| ev.penalty_terms(x, y).iter().map(|(r, _)| r * r).sum::<f64>())
        .sum();
    omega * s / (xs.len() * k) as f64
}

/// `half_mse + penalty`.
pub fn pinn_loss(ev: &ConstraintEvaluator, xs: &[Vec<f64>], pred: &[Vec<f64>], target: &[Vec<f64>], omega: f64) -> f64 {
    half_mse(pred, target) + penalty(ev, xs, pred, omega)
}
