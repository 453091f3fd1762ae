use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::net::Dataset;

pub const N_TRAIN: usize = 1200;
pub const N_VAL: usize = 300;

/// Feed mole fraction of R-32; R-125 makes up the rest.
pub const FEED_R32: f64 = 0.697616946;
pub const FEED_R125: f64 = 0.302383054;

/// Compositions and flow bounds of accepted distillation samples.
const MIN_FRACTION: f64 = 1e-3;
const MAX_REJECTION: f64 = 0.9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GenerateError {
    #[error("need at least one sample")]
    Empty,
    #[error("rejected {rejected} of {drawn} draws; generator parameters are off")]
    Rejection { rejected: usize, drawn: usize },
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn draw(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect()
}

fn sampled(
    seed: u64,
    n_train: usize,
    n_val: usize,
    inputs: &[&str],
    outputs: &[&str],
    bounds: Vec<(f64, f64)>,
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n_train + n_val).map(|_| draw(&mut rng, &bounds)).collect();
    Dataset {
        input_names: names(inputs),
        output_names: names(outputs),
        targets: xs.iter().map(|x| f(x)).collect(),
        inputs: xs,
        n_train,
        n_val,
        seed,
        bounds,
    }
}

/// `y = (8x³ + 5, 2x − 1)` on `x ∈ [1, 2]`.
pub fn gen_example1(seed: u64) -> Dataset {
    sampled(seed, N_TRAIN, N_VAL, &["x"], &["y1", "y2"], vec![(1.0, 2.0)], |x| {
        vec![8.0 * x[0].powi(3) + 5.0, 2.0 * x[0] - 1.0]
    })
}

/// `y = (x1² + x2², 4x1² + 4x2³ − 2x2²)` on `[1, 2]²`.
pub fn gen_example2(seed: u64) -> Dataset {
    sampled(seed, N_TRAIN, N_VAL, &["x1", "x2"], &["y1", "y2"], vec![(1.0, 2.0); 2], |x| {
        let (a, b) = (x[0], x[1]);
        vec![a * a + b * b, 4.0 * a * a + 4.0 * b.powi(3) - 2.0 * b * b]
    })
}

/// `y = x²` on `[1, 2]`; the targets violate `y ≤ x` for every `x > 1`.
pub fn gen_example3(seed: u64) -> Dataset {
    sampled(seed, N_TRAIN, N_VAL, &["x"], &["y"], vec![(1.0, 2.0)], |x| vec![x[0] * x[0]])
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub const DISTILL_INPUTS: [&str; 3] = ["F_F", "F_IL", "R"];
pub const DISTILL_OUTPUTS: [&str; 9] = ["F_D", "F_B", "L", "xD_R32", "xD_R125", "xD_IL", "xB_R32", "xB_R125", "xB_IL"];

/// Outputs of one distillation sample, or `None` when a fraction leaves
/// `(0, 1)` or a flow is not positive.
pub fn distillation_outputs(x: &[f64]) -> Option<Vec<f64>> {
    let (ff, fil, r) = (x[0], x[1], x[2]);
    let u1 = (ff - 95.0) / 15.0;
    let u2 = (fil - 800.0) / 150.0;
    let u3 = (r - 2.5) / 1.8;
    // free smooth functions
    let fd = ff * (0.40 + 0.08 * sigmoid(3.0 * (u3 - 0.5) - (u2 - 0.5)));
    let xd_r32 = 0.20 + 0.15 * sigmoid(2.0 * (u2 - 0.5) - 2.0 * (u3 - 0.5));
    let fb = ff + fil - fd;
    let xb_il = fil / fb * (0.973 + 0.006 * sigmoid(2.0 * (u1 - 0.5) + 1.5 * (u2 - 0.5)));
    // the balances fix the rest
    let l = r * fd;
    let xb_r32 = (FEED_R32 * ff - fd * xd_r32) / fb;
    let xb_r125 = 1.0 - xb_r32 - xb_il;
    let xd_r125 = (FEED_R125 * ff - fb * xb_r125) / fd;
    let xd_il = 1.0 - xd_r32 - xd_r125;
    let y = vec![fd, fb, l, xd_r32, xd_r125, xd_il, xb_r32, xb_r125, xb_il];
    let ok = y[..3].iter().all(|v| *v > 0.0) && y[3..].iter().all(|v| *v > MIN_FRACTION && *v < 1.0 - MIN_FRACTION);
    ok.then_some(y)
}

/// Synthetic stand-in for simulator data: inputs uniform on their ranges,
/// outputs satisfying the six balances. `n` samples, split 80/20.
pub fn gen_distillation_synthetic(seed: u64, n: usize) -> Result<Dataset, GenerateError> {
    if n == 0 {
        return Err(GenerateError::Empty);
    }
    let bounds = vec![(95.0, 110.0), (800.0, 950.0), (2.5, 4.3)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut inputs, mut targets) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut drawn = 0usize;
    while inputs.len() < n {
        drawn += 1;
        let x = draw(&mut rng, &bounds);
        if let Some(y) = distillation_outputs(&x) {
            inputs.push(x);
            targets.push(y);
        }
        let rejected = drawn - inputs.len();
        if drawn >= 100 && rejected as f64 > MAX_REJECTION * drawn as f64 {
            return Err(GenerateError::Rejection { rejected, drawn });
        }
    }
    let n_train = (n * 4).div_ceil(5);
    Ok(Dataset {
        input_names: names(&DISTILL_INPUTS),
        output_names: names(&DISTILL_OUTPUTS),
        inputs,
        targets,
        n_train,
        n_val: n - n_train,
        seed,
        bounds,
    })
}
