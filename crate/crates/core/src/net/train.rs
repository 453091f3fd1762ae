use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Projected, Projection};
use super::loss;
use super::{Adam, AdamConfig, Dataset, Mlp};
use crate::expr::{ConstraintEvaluator, ConstraintSet};
use crate::solver::SolverError;

/// Per-feature affine map `v ↦ (v − shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Scaler {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Mean and standard deviation of the rows; constant columns keep scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.first().map_or(0, |r| r.len());
        let count = rows.len().max(1) as f64;
        let shift: Vec<f64> = (0..n).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / count).collect();
        let scale = (0..n)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - shift[j]).powi(2)).sum::<f64>() / count;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Scaler { shift, scale }
    }
}

/// How network outputs map to data units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputScaling {
    /// Raw outputs.
    None,
    /// Offset by the training-target mean; gradients stay in data units.
    #[default]
    Shift,
    /// Offset by the mean and scaled by the standard deviation.
    Standardize,
}

/// Backbone with standardized inputs; predictions are in data units.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub mlp: Mlp,
    pub input: Scaler,
    pub output: Scaler,
}

impl Model {
    /// Hidden widths between the dataset's input and output sizes; scalers
    /// are fitted on the training split.
    pub fn for_dataset(data: &Dataset, hidden: &[usize], seed: u64) -> Self {
        Self::with_scaling(data, hidden, seed, OutputScaling::default())
    }

    pub fn with_scaling(data: &Dataset, hidden: &[usize], seed: u64, scaling: OutputScaling) -> Self {
        let mut sizes = vec![data.m()];
        sizes.extend_from_slice(hidden);
        sizes.push(data.p());
        let fitted = Scaler::fit(data.train_y());
        let output = match scaling {
            OutputScaling::None => Scaler::identity(data.p()),
            OutputScaling::Shift => Scaler {
                scale: vec![1.0; data.p()],
                ..fitted
            },
            OutputScaling::Standardize => fitted,
        };
        Model {
            mlp: Mlp::new(&sizes, seed),
            input: Scaler::fit(data.train_x()),
            output,
        }
    }

    fn encode(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let m = self.mlp.n_inputs();
        DMatrix::from_fn(m, xs.len(), |i, k| (xs[k][i] - self.input.shift[i]) / self.input.scale[i])
    }

    fn decode(&self, out: &DMatrix<f64>) -> Vec<Vec<f64>> {
        out.column_iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .map(|(j, v)| self.output.shift[j] + self.output.scale[j] * v)
                    .collect()
            })
            .collect()
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.decode(self.mlp.forward_batch(&self.encode(xs)).output())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Mlp,
    /// Adds `ω · mean(r²)` to the loss.
    Pinn { omega: f64 },
    /// Trains through a [`Projection`].
    Hardnet,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Mlp => "MLP",
            Mode::Pinn { .. } => "PINN",
            Mode::Hardnet => "KKT-Hardnet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub mode: Mode,
    /// Shuffling seed for mini-batches.
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            epochs: 1200,
            batch_size: None,
            mode: Mode::Mlp,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    /// `(1/N) Σ‖ŷ − y‖²`.
    pub mse: f64,
    pub half_mse: f64,
    pub mape: f64,
    pub nrmse: f64,
    /// Mean `|h|`.
    pub eq_violation: f64,
    /// Mean `max(g, 0)`.
    pub ineq_violation: f64,
    /// Samples whose projection did not converge.
    pub failures: usize,
}

impl Metrics {
    /// The larger of the two violation means.
    pub fn violation(&self) -> f64 {
        self.eq_violation.max(self.ineq_violation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Over the predictions made while training the epoch.
    pub train: Metrics,
    /// After the epoch's updates.
    pub val: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: String,
    pub epochs: Vec<EpochRecord>,
    pub train: Metrics,
    pub val: Metrics,
    /// Unconverged projections summed over all training epochs.
    pub projection_failures: usize,
    /// Normalization of the RMSE, per output.
    pub ranges: Vec<f64>,
    pub wall_clock: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset has no training samples")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hardnet mode needs a projection layer")]
    MissingProjection,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize, report: Box<TrainReport> },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Output range of each target column, 1 where a column is constant.
pub fn target_ranges(ys: &[Vec<f64>]) -> Vec<f64> {
    let p = ys.first().map_or(0, |y| y.len());
    (0..p)
        .map(|j| {
            let lo = ys.iter().map(|y| y[j]).fold(f64::INFINITY, f64::min);
            let hi = ys.iter().map(|y| y[j]).fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        })
        .collect()
}

fn metrics(ev: &ConstraintEvaluator, xs: &[Vec<f64>], pred: &[Vec<f64>], ys: &[Vec<f64>], ranges: &[f64], failures: usize) -> Metrics {
    let (eq, ineq) = loss::violations(ev, xs, pred);
    Metrics {
        mse: loss::mse(pred, ys),
        half_mse: loss::half_mse(pred, ys),
        mape: loss::mape(pred, ys),
        nrmse: loss::nrmse(pred, ys, ranges),
        eq_violation: eq,
        ineq_violation: ineq,
        failures,
    }
}

fn project(layer: &Projection, xs: &[Vec<f64>], raw: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Projected>), SolverError> {
    let out = layer.project_all(xs, raw)?;
    Ok((out.iter().map(|o| o.y.clone()).collect(), out))
}

/// Final outputs of the model, projected when a layer is given.
pub fn predict(model: &Model, layer: Option<&Projection>, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, usize), SolverError> {
    let raw = model.predict(xs);
    match layer {
        None => Ok((raw, 0)),
        Some(l) => {
            let (y, out) = project(l, xs, &raw)?;
            Ok((y, out.iter().filter(|o| !o.converged).count()))
        }
    }
}

/// Accuracy and violation of the model on `(xs, ys)`; RMSE is normalized by `ranges`.
pub fn evaluate(
    model: &Model,
    layer: Option<&Projection>,
    ev: &ConstraintEvaluator,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    ranges: &[f64],
) -> Result<Metrics, SolverError> {
    let (pred, failures) = predict(model, layer, xs)?;
    Ok(metrics(ev, xs, &pred, ys, ranges, failures))
}

/// Loss of `mode` on a batch with its parameter gradient.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: Mlp,
    /// Final outputs (projected in hardnet mode).
    pub pred: Vec<Vec<f64>>,
    pub failures: usize,
}

pub fn batch_gradient(
    model: &Model,
    mode: Mode,
    layer: Option<&Projection>,
    ev: &ConstraintEvaluator,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
) -> Result<BatchGradient, TrainError> {
    let n = xs.len();
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let nf = n as f64;
    let trace = model.mlp.forward_batch(&model.encode(xs));
    let raw = model.decode(trace.output());
    let p = model.mlp.n_outputs();
    // dL/dŷ0 per sample, in data units
    let mut dy: Vec<Vec<f64>>;
    let pred;
    let mut failures = 0;
    let loss_value;
    match mode {
        Mode::Mlp | Mode::Pinn { .. } => {
            dy = raw
                .iter()
                .zip(ys)
                .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) / nf).collect())
                .collect();
            let mut value = loss::half_mse(&raw, ys);
            if let Mode::Pinn { omega } = mode {
                if omega < 0.0 {
                    return Err(TrainError::Config(format!("negative penalty weight {omega}")));
                }
                if omega != 0.0 {
                    value += loss::penalty(ev, xs, &raw, omega);
                    let scale = 2.0 * omega / (nf * ev.len() as f64);
                    for (i, (x, y)) in xs.iter().zip(&raw).enumerate() {
                        for (r, g) in ev.penalty_terms(x, y) {
                            for (d, gj) in dy[i].iter_mut().zip(&g) {
                                *d += scale * r * gj;
                            }
                        }
                    }
                }
            }
            loss_value = value;
            pred = raw;
        }
        Mode::Hardnet => {
            let layer = layer.ok_or(TrainError::MissingProjection)?;
            let (y, out) = project(layer, xs, &raw)?;
            failures = out.iter().filter(|o| !o.converged).count();
            loss_value = loss::half_mse(&y, ys);
            dy = Vec::with_capacity(n);
            for i in 0..n {
                let v: Vec<f64> = y[i].iter().zip(&ys[i]).map(|(u, t)| (u - t) / nf).collect();
                // an adjoint that cannot be formed leaves the sample ungated
                let g = layer.vjp(&xs[i], &out[i], &v).unwrap_or(v);
                dy.push(g);
            }
            pred = y;
        }
    }
    let dz = DMatrix::from_fn(p, n, |j, k| dy[k][j] * model.output.scale[j]);
    Ok(BatchGradient {
        loss: loss_value,
        grad: model.mlp.backward(&trace, &dz),
        pred,
        failures,
    })
}

/// Adam on the mode's loss. Per-epoch metrics cover both splits; the
/// validation split is evaluated after each epoch's updates.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    cs: &ConstraintSet,
    layer: Option<&Projection>,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    let start = Instant::now();
    if data.n_train == 0 {
        return Err(TrainError::EmptyDataset);
    }
    if data.m() != model.mlp.n_inputs() || data.p() != model.mlp.n_outputs() || cs.m() != data.m() || cs.p() != data.p() {
        return Err(TrainError::Dimension(format!(
            "data {}→{}, network {}→{}, constraints {}→{}",
            data.m(),
            data.p(),
            model.mlp.n_inputs(),
            model.mlp.n_outputs(),
            cs.m(),
            cs.p()
        )));
    }
    if !(cfg.lr > 0.0) || cfg.epochs == 0 || cfg.batch_size == Some(0) {
        return Err(TrainError::Config(format!("{cfg:?}")));
    }
    if cfg.mode == Mode::Hardnet && layer.is_none() {
        return Err(TrainError::MissingProjection);
    }
    let eval_layer = if cfg.mode == Mode::Hardnet { layer } else { None };
    let ev = ConstraintEvaluator::new(cs);
    let ranges = target_ranges(data.train_y());
    let (tx, ty) = (data.train_x(), data.train_y());
    let mut adam = Adam::new(model.mlp.n_params(), cfg.lr, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..tx.len()).collect();
    let batch = cfg.batch_size.unwrap_or(tx.len()).min(tx.len());
    let mut report = TrainReport {
        model: cfg.mode.label().to_string(),
        epochs: Vec::with_capacity(cfg.epochs),
        train: Metrics::default(),
        val: Metrics::default(),
        projection_failures: 0,
        ranges: ranges.clone(),
        wall_clock: Duration::ZERO,
    };
    for epoch in 1..=cfg.epochs {
        if batch < tx.len() {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut pred = vec![Vec::new(); tx.len()];
        let mut failures = 0;
        for chunk in order.chunks(batch) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| tx[i].clone()).collect();
            let by: Vec<Vec<f64>> = chunk.iter().map(|&i| ty[i].clone()).collect();
            let g = batch_gradient(model, cfg.mode, layer, &ev, &bx, &by)?;
            if !g.loss.is_finite() {
                report.wall_clock = start.elapsed();
                return Err(TrainError::Diverged {
                    epoch,
                    report: Box::new(report),
                });
            }
            loss_sum += g.loss * chunk.len() as f64;
            failures += g.failures;
            for (&i, p) in chunk.iter().zip(g.pred) {
                pred[i] = p;
            }
            adam.step(&mut model.mlp, &g.grad);
        }
        report.projection_failures += failures;
        let train_m = metrics(&ev, tx, &pred, ty, &ranges, failures);
        let val_m = evaluate(model, eval_layer, &ev, data.val_x(), data.val_y(), &ranges)?;
        report.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / tx.len() as f64,
            train: train_m,
            val: val_m,
        });
        log::debug!("{} epoch {epoch}: loss {:.4e}", report.model, loss_sum / tx.len() as f64);
    }
    report.train = evaluate(model, eval_layer, &ev, tx, ty, &ranges)?;
    report.val = report.epochs.last().map(|e| e.val).unwrap_or_default();
    report.wall_clock = start.elapsed();
    Ok(report)
}
