use std::io;

use rayon::prelude::*;

use super::registry::{BenchmarkSpec, ProjectorKind};
use crate::expr::ConstraintSetError;
use crate::net::{
    train, Dataset, LayerError, Mode, Model, OutputScaling, Projection, TrainConfig, TrainError, TrainReport,
};
use crate::solver::{SolverConfig, VjpMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: Option<usize>,
    /// Seeds the network initialization and mini-batch order.
    pub seed: u64,
    pub data_seed: u64,
    /// Penalty weight; `None` takes the benchmark's value.
    pub omega: Option<f64>,
    pub solver: SolverConfig,
    pub vjp: VjpMode,
    /// `None` takes the benchmark's.
    pub scaling: Option<OutputScaling>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 1200,
            lr: 1e-4,
            batch_size: None,
            seed: 0,
            data_seed: 0,
            omega: None,
            solver: SolverConfig::default(),
            vjp: VjpMode::Implicit,
            scaling: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Constraints(#[from] ConstraintSetError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("{mode}: {source}")]
    Train { mode: String, source: TrainError },
}

/// Projection layer of the benchmark's hardnet model.
pub fn build_projection(spec: &BenchmarkSpec, cfg: &RunConfig) -> Result<Projection, BenchError> {
    let cs = spec.constraint_set()?;
    Ok(match spec.projector {
        ProjectorKind::Newton => Projection::newton(&cs, &spec.compile_options(), cfg.solver, cfg.vjp)?,
        ProjectorKind::Affine => Projection::affine(&cs, spec.pinv)?,
        ProjectorKind::LinearOutput => Projection::linear_output(&cs, spec.pinv)?,
    })
}

/// Fills a NaN penalty weight from `cfg.omega`, else from the benchmark.
pub fn resolve_mode(spec: &BenchmarkSpec, mode: Mode, cfg: &RunConfig) -> Mode {
    match mode {
        Mode::Pinn { omega } if omega.is_nan() => Mode::Pinn {
            omega: cfg.omega.unwrap_or(spec.omega),
        },
        m => m,
    }
}

/// MLP, PINN with the weight left to [`resolve_mode`], and hardnet.
pub fn default_modes() -> [Mode; 3] {
    [Mode::Mlp, Mode::Pinn { omega: f64::NAN }, Mode::Hardnet]
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub spec: BenchmarkSpec,
    pub data: Dataset,
    pub reports: Vec<TrainReport>,
    pub models: Vec<Model>,
}

/// Trains each mode from the same initialization on the same data.
pub fn run_benchmark(spec: &BenchmarkSpec, modes: &[Mode], cfg: &RunConfig) -> Result<BenchmarkRun, BenchError> {
    let cs = spec.constraint_set()?;
    let data = spec.dataset(cfg.data_seed);
    let layer = if modes.contains(&Mode::Hardnet) {
        Some(build_projection(spec, cfg)?)
    } else {
        None
    };
    let runs: Vec<Result<(TrainReport, Model), BenchError>> = modes
        .par_iter()
        .map(|&mode| {
            let mode = resolve_mode(spec, mode, cfg);
            let mut model = Model::with_scaling(&data, spec.hidden, cfg.seed, cfg.scaling.unwrap_or(spec.scaling));
            let tc = TrainConfig {
                lr: cfg.lr,
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                mode,
                seed: cfg.seed,
                ..Default::default()
            };
            let report = train(&mut model, &data, &cs, layer.as_ref(), &tc).map_err(|source| BenchError::Train {
                mode: mode.label().to_string(),
                source,
            })?;
            Ok((report, model))
        })
        .collect();
    let mut reports = Vec::new();
    let mut models = Vec::new();
    for r in runs {
        let (rep, m) = r?;
        reports.push(rep);
        models.push(m);
    }
    Ok(BenchmarkRun {
        spec: spec.clone(),
        data,
        reports,
        models,
    })
}

impl BenchmarkRun {
    pub fn report(&self, model: &str) -> Option<&TrainReport> {
        self.reports.iter().find(|r| r.model == model)
    }

    /// Our metrics next to the published ones, one row per model and split.
    pub fn write_comparison_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "model",
            "split",
            "mse",
            "mape",
            "violation",
            "failures",
            "ref_mse",
            "ref_mape",
            "ref_violation",
            "reference",
        ])?;
        for rep in &self.reports {
            for (split, m) in [("train", &rep.train), ("val", &rep.val)] {
                let reference = self
                    .spec
                    .reference
                    .iter()
                    .find(|r| r.model == rep.model && r.split == split);
                let refs = reference.map_or(["".to_string(), "".to_string(), "".to_string()], |r| {
                    [format!("{:e}", r.mse), format!("{:e}", r.mape), format!("{:e}", r.violation)]
                });
                out.write_record([
                    rep.model.clone(),
                    split.to_string(),
                    format!("{:e}", m.mse),
                    format!("{:e}", m.mape),
                    format!("{:e}", m.violation()),
                    m.failures.to_string(),
                    refs[0].clone(),
                    refs[1].clone(),
                    refs[2].clone(),
                    self.spec.citation.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
