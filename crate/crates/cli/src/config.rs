//! Run configuration: a TOML file with `[solver]`, `[net]` and `[bench]`
//! tables. Every key has a default, so an empty file is valid.

use std::path::Path;

use anyhow::{bail, Context, Result};
use kkt_hardnet::bench::RunConfig;
use kkt_hardnet::net::OutputScaling;
use kkt_hardnet::solver::{SolverConfig, StepPolicy, VjpMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub max_iters: usize,
    pub tol: f64,
    pub gamma: f64,
    pub eps_init: f64,
    /// `backtracking` or `fixed`.
    pub step: String,
    /// Step length of the fixed policy.
    pub alpha: f64,
    pub armijo_c: f64,
    pub beta: f64,
    pub alpha0: f64,
    /// `implicit` or `unrolled`.
    pub vjp: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        let (armijo_c, beta, alpha0) = match d.step {
            StepPolicy::Backtracking { c, beta, alpha0 } => (c, beta, alpha0),
            StepPolicy::Fixed(_) => (1e-4, 0.5, 1.0),
        };
        SolverSection {
            max_iters: d.max_iters,
            tol: d.tol,
            gamma: d.gamma,
            eps_init: d.eps_init,
            step: "backtracking".into(),
            alpha: 1.0,
            armijo_c,
            beta,
            alpha0,
            vjp: "implicit".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub lr: f64,
    pub epochs: usize,
    /// 0 trains full-batch.
    pub batch_size: usize,
    /// `benchmark`, `shift`, `standardize` or `none`.
    pub output_scaling: String,
}

impl Default for NetSection {
    fn default() -> Self {
        let d = RunConfig::default();
        NetSection {
            lr: d.lr,
            epochs: d.epochs,
            batch_size: 0,
            output_scaling: "benchmark".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Network initialization and batch order; `--seed` overrides it.
    pub seed: u64,
    pub data_seed: u64,
    /// PINN penalty weight; unset takes the benchmark's.
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub solver: SolverSection,
    pub net: NetSection,
    pub bench: BenchSection,
    /// Run record of a manifest; ignored so a manifest can be reloaded.
    #[serde(skip_serializing)]
    pub run: Option<toml::Table>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.solver_config()?;
        cfg.run_config()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let step = match s.step.as_str() {
            "backtracking" => StepPolicy::Backtracking {
                c: s.armijo_c,
                beta: s.beta,
                alpha0: s.alpha0,
            },
            "fixed" => StepPolicy::Fixed(s.alpha),
            other => bail!("solver.step must be `backtracking` or `fixed`, not `{other}`"),
        };
        let cfg = SolverConfig {
            max_iters: s.max_iters,
            tol: s.tol,
            gamma: s.gamma,
            step,
            eps_init: s.eps_init,
            record_trajectory: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vjp(&self) -> Result<VjpMode> {
        Ok(match self.solver.vjp.as_str() {
            "implicit" => VjpMode::Implicit,
            "unrolled" => VjpMode::Unrolled,
            other => bail!("solver.vjp must be `implicit` or `unrolled`, not `{other}`"),
        })
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let n = &self.net;
        if !(n.lr > 0.0) || n.epochs == 0 {
            bail!("net.lr must be positive and net.epochs at least 1");
        }
        let scaling = match n.output_scaling.as_str() {
            "benchmark" => None,
            "shift" => Some(OutputScaling::Shift),
            "standardize" => Some(OutputScaling::Standardize),
            "none" => Some(OutputScaling::None),
            other => bail!("net.output_scaling must be `benchmark`, `shift`, `standardize` or `none`, not `{other}`"),
        };
        Ok(RunConfig {
            epochs: n.epochs,
            lr: n.lr,
            batch_size: (n.batch_size > 0).then_some(n.batch_size),
            seed: self.bench.seed,
            data_seed: self.bench.data_seed,
            omega: self.bench.omega,
            solver: self.solver_config()?,
            vjp: self.vjp()?,
            scaling,
        })
    }
}
