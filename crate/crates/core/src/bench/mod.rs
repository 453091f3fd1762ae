//! Reference problems: data generators, constraint files, published metrics,
//! and the three-mode comparison.

mod generate;
mod registry;
mod run;

pub use generate::{
    distillation_outputs, gen_distillation_synthetic, gen_example1, gen_example2, gen_example3, GenerateError,
    DISTILL_INPUTS, DISTILL_OUTPUTS, FEED_R125, FEED_R32, N_TRAIN, N_VAL,
};
pub use registry::{find, names, registry, BenchmarkSpec, ProjectorKind, Reference};
pub use run::{build_projection, default_modes, resolve_mode, run_benchmark, BenchError, BenchmarkRun, RunConfig};
