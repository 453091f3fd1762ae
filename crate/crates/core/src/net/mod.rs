//! Feed-forward backbone, Adam, and the three training modes: plain MLP,
//! soft-penalty PINN, and training through a projection layer.

mod adam;
mod data;
mod layer;
pub mod loss;
mod mlp;
mod report;
mod train;

pub use adam::{Adam, AdamConfig};
pub use data::Dataset;
pub use layer::{LayerError, Projected, Projection};
pub use mlp::{Mlp, Trace};
pub use report::{write_metrics_csv, METRICS_HEADER};
pub use train::{
    batch_gradient, evaluate, predict, target_ranges, train, BatchGradient, EpochRecord, Metrics, Mode, Model, OutputScaling, Scaler,
    TrainConfig, TrainError, TrainReport,
};
