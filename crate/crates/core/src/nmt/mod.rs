//! Toy encoder-decoder transformer, its optimizer, schedule and training loop.

pub mod config;
pub mod decode;
pub mod model;
pub mod ops;
pub mod optim;
pub mod real;
pub mod schedule;
pub mod train;

pub use config::{AdamKind, Component, FreezeMask, ModelConfig, OptimizerConfig, TrainConfig};
pub use model::{Batch, LossStats, ParamInfo, Transformer};
pub use optim::Adam;
pub use real::Real;
pub use schedule::{early_stop, lr_schedule};
pub use train::{train, translate, translate_with, Init, TrainAbort, TrainOutcome, TrainRequest, TrajectoryPoint};
