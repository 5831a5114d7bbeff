//! Dataset files, checkpoints, training, evaluation and ablations for the
//! `mvt-core` grounding model.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod invariance;
pub mod metrics;
pub mod pipeline;
pub mod train;

pub use config::TrainConfig;
pub use error::{HarnessError, Result};
pub use metrics::Metrics;
