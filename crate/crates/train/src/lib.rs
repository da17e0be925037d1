//! Training loop, metrics and the ablation over model variants.

pub mod adam;
pub mod compare;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod metrics;
pub mod trainer;

pub use compare::{compare_variants, CompareResult, VariantResult};
pub use data::{build_inputs, split_indices};
pub use error::{Error, Result};
pub use evaluate::{evaluate, EvalMetrics};
pub use trainer::{train, EpochLog, TrainConfig, TrainOutcome};
