//! Matrix-level reverse-mode differentiation and the goal-conditioned
//! trajectory network built on it.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod mixture;
pub mod model;
pub mod social;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, Manifest};
pub use error::{Error, Result};
pub use mixture::{Gaussian2, MixtureTrajectory};
pub use model::{param_group, Forward, LossVars, LossWeights, Model, ModelConfig, ParamStore, SceneInput};
pub use social::SocialGrid;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
