//! Scene model, goal grid, interpretable goal features and the logit choice model
//! used by waypoint-conditioned trajectory prediction.

pub mod choice;
pub mod error;
pub mod features;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod scene;
pub mod synth;

pub use choice::{BetaVector, FeatureSet, GoalDistribution, Variant};
pub use error::{Error, Result};
pub use features::{ColliderParams, Feature, FeatureRow, Scaler, ScalingMode, NUM_FEATURES};
pub use geometry::{Frame, Point2};
pub use grid::{GridSpec, RadialGrid};
pub use pipeline::{prepare_scene, prepare_scenes, PipelineConfig, PreparedScene};
pub use scene::{AgentState, AgentTrack, InteractionSpace, Scene};
