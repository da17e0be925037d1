//! The shared preprocessing path from a stored world-frame scene to the inputs
//! of the choice model and the network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{raw_features, ColliderParams, FeatureRow, Scaler, ScalingMode};
use crate::grid::{build_grid, label_ground_truth, GridSpec, RadialGrid};
use crate::scene::{filter_neighbors, normalize_scene, InteractionSpace, NormalizedScene, Scene, SceneLimits, DEFAULT_DT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Observed steps per track.
    pub t_obs: usize,
    /// Predicted steps.
    pub t_f: usize,
    /// Seconds per step.
    pub dt: f64,
    pub grid: GridSpec,
    pub collider: ColliderParams,
    pub interaction: InteractionSpace,
    pub scaling: ScalingMode,
    pub limits: SceneLimits,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            t_obs: 10,
            t_f: 30,
            dt: DEFAULT_DT,
            grid: GridSpec::default(),
            collider: ColliderParams::default(),
            interaction: InteractionSpace::default(),
            scaling: ScalingMode::Standardize,
            limits: SceneLimits::default(),
        }
    }
}

impl PipelineConfig {
    pub fn horizon(&self) -> f64 {
        self.t_f as f64 * self.dt
    }

    pub fn num_alternatives(&self) -> usize {
        self.grid.num_alternatives()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_obs == 0 || self.t_f == 0 {
            return Err(Error::Config("t_obs and t_f must be at least 1".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.limits.v_max.is_finite() && self.limits.v_max > 0.0) {
            return Err(Error::Config("limits.v_max must be positive".into()));
        }
        self.grid.validate()?;
        self.collider.validate()?;
        self.interaction.validate()
    }
}

/// A scene ready for the models: normalized, neighbor-filtered, with its grid,
/// raw features and (when the future is known) the ground-truth alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScene {
    pub normalized: NormalizedScene,
    pub grid: RadialGrid,
    pub raw: Vec<FeatureRow>,
    pub label: Option<usize>,
}

impl PreparedScene {
    pub fn scene(&self) -> &Scene {
        &self.normalized.scene
    }

    pub fn id(&self) -> &str {
        &self.normalized.scene.id
    }
}

pub fn prepare_scene(raw: &Scene, cfg: &PipelineConfig) -> Result<PreparedScene> {
    if raw.t_obs != cfg.t_obs || raw.t_f != cfg.t_f {
        return Err(Error::InvalidScene {
            scene: raw.id.clone(),
            message: format!(
                "scene has t_obs = {}, t_f = {} but the dataset is configured for t_obs = {}, t_f = {}",
                raw.t_obs, raw.t_f, cfg.t_obs, cfg.t_f
            ),
        });
    }
    let mut normalized = normalize_scene(raw)?;
    normalized.scene = filter_neighbors(&normalized.scene, &cfg.interaction);
    let scene = &normalized.scene;
    let grid = build_grid(scene.target.last().v, scene.horizon(), &cfg.grid);
    let features = raw_features(scene, &grid, &cfg.collider);
    let label = scene
        .future
        .as_deref()
        .filter(|f| !f.is_empty())
        .map(|f| label_ground_truth(&grid, f));
    Ok(PreparedScene {
        normalized,
        grid,
        raw: features,
        label,
    })
}

pub fn prepare_scenes(scenes: &[Scene], cfg: &PipelineConfig) -> Result<Vec<PreparedScene>> {
    scenes.iter().map(|s| prepare_scene(s, cfg)).collect()
}

/// Fits the feature scaler configured by `mode` on prepared scenes.
pub fn fit_scaler(scenes: &[PreparedScene], mode: ScalingMode) -> Scaler {
    Scaler::fit(mode, scenes.iter().map(|s| s.raw.as_slice()))
}
