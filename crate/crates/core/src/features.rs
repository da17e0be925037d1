//! Explanatory variables of the goal utility, one row per grid alternative.
//!
//! Columns, in this order everywhere (tables, betas, CSV dumps):
//!
//! | column   | meaning                                                    | unit    |
//! |----------|------------------------------------------------------------|---------|
//! | `dir`    | deviation of the alternative from the current heading       | degrees |
//! | `occ`    | exponentially weighted count of neighbors near its center  | -       |
//! | `coll`   | head-on collider penalty of its cone                       | -       |
//! | `dangle` | angle between the alternative and the long-term waypoint   | degrees |
//! | `ddist`  | distance from its center to the long-term waypoint         | meters  |

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{abs_angle_diff, angle_between, Point2};
use crate::grid::RadialGrid;
use crate::scene::{AgentTrack, Scene};

pub const NUM_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Dir,
    Occ,
    Coll,
    Dangle,
    Ddist,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::Dir,
        Feature::Occ,
        Feature::Coll,
        Feature::Dangle,
        Feature::Ddist,
    ];

    pub fn column(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Dir => "dir",
            Feature::Occ => "occ",
            Feature::Coll => "coll",
            Feature::Dangle => "dangle",
            Feature::Ddist => "ddist",
        }
    }
}

/// The five explanatory variables of one alternative, indexed by [`Feature::column`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; NUM_FEATURES]", into = "[f64; NUM_FEATURES]")]
pub struct FeatureRow(pub [f64; NUM_FEATURES]);

impl FeatureRow {
    pub fn get(&self, f: Feature) -> f64 {
        self.0[f.column()]
    }
}

impl From<[f64; NUM_FEATURES]> for FeatureRow {
    fn from(v: [f64; NUM_FEATURES]) -> Self {
        Self(v)
    }
}

impl From<FeatureRow> for [f64; NUM_FEATURES] {
    fn from(r: FeatureRow) -> Self {
        r.0
    }
}

/// Parameters of the collider penalty `alpha · exp(rho · D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColliderParams {
    pub alpha: f64,
    /// Decay rate per meter; must be negative.
    pub rho: f64,
}

impl Default for ColliderParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            rho: -0.1,
        }
    }
}

impl ColliderParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_finite() && self.rho.is_finite() && self.rho < 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "collider params need finite alpha and rho < 0, got {self:?}"
            )))
        }
    }
}

/// `|direction_k − heading|` in degrees, wrapped to [0, 180].
pub fn keep_direction(grid: &RadialGrid, target: &AgentTrack) -> Vec<f64> {
    let heading = target.last().theta;
    grid.alternatives
        .iter()
        .map(|a| abs_angle_diff(a.direction, heading).to_degrees())
        .collect()
}

/// Sum over neighbors within `maxl / 3` of each center of `exp(−distance)`.
pub fn occupancy(grid: &RadialGrid, neighbors: &[AgentTrack]) -> Vec<f64> {
    let radius = grid.maxl / 3.0;
    grid.alternatives
        .iter()
        .map(|a| {
            neighbors
                .iter()
                .map(|n| a.center.distance(n.last().position()))
                .filter(|&d| d < radius)
                .map(|d| (-d).exp())
                .sum()
        })
        .collect()
}

/// Collider of one cone: among neighbors strictly inside the cone, strictly
/// between 0 and `2·maxl` from the target and heading against the cone
/// (angle to the cone direction strictly between π/2 and π), the one with the
/// largest heading difference. Returns its index and distance to the target.
pub fn select_collider(
    neighbors: &[AgentTrack],
    d_l: f64,
    d_r: f64,
    direction: f64,
    maxl: f64,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, n) in neighbors.iter().enumerate() {
        let s = n.last();
        let p = s.position();
        let dist = p.norm();
        if !(dist > 0.0 && dist < 2.0 * maxl) {
            continue;
        }
        let d_i = p.angle();
        if !(d_r < d_i && d_i < d_l) {
            continue;
        }
        let diff = abs_angle_diff(s.theta, direction);
        if !(FRAC_PI_2 < diff && diff < PI) {
            continue;
        }
        if best.is_none_or(|(_, b, _)| diff > b) {
            best = Some((i, diff, dist));
        }
    }
    best.map(|(i, _, d)| (i, d))
}

/// Collider penalty per alternative; alternatives of the same sector share it.
pub fn collision_avoidance(
    grid: &RadialGrid,
    neighbors: &[AgentTrack],
    params: &ColliderParams,
) -> Vec<f64> {
    grid.alternatives
        .iter()
        .map(|a| {
            select_collider(neighbors, a.d_l, a.d_r, a.direction, grid.maxl)
                .map_or(0.0, |(_, d)| params.alpha * (params.rho * d).exp())
        })
        .collect()
}

/// Angle in degrees between the ray to each center and the ray to the waypoint.
pub fn waypoint_angle(grid: &RadialGrid, waypoint: Point2) -> Vec<f64> {
    if waypoint.norm() == 0.0 {
        log::debug!("waypoint coincides with the target, waypoint angle set to 0");
    }
    grid.alternatives
        .iter()
        .map(|a| angle_between(a.center, waypoint).to_degrees())
        .collect()
}

/// Distance in meters from each center to the waypoint.
pub fn waypoint_distance(grid: &RadialGrid, waypoint: Point2) -> Vec<f64> {
    grid.alternatives
        .iter()
        .map(|a| a.center.distance(waypoint))
        .collect()
}

/// Raw (unscaled) feature table of a normalized, neighbor-filtered scene.
pub fn raw_features(scene: &Scene, grid: &RadialGrid, params: &ColliderParams) -> Vec<FeatureRow> {
    let dir = keep_direction(grid, &scene.target);
    let occ = occupancy(grid, &scene.neighbors);
    let coll = collision_avoidance(grid, &scene.neighbors, params);
    let dangle = waypoint_angle(grid, scene.waypoint);
    let ddist = waypoint_distance(grid, scene.waypoint);
    (0..grid.len())
        .map(|k| FeatureRow([dir[k], occ[k], coll[k], dangle[k], ddist[k]]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    /// Z-score each column with moments of the fitting set.
    #[default]
    Standardize,
    /// Leave features in their physical units.
    Raw,
}

/// Per-column affine feature scaling fitted on a set of feature tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mode: ScalingMode,
    pub mean: [f64; NUM_FEATURES],
    pub std: [f64; NUM_FEATURES],
}

impl Scaler {
    pub fn identity() -> Self {
        Self {
            mode: ScalingMode::Raw,
            mean: [0.0; NUM_FEATURES],
            std: [1.0; NUM_FEATURES],
        }
    }

    /// Fits column moments over every row of every table. Columns with zero
    /// spread keep a unit scale so they pass through centered.
    pub fn fit<'a>(mode: ScalingMode, tables: impl IntoIterator<Item = &'a [FeatureRow]>) -> Self {
        if mode == ScalingMode::Raw {
            return Self::identity();
        }
        let mut n = 0usize;
        let mut sum = [0.0; NUM_FEATURES];
        let mut rows: Vec<&FeatureRow> = Vec::new();
        for table in tables {
            for row in table {
                for (s, v) in sum.iter_mut().zip(row.0) {
                    *s += v;
                }
                rows.push(row);
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity();
        }
        let mean = sum.map(|s| s / n as f64);
        let mut var = [0.0; NUM_FEATURES];
        for row in rows {
            for c in 0..NUM_FEATURES {
                var[c] += (row.0[c] - mean[c]).powi(2);
            }
        }
        let std = var.map(|v| {
            let s = (v / n as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        });
        Self { mode, mean, std }
    }

    pub fn scale(&self, row: &FeatureRow) -> FeatureRow {
        let mut out = [0.0; NUM_FEATURES];
        for c in 0..NUM_FEATURES {
            out[c] = (row.0[c] - self.mean[c]) / self.std[c];
        }
        FeatureRow(out)
    }

    pub fn unscale(&self, row: &FeatureRow) -> FeatureRow {
        let mut out = [0.0; NUM_FEATURES];
        for c in 0..NUM_FEATURES {
            out[c] = row.0[c] * self.std[c] + self.mean[c];
        }
        FeatureRow(out)
    }

    pub fn scale_table(&self, table: &[FeatureRow]) -> Vec<FeatureRow> {
        table.iter().map(|r| self.scale(r)).collect()
    }
}

/// Raw and scaled feature tables of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub raw: Vec<FeatureRow>,
    pub scaled: Vec<FeatureRow>,
}

pub fn feature_matrix(
    scene: &Scene,
    grid: &RadialGrid,
    params: &ColliderParams,
    scaler: &Scaler,
) -> FeatureMatrix {
    let raw = raw_features(scene, grid, params);
    let scaled = scaler.scale_table(&raw);
    FeatureMatrix { raw, scaled }
}

/// Writes a feature table as CSV with columns `k,dir,occ,coll,dangle,ddist`.
pub fn write_feature_csv(table: &[FeatureRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "k,dir,occ,coll,dangle,ddist")?;
    for (k, row) in table.iter().enumerate() {
        let r = row.0;
        writeln!(w, "{k},{},{},{},{},{}", r[0], r[1], r[2], r[3], r[4])?;
    }
    Ok(())
}
