//! Synthetic scenes whose targets pick their intermediate goal from a known
//! logit model and drive toward it.
//!
//! Each scene is built in the target frame, placed at a random world pose and
//! then run through the regular preprocessing path, so the features the goal is
//! drawn from are bit-for-bit the features a fitter recomputes from the stored
//! file. The feature scaler is fitted once on a pilot batch and frozen into the
//! corpus metadata.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::choice::{goal_probabilities, utilities, BetaVector};
use crate::error::{Error, Result};
use crate::features::{Scaler, ScalingMode};
use crate::geometry::{Frame, Point2};
use crate::pipeline::{prepare_scene, PipelineConfig, PreparedScene};
use crate::scene::{AgentState, AgentTrack, Scene};

/// Stream offset separating pilot contexts from corpus scenes.
const PILOT_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub true_beta: BetaVector,
    pub n_scenes: usize,
    /// Inclusive range of neighbor counts.
    pub n_neighbors: [usize; 2],
    /// Speed range in m/s for the target and its neighbors.
    pub speed: [f64; 2],
    /// Range of the waypoint's distance from the target, meters.
    pub waypoint_distance: [f64; 2],
    /// Waypoint bearing is uniform in ±this many radians around the heading.
    pub waypoint_bearing: f64,
    /// Standard deviation of the per-step heading wobble of the target's past, radians.
    pub heading_jitter: f64,
    /// Fraction of neighbors placed close to a grid center in or next to the
    /// waypoint's sector rather than uniformly in the interaction space.
    pub near_goal_fraction: f64,
    /// Fraction of neighbors driving roughly toward the target instead of in a
    /// uniformly random direction.
    pub oncoming_fraction: f64,
    /// Spread of the near-goal placement, meters.
    pub near_goal_sigma: f64,
    /// Standard deviation of the position noise on the future, meters.
    pub noise_sigma: f64,
    /// Scenes used to fit the frozen feature scaler.
    pub pilot_scenes: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            true_beta: BetaVector::reference_waydcm2(),
            n_scenes: 5000,
            n_neighbors: [2, 8],
            speed: [4.0, 14.0],
            waypoint_distance: [20.0, 1000.0],
            waypoint_bearing: 0.5 * PI,
            heading_jitter: 0.01,
            near_goal_fraction: 0.7,
            oncoming_fraction: 0.7,
            near_goal_sigma: 1.5,
            noise_sigma: 0.1,
            pilot_scenes: 1000,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if self.n_neighbors[0] > self.n_neighbors[1] {
            return Err(Error::Config("gen.n_neighbors range is empty".into()));
        }
        if !range_ok(self.speed) || self.speed[0] <= 0.0 {
            return Err(Error::Config("gen.speed must be a non-empty positive range".into()));
        }
        if !range_ok(self.waypoint_distance) || self.waypoint_distance[0] < 0.0 {
            return Err(Error::Config(
                "gen.waypoint_distance must be a non-empty non-negative range".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.heading_jitter >= 0.0 && self.near_goal_sigma >= 0.0) {
            return Err(Error::Config("gen noise levels must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.near_goal_fraction) || !(0.0..=1.0).contains(&self.oncoming_fraction) {
            return Err(Error::Config(
                "gen.near_goal_fraction and gen.oncoming_fraction must be in [0, 1]".into(),
            ));
        }
        if !(0.0..=PI).contains(&self.waypoint_bearing) {
            return Err(Error::Config("gen.waypoint_bearing must be in [0, π]".into()));
        }
        if !self.true_beta.is_finite() {
            return Err(Error::Config("gen.true_beta must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawnLabel {
    pub id: String,
    pub k: usize,
}

/// Sidecar metadata written next to a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub version: String,
    #[serde(default)]
    pub config_hash: String,
    pub seed: u64,
    pub true_beta: BetaVector,
    pub scaler: Scaler,
    pub gen: GenConfig,
    pub pipeline: PipelineConfig,
    pub labels: Vec<DrawnLabel>,
}

impl CorpusMeta {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("metadata serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Record {
            line: e.line(),
            field: "<metadata>".into(),
            message: e.to_string(),
        })
    }
}

/// Conventional sidecar path for a corpus file: `<corpus>.meta.json`.
pub fn meta_path(corpus: &Path) -> std::path::PathBuf {
    let mut name = corpus.as_os_str().to_owned();
    name.push(".meta.json");
    name.into()
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub scenes: Vec<Scene>,
    /// Alternative index drawn for each scene.
    pub labels: Vec<usize>,
    pub scaler: Scaler,
}

impl SyntheticCorpus {
    pub fn meta(&self, gen: &GenConfig, pipeline: &PipelineConfig, config_hash: &str) -> CorpusMeta {
        CorpusMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seed: gen.seed,
            true_beta: gen.true_beta,
            scaler: self.scaler,
            gen: gen.clone(),
            pipeline: *pipeline,
            labels: self
                .scenes
                .iter()
                .zip(&self.labels)
                .map(|(s, &k)| DrawnLabel {
                    id: s.id.clone(),
                    k,
                })
                .collect(),
        }
    }
}

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    }
}

/// Constant-velocity track ending at `end` with heading `theta`.
fn constant_velocity_track(end: Point2, v: f64, theta: f64, t_obs: usize, dt: f64) -> Vec<AgentState> {
    (0..t_obs)
        .map(|i| {
            let back = (t_obs - 1 - i) as f64 * v * dt;
            AgentState::new(end.x - back * theta.cos(), end.y - back * theta.sin(), v, theta)
        })
        .collect()
}

/// Point at fraction `f` of a constant-speed circular arc leaving the origin along
/// +x and ending at `end`.
pub fn arc_point(end: Point2, f: f64) -> Point2 {
    let r2 = end.x * end.x + end.y * end.y;
    if end.y.abs() < 1e-12 * r2.sqrt().max(1.0) {
        return end * f;
    }
    let radius = r2 / (2.0 * end.y);
    let sweep = 2.0 * end.y.atan2(end.x) * f;
    Point2::new(radius * sweep.sin(), radius * (1.0 - sweep.cos()))
}

/// Builds the observed part of one scene (no future) in world coordinates.
fn sample_context(index: usize, rng: &mut ChaCha8Rng, gen: &GenConfig, cfg: &PipelineConfig) -> Scene {
    let dt = cfg.dt;
    let v = uniform(rng, gen.speed);

    // Target past: constant speed with a wobbling heading, ending at the origin heading +x.
    let mut local = vec![AgentState::new(0.0, 0.0, v, 0.0); cfg.t_obs];
    for i in (0..cfg.t_obs.saturating_sub(1)).rev() {
        let next = local[i + 1];
        let theta = gaussian(rng, gen.heading_jitter);
        local[i] = AgentState::new(
            next.x - v * dt * next.theta.cos(),
            next.y - v * dt * next.theta.sin(),
            v,
            theta,
        );
    }

    let local_grid = crate::grid::build_grid(v, cfg.horizon(), &cfg.grid);
    let space = cfg.interaction;
    // Keep sampled neighbors off the box edges so world round-off cannot push them out.
    let margin = 1e-6;
    let inside = |p: Point2| {
        p.x > -space.behind + margin
            && p.x < space.ahead - margin
            && p.y > -space.side + margin
            && p.y < space.side - margin
    };
    let dist = uniform(rng, gen.waypoint_distance);
    let bearing = if gen.waypoint_bearing > 0.0 {
        rng.random_range(-gen.waypoint_bearing..=gen.waypoint_bearing)
    } else {
        0.0
    };
    let waypoint = Point2::from_polar(dist, bearing);
    // Sector the waypoint points into, clamped to the fan.
    let sectors = cfg.grid.k_sectors;
    let offset = (bearing + cfg.grid.angular_span / 2.0) / cfg.grid.sector_width();
    let goal_sector = (offset.max(0.0) as usize).min(sectors - 1);

    let count = rng.random_range(gen.n_neighbors[0]..=gen.n_neighbors[1]);
    let mut neighbors = Vec::with_capacity(count);
    for j in 0..count {
        let near_goal = rng.random::<f64>() < gen.near_goal_fraction;
        let mut pos = None;
        for _ in 0..100 {
            let p = if near_goal {
                let s = (goal_sector + rng.random_range(0..3)).clamp(1, sectors) - 1;
                let r = rng.random_range(0..cfg.grid.k_rings);
                let c = local_grid.sector(s)[r].center;
                c + Point2::new(gaussian(rng, gen.near_goal_sigma), gaussian(rng, gen.near_goal_sigma))
            } else {
                Point2::new(
                    rng.random_range(-space.behind..space.ahead),
                    rng.random_range(-space.side..space.side),
                )
            };
            if inside(p) && p.norm() > 1.0 {
                pos = Some(p);
                break;
            }
        }
        let pos = pos.unwrap_or(Point2::new(space.ahead * 0.5, 0.0));
        let heading = if rng.random::<f64>() < gen.oncoming_fraction {
            (pos.angle() + PI + gaussian(rng, 0.3)).rem_euclid(2.0 * PI) - PI
        } else {
            rng.random_range(-PI..PI)
        };
        let speed = uniform(rng, gen.speed);
        neighbors.push((j, constant_velocity_track(pos, speed, heading, cfg.t_obs, dt)));
    }

    let pose = Frame::new(
        Point2::new(rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0)),
        rng.random_range(-PI..PI),
    );
    let to_world = |s: &AgentState| {
        let p = pose.to_world(s.position());
        AgentState::new(p.x, p.y, s.v, pose.heading_to_world(s.theta))
    };
    Scene {
        id: format!("syn-{index:06}"),
        dt,
        t_obs: cfg.t_obs,
        t_f: cfg.t_f,
        target: AgentTrack::new(local.iter().map(to_world).collect()).with_id("target"),
        neighbors: neighbors
            .into_iter()
            .map(|(j, t)| AgentTrack::new(t.iter().map(to_world).collect()).with_id(format!("n{j}")))
            .collect(),
        waypoint: pose.to_world(waypoint),
        future: None,
    }
}

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Feature scaler fitted on the pilot contexts of a configuration.
pub fn pilot_scaler(gen: &GenConfig, cfg: &PipelineConfig) -> Result<Scaler> {
    if cfg.scaling == ScalingMode::Raw {
        return Ok(Scaler::identity());
    }
    let mut tables = Vec::with_capacity(gen.pilot_scenes);
    for i in 0..gen.pilot_scenes {
        let mut rng = scene_rng(gen.seed, PILOT_STREAM + i as u64);
        let scene = sample_context(i, &mut rng, gen, cfg);
        tables.push(prepare_scene(&scene, cfg)?.raw);
    }
    Ok(Scaler::fit(cfg.scaling, tables.iter().map(Vec::as_slice)))
}

/// Generates one complete scene and the alternative its target was sent to.
fn generate_one(
    index: usize,
    gen: &GenConfig,
    cfg: &PipelineConfig,
    scaler: &Scaler,
) -> Result<(Scene, usize)> {
    let mut rng = scene_rng(gen.seed, index as u64);
    let mut scene = sample_context(index, &mut rng, gen, cfg);
    let prepared = prepare_scene(&scene, cfg)?;
    let dist = choice_distribution(&prepared, scaler, &gen.true_beta)?;
    let k = sample_index(&dist, &mut rng);
    let goal = prepared.grid.alternatives[k].center;
    let frame = prepared.normalized.frame;
    let future = (1..=cfg.t_f)
        .map(|j| {
            let p = arc_point(goal, j as f64 / cfg.t_f as f64)
                + Point2::new(gaussian(&mut rng, gen.noise_sigma), gaussian(&mut rng, gen.noise_sigma));
            frame.to_world(p)
        })
        .collect();
    scene.future = Some(future);
    Ok((scene, k))
}

/// Logit probabilities of the alternatives of a prepared scene under `beta`.
pub fn choice_distribution(prepared: &PreparedScene, scaler: &Scaler, beta: &BetaVector) -> Result<Vec<f64>> {
    let scaled = scaler.scale_table(&prepared.raw);
    Ok(goal_probabilities(&utilities(&scaled, beta), None)?.probs)
}

/// Generates the whole corpus described by `gen`.
pub fn generate(gen: &GenConfig, cfg: &PipelineConfig) -> Result<SyntheticCorpus> {
    gen.validate()?;
    cfg.validate()?;
    let scaler = pilot_scaler(gen, cfg)?;
    let mut scenes = Vec::with_capacity(gen.n_scenes);
    let mut labels = Vec::with_capacity(gen.n_scenes);
    for i in 0..gen.n_scenes {
        let (scene, k) = generate_one(i, gen, cfg, &scaler)?;
        scenes.push(scene);
        labels.push(k);
    }
    Ok(SyntheticCorpus {
        scenes,
        labels,
        scaler,
    })
}

/// Observed choice frequencies of repeated draws from one fixed context, compared
/// with the analytic logit probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceFrequencies {
    pub draws: usize,
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub analytic: Vec<f64>,
    /// Pearson chi-squared statistic over alternatives with positive probability.
    pub chi_squared: f64,
    /// Largest standardized deviation `|f − p| / sqrt(p (1 − p) / n)`.
    pub max_z: f64,
}

pub fn empirical_choice_frequencies(draws: &[usize], analytic: &[f64]) -> ChoiceFrequencies {
    let n = draws.len();
    let mut counts = vec![0usize; analytic.len()];
    for &d in draws {
        counts[d] += 1;
    }
    let nf = n.max(1) as f64;
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
    let mut chi_squared = 0.0;
    let mut max_z = 0.0f64;
    for ((&c, &p), &f) in counts.iter().zip(analytic).zip(&frequencies) {
        if p <= 0.0 {
            continue;
        }
        let expected = p * nf;
        chi_squared += (c as f64 - expected).powi(2) / expected;
        let sd = (p * (1.0 - p) / nf).sqrt();
        if sd > 0.0 {
            max_z = max_z.max((f - p).abs() / sd);
        }
    }
    ChoiceFrequencies {
        draws: n,
        counts,
        frequencies,
        analytic: analytic.to_vec(),
        chi_squared,
        max_z,
    }
}

/// Re-draws the goal of scene `index` of the corpus `n_draws` times from its
/// fixed context. Returns the analytic probabilities and the draws.
pub fn repeat_context_draws(
    index: usize,
    n_draws: usize,
    gen: &GenConfig,
    cfg: &PipelineConfig,
    scaler: &Scaler,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut rng = scene_rng(gen.seed, index as u64);
    let scene = sample_context(index, &mut rng, gen, cfg);
    let prepared = prepare_scene(&scene, cfg)?;
    let probs = choice_distribution(&prepared, scaler, &gen.true_beta)?;
    let mut draw_rng = scene_rng(gen.seed ^ 0x5eed, index as u64);
    let draws = (0..n_draws).map(|_| sample_index(&probs, &mut draw_rng)).collect();
    Ok((probs, draws))
}
