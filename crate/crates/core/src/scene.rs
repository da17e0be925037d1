//! Scene types and the target-centric frame.
//!
//! Scenes are stored in world coordinates. Before anything else touches them they
//! go through [`normalize_scene`], which moves every position into the frame whose
//! origin is the target agent at the last observed step and whose x-axis points
//! along the target's heading. The inverse transform is kept so predictions can be
//! mapped back out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Frame, Point2};

/// Default sampling period of a scene in seconds (10 Hz).
pub const DEFAULT_DT: f64 = 0.1;

/// Kinematic state of one agent at one step. Serialized as `[x, y, v, theta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Speed in m/s, never negative.
    pub v: f64,
    /// Heading in radians, in (−π, π].
    pub theta: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, v: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            v,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

impl From<[f64; 4]> for AgentState {
    fn from(v: [f64; 4]) -> Self {
        // Out-of-range headings are wrapped; NaN stays NaN and is caught by validation.
        if v[3].is_finite() {
            Self::new(v[0], v[1], v[2], v[3])
        } else {
            Self {
                x: v[0],
                y: v[1],
                v: v[2],
                theta: v[3],
            }
        }
    }
}

impl From<AgentState> for [f64; 4] {
    fn from(s: AgentState) -> Self {
        [s.x, s.y, s.v, s.theta]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub states: Vec<AgentState>,
    pub valid: Vec<bool>,
}

impl AgentTrack {
    /// A fully observed track.
    pub fn new(states: Vec<AgentState>) -> Self {
        let valid = vec![true; states.len()];
        Self {
            id: None,
            states,
            valid,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    /// State at the last observed step.
    pub fn last(&self) -> &AgentState {
        self.states.last().expect("track has at least one state")
    }

    pub fn is_valid_at(&self, step: usize) -> bool {
        self.valid.get(step).copied().unwrap_or(false)
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|&v| v)
    }

    /// Replaces masked steps by the last valid state before them, or by the first
    /// valid state for a masked prefix. The mask itself is left untouched.
    fn carry_forward(&mut self) {
        let Some(first) = self.valid.iter().position(|&v| v) else {
            return;
        };
        let mut last = self.states[first];
        for (state, &valid) in self.states.iter_mut().zip(&self.valid) {
            if valid {
                last = *state;
            } else {
                *state = last;
            }
        }
    }
}

/// One prediction problem: a target, its neighbors, a long-term waypoint and,
/// for training data, the ground-truth future of the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub dt: f64,
    pub t_obs: usize,
    pub t_f: usize,
    pub target: AgentTrack,
    pub neighbors: Vec<AgentTrack>,
    pub waypoint: Point2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future: Option<Vec<Point2>>,
}

impl Scene {
    /// Prediction horizon in seconds.
    pub fn horizon(&self) -> f64 {
        self.t_f as f64 * self.dt
    }

    /// Checks the structural and unit invariants of the scene.
    pub fn validate(&self, limits: &SceneLimits) -> Result<()> {
        let fail = |msg: String| Err(Error::scene(&self.id, msg));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if self.t_obs == 0 {
            return fail("t_obs must be at least 1".into());
        }
        if !self.waypoint.is_finite() {
            return fail("waypoint is not finite".into());
        }
        let tracks = std::iter::once(("target".to_string(), &self.target)).chain(
            self.neighbors
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("neighbors[{i}]"), t)),
        );
        for (name, track) in tracks {
            if track.states.len() != self.t_obs {
                return fail(format!(
                    "{name}.states has {} steps, expected t_obs = {}",
                    track.states.len(),
                    self.t_obs
                ));
            }
            if track.valid.len() != self.t_obs {
                return fail(format!(
                    "{name}.valid has {} entries, expected t_obs = {}",
                    track.valid.len(),
                    self.t_obs
                ));
            }
            let mut prev: Option<(usize, &AgentState)> = None;
            for (i, s) in track.states.iter().enumerate() {
                if !(s.x.is_finite() && s.y.is_finite() && s.v.is_finite() && s.theta.is_finite())
                {
                    return fail(format!("{name}.states[{i}] is not finite"));
                }
                if s.v < 0.0 {
                    return fail(format!("{name}.states[{i}].v is negative ({})", s.v));
                }
                if !track.valid[i] {
                    continue;
                }
                if let Some((j, p)) = prev {
                    let bound = limits.v_max * self.dt * (i - j) as f64;
                    let jump = p.position().distance(s.position());
                    if jump > bound * (1.0 + 1e-9) {
                        return fail(format!(
                            "{name}.states[{i}] moved {jump:.3} m in {} steps, above v_max bound {bound:.3} m",
                            i - j
                        ));
                    }
                }
                prev = Some((i, s));
            }
        }
        if let Some(future) = &self.future {
            if future.len() != self.t_f {
                return fail(format!(
                    "future has {} steps, expected t_f = {}",
                    future.len(),
                    self.t_f
                ));
            }
            if future.iter().any(|p| !p.is_finite()) {
                return fail("future contains non-finite positions".into());
            }
        }
        Ok(())
    }
}

/// Sanity bounds applied when scenes are loaded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneLimits {
    /// Maximum plausible speed in m/s, used to reject teleporting tracks.
    pub v_max: f64,
}

impl Default for SceneLimits {
    fn default() -> Self {
        Self { v_max: 80.0 }
    }
}

/// Axis-aligned box in the target frame in which neighbors are considered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSpace {
    pub ahead: f64,
    pub behind: f64,
    pub side: f64,
}

impl Default for InteractionSpace {
    fn default() -> Self {
        Self {
            ahead: 40.0,
            behind: 10.0,
            side: 25.0,
        }
    }
}

impl InteractionSpace {
    pub fn new(ahead: f64, behind: f64, side: f64) -> Result<Self> {
        let s = Self {
            ahead,
            behind,
            side,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.ahead, self.behind, self.side]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "interaction space extents must be strictly positive, got {self:?}"
            )))
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= -self.behind && p.x <= self.ahead && p.y >= -self.side && p.y <= self.side
    }
}

/// A scene expressed in the target-centric frame, together with the transform
/// back to the world frame it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScene {
    pub scene: Scene,
    pub frame: Frame,
}

impl NormalizedScene {
    /// Maps the scene back to world coordinates.
    pub fn to_world(&self) -> Scene {
        map_scene(&self.scene, |p| self.frame.to_world(p), |h| {
            self.frame.heading_to_world(h)
        })
    }

    pub fn point_to_world(&self, p: Point2) -> Point2 {
        self.frame.to_world(p)
    }
}

fn map_scene(
    scene: &Scene,
    point: impl Fn(Point2) -> Point2,
    heading: impl Fn(f64) -> f64,
) -> Scene {
    let map_track = |t: &AgentTrack| AgentTrack {
        id: t.id.clone(),
        states: t
            .states
            .iter()
            .map(|s| {
                let p = point(s.position());
                AgentState {
                    x: p.x,
                    y: p.y,
                    v: s.v,
                    theta: heading(s.theta),
                }
            })
            .collect(),
        valid: t.valid.clone(),
    };
    Scene {
        id: scene.id.clone(),
        dt: scene.dt,
        t_obs: scene.t_obs,
        t_f: scene.t_f,
        target: map_track(&scene.target),
        neighbors: scene.neighbors.iter().map(map_track).collect(),
        waypoint: point(scene.waypoint),
        future: scene
            .future
            .as_ref()
            .map(|f| f.iter().map(|&p| point(p)).collect()),
    }
}

/// Heading that defines the target frame: the heading at the last step when the
/// target is moving, otherwise the heading of the most recent valid moving state.
fn reference_heading(scene: &Scene) -> Result<f64> {
    let track = &scene.target;
    let last = scene.t_obs - 1;
    if !track.is_valid_at(last) {
        return Err(Error::scene(
            &scene.id,
            format!("target has no valid state at t_obs (step {last})"),
        ));
    }
    (0..=last)
        .rev()
        .find(|&i| track.valid[i] && track.states[i].v > 0.0)
        .map(|i| track.states[i].theta)
        .ok_or_else(|| {
            Error::scene(
                &scene.id,
                "target is stationary over the whole track, heading undefined",
            )
        })
}

/// Moves a world-frame scene into the target-centric frame.
///
/// Masked steps are filled by carrying the last valid state forward, and
/// neighbor tracks without a single valid step are dropped.
pub fn normalize_scene(raw: &Scene) -> Result<NormalizedScene> {
    if raw.target.states.len() != raw.t_obs || raw.t_obs == 0 {
        return Err(Error::scene(
            &raw.id,
            format!(
                "target track has {} states, expected t_obs = {}",
                raw.target.states.len(),
                raw.t_obs
            ),
        ));
    }
    let heading = reference_heading(raw)?;
    let origin = raw.target.last().position();
    let frame = Frame::new(origin, heading);

    let mut filled = raw.clone();
    filled.neighbors.retain(AgentTrack::any_valid);
    filled.target.carry_forward();
    for n in &mut filled.neighbors {
        n.carry_forward();
    }

    let mut scene = map_scene(&filled, |p| frame.to_local(p), |h| frame.heading_to_local(h));
    // Exact zeros at the reference state, whatever the rounding of the rotation.
    if let Some(last) = scene.target.states.last_mut() {
        last.x = 0.0;
        last.y = 0.0;
        last.theta = 0.0;
    }
    Ok(NormalizedScene { scene, frame })
}

/// Keeps the neighbors whose last observed position lies inside `space`.
/// The relative order of the kept neighbors is preserved.
pub fn filter_neighbors(scene: &Scene, space: &InteractionSpace) -> Scene {
    let mut out = scene.clone();
    out.neighbors
        .retain(|n| space.contains(n.last().position()));
    out
}
