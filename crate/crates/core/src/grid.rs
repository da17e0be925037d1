//! Dynamic radial grid of candidate intermediate goals.
//!
//! The grid is a fan of `k_sectors` cones centered on the target heading, each cut
//! into `k_rings` rings. Its radial extent grows with the target's current speed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Multiplier on `speed × horizon` giving the longitudinal size of the grid.
pub const MAXL_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub k_sectors: usize,
    pub k_rings: usize,
    /// Total fan width in radians, centered on the heading.
    pub angular_span: f64,
    /// Lower bound on the grid size in meters, used for (nearly) stationary agents.
    pub min_maxl: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            k_sectors: 5,
            k_rings: 3,
            angular_span: PI,
            min_maxl: 2.0,
        }
    }
}

impl GridSpec {
    pub fn num_alternatives(&self) -> usize {
        self.k_sectors * self.k_rings
    }

    pub fn sector_width(&self) -> f64 {
        self.angular_span / self.k_sectors as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_sectors == 0 || self.k_rings == 0 || self.num_alternatives() < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 alternatives, got {} sectors x {} rings",
                self.k_sectors, self.k_rings
            )));
        }
        if !(self.angular_span > 0.0 && self.angular_span <= 2.0 * PI) {
            return Err(Error::Config(format!(
                "grid angular_span must be in (0, 2π], got {}",
                self.angular_span
            )));
        }
        if !(self.min_maxl.is_finite() && self.min_maxl > 0.0) {
            return Err(Error::Config(format!(
                "grid min_maxl must be positive, got {}",
                self.min_maxl
            )));
        }
        Ok(())
    }
}

/// One candidate intermediate goal and the cone it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub index: usize,
    pub sector: usize,
    pub ring: usize,
    pub center: Point2,
    /// Mid-direction of the sector, radians in the target frame.
    pub direction: f64,
    /// Left (counter-clockwise) cone boundary.
    pub d_l: f64,
    /// Right (clockwise) cone boundary.
    pub d_r: f64,
    pub ring_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub maxl: f64,
    pub spec: GridSpec,
    pub alternatives: Vec<Alternative>,
}

impl RadialGrid {
    pub fn len(&self) -> usize {
        self.alternatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alternatives.is_empty()
    }

    /// Alternatives belonging to one sector, innermost ring first.
    pub fn sector(&self, sector: usize) -> &[Alternative] {
        let r = self.spec.k_rings;
        &self.alternatives[sector * r..(sector + 1) * r]
    }

    /// Index of the center nearest to `p`; ties go to the lowest index.
    pub fn nearest(&self, p: Point2) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for alt in &self.alternatives {
            let d = alt.center.distance(p);
            if d < best_d {
                best = alt.index;
                best_d = d;
            }
        }
        best
    }
}

/// Grid size for an observed speed: `max(1.5 · v · t_f, min_maxl)`.
pub fn grid_size(v_obs: f64, horizon: f64, min_maxl: f64) -> f64 {
    (MAXL_FACTOR * v_obs * horizon).max(min_maxl)
}

/// Builds the radial grid for a target moving at `v_obs` m/s over a horizon of
/// `horizon` seconds. Alternatives are ordered sector-major (right to left) then
/// ring (inside out).
pub fn build_grid(v_obs: f64, horizon: f64, spec: &GridSpec) -> RadialGrid {
    let maxl = grid_size(v_obs, horizon, spec.min_maxl);
    let width = spec.sector_width();
    let mut alternatives = Vec::with_capacity(spec.num_alternatives());
    for sector in 0..spec.k_sectors {
        let d_r = -spec.angular_span / 2.0 + sector as f64 * width;
        let d_l = d_r + width;
        let direction = d_r + width / 2.0;
        for ring in 0..spec.k_rings {
            let ring_radius = maxl * (ring + 1) as f64 / spec.k_rings as f64;
            alternatives.push(Alternative {
                index: alternatives.len(),
                sector,
                ring,
                center: Point2::from_polar(ring_radius, direction),
                direction,
                d_l,
                d_r,
                ring_radius,
            });
        }
    }
    RadialGrid {
        maxl,
        spec: *spec,
        alternatives,
    }
}

/// Index of the alternative whose center is closest to the last point of `future`.
///
/// # Panics
/// If `future` is empty.
pub fn label_ground_truth(grid: &RadialGrid, future: &[Point2]) -> usize {
    let end = *future.last().expect("future trajectory must not be empty");
    grid.nearest(end)
}

/// Alternative centers in the fixed alternative order, as fed to the goal encoder.
pub fn goal_embedding_inputs(grid: &RadialGrid) -> Vec<Point2> {
    grid.alternatives.iter().map(|a| a.center).collect()
}
