//! Bivariate Gaussian outputs of the decoder and their negative log-likelihood.
//!
//! Each decoder step emits five raw numbers `(mx, my, sx, sy, r)`. They become a
//! Gaussian as
//!
//! ```text
//! μ = anchor + scale · (mx, my)
//! σx = exp(clamp(sx)),  σy = exp(clamp(sy))
//! ρ  = tanh(clamp(r))
//! ```
//!
//! The clamps keep every density finite; outside them the gradient is zero.

use serde::{Deserialize, Serialize};
use waydcm_core::Point2;

pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 6.0;
/// Bound on the pre-activation of ρ, so `|ρ| ≤ tanh(3) ≈ 0.995`.
pub const RHO_PRE_LIMIT: f64 = 3.0;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2 {
    pub mu: Point2,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl Gaussian2 {
    pub fn from_raw(raw: [f64; 5], anchor: Point2, scale: f64) -> Self {
        Self {
            mu: Point2::new(anchor.x + scale * raw[0], anchor.y + scale * raw[1]),
            sigma_x: raw[2].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp(),
            sigma_y: raw[3].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp(),
            rho: raw[4].clamp(-RHO_PRE_LIMIT, RHO_PRE_LIMIT).tanh(),
        }
    }

    /// `−log N(y | μ, Σ)`.
    pub fn nll(&self, y: Point2) -> f64 {
        let zx = (y.x - self.mu.x) / self.sigma_x;
        let zy = (y.y - self.mu.y) / self.sigma_y;
        let r = 1.0 - self.rho * self.rho;
        let q = zx * zx + zy * zy - 2.0 * self.rho * zx * zy;
        LOG_2PI + self.sigma_x.ln() + self.sigma_y.ln() + 0.5 * r.ln() + q / (2.0 * r)
    }
}

/// NLL of `y` under the Gaussian of one raw step and its gradient with respect
/// to the five raw outputs.
pub fn nll_and_grad(raw: [f64; 5], anchor: Point2, scale: f64, y: Point2) -> (f64, [f64; 5]) {
    let g = Gaussian2::from_raw(raw, anchor, scale);
    let zx = (y.x - g.mu.x) / g.sigma_x;
    let zy = (y.y - g.mu.y) / g.sigma_y;
    let rho = g.rho;
    let r = 1.0 - rho * rho;
    let q = zx * zx + zy * zy - 2.0 * rho * zx * zy;
    let nll = LOG_2PI + g.sigma_x.ln() + g.sigma_y.ln() + 0.5 * r.ln() + q / (2.0 * r);

    let d_mux = -(zx - rho * zy) / (g.sigma_x * r);
    let d_muy = -(zy - rho * zx) / (g.sigma_y * r);
    let inside = |v: f64| (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&v);
    let d_lsx = if inside(raw[2]) {
        1.0 - (zx * zx - rho * zx * zy) / r
    } else {
        0.0
    };
    let d_lsy = if inside(raw[3]) {
        1.0 - (zy * zy - rho * zx * zy) / r
    } else {
        0.0
    };
    let d_rho = -rho / r - zx * zy / r + rho * q / (r * r);
    let d_pre = if raw[4].abs() <= RHO_PRE_LIMIT {
        d_rho * r
    } else {
        0.0
    };
    (nll, [scale * d_mux, scale * d_muy, d_lsx, d_lsy, d_pre])
}

/// `L` weighted modes of `t_f` Gaussians each, in the target frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTrajectory {
    pub modes: Vec<Vec<Gaussian2>>,
    pub probs: Vec<f64>,
}

impl MixtureTrajectory {
    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn means(&self, mode: usize) -> Vec<Point2> {
        self.modes[mode].iter().map(|g| g.mu).collect()
    }

    /// Summed NLL of a trajectory under one mode.
    pub fn mode_nll(&self, mode: usize, truth: &[Point2]) -> f64 {
        self.modes[mode].iter().zip(truth).map(|(g, &y)| g.nll(y)).sum()
    }
}
