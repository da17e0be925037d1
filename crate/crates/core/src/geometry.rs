use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// A planar point or displacement in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(radius: f64, angle: f64) -> Self {
        Self::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Absolute angular difference wrapped to [0, π].
pub fn abs_angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// Unsigned angle between two vectors in [0, π]. Zero when either vector is zero.
pub fn angle_between(a: Point2, b: Point2) -> f64 {
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return 0.0;
    }
    a.cross(b).atan2(a.dot(b)).abs()
}

/// A rigid planar transform mapping target-frame coordinates to world coordinates:
/// `world = origin + R(heading) · local`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: Point2,
    pub heading: f64,
}

impl Frame {
    pub const IDENTITY: Frame = Frame {
        origin: Point2::ORIGIN,
        heading: 0.0,
    };

    pub fn new(origin: Point2, heading: f64) -> Self {
        Self { origin, heading }
    }

    pub fn to_local(&self, world: Point2) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        let d = world - self.origin;
        Point2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    pub fn to_world(&self, local: Point2) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        Point2::new(
            self.origin.x + c * local.x - s * local.y,
            self.origin.y + s * local.x + c * local.y,
        )
    }

    pub fn heading_to_local(&self, world_heading: f64) -> f64 {
        wrap_angle(world_heading - self.heading)
    }

    pub fn heading_to_world(&self, local_heading: f64) -> f64 {
        wrap_angle(local_heading + self.heading)
    }
}
