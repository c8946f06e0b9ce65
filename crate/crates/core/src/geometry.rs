//! Planar geometry shared by the map, planner, controller and metrics.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A point or vector in the plane, meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(length: f64, angle: f64) -> Self {
        Self::new(length * angle.cos(), length * angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Vec2::new(x, y)
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Position plus heading (rad, counter-clockwise from +x).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Expresses a world point in this pose's frame (x forward, y left).
    pub fn to_local(&self, world: Vec2) -> Vec2 {
        (world - self.position()).rotate(-self.heading)
    }

    pub fn to_world(&self, local: Vec2) -> Vec2 {
        local.rotate(self.heading) + self.position()
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

pub fn distance_to_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(a + ab * t)
}

pub fn cumulative_lengths(points: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += p.distance(points[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Closest-point projection of a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub segment: usize,
    /// Fraction along `segment`, in `[0, 1]`.
    pub t: f64,
    pub arc_length: f64,
    /// Left-positive perpendicular offset relative to the segment direction.
    pub signed_offset: f64,
    pub distance: f64,
    pub point: Vec2,
}

/// Projects `p` on the nearest segment of `points`. Ties go to the earliest segment.
///
/// Returns `None` for polylines with fewer than two points.
pub fn project_onto_polyline(points: &[Vec2], cumulative: &[f64], p: Vec2) -> Option<Projection> {
    if points.len() < 2 {
        return None;
    }
    let mut best: Option<Projection> = None;
    for i in 0..points.len() - 1 {
        let a = points[i];
        let b = points[i + 1];
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let foot = a + ab * t;
        let distance = p.distance(foot);
        if best.is_none_or(|b| distance < b.distance) {
            let len = len2.sqrt();
            let signed_offset = if len > 0.0 {
                ab.cross(p - a) / len
            } else {
                distance
            };
            // Past the ends of the polyline the perpendicular offset understates
            // the distance; keep the sign but use the true distance.
            let signed_offset = if (t == 0.0 && i == 0) || (t == 1.0 && i == points.len() - 2) {
                distance.copysign(if signed_offset == 0.0 { 1.0 } else { signed_offset })
            } else {
                signed_offset
            };
            best = Some(Projection {
                segment: i,
                t,
                arc_length: cumulative[i] + t * len,
                signed_offset,
                distance,
                point: foot,
            });
        }
    }
    best
}

/// Point and tangent heading at arc length `s`, clamped to the polyline.
pub fn point_at_arc_length(points: &[Vec2], cumulative: &[f64], s: f64) -> (Vec2, f64) {
    debug_assert!(points.len() >= 2);
    let total = *cumulative.last().unwrap_or(&0.0);
    let s = s.clamp(0.0, total);
    let idx = match cumulative.binary_search_by(|c| c.total_cmp(&s)) {
        Ok(i) => i.min(points.len() - 2),
        Err(i) => i.saturating_sub(1).min(points.len() - 2),
    };
    let a = points[idx];
    let b = points[idx + 1];
    let seg = cumulative[idx + 1] - cumulative[idx];
    let t = if seg > 0.0 { (s - cumulative[idx]) / seg } else { 0.0 };
    (a + (b - a) * t, (b - a).angle())
}

/// Rounds to 9 significant digits. Every value that reaches a log goes
/// through here so that logs re-parse to the exact same `f64`.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.8e}", x).parse().unwrap_or(x)
}
