//! Abstract on-board sensing: one fused virtual sensor that turns ground
//! truth into noisy, sometimes missing, sometimes spurious detections.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Ego-local frame, x forward.
    pub position: Vec2,
    /// Ego-local frame.
    pub velocity: Vec2,
    pub timestamp: f64,
    pub source: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    pub sensor_id: u32,
    pub range: f64,
    pub field_of_view: f64,
    pub pos_noise_sigma: f64,
    pub miss_rate: f64,
    pub clutter_rate: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            sensor_id: 0,
            range: 25.0,
            field_of_view: 120f64.to_radians(),
            pos_noise_sigma: 0.15,
            miss_rate: 0.1,
            clutter_rate: 0.2,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.range >= 0.0
            && self.field_of_view >= 0.0
            && self.pos_noise_sigma >= 0.0
            && (0.0..1.0).contains(&self.miss_rate)
            && self.clutter_rate >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("sensor model parameters out of range".into()))
        }
    }

    /// Whether a world point falls inside range and field of view from `ego`.
    pub fn covers(&self, ego: Pose, point: Vec2) -> bool {
        let local = ego.to_local(point);
        let r = local.norm();
        if r > self.range {
            return false;
        }
        r == 0.0 || wrap_angle(local.angle()).abs() <= self.field_of_view / 2.0
    }
}

/// A ground-truth object as the sensor sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthObject {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub observable: bool,
}

/// Detections produced by one sensing pass, with the pose they were taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingFrame {
    pub timestamp: f64,
    pub ego: Pose,
    pub detections: Vec<Detection>,
}

impl SensingFrame {
    pub fn world_positions(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.detections.iter().map(|d| self.ego.to_world(d.position))
    }
}

pub fn sense<R: Rng>(ego: Pose, truth: &[TruthObject], model: &SensorModel, t: f64, rng: &mut R) -> Vec<Detection> {
    let noise = Normal::new(0.0, model.pos_noise_sigma).expect("validated sigma");
    let mut out = Vec::new();
    for obj in truth {
        if !obj.observable || !model.covers(ego, obj.position) {
            continue;
        }
        if rng.random::<f64>() < model.miss_rate {
            continue;
        }
        let local = ego.to_local(obj.position);
        let position = Vec2::new(local.x + noise.sample(rng), local.y + noise.sample(rng));
        out.push(Detection {
            position,
            velocity: obj.velocity.rotate(-ego.heading),
            timestamp: t,
            source: model.sensor_id,
            confidence: rng.random_range(0.6..=1.0),
        });
    }
    let clutter = if model.clutter_rate > 0.0 {
        Poisson::new(model.clutter_rate).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    for _ in 0..clutter {
        // Uniform over the sector area.
        let r = model.range * rng.random::<f64>().sqrt();
        let a = (rng.random::<f64>() - 0.5) * model.field_of_view;
        out.push(Detection {
            position: Vec2::from_polar(r, a),
            velocity: Vec2::ZERO,
            timestamp: t,
            source: model.sensor_id,
            confidence: rng.random_range(0.1..=0.6),
        });
    }
    out
}

/// Fraction of frames in `(now - window, now]` that saw something within
/// `radius` of `event_position`. Frames that could not have seen the
/// location are left out; if none remain, `neutral` is returned.
pub fn sensor_likelihood(
    event_position: Vec2,
    frames: &[SensingFrame],
    model: &SensorModel,
    radius: f64,
    window: f64,
    now: f64,
    neutral: f64,
) -> f64 {
    let mut covering = 0usize;
    let mut supporting = 0usize;
    for frame in frames {
        if frame.timestamp > now + 1e-9 || frame.timestamp <= now - window + 1e-9 {
            continue;
        }
        if !model.covers(frame.ego, event_position) {
            continue;
        }
        covering += 1;
        if frame.world_positions().any(|p| p.distance(event_position) <= radius) {
            supporting += 1;
        }
    }
    if covering == 0 {
        neutral
    } else {
        supporting as f64 / covering as f64
    }
}
