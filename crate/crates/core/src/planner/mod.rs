//! Hybrid-A* trajectory planning over the LDM and the replanning triggers.

mod hybrid_astar;
mod triggers;
mod ttc;

pub use hybrid_astar::{path_is_free, plan, plan_on_grid, Obstacle, PlanFailure, PlanOutcome, PlanStats, PosePath};
pub use triggers::{check_triggers, Trigger, TriggerConfig, TriggerSet};
pub use ttc::{ttc_min, ttc_rollout};

use serde::{Deserialize, Serialize};

use crate::geometry::{cumulative_lengths, project_onto_polyline, wrap_angle, Pose, Vec2};
use crate::world::HazardKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    pub xy_resolution: f64,
    pub heading_bins: usize,
    pub steering_samples: usize,
    pub primitive_arc_length: f64,
    pub goal_xy_tol: f64,
    pub goal_heading_tol: f64,
    pub steering_change_weight: f64,
    pub max_expansions: usize,
    /// Spacing of collision checks and emitted poses along each arc.
    pub sample_step: f64,
    /// Tracks at or above this belief are planning obstacles.
    pub b_obstacle: f64,
    /// Assumed radius of a tracked object.
    pub object_radius: f64,
    /// Extra clearance added around every dynamic obstacle.
    pub obstacle_margin: f64,
    /// Arc length the search may spend leaving occupied space at the start.
    pub start_escape: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            xy_resolution: 0.5,
            heading_bins: 36,
            steering_samples: 5,
            primitive_arc_length: 2.0,
            goal_xy_tol: 1.0,
            goal_heading_tol: 10f64.to_radians(),
            steering_change_weight: 0.5,
            max_expansions: 200_000,
            sample_step: 0.25,
            b_obstacle: 0.6,
            object_radius: 1.5,
            obstacle_margin: 0.5,
            start_escape: 4.0,
        }
    }
}

/// Radius an accepted event of `kind` blocks around its reported position.
pub fn event_radius(kind: HazardKind) -> f64 {
    match kind {
        HazardKind::StationaryVehicle => 1.2,
        HazardKind::RoadClosure => 4.5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedProfileConfig {
    pub cruise_speed: f64,
    /// Linear ramp-down length before the goal.
    pub goal_ramp: f64,
    /// Floor of the goal ramp so the ego keeps creeping to the goal.
    pub creep_speed: f64,
    /// Deceleration used to size the ramp before a hazard.
    pub comfort_decel: f64,
    /// Speed at the hazard, as a fraction of cruise.
    pub hazard_pass_fraction: f64,
    /// Hazards closer than this to the path slow the ego down.
    pub hazard_influence: f64,
}

impl Default for SpeedProfileConfig {
    fn default() -> Self {
        Self {
            cruise_speed: 10.0,
            goal_ramp: 10.0,
            creep_speed: 1.0,
            comfort_decel: 2.0,
            hazard_pass_fraction: 0.5,
            hazard_influence: 6.0,
        }
    }
}

/// Target speed per pose: cruise, ramped down linearly over the last
/// `goal_ramp` meters and over 1.5 braking distances before each hazard.
pub fn speed_profile(arc: &[f64], hazard_arcs: &[f64], cfg: &SpeedProfileConfig) -> Vec<f64> {
    let total = arc.last().copied().unwrap_or(0.0);
    let cruise = cfg.cruise_speed;
    let pass = cruise * cfg.hazard_pass_fraction;
    let ramp = 1.5 * (cruise * cruise - pass * pass) / (2.0 * cfg.comfort_decel);
    arc.iter()
        .map(|&s| {
            let mut v = cruise;
            if cfg.goal_ramp > 0.0 {
                v = v.min((cruise * (total - s) / cfg.goal_ramp).max(cfg.creep_speed));
            }
            for &h in hazard_arcs {
                let before = h - s;
                let limit = if before >= 0.0 {
                    if ramp > 0.0 {
                        pass + (cruise - pass) * (before / ramp).min(1.0)
                    } else {
                        pass
                    }
                } else if -before <= cfg.hazard_influence {
                    pass
                } else {
                    cruise
                };
                v = v.min(limit);
            }
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub target_speeds: Vec<f64>,
    pub cumulative_arc_length: Vec<f64>,
    pub planned_on_version: u64,
    pub planned_at: f64,
    /// Accepted events already accounted for when this plan was made.
    #[serde(default)]
    pub known_events: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub arc_length: f64,
    pub cross_track: f64,
    pub heading: f64,
    pub target_speed: f64,
}

impl Trajectory {
    /// Builds a trajectory whose arc length is measured by chords.
    pub fn from_poses(poses: Vec<Pose>, target_speeds: Vec<f64>, planned_on_version: u64, planned_at: f64) -> Self {
        let pts: Vec<Vec2> = poses.iter().map(|p| p.position()).collect();
        Self {
            cumulative_arc_length: cumulative_lengths(&pts),
            poses,
            target_speeds,
            planned_on_version,
            planned_at,
            known_events: Vec::new(),
        }
    }

    pub fn points(&self) -> Vec<Vec2> {
        self.poses.iter().map(|p| p.position()).collect()
    }

    pub fn length(&self) -> f64 {
        self.cumulative_arc_length.last().copied().unwrap_or(0.0)
    }

    /// Projection of `p` with the speed setpoint interpolated at that arc length.
    pub fn sample_at(&self, p: Vec2) -> TrajectorySample {
        match self.poses.len() {
            0 => TrajectorySample { arc_length: 0.0, cross_track: 0.0, heading: 0.0, target_speed: 0.0 },
            1 => TrajectorySample {
                arc_length: 0.0,
                cross_track: self.poses[0].to_local(p).y,
                heading: self.poses[0].heading,
                target_speed: self.target_speeds[0],
            },
            _ => {
                let pts = self.points();
                let proj = project_onto_polyline(&pts, &self.cumulative_arc_length, p).expect("two points");
                let i = proj.segment;
                let lerp = |a: f64, b: f64| a + (b - a) * proj.t;
                let h0 = self.poses[i].heading;
                let dh = wrap_angle(self.poses[i + 1].heading - h0);
                TrajectorySample {
                    arc_length: lerp(self.cumulative_arc_length[i], self.cumulative_arc_length[i + 1]),
                    cross_track: proj.signed_offset,
                    heading: h0 + dh * proj.t,
                    target_speed: lerp(self.target_speeds[i], self.target_speeds[i + 1]),
                }
            }
        }
    }

    /// Largest `|dθ/ds|` between consecutive poses.
    pub fn max_abs_curvature(&self) -> f64 {
        self.poses
            .windows(2)
            .zip(self.cumulative_arc_length.windows(2))
            .filter(|(_, s)| s[1] > s[0])
            .map(|(p, s)| wrap_angle(p[1].heading - p[0].heading).abs() / (s[1] - s[0]))
            .fold(0.0, f64::max)
    }

    /// Polyline from arc length `from` to `from + length`.
    pub fn segment_points(&self, from: f64, length: f64) -> Vec<Vec2> {
        let pts = self.points();
        if pts.len() < 2 {
            return pts;
        }
        let to = from + length;
        let mut out = vec![crate::geometry::point_at_arc_length(&pts, &self.cumulative_arc_length, from).0];
        for (p, &s) in pts.iter().zip(&self.cumulative_arc_length) {
            if s > from && s < to {
                out.push(*p);
            }
        }
        out.push(crate::geometry::point_at_arc_length(&pts, &self.cumulative_arc_length, to).0);
        out.dedup_by(|a, b| a.distance(*b) < 1e-12);
        out
    }
}
