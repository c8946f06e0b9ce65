//! Trajectory follower: Pure Pursuit for steering, PID with conditional
//! integration for throttle and brake.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::{point_at_arc_length, project_onto_polyline, wrap_angle, Pose};
use crate::planner::Trajectory;
use crate::vehicle::{VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub steering: f64,
    pub throttle: f64,
    pub brake: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub look_ahead: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_clamp: f64,
    pub max_steer: f64,
    pub max_throttle: f64,
    pub max_brake: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            look_ahead: 5.0,
            kp: 0.8,
            ki: 0.1,
            kd: 0.05,
            integral_clamp: 2.0,
            max_steer: 35f64.to_radians(),
            max_throttle: 1.0,
            max_brake: 1.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.look_ahead > 0.0)
            || !(self.integral_clamp > 0.0)
            || !(self.max_steer > 0.0)
            || !(self.max_throttle > 0.0)
            || !(self.max_brake > 0.0)
        {
            return Err(Error::InvalidInput("look-ahead and clamps must be positive".into()));
        }
        Ok(())
    }

    fn clamps(&self) -> OutputClamps {
        OutputClamps {
            integral: self.integral_clamp,
            throttle: self.max_throttle,
            brake: self.max_brake,
        }
    }
}

/// Steering angle from Pure Pursuit toward the point `look_ahead` meters of
/// arc beyond the ego's projection on `trajectory`.
pub fn pure_pursuit(ego: Pose, trajectory: &Trajectory, look_ahead: f64, wheelbase: f64, max_steer: f64) -> Result<f64> {
    let points = trajectory.points();
    if points.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    let target = if points.len() == 1 {
        points[0]
    } else {
        let cum = &trajectory.cumulative_arc_length;
        let proj = project_onto_polyline(&points, cum, ego.position()).expect("two points");
        point_at_arc_length(&points, cum, proj.arc_length + look_ahead).0
    };
    let local = ego.to_local(target);
    let dist = local.norm();
    if dist < 1e-9 {
        return Ok(0.0);
    }
    let alpha = local.y.atan2(local.x);
    let curvature = 2.0 * alpha.sin() / dist;
    Ok((curvature * wheelbase).atan().clamp(-max_steer, max_steer))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputClamps {
    pub integral: f64,
    pub throttle: f64,
    pub brake: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Longitudinal {
    pub throttle: f64,
    pub brake: f64,
}

/// One PID update on the speed error (target minus actual, m/s).
///
/// The integral is clamped and only accumulates while the output is not
/// pushing further into saturation.
pub fn pid_longitudinal(
    speed_error: f64,
    state: PidState,
    gains: PidGains,
    dt: f64,
    clamps: OutputClamps,
) -> Result<(Longitudinal, PidState)> {
    ensure_finite(speed_error, "speed error")?;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let derivative = state.prev_error.map_or(0.0, |prev| (speed_error - prev) / dt);
    let output = |integral: f64| gains.kp * speed_error + gains.ki * integral + gains.kd * derivative;

    let candidate = (state.integral + speed_error * dt).clamp(-clamps.integral, clamps.integral);
    let u_candidate = output(candidate);
    let saturated_high = u_candidate > clamps.throttle && speed_error > 0.0;
    let saturated_low = u_candidate < -clamps.brake && speed_error < 0.0;
    let integral = if saturated_high || saturated_low {
        state.integral.clamp(-clamps.integral, clamps.integral)
    } else {
        candidate
    };
    let u = output(integral);
    let cmd = if u >= 0.0 {
        Longitudinal {
            throttle: u.min(clamps.throttle),
            brake: 0.0,
        }
    } else {
        Longitudinal {
            throttle: 0.0,
            brake: (-u).min(clamps.brake),
        }
    };
    Ok((
        cmd,
        PidState {
            integral,
            prev_error: Some(speed_error),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowInfo {
    pub cross_track: f64,
    pub heading_error: f64,
    pub target_speed: f64,
}

/// Pure Pursuit and PID combined, with the setpoint taken from the
/// trajectory speed profile at the ego's projection.
pub fn follow_tick(
    ego: &VehicleState,
    trajectory: &Trajectory,
    cfg: &ControllerConfig,
    vehicle: &VehicleParams,
    pid: PidState,
    dt: f64,
) -> Result<(ControlCommand, PidState, FollowInfo)> {
    let max_steer = cfg.max_steer.min(vehicle.max_steer);
    let steering = pure_pursuit(ego.pose(), trajectory, cfg.look_ahead, vehicle.wheelbase, max_steer)?;
    let sample = trajectory.sample_at(ego.position());
    let (long, pid) = pid_longitudinal(
        sample.target_speed - ego.speed,
        pid,
        PidGains {
            kp: cfg.kp,
            ki: cfg.ki,
            kd: cfg.kd,
        },
        dt,
        cfg.clamps(),
    )?;
    Ok((
        ControlCommand {
            steering,
            throttle: long.throttle,
            brake: long.brake,
        },
        pid,
        FollowInfo {
            cross_track: sample.cross_track,
            heading_error: wrap_angle(ego.heading - sample.heading),
            target_speed: sample.target_speed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use proptest::prelude::*;

    fn straight(len: f64, speed: f64) -> Trajectory {
        let poses: Vec<Pose> = (0..=(len as usize)).map(|i| Pose::new(i as f64, 0.0, 0.0)).collect();
        Trajectory::from_poses(poses, vec![speed; len as usize + 1], 1, 0.0)
    }

    fn circle(radius: f64, n: usize) -> Trajectory {
        // Counter-clockwise circle centered at (0, radius), starting at origin.
        let poses: Vec<Pose> = (0..n)
            .map(|i| {
                let a = i as f64 * 0.01;
                Pose::new(radius * a.sin(), radius * (1.0 - a.cos()), a)
            })
            .collect();
        let speeds = vec![5.0; n];
        Trajectory::from_poses(poses, speeds, 1, 0.0)
    }

    const GAINS: PidGains = PidGains { kp: 0.5, ki: 0.0, kd: 0.0 };
    const CLAMPS: OutputClamps = OutputClamps { integral: 1.0, throttle: 1.0, brake: 1.0 };

    #[test]
    fn dead_ahead_gives_zero_steering() {
        let t = straight(50.0, 5.0);
        let s = pure_pursuit(Pose::new(3.0, 0.0, 0.0), &t, 5.0, 2.7, 0.6).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn point_at_ninety_degrees() {
        // Single-point trajectory placed LA to the left: curvature 2/LA.
        let la = 4.0;
        let t = Trajectory::from_poses(vec![Pose::new(0.0, la, 0.0)], vec![0.0], 1, 0.0);
        let s = pure_pursuit(Pose::new(0.0, 0.0, 0.0), &t, la, 2.7, 1.5).unwrap();
        assert!((s - (2.0 / la * 2.7f64).atan()).abs() < 1e-12);
    }

    #[test]
    fn circle_tracking_matches_closed_form() {
        let l = 2.7;
        for &radius in &[10.0, 20.0, 40.0] {
            let t = circle(radius, 600);
            let ego = t.poses[50];
            let s = pure_pursuit(ego, &t, 2.0, l, 0.6).unwrap();
            let expected = (l / radius).atan();
            assert!(((s - expected) / expected).abs() < 0.05, "R={radius}: {s} vs {expected}");
        }
    }

    #[test]
    fn empty_trajectory_is_error() {
        let t = Trajectory::from_poses(vec![], vec![], 1, 0.0);
        assert!(pure_pursuit(Pose::default(), &t, 5.0, 2.7, 0.6).is_err());
    }

    #[test]
    fn pid_zero_input() {
        let (c, _) = pid_longitudinal(0.0, PidState::default(), GAINS, 0.05, CLAMPS).unwrap();
        assert_eq!((c.throttle, c.brake), (0.0, 0.0));
    }

    #[test]
    fn pid_proportional_only() {
        let mut st = PidState::default();
        for _ in 0..10 {
            let (c, next) = pid_longitudinal(1.0, st, GAINS, 0.05, CLAMPS).unwrap();
            assert_eq!(c.throttle, 0.5);
            assert_eq!(c.brake, 0.0);
            st = next;
        }
    }

    #[test]
    fn pid_negative_output_brakes() {
        let (c, _) = pid_longitudinal(-3.0, PidState::default(), GAINS, 0.05, CLAMPS).unwrap();
        assert_eq!(c.throttle, 0.0);
        assert_eq!(c.brake, 1.0);
    }

    #[test]
    fn pid_rejects_non_finite() {
        assert!(pid_longitudinal(f64::INFINITY, PidState::default(), GAINS, 0.05, CLAMPS).is_err());
    }

    #[test]
    fn integral_respects_clamp_under_saturation() {
        let gains = PidGains { kp: 4.0, ki: 3.0, kd: 0.1 };
        let clamps = OutputClamps { integral: 0.75, throttle: 1.0, brake: 1.0 };
        let mut st = PidState::default();
        for k in 0..1000 {
            let e = if k < 600 { 8.0 } else { -0.5 };
            let (_, next) = pid_longitudinal(e, st, gains, 0.05, clamps).unwrap();
            assert!(next.integral.abs() <= clamps.integral + 1e-15);
            st = next;
        }
    }

    #[test]
    fn on_path_at_speed_is_quiet() {
        let t = straight(60.0, 8.0);
        let ego = VehicleState { x: 5.0, speed: 8.0, ..Default::default() };
        let (cmd, _, info) = follow_tick(&ego, &t, &ControllerConfig::default(), &VehicleParams::default(), PidState::default(), 0.05).unwrap();
        assert_eq!(cmd.steering, 0.0);
        assert!(cmd.throttle < 1e-9 && cmd.brake < 1e-9);
        assert_eq!(info.cross_track, 0.0);
    }

    proptest! {
        #[test]
        fn steering_is_odd_in_lateral_offset(offset in 0.01f64..2.0, la in 1.0f64..10.0) {
            let t = straight(80.0, 5.0);
            let left = pure_pursuit(Pose::new(10.0, offset, 0.0), &t, la, 2.7, 0.6).unwrap();
            let right = pure_pursuit(Pose::new(10.0, -offset, 0.0), &t, la, 2.7, 0.6).unwrap();
            prop_assert!((left + right).abs() < 1e-12);
            prop_assert!(left < 0.0);
        }

        #[test]
        fn commands_within_clamps(e in -20.0f64..20.0, integral in -1.0f64..1.0, prev in -20.0f64..20.0,
                                  kp in 0.0f64..5.0, ki in 0.0f64..2.0, kd in 0.0f64..1.0) {
            let st = PidState { integral, prev_error: Some(prev) };
            let (c, next) = pid_longitudinal(e, st, PidGains { kp, ki, kd }, 0.05, CLAMPS).unwrap();
            prop_assert!((0.0..=1.0).contains(&c.throttle));
            prop_assert!((0.0..=1.0).contains(&c.brake));
            prop_assert!(c.throttle == 0.0 || c.brake == 0.0);
            prop_assert!(next.integral.abs() <= 1.0);
        }
    }

    #[test]
    fn follow_is_deterministic() {
        let t = circle(15.0, 300);
        let ego = VehicleState { x: 0.3, y: 0.2, heading: 0.1, speed: 4.0, ..Default::default() };
        let cfg = ControllerConfig::default();
        let p = VehicleParams::default();
        let a = follow_tick(&ego, &t, &cfg, &p, PidState::default(), 0.05).unwrap();
        let b = follow_tick(&ego, &t, &cfg, &p, PidState::default(), 0.05).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let _ = Vec2::ZERO;
    }
}
