//! Kinematic bicycle ego vehicle with bounded actuators.

use serde::{Deserialize, Serialize};

use crate::control::ControlCommand;
use crate::error::{ensure_finite, Error, Result};
use crate::geometry::{Pose, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steering: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl VehicleState {
    pub fn at_pose(pose: Pose, speed: f64) -> Self {
        Self {
            x: pose.x,
            y: pose.y,
            heading: pose.heading,
            speed,
            ..Self::default()
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_polar(self.speed, self.heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_steer: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    pub max_speed: f64,
    pub collision_radius: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            max_steer: 35f64.to_radians(),
            max_accel: 3.0,
            max_decel: 5.0,
            max_speed: 20.0,
            collision_radius: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.wheelbase,
            self.max_steer,
            self.max_accel,
            self.max_decel,
            self.max_speed,
            self.collision_radius,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("vehicle parameters must be finite and positive".into()));
        }
        if self.max_steer >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidInput("max_steer must be below 90 degrees".into()));
        }
        Ok(())
    }

    pub fn max_curvature(&self) -> f64 {
        max_curvature(self)
    }
}

/// Largest path curvature the vehicle can follow, `tan(max_steer) / wheelbase`.
pub fn max_curvature(params: &VehicleParams) -> f64 {
    params.max_steer.tan() / params.wheelbase
}

/// One forward-Euler step of the bicycle model. Commands are clamped to the
/// actuator bounds first and held constant over the step.
pub fn step(state: &VehicleState, cmd: &ControlCommand, params: &VehicleParams, dt: f64) -> Result<VehicleState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    for (v, what) in [
        (state.x, "state.x"),
        (state.y, "state.y"),
        (state.heading, "state.heading"),
        (state.speed, "state.speed"),
        (cmd.steering, "command.steering"),
        (cmd.throttle, "command.throttle"),
        (cmd.brake, "command.brake"),
    ] {
        ensure_finite(v, what)?;
    }
    let steering = cmd.steering.clamp(-params.max_steer, params.max_steer);
    let throttle = cmd.throttle.clamp(0.0, 1.0);
    let brake = cmd.brake.clamp(0.0, 1.0);

    let (s, c) = state.heading.sin_cos();
    let x = state.x + state.speed * c * dt;
    let y = state.y + state.speed * s * dt;
    let heading = state.heading + state.speed / params.wheelbase * steering.tan() * dt;
    let accel = throttle * params.max_accel - brake * params.max_decel;
    let speed = (state.speed + accel * dt).clamp(0.0, params.max_speed);

    Ok(VehicleState {
        x,
        y,
        heading,
        speed,
        steering,
        throttle,
        brake,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmd(steering: f64, throttle: f64, brake: f64) -> ControlCommand {
        ControlCommand { steering, throttle, brake }
    }

    #[test]
    fn straight_motion() {
        let s = VehicleState { speed: 10.0, ..Default::default() };
        let n = step(&s, &cmd(0.0, 0.0, 0.0), &VehicleParams::default(), 0.05).unwrap();
        assert!((n.x - 0.5).abs() < 1e-12);
        assert_eq!(n.y, 0.0);
        assert_eq!(n.heading, 0.0);
        assert_eq!(n.speed, 10.0);
    }

    #[test]
    fn max_curvature_regression() {
        // tan(35 deg) = 0.70020753820970977, divided by 2.7
        let p = VehicleParams::default();
        assert!((max_curvature(&p) - 0.259_336_125_262_855_5).abs() < 1e-12);
        let zero = VehicleParams { max_steer: 0.0, ..p };
        assert_eq!(max_curvature(&zero), 0.0);
        let longer = VehicleParams { wheelbase: 5.4, ..p };
        assert!((max_curvature(&longer) - max_curvature(&p) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn commands_are_clamped() {
        let p = VehicleParams::default();
        let s = VehicleState { speed: 5.0, ..Default::default() };
        let n = step(&s, &cmd(2.0, 3.0, -1.0), &p, 0.1).unwrap();
        assert_eq!(n.steering, p.max_steer);
        assert_eq!(n.throttle, 1.0);
        assert_eq!(n.brake, 0.0);
    }

    #[test]
    fn speed_never_negative() {
        let p = VehicleParams::default();
        let s = VehicleState { speed: 0.1, ..Default::default() };
        let n = step(&s, &cmd(0.0, 0.0, 1.0), &p, 0.5).unwrap();
        assert_eq!(n.speed, 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let p = VehicleParams::default();
        let s = VehicleState::default();
        assert!(step(&s, &cmd(f64::NAN, 0.0, 0.0), &p, 0.05).is_err());
        assert!(step(&s, &cmd(0.0, 0.0, 0.0), &p, 0.0).is_err());
    }

    #[test]
    fn euler_error_vs_fine_reference() {
        // Same constant command integrated at the default step and at 1 ms;
        // endpoint separation after 5 s of a 10 m/s turn documents the
        // discretization error of the default step.
        let p = VehicleParams::default();
        let c = cmd(0.2, 0.0, 0.0);
        let run = |dt: f64| {
            let mut s = VehicleState { speed: 10.0, ..Default::default() };
            let n = (5.0 / dt).round() as usize;
            for _ in 0..n {
                s = step(&s, &c, &p, dt).unwrap();
            }
            s
        };
        let coarse = run(0.05);
        let fine = run(0.001);
        let err = coarse.position().distance(fine.position());
        assert!(err < 0.5, "endpoint error {err}");
        assert!((coarse.heading - fine.heading).abs() < 1e-9);
    }
}
