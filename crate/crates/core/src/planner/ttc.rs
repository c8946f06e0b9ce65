use crate::geometry::Vec2;

/// Earliest time in `[0, horizon]` at which an ego driving along `path` at
/// constant `speed` comes within `radius_sum` of an object moving at
/// constant velocity. The ego holds still at the end of the path.
/// Returns `f64::INFINITY` when no contact happens.
pub fn ttc_rollout(path: &[Vec2], speed: f64, object: Vec2, object_velocity: Vec2, radius_sum: f64, horizon: f64) -> f64 {
    debug_assert!(horizon > 0.0);
    let Some(&first) = path.first() else {
        return f64::INFINITY;
    };
    let mut t0 = 0.0;
    let mut at = first;
    if speed > 0.0 {
        for w in path.windows(2) {
            if t0 >= horizon {
                return f64::INFINITY;
            }
            let seg = w[1] - w[0];
            let len = seg.norm();
            if len == 0.0 {
                continue;
            }
            let t1 = (t0 + len / speed).min(horizon);
            let vel = seg * (speed / len);
            if let Some(t) = first_contact(w[0], vel, t0, t1, object, object_velocity, radius_sum) {
                return t;
            }
            t0 += len / speed;
            at = w[1];
        }
    }
    if t0 < horizon {
        if let Some(t) = first_contact(at, Vec2::ZERO, t0, horizon, object, object_velocity, radius_sum) {
            return t;
        }
    }
    f64::INFINITY
}

/// Ego at `ego_start` at time `t0`, moving at `ego_vel`; object at `q0` at
/// time 0 moving at `q_vel`. Earliest `t` in `[t0, t1]` with distance at
/// most `radius`.
fn first_contact(ego_start: Vec2, ego_vel: Vec2, t0: f64, t1: f64, q0: Vec2, q_vel: Vec2, radius: f64) -> Option<f64> {
    if t1 < t0 {
        return None;
    }
    // Relative position r(t) = c + d t.
    let c = ego_start - ego_vel * t0 - q0;
    let d = ego_vel - q_vel;
    let at = |t: f64| (c + d * t).norm_squared();
    let r2 = radius * radius;
    if at(t0) <= r2 {
        return Some(t0);
    }
    let a = d.norm_squared();
    if a == 0.0 {
        return None;
    }
    let b = c.dot(d);
    let disc = b * b - a * (c.norm_squared() - r2);
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / a;
    (t >= t0 && t <= t1).then_some(t)
}

/// Minimum TTC over `objects` (position, velocity).
pub fn ttc_min(path: &[Vec2], speed: f64, objects: &[(Vec2, Vec2)], radius_sum: f64, horizon: f64) -> f64 {
    objects
        .iter()
        .map(|&(q, v)| ttc_rollout(path, speed, q, v, radius_sum, horizon))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    #[test]
    fn head_on_static_obstacle() {
        let path = [Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
        let t = ttc_rollout(&path, 10.0, Vec2::new(50.0, 0.0), Vec2::ZERO, 0.0, 10.0);
        assert!((t - 5.0).abs() < 1e-12);
        let t = ttc_rollout(&path, 10.0, Vec2::new(50.0, 0.0), Vec2::ZERO, 2.0, 10.0);
        assert!((t - 4.8).abs() < 1e-12);
    }

    #[test]
    fn receding_obstacle_is_infinite() {
        let path = [Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
        let t = ttc_rollout(&path, 10.0, Vec2::new(20.0, 0.0), Vec2::new(15.0, 0.0), 2.0, 10.0);
        assert!(t.is_infinite());
    }

    #[test]
    fn beyond_horizon_is_infinite() {
        let path = [Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
        assert!(ttc_rollout(&path, 10.0, Vec2::new(50.0, 0.0), Vec2::ZERO, 0.0, 3.0).is_infinite());
    }

    /// First sampled contact time and the minimum sampled distance.
    fn dense(path: &[Vec2], speed: f64, q: Vec2, v: Vec2, r: f64, horizon: f64) -> (f64, f64) {
        let cum = crate::geometry::cumulative_lengths(path);
        let total = *cum.last().unwrap();
        let dt = 0.001;
        let n = (horizon / dt).round() as usize;
        let mut closest = f64::INFINITY;
        for k in 0..=n {
            let t = k as f64 * dt;
            let (p, _) = crate::geometry::point_at_arc_length(path, &cum, (speed * t).min(total));
            let d = p.distance(q + v * t);
            closest = closest.min(d);
            if d <= r {
                return (t, d);
            }
        }
        (f64::INFINITY, closest)
    }

    #[test]
    fn agrees_with_dense_rollout() {
        let mut rng = stream(5, Stream::Scenario);
        for _ in 0..200 {
            let mut path = vec![Vec2::ZERO];
            let mut h: f64 = 0.0;
            for _ in 0..4 {
                h += rng.random_range(-0.5..0.5);
                let last = *path.last().unwrap();
                path.push(last + Vec2::from_polar(rng.random_range(3.0..15.0), h));
            }
            let q = Vec2::new(rng.random_range(0.0..40.0), rng.random_range(-10.0..10.0));
            let v = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let speed = rng.random_range(0.0..12.0);
            let exact = ttc_rollout(&path, speed, q, v, 2.5, 4.0);
            let (oracle, closest) = dense(&path, speed, q, v, 2.5, 4.0);
            if exact.is_infinite() && oracle.is_infinite() {
                continue;
            }
            if oracle.is_infinite() {
                // A grazing contact may fall between oracle samples.
                assert!(closest < 2.5 + 0.02, "{exact} vs miss at {closest}");
            } else {
                assert!((exact - oracle).abs() < 0.05, "{exact} vs {oracle}");
            }
        }
    }
}
