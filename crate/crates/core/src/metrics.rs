//! Episode metrics, all computed from log rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::ldm::greedy_match;
use crate::records::{ControlRow, EpisodeLogs, EventRow, Outcome, Termination, V2xRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub tau_sfty: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub brake_thresh: f64,
    pub steer_thresh: f64,
    pub match_radius: f64,
    /// Tracks below this belief are not scored as hypotheses.
    pub track_confirm_belief: f64,
    /// Radius within which same-kind events and hazards are considered one.
    pub event_match_radius: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            tau_sfty: 2.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            brake_thresh: 0.1,
            steer_thresh: 0.05,
            match_radius: 2.0,
            track_confirm_belief: 0.5,
            event_match_radius: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub lat_rmse: f64,
    pub heading_err_deg: f64,
    pub heading_err_mean_abs_deg: f64,
    pub completion: bool,
    pub progress: f64,
    pub termination: Termination,
    pub ttc_min: f64,
    pub collisions: u32,
    pub v2x_reaction_ms: Option<f64>,
    pub update_activation_s: Option<f64>,
    pub var_steer: f64,
    pub var_throttle: f64,
    pub mota: Option<f64>,
    pub motp: Option<f64>,
    pub motp_mean_distance: Option<f64>,
    pub id_switches: u32,
    /// 1 if a false event was accepted, 0 if false events were all refused,
    /// absent without false events.
    pub fpr: Option<f64>,
    /// 1 if the true hazard was never accepted, absent without one.
    pub fnr: Option<f64>,
    pub trigger_latency_ms: Option<f64>,
    pub brake_energy: f64,
}

pub fn lat_rmse(cross_track: &[f64]) -> Result<f64> {
    if cross_track.is_empty() {
        return Err(Error::InvalidInput("empty cross-track series".into()));
    }
    let sq: f64 = cross_track.iter().map(|e| e * e).sum();
    Ok((sq / cross_track.len() as f64).sqrt())
}

/// Population variance by the two-pass formula; 0 for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Time from `gen_time` to the first control tick strictly after it with
/// brake above `brake_thresh` or a steering step above `steer_thresh`.
pub fn v2x_reaction(gen_time: f64, control: &[ControlRow], brake_thresh: f64, steer_thresh: f64) -> Option<f64> {
    let mut prev_steer = None;
    for row in control {
        let jump = prev_steer.is_some_and(|p: f64| (row.steering - p).abs() > steer_thresh);
        prev_steer = Some(row.steering);
        if row.t > gen_time && (row.brake > brake_thresh || jump) {
            return Some((row.t - gen_time) * 1000.0);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotScore {
    pub mota: Option<f64>,
    pub motp: Option<f64>,
    pub mean_distance: Option<f64>,
    pub id_switches: u32,
    pub false_negatives: u32,
    pub false_positives: u32,
    pub ground_truth: u32,
}

/// One tick of objects: (id, position) pairs.
pub type Frame = (u64, Vec<(u64, Vec2)>);

/// CLEAR-MOT scores. Correspondences from the previous tick are kept while
/// still within `match_radius`; the rest are matched greedily by distance.
pub fn clear_mot(truth: &[Frame], hyps: &[Frame], match_radius: f64) -> Result<MotScore> {
    if truth.len() != hyps.len() || truth.iter().zip(hyps).any(|(a, b)| a.0 != b.0) {
        return Err(Error::MisalignedLogs(format!("{} truth ticks vs {} track ticks", truth.len(), hyps.len())));
    }
    let mut last_match: BTreeMap<u64, u64> = BTreeMap::new();
    let (mut fn_, mut fp, mut idsw, mut gt_total) = (0u32, 0u32, 0u32, 0u32);
    let mut dist_sum = 0.0;
    let mut matches = 0u32;
    for ((_, gt), (_, hy)) in truth.iter().zip(hyps) {
        gt_total += gt.len() as u32;
        let mut gt_used = vec![false; gt.len()];
        let mut hy_used = vec![false; hy.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (gi, (gid, gp)) in gt.iter().enumerate() {
            let Some(&hid) = last_match.get(gid) else { continue };
            if let Some(hi) = hy.iter().position(|(id, _)| *id == hid) {
                if !hy_used[hi] && gp.distance(hy[hi].1) <= match_radius {
                    gt_used[gi] = true;
                    hy_used[hi] = true;
                    pairs.push((gi, hi));
                }
            }
        }
        let free_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
        let free_hy: Vec<usize> = (0..hy.len()).filter(|&i| !hy_used[i]).collect();
        let gt_pos: Vec<Vec2> = free_gt.iter().map(|&i| gt[i].1).collect();
        let hy_pos: Vec<Vec2> = free_hy.iter().map(|&i| hy[i].1).collect();
        for (a, b) in greedy_match(&gt_pos, &hy_pos, match_radius) {
            let (gi, hi) = (free_gt[a], free_hy[b]);
            gt_used[gi] = true;
            hy_used[hi] = true;
            pairs.push((gi, hi));
        }
        for (gi, hi) in pairs {
            let (gid, gp) = gt[gi];
            let (hid, hp) = hy[hi];
            if let Some(prev) = last_match.insert(gid, hid) {
                if prev != hid {
                    idsw += 1;
                }
            }
            dist_sum += gp.distance(hp);
            matches += 1;
        }
        fn_ += gt_used.iter().filter(|u| !**u).count() as u32;
        fp += hy_used.iter().filter(|u| !**u).count() as u32;
    }
    let mota = (gt_total > 0).then(|| 1.0 - f64::from(fn_ + fp + idsw) / f64::from(gt_total));
    let mean_distance = (matches > 0).then(|| dist_sum / f64::from(matches));
    Ok(MotScore {
        mota,
        motp: mean_distance.map(|d| 1.0 - d / match_radius),
        mean_distance,
        id_switches: idsw,
        false_negatives: fn_,
        false_positives: fp,
        ground_truth: gt_total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub has_false_events: bool,
    pub false_accepted: bool,
    pub has_true_hazard: bool,
    pub true_accepted: bool,
}

/// Per-episode gate accounting from the labeled event log.
/// Without V2X reception the gate sees nothing, so no rate applies.
pub fn gate_outcome(events: &[EventRow], true_hazards: u32, attack_traffic: bool, v2x_enabled: bool) -> Result<GateOutcome> {
    let mut out = GateOutcome {
        has_false_events: v2x_enabled && attack_traffic,
        false_accepted: false,
        has_true_hazard: v2x_enabled && true_hazards > 0,
        true_accepted: false,
    };
    for e in events {
        let label = e.label.ok_or(Error::UnlabeledEvent(e.event_id))?;
        let accepted = e.decided_at.is_some() && e.status != "rejected";
        if label {
            out.true_accepted |= accepted;
        } else {
            out.has_false_events = true;
            out.false_accepted |= accepted;
        }
    }
    Ok(out)
}

/// (FPR, FNR) over episodes, each absent when its denominator is zero.
pub fn gate_rates(outcomes: &[GateOutcome]) -> (Option<f64>, Option<f64>) {
    let false_eps = outcomes.iter().filter(|o| o.has_false_events).count();
    let fa = outcomes.iter().filter(|o| o.has_false_events && o.false_accepted).count();
    let true_eps = outcomes.iter().filter(|o| o.has_true_hazard).count();
    let missed = outcomes.iter().filter(|o| o.has_true_hazard && !o.true_accepted).count();
    (
        (false_eps > 0).then(|| fa as f64 / false_eps as f64),
        (true_eps > 0).then(|| missed as f64 / true_eps as f64),
    )
}

/// [J_trk, J_sfty, J_resp, J_smth, J_eng].
pub fn objective_vector(m: &EpisodeMetrics, cfg: &MetricsConfig) -> [f64; 5] {
    let resp = cfg.alpha * m.v2x_reaction_ms.map_or(0.0, |ms| ms / 1000.0) + cfg.beta * m.update_activation_s.unwrap_or(0.0);
    [
        m.lat_rmse,
        (cfg.tau_sfty - m.ttc_min).max(0.0),
        resp,
        m.var_steer + cfg.gamma * m.var_throttle,
        m.brake_energy,
    ]
}

/// Σ brake·speed·Δt, pairing each control tick with the vehicle row of the
/// same tick.
pub fn brake_energy(logs: &EpisodeLogs, dt: f64) -> f64 {
    let speed: BTreeMap<u64, f64> = logs.vehicle.iter().map(|v| (v.tick, v.speed)).collect();
    logs.control.iter().map(|c| c.brake * speed.get(&c.tick).copied().unwrap_or(0.0) * dt).sum()
}

/// Generation time of the earliest delivered hazard report that supports
/// the first accepted true event.
fn reaction_reference(events: &[EventRow], v2x: &[V2xRow], radius: f64) -> Option<f64> {
    let ev = events
        .iter()
        .filter(|e| e.label == Some(true) && e.decided_at.is_some() && e.status != "rejected")
        .min_by(|a, b| a.decided_at.unwrap().total_cmp(&b.decided_at.unwrap()))?;
    let at = Vec2::new(ev.x, ev.y);
    v2x.iter()
        .filter(|m| m.kind == "denm" && m.hazard_kind == ev.hazard_kind)
        .filter(|m| Vec2::new(m.x, m.y).distance(at) <= radius)
        .map(|m| m.gen_time)
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))))
}

fn frames<I: Iterator<Item = (u64, u64, Vec2)>>(ticks: &[u64], rows: I) -> Vec<Frame> {
    let mut by_tick: BTreeMap<u64, Vec<(u64, Vec2)>> = ticks.iter().map(|&t| (t, Vec::new())).collect();
    for (tick, id, p) in rows {
        by_tick.entry(tick).or_default().push((id, p));
    }
    by_tick.into_iter().collect()
}

/// Every metric of one episode, from its logs and outcome only.
pub fn compute(logs: &EpisodeLogs, outcome: &Outcome, cfg: &MetricsConfig) -> Result<EpisodeMetrics> {
    let cross: Vec<f64> = logs.vehicle.iter().map(|v| v.cross_track).collect();
    let heading: Vec<f64> = logs.vehicle.iter().map(|v| v.heading_error.to_degrees()).collect();
    let steer: Vec<f64> = logs.control.iter().map(|c| c.steering).collect();
    let throttle: Vec<f64> = logs.control.iter().map(|c| c.throttle).collect();

    let ticks: Vec<u64> = logs.vehicle.iter().map(|v| v.tick).collect();
    let truth = frames(
        &ticks,
        logs.truth.iter().filter(|r| r.in_range).map(|r| (r.tick, u64::from(r.object_id), Vec2::new(r.x, r.y))),
    );
    let hyps = frames(
        &ticks,
        logs.ldm
            .iter()
            .filter(|r| r.in_range && r.belief >= cfg.track_confirm_belief)
            .map(|r| (r.tick, r.track_id, Vec2::new(r.x, r.y))),
    );
    let mot = clear_mot(&truth, &hyps, cfg.match_radius)?;

    let gate = gate_outcome(&logs.events, outcome.true_hazards, outcome.attack_traffic, outcome.v2x_enabled)?;
    let accepted: Vec<f64> = logs
        .events
        .iter()
        .filter_map(|e| e.decided_at.filter(|_| e.status != "rejected").map(|d| (d - e.first_seen) * 1000.0))
        .collect();

    let reaction = reaction_reference(&logs.events, &logs.v2x, cfg.event_match_radius)
        .and_then(|g| v2x_reaction(g, &logs.control, cfg.brake_thresh, cfg.steer_thresh));
    let activation = logs.updates.first().map(|u| u.activation_tick_time - u.poll_time);

    Ok(EpisodeMetrics {
        lat_rmse: lat_rmse(&cross)?,
        heading_err_deg: lat_rmse(&heading)?,
        heading_err_mean_abs_deg: heading.iter().map(|h| h.abs()).sum::<f64>() / heading.len() as f64,
        completion: outcome.termination == Termination::GoalReached,
        progress: logs.vehicle.last().map_or(0.0, |v| v.progress),
        termination: outcome.termination,
        ttc_min: logs.vehicle.iter().map(|v| v.ttc).fold(f64::INFINITY, f64::min),
        collisions: outcome.collisions,
        v2x_reaction_ms: reaction,
        update_activation_s: activation,
        var_steer: variance(&steer),
        var_throttle: variance(&throttle),
        mota: mot.mota,
        motp: mot.motp,
        motp_mean_distance: mot.mean_distance,
        id_switches: mot.id_switches,
        fpr: gate.has_false_events.then_some(if gate.false_accepted { 1.0 } else { 0.0 }),
        fnr: gate.has_true_hazard.then_some(if gate.true_accepted { 0.0 } else { 1.0 }),
        trigger_latency_ms: (!accepted.is_empty()).then(|| accepted.iter().sum::<f64>() / accepted.len() as f64),
        brake_energy: brake_energy(logs, outcome.dt),
    })
}

/// Mean and sample standard deviation; SD is 0 for a single value.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn control(rows: &[(f64, f64, f64)]) -> Vec<ControlRow> {
        rows.iter()
            .enumerate()
            .map(|(i, &(t, steering, brake))| ControlRow {
                tick: i as u64,
                t,
                steering,
                throttle: 0.0,
                brake,
                safety_stop: false,
            })
            .collect()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(lat_rmse(&[0.0; 10]).unwrap(), 0.0);
        assert_eq!(lat_rmse(&[0.3; 10]).unwrap(), 0.3);
        assert!(lat_rmse(&[]).is_err());
    }

    #[test]
    fn reaction_examples() {
        let c = control(&[(1.0, 0.0, 0.0), (1.1, 0.0, 0.0), (1.14, 0.0, 0.5)]);
        assert!((v2x_reaction(1.0, &c, 0.1, 0.05).unwrap() - 140.0).abs() < 1e-9);
        let c = control(&[(1.0, 0.0, 0.0), (1.1, 0.0, 0.0)]);
        assert_eq!(v2x_reaction(1.0, &c, 0.1, 0.05), None);
    }

    fn frame(tick: u64, objs: &[(u64, f64, f64)]) -> Frame {
        (tick, objs.iter().map(|&(id, x, y)| (id, Vec2::new(x, y))).collect())
    }

    #[test]
    fn perfect_tracking() {
        let truth: Vec<Frame> = (0..10).map(|k| frame(k, &[(1, k as f64, 0.0)])).collect();
        let hyps: Vec<Frame> = (0..10).map(|k| frame(k, &[(7, k as f64, 0.0)])).collect();
        let s = clear_mot(&truth, &hyps, 2.0).unwrap();
        assert_eq!(s.mota, Some(1.0));
        assert_eq!(s.motp, Some(1.0));
        assert_eq!(s.id_switches, 0);
    }

    #[test]
    fn one_missed_tick() {
        let truth: Vec<Frame> = (0..10).map(|k| frame(k, &[(1, k as f64, 0.0)])).collect();
        let hyps: Vec<Frame> = (0..10).map(|k| if k == 4 { frame(k, &[]) } else { frame(k, &[(7, k as f64, 0.0)]) }).collect();
        assert_eq!(clear_mot(&truth, &hyps, 2.0).unwrap().mota, Some(0.9));
    }

    #[test]
    fn crossing_swap_counts_switch() {
        // Two objects cross at tick 5; the tracker swaps identities there.
        let truth: Vec<Frame> = (0..10)
            .map(|k| {
                let x = k as f64;
                frame(k, &[(1, x, 5.0 - x), (2, x, x - 5.0)])
            })
            .collect();
        let hyps: Vec<Frame> = (0..10)
            .map(|k| {
                let x = k as f64;
                if k <= 5 {
                    frame(k, &[(10, x, 5.0 - x), (20, x, x - 5.0)])
                } else {
                    frame(k, &[(20, x, 5.0 - x), (10, x, x - 5.0)])
                }
            })
            .collect();
        assert!(clear_mot(&truth, &hyps, 0.5).unwrap().id_switches >= 1);
    }

    #[test]
    fn misaligned_logs_rejected() {
        let a = vec![frame(0, &[])];
        let b = vec![frame(1, &[])];
        assert!(matches!(clear_mot(&a, &b, 2.0), Err(Error::MisalignedLogs(_))));
    }

    #[test]
    fn false_positive_lowers_mota_not_motp() {
        let truth: Vec<Frame> = (0..10).map(|k| frame(k, &[(1, k as f64, 0.0)])).collect();
        let hyps: Vec<Frame> = (0..10).map(|k| frame(k, &[(7, k as f64, 0.5)])).collect();
        let base = clear_mot(&truth, &hyps, 2.0).unwrap();
        let noisy: Vec<Frame> = (0..10).map(|k| frame(k, &[(7, k as f64, 0.5), (9, k as f64, 30.0)])).collect();
        let s = clear_mot(&truth, &noisy, 2.0).unwrap();
        assert!(s.mota.unwrap() < base.mota.unwrap());
        assert_eq!(s.motp, base.motp);
    }

    #[test]
    fn gate_rate_accounting() {
        let acc = GateOutcome { has_false_events: true, false_accepted: true, has_true_hazard: true, true_accepted: true };
        let ok = GateOutcome { has_false_events: true, false_accepted: false, has_true_hazard: true, true_accepted: true };
        assert_eq!(gate_rates(&[acc, acc]), (Some(1.0), Some(0.0)));
        assert_eq!(gate_rates(&[ok, ok]), (Some(0.0), Some(0.0)));
        let quiet = GateOutcome { has_false_events: false, false_accepted: false, has_true_hazard: false, true_accepted: false };
        assert_eq!(gate_rates(&[quiet]), (None, None));
    }

    fn metrics(ttc_min: f64) -> EpisodeMetrics {
        EpisodeMetrics {
            lat_rmse: 0.1,
            heading_err_deg: 0.0,
            heading_err_mean_abs_deg: 0.0,
            completion: true,
            progress: 1.0,
            termination: Termination::GoalReached,
            ttc_min,
            collisions: 0,
            v2x_reaction_ms: None,
            update_activation_s: None,
            var_steer: 0.0,
            var_throttle: 0.0,
            mota: None,
            motp: None,
            motp_mean_distance: None,
            id_switches: 0,
            fpr: None,
            fnr: None,
            trigger_latency_ms: None,
            brake_energy: 0.0,
        }
    }

    #[test]
    fn objective_examples() {
        let cfg = MetricsConfig::default();
        assert_eq!(objective_vector(&metrics(2.5), &cfg)[1], 0.0);
        assert!((objective_vector(&metrics(1.3), &cfg)[1] - 0.7).abs() < 1e-12);
        assert_eq!(objective_vector(&metrics(1.3), &cfg)[3], 0.0);
    }

    #[test]
    fn mean_sd_single_value() {
        assert_eq!(mean_sd(&[4.0]), (4.0, 0.0));
    }

    proptest! {
        #[test]
        fn rmse_matches_naive(xs in prop::collection::vec(-3.0f64..3.0, 1..200)) {
            let mut acc = 0.0;
            for x in &xs { acc += x * x; }
            prop_assert_eq!(lat_rmse(&xs).unwrap(), (acc / xs.len() as f64).sqrt());
        }

        #[test]
        fn variance_shift_invariant(xs in prop::collection::vec(-1.0f64..1.0, 2..100), c in -0.5f64..0.5) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            prop_assert!((variance(&xs) - variance(&shifted)).abs() < 1e-9);
        }

        #[test]
        fn reaction_monotone_in_thresholds(rows in prop::collection::vec((-0.5f64..0.5, 0.0f64..1.0), 2..60), lo in 0.0f64..0.5, extra in 0.0f64..0.5) {
            let c: Vec<ControlRow> = rows.iter().enumerate().map(|(i, &(s, b))| ControlRow {
                tick: i as u64, t: i as f64 * 0.05, steering: s, throttle: 0.0, brake: b, safety_stop: false,
            }).collect();
            let a = v2x_reaction(0.0, &c, lo, lo / 5.0);
            let b = v2x_reaction(0.0, &c, lo + extra, (lo + extra) / 5.0);
            match (a, b) {
                (Some(x), Some(y)) => prop_assert!(y >= x),
                (None, Some(_)) => prop_assert!(false),
                _ => {}
            }
        }

        #[test]
        fn sfty_non_increasing(a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let cfg = MetricsConfig::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(objective_vector(&metrics(hi), &cfg)[1] <= objective_vector(&metrics(lo), &cfg)[1]);
        }
    }
}
