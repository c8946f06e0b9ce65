//! Acceptance gate for V2X event hypotheses: weighted quorum of distinct
//! stations plus an on-board sensor veto.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldm::{EventHypothesis, EventStatus, LdmState};
use crate::perception::{sensor_likelihood, SensorModel};
use crate::v2x::StationId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    pub n: usize,
    pub f: usize,
    pub theta: f64,
    pub eta: f64,
    pub radius: f64,
    pub tau_bft: f64,
    pub enabled: bool,
    /// Likelihood used when no recent frame could see the event location.
    pub neutral_likelihood: f64,
    /// Sensing window for the likelihood estimate.
    pub sensor_window: f64,
    /// Per-station weights; stations not listed weigh 1.
    #[serde(default)]
    pub weights: BTreeMap<StationId, f64>,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            n: 10,
            f: 3,
            theta: 7.0,
            eta: 0.5,
            radius: 15.0,
            tau_bft: 2.0,
            enabled: true,
            neutral_likelihood: 0.5,
            sensor_window: 1.0,
            weights: BTreeMap::new(),
        }
    }
}

impl GateConfig {
    /// Uniform-weight configuration with `theta = 2f + 1`.
    pub fn quorum(n: usize, f: usize) -> Self {
        Self {
            n,
            f,
            theta: (2 * f + 1) as f64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 1.0) || !(0.0..=1.0).contains(&self.eta) || !(self.radius > 0.0) || !(self.tau_bft > 0.0) {
            return Err(Error::InvalidInput("gate parameters out of range".into()));
        }
        if self.weights.is_empty() && self.theta > self.n as f64 {
            return Err(Error::InvalidInput(format!("quorum {} exceeds n = {}", self.theta, self.n)));
        }
        Ok(())
    }

    pub fn weight(&self, station: StationId) -> f64 {
        self.weights.get(&station).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    QuorumFail,
    VetoFail,
    Accepted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub event_id: u64,
    pub accepted: bool,
    pub support_weight: f64,
    pub sensor_likelihood: f64,
    pub decided_at: f64,
    pub reason: GateReason,
}

/// Weighted count of distinct stations whose latest report falls in
/// `[now - tau_bft, now]` and within `radius` of the event.
pub fn support_weight(event: &EventHypothesis, cfg: &GateConfig, now: f64) -> f64 {
    let mut seen: Vec<StationId> = Vec::new();
    let mut total = 0.0;
    for r in &event.support {
        if seen.contains(&r.station_id) {
            continue;
        }
        let fresh = r.recv_time <= now + 1e-9 && r.recv_time >= now - cfg.tau_bft - 1e-9;
        if fresh && r.position.distance(event.position) <= cfg.radius {
            seen.push(r.station_id);
            total += cfg.weight(r.station_id);
        }
    }
    total
}

pub fn evaluate(event: &EventHypothesis, cfg: &GateConfig, sensor_likelihood: f64, now: f64) -> GateDecision {
    let support = support_weight(event, cfg, now);
    let reason = if !cfg.enabled {
        if support > 0.0 {
            GateReason::Accepted
        } else {
            GateReason::QuorumFail
        }
    } else if support < cfg.theta {
        GateReason::QuorumFail
    } else if sensor_likelihood < cfg.eta {
        GateReason::VetoFail
    } else {
        GateReason::Accepted
    };
    GateDecision {
        event_id: event.event_id,
        accepted: reason == GateReason::Accepted,
        support_weight: support,
        sensor_likelihood,
        decided_at: now,
        reason,
    }
}

pub fn trigger_latency_ms(first_seen: f64, decided_at: f64) -> f64 {
    (decided_at - first_seen) * 1000.0
}

/// Evaluates every pending event, marks the accepted ones and returns one
/// decision per pending event.
pub fn evaluate_pending(ldm: &mut LdmState, cfg: &GateConfig, sensor: &SensorModel, now: f64) -> Vec<GateDecision> {
    let mut out = Vec::new();
    for i in 0..ldm.events.len() {
        if ldm.events[i].status != EventStatus::Pending {
            continue;
        }
        let l = sensor_likelihood(
            ldm.events[i].position,
            &ldm.frames,
            sensor,
            cfg.radius.min(sensor.range),
            cfg.sensor_window,
            now,
            cfg.neutral_likelihood,
        );
        let d = evaluate(&ldm.events[i], cfg, l, now);
        let ev = &mut ldm.events[i];
        if d.accepted {
            ev.status = EventStatus::Accepted;
            ev.decided_at = Some(now);
        } else {
            ev.refused = true;
        }
        out.push(d);
    }
    out
}
