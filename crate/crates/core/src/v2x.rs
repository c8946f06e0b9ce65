//! V2X stations, CAM/DENM generation, channel impairments and Byzantine
//! attackers.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cumulative_lengths, point_at_arc_length, project_onto_polyline, Vec2};
use crate::world::{GroundTruthHazard, HazardKind};

pub type StationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MsgKind {
    Cam,
    Denm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Cam { position: Vec2, velocity: Vec2 },
    Denm { event_kind: HazardKind, event_position: Vec2, event_time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct V2xMessage {
    pub station_id: StationId,
    pub seq_no: u64,
    pub gen_time: f64,
    pub recv_time: f64,
    pub payload: Payload,
    pub authenticated: bool,
}

impl V2xMessage {
    pub fn kind(&self) -> MsgKind {
        match self.payload {
            Payload::Cam { .. } => MsgKind::Cam,
            Payload::Denm { .. } => MsgKind::Denm,
        }
    }
}

/// A registered station. Road-side units have zero velocity; stations riding
/// on traffic vehicles move at constant velocity from `position` at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub id: StationId,
    pub position: Vec2,
    #[serde(default)]
    pub velocity: Vec2,
    #[serde(default)]
    pub byzantine: bool,
    /// Road-side units report hazards but send no awareness messages.
    #[serde(default)]
    pub road_side: bool,
}

impl StationSpec {
    pub fn position_at(&self, t: f64) -> Vec2 {
        self.position + self.velocity * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationPopulation {
    pub stations: Vec<StationSpec>,
    pub honest_report_noise_sigma: f64,
    pub cam_period: f64,
    pub denm_period: f64,
    /// Honest stations report hazards within this distance.
    pub denm_range: f64,
}

impl Default for StationPopulation {
    fn default() -> Self {
        Self {
            stations: Vec::new(),
            honest_report_noise_sigma: 0.5,
            cam_period: 0.1,
            denm_period: 1.0,
            denm_range: 60.0,
        }
    }
}

impl StationPopulation {
    pub fn n(&self) -> usize {
        self.stations.len()
    }

    pub fn byzantine_ids(&self) -> Vec<StationId> {
        self.stations.iter().filter(|s| s.byzantine).map(|s| s.id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<_> = self.stations.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.stations.len() {
            return Err(Error::InvalidInput("duplicate station id".into()));
        }
        if !self.stations.is_empty() && self.byzantine_ids().len() >= self.n() {
            return Err(Error::InvalidInput("need f < n".into()));
        }
        if !(self.cam_period > 0.0 && self.denm_period > 0.0 && self.honest_report_noise_sigma >= 0.0) {
            return Err(Error::InvalidInput("station periods must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub latency_mean: f64,
    pub latency_jitter: f64,
    pub drop_prob: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            latency_mean: 0.14,
            latency_jitter: 0.025,
            drop_prob: 0.0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.latency_mean >= 0.0 && self.latency_jitter >= 0.0 && (0.0..=1.0).contains(&self.drop_prob)) {
            return Err(Error::InvalidInput("channel parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    OnRouteAhead,
    UniformInMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPolicy {
    pub p_attack: f64,
    pub false_event_kind: HazardKind,
    pub placement: Placement,
    pub emission_period: f64,
    /// Distance band ahead of the ego used by `on_route_ahead`.
    pub ahead_min: f64,
    pub ahead_max: f64,
    /// Each attacking station also reports a second, conflicting placement
    /// in the same period.
    #[serde(default)]
    pub equivocate: bool,
}

impl Default for AttackPolicy {
    fn default() -> Self {
        Self {
            p_attack: 1.0,
            false_event_kind: HazardKind::RoadClosure,
            placement: Placement::OnRouteAhead,
            emission_period: 1.0,
            ahead_min: 20.0,
            ahead_max: 45.0,
            equivocate: false,
        }
    }
}

impl AttackPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_attack)
            || !(self.emission_period > 0.0)
            || !(self.ahead_min >= 0.0 && self.ahead_max >= self.ahead_min)
        {
            return Err(Error::InvalidInput("attack policy out of range".into()));
        }
        Ok(())
    }
}

const SCHEDULE_EPS: f64 = 1e-9;

/// Emission schedules and sequence counters of all stations.
#[derive(Debug, Clone, Default)]
pub struct V2xEmitter {
    seq: BTreeMap<StationId, u64>,
    next_cam: BTreeMap<StationId, f64>,
    next_denm: BTreeMap<(StationId, u32), f64>,
    next_attack: Option<f64>,
}

impl V2xEmitter {
    pub fn new() -> Self {
        Self::default()
    }

    fn next_seq(&mut self, station: StationId) -> u64 {
        let s = self.seq.entry(station).or_insert(0);
        *s += 1;
        *s
    }

    /// Last sequence number issued by `station` (0 if none).
    pub fn last_seq(&self, station: StationId) -> u64 {
        self.seq.get(&station).copied().unwrap_or(0)
    }
}

/// CAMs from every station on its period, and DENMs from honest stations
/// within `denm_range` of each active hazard.
pub fn generate_honest_traffic<R: Rng>(
    emitter: &mut V2xEmitter,
    hazards: &[GroundTruthHazard],
    stations: &StationPopulation,
    t: f64,
    rng: &mut R,
) -> Vec<V2xMessage> {
    let noise = Normal::new(0.0, stations.honest_report_noise_sigma).expect("validated sigma");
    let mut out = Vec::new();
    for st in &stations.stations {
        let next = emitter.next_cam.entry(st.id).or_insert(0.0);
        if !st.road_side && t + SCHEDULE_EPS >= *next {
            *next += stations.cam_period;
            while *next <= t + SCHEDULE_EPS {
                *next += stations.cam_period;
            }
            let pos = st.position_at(t);
            let position = Vec2::new(pos.x + noise.sample(rng), pos.y + noise.sample(rng));
            let seq_no = emitter.next_seq(st.id);
            out.push(V2xMessage {
                station_id: st.id,
                seq_no,
                gen_time: t,
                recv_time: t,
                payload: Payload::Cam { position, velocity: st.velocity },
                authenticated: true,
            });
        }
        if st.byzantine {
            continue;
        }
        for hz in hazards {
            if hz.spawn_time > t + SCHEDULE_EPS || st.position_at(t).distance(hz.position) > stations.denm_range {
                continue;
            }
            let next = emitter.next_denm.entry((st.id, hz.id)).or_insert(t);
            if t + SCHEDULE_EPS < *next {
                continue;
            }
            *next = t + stations.denm_period;
            let event_position = Vec2::new(hz.position.x + noise.sample(rng), hz.position.y + noise.sample(rng));
            let seq_no = emitter.next_seq(st.id);
            out.push(V2xMessage {
                station_id: st.id,
                seq_no,
                gen_time: t,
                recv_time: t,
                payload: Payload::Denm {
                    event_kind: hz.kind,
                    event_position,
                    event_time: hz.spawn_time,
                },
                authenticated: true,
            });
        }
    }
    out
}

/// Where the colluding attackers place their fabricated event this period.
pub fn attack_placement<R: Rng>(
    policy: &AttackPolicy,
    route: &[Vec2],
    ego: Vec2,
    bounds: (Vec2, Vec2),
    rng: &mut R,
) -> Vec2 {
    match policy.placement {
        Placement::OnRouteAhead if route.len() >= 2 => {
            let cum = cumulative_lengths(route);
            let s0 = project_onto_polyline(route, &cum, ego).map_or(0.0, |p| p.arc_length);
            let ahead = if policy.ahead_max > policy.ahead_min {
                rng.random_range(policy.ahead_min..policy.ahead_max)
            } else {
                policy.ahead_min
            };
            point_at_arc_length(route, &cum, s0 + ahead).0
        }
        _ => {
            let (lo, hi) = bounds;
            Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y))
        }
    }
}

/// Fabricated DENMs. Each emission period one placement is drawn and every
/// Byzantine station independently reports it with probability `p_attack`.
/// The messages carry valid identities: the attack is on content only.
#[allow(clippy::too_many_arguments)]
pub fn generate_attack_traffic<R: Rng>(
    emitter: &mut V2xEmitter,
    policy: &AttackPolicy,
    stations: &StationPopulation,
    route: &[Vec2],
    ego: Vec2,
    bounds: (Vec2, Vec2),
    t: f64,
    rng: &mut R,
) -> Vec<V2xMessage> {
    let next = emitter.next_attack.get_or_insert(t);
    if t + SCHEDULE_EPS < *next {
        return Vec::new();
    }
    *next = t + policy.emission_period;
    let byzantine: Vec<_> = stations.stations.iter().filter(|s| s.byzantine).collect();
    if byzantine.is_empty() {
        return Vec::new();
    }
    let position = attack_placement(policy, route, ego, bounds, rng);
    let conflicting = policy.equivocate.then(|| attack_placement(policy, route, ego, bounds, rng));
    let mut out = Vec::new();
    for st in byzantine {
        if rng.random::<f64>() >= policy.p_attack {
            continue;
        }
        for event_position in std::iter::once(position).chain(conflicting) {
            let seq_no = emitter.next_seq(st.id);
            out.push(V2xMessage {
                station_id: st.id,
                seq_no,
                gen_time: t,
                recv_time: t,
                payload: Payload::Denm {
                    event_kind: policy.false_event_kind,
                    event_position,
                    event_time: t,
                },
                authenticated: true,
            });
        }
    }
    out
}

/// Drops each message with `drop_prob`, delays survivors by
/// `max(0, latency_mean + N(0, latency_jitter))` and orders them by arrival.
pub fn transmit<R: Rng>(msgs: Vec<V2xMessage>, channel: &ChannelModel, rng: &mut R) -> Vec<V2xMessage> {
    let jitter = Normal::new(0.0, channel.latency_jitter).expect("validated jitter");
    let mut out = Vec::with_capacity(msgs.len());
    for mut m in msgs {
        // Both draws are taken for every message so the stream position does
        // not depend on which messages were dropped.
        let u: f64 = rng.random();
        let j = jitter.sample(rng);
        if u < channel.drop_prob {
            continue;
        }
        m.recv_time = m.gen_time + (channel.latency_mean + j).max(0.0);
        out.push(m);
    }
    out.sort_by(|a, b| {
        a.recv_time
            .total_cmp(&b.recv_time)
            .then(a.station_id.cmp(&b.station_id))
            .then(a.seq_no.cmp(&b.seq_no))
    });
    out
}
