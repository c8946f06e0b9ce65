//! Local dynamic map: sliding-window synchronization of sensor frames and
//! CAMs, track fusion with existence beliefs, and DENM event hypotheses.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::perception::{SensingFrame, SensorModel};
use crate::v2x::{Payload, StationId, V2xMessage};
use crate::world::{HazardKind, MapVersion};

pub const B_MIN: f64 = 0.01;
pub const B_MAX: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdmConfig {
    pub tau_sync: f64,
    pub d_gate: f64,
    pub b_birth: f64,
    /// Unassigned items below this confidence do not spawn tracks.
    pub birth_confidence: f64,
    pub b_prune: f64,
    pub tau_stale: f64,
    pub tau_event: f64,
    pub lr_detect: f64,
    pub lr_cam: f64,
    /// Upper bound of the contradiction likelihood ratio.
    pub veto_cap: f64,
    /// Weight of a new measurement when blending into a track.
    pub blend: f64,
    pub event_radius: f64,
    pub tau_bft: f64,
    /// How long sensing frames are kept for the sensor likelihood.
    pub frame_history: f64,
}

impl Default for LdmConfig {
    fn default() -> Self {
        Self {
            tau_sync: 0.1,
            d_gate: 2.0,
            b_birth: 0.6,
            birth_confidence: 0.6,
            b_prune: 0.05,
            tau_stale: 1.0,
            tau_event: 5.0,
            lr_detect: 3.0,
            lr_cam: 2.0,
            veto_cap: 0.2,
            blend: 0.6,
            event_radius: 15.0,
            tau_bft: 2.0,
            frame_history: 2.0,
        }
    }
}

/// One buffered input: a whole sensing frame, or a delivered CAM.
#[derive(Debug, Clone, PartialEq)]
pub enum SyncItem {
    Frame(SensingFrame),
    Cam(V2xMessage),
}

impl SyncItem {
    pub fn timestamp(&self) -> f64 {
        match self {
            SyncItem::Frame(f) => f.timestamp,
            SyncItem::Cam(m) => m.recv_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncBundle {
    pub items: Vec<SyncItem>,
    pub window_end: f64,
    pub window: f64,
}

const TIME_EPS: f64 = 1e-9;

/// Takes every buffered item with `t - tau <= t_k <= t` out of `buffer`,
/// drops anything older and leaves future items in place.
pub fn synchronize(buffer: &mut Vec<SyncItem>, t: f64, tau: f64) -> SyncBundle {
    debug_assert!(tau > 0.0);
    let mut items = Vec::new();
    let mut keep = Vec::new();
    for item in buffer.drain(..) {
        let tk = item.timestamp();
        if tk > t + TIME_EPS {
            keep.push(item);
        } else if tk >= t - tau - TIME_EPS {
            items.push(item);
        }
    }
    *buffer = keep;
    items.sort_by(|a, b| a.timestamp().total_cmp(&b.timestamp()));
    SyncBundle { items, window_end: t, window: tau }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceTag {
    Sensor(u32),
    Station(StationId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub position: Vec2,
    pub velocity: Vec2,
    pub existence_belief: f64,
    pub last_update: f64,
    pub contributing_sources: Vec<SourceTag>,
    /// Summed station weight of CAMs that supported the track this tick.
    pub v2x_support: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    DenmHazard,
    MapChangeNotice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Pending,
    Accepted,
    Rejected,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationReport {
    pub station_id: StationId,
    pub recv_time: f64,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventHypothesis {
    pub event_id: u64,
    pub kind: EventKind,
    pub hazard_kind: HazardKind,
    pub position: Vec2,
    pub first_seen: f64,
    /// One entry per station, holding its latest report.
    pub support: Vec<StationReport>,
    pub status: EventStatus,
    pub decided_at: Option<f64>,
    /// Set once the gate has looked at the event and refused it.
    pub refused: bool,
}

impl EventHypothesis {
    fn last_report(&self) -> f64 {
        self.support.iter().map(|r| r.recv_time).fold(f64::NEG_INFINITY, f64::max)
    }

    fn recompute_position(&mut self) {
        let n = self.support.len() as f64;
        let sum = self.support.iter().fold(Vec2::ZERO, |acc, r| acc + r.position);
        self.position = sum * (1.0 / n);
    }
}

#[derive(Debug, Clone)]
pub struct LdmState {
    pub objects: Vec<Track>,
    pub events: Vec<EventHypothesis>,
    pub active_map: Arc<MapVersion>,
    pub stamp: f64,
    /// Recent sensing frames, for the sensor likelihood and the veto.
    pub frames: Vec<SensingFrame>,
    pub ignored_unauthenticated: u64,
    next_track_id: u64,
    next_event_id: u64,
}

impl LdmState {
    pub fn new(active_map: Arc<MapVersion>, stamp: f64) -> Self {
        Self {
            objects: Vec::new(),
            events: Vec::new(),
            active_map,
            stamp,
            frames: Vec::new(),
            ignored_unauthenticated: 0,
            next_track_id: 1,
            next_event_id: 1,
        }
    }

    pub fn event(&self, id: u64) -> Option<&EventHypothesis> {
        self.events.iter().find(|e| e.event_id == id)
    }

    pub fn event_mut(&mut self, id: u64) -> Option<&mut EventHypothesis> {
        self.events.iter_mut().find(|e| e.event_id == id)
    }
}

/// Where an associated item went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assigned {
    Track(usize),
    /// Index into the births of this association.
    Birth(usize),
    Unassigned,
}

/// A single measurement flattened out of the bundle, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub group: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    pub confidence: f64,
    pub source: SourceTag,
}

pub fn measurements(bundle: &SyncBundle) -> Vec<Measurement> {
    let mut out = Vec::new();
    // Frames come first, then each station's CAMs as one group in id order.
    type Group = (u8, u64, f64, Vec<(Vec2, Vec2, f64, SourceTag)>);
    let mut groups: Vec<Group> = Vec::new();
    for item in &bundle.items {
        match item {
            SyncItem::Frame(f) => {
                let ms = f
                    .detections
                    .iter()
                    .map(|d| {
                        (
                            f.ego.to_world(d.position),
                            d.velocity.rotate(f.ego.heading),
                            d.confidence,
                            SourceTag::Sensor(d.source),
                        )
                    })
                    .collect();
                groups.push((0, 0, f.timestamp, ms));
            }
            SyncItem::Cam(m) => {
                if !m.authenticated {
                    continue;
                }
                if let Payload::Cam { position, velocity } = m.payload {
                    groups.push((1, m.station_id as u64, m.recv_time, vec![(position, velocity, 1.0, SourceTag::Station(m.station_id))]));
                }
            }
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.total_cmp(&b.2)).then(a.1.cmp(&b.1)));
    for (g, (_, _, _, ms)) in groups.into_iter().enumerate() {
        for (position, velocity, confidence, source) in ms {
            out.push(Measurement { group: g, position, velocity, confidence, source });
        }
    }
    out
}

/// Greedy one-to-one nearest-neighbour matching: all pairs within `gate`
/// are taken in order of increasing distance. Returns `(item, target)` pairs.
pub fn greedy_match(items: &[Vec2], targets: &[Vec2], gate: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, p) in items.iter().enumerate() {
        for (j, q) in targets.iter().enumerate() {
            let d = p.distance(*q);
            if d <= gate {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut item_used = vec![false; items.len()];
    let mut target_used = vec![false; targets.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !item_used[i] && !target_used[j] {
            item_used[i] = true;
            target_used[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Associates measurements with tracks group by group. Unmatched items at or
/// above `birth_confidence` become births, which later groups can match.
pub fn associate(meas: &[Measurement], tracks: &[Vec2], d_gate: f64, birth_confidence: f64) -> (Vec<Assigned>, Vec<usize>) {
    let mut assigned = vec![Assigned::Unassigned; meas.len()];
    let mut births: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < meas.len() {
        let g = meas[i].group;
        let end = meas[i..].iter().position(|m| m.group != g).map_or(meas.len(), |k| i + k);
        let group_pos: Vec<Vec2> = meas[i..end].iter().map(|m| m.position).collect();
        let mut targets: Vec<Vec2> = tracks.to_vec();
        targets.extend(births.iter().map(|&b| meas[b].position));
        for (a, t) in greedy_match(&group_pos, &targets, d_gate) {
            assigned[i + a] = if t < tracks.len() { Assigned::Track(t) } else { Assigned::Birth(t - tracks.len()) };
        }
        for k in i..end {
            if assigned[k] == Assigned::Unassigned && meas[k].confidence >= birth_confidence {
                assigned[k] = Assigned::Birth(births.len());
                births.push(k);
            }
        }
        i = end;
    }
    (assigned, births)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Log-odds fusion: `logit(b') = logit(b) + ln(lr_sensor) + sum w_i ln(lr_i)`,
/// with `b` clamped to `[B_MIN, B_MAX]` on the way in and out.
pub fn update_belief(b: f64, lr_sensor: f64, v2x_support: &[(f64, f64)]) -> Result<f64> {
    if !(lr_sensor.is_finite() && lr_sensor > 0.0) {
        return Err(Error::NonFinite("sensor likelihood ratio"));
    }
    let mut l = logit(b.clamp(B_MIN, B_MAX)) + lr_sensor.ln();
    for &(w, lr) in v2x_support {
        if !(lr.is_finite() && lr > 0.0 && w.is_finite()) {
            return Err(Error::NonFinite("V2X likelihood ratio"));
        }
        l += w * lr.ln();
    }
    Ok(sigmoid(l).clamp(B_MIN, B_MAX))
}

/// Likelihood ratio applied when a frame covered a track and saw nothing
/// near it.
pub fn contradiction_ratio(model: &SensorModel, cfg: &LdmConfig) -> f64 {
    let sector = 0.5 * model.field_of_view * model.range * model.range;
    let lambda = if sector > 0.0 {
        (model.clutter_rate * std::f64::consts::PI * cfg.d_gate * cfg.d_gate / sector).min(0.5)
    } else {
        0.0
    };
    (model.miss_rate / (1.0 - lambda)).min(cfg.veto_cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Merged(u64),
    Created(u64),
    Ignored,
}

/// Merges a delivered DENM into a live hypothesis of the same kind within
/// `event_radius` whose latest report is at most `tau_bft` old, or opens a
/// new pending hypothesis.
pub fn ingest_denm(msg: &V2xMessage, state: &mut LdmState, cfg: &LdmConfig) -> IngestOutcome {
    let Payload::Denm { event_kind, event_position, .. } = msg.payload else {
        return IngestOutcome::Ignored;
    };
    if !msg.authenticated {
        state.ignored_unauthenticated += 1;
        return IngestOutcome::Ignored;
    }
    let report = StationReport { station_id: msg.station_id, recv_time: msg.recv_time, position: event_position };
    let candidate = state
        .events
        .iter_mut()
        .filter(|e| matches!(e.status, EventStatus::Pending | EventStatus::Accepted))
        .filter(|e| e.hazard_kind == event_kind)
        .filter(|e| e.position.distance(event_position) <= cfg.event_radius)
        .filter(|e| msg.recv_time - e.last_report() <= cfg.tau_bft + TIME_EPS)
        .min_by(|a, b| {
            a.position
                .distance(event_position)
                .total_cmp(&b.position.distance(event_position))
                .then(a.event_id.cmp(&b.event_id))
        });
    if let Some(ev) = candidate {
        match ev.support.iter_mut().find(|r| r.station_id == msg.station_id) {
            Some(r) => *r = report,
            None => ev.support.push(report),
        }
        ev.support.sort_by_key(|r| r.station_id);
        ev.recompute_position();
        return IngestOutcome::Merged(ev.event_id);
    }
    let id = state.next_event_id;
    state.next_event_id += 1;
    state.events.push(EventHypothesis {
        event_id: id,
        kind: EventKind::DenmHazard,
        hazard_kind: event_kind,
        position: event_position,
        first_seen: msg.recv_time,
        support: vec![report],
        status: EventStatus::Pending,
        decided_at: None,
        refused: false,
    });
    IngestOutcome::Created(id)
}

/// One fusion step at time `now`.
pub fn fuse_tick(
    prev: &LdmState,
    bundle: &SyncBundle,
    denms: &[V2xMessage],
    active_map: Arc<MapVersion>,
    sensor: &SensorModel,
    cfg: &LdmConfig,
    now: f64,
) -> Result<LdmState> {
    let mut state = prev.clone();
    state.active_map = active_map;

    let dt = now - prev.stamp;
    for tr in &mut state.objects {
        tr.position = tr.position + tr.velocity * dt;
        tr.v2x_support = 0.0;
    }

    let meas = measurements(bundle);
    let track_pos: Vec<Vec2> = state.objects.iter().map(|t| t.position).collect();
    let (assigned, births) = associate(&meas, &track_pos, cfg.d_gate, cfg.birth_confidence);

    let frames: Vec<&SensingFrame> = bundle
        .items
        .iter()
        .filter_map(|i| match i {
            SyncItem::Frame(f) => Some(f),
            _ => None,
        })
        .collect();
    let lr_miss = contradiction_ratio(sensor, cfg);

    let n_tracks = state.objects.len();
    for (k, tr) in state.objects.iter_mut().enumerate() {
        let mine: Vec<&Measurement> = meas
            .iter()
            .zip(&assigned)
            .filter(|(_, a)| **a == Assigned::Track(k))
            .map(|(m, _)| m)
            .collect();
        let mut lr_sensor = 1.0;
        // Frames are the first groups, in the same order as `frames`.
        for (g, f) in frames.iter().enumerate() {
            let hit = mine.iter().any(|m| m.group == g);
            if hit {
                lr_sensor *= cfg.lr_detect;
            } else if sensor.covers(f.ego, tr.position) {
                lr_sensor *= lr_miss;
            }
        }
        let mut v2x = Vec::new();
        for m in &mine {
            tr.position = tr.position + (m.position - tr.position) * cfg.blend;
            tr.velocity = tr.velocity + (m.velocity - tr.velocity) * cfg.blend;
            tr.last_update = now;
            if !tr.contributing_sources.contains(&m.source) {
                tr.contributing_sources.push(m.source);
                tr.contributing_sources.sort();
            }
            if let SourceTag::Station(_) = m.source {
                v2x.push((1.0, cfg.lr_cam));
                tr.v2x_support += 1.0;
            }
        }
        tr.existence_belief = update_belief(tr.existence_belief, lr_sensor, &v2x)?;
    }
    debug_assert_eq!(n_tracks, state.objects.len());

    for (b, &mi) in births.iter().enumerate() {
        let m = meas[mi];
        let mut tr = Track {
            track_id: state.next_track_id,
            position: m.position,
            velocity: m.velocity,
            existence_belief: cfg.b_birth,
            last_update: now,
            contributing_sources: vec![m.source],
            v2x_support: 0.0,
        };
        state.next_track_id += 1;
        // Later groups in the same bundle that matched this birth refine it.
        for (m2, a) in meas.iter().zip(&assigned) {
            if *a == Assigned::Birth(b) && m2.group != m.group {
                tr.position = tr.position + (m2.position - tr.position) * cfg.blend;
                tr.velocity = tr.velocity + (m2.velocity - tr.velocity) * cfg.blend;
                if !tr.contributing_sources.contains(&m2.source) {
                    tr.contributing_sources.push(m2.source);
                    tr.contributing_sources.sort();
                }
            }
        }
        state.objects.push(tr);
    }

    state
        .objects
        .retain(|t| t.existence_belief >= cfg.b_prune && now - t.last_update <= cfg.tau_stale + TIME_EPS);

    for m in denms {
        ingest_denm(m, &mut state, cfg);
    }
    for ev in &mut state.events {
        if ev.status == EventStatus::Pending && now - ev.first_seen > cfg.tau_event + TIME_EPS {
            ev.status = if ev.refused { EventStatus::Rejected } else { EventStatus::Expired };
        }
    }

    state.frames.extend(frames.into_iter().cloned());
    state.frames.retain(|f| f.timestamp > now - cfg.frame_history - TIME_EPS);
    state.stamp = now;
    Ok(state)
}
