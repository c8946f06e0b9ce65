//! The synchronous tick loop of one episode.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::Configuration;
use super::scenario::{HazardSpec, ScenarioSpec, Spawn};
use crate::control::{follow_tick, ControlCommand, PidState};
use crate::error::{Error, Result};
use crate::gate::{evaluate_pending, GateReason};
use crate::geometry::{cumulative_lengths, project_onto_polyline, round_sig9 as r9, Pose, Vec2};
use crate::ldm::{fuse_tick, synchronize, LdmState, SyncItem};
use crate::metrics::{compute, EpisodeMetrics};
use crate::perception::{sense, SensingFrame, TruthObject};
use crate::planner::{check_triggers, plan, ttc_rollout, SpeedProfileConfig, Trajectory};
use crate::records::{
    write_json, ControlRow, EpisodeLogs, EventRow, GateRow, LdmRow, Outcome, PlanRow, Termination, TraceRow, TruthRow,
    UpdateRow, V2xRow, VehicleRow,
};
use crate::rng::{stream, Stream};
use crate::v2x::{generate_attack_traffic, generate_honest_traffic, transmit, MsgKind, Payload, V2xEmitter, V2xMessage};
use crate::vehicle::{step, VehicleState};
use crate::world::{poll_update, publish_version, GroundTruthHazard, MapVersion, Route, UpdateServerState};

/// Seconds for the safety-stop brake to ramp from zero to full.
pub const SAFETY_BRAKE_RAMP: f64 = 0.3;
/// Minimum spacing of replans caused by the risk trigger alone.
pub const RISK_REPLAN_COOLDOWN: f64 = 1.0;
/// Cap on the logged ground-truth time-to-collision.
pub const TTC_CAP: f64 = 10.0;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub scenario: ScenarioSpec,
    pub config: Configuration,
    pub logs: EpisodeLogs,
    pub outcome: Outcome,
    pub metrics: EpisodeMetrics,
    /// Wall-clock planning times. Kept out of the log directory so that it
    /// stays byte-identical across runs.
    pub plan_times_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub config_id: String,
    pub outcome: Outcome,
    pub metrics: EpisodeMetrics,
}

impl EpisodeResult {
    pub fn summary(&self) -> Summary {
        Summary {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            config_id: self.config.config_id.clone(),
            outcome: self.outcome.clone(),
            metrics: self.metrics.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.logs.write(dir)?;
        write_json(&dir.join("scenario.json"), &self.scenario)?;
        write_json(&dir.join("config.json"), &self.config)?;
        write_json(&dir.join("outcome.json"), &self.outcome)?;
        write_json(&dir.join("summary.json"), &self.summary())?;
        Ok(())
    }
}

fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

struct LiveHazard {
    spec: HazardSpec,
    spawned_at: Option<f64>,
}

impl LiveHazard {
    fn truth(&self) -> Option<GroundTruthHazard> {
        self.spawned_at.map(|t| GroundTruthHazard {
            id: self.spec.id,
            position: self.spec.position,
            kind: self.spec.kind,
            spawn_time: t,
            observable_by_sensing: self.spec.observable_by_sensing,
            radius: self.spec.radius,
        })
    }
}

/// A physical object in the world at one instant.
struct WorldObject {
    id: u32,
    kind: String,
    position: Vec2,
    velocity: Vec2,
    radius: f64,
    observable: bool,
}

fn reference_trajectory(route: &Route, speed: f64, version: u64) -> Trajectory {
    let pts = &route.reference_path;
    let mut poses = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let h = if i + 1 < pts.len() { (pts[i + 1] - *p).angle() } else { (*p - pts[i - 1]).angle() };
        poses.push(Pose::new(p.x, p.y, h));
    }
    let n = poses.len();
    Trajectory::from_poses(poses, vec![speed; n], version, 0.0)
}

fn ground_truth_ttc(ego: &VehicleState, plan: Option<&Trajectory>, objects: &[WorldObject], ego_radius: f64) -> f64 {
    let horizon_len = ego.speed * TTC_CAP + 1.0;
    let mut path = vec![ego.position()];
    match plan {
        Some(p) => {
            let s0 = p.sample_at(ego.position()).arc_length;
            path.extend(p.segment_points(s0, horizon_len));
        }
        None => path.push(ego.position() + Vec2::from_polar(horizon_len, ego.heading)),
    }
    objects
        .iter()
        .map(|o| ttc_rollout(&path, ego.speed, o.position, o.velocity, ego_radius + o.radius, TTC_CAP))
        .fold(TTC_CAP, f64::min)
}

struct Tracer {
    seq: u64,
    rows: Vec<TraceRow>,
}

impl Tracer {
    fn mark(&mut self, tick: u64, stage: &str) {
        self.rows.push(TraceRow { tick, seq: self.seq, stage: stage.into() });
        self.seq += 1;
    }
}

/// Runs one closed-loop episode.
///
/// Per tick: hazards spawn, sensing, V2X generation and delivery, time
/// synchronization, map update client, fusion, gate, triggers, (re)planning,
/// control, vehicle step, logging and termination checks.
pub fn run_episode(spec: &ScenarioSpec, config: &Configuration) -> Result<EpisodeResult> {
    spec.validate()?;
    config.validate()?;
    let flags = spec.flags;
    let dt = spec.dt;
    let vehicle = spec.vehicle;
    let controller = config.controller();
    let triggers = config.triggers();
    let mut gate_cfg = spec.gate.clone();
    gate_cfg.enabled = flags.gate_enabled;
    let speed_cfg = SpeedProfileConfig { cruise_speed: spec.cruise_speed, ..spec.speed };
    let radius_sum = vehicle.collision_radius + spec.planner.object_radius;

    let mut rng_sensing = stream(spec.seed, Stream::Sensing);
    let mut rng_channel = stream(spec.seed, Stream::Channel);
    let mut rng_honest = stream(spec.seed, Stream::Honest);
    let mut rng_attack = stream(spec.seed, Stream::Attack);
    let mut rng_ota = stream(spec.seed, Stream::Ota);

    let build = |id: u64, lanes: &[crate::world::LaneSegment], at: f64| {
        MapVersion::build(id, lanes.to_vec(), spec.grid, spec.lane_half_width, vehicle.collision_radius, at).map(Arc::new)
    };
    let base_map = build(1, &spec.lanes, 0.0)?;
    let mut routes: BTreeMap<u64, Route> = BTreeMap::new();
    routes.insert(1, Route::from_segments(&base_map, &spec.route.segment_ids, spec.route.goal)?);
    let mut server = UpdateServerState::new();
    let mut published_at: BTreeMap<u64, f64> = BTreeMap::new();
    for u in &spec.updates {
        let v = build(u.version_id, &u.lanes, u.publish_at)?;
        routes.insert(u.version_id, Route::from_segments(&v, &u.route.segment_ids, u.route.goal)?);
        server = publish_version(server, v, u.publish_at)?;
        published_at.insert(u.version_id, u.publish_at);
    }
    let download = Normal::new(spec.download_latency_mean, spec.download_latency_sd)
        .map_err(|e| Error::Scenario(format!("download latency: {e}")))?;

    let mut active_map = Arc::clone(&base_map);
    let mut route = routes[&1].clone();
    let mut route_cum = cumulative_lengths(&route.reference_path);
    let mut hazards: Vec<LiveHazard> = spec.hazards.iter().map(|h| LiveHazard { spec: *h, spawned_at: None }).collect();
    let mut ego = VehicleState::at_pose(spec.start, spec.start_speed);
    let mut ldm = LdmState::new(Arc::clone(&active_map), 0.0);
    let mut buffer: Vec<SyncItem> = Vec::new();
    let mut in_flight: Vec<V2xMessage> = Vec::new();
    let mut emitter = V2xEmitter::new();
    let mut attack_traffic = false;

    let mut current: Option<Trajectory> = None;
    let mut ever_planned = false;
    let mut pid = PidState::default();
    let mut safety_since: Option<f64> = None;
    let mut last_risk_replan = f64::NEG_INFINITY;
    let mut next_poll = 0.0;
    let mut last_seen_version = 1u64;
    let mut pending_update: Option<(Arc<MapVersion>, f64, f64, f64)> = None;

    let mut logs = EpisodeLogs::default();
    let mut tracer = Tracer { seq: 0, rows: Vec::new() };
    let mut plan_times_ms = Vec::new();
    let mut collisions = 0u32;
    let termination;
    let mut tick: u64 = 0;

    loop {
        let t = tick as f64 * dt;

        tracer.mark(tick, "hazards");
        for h in &mut hazards {
            if h.spawned_at.is_none() {
                match h.spec.spawn {
                    Spawn::At(at) if t + TIME_EPS >= at => h.spawned_at = Some(at),
                    Spawn::EgoWithin(d) if ego.position().distance(h.spec.position) <= d => h.spawned_at = Some(t),
                    _ => {}
                }
            }
        }
        let gt_hazards: Vec<GroundTruthHazard> = hazards.iter().filter_map(LiveHazard::truth).collect();
        let objects_at = |time: f64| -> Vec<WorldObject> {
            let mut out: Vec<WorldObject> = gt_hazards
                .iter()
                .map(|h| WorldObject {
                    id: h.id,
                    kind: tag(&h.kind),
                    position: h.position,
                    velocity: Vec2::ZERO,
                    radius: h.radius,
                    observable: h.observable_by_sensing,
                })
                .collect();
            out.extend(spec.traffic.iter().map(|a| WorldObject {
                id: a.id,
                kind: "vehicle".into(),
                position: a.position + a.velocity * time,
                velocity: a.velocity,
                radius: a.radius,
                observable: true,
            }));
            out
        };
        let objects = objects_at(t);

        tracer.mark(tick, "sense");
        let truth: Vec<TruthObject> = objects
            .iter()
            .map(|o| TruthObject { id: o.id, position: o.position, velocity: o.velocity, observable: o.observable })
            .collect();
        let detections = sense(ego.pose(), &truth, &spec.sensor, t, &mut rng_sensing);
        buffer.push(SyncItem::Frame(SensingFrame { timestamp: t, ego: ego.pose(), detections }));

        tracer.mark(tick, "v2x");
        let mut denms: Vec<V2xMessage> = Vec::new();
        if flags.v2x_enabled {
            let mut msgs = generate_honest_traffic(&mut emitter, &gt_hazards, &spec.stations, t, &mut rng_honest);
            if let Some(policy) = &spec.attack {
                let fake = generate_attack_traffic(
                    &mut emitter,
                    policy,
                    &spec.stations,
                    &route.reference_path,
                    ego.position(),
                    active_map.bounds(),
                    t,
                    &mut rng_attack,
                );
                attack_traffic |= !fake.is_empty();
                msgs.extend(fake);
            }
            in_flight.extend(transmit(msgs, &spec.channel, &mut rng_channel));
            in_flight.sort_by(|a, b| {
                a.recv_time
                    .total_cmp(&b.recv_time)
                    .then(a.station_id.cmp(&b.station_id))
                    .then(a.seq_no.cmp(&b.seq_no))
            });
            let split = in_flight.partition_point(|m| m.recv_time <= t + TIME_EPS);
            for m in in_flight.drain(..split) {
                let (pos, hazard_kind) = match m.payload {
                    Payload::Cam { position, .. } => (position, String::new()),
                    Payload::Denm { event_kind, event_position, .. } => (event_position, tag(&event_kind)),
                };
                logs.v2x.push(V2xRow {
                    tick,
                    station_id: m.station_id,
                    seq_no: m.seq_no,
                    kind: tag(&m.kind()).to_lowercase(),
                    gen_time: r9(m.gen_time),
                    recv_time: r9(m.recv_time),
                    x: r9(pos.x),
                    y: r9(pos.y),
                    hazard_kind,
                });
                match m.kind() {
                    MsgKind::Cam => buffer.push(SyncItem::Cam(m)),
                    MsgKind::Denm => denms.push(m),
                }
            }
        }

        tracer.mark(tick, "synchronize");
        let bundle = synchronize(&mut buffer, t, spec.ldm.tau_sync);

        tracer.mark(tick, "update");
        if flags.updates_enabled {
            if pending_update.is_none() && t + TIME_EPS >= next_poll {
                while next_poll <= t + TIME_EPS {
                    next_poll += config.update_interval;
                }
                let latency = download.sample(&mut rng_ota).max(0.0);
                if let Some((v, ready)) = poll_update(t, last_seen_version, &server, latency) {
                    last_seen_version = v.version_id;
                    pending_update = Some((v, t, latency, ready));
                }
            }
            if let Some((v, poll_time, latency, ready)) = pending_update.take() {
                if t + TIME_EPS >= ready {
                    logs.updates.push(UpdateRow {
                        version_id: v.version_id,
                        published_at: r9(published_at.get(&v.version_id).copied().unwrap_or(0.0)),
                        poll_time: r9(poll_time),
                        download_latency: r9(latency),
                        activation_time: r9(ready),
                        activation_tick: tick,
                        activation_tick_time: r9(t),
                    });
                    route = routes[&v.version_id].clone();
                    route_cum = cumulative_lengths(&route.reference_path);
                    active_map = v;
                } else {
                    pending_update = Some((v, poll_time, latency, ready));
                }
            }
        }

        tracer.mark(tick, "fuse");
        ldm = fuse_tick(&ldm, &bundle, &denms, Arc::clone(&active_map), &spec.sensor, &spec.ldm, t)?;

        tracer.mark(tick, "gate");
        for d in evaluate_pending(&mut ldm, &gate_cfg, &spec.sensor, t) {
            logs.gate.push(GateRow {
                tick,
                t: r9(t),
                event_id: d.event_id,
                accepted: d.accepted,
                support_weight: r9(d.support_weight),
                sensor_likelihood: r9(d.sensor_likelihood),
                reason: tag(&d.reason),
            });
            debug_assert!(d.accepted == (d.reason == GateReason::Accepted));
        }

        tracer.mark(tick, "triggers");
        let mut reasons: Vec<String> = Vec::new();
        if !flags.baseline && safety_since.is_none() {
            match &current {
                None => reasons.push("initial".into()),
                Some(p) => {
                    let fired = check_triggers(&ldm, &route, p, &ego, &triggers, spec.planner.b_obstacle, radius_sum);
                    if fired.hazard_on_route {
                        reasons.push("hazard_on_route".into());
                    }
                    if fired.risk_threshold && t - last_risk_replan >= RISK_REPLAN_COOLDOWN - TIME_EPS {
                        reasons.push("risk_threshold".into());
                    }
                    if fired.knowledge_change {
                        reasons.push("knowledge_change".into());
                    }
                }
            }
        } else if flags.baseline && current.is_none() {
            current = Some(reference_trajectory(&route, spec.cruise_speed, active_map.version_id));
            ever_planned = true;
        }

        tracer.mark(tick, "plan");
        if !reasons.is_empty() {
            let started = Instant::now();
            let out = plan(
                ego.pose(),
                route.goal_pose,
                &ldm,
                &spec.planner,
                &vehicle,
                &speed_cfg,
                triggers.prefix_horizon,
                t,
            );
            plan_times_ms.push(started.elapsed().as_secs_f64() * 1000.0);
            let (success, failure, length, kappa) = match &out.result {
                Ok(traj) => (true, String::new(), traj.length(), traj.max_abs_curvature()),
                Err(f) => (false, tag(f), 0.0, 0.0),
            };
            logs.plans.push(PlanRow {
                tick,
                t: r9(t),
                reason: reasons.join(";"),
                success,
                failure,
                map_version: active_map.version_id,
                path_length: r9(length),
                expansions: out.stats.expansions as u64,
                max_curvature: r9(kappa),
            });
            match out.result {
                Ok(traj) => {
                    if reasons.iter().any(|r| r == "risk_threshold") {
                        last_risk_replan = t;
                    }
                    current = Some(traj);
                    ever_planned = true;
                }
                Err(_) => safety_since = Some(t),
            }
        }

        tracer.mark(tick, "control");
        let (mut cmd, info) = match &current {
            Some(traj) => {
                let (cmd, next_pid, info) = follow_tick(&ego, traj, &controller, &vehicle, pid, dt)?;
                pid = next_pid;
                (cmd, Some(info))
            }
            None => (ControlCommand::default(), None),
        };
        if let Some(since) = safety_since {
            cmd.throttle = 0.0;
            cmd.brake = ((t - since + dt) / SAFETY_BRAKE_RAMP).min(1.0);
            pid = PidState::default();
        }

        tracer.mark(tick, "log");
        let progress = project_onto_polyline(&route.reference_path, &route_cum, ego.position())
            .map_or(0.0, |p| p.arc_length / route_cum.last().copied().unwrap_or(1.0).max(1e-9));
        logs.vehicle.push(VehicleRow {
            tick,
            t: r9(t),
            x: r9(ego.x),
            y: r9(ego.y),
            heading: r9(ego.heading),
            speed: r9(ego.speed),
            cross_track: r9(info.map_or(0.0, |i| i.cross_track)),
            heading_error: r9(info.map_or(0.0, |i| i.heading_error)),
            target_speed: r9(info.map_or(0.0, |i| i.target_speed)),
            progress: r9(progress.clamp(0.0, 1.0)),
            ttc: r9(ground_truth_ttc(&ego, current.as_ref(), &objects, vehicle.collision_radius)),
        });
        logs.control.push(ControlRow {
            tick,
            t: r9(t),
            steering: r9(cmd.steering),
            throttle: r9(cmd.throttle),
            brake: r9(cmd.brake),
            safety_stop: safety_since.is_some(),
        });
        for o in &objects {
            logs.truth.push(TruthRow {
                tick,
                t: r9(t),
                object_id: o.id,
                kind: o.kind.clone(),
                x: r9(o.position.x),
                y: r9(o.position.y),
                radius: r9(o.radius),
                in_range: o.position.distance(ego.position()) <= spec.mot_range,
            });
        }
        for tr in &ldm.objects {
            logs.ldm.push(LdmRow {
                tick,
                t: r9(t),
                track_id: tr.track_id,
                x: r9(tr.position.x),
                y: r9(tr.position.y),
                vx: r9(tr.velocity.x),
                vy: r9(tr.velocity.y),
                belief: r9(tr.existence_belief),
                sources: tr.contributing_sources.len() as u32,
                in_range: tr.position.distance(ego.position()) <= spec.mot_range,
            });
        }

        tracer.mark(tick, "step");
        ego = step(&ego, &cmd, &vehicle, dt)?;
        tick += 1;
        let t_next = tick as f64 * dt;

        let hit = objects_at(t_next)
            .iter()
            .any(|o| o.position.distance(ego.position()) <= vehicle.collision_radius + o.radius);
        if hit {
            collisions += 1;
            termination = Termination::Collision;
            break;
        }
        if ego.position().distance(route.goal_pose.position()) <= spec.goal_tolerance {
            termination = Termination::GoalReached;
            break;
        }
        if safety_since.is_some() && ego.speed <= 0.0 {
            termination = if ever_planned { Termination::SafetyStop } else { Termination::PlannerFailure };
            break;
        }
        if t_next >= spec.time_limit - TIME_EPS {
            termination = Termination::Timeout;
            break;
        }
    }

    let true_hazards = hazards.iter().filter(|h| h.spawned_at.is_some()).count() as u32;
    for ev in &ldm.events {
        let label = hazards.iter().filter_map(LiveHazard::truth).any(|h| {
            h.kind == ev.hazard_kind && h.position.distance(ev.position) <= gate_cfg.radius
        });
        logs.events.push(EventRow {
            event_id: ev.event_id,
            kind: tag(&ev.kind),
            hazard_kind: tag(&ev.hazard_kind),
            x: r9(ev.position.x),
            y: r9(ev.position.y),
            first_seen: r9(ev.first_seen),
            status: tag(&ev.status),
            decided_at: ev.decided_at.map(r9),
            refused: ev.refused,
            support: ev.support.len() as u32,
            label: Some(label),
        });
    }
    logs.trace = tracer.rows;

    let outcome = Outcome {
        termination,
        end_time: r9(tick as f64 * dt),
        ticks: tick,
        dt,
        collisions,
        true_hazards,
        attack_traffic,
        v2x_enabled: flags.v2x_enabled,
        mot_match_radius: spec.metrics.match_radius,
    };
    let metrics = compute(&logs, &outcome, &spec.metrics)?;
    Ok(EpisodeResult {
        scenario: spec.clone(),
        config: config.clone(),
        logs,
        outcome,
        metrics,
        plan_times_ms,
    })
}
