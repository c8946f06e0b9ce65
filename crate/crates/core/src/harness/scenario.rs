//! Scenario descriptions and the four built-in presets.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::GateConfig;
use crate::geometry::{Pose, Vec2};
use crate::ldm::LdmConfig;
use crate::metrics::MetricsConfig;
use crate::perception::SensorModel;
use crate::planner::{PlannerConfig, SpeedProfileConfig};
use crate::rng::{stream, Stream};
use crate::v2x::{AttackPolicy, ChannelModel, StationPopulation, StationSpec};
use crate::vehicle::VehicleParams;
use crate::world::{GridSpec, HazardKind, LaneSegment, SegmentId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Preset {
    S1,
    S1Straight,
    S2,
    S3,
    S4,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::S1, Preset::S1Straight, Preset::S2, Preset::S3, Preset::S4];

    pub fn name(self) -> &'static str {
        match self {
            Preset::S1 => "s1",
            Preset::S1Straight => "s1-straight",
            Preset::S2 => "s2",
            Preset::S3 => "s3",
            Preset::S4 => "s4",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    pub v2x_enabled: bool,
    pub gate_enabled: bool,
    pub updates_enabled: bool,
    /// Scripted constant-speed lane follower instead of the planner.
    #[serde(default)]
    pub baseline: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            v2x_enabled: true,
            gate_enabled: true,
            updates_enabled: true,
            baseline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub segment_ids: Vec<SegmentId>,
    pub goal: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapUpdateSpec {
    pub version_id: u64,
    pub lanes: Vec<LaneSegment>,
    pub route: RouteSpec,
    pub publish_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spawn {
    At(f64),
    /// When the ego first comes within this distance.
    EgoWithin(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardSpec {
    pub id: u32,
    pub kind: HazardKind,
    pub position: Vec2,
    pub radius: f64,
    pub observable_by_sensing: bool,
    pub spawn: Spawn,
}

/// Scripted agent moving at constant velocity from `position` at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficAgent {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario_id: ScenarioId,
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub time_limit: f64,
    pub grid: GridSpec,
    pub lane_half_width: f64,
    pub lanes: Vec<LaneSegment>,
    pub route: RouteSpec,
    #[serde(default)]
    pub updates: Vec<MapUpdateSpec>,
    pub download_latency_mean: f64,
    pub download_latency_sd: f64,
    pub start: Pose,
    pub start_speed: f64,
    pub cruise_speed: f64,
    #[serde(default)]
    pub traffic: Vec<TrafficAgent>,
    #[serde(default)]
    pub hazards: Vec<HazardSpec>,
    pub stations: StationPopulation,
    pub channel: ChannelModel,
    #[serde(default)]
    pub attack: Option<AttackPolicy>,
    pub flags: Flags,
    /// Ground truth within this distance of the ego is scored by CLEAR-MOT.
    pub mot_range: f64,
    pub goal_tolerance: f64,
    pub vehicle: VehicleParams,
    pub sensor: SensorModel,
    pub ldm: LdmConfig,
    pub gate: GateConfig,
    pub planner: PlannerConfig,
    pub speed: SpeedProfileConfig,
    pub metrics: MetricsConfig,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.time_limit > 0.0) {
            return Err(Error::Scenario("dt and time_limit must be positive".into()));
        }
        if self.scenario_id == ScenarioId::S1 && (self.flags.v2x_enabled || self.flags.updates_enabled) {
            return Err(Error::Scenario("S1 runs without V2X and map updates".into()));
        }
        if self.scenario_id == ScenarioId::S4 && (self.attack.is_none() || self.hazards.is_empty()) {
            return Err(Error::Scenario("S4 needs a true hazard and an attack policy".into()));
        }
        self.vehicle.validate()?;
        self.sensor.validate()?;
        self.gate.validate()?;
        self.stations.validate()?;
        self.channel.validate()?;
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        let mut last = 1;
        for u in &self.updates {
            if u.version_id <= last {
                return Err(Error::NonMonotoneVersion { new: u.version_id, latest: last });
            }
            last = u.version_id;
        }
        Ok(())
    }

    pub fn build(preset: Preset, seed: u64) -> Self {
        match preset {
            Preset::S1 => s1(seed, false),
            Preset::S1Straight => s1(seed, true),
            Preset::S2 => s2(seed),
            Preset::S3 => s3(seed),
            Preset::S4 => s4(seed),
        }
    }

    pub fn with_flags(mut self, f: impl FnOnce(&mut Flags)) -> Self {
        f(&mut self.flags);
        self.gate.enabled = self.flags.gate_enabled;
        self
    }
}

fn lane(id: SegmentId, pts: &[(f64, f64)]) -> LaneSegment {
    LaneSegment {
        id,
        polyline: pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
        open: true,
    }
}

/// Points on a circular arc from angle `a0` to `a1`, about 1 m apart.
fn arc(center: Vec2, radius: f64, a0: f64, a1: f64) -> Vec<Vec2> {
    let n = ((radius * (a1 - a0).abs()).ceil() as usize).max(2);
    (0..=n)
        .map(|i| center + Vec2::from_polar(radius, a0 + (a1 - a0) * i as f64 / n as f64))
        .collect()
}

fn base(scenario_id: ScenarioId, name: &str, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        scenario_id,
        name: name.into(),
        seed,
        dt: 0.05,
        time_limit: 120.0,
        grid: GridSpec::default(),
        lane_half_width: 2.5,
        lanes: Vec::new(),
        route: RouteSpec { segment_ids: vec![1], goal: Pose::new(95.0, 0.0, 0.0) },
        updates: Vec::new(),
        download_latency_mean: 1.1,
        download_latency_sd: 0.2,
        start: Pose::new(5.0, 0.0, 0.0),
        start_speed: 10.0,
        cruise_speed: 10.0,
        traffic: Vec::new(),
        hazards: Vec::new(),
        stations: StationPopulation::default(),
        channel: ChannelModel::default(),
        attack: None,
        flags: Flags::default(),
        mot_range: 25.0,
        goal_tolerance: 1.5,
        vehicle: VehicleParams::default(),
        sensor: SensorModel::default(),
        ldm: LdmConfig::default(),
        gate: GateConfig::default(),
        planner: PlannerConfig::default(),
        speed: SpeedProfileConfig::default(),
        metrics: MetricsConfig::default(),
    }
}

/// Route following on an empty road: an S-bend of two radius-15 quarter
/// circles, or a straight road.
fn s1(seed: u64, straight: bool) -> ScenarioSpec {
    let mut rng = stream(seed, Stream::Scenario);
    let mut s = base(ScenarioId::S1, if straight { "s1-straight" } else { "s1" }, seed);
    s.flags = Flags { v2x_enabled: false, gate_enabled: true, updates_enabled: false, baseline: false };
    s.cruise_speed = rng.random_range(8.0..12.0);
    s.start_speed = 0.0;
    if straight {
        s.lanes = vec![lane(1, &[(2.0, 0.0), (98.0, 0.0)])];
        return s;
    }
    let mut pts = vec![Vec2::new(2.0, -30.0)];
    pts.extend(arc(Vec2::new(35.0, -15.0), 15.0, -FRAC_PI_2, 0.0));
    pts.extend(arc(Vec2::new(65.0, 15.0), 15.0, std::f64::consts::PI, FRAC_PI_2));
    pts.push(Vec2::new(98.0, 30.0));
    s.lanes = vec![LaneSegment { id: 1, polyline: pts, open: true }];
    s.start = Pose::new(5.0, -30.0, 0.0);
    s.route.goal = Pose::new(95.0, 30.0, 0.0);
    s
}

/// Sudden road closure ahead on a single lane, reported by road-side units
/// near it and by vehicles on a parallel road.
fn s2(seed: u64) -> ScenarioSpec {
    let mut rng = stream(seed, Stream::Scenario);
    let mut s = base(ScenarioId::S2, "s2", seed);
    s.flags.updates_enabled = false;
    s.lanes = vec![lane(1, &[(2.0, 0.0), (98.0, 0.0)]), lane(2, &[(2.0, 15.0), (98.0, 15.0)])];
    s.cruise_speed = rng.random_range(8.0..15.0);
    s.start_speed = s.cruise_speed;
    let trigger = rng.random_range(38.0..48.0);
    s.hazards = vec![HazardSpec {
        id: 1,
        kind: HazardKind::RoadClosure,
        position: Vec2::new(70.0, 0.0),
        radius: 2.5,
        observable_by_sensing: true,
        spawn: Spawn::EgoWithin(trigger),
    }];
    let mut stations: Vec<StationSpec> = (0..10)
        .map(|i| StationSpec {
            id: 1 + i,
            position: Vec2::new(52.0 + 4.0 * f64::from(i), -7.0),
            velocity: Vec2::ZERO,
            byzantine: false,
            road_side: true,
        })
        .collect();
    for k in 0..3u32 {
        let id = 101 + k;
        let position = Vec2::new(95.0 - 12.0 * f64::from(k), 15.0);
        let velocity = Vec2::new(-6.0, 0.0);
        stations.push(StationSpec { id, position, velocity, byzantine: false, road_side: false });
        s.traffic.push(TrafficAgent { id, position, velocity, radius: 1.5 });
    }
    s.stations.stations = stations;
    s
}

/// The direct road closes mid-episode. The update server publishes a map
/// with the closed segment removed and a detour added; a barrier appears on
/// the closed segment at the same time.
fn s3(seed: u64) -> ScenarioSpec {
    let mut rng = stream(seed, Stream::Scenario);
    let mut s = base(ScenarioId::S3, "s3", seed);
    s.flags = Flags { v2x_enabled: false, gate_enabled: true, updates_enabled: true, baseline: false };
    s.cruise_speed = 8.0;
    s.start_speed = 8.0;
    let seg1 = lane(1, &[(2.0, 0.0), (45.0, 0.0)]);
    let seg2 = lane(2, &[(45.0, 0.0), (75.0, 0.0)]);
    let seg3 = lane(3, &[(75.0, 0.0), (98.0, 0.0)]);
    let detour = lane(4, &[(45.0, 0.0), (52.0, 9.0), (68.0, 9.0), (75.0, 0.0)]);
    s.lanes = vec![seg1.clone(), seg2, seg3.clone()];
    s.route.segment_ids = vec![1, 2, 3];
    let publish_at = rng.random_range(0.5..2.5);
    s.updates = vec![MapUpdateSpec {
        version_id: 2,
        lanes: vec![seg1, detour, seg3],
        route: RouteSpec { segment_ids: vec![1, 4, 3], goal: s.route.goal },
        publish_at,
    }];
    s.hazards = vec![HazardSpec {
        id: 1,
        kind: HazardKind::RoadClosure,
        position: Vec2::new(62.0, 0.0),
        radius: 2.5,
        observable_by_sensing: true,
        spawn: Spawn::At(publish_at),
    }];
    s
}

/// Two-lane road with a stalled vehicle in the ego lane. Seven honest
/// road-side units report it; three Byzantine ones fabricate a closure
/// ahead of the ego every second.
fn s4(seed: u64) -> ScenarioSpec {
    let mut s = base(ScenarioId::S4, "s4", seed);
    s.flags.updates_enabled = false;
    s.lanes = vec![lane(1, &[(2.0, 0.0), (98.0, 0.0)]), lane(2, &[(2.0, 4.0), (98.0, 4.0)])];
    s.hazards = vec![HazardSpec {
        id: 1,
        kind: HazardKind::StationaryVehicle,
        position: Vec2::new(60.0, 0.0),
        radius: 1.5,
        observable_by_sensing: true,
        spawn: Spawn::At(0.0),
    }];
    s.stations.stations = (0..10u32)
        .map(|i| StationSpec {
            id: 1 + i,
            position: Vec2::new(35.0 + 6.0 * f64::from(i), if i % 2 == 0 { -7.0 } else { 11.0 }),
            velocity: Vec2::ZERO,
            byzantine: i >= 7,
            road_side: true,
        })
        .collect();
    s.attack = Some(AttackPolicy::default());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for p in Preset::ALL {
            let s = ScenarioSpec::build(p, 3);
            s.validate().unwrap();
            let json = serde_json::to_string(&s).unwrap();
            let back: ScenarioSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let s = ScenarioSpec::build(Preset::S1, 1);
        let mut v = serde_json::to_value(&s).unwrap();
        v.as_object_mut().unwrap().insert("surprise".into(), serde_json::json!(1));
        assert!(serde_json::from_value::<ScenarioSpec>(v).is_err());
    }

    #[test]
    fn s1_forbids_v2x() {
        let s = ScenarioSpec::build(Preset::S1, 1).with_flags(|f| f.v2x_enabled = true);
        assert!(s.validate().is_err());
    }

    #[test]
    fn s4_population() {
        let s = ScenarioSpec::build(Preset::S4, 1);
        assert_eq!(s.stations.n(), 10);
        assert_eq!(s.stations.byzantine_ids(), vec![8, 9, 10]);
    }
}
