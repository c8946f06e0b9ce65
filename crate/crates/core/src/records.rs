//! Episode log rows. Every float is rounded to nine significant digits when
//! the row is built, so metrics computed from the in-memory rows equal those
//! recomputed from the CSV files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRow {
    pub tick: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    /// Signed lateral offset from the trajectory being tracked.
    pub cross_track: f64,
    pub heading_error: f64,
    pub target_speed: f64,
    /// Fraction of the route length covered so far.
    pub progress: f64,
    /// Ground-truth time-to-collision along the current plan, capped.
    pub ttc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub tick: u64,
    pub t: f64,
    pub steering: f64,
    pub throttle: f64,
    pub brake: f64,
    pub safety_stop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub tick: u64,
    pub t: f64,
    pub object_id: u32,
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    /// Within the tracking-evaluation radius around the ego.
    pub in_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdmRow {
    pub tick: u64,
    pub t: f64,
    pub track_id: u64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub belief: f64,
    pub sources: u32,
    pub in_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub event_id: u64,
    pub kind: String,
    pub hazard_kind: String,
    pub x: f64,
    pub y: f64,
    pub first_seen: f64,
    pub status: String,
    pub decided_at: Option<f64>,
    pub refused: bool,
    pub support: u32,
    /// A ground-truth hazard of the same kind lies within the event radius.
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub tick: u64,
    pub t: f64,
    pub event_id: u64,
    pub accepted: bool,
    pub support_weight: f64,
    pub sensor_likelihood: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V2xRow {
    pub tick: u64,
    pub station_id: u32,
    pub seq_no: u64,
    pub kind: String,
    pub gen_time: f64,
    pub recv_time: f64,
    pub x: f64,
    pub y: f64,
    pub hazard_kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub tick: u64,
    pub t: f64,
    pub reason: String,
    pub success: bool,
    pub failure: String,
    pub map_version: u64,
    pub path_length: f64,
    pub expansions: u64,
    pub max_curvature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRow {
    pub version_id: u64,
    pub published_at: f64,
    pub poll_time: f64,
    pub download_latency: f64,
    pub activation_time: f64,
    pub activation_tick: u64,
    pub activation_tick_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: u64,
    pub seq: u64,
    pub stage: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GoalReached,
    Collision,
    PlannerFailure,
    Timeout,
    SafetyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outcome {
    pub termination: Termination,
    pub end_time: f64,
    pub ticks: u64,
    pub dt: f64,
    pub collisions: u32,
    /// Ground-truth hazards that existed at some point in the episode.
    pub true_hazards: u32,
    /// Fabricated reports were injected into the channel.
    pub attack_traffic: bool,
    /// V2X reception was on, so hazard reports could reach the gate.
    pub v2x_enabled: bool,
    pub mot_match_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLogs {
    pub vehicle: Vec<VehicleRow>,
    pub control: Vec<ControlRow>,
    pub truth: Vec<TruthRow>,
    pub ldm: Vec<LdmRow>,
    pub events: Vec<EventRow>,
    pub gate: Vec<GateRow>,
    pub v2x: Vec<V2xRow>,
    pub plans: Vec<PlanRow>,
    pub updates: Vec<UpdateRow>,
    pub trace: Vec<TraceRow>,
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    let file = BufWriter::new(File::create(dir.join(name))?);
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let file = BufReader::new(File::open(dir.join(name))?);
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

impl EpisodeLogs {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_csv(dir, "vehicle.csv", &self.vehicle)?;
        write_csv(dir, "control.csv", &self.control)?;
        write_csv(dir, "truth.csv", &self.truth)?;
        write_csv(dir, "ldm.csv", &self.ldm)?;
        write_csv(dir, "events.csv", &self.events)?;
        write_csv(dir, "gate.csv", &self.gate)?;
        write_csv(dir, "v2x.csv", &self.v2x)?;
        write_csv(dir, "plans.csv", &self.plans)?;
        write_csv(dir, "updates.csv", &self.updates)?;
        write_csv(dir, "trace.csv", &self.trace)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(Self {
            vehicle: read_csv(dir, "vehicle.csv")?,
            control: read_csv(dir, "control.csv")?,
            truth: read_csv(dir, "truth.csv")?,
            ldm: read_csv(dir, "ldm.csv")?,
            events: read_csv(dir, "events.csv")?,
            gate: read_csv(dir, "gate.csv")?,
            v2x: read_csv(dir, "v2x.csv")?,
            plans: read_csv(dir, "plans.csv")?,
            updates: read_csv(dir, "updates.csv")?,
            trace: read_csv(dir, "trace.csv")?,
        })
    }
}
