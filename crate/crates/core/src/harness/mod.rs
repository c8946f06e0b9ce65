//! Scenarios, the episode loop, batches, sweeps and replay.

mod batch;
mod config;
mod episode;
mod scenario;

pub use batch::{
    batch_stats, format_stats, joint_analysis, replay, report, run_batch, sweep, write_batch, write_sweep, BatchResult,
    BatchStats, MetricStat, SweepOutcome, SweepRow,
};
pub use config::{Configuration, SweepGrid};
pub use episode::{run_episode, EpisodeResult, Summary, RISK_REPLAN_COOLDOWN, SAFETY_BRAKE_RAMP, TTC_CAP};
pub use scenario::{
    Flags, HazardSpec, MapUpdateSpec, Preset, RouteSpec, ScenarioId, ScenarioSpec, Spawn, TrafficAgent,
};
