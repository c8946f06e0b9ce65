//! Multi-seed batches, parameter sweeps, reports and offline replay.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Configuration;
use super::episode::{run_episode, EpisodeResult, Summary};
use super::scenario::{Flags, Preset, ScenarioSpec};
use crate::error::{Error, Result};
use crate::metrics::{compute, gate_rates, mean_sd, objective_vector, EpisodeMetrics, GateOutcome};
use crate::pareto::{analyze, bounds, EvaluatedPoint, ParetoResult};
use crate::records::{read_json, write_json, EpisodeLogs, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub scenario: String,
    pub config_id: String,
    pub flags: Flags,
    pub episodes: usize,
    pub completions: usize,
    pub collision_episodes: usize,
    pub safety_stops: usize,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub metrics: Vec<MetricStat>,
}

impl BatchStats {
    pub fn get(&self, name: &str) -> Option<&MetricStat> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub episodes: Vec<EpisodeResult>,
    pub failures: Vec<(u64, String)>,
    pub stats: BatchStats,
}

fn check_distinct(seeds: &[u64]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for &s in seeds {
        if !seen.insert(s) {
            return Err(Error::DuplicateSeed(s));
        }
    }
    Ok(())
}

fn metric_columns(m: &EpisodeMetrics) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("lat_rmse", Some(m.lat_rmse)),
        ("heading_err_deg", Some(m.heading_err_deg)),
        ("completion_pct", Some(if m.completion { 100.0 } else { 0.0 })),
        ("progress", Some(m.progress)),
        ("ttc_min", Some(m.ttc_min)),
        ("collisions", Some(f64::from(m.collisions))),
        ("v2x_reaction_ms", m.v2x_reaction_ms),
        ("update_activation_s", m.update_activation_s),
        ("var_steer", Some(m.var_steer)),
        ("var_throttle", Some(m.var_throttle)),
        ("mota", m.mota),
        ("motp", m.motp),
        ("id_switches", Some(f64::from(m.id_switches))),
        ("trigger_latency_ms", m.trigger_latency_ms),
        ("brake_energy", Some(m.brake_energy)),
    ]
}

/// Mean ± sample SD of every metric over the summaries; absent values are
/// left out of their column.
pub fn batch_stats(summaries: &[Summary], flags: Flags) -> BatchStats {
    let mut cols: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    let mut order: Vec<&'static str> = Vec::new();
    for s in summaries {
        for (name, v) in metric_columns(&s.metrics) {
            if !order.contains(&name) {
                order.push(name);
            }
            let col = cols.entry(name).or_default();
            if let Some(v) = v {
                col.push(v);
            }
        }
    }
    let metrics = order
        .into_iter()
        .map(|name| {
            let xs = &cols[name];
            let (mean, sd) = mean_sd(xs);
            MetricStat { name: name.into(), mean, sd, n: xs.len() }
        })
        .collect();
    let outcomes: Vec<GateOutcome> = summaries
        .iter()
        .map(|s| GateOutcome {
            has_false_events: s.metrics.fpr.is_some(),
            false_accepted: s.metrics.fpr == Some(1.0),
            has_true_hazard: s.metrics.fnr.is_some(),
            true_accepted: s.metrics.fnr == Some(0.0),
        })
        .collect();
    let (fpr, fnr) = gate_rates(&outcomes);
    BatchStats {
        scenario: summaries.first().map(|s| s.scenario.clone()).unwrap_or_default(),
        config_id: summaries.first().map(|s| s.config_id.clone()).unwrap_or_default(),
        flags,
        episodes: summaries.len(),
        completions: summaries.iter().filter(|s| s.metrics.completion).count(),
        collision_episodes: summaries.iter().filter(|s| s.metrics.collisions > 0).count(),
        safety_stops: summaries
            .iter()
            .filter(|s| s.outcome.termination == crate::records::Termination::SafetyStop)
            .count(),
        fpr,
        fnr,
        metrics,
    }
}

/// Runs one episode per seed. A failing episode is recorded and the batch
/// carries on.
pub fn run_batch<F>(template: F, seeds: &[u64], config: &Configuration) -> Result<BatchResult>
where
    F: Fn(u64) -> ScenarioSpec + Sync,
{
    check_distinct(seeds)?;
    let results: Vec<(u64, Result<EpisodeResult>)> =
        seeds.par_iter().map(|&seed| (seed, run_episode(&template(seed), config))).collect();
    let mut episodes = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(e) => episodes.push(e),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let flags = seeds.first().map(|&s| template(s).flags).unwrap_or_default();
    let summaries: Vec<Summary> = episodes.iter().map(|e| e.summary()).collect();
    let stats = batch_stats(&summaries, flags);
    Ok(BatchResult { episodes, failures, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatchCsvRow {
    scenario: String,
    seed: u64,
    config_id: String,
    termination: String,
    lat_rmse: f64,
    heading_err_deg: f64,
    completion: bool,
    progress: f64,
    ttc_min: f64,
    collisions: u32,
    v2x_reaction_ms: Option<f64>,
    update_activation_s: Option<f64>,
    var_steer: f64,
    var_throttle: f64,
    mota: Option<f64>,
    motp: Option<f64>,
    id_switches: u32,
    fpr: Option<f64>,
    fnr: Option<f64>,
    trigger_latency_ms: Option<f64>,
    brake_energy: f64,
}

fn csv_row(s: &Summary) -> BatchCsvRow {
    let m = &s.metrics;
    BatchCsvRow {
        scenario: s.scenario.clone(),
        seed: s.seed,
        config_id: s.config_id.clone(),
        termination: serde_json::to_value(s.outcome.termination)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
        lat_rmse: m.lat_rmse,
        heading_err_deg: m.heading_err_deg,
        completion: m.completion,
        progress: m.progress,
        ttc_min: m.ttc_min,
        collisions: m.collisions,
        v2x_reaction_ms: m.v2x_reaction_ms,
        update_activation_s: m.update_activation_s,
        var_steer: m.var_steer,
        var_throttle: m.var_throttle,
        mota: m.mota,
        motp: m.motp,
        id_switches: m.id_switches,
        fpr: m.fpr,
        fnr: m.fnr,
        trigger_latency_ms: m.trigger_latency_ms,
        brake_energy: m.brake_energy,
    }
}

/// Writes per-seed episode directories, `batch.csv` and `batch.json`.
pub fn write_batch(batch: &BatchResult, dir: &Path, episode_logs: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("batch.csv"))?;
    for e in &batch.episodes {
        w.serialize(csv_row(&e.summary()))?;
        if episode_logs {
            e.write(&dir.join(format!("seed_{}", e.scenario.seed)))?;
        }
    }
    w.flush()?;
    write_json(&dir.join("batch.json"), &batch.stats)
}

/// Formats a batch as a table: one row per metric, mean ± SD.
pub fn format_stats(stats: &BatchStats) -> String {
    let mut out = format!(
        "{} [{}] v2x={} gate={} updates={} baseline={}\n",
        stats.scenario,
        stats.config_id,
        stats.flags.v2x_enabled,
        stats.flags.gate_enabled,
        stats.flags.updates_enabled,
        stats.flags.baseline
    );
    out += &format!(
        "  completion {}/{}  collisions {}/{}  safety stops {}/{}\n",
        stats.completions, stats.episodes, stats.collision_episodes, stats.episodes, stats.safety_stops, stats.episodes
    );
    let rate = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.2}"));
    out += &format!("  FPR {}  FNR {}\n", rate(stats.fpr), rate(stats.fnr));
    for m in &stats.metrics {
        if m.n > 0 {
            out += &format!("  {:<20} {:>12.4} ± {:<10.4} (n={})\n", m.name, m.mean, m.sd, m.n);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_id: String,
    pub scenario: String,
    pub seed: u64,
    pub j_trk: f64,
    pub j_sfty: f64,
    pub j_resp: f64,
    pub j_smth: f64,
    pub j_eng: f64,
    pub collided: bool,
    pub termination: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub points: Vec<EvaluatedPoint>,
    /// Configurations dropped because an episode failed, with the reason.
    pub aborted: Vec<(String, String)>,
}

/// Runs every configuration on every scenario and seed, then aggregates the
/// objective vector per configuration by the mean over all its episodes.
/// A configuration counts as collided if any of its episodes collided.
pub fn sweep(
    configs: &[Configuration],
    presets: &[Preset],
    seeds: &[u64],
    flags: impl Fn(&mut Flags) + Sync,
) -> Result<SweepOutcome> {
    check_distinct(seeds)?;
    let mut jobs = Vec::new();
    for (ci, _) in configs.iter().enumerate() {
        for &p in presets {
            for &s in seeds {
                jobs.push((ci, p, s));
            }
        }
    }
    let results: Vec<(usize, Result<SweepRow>)> = jobs
        .par_iter()
        .map(|&(ci, p, seed)| {
            let c = &configs[ci];
            let spec = ScenarioSpec::build(p, seed).with_flags(|f| {
                let keep_s1 = p == Preset::S1 || p == Preset::S1Straight;
                flags(f);
                if keep_s1 {
                    f.v2x_enabled = false;
                    f.updates_enabled = false;
                }
            });
            let row = run_episode(&spec, c).map(|e| {
                let j = objective_vector(&e.metrics, &spec.metrics);
                SweepRow {
                    config_id: c.config_id.clone(),
                    scenario: p.name().into(),
                    seed,
                    j_trk: j[0],
                    j_sfty: j[1],
                    j_resp: j[2],
                    j_smth: j[3],
                    j_eng: j[4],
                    collided: e.metrics.collisions > 0,
                    termination: serde_json::to_value(e.outcome.termination)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_owned))
                        .unwrap_or_default(),
                }
            });
            (ci, row)
        })
        .collect();

    let mut rows = Vec::new();
    let mut by_config: BTreeMap<usize, Vec<SweepRow>> = BTreeMap::new();
    let mut aborted: BTreeMap<usize, String> = BTreeMap::new();
    for (ci, r) in results {
        match r {
            Ok(row) => {
                rows.push(row.clone());
                by_config.entry(ci).or_default().push(row);
            }
            Err(e) => {
                aborted.entry(ci).or_insert_with(|| e.to_string());
            }
        }
    }
    let mut points = Vec::new();
    for (ci, rs) in by_config {
        if aborted.contains_key(&ci) {
            continue;
        }
        let cols: Vec<Vec<f64>> = rs.iter().map(|r| vec![r.j_trk, r.j_sfty, r.j_resp, r.j_smth, r.j_eng]).collect();
        let mut raw = Vec::new();
        let mut raw_std = Vec::new();
        for k in 0..5 {
            let (m, sd) = mean_sd(&cols.iter().map(|c| c[k]).collect::<Vec<_>>());
            raw.push(m);
            raw_std.push(sd);
        }
        points.push(EvaluatedPoint {
            config_id: configs[ci].config_id.clone(),
            raw,
            normalized: Vec::new(),
            collided: rs.iter().any(|r| r.collided),
            seeds_aggregated: rs.len(),
            raw_std,
        });
    }
    let aborted = aborted.into_iter().map(|(ci, e)| (configs[ci].config_id.clone(), e)).collect();
    Ok(SweepOutcome { rows, points, aborted })
}

/// Frontier analysis of two sweeps under one shared normalization: the
/// min-max bounds come from the collision-free points of both.
pub fn joint_analysis(a: &SweepOutcome, b: &SweepOutcome, r: &[f64]) -> Result<(ParetoResult, ParetoResult)> {
    let raw: Vec<Vec<f64>> = a.points.iter().chain(&b.points).filter(|p| !p.collided).map(|p| p.raw.clone()).collect();
    if raw.is_empty() {
        return Ok((analyze(&a.points, r, None)?, analyze(&b.points, r, None)?));
    }
    let (lo, hi) = bounds(&raw);
    Ok((analyze(&a.points, r, Some((&lo, &hi)))?, analyze(&b.points, r, Some((&lo, &hi)))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrontierRow {
    config_id: String,
    j_trk: f64,
    j_sfty: f64,
    j_resp: f64,
    j_smth: f64,
    j_eng: f64,
    n_trk: Option<f64>,
    n_sfty: Option<f64>,
    n_resp: Option<f64>,
    n_smth: Option<f64>,
    n_eng: Option<f64>,
    collided: bool,
    on_frontier: bool,
    is_knee: bool,
}

/// Writes `sweep.csv`, `frontier.csv` and `hypervolume.json`.
pub fn write_sweep(dir: &Path, outcome: &SweepOutcome, result: &ParetoResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    let mut rows = outcome.rows.clone();
    rows.sort_by(|a, b| (&a.config_id, &a.scenario, a.seed).cmp(&(&b.config_id, &b.scenario, b.seed)));
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("frontier.csv"))?;
    for p in &outcome.points {
        let on = result.frontier.iter().find(|f| f.config_id == p.config_id);
        let n = |k: usize| on.map(|f| f.normalized[k]);
        w.serialize(FrontierRow {
            config_id: p.config_id.clone(),
            j_trk: p.raw[0],
            j_sfty: p.raw[1],
            j_resp: p.raw[2],
            j_smth: p.raw[3],
            j_eng: p.raw[4],
            n_trk: n(0),
            n_sfty: n(1),
            n_resp: n(2),
            n_smth: n(3),
            n_eng: n(4),
            collided: p.collided,
            on_frontier: on.is_some(),
            is_knee: result.knee.as_deref() == Some(p.config_id.as_str()),
        })?;
    }
    w.flush()?;

    #[derive(Serialize)]
    struct Hv<'a> {
        hypervolume: f64,
        reference_point: &'a [f64],
        knee: Option<&'a str>,
        frontier_size: usize,
        configurations: usize,
        collided: usize,
        aborted: &'a [(String, String)],
    }
    write_json(
        &dir.join("hypervolume.json"),
        &Hv {
            hypervolume: result.hypervolume,
            reference_point: &result.reference_point,
            knee: result.knee.as_deref(),
            frontier_size: result.frontier.len(),
            configurations: outcome.points.len(),
            collided: outcome.points.iter().filter(|p| p.collided).count(),
            aborted: &outcome.aborted,
        },
    )
}

fn find_files(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_files(&p, name, out)?;
        } else if p.file_name().is_some_and(|f| f == name) {
            out.push(p);
        }
    }
    Ok(())
}

/// Groups every episode summary below `dir` by scenario, flags and
/// configuration, writes `report.csv` there and returns the tables.
pub fn report(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    find_files(dir, "summary.json", &mut files)?;
    let mut groups: BTreeMap<(String, String, String), (Flags, Vec<Summary>)> = BTreeMap::new();
    for f in files {
        let s: Summary = read_json(&f)?;
        let scenario: ScenarioSpec = read_json(&f.with_file_name("scenario.json"))?;
        let key = (s.scenario.clone(), format!("{:?}", scenario.flags), s.config_id.clone());
        groups.entry(key).or_insert_with(|| (scenario.flags, Vec::new())).1.push(s);
    }
    let mut text = String::new();
    let out = BufWriter::new(File::create(dir.join("report.csv"))?);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "config_id", "v2x", "gate", "updates", "baseline", "metric", "mean", "sd", "n"])?;
    for ((scenario, _, config_id), (flags, summaries)) in &groups {
        let stats = batch_stats(summaries, *flags);
        text += &format_stats(&stats);
        for m in &stats.metrics {
            w.write_record([
                scenario.clone(),
                config_id.clone(),
                flags.v2x_enabled.to_string(),
                flags.gate_enabled.to_string(),
                flags.updates_enabled.to_string(),
                flags.baseline.to_string(),
                m.name.clone(),
                format!("{}", m.mean),
                format!("{}", m.sd),
                m.n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let mut sweeps = Vec::new();
    find_files(dir, "hypervolume.json", &mut sweeps)?;
    for s in sweeps {
        let v: serde_json::Value = read_json(&s)?;
        text += &format!("sweep {}: {}\n", s.display(), v);
    }
    if text.is_empty() {
        text = format!("no episode summaries under {}\n", dir.display());
    }
    let mut f = File::create(dir.join("report.txt"))?;
    f.write_all(text.as_bytes())?;
    Ok(text)
}

/// Metrics recomputed from the CSV logs of an episode directory, next to
/// the ones stored when it ran.
pub fn replay(dir: &Path) -> Result<(EpisodeMetrics, EpisodeMetrics)> {
    let scenario: ScenarioSpec = read_json(&dir.join("scenario.json"))?;
    let outcome: Outcome = read_json(&dir.join("outcome.json"))?;
    let stored: Summary = read_json(&dir.join("summary.json"))?;
    let logs = EpisodeLogs::read(dir)?;
    Ok((compute(&logs, &outcome, &scenario.metrics)?, stored.metrics))
}
