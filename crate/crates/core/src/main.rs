use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use driveloop::harness::{
    format_stats, joint_analysis, replay, report, run_batch, run_episode, sweep, write_batch, write_sweep, Configuration,
    Flags, Preset, ScenarioSpec, SweepGrid,
};
use driveloop::pareto::analyze;
use driveloop::records::{read_json, write_json};
use driveloop::Result;

#[derive(Parser)]
#[command(name = "driveloop", version, about = "Closed-loop driving simulator with V2X fusion and Pareto tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FlagArgs {
    /// Disable V2X reception (sensors only).
    #[arg(long)]
    no_v2x: bool,
    /// Accept every V2X hazard report without the quorum gate.
    #[arg(long)]
    no_gate: bool,
    /// Disable the map update client.
    #[arg(long)]
    no_updates: bool,
    /// Drive the route with the scripted constant-speed follower.
    #[arg(long)]
    baseline: bool,
}

impl FlagArgs {
    fn apply(&self, f: &mut Flags) {
        f.v2x_enabled &= !self.no_v2x;
        f.gate_enabled &= !self.no_gate;
        f.updates_enabled &= !self.no_updates;
        f.baseline |= self.baseline;
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its log directory.
    Run {
        #[arg(long)]
        scenario: Preset,
        /// Scenario JSON overriding the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: FlagArgs,
    },
    /// Run a scenario over a range of seeds and print mean ± SD.
    Batch {
        #[arg(long)]
        scenario: Preset,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inclusive seed range, e.g. 1..30.
        #[arg(long, default_value = "1..30", value_parser = parse_range)]
        seeds: RangeInclusive<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every episode's log directory.
        #[arg(long)]
        logs: bool,
        #[command(flatten)]
        flags: FlagArgs,
    },
    /// Grid search with frontier, knee and hypervolume.
    Sweep {
        /// Grid JSON; defaults to the 60-configuration grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value = "s1,s2", value_delimiter = ',')]
        scenarios: Vec<Preset>,
        #[arg(long, default_value = "1..5", value_parser = parse_range)]
        seeds: RangeInclusive<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also sweep with V2X disabled and compare hypervolumes under a
        /// shared normalization.
        #[arg(long)]
        ablation: bool,
        #[command(flatten)]
        flags: FlagArgs,
    },
    /// Summarize every episode below a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Recompute the metrics of an episode from its logs.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

fn parse_range(s: &str) -> std::result::Result<RangeInclusive<u64>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a > b {
        return Err(format!("empty range {s:?}"));
    }
    Ok(a..=b)
}

fn load_config(path: Option<&Path>) -> Result<Configuration> {
    match path {
        Some(p) => {
            let c: Configuration = read_json(p)?;
            c.validate()?;
            Ok(c)
        }
        None => Ok(Configuration::default()),
    }
}

const HV_REFERENCE: [f64; 3] = [1.1, 1.1, 1.1];

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { scenario, spec, config, seed, out, flags } => {
            let spec = match spec {
                Some(p) => read_json::<ScenarioSpec>(&p)?,
                None => ScenarioSpec::build(scenario, seed),
            }
            .with_flags(|f| flags.apply(f));
            let config = load_config(config.as_deref())?;
            let result = run_episode(&spec, &config)?;
            result.write(&out)?;
            println!("{}", serde_json::to_string_pretty(&result.summary())?);
            if !result.plan_times_ms.is_empty() {
                let mean = result.plan_times_ms.iter().sum::<f64>() / result.plan_times_ms.len() as f64;
                println!("plans: {} (mean {:.1} ms wall clock)", result.plan_times_ms.len(), mean);
            }
            Ok(true)
        }
        Command::Batch { scenario, config, seeds, out, logs, flags } => {
            let config = load_config(config.as_deref())?;
            let seeds: Vec<u64> = seeds.collect();
            let batch = run_batch(|s| ScenarioSpec::build(scenario, s).with_flags(|f| flags.apply(f)), &seeds, &config)?;
            write_batch(&batch, &out, logs)?;
            print!("{}", format_stats(&batch.stats));
            for (seed, e) in &batch.failures {
                eprintln!("seed {seed} failed: {e}");
            }
            Ok(batch.failures.is_empty())
        }
        Command::Sweep { grid, scenarios, seeds, out, ablation, flags } => {
            let grid: SweepGrid = match grid {
                Some(p) => read_json(&p)?,
                None => SweepGrid::default(),
            };
            let configs = grid.configurations()?;
            let seeds: Vec<u64> = seeds.collect();
            let main = sweep(&configs, &scenarios, &seeds, |f| flags.apply(f))?;
            if ablation {
                let sensors = sweep(&configs, &scenarios, &seeds, |f| {
                    flags.apply(f);
                    f.v2x_enabled = false;
                })?;
                let (a, b) = joint_analysis(&main, &sensors, &HV_REFERENCE)?;
                write_sweep(&out.join("v2x"), &main, &a)?;
                write_sweep(&out.join("sensors_only"), &sensors, &b)?;
                println!("H(V2X) = {:.4}  knee {:?}  frontier {}", a.hypervolume, a.knee, a.frontier.len());
                println!("H(sensors-only) = {:.4}  knee {:?}  frontier {}", b.hypervolume, b.knee, b.frontier.len());
            } else {
                let a = analyze(&main.points, &HV_REFERENCE, None)?;
                write_sweep(&out, &main, &a)?;
                println!("H = {:.4}  knee {:?}  frontier {}", a.hypervolume, a.knee, a.frontier.len());
                if let Some(k) = &a.knee {
                    if let Some(c) = configs.iter().find(|c| &c.config_id == k) {
                        write_json(&out.join("knee.json"), c)?;
                    }
                }
            }
            for (id, e) in &main.aborted {
                eprintln!("configuration {id} aborted: {e}");
            }
            Ok(true)
        }
        Command::Report { input } => {
            print!("{}", report(&input)?);
            Ok(true)
        }
        Command::Replay { log } => {
            let (recomputed, stored) = replay(&log)?;
            println!("{}", serde_json::to_string_pretty(&recomputed)?);
            if recomputed == stored {
                println!("replay: metrics identical to the stored summary");
                Ok(true)
            } else {
                eprintln!("replay: metrics differ from the stored summary");
                Ok(false)
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
