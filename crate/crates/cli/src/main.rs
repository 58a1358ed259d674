//! `commsim`: run, sweep and benchmark community energy simulations.
//!
//! Exit status: 0 success, 1 simulation failure, 2 invalid input.

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use commsim::config::{load_scenario, ConfigError, DataFiles, DisturbanceSource, ScenarioConfig};
use commsim::data::{load_disturbances, write_disturbance_csv, DataError, SynthSpec};
use commsim::env::{CommunityEnv, EnvError};
use commsim::experiment::{bench, sweep, CaseMatrix, ExperimentError};
use commsim::export::{summary_row, write_run, write_trace_csv, SUMMARY_HEADER};
use commsim::metrics::compute;
use commsim::protocol::{serve, Session};
use commsim::{ControllerKind, DerClass, GridMode, StartupMode};

#[derive(Parser)]
#[command(name = "commsim", version, about = "Residential community energy simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write trace, time-series and metrics files.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a case matrix and write one summary row per case.
    Sweep {
        /// Matrix file; the default is five synthetic configurations (25 cases).
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override every configuration's horizon, steps.
        #[arg(long)]
        horizon: Option<usize>,
        /// Also write per-case trace CSVs.
        #[arg(long)]
        traces: bool,
    },
    /// Time per-step latency over repeated episodes after one warm-up.
    Bench {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
    },
    /// Write synthetic weather and load CSVs plus a scenario that uses them.
    Synth {
        #[arg(long, default_value = "synth")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 7.0)]
        days: f64,
        /// Comma-separated house classes (pv_battery, battery, pv, none).
        #[arg(long, default_value = "pv_battery,battery,pv,none")]
        classes: String,
    },
    /// Serve the JSON-lines control protocol on stdin/stdout.
    Serve {
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario file.
    #[arg(long, conflicts_with = "synth")]
    scenario: Option<PathBuf>,
    /// Use synthetic disturbances instead of a scenario file.
    #[arg(long)]
    synth: bool,
    /// House classes for --synth.
    #[arg(long, default_value = "pv_battery,battery,pv,none")]
    classes: String,
    #[arg(long)]
    controller: Option<String>,
    /// on | off
    #[arg(long)]
    grid: Option<String>,
    /// wacsc | woacsc
    #[arg(long)]
    startup: Option<String>,
    #[arg(long)]
    weather: Option<PathBuf>,
    #[arg(long)]
    loads: Option<PathBuf>,
    #[arg(long)]
    circuit_map: Option<PathBuf>,
    /// Episode length, steps.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Errors that mean the input was wrong rather than the run.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<InputError>() || cause.is::<ConfigError>() || cause.is::<DataError>() {
            return 2;
        }
        if let Some(x) = cause.downcast_ref::<EnvError>() {
            if matches!(x, EnvError::Config(_) | EnvError::Data(_) | EnvError::Controller(_)) {
                return 2;
            }
        }
        if let Some(x) = cause.downcast_ref::<ExperimentError>() {
            return match x {
                ExperimentError::Env(EnvError::Config(_) | EnvError::Data(_) | EnvError::Controller(_)) => 2,
                ExperimentError::Env(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn parse_classes(s: &str) -> Result<Vec<DerClass>> {
    s.split(',').map(|c| c.trim().parse::<DerClass>().map_err(input)).collect()
}

impl ScenarioArgs {
    fn build(&self) -> Result<ScenarioConfig<f64>> {
        let mut s = match (&self.scenario, self.synth) {
            (Some(p), _) => load_scenario::<f64>(p)?,
            (None, true) => {
                let classes = parse_classes(&self.classes)?;
                ScenarioConfig::synthetic("synthetic", &classes, GridMode::OffGrid, ControllerKind::RuleBased, StartupMode::Wacsc)
            }
            (None, false) if self.weather.is_some() || self.loads.is_some() => {
                let classes = parse_classes(&self.classes)?;
                ScenarioConfig::synthetic("files", &classes, GridMode::OffGrid, ControllerKind::RuleBased, StartupMode::Wacsc)
            }
            (None, false) => return Err(input("give --scenario, --synth, or --weather with --loads")),
        };
        if let Some(c) = &self.controller {
            s.controller = c.parse().map_err(input)?;
            if let ControllerKind::External(name) = &s.controller {
                return Err(input(format!("unknown controller `{name}` (built-in: baseline, rb)")));
            }
        }
        if let Some(g) = &self.grid {
            s.grid_mode = g.parse().map_err(input)?;
        }
        if let Some(m) = &self.startup {
            s.startup.mode = m.parse().map_err(input)?;
        }
        if let Some(h) = self.horizon {
            s.horizon_steps = h;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if self.weather.is_some() || self.loads.is_some() || self.circuit_map.is_some() {
            let mut files = match &s.disturbances {
                DisturbanceSource::Files(f) => {
                    // Paths from the scenario file stay relative to it.
                    let mut f = f.clone();
                    f.weather = s.resolve_path(&f.weather);
                    f.loads = s.resolve_path(&f.loads);
                    f.circuit_map = f.circuit_map.map(|p| s.resolve_path(&p));
                    f
                }
                DisturbanceSource::Synthetic(_) => match (&self.weather, &self.loads) {
                    (Some(w), Some(l)) => DataFiles {
                        weather: w.clone(),
                        loads: l.clone(),
                        circuit_map: None,
                        allow_upsample: false,
                    },
                    _ => return Err(input("--weather and --loads are both needed to replace synthetic data")),
                },
            };
            if let Some(w) = &self.weather {
                files.weather = w.clone();
            }
            if let Some(l) = &self.loads {
                files.loads = l.clone();
            }
            if let Some(m) = &self.circuit_map {
                files.circuit_map = Some(m.clone());
            }
            s.disturbances = DisturbanceSource::Files(files);
            s.base_dir = None;
        }
        s.validate()?;
        Ok(s)
    }
}

fn print_row(out: &mut impl Write, row: &[String]) -> io::Result<()> {
    writeln!(out, "{}", row.join(","))
}

fn cmd_run(args: &ScenarioArgs, out: &Path) -> Result<()> {
    let s = args.build()?;
    let seed = s.seed;
    let trace = CommunityEnv::new(s)?.run(seed)?;
    let report = compute(&trace)?;
    let files = write_run(out, &trace, &report).with_context(|| format!("writing {}", out.display()))?;
    let mut o = io::stdout().lock();
    print_row(&mut o, &SUMMARY_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    print_row(&mut o, &summary_row(&trace.scenario, Some(&report), "ok"))?;
    for p in [files.trace_csv, files.timeseries_csv, files.metrics_toml] {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn case_dir(label: &str) -> String {
    label.replace(['/', ' '], "_").replace('+', "")
}

fn cmd_sweep(matrix: Option<&Path>, seed: u64, out: &Path, jobs: usize, horizon: Option<usize>, traces: bool) -> Result<()> {
    let mut m = match matrix {
        Some(p) => CaseMatrix::<f64>::load(p)?,
        None => CaseMatrix::default_synthetic(),
    };
    if let Some(h) = horizon {
        m.set_horizon(h);
    }
    let t0 = Instant::now();
    let results = sweep(&m, seed, jobs);
    let elapsed = t0.elapsed();
    std::fs::create_dir_all(out)?;
    let mut summary = csv::Writer::from_path(out.join("summary.csv"))?;
    summary.write_record(SUMMARY_HEADER)?;
    let mut o = io::stdout().lock();
    print_row(&mut o, &SUMMARY_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    let mut failed = 0;
    for r in &results {
        let label = r.case.label();
        let report = r.outcome.as_ref().ok().map(|(_, m)| m);
        let row = summary_row(&label, report, &r.status());
        summary.write_record(&row)?;
        print_row(&mut o, &row)?;
        match &r.outcome {
            Ok((trace, report)) => {
                let dir = out.join("cases").join(case_dir(&label));
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("metrics.toml"), commsim::export::metrics_toml(trace, report))?;
                if traces {
                    write_trace_csv(trace, BufWriter::new(std::fs::File::create(dir.join("trace.csv"))?))?;
                }
            }
            Err(_) => failed += 1,
        }
    }
    summary.flush()?;
    eprintln!("{} cases in {:.2} s, {failed} failed", results.len(), elapsed.as_secs_f64());
    if failed > 0 {
        bail!("{failed} of {} cases failed", results.len());
    }
    Ok(())
}

fn cmd_bench(args: &ScenarioArgs, reps: usize) -> Result<()> {
    let s = args.build()?;
    let r = bench(&s, s.seed, reps)?;
    let n_houses = s.houses.len();
    let mut o = io::stdout().lock();
    writeln!(o, "scenario: {} ({n_houses} houses, {}, {}, {})", s.name, s.controller.name(), s.grid_mode, s.startup.mode)?;
    writeln!(o, "repetitions: {} x {} steps (after {:.1} ms warm-up)", r.repetitions, r.steps_per_episode, r.warmup.as_secs_f64() * 1e3)?;
    writeln!(o, "per-step ms: mean {:.5} p95 {:.5} max {:.5}", r.timing.mean_ms, r.timing.p95_ms, r.timing.max_ms)?;
    let eps: Vec<String> = r.episode_ms.iter().map(|x| format!("{x:.2}")).collect();
    writeln!(o, "episode ms: {}", eps.join(" "))?;
    Ok(())
}

fn cmd_synth(out: &Path, seed: u64, days: f64, classes: &str) -> Result<()> {
    let classes = parse_classes(classes)?;
    let mut s = ScenarioConfig::<f64>::synthetic("synthetic-files", &classes, GridMode::OffGrid, ControllerKind::RuleBased, StartupMode::Wacsc);
    let spec = SynthSpec { days, ..Default::default() };
    spec.validate()?;
    s.horizon_steps = spec.steps(s.dt_hours);
    s.seed = seed;
    s.disturbances = DisturbanceSource::Synthetic(spec);
    let d = load_disturbances(&s, seed)?;
    let ids: Vec<String> = s.houses.iter().map(|h| h.id.clone()).collect();
    write_disturbance_csv(&d, &ids, s.dt_hours, out)?;
    s.disturbances = DisturbanceSource::Files(DataFiles {
        weather: "weather.csv".into(),
        loads: "loads.csv".into(),
        circuit_map: None,
        allow_upsample: false,
    });
    for h in &mut s.houses {
        h.load_profile = Some(h.id.clone());
    }
    s.save(&out.join("scenario.toml"))?;
    eprintln!("wrote {}/{{weather.csv, loads.csv, scenario.toml}} ({} steps)", out.display(), s.horizon_steps);
    Ok(())
}

fn cmd_serve(scenario: Option<&Path>) -> Result<()> {
    let s = scenario.map(load_scenario::<f64>).transpose()?;
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    serve(&mut Session::new(s), stdin, stdout)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Command::Run { scenario, out } => cmd_run(scenario, out),
        Command::Sweep {
            matrix,
            seed,
            out,
            jobs,
            horizon,
            traces,
        } => cmd_sweep(matrix.as_deref(), *seed, out, *jobs, *horizon, *traces),
        Command::Bench { scenario, repetitions } => cmd_bench(scenario, *repetitions),
        Command::Synth { out, seed, days, classes } => cmd_synth(out, *seed, *days, classes),
        Command::Serve { scenario } => cmd_serve(scenario.as_deref()),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
