//! Case matrices, parallel sweeps and step-latency benchmarks.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;
use thiserror::Error;

use crate::config::{load_scenario, ConfigError, ControllerKind, DerClass, GridMode, ScenarioConfig, StartupMode};
use crate::env::{CommunityEnv, EnvError, Trace};
use crate::metrics::{compute, timing_stats, MetricsReport, TimingStats};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("minimum 3 repetitions, got {0}")]
    TooFewRepetitions(usize),
    #[error("matrix file: {0}")]
    Matrix(String),
}

/// One simulation case: a configuration run under one grid mode, controller
/// and startup mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Case {
    pub config: String,
    pub grid_mode: GridMode,
    pub controller: ControllerKind,
    pub startup: StartupMode,
}

impl Case {
    pub fn label(&self) -> String {
        format!("{}/{}/{}/{}", self.config, self.grid_mode, self.controller.short(), self.startup)
    }

    /// The configuration's scenario with this case's settings applied.
    pub fn apply<T: Scalar>(&self, base: &ScenarioConfig<T>) -> ScenarioConfig<T> {
        let mut s = base.clone();
        s.name = self.label();
        s.grid_mode = self.grid_mode;
        s.controller = self.controller.clone();
        s.startup.mode = self.startup;
        s
    }
}

/// The five cases run per configuration: on-grid Baseline without startup
/// constraints, and off-grid {Baseline, Rule-Based} x {WACSC, WOACSC}.
pub fn standard_cases(config: &str) -> Vec<Case> {
    let case = |grid_mode, controller, startup| Case {
        config: config.to_string(),
        grid_mode,
        controller,
        startup,
    };
    vec![
        case(GridMode::OnGrid, ControllerKind::Baseline, StartupMode::Woacsc),
        case(GridMode::OffGrid, ControllerKind::Baseline, StartupMode::Wacsc),
        case(GridMode::OffGrid, ControllerKind::Baseline, StartupMode::Woacsc),
        case(GridMode::OffGrid, ControllerKind::RuleBased, StartupMode::Wacsc),
        case(GridMode::OffGrid, ControllerKind::RuleBased, StartupMode::Woacsc),
    ]
}

#[derive(Debug, Clone)]
pub struct CaseMatrix<T> {
    pub configs: Vec<(String, ScenarioConfig<T>)>,
    pub cases: Vec<Case>,
}

/// Configuration ids and house classes of the default matrix.
pub const DEFAULT_CONFIGS: [(&str, &[DerClass]); 5] = [
    ("community", &DerClass::ALL),
    ("pv_battery", &[DerClass::PvAndBattery]),
    ("battery", &[DerClass::BatteryOnly]),
    ("pv", &[DerClass::PvOnly]),
    ("none", &[DerClass::NoDer]),
];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    config: Vec<MatrixEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixEntry {
    id: String,
    scenario: Option<String>,
    classes: Option<Vec<String>>,
}

impl<T: Scalar> CaseMatrix<T> {
    pub fn from_configs(configs: Vec<(String, ScenarioConfig<T>)>) -> Self {
        let cases = configs.iter().flat_map(|(id, _)| standard_cases(id)).collect();
        CaseMatrix { configs, cases }
    }

    /// Five configurations (the mixed four-house community and one single
    /// house per DER class) over synthetic disturbances: 25 cases.
    pub fn default_synthetic() -> Self {
        Self::from_configs(
            DEFAULT_CONFIGS
                .iter()
                .map(|(id, classes)| {
                    let s = ScenarioConfig::synthetic(*id, classes, GridMode::OffGrid, ControllerKind::Baseline, StartupMode::Wacsc);
                    (id.to_string(), s)
                })
                .collect(),
        )
    }

    /// Reads a matrix file: a list of `[[config]]` tables, each with an `id`
    /// and either a `scenario` path (relative to the matrix file) or a list
    /// of house `classes` for a synthetic configuration.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Matrix(format!("{}: {e}", path.display())))?;
        let file: MatrixFile = toml::from_str(&text).map_err(|e| ExperimentError::Matrix(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut configs = Vec::new();
        for e in file.config {
            let s = match (e.scenario, e.classes) {
                (Some(p), None) => load_scenario(&base.join(p))?,
                (None, Some(cs)) => {
                    let classes = cs
                        .iter()
                        .map(|c| c.parse::<DerClass>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(ExperimentError::Matrix)?;
                    ScenarioConfig::synthetic(e.id.clone(), &classes, GridMode::OffGrid, ControllerKind::Baseline, StartupMode::Wacsc)
                }
                _ => return Err(ExperimentError::Matrix(format!("config `{}` needs exactly one of scenario, classes", e.id))),
            };
            configs.push((e.id, s));
        }
        if configs.is_empty() {
            return Err(ExperimentError::Matrix("no [[config]] entries".into()));
        }
        Ok(Self::from_configs(configs))
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn scenario(&self, case: &Case) -> ScenarioConfig<T> {
        let (_, base) = self.configs.iter().find(|(id, _)| *id == case.config).expect("case refers to a matrix config");
        case.apply(base)
    }

    /// Overrides the horizon of every configuration.
    pub fn set_horizon(&mut self, steps: usize) {
        for (_, s) in &mut self.configs {
            s.horizon_steps = steps;
        }
    }
}

#[derive(Debug)]
pub struct CaseResult<T> {
    pub case: Case,
    pub outcome: Result<(Trace<T>, MetricsReport), String>,
}

impl<T> CaseResult<T> {
    pub fn status(&self) -> String {
        match &self.outcome {
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        }
    }
}

pub fn run_case<T: Scalar>(matrix: &CaseMatrix<T>, case: &Case, seed: u64) -> Result<(Trace<T>, MetricsReport), String> {
    let trace = CommunityEnv::new(matrix.scenario(case)).and_then(|mut e| e.run(seed)).map_err(|e| e.to_string())?;
    let report = compute(&trace).map_err(|e| e.to_string())?;
    Ok((trace, report))
}

/// Runs every case with at most `jobs` worker threads. Results keep matrix
/// order; failures are recorded per case.
pub fn sweep<T: Scalar>(matrix: &CaseMatrix<T>, seed: u64, jobs: usize) -> Vec<CaseResult<T>> {
    let n = matrix.len();
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<CaseResult<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= n {
            break;
        }
        let case = matrix.cases[i].clone();
        let outcome = run_case(matrix, &case, seed);
        *slots[i].lock().expect("slot") = Some(CaseResult { case, outcome });
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            s.spawn(worker);
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot").expect("case ran")).collect()
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub repetitions: usize,
    pub steps_per_episode: usize,
    /// Statistics over every step of every timed repetition.
    pub timing: TimingStats,
    pub episode_ms: Vec<f64>,
    pub warmup: Duration,
}

/// One untimed warm-up episode, then `repetitions` timed episodes.
pub fn bench<T: Scalar>(scenario: &ScenarioConfig<T>, seed: u64, repetitions: usize) -> Result<BenchReport, ExperimentError> {
    if repetitions < 3 {
        return Err(ExperimentError::TooFewRepetitions(repetitions));
    }
    let mut env = CommunityEnv::new(scenario.clone())?;
    let t0 = Instant::now();
    env.run(seed)?;
    let warmup = t0.elapsed();
    let mut all = Vec::with_capacity(repetitions * scenario.horizon_steps);
    let mut episode_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = env.run(seed)?;
        episode_ms.push(t.step_ms.iter().sum());
        all.extend_from_slice(&t.step_ms);
    }
    Ok(BenchReport {
        repetitions,
        steps_per_episode: scenario.horizon_steps,
        timing: timing_stats(&all).expect("nonempty horizon"),
        episode_ms,
        warmup,
    })
}
