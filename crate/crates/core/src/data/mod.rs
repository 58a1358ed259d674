//! Disturbance inputs: weather and prioritized load demand per step.
//!
//! Two sources are supported: NSRDB / Pecan Street style CSV files
//! ([`weather`], [`loads`]) and a seeded synthetic generator ([`synth`]).
//! Loads are stored as desired energy per step (kWh) for each of the eight
//! priority groups.

pub mod loads;
pub mod synth;
pub mod weather;

use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, TimeDelta};
use thiserror::Error;

use crate::config::{DisturbanceSource, ScenarioConfig, N_PRIORITIES};
use crate::scalar::Scalar;

pub use loads::{default_circuit_mapping, load_pecan_csv, CircuitMapping, IngestWarnings, LoadData, LoadProfile};
pub use synth::{synth_disturbances, SynthSpec};
pub use weather::{load_weather_csv, WeatherOptions};

/// Desired (or served) energy of the eight priority groups, P1 first.
pub type PriorityEnergies<T> = [T; N_PRIORITIES];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{what} file not found: {path}")]
    NotFound { what: &'static str, path: PathBuf },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}, line {line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("native resolution coarser than target ({native_min} min > {target_min} min); pass allow_upsample to interpolate")]
    CoarserThanTarget { native_min: f64, target_min: f64 },
    #[error("target step {target_min} min is not an integer multiple of the native step {native_min} min")]
    NotMultiple { native_min: f64, target_min: f64 },
    #[error("disturbance shorter than horizon: {available} steps available, {horizon} required")]
    TooShort { available: usize, horizon: usize },
    #[error("weather and load series are misaligned: {0}")]
    Misaligned(String),
    #[error("circuit mapping: {0}")]
    Mapping(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// Weather disturbance on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries<T> {
    pub timestamps: Vec<NaiveDateTime>,
    /// Global horizontal irradiance, W/m².
    pub ghi: Vec<T>,
    /// Ambient temperature, °C.
    pub t_ambient: Vec<T>,
    /// Wind speed, m/s.
    pub wind_speed: Vec<T>,
}

impl<T: Scalar> WeatherSeries<T> {
    pub fn len(&self) -> usize {
        self.ghi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ghi.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.timestamps.truncate(n);
        self.ghi.truncate(n);
        self.t_ambient.truncate(n);
        self.wind_speed.truncate(n);
    }

    /// Checks the series invariants: nonnegative irradiance and wind, equal
    /// lengths, uniform spacing of `dt_hours`.
    pub fn check(&self, dt_hours: f64) -> Result<(), String> {
        let n = self.ghi.len();
        if self.t_ambient.len() != n || self.wind_speed.len() != n || self.timestamps.len() != n {
            return Err("weather arrays have unequal lengths".into());
        }
        if let Some(i) = self.ghi.iter().position(|g| !(*g >= T::zero())) {
            return Err(format!("negative or NaN GHI at step {i}"));
        }
        if let Some(i) = self.wind_speed.iter().position(|w| !(*w >= T::zero())) {
            return Err(format!("negative or NaN wind speed at step {i}"));
        }
        let step = step_delta(dt_hours).ok_or("step is not a whole number of seconds")?;
        if let Some(i) = self.timestamps.windows(2).position(|w| w[1] - w[0] != step) {
            return Err(format!("non-uniform spacing after step {i}"));
        }
        Ok(())
    }
}

/// Desired prioritized load energy, step-major: `steps × houses × 8`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries<T> {
    n_houses: usize,
    data: Vec<PriorityEnergies<T>>,
}

impl<T: Scalar> LoadSeries<T> {
    pub fn new(n_houses: usize, data: Vec<PriorityEnergies<T>>) -> Self {
        assert!(n_houses > 0, "load series needs at least one house");
        assert_eq!(data.len() % n_houses, 0, "ragged load series");
        LoadSeries { n_houses, data }
    }

    /// Builds the series from per-house step vectors of equal length.
    pub fn from_houses(per_house: &[&[PriorityEnergies<T>]]) -> Self {
        let n_houses = per_house.len();
        let steps = per_house.iter().map(|h| h.len()).min().unwrap_or(0);
        let mut data = Vec::with_capacity(steps * n_houses);
        for k in 0..steps {
            for h in per_house {
                data.push(h[k]);
            }
        }
        LoadSeries::new(n_houses, data)
    }

    pub fn n_houses(&self) -> usize {
        self.n_houses
    }

    pub fn steps(&self) -> usize {
        self.data.len() / self.n_houses
    }

    pub fn at(&self, step: usize, house: usize) -> &PriorityEnergies<T> {
        &self.data[step * self.n_houses + house]
    }

    /// All houses' desired loads at one step.
    pub fn step(&self, step: usize) -> &[PriorityEnergies<T>] {
        &self.data[step * self.n_houses..(step + 1) * self.n_houses]
    }

    pub fn truncate(&mut self, steps: usize) {
        self.data.truncate(steps * self.n_houses);
    }

    pub fn total(&self) -> T {
        self.data.iter().flat_map(|e| e.iter().copied()).sum()
    }
}

/// Weather and loads cut to a scenario's horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbances<T> {
    pub weather: WeatherSeries<T>,
    pub loads: LoadSeries<T>,
    pub warnings: IngestWarnings,
}

/// Loads the scenario's disturbances and trims them to its horizon. Shorter
/// inputs are an error; longer inputs are cut.
pub fn load_disturbances<T: Scalar>(cfg: &ScenarioConfig<T>, seed: u64) -> Result<Disturbances<T>, DataError> {
    let dt = cfg.dt_hours.as_f64();
    let n_houses = cfg.houses.len();
    let (mut weather, mut loads, warnings) = match &cfg.disturbances {
        DisturbanceSource::Synthetic(spec) => {
            let (w, l) = synth_disturbances(spec, n_houses, dt, seed)?;
            (w, l, IngestWarnings::default())
        }
        DisturbanceSource::Files(files) => {
            let weather = load_weather_csv::<T>(
                &cfg.resolve_path(&files.weather),
                dt,
                WeatherOptions {
                    allow_upsample: files.allow_upsample,
                },
            )?;
            let mapping = match &files.circuit_map {
                Some(p) => CircuitMapping::load(&cfg.resolve_path(p))?,
                None => default_circuit_mapping(),
            };
            let data = load_pecan_csv::<T>(&cfg.resolve_path(&files.loads), &mapping, dt)?;
            if let (Some(w0), Some(l0)) = (weather.timestamps.first(), data.timestamps.first()) {
                if w0 != l0 {
                    return Err(DataError::Misaligned(format!("weather starts {w0}, loads start {l0}")));
                }
            }
            let loads = data.assign(cfg)?;
            (weather, loads, data.warnings)
        }
    };
    let available = weather.len().min(loads.steps());
    if available < cfg.horizon_steps {
        return Err(DataError::TooShort {
            available,
            horizon: cfg.horizon_steps,
        });
    }
    weather.truncate(cfg.horizon_steps);
    loads.truncate(cfg.horizon_steps);
    Ok(Disturbances {
        weather,
        loads,
        warnings,
    })
}

/// Step length rounded to whole seconds; tolerates f32 representation error.
pub(crate) fn step_delta(dt_hours: f64) -> Option<TimeDelta> {
    let secs = dt_hours * 3600.0;
    let rounded = secs.round();
    ((secs - rounded).abs() < 1e-3 && rounded > 0.0).then(|| TimeDelta::seconds(rounded as i64))
}

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    const NAIVE: &[&str] = &[
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    for f in NAIVE {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Some(t);
        }
    }
    // Offsets are dropped: timestamps are treated as local wall-clock time.
    for f in ["%Y-%m-%dT%H:%M:%S%#z", "%Y-%m-%d %H:%M:%S%#z"] {
        if let Ok(t) = chrono::DateTime::parse_from_str(s, f) {
            return Some(t.naive_local());
        }
    }
    None
}

/// Circuit column used for each priority when writing load files.
pub const WRITE_COLUMNS: [&str; N_PRIORITIES] = [
    "refrigerator1",
    "lights_plugs1",
    "microwave1",
    "bathroom1",
    "waterheater1",
    "clotheswasher1",
    "drye1",
    "car1",
];

/// Writes `weather.csv` and `loads.csv` into `dir` in layouts the loaders
/// read back: ISO timestamps, and one average-power column per priority
/// (named by [`WRITE_COLUMNS`]) with house `i` under `dataid = ids[i]`.
pub fn write_disturbance_csv<T: Scalar>(d: &Disturbances<T>, ids: &[String], dt_hours: f64, dir: &Path) -> Result<(PathBuf, PathBuf), DataError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| DataError::Malformed {
            path: path.clone(),
            line: 0,
            message: e.to_string(),
        }
    };
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let fmt = |t: &NaiveDateTime| t.format("%Y-%m-%dT%H:%M:%S").to_string();
    let wp = dir.join("weather.csv");
    let mut w = csv::Writer::from_path(&wp).map_err(io(&wp))?;
    w.write_record(["timestamp", "GHI", "Temperature", "Wind Speed"]).map_err(io(&wp))?;
    let ws = &d.weather;
    for k in 0..ws.len() {
        w.write_record([fmt(&ws.timestamps[k]), ws.ghi[k].to_string(), ws.t_ambient[k].to_string(), ws.wind_speed[k].to_string()])
            .map_err(io(&wp))?;
    }
    w.flush().map_err(|source| DataError::Io { path: wp.clone(), source })?;

    let lp = dir.join("loads.csv");
    let mut l = csv::Writer::from_path(&lp).map_err(io(&lp))?;
    let mut header = vec!["localminute", "dataid"];
    header.extend(WRITE_COLUMNS);
    l.write_record(&header).map_err(io(&lp))?;
    let dt = T::lit(dt_hours);
    for (i, id) in ids.iter().enumerate().take(d.loads.n_houses()) {
        for k in 0..d.loads.steps() {
            let mut row = vec![fmt(&ws.timestamps[k]), id.clone()];
            row.extend(d.loads.at(k, i).iter().map(|e| (*e / dt).to_string()));
            l.write_record(&row).map_err(io(&lp))?;
        }
    }
    l.flush().map_err(|source| DataError::Io { path: lp.clone(), source })?;
    Ok((wp, lp))
}

/// Lowercased header with any `(unit)` suffix removed and `_` as space.
pub(crate) fn normalize_header(h: &str) -> String {
    let base = h.split('(').next().unwrap_or(h);
    base.trim().to_ascii_lowercase().replace('_', " ")
}

pub(crate) fn open(path: &Path, what: &'static str) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::NotFound {
                what,
                path: path.to_path_buf(),
            }
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}
