//! Pecan Street style circuit-load ingestion.
//!
//! The CSV carries one timestamp column (`localminute`, `local_15min` or
//! `timestamp`), an optional `dataid` column separating houses, and one
//! average-power column (kW) per circuit. Each row's power is held constant
//! until the next native timestamp and integrated exactly over every
//! simulation step, so any native resolution works. Circuits are summed into
//! priority groups through a [`CircuitMapping`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use serde::Deserialize;

use super::{open, parse_timestamp, step_delta, DataError, LoadSeries, PriorityEnergies};
use crate::config::{ScenarioConfig, N_PRIORITIES};
use crate::scalar::Scalar;

/// Readings in `(-SENSOR_NOISE_KW, 0)` are clamped to zero.
pub const SENSOR_NOISE_KW: f64 = 0.01;

const DEFAULT_MAP: &str = include_str!("../../data/default_circuit_map.toml");
const TIME_COLUMNS: &[&str] = &["localminute", "local_15min", "timestamp", "time", "datetime"];

/// Circuit column → priority group (0 = P1).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CircuitMapping {
    columns: BTreeMap<String, usize>,
    ignore: BTreeSet<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingFile {
    #[serde(default)]
    ignore: Vec<String>,
    priorities: BTreeMap<String, Vec<String>>,
}

impl CircuitMapping {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_toml_str(&open(path, "circuit map")?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let file: MappingFile = toml::from_str(text).map_err(|e| DataError::Mapping(e.to_string()))?;
        let mut m = CircuitMapping::default();
        for (level, cols) in file.priorities {
            let j = level
                .strip_prefix('P')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|n| (1..=N_PRIORITIES).contains(n))
                .ok_or_else(|| DataError::Mapping(format!("unknown priority `{level}` (expected P1..P8)")))?;
            for col in cols {
                m.insert(&col, j - 1)?;
            }
        }
        for col in file.ignore {
            let key = circuit_key(&col);
            if m.columns.contains_key(&key) {
                return Err(DataError::Mapping(format!("`{col}` is both mapped and ignored")));
            }
            m.ignore.insert(key);
        }
        Ok(m)
    }

    /// Maps `column` to priority index `priority` (0 = P1).
    pub fn insert(&mut self, column: &str, priority: usize) -> Result<(), DataError> {
        assert!(priority < N_PRIORITIES, "priority index out of range");
        let key = circuit_key(column);
        if let Some(prev) = self.columns.insert(key, priority) {
            return Err(DataError::Mapping(format!(
                "`{column}` mapped to both P{} and P{}",
                prev + 1,
                priority + 1
            )));
        }
        Ok(())
    }

    pub fn priority_of(&self, column: &str) -> Option<usize> {
        self.columns.get(&circuit_key(column)).copied()
    }

    pub fn is_ignored(&self, column: &str) -> bool {
        self.ignore.contains(&circuit_key(column))
    }

    pub fn columns_of(&self, priority: usize) -> impl Iterator<Item = &str> {
        self.columns.iter().filter(move |(_, p)| **p == priority).map(|(c, _)| c.as_str())
    }
}

/// The shipped default grouping of common Pecan Street circuits.
pub fn default_circuit_mapping() -> CircuitMapping {
    CircuitMapping::from_toml_str(DEFAULT_MAP).expect("bundled circuit map parses")
}

fn circuit_key(s: &str) -> String {
    s.trim().to_ascii_lowercase()
}

/// Non-fatal irregularities seen during ingestion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestWarnings {
    /// Small negative readings clamped to zero.
    pub clamped_negatives: usize,
    /// Empty cells read as zero.
    pub empty_cells: usize,
    /// Columns neither mapped nor ignored.
    pub unmapped_columns: Vec<String>,
    /// Priority groups with no mapped column in the file (0 = P1).
    pub empty_priorities: Vec<usize>,
}

impl IngestWarnings {
    pub fn is_empty(&self) -> bool {
        *self == IngestWarnings::default()
    }
}

/// Per-step priority energies of one `dataid`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile<T> {
    pub id: String,
    pub energies: Vec<PriorityEnergies<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadData<T> {
    /// Start of each simulation step.
    pub timestamps: Vec<NaiveDateTime>,
    pub profiles: Vec<LoadProfile<T>>,
    pub warnings: IngestWarnings,
}

impl<T: Scalar> LoadData<T> {
    /// Assigns a profile to every house: by `load_profile` id when given,
    /// otherwise house `i` takes profile `i mod n_profiles`.
    pub fn assign(&self, cfg: &ScenarioConfig<T>) -> Result<LoadSeries<T>, DataError> {
        let mut chosen = Vec::with_capacity(cfg.houses.len());
        for (i, h) in cfg.houses.iter().enumerate() {
            let p = match &h.load_profile {
                Some(id) => self
                    .profiles
                    .iter()
                    .find(|p| &p.id == id)
                    .ok_or_else(|| DataError::Mapping(format!("house `{}`: load profile `{id}` not in loads file", h.id)))?,
                None => &self.profiles[i % self.profiles.len()],
            };
            chosen.push(p.energies.as_slice());
        }
        Ok(LoadSeries::from_houses(&chosen))
    }
}

struct RawProfile {
    id: String,
    times: Vec<NaiveDateTime>,
    lines: Vec<usize>,
    kw: Vec<[f64; N_PRIORITIES]>,
}

pub fn load_pecan_csv<T: Scalar>(path: &Path, mapping: &CircuitMapping, dt_hours: f64) -> Result<LoadData<T>, DataError> {
    let text = open(path, "loads")?;
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
    let csv_err = |e: csv::Error| DataError::Malformed {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    };
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(circuit_key).collect();
    let time_col = header
        .iter()
        .position(|h| TIME_COLUMNS.contains(&h.as_str()))
        .ok_or_else(|| DataError::MissingColumn {
            path: path.to_path_buf(),
            column: "localminute".into(),
        })?;
    let id_col = header.iter().position(|h| h == "dataid");

    let mut warnings = IngestWarnings::default();
    let mut circuits: Vec<(usize, usize)> = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if c == time_col || Some(c) == id_col {
            continue;
        }
        match mapping.priority_of(name) {
            Some(p) => circuits.push((c, p)),
            None if mapping.is_ignored(name) => {}
            None => warnings.unmapped_columns.push(name.clone()),
        }
    }
    warnings.empty_priorities = (0..N_PRIORITIES).filter(|j| !circuits.iter().any(|(_, p)| p == j)).collect();

    let mut profiles: Vec<RawProfile> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        let malformed = |message: String| DataError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let t = parse_timestamp(&rec[time_col]).ok_or_else(|| malformed(format!("unparseable timestamp `{}`", &rec[time_col])))?;
        let id = id_col.map_or_else(|| "default".to_string(), |c| rec[c].trim().to_string());
        let mut kw = [0.0; N_PRIORITIES];
        for &(c, p) in &circuits {
            let cell = rec[c].trim();
            if cell.is_empty() {
                warnings.empty_cells += 1;
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| malformed(format!("bad value `{cell}` in `{}`", header[c])))?;
            if !v.is_finite() {
                return Err(malformed(format!("non-finite value in `{}`", header[c])));
            }
            if v < 0.0 {
                if v > -SENSOR_NOISE_KW {
                    warnings.clamped_negatives += 1;
                    continue;
                }
                return Err(malformed(format!("negative power {v} kW in `{}`", header[c])));
            }
            kw[p] += v;
        }
        let prof = match profiles.iter_mut().position(|p| p.id == id) {
            Some(k) => &mut profiles[k],
            None => {
                profiles.push(RawProfile {
                    id,
                    times: Vec::new(),
                    lines: Vec::new(),
                    kw: Vec::new(),
                });
                profiles.last_mut().expect("just pushed")
            }
        };
        prof.times.push(t);
        prof.lines.push(line);
        prof.kw.push(kw);
    }
    if profiles.is_empty() {
        return Err(DataError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: "no data rows".into(),
        });
    }

    let target = step_delta(dt_hours).ok_or_else(|| DataError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        message: format!("dt_hours {dt_hours} is not a whole number of seconds"),
    })?;
    let mut out = Vec::with_capacity(profiles.len());
    let start = profiles[0].times[0];
    for p in &profiles {
        if p.times[0] != start {
            return Err(DataError::Misaligned(format!(
                "profile `{}` starts {}, profile `{}` starts {start}",
                p.id, p.times[0], profiles[0].id
            )));
        }
        let native = native_step(path, p)?;
        out.push(LoadProfile {
            id: p.id.clone(),
            energies: integrate(&p.kw, native, target)
                .into_iter()
                .map(|e| e.map(T::lit))
                .collect(),
        });
    }
    let steps = out.iter().map(|p| p.energies.len()).min().unwrap_or(0);
    for p in &mut out {
        p.energies.truncate(steps);
    }
    Ok(LoadData {
        timestamps: (0..steps).map(|k| start + target * k as i32).collect(),
        profiles: out,
        warnings,
    })
}

fn native_step(path: &Path, p: &RawProfile) -> Result<TimeDelta, DataError> {
    let err = |i: usize, message: String| DataError::Malformed {
        path: path.to_path_buf(),
        line: p.lines[i],
        message,
    };
    if p.times.len() < 2 {
        return Err(err(0, format!("profile `{}` has a single row", p.id)));
    }
    let step = p.times[1] - p.times[0];
    for i in 1..p.times.len() {
        let d = p.times[i] - p.times[i - 1];
        if d <= TimeDelta::zero() {
            return Err(err(i, format!("non-monotonic timestamp {} in profile `{}`", p.times[i], p.id)));
        }
        if d != step {
            return Err(err(i, format!("gap or irregular spacing ({} min) in profile `{}`", d.num_seconds() as f64 / 60.0, p.id)));
        }
    }
    Ok(step)
}

/// Energy (kWh) of a piecewise-constant power signal (kW) over consecutive
/// target steps. Steps not fully covered by data are dropped.
fn integrate(kw: &[[f64; N_PRIORITIES]], native: TimeDelta, target: TimeDelta) -> Vec<[f64; N_PRIORITIES]> {
    let ns = native.num_seconds();
    let ts = target.num_seconds();
    let total = ns * kw.len() as i64;
    let steps = (total / ts) as usize;
    let mut out = vec![[0.0; N_PRIORITIES]; steps];
    for (k, e) in out.iter_mut().enumerate() {
        let (a, b) = (k as i64 * ts, (k as i64 + 1) * ts);
        let first = (a / ns) as usize;
        let last = ((b - 1) / ns) as usize;
        for (i, p) in kw.iter().enumerate().take(last + 1).skip(first) {
            let lo = a.max(i as i64 * ns);
            let hi = b.min((i as i64 + 1) * ns);
            let h = (hi - lo) as f64 / 3600.0;
            for j in 0..N_PRIORITIES {
                e[j] += p[j] * h;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const DT: f64 = 1.0 / 6.0;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn rows(minutes: i64, n: usize, cols: &str, row: impl Fn(usize) -> String) -> String {
        let t0 = chrono::NaiveDate::from_ymd_opt(2017, 9, 11).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let mut s = format!("localminute,{cols}\n");
        for i in 0..n {
            let t = t0 + TimeDelta::minutes(minutes * i as i64);
            s.push_str(&format!("{},{}\n", t.format("%Y-%m-%d %H:%M:%S-05"), row(i)));
        }
        s
    }

    #[test]
    fn constant_fridge_is_a_fifth_kwh_per_step() {
        let f = write(&rows(1, 60, "refrigerator1,air1", |_| "1.2,3.0".into()));
        let d: LoadData<f64> = load_pecan_csv(f.path(), &default_circuit_mapping(), DT).unwrap();
        assert_eq!(d.profiles.len(), 1);
        assert_eq!(d.profiles[0].energies.len(), 6);
        for e in &d.profiles[0].energies {
            assert!((e[0] - 0.2).abs() < 1e-12);
            assert!(e[1..].iter().all(|x| *x == 0.0));
        }
        assert!(d.warnings.unmapped_columns.is_empty());
        assert_eq!(d.warnings.empty_priorities, (1..8).collect::<Vec<_>>());
    }

    #[test]
    fn all_zero_circuits_give_zero_loads() {
        let f = write(&rows(1, 20, "refrigerator1,car1", |_| "0,0".into()));
        let d: LoadData<f64> = load_pecan_csv(f.path(), &default_circuit_mapping(), DT).unwrap();
        assert!(d.profiles[0].energies.iter().flatten().all(|e| *e == 0.0));
    }

    #[test]
    fn small_negative_clamped_large_negative_rejected() {
        let f = write(&rows(1, 10, "refrigerator1", |i| if i == 3 { "-0.005".into() } else { "0.6".into() }));
        let d: LoadData<f64> = load_pecan_csv(f.path(), &default_circuit_mapping(), DT).unwrap();
        assert_eq!(d.warnings.clamped_negatives, 1);
        assert!((d.profiles[0].energies[0][0] - 0.6 * 9.0 / 60.0).abs() < 1e-12);

        let f = write(&rows(1, 10, "refrigerator1", |i| if i == 3 { "-0.5".into() } else { "0.6".into() }));
        let err = load_pecan_csv::<f64>(f.path(), &default_circuit_mapping(), DT).unwrap_err();
        assert!(err.to_string().contains("line 5"), "{err}");
    }

    #[test]
    fn coarse_native_integrates_exactly() {
        // 15-min data on a 10-min grid: step 1 spans halves of two rows.
        let f = write(&rows(15, 4, "refrigerator1", |i| format!("{}", (i + 1) as f64)));
        let d: LoadData<f64> = load_pecan_csv(f.path(), &default_circuit_mapping(), DT).unwrap();
        let e: Vec<f64> = d.profiles[0].energies.iter().map(|e| e[0]).collect();
        assert_eq!(e.len(), 6);
        let expected = [1.0 / 6.0, 1.0 / 12.0 + 2.0 / 12.0, 2.0 / 6.0, 3.0 / 6.0, 3.0 / 12.0 + 4.0 / 12.0, 4.0 / 6.0];
        for (a, b) in e.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dataid_splits_profiles_and_assigns_round_robin() {
        let mut s = String::from("dataid,localminute,refrigerator1,mystery\n");
        for id in ["26", "59"] {
            for m in 0..10 {
                s.push_str(&format!("{id},2017-09-11 00:{m:02}:00,{},1\n", if id == "26" { 0.6 } else { 1.2 }));
            }
        }
        let f = write(&s);
        let d: LoadData<f64> = load_pecan_csv(f.path(), &default_circuit_mapping(), DT).unwrap();
        assert_eq!(d.profiles.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(), ["26", "59"]);
        assert_eq!(d.warnings.unmapped_columns, ["mystery"]);

        use crate::config::{ControllerKind, DerClass, GridMode, ScenarioConfig, StartupMode};
        let mut cfg = ScenarioConfig::<f64>::synthetic(
            "t",
            &[DerClass::NoDer, DerClass::NoDer, DerClass::NoDer],
            GridMode::OnGrid,
            ControllerKind::Baseline,
            StartupMode::Woacsc,
        );
        cfg.houses[2].load_profile = Some("59".into());
        let l = d.assign(&cfg).unwrap();
        assert!((l.at(0, 0)[0] - 0.1).abs() < 1e-12);
        assert!((l.at(0, 1)[0] - 0.2).abs() < 1e-12);
        assert!((l.at(0, 2)[0] - 0.2).abs() < 1e-12);

        cfg.houses[0].load_profile = Some("404".into());
        assert!(d.assign(&cfg).is_err());
    }

    #[test]
    fn mapping_rejects_duplicates_and_bad_levels() {
        assert!(CircuitMapping::from_toml_str("[priorities]\nP1=[\"a\"]\nP2=[\"A\"]\n").is_err());
        assert!(CircuitMapping::from_toml_str("[priorities]\nP9=[\"a\"]\n").is_err());
        assert!(CircuitMapping::from_toml_str("ignore=[\"a\"]\n[priorities]\nP1=[\"a\"]\n").is_err());
        let m = default_circuit_mapping();
        assert_eq!(m.priority_of("Refrigerator1"), Some(0));
        assert_eq!(m.priority_of("car1"), Some(7));
        assert!(m.is_ignored("air1"));
        assert_eq!(m.columns_of(5).count(), 3);
    }

    #[test]
    fn gaps_are_reported_with_line() {
        let s = "localminute,refrigerator1\n2017-09-11 00:00:00,1\n2017-09-11 00:01:00,1\n2017-09-11 00:05:00,1\n";
        let f = write(s);
        let err = load_pecan_csv::<f64>(f.path(), &default_circuit_mapping(), DT).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }
}
