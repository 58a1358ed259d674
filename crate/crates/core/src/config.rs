//! Scenario description: community composition, device parameters, operating
//! modes and horizon, plus the TOML scenario file format.
//!
//! A scenario file is TOML. Every parameter table is optional; missing keys
//! fall back first to the file's `[defaults.*]` tables and then to
//! [`default_parameters`]. See `docs/scenario-format.md` for the full schema.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::data::synth::SynthSpec;
use crate::scalar::Scalar;

/// Number of prioritized non-AC load groups per house (P1..P8).
pub const N_PRIORITIES: usize = 8;

/// Default simulation step: 10 minutes.
pub const DEFAULT_DT_HOURS: f64 = 1.0 / 6.0;

/// Default horizon: seven days of 10-minute steps.
pub const DEFAULT_HORIZON_STEPS: usize = 7 * 144;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Which distributed energy resources a house owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DerClass {
    #[serde(rename = "pv_battery")]
    PvAndBattery,
    #[serde(rename = "battery")]
    BatteryOnly,
    #[serde(rename = "pv")]
    PvOnly,
    #[serde(rename = "none")]
    NoDer,
}

impl DerClass {
    pub const ALL: [DerClass; 4] = [
        DerClass::PvAndBattery,
        DerClass::BatteryOnly,
        DerClass::PvOnly,
        DerClass::NoDer,
    ];

    pub fn has_pv(self) -> bool {
        matches!(self, DerClass::PvAndBattery | DerClass::PvOnly)
    }

    pub fn has_battery(self) -> bool {
        matches!(self, DerClass::PvAndBattery | DerClass::BatteryOnly)
    }

    pub fn label(self) -> &'static str {
        match self {
            DerClass::PvAndBattery => "PV+Bat",
            DerClass::BatteryOnly => "Bat",
            DerClass::PvOnly => "PV",
            DerClass::NoDer => "No-DER",
        }
    }

    fn key(self) -> &'static str {
        match self {
            DerClass::PvAndBattery => "pv_battery",
            DerClass::BatteryOnly => "battery",
            DerClass::PvOnly => "pv",
            DerClass::NoDer => "none",
        }
    }
}

impl FromStr for DerClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pv_battery" | "pv+bat" | "pvbat" => Ok(DerClass::PvAndBattery),
            "battery" | "bat" => Ok(DerClass::BatteryOnly),
            "pv" => Ok(DerClass::PvOnly),
            "none" | "no_der" | "noder" => Ok(DerClass::NoDer),
            other => Err(format!("unknown DER class `{other}`")),
        }
    }
}

impl fmt::Display for DerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    OffGrid,
    OnGrid,
}

impl FromStr for GridMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "off" | "off_grid" | "offgrid" => Ok(GridMode::OffGrid),
            "on" | "on_grid" | "ongrid" => Ok(GridMode::OnGrid),
            other => Err(format!("unknown grid mode `{other}` (expected on|off)")),
        }
    }
}

impl fmt::Display for GridMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridMode::OffGrid => "Off-Grid",
            GridMode::OnGrid => "On-Grid",
        })
    }
}

/// With or without the AC startup (inrush) power constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartupMode {
    Wacsc,
    Woacsc,
}

impl FromStr for StartupMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wacsc" => Ok(StartupMode::Wacsc),
            "woacsc" => Ok(StartupMode::Woacsc),
            other => Err(format!("unknown startup mode `{other}` (expected wacsc|woacsc)")),
        }
    }
}

impl fmt::Display for StartupMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StartupMode::Wacsc => "WACSC",
            StartupMode::Woacsc => "WOACSC",
        })
    }
}

/// Control policy selected for an episode. `External` names a plug-in
/// registered with the engine's controller registry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ControllerKind {
    Baseline,
    RuleBased,
    External(String),
}

impl ControllerKind {
    pub fn name(&self) -> &str {
        match self {
            ControllerKind::Baseline => "baseline",
            ControllerKind::RuleBased => "rulebased",
            ControllerKind::External(name) => name,
        }
    }

    pub fn short(&self) -> &str {
        match self {
            ControllerKind::Baseline => "BL",
            ControllerKind::RuleBased => "RB",
            ControllerKind::External(name) => name,
        }
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err("empty controller name".into());
        }
        Ok(match trimmed.to_ascii_lowercase().as_str() {
            "baseline" | "bl" => ControllerKind::Baseline,
            "rulebased" | "rule_based" | "rule-based" | "rb" => ControllerKind::RuleBased,
            _ => ControllerKind::External(trimmed.to_string()),
        })
    }
}

impl TryFrom<String> for ControllerKind {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ControllerKind> for String {
    fn from(value: ControllerKind) -> Self {
        value.name().to_string()
    }
}

/// First-order house thermal model coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalParams<T> {
    /// State retention per step (0 < a <= 1).
    pub a: T,
    /// Ambient coupling per step.
    pub d: T,
    pub cop: T,
    /// Rated electrical AC power, kW.
    pub p_ac_rated: T,
    /// Temperature change per step per kW of delivered thermal power (°C/kW).
    /// `1.0` applies the thermal power directly as a temperature increment.
    pub q_coeff: T,
}

impl<T: Scalar> ThermalParams<T> {
    /// Delivered thermal power `COP * P_rated`, kW.
    pub fn q_ac(&self) -> T {
        self.cop * self.p_ac_rated
    }

    /// Defaults for a given step: ~3 h free-running time constant, relaxation
    /// towards ambient (`d = 1 - a`), and a 2 °C/kW envelope resistance.
    pub fn defaults(dt_hours: T) -> Self {
        let a = (-dt_hours / T::lit(3.0)).exp();
        let d = T::one() - a;
        ThermalParams {
            a,
            d,
            cop: T::lit(3.0),
            p_ac_rated: T::lit(3.0),
            q_coeff: d * T::lit(2.0),
        }
    }

    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        let z = T::zero();
        if !(self.a > z && self.a <= T::one()) {
            return Err(ConfigError::invalid(field, "0 < a <= 1 violated"));
        }
        if !(self.d >= z) {
            return Err(ConfigError::invalid(field, "d >= 0 violated"));
        }
        if !(self.cop > z) {
            return Err(ConfigError::invalid(field, "cop > 0 violated"));
        }
        if !(self.p_ac_rated > z) {
            return Err(ConfigError::invalid(field, "p_ac_rated > 0 violated"));
        }
        if !(self.q_coeff >= z) {
            return Err(ConfigError::invalid(field, "q_coeff >= 0 violated"));
        }
        Ok(())
    }
}

/// Rooftop array described panel by panel; module temperature per Faiman.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvParams<T> {
    pub n_panels: u32,
    /// Rated power per panel, kW.
    pub p_panel_rated: T,
    /// Temperature coefficient of power, %/°C (negative for silicon).
    pub gamma_pct_per_degc: T,
    /// Standard-test-condition irradiance, W/m².
    pub g_std: T,
    /// Standard-test-condition cell temperature, °C.
    pub t_std: T,
    /// Constant heat-loss coefficient, W/m²·°C.
    pub u0: T,
    /// Wind heat-loss coefficient, W·s/m³·°C.
    pub u1: T,
    /// Use `u0 + u1 + wind` in the module-temperature denominator instead of
    /// `u0 + u1 * wind`.
    #[serde(default)]
    pub faiman_additive_wind: bool,
}

impl<T: Scalar> PvParams<T> {
    pub fn rated_kw(&self) -> T {
        T::lit(self.n_panels as f64) * self.p_panel_rated
    }

    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        let z = T::zero();
        if !(self.p_panel_rated > z) {
            return Err(ConfigError::invalid(field, "p_panel_rated > 0 violated"));
        }
        if !(self.g_std > z) {
            return Err(ConfigError::invalid(field, "g_std > 0 violated"));
        }
        if !(self.u0 > z) {
            return Err(ConfigError::invalid(field, "u0 > 0 violated"));
        }
        if !(self.u1 >= z) {
            return Err(ConfigError::invalid(field, "u1 >= 0 violated"));
        }
        if !self.gamma_pct_per_degc.is_finite() || !self.t_std.is_finite() {
            return Err(ConfigError::invalid(field, "gamma and t_std must be finite"));
        }
        Ok(())
    }
}

/// Energy-bucket battery. Caps are energies per simulation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryParams<T> {
    pub e_max: T,
    pub e_min: T,
    /// Charge cap, kWh per step.
    pub e_charge_cap: T,
    /// Discharge cap, kWh per step.
    pub e_discharge_cap: T,
    pub eta_c: T,
    pub eta_d: T,
}

impl<T: Scalar> BatteryParams<T> {
    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        let (z, one) = (T::zero(), T::one());
        if !(self.e_min >= z) {
            return Err(ConfigError::invalid(field, "0 <= e_min violated"));
        }
        if !(self.e_min < self.e_max) {
            return Err(ConfigError::invalid(field, "e_min < e_max violated"));
        }
        if !(self.e_charge_cap > z) {
            return Err(ConfigError::invalid(field, "e_charge_cap > 0 violated"));
        }
        if !(self.e_discharge_cap > z) {
            return Err(ConfigError::invalid(field, "e_discharge_cap > 0 violated"));
        }
        if !(self.eta_c > z && self.eta_c <= one) {
            return Err(ConfigError::invalid(field, "0 < eta_c <= 1 violated"));
        }
        if !(self.eta_d > z && self.eta_d <= one) {
            return Err(ConfigError::invalid(field, "0 < eta_d <= 1 violated"));
        }
        Ok(())
    }

    pub fn contains(&self, e_bat: T) -> bool {
        e_bat >= self.e_min && e_bat <= self.e_max
    }
}

/// Two-band hysteresis thermostat: inner band switches the AC, outer band
/// switches heating/cooling mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermostatParams<T> {
    pub t_ac_low: T,
    pub t_ac_high: T,
    pub t_mode_low: T,
    pub t_mode_high: T,
    /// Cool below `t_mode_low`, heat above `t_mode_high`, with the
    /// cooling-shaped AC band in both modes.
    #[serde(default)]
    pub inverted_mode_bands: bool,
}

impl<T: Scalar> ThermostatParams<T> {
    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        if !(self.t_mode_low < self.t_ac_low) {
            return Err(ConfigError::invalid(field, "t_mode_low < t_ac_low violated"));
        }
        if !(self.t_ac_low < self.t_ac_high) {
            return Err(ConfigError::invalid(field, "t_ac_low < t_ac_high violated"));
        }
        if !(self.t_ac_high < self.t_mode_high) {
            return Err(ConfigError::invalid(field, "t_ac_high < t_mode_high violated"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartupParams<T> {
    /// Startup voltage-dip factor.
    pub alpha_v: T,
    /// Locked-rotor current multiple, 3..=8.
    pub alpha_i: T,
    pub mode: StartupMode,
}

impl<T: Scalar> StartupParams<T> {
    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha_v >= T::zero() && self.alpha_v < T::one()) {
            return Err(ConfigError::invalid("startup", "0 <= alpha_v < 1 violated"));
        }
        if !(self.alpha_i >= T::lit(3.0) && self.alpha_i <= T::lit(8.0)) {
            return Err(ConfigError::invalid("startup", "alpha_i in [3, 8] violated"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct InitialState<T> {
    /// Indoor temperature at step 0, °C.
    pub t_house: T,
    /// Stored battery energy at step 0, kWh (battery houses only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_bat: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct HouseConfig<T> {
    pub id: String,
    pub class: DerClass,
    /// Load profile identifier (`dataid`) in the loads file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_profile: Option<String>,
    pub initial: InitialState<T>,
    pub thermal: ThermalParams<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pv: Option<PvParams<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<BatteryParams<T>>,
    pub thermostat: ThermostatParams<T>,
}

impl<T: Scalar> HouseConfig<T> {
    /// House with [`default_parameters`] for its DER class.
    pub fn with_defaults(id: impl Into<String>, class: DerClass, dt_hours: T) -> Self {
        let p = DefaultParameters::with_dt(dt_hours);
        let battery = class.has_battery().then_some(p.battery);
        HouseConfig {
            id: id.into(),
            class,
            load_profile: None,
            initial: InitialState {
                t_house: p.initial_t_house,
                e_bat: battery.map(|b| b.e_min + (b.e_max - b.e_min) * T::lit(0.5)),
            },
            thermal: p.thermal,
            pv: class.has_pv().then_some(p.pv),
            battery,
            thermostat: p.thermostat,
        }
    }

    fn validate(&self, idx: usize) -> Result<(), ConfigError> {
        let tag = format!("houses[{}:{}]", idx, self.id);
        self.thermal.validate(&format!("{tag}.thermal"))?;
        self.thermostat.validate(&format!("{tag}.thermostat"))?;
        match (self.class.has_pv(), &self.pv) {
            (true, Some(pv)) => pv.validate(&format!("{tag}.pv"))?,
            (true, None) => return Err(ConfigError::invalid(format!("{tag}.pv"), "missing for a PV house")),
            (false, Some(_)) => {
                return Err(ConfigError::invalid(
                    format!("{tag}.pv"),
                    format!("given for a `{}` house", self.class),
                ))
            }
            (false, None) => {}
        }
        match (self.class.has_battery(), &self.battery) {
            (true, Some(b)) => {
                b.validate(&format!("{tag}.battery"))?;
                let e0 = self.initial.e_bat.ok_or_else(|| {
                    ConfigError::invalid(format!("{tag}.initial.e_bat"), "missing for a battery house")
                })?;
                if !b.contains(e0) {
                    return Err(ConfigError::invalid(
                        format!("{tag}.initial.e_bat"),
                        "e_min <= e_bat <= e_max violated",
                    ));
                }
            }
            (true, None) => {
                return Err(ConfigError::invalid(format!("{tag}.battery"), "missing for a battery house"))
            }
            (false, Some(_)) => {
                return Err(ConfigError::invalid(
                    format!("{tag}.battery"),
                    format!("given for a `{}` house", self.class),
                ))
            }
            (false, None) => {}
        }
        if !self.initial.t_house.is_finite() {
            return Err(ConfigError::invalid(format!("{tag}.initial.t_house"), "must be finite"));
        }
        Ok(())
    }
}

/// Weather and load CSV inputs. Relative paths resolve against the
/// scenario file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    pub weather: PathBuf,
    pub loads: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuit_map: Option<PathBuf>,
    #[serde(default)]
    pub allow_upsample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound(deserialize = "T: Scalar"))]
pub enum DisturbanceSource<T> {
    Synthetic(SynthSpec<T>),
    Files(DataFiles),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ScenarioConfig<T> {
    pub name: String,
    pub grid_mode: GridMode,
    pub controller: ControllerKind,
    pub dt_hours: T,
    pub horizon_steps: usize,
    /// Default episode seed (the CLI's `--seed` overrides it).
    pub seed: u64,
    pub startup: StartupParams<T>,
    pub disturbances: DisturbanceSource<T>,
    pub houses: Vec<HouseConfig<T>>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Case-study parameter bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultParameters<T> {
    pub dt_hours: T,
    pub thermal: ThermalParams<T>,
    pub pv: PvParams<T>,
    pub battery: BatteryParams<T>,
    pub thermostat: ThermostatParams<T>,
    pub startup: StartupParams<T>,
    pub initial_t_house: T,
}

impl<T: Scalar> DefaultParameters<T> {
    pub fn with_dt(dt_hours: T) -> Self {
        DefaultParameters {
            dt_hours,
            thermal: ThermalParams::defaults(dt_hours),
            pv: PvParams {
                n_panels: 31,
                p_panel_rated: T::lit(0.325),
                gamma_pct_per_degc: T::lit(-0.35),
                g_std: T::lit(1000.0),
                t_std: T::lit(25.0),
                u0: T::lit(25.0),
                u1: T::lit(6.84),
                faiman_additive_wind: false,
            },
            battery: BatteryParams {
                e_max: T::lit(13.5),
                e_min: T::zero(),
                e_charge_cap: T::lit(5.0) * dt_hours,
                e_discharge_cap: T::lit(7.0) * dt_hours,
                eta_c: T::lit(0.95),
                eta_d: T::lit(0.95),
            },
            thermostat: ThermostatParams {
                t_ac_low: T::lit(23.0),
                t_ac_high: T::lit(25.0),
                t_mode_low: T::lit(18.0),
                t_mode_high: T::lit(30.0),
                inverted_mode_bands: false,
            },
            startup: StartupParams {
                alpha_v: T::lit(0.3),
                alpha_i: T::lit(5.0),
                mode: StartupMode::Wacsc,
            },
            initial_t_house: T::lit(24.0),
        }
    }
}

/// Case-study defaults at the 10-minute step.
pub fn default_parameters<T: Scalar>() -> DefaultParameters<T> {
    DefaultParameters::with_dt(T::lit(DEFAULT_DT_HOURS))
}

impl<T: Scalar> ScenarioConfig<T> {
    /// Scenario over synthetic disturbances with default parameters for each
    /// house class.
    pub fn synthetic(
        name: impl Into<String>,
        classes: &[DerClass],
        grid_mode: GridMode,
        controller: ControllerKind,
        startup_mode: StartupMode,
    ) -> Self {
        let dt = T::lit(DEFAULT_DT_HOURS);
        let mut startup = DefaultParameters::<T>::with_dt(dt).startup;
        startup.mode = startup_mode;
        let houses = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| HouseConfig::with_defaults(format!("h{}", i + 1), c, dt))
            .collect();
        ScenarioConfig {
            name: name.into(),
            grid_mode,
            controller,
            dt_hours: dt,
            horizon_steps: DEFAULT_HORIZON_STEPS,
            seed: 0,
            startup,
            disturbances: DisturbanceSource::Synthetic(SynthSpec::default()),
            houses,
            base_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon_steps < 1 {
            return Err(ConfigError::invalid("horizon_steps", "horizon_steps >= 1 violated"));
        }
        if !(self.dt_hours > T::zero() && self.dt_hours.is_finite()) {
            return Err(ConfigError::invalid("dt_hours", "dt_hours > 0 violated"));
        }
        if self.houses.is_empty() {
            return Err(ConfigError::invalid("houses", "at least one house required"));
        }
        if self.controller == ControllerKind::RuleBased && self.grid_mode != GridMode::OffGrid {
            return Err(ConfigError::invalid(
                "controller",
                "rulebased controller requires grid_mode = off_grid",
            ));
        }
        self.startup.validate()?;
        for (i, h) in self.houses.iter().enumerate() {
            if self.houses[..i].iter().any(|o| o.id == h.id) {
                return Err(ConfigError::invalid(format!("houses[{i}]"), format!("duplicate id `{}`", h.id)));
            }
            h.validate(i)?;
        }
        if let DisturbanceSource::Synthetic(spec) = &self.disturbances {
            spec.validate().map_err(|e| ConfigError::invalid("disturbances", e.to_string()))?;
        }
        Ok(())
    }

    /// Houses of a given class, in house order.
    pub fn houses_of(&self, class: DerClass) -> impl Iterator<Item = (usize, &HouseConfig<T>)> {
        self.houses.iter().enumerate().filter(move |(_, h)| h.class == class)
    }

    /// Resolves a data path relative to the scenario file's directory.
    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Serializes to the scenario file format with every parameter explicit.
    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = self.to_toml_string()?;
        fs::write(path, text).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Reads, resolves defaults for, and validates a scenario file.
pub fn load_scenario<T: Scalar>(path: &Path) -> Result<ScenarioConfig<T>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, path.parent())
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "name",
    "grid_mode",
    "controller",
    "dt_hours",
    "horizon_steps",
    "seed",
    "startup",
    "disturbances",
    "defaults",
    "houses",
];
const PARAM_SECTIONS: &[&str] = &["thermal", "pv", "battery", "thermostat"];

pub fn parse_scenario<T: Scalar>(text: &str, base_dir: Option<&Path>) -> Result<ScenarioConfig<T>, ConfigError> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    if let Some(key) = root.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
        return Err(ConfigError::Parse(format!("unknown top-level key `{key}`")));
    }

    let dt_hours = match root.get("dt_hours") {
        None => DEFAULT_DT_HOURS,
        Some(Value::Float(f)) => *f,
        Some(Value::Integer(i)) => *i as f64,
        Some(_) => return Err(ConfigError::Parse("dt_hours must be a number".into())),
    };
    let dt = T::lit(dt_hours);
    let defaults = DefaultParameters::<T>::with_dt(dt);

    let mut base = Table::new();
    base.insert("thermal".into(), to_value(&defaults.thermal)?);
    base.insert("pv".into(), to_value(&defaults.pv)?);
    base.insert("battery".into(), to_value(&defaults.battery)?);
    base.insert("thermostat".into(), to_value(&defaults.thermostat)?);
    let mut initial_base = Table::new();
    initial_base.insert("t_house".into(), to_value(&defaults.initial_t_house)?);
    if let Some(v) = root.get("defaults") {
        let tbl = as_table(v, "defaults")?;
        for (key, value) in tbl {
            if key == "initial" {
                overlay(&mut initial_base, as_table(value, "defaults.initial")?);
                continue;
            }
            if !PARAM_SECTIONS.contains(&key.as_str()) {
                return Err(ConfigError::Parse(format!("unknown section `defaults.{key}`")));
            }
            let slot = base.get_mut(key).and_then(Value::as_table_mut).expect("default section");
            overlay(slot, as_table(value, &format!("defaults.{key}"))?);
        }
    }

    let mut startup = as_table(&to_value(&defaults.startup)?, "startup")?.clone();
    if let Some(v) = root.get("startup") {
        overlay(&mut startup, as_table(v, "startup")?);
    }
    let startup: StartupParams<T> = from_value(Value::Table(startup), "startup")?;

    let houses_raw = match root.get("houses") {
        Some(Value::Array(items)) => items.as_slice(),
        Some(_) => return Err(ConfigError::Parse("`houses` must be an array of tables".into())),
        None => &[],
    };
    let mut houses = Vec::with_capacity(houses_raw.len());
    for (i, raw) in houses_raw.iter().enumerate() {
        houses.push(resolve_house::<T>(i, as_table(raw, "houses")?, &base, &initial_base)?);
    }

    let disturbances = match root.get("disturbances") {
        Some(v) => from_value(v.clone(), "disturbances")?,
        None => DisturbanceSource::Synthetic(SynthSpec::default()),
    };

    let cfg = ScenarioConfig {
        name: opt_from(&root, "name")?.unwrap_or_else(|| "scenario".to_string()),
        grid_mode: opt_from(&root, "grid_mode")?.unwrap_or(GridMode::OffGrid),
        controller: opt_from(&root, "controller")?.unwrap_or(ControllerKind::Baseline),
        dt_hours: dt,
        horizon_steps: opt_from(&root, "horizon_steps")?.unwrap_or(DEFAULT_HORIZON_STEPS),
        seed: opt_from(&root, "seed")?.unwrap_or(0),
        startup,
        disturbances,
        houses,
        base_dir: base_dir.map(Path::to_path_buf),
    };
    cfg.validate()?;
    Ok(cfg)
}

const HOUSE_KEYS: &[&str] = &[
    "id",
    "class",
    "load_profile",
    "initial",
    "thermal",
    "pv",
    "battery",
    "thermostat",
];

fn resolve_house<T: Scalar>(
    idx: usize,
    raw: &Table,
    base: &Table,
    initial_base: &Table,
) -> Result<HouseConfig<T>, ConfigError> {
    if let Some(key) = raw.keys().find(|k| !HOUSE_KEYS.contains(&k.as_str())) {
        return Err(ConfigError::Parse(format!("houses[{idx}]: unknown key `{key}`")));
    }
    let id: String = opt_from(raw, "id")?.unwrap_or_else(|| format!("h{}", idx + 1));
    let class: DerClass = opt_from(raw, "class")?
        .ok_or_else(|| ConfigError::Parse(format!("houses[{idx}]: missing `class`")))?;

    let section = |name: &str, present: bool| -> Result<Option<Value>, ConfigError> {
        let user = raw.get(name);
        if !present {
            return match user {
                Some(_) => Err(ConfigError::invalid(
                    format!("houses[{idx}:{id}].{name}"),
                    format!("given for a `{class}` house"),
                )),
                None => Ok(None),
            };
        }
        let mut merged = base[name].as_table().expect("default table").clone();
        if let Some(v) = user {
            overlay(&mut merged, as_table(v, &format!("houses[{idx}].{name}"))?);
        }
        Ok(Some(Value::Table(merged)))
    };
    let thermal = section("thermal", true)?.expect("thermal");
    let thermostat = section("thermostat", true)?.expect("thermostat");
    let pv = section("pv", class.has_pv())?;
    let battery = section("battery", class.has_battery())?;

    let thermal: ThermalParams<T> = from_value(thermal, &format!("houses[{idx}].thermal"))?;
    let thermostat: ThermostatParams<T> = from_value(thermostat, &format!("houses[{idx}].thermostat"))?;
    let pv: Option<PvParams<T>> = pv.map(|v| from_value(v, &format!("houses[{idx}].pv"))).transpose()?;
    let battery: Option<BatteryParams<T>> = battery
        .map(|v| from_value(v, &format!("houses[{idx}].battery")))
        .transpose()?;

    let mut initial = initial_base.clone();
    if let Some(v) = raw.get("initial") {
        overlay(&mut initial, as_table(v, &format!("houses[{idx}].initial"))?);
    }
    if class.has_battery() && !initial.contains_key("e_bat") {
        if let Some(b) = &battery {
            let half = b.e_min + (b.e_max - b.e_min) * T::lit(0.5);
            initial.insert("e_bat".into(), to_value(&half)?);
        }
    }
    let initial: InitialState<T> = from_value(Value::Table(initial), &format!("houses[{idx}].initial"))?;

    Ok(HouseConfig {
        id,
        class,
        load_profile: opt_from(raw, "load_profile")?,
        initial,
        thermal,
        pv,
        battery,
        thermostat,
    })
}

fn overlay(dst: &mut Table, src: &Table) {
    for (k, v) in src {
        match (dst.get_mut(k), v) {
            (Some(Value::Table(d)), Value::Table(s)) => overlay(d, s),
            _ => {
                dst.insert(k.clone(), v.clone());
            }
        }
    }
}

fn as_table<'a>(v: &'a Value, what: &str) -> Result<&'a Table, ConfigError> {
    v.as_table()
        .ok_or_else(|| ConfigError::Parse(format!("`{what}` must be a table")))
}

fn to_value<S: Serialize>(v: &S) -> Result<Value, ConfigError> {
    Value::try_from(v).map_err(|e| ConfigError::Parse(e.to_string()))
}

fn from_value<D: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<D, ConfigError> {
    v.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(format!("{what}: {e}")))
}

fn opt_from<D: serde::de::DeserializeOwned>(tbl: &Table, key: &str) -> Result<Option<D>, ConfigError> {
    tbl.get(key).map(|v| from_value(v.clone(), key)).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    const COMMUNITY: &str = r#"
name = "community"
grid_mode = "off_grid"
controller = "rulebased"

[startup]
mode = "wacsc"

[[houses]]
id = "a"
class = "pv_battery"

[[houses]]
id = "b"
class = "battery"

[[houses]]
id = "c"
class = "pv"

[[houses]]
id = "d"
class = "none"
"#;

    #[test]
    fn community_file_loads_four_houses() {
        let cfg: ScenarioConfig<f64> = parse_scenario(COMMUNITY, None).unwrap();
        assert_eq!(cfg.houses.len(), 4);
        assert_eq!(cfg.controller, ControllerKind::RuleBased);
        assert_eq!(cfg.startup.mode, StartupMode::Wacsc);
        assert_eq!(cfg.horizon_steps, 1008);
        for class in DerClass::ALL {
            assert_eq!(cfg.houses_of(class).count(), 1);
        }
        let c = &cfg.houses[2];
        assert!(c.battery.is_none() && c.initial.e_bat.is_none());
        assert_eq!(cfg.houses[0].initial.e_bat, Some(6.75));
    }

    #[test]
    fn inverted_ac_band_is_rejected() {
        let text = r#"
[[houses]]
class = "pv"
thermostat = { t_ac_low = 25.0, t_ac_high = 23.0 }
"#;
        let err = parse_scenario::<f64>(text, None).unwrap_err();
        assert!(err.to_string().contains("t_ac_low < t_ac_high violated"), "{err}");
    }

    #[test]
    fn rule_based_on_grid_is_rejected() {
        let text = "grid_mode = \"on_grid\"\ncontroller = \"rulebased\"\n[[houses]]\nclass = \"none\"\n";
        let err = parse_scenario::<f64>(text, None).unwrap_err();
        assert!(err.to_string().contains("requires grid_mode = off_grid"), "{err}");
    }

    #[test]
    fn battery_section_on_pv_house_is_rejected() {
        let text = "[[houses]]\nclass = \"pv\"\nbattery = { e_max = 10.0 }\n";
        let err = parse_scenario::<f64>(text, None).unwrap_err();
        assert!(err.to_string().contains("battery"), "{err}");
    }

    #[test]
    fn initial_energy_outside_bounds_is_rejected() {
        let text = "[[houses]]\nclass = \"battery\"\ninitial = { e_bat = 20.0 }\n";
        let err = parse_scenario::<f64>(text, None).unwrap_err();
        assert!(err.to_string().contains("e_min <= e_bat <= e_max"), "{err}");
    }

    #[test]
    fn malformed_file_is_parse_error() {
        let err = parse_scenario::<f64>("houses = [ {", None).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        let err = parse_scenario::<f64>("bogus = 1", None).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn defaults_and_overrides_layer() {
        let text = r#"
[defaults.pv]
n_panels = 10
[[houses]]
class = "pv"
[[houses]]
class = "pv"
pv = { n_panels = 4 }
thermal = { cop = 2.5 }
"#;
        let cfg: ScenarioConfig<f64> = parse_scenario(text, None).unwrap();
        assert_eq!(cfg.houses[0].pv.unwrap().n_panels, 10);
        assert_eq!(cfg.houses[1].pv.unwrap().n_panels, 4);
        assert_eq!(cfg.houses[1].thermal.cop, 2.5);
        assert_eq!(cfg.houses[1].pv.unwrap().p_panel_rated, 0.325);
        assert_eq!(cfg.houses[1].id, "h2");
    }

    #[test]
    fn default_parameter_bundle() {
        let p = default_parameters::<f64>();
        assert_eq!(p.pv.p_panel_rated, 0.325);
        assert_eq!(p.pv.n_panels, 31);
        assert!((p.pv.rated_kw() - 10.075).abs() < 1e-12);
        assert_eq!(p.battery.e_max, 13.5);
        assert_eq!(p.battery.e_min, 0.0);
        assert!((p.battery.e_charge_cap - 0.833_333_333_333_333_3).abs() < 1e-12);
        assert!((p.battery.e_discharge_cap - 7.0 / 6.0).abs() < 1e-12);
        assert_eq!(p.thermal.p_ac_rated, 3.0);
        assert_eq!((p.thermostat.t_ac_low, p.thermostat.t_ac_high), (23.0, 25.0));
        assert_eq!((p.thermostat.t_mode_low, p.thermostat.t_mode_high), (18.0, 30.0));
        assert_eq!((p.startup.alpha_v, p.startup.alpha_i), (0.3, 5.0));
        assert!((p.thermal.a + p.thermal.d - 1.0).abs() < 1e-15);
        assert!((p.thermal.a - (-1.0f64 / 18.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn save_then_load_is_identity() {
        let cfg: ScenarioConfig<f64> = parse_scenario(COMMUNITY, None).unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back: ScenarioConfig<f64> = parse_scenario(&text, None).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn controller_names_parse() {
        assert_eq!("rb".parse::<ControllerKind>().unwrap(), ControllerKind::RuleBased);
        assert_eq!("Baseline".parse::<ControllerKind>().unwrap(), ControllerKind::Baseline);
        assert_eq!(
            "my_mpc".parse::<ControllerKind>().unwrap(),
            ControllerKind::External("my_mpc".into())
        );
        assert_eq!("on".parse::<GridMode>().unwrap(), GridMode::OnGrid);
        assert!("sideways".parse::<GridMode>().is_err());
    }
}
