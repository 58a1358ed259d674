//! Episode engine with a reset / step contract.
//!
//! Per step `k`: PV potentials from the weather at `k`, actions from the
//! built-in controller or the caller, candidate device energies, community
//! balance and AC startup check, serve-or-black-out decision, then battery and
//! temperature updates with the realized commands.
//!
//! Blackout steps zero every controllable energy, freeze batteries, record
//! the AC as off (its next activation is a startup) and keep the commanded
//! mode. Off-grid served steps cannot export: surplus is curtailed from
//! battery discharge first, then PV.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ControllerKind, DisturbanceSource, GridMode, ScenarioConfig, N_PRIORITIES};
use crate::controllers::{Controller, ControllerInput, ControllerRegistry, UnknownController};
use crate::data::{load_disturbances, DataError, Disturbances, PriorityEnergies};
use crate::devices::{ac_startup_power, battery_advance, pv_potential, thermal_step, ActionError, ActionVector, DeviceEnergies, HouseState};
use crate::grid::{community_balance, curtail_surplus, CommunityBalance, EnergyBalance, FeasibilityOutcome};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid action: {0}")]
    Action(#[from] ActionError),
    #[error(transparent)]
    Controller(#[from] UnknownController),
    #[error("expected {expected} actions (one per house), got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("no built-in controller for `{0}`; pass actions explicitly")]
    NoBuiltin(String),
    #[error("step called before reset")]
    NotReset,
    #[error("episode finished at step {0}; call reset")]
    Finished(usize),
    #[error("conservation violated at step {step}: {detail}")]
    Conservation { step: usize, detail: String },
}

/// Reward weights: unserved load energy (per kWh), mean comfort violation
/// (per °C), grid import (per kWh).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights<T> {
    pub unserved: T,
    pub comfort: T,
    pub import: T,
}

impl<T: Scalar> Default for RewardWeights<T> {
    fn default() -> Self {
        RewardWeights {
            unserved: T::one(),
            comfort: T::lit(0.1),
            import: T::lit(0.01),
        }
    }
}

/// Everything that happened in one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<T> {
    pub step: usize,
    /// Commands actually applied (idle on blackout steps).
    pub actions: Vec<ActionVector<T>>,
    /// Realized energies per house.
    pub energies: Vec<DeviceEnergies<T>>,
    /// Balance of the commanded actions, before the serve decision.
    pub candidate: CommunityBalance<T>,
    /// Realized balance.
    pub balance: EnergyBalance<T>,
    pub outcome: FeasibilityOutcome,
    pub desired: Vec<PriorityEnergies<T>>,
    /// Indoor temperature at the end of the step, °C.
    pub t_house: Vec<T>,
    /// Stored energy at the end of the step, kWh.
    pub e_bat: Vec<T>,
    /// Mean over houses of the distance outside the mode band, °C.
    pub comfort_violation: T,
    pub ghi: T,
    pub t_ambient: T,
    pub wind_speed: T,
}

impl<T: Scalar> StepRecord<T> {
    pub fn desired_total(&self) -> T {
        self.desired.iter().flat_map(|d| d.iter().copied()).sum()
    }

    pub fn served_total(&self) -> T {
        self.energies.iter().map(|e| e.e_load_total).sum()
    }
}

/// `-w_u * unserved - w_c * comfort_violation - w_i * import`.
pub fn reward<T: Scalar>(rec: &StepRecord<T>, w: &RewardWeights<T>) -> T {
    let unserved = (rec.desired_total() - rec.served_total()).max(T::zero());
    let import = (-rec.balance.e_grid).max(T::zero());
    -(w.unserved * unserved) - w.comfort * rec.comfort_violation - w.import * import
}

pub fn default_reward<T: Scalar>(rec: &StepRecord<T>) -> T {
    reward(rec, &RewardWeights::default())
}

/// Flat observation vector; see [`observation_schema`] for slot names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub values: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsSlot {
    pub name: String,
    pub unit: &'static str,
}

/// Slot names and units: `step`, `hour_of_day`; per house `t_house`,
/// `e_bat`, `load_p1`..`load_p8`, `pv_potential`; then `ghi`, `t_ambient`,
/// `wind_speed`, `prev_e_grid`. Length `6 + 11 H`.
pub fn observation_schema<T>(scenario: &ScenarioConfig<T>) -> Vec<ObsSlot> {
    let slot = |name: String, unit| ObsSlot { name, unit };
    let mut s = vec![slot("step".into(), "-"), slot("hour_of_day".into(), "h")];
    for h in &scenario.houses {
        s.push(slot(format!("{}.t_house", h.id), "degC"));
        s.push(slot(format!("{}.e_bat", h.id), "kWh"));
        for j in 1..=N_PRIORITIES {
            s.push(slot(format!("{}.load_p{j}", h.id), "kWh"));
        }
        s.push(slot(format!("{}.pv_potential", h.id), "kWh"));
    }
    for (n, u) in [("ghi", "W/m2"), ("t_ambient", "degC"), ("wind_speed", "m/s"), ("prev_e_grid", "kWh")] {
        s.push(slot(n.into(), u));
    }
    s
}

pub fn observation_len(n_houses: usize) -> usize {
    6 + 11 * n_houses
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepAction<T> {
    /// Let the scenario's registered controller decide.
    Builtin,
    External(Vec<ActionVector<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    pub observation: Observation<T>,
    pub reward: T,
    pub terminated: bool,
    pub truncated: bool,
    pub record: StepRecord<T>,
}

/// One full episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace<T> {
    pub scenario: String,
    pub controller: String,
    pub grid_mode: GridMode,
    pub seed: u64,
    /// SHA-256 of the resolved scenario, controller and seed.
    pub scenario_digest: String,
    pub house_ids: Vec<String>,
    /// Comfort band per house, `(t_mode_low, t_mode_high)`.
    pub bands: Vec<(T, T)>,
    pub timestamps: Vec<String>,
    pub records: Vec<StepRecord<T>>,
    /// Wall-clock time of each step, ms.
    pub step_ms: Vec<f64>,
}

impl<T: Scalar> Trace<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// SHA-256 over everything except wall-clock timings.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.scenario_digest.as_bytes());
        for r in &self.records {
            h.update(serde_json::to_vec(r).expect("records serialize"));
        }
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn scenario_digest<T: Scalar>(scenario: &ScenarioConfig<T>, controller: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(scenario.to_toml_string().unwrap_or_default().as_bytes());
    h.update(controller.as_bytes());
    h.update(seed.to_le_bytes());
    hex(&h.finalize())
}

pub struct CommunityEnv<T: Scalar> {
    scenario: ScenarioConfig<T>,
    controller: Option<Box<dyn Controller<T>>>,
    weights: RewardWeights<T>,
    dist: Option<(u64, Disturbances<T>)>,
    states: Vec<HouseState<T>>,
    p_su: Vec<T>,
    step: usize,
    prev_e_grid: T,
    started: bool,
}

impl<T: Scalar> CommunityEnv<T> {
    /// Validates the scenario and instantiates its controller from the
    /// built-in registry. Unregistered external controllers leave the engine
    /// expecting explicit actions.
    pub fn new(scenario: ScenarioConfig<T>) -> Result<Self, EnvError> {
        Self::with_registry(scenario, &ControllerRegistry::with_builtins())
    }

    pub fn with_registry(scenario: ScenarioConfig<T>, registry: &ControllerRegistry<T>) -> Result<Self, EnvError> {
        scenario.validate()?;
        let controller = match registry.create(&scenario.controller, &scenario) {
            Ok(c) => Some(c),
            Err(e) if !matches!(scenario.controller, ControllerKind::External(_)) => return Err(e.into()),
            Err(_) => None,
        };
        let p_su = scenario
            .houses
            .iter()
            .map(|h| ac_startup_power(&scenario.startup, h.thermal.p_ac_rated))
            .collect();
        Ok(CommunityEnv {
            scenario,
            controller,
            weights: RewardWeights::default(),
            dist: None,
            states: Vec::new(),
            p_su,
            step: 0,
            prev_e_grid: T::zero(),
            started: false,
        })
    }

    pub fn set_reward_weights(&mut self, w: RewardWeights<T>) {
        self.weights = w;
    }

    pub fn scenario(&self) -> &ScenarioConfig<T> {
        &self.scenario
    }

    pub fn states(&self) -> &[HouseState<T>] {
        &self.states
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn disturbances(&self) -> Option<&Disturbances<T>> {
        self.dist.as_ref().map(|(_, d)| d)
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation<T>, EnvError> {
        let reuse = match (&self.dist, &self.scenario.disturbances) {
            (Some((s, _)), DisturbanceSource::Synthetic(_)) => *s == seed,
            (Some(_), DisturbanceSource::Files(_)) => true,
            (None, _) => false,
        };
        if !reuse {
            self.dist = Some((seed, load_disturbances(&self.scenario, seed)?));
        }
        self.states = self
            .scenario
            .houses
            .iter()
            .map(|h| HouseState {
                t_house: h.initial.t_house,
                e_bat: h.initial.e_bat.unwrap_or(T::zero()),
                u_ac_prev: false,
                u_mode_prev: crate::devices::AcMode::Cool,
            })
            .collect();
        self.step = 0;
        self.prev_e_grid = T::zero();
        self.started = true;
        if let Some(c) = self.controller.as_mut() {
            c.reset();
        }
        Ok(self.observation())
    }

    fn potentials(&self, k: usize) -> Vec<T> {
        let w = &self.dist.as_ref().expect("reset").1.weather;
        let dt = self.scenario.dt_hours;
        self.scenario
            .houses
            .iter()
            .map(|h| match &h.pv {
                Some(pv) => pv_potential(w.ghi[k], w.t_ambient[k], w.wind_speed[k], pv, dt),
                None => T::zero(),
            })
            .collect()
    }

    /// Observation for the current step index (the last step's disturbances
    /// are repeated once the horizon is reached).
    pub fn observation(&self) -> Observation<T> {
        let d = &self.dist.as_ref().expect("reset").1;
        let k = self.step.min(self.scenario.horizon_steps - 1);
        let pot = self.potentials(k);
        let ts = d.weather.timestamps[k];
        let hour = {
            use chrono::Timelike;
            T::lit(ts.hour() as f64 + ts.minute() as f64 / 60.0)
        };
        let mut v = Vec::with_capacity(observation_len(self.states.len()));
        v.push(T::lit(self.step as f64));
        v.push(hour);
        for (i, s) in self.states.iter().enumerate() {
            v.push(s.t_house);
            v.push(s.e_bat);
            v.extend_from_slice(d.loads.at(k, i));
            v.push(pot[i]);
        }
        v.push(d.weather.ghi[k]);
        v.push(d.weather.t_ambient[k]);
        v.push(d.weather.wind_speed[k]);
        v.push(self.prev_e_grid);
        Observation { values: v }
    }

    pub fn step(&mut self, action: StepAction<T>) -> Result<StepOutput<T>, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        let k = self.step;
        if k >= self.scenario.horizon_steps {
            return Err(EnvError::Finished(k));
        }
        let pot = self.potentials(k);
        let (_, dist) = self.dist.as_ref().expect("reset");
        let desired = dist.loads.step(k);
        let (ghi, t_am, wind) = (dist.weather.ghi[k], dist.weather.t_ambient[k], dist.weather.wind_speed[k]);
        let input = ControllerInput {
            step: k,
            scenario: &self.scenario,
            states: &self.states,
            pv_potential: &pot,
            desired,
            p_su: &self.p_su,
        };
        let actions = match action {
            StepAction::Builtin => match self.controller.as_mut() {
                Some(c) => c.decide(&input),
                None => return Err(EnvError::NoBuiltin(self.scenario.controller.name().to_string())),
            },
            StepAction::External(a) => a,
        };
        if actions.len() != self.states.len() {
            return Err(EnvError::ActionCount {
                expected: self.states.len(),
                got: actions.len(),
            });
        }
        for (a, h) in actions.iter().zip(&self.scenario.houses) {
            a.validate(&h.id, h.class)?;
        }

        let (mut energies, candidate, outcome) = input.assess(&actions);
        let off_grid = self.scenario.grid_mode == GridMode::OffGrid;
        let realized_actions: Vec<ActionVector<T>>;
        if outcome.served() {
            if off_grid && candidate.energy.e_mis > T::zero() {
                curtail_surplus(&mut energies, candidate.energy.e_mis);
            }
            realized_actions = actions
                .iter()
                .zip(&energies)
                .map(|(a, e)| {
                    let mut r = *a;
                    if e.e_pv_potential > T::zero() {
                        r.u_pv = (e.e_pv / e.e_pv_potential).min(T::one());
                    }
                    r
                })
                .collect();
        } else {
            for e in energies.iter_mut() {
                *e = DeviceEnergies {
                    e_pv_potential: e.e_pv_potential,
                    ..DeviceEnergies::default()
                };
            }
            realized_actions = actions.iter().map(|a| ActionVector::idle(a.u_mode)).collect();
        }
        let mut balance = community_balance(&energies);
        if off_grid {
            balance.e_grid = T::zero();
        }

        let tol = T::lit(1e-9).max(T::balance_tol(balance.e_gen + balance.e_dem));
        let residual = balance.e_gen - balance.e_dem - balance.e_grid;
        if residual.abs() > tol {
            return Err(EnvError::Conservation {
                step: k,
                detail: format!("e_gen - e_dem - e_grid = {residual}"),
            });
        }

        let mut comfort = T::zero();
        for (i, h) in self.scenario.houses.iter().enumerate() {
            let s = &mut self.states[i];
            let a = &realized_actions[i];
            if let Some(b) = &h.battery {
                s.e_bat = battery_advance(s.e_bat, energies[i].e_bat_c, energies[i].e_bat_d, b);
            }
            s.t_house = thermal_step(s.t_house, a.u_ac, a.u_mode, t_am, &h.thermal);
            s.u_ac_prev = a.u_ac;
            s.u_mode_prev = a.u_mode;
            let band = &h.thermostat;
            comfort += (band.t_mode_low - s.t_house).max(T::zero()) + (s.t_house - band.t_mode_high).max(T::zero());
        }
        comfort /= T::lit(self.states.len() as f64);

        let record = StepRecord {
            step: k,
            actions: realized_actions,
            energies,
            candidate,
            balance,
            outcome,
            desired: desired.to_vec(),
            t_house: self.states.iter().map(|s| s.t_house).collect(),
            e_bat: self.states.iter().map(|s| s.e_bat).collect(),
            comfort_violation: comfort,
            ghi,
            t_ambient: t_am,
            wind_speed: wind,
        };
        let r = reward(&record, &self.weights);
        self.prev_e_grid = record.balance.e_grid;
        self.step += 1;
        Ok(StepOutput {
            observation: self.observation(),
            reward: r,
            terminated: false,
            truncated: self.step == self.scenario.horizon_steps,
            record,
        })
    }

    /// Runs the built-in controller from reset to the horizon.
    pub fn run(&mut self, seed: u64) -> Result<Trace<T>, EnvError> {
        self.reset(seed)?;
        let n = self.scenario.horizon_steps;
        let mut records = Vec::with_capacity(n);
        let mut step_ms = Vec::with_capacity(n);
        for _ in 0..n {
            let t0 = Instant::now();
            let out = self.step(StepAction::Builtin)?;
            step_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            records.push(out.record);
        }
        let d = self.disturbances().expect("reset");
        Ok(Trace {
            scenario: self.scenario.name.clone(),
            controller: self.scenario.controller.name().to_string(),
            grid_mode: self.scenario.grid_mode,
            seed,
            scenario_digest: scenario_digest(&self.scenario, self.scenario.controller.name(), seed),
            house_ids: self.scenario.houses.iter().map(|h| h.id.clone()).collect(),
            bands: self
                .scenario
                .houses
                .iter()
                .map(|h| (h.thermostat.t_mode_low, h.thermostat.t_mode_high))
                .collect(),
            timestamps: d.weather.timestamps.iter().map(|t| t.format("%Y-%m-%dT%H:%M:%S").to_string()).collect(),
            records,
            step_ms,
        })
    }
}

/// Runs `scenario` with `controller` for one episode.
pub fn run_episode<T: Scalar>(scenario: &ScenarioConfig<T>, controller: &ControllerKind, seed: u64) -> Result<Trace<T>, EnvError> {
    let mut s = scenario.clone();
    s.controller = controller.clone();
    CommunityEnv::new(s)?.run(seed)
}
