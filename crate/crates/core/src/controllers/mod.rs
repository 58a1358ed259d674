//! Control policies and the plug-in registry.
//!
//! A controller maps the current step's [`ControllerInput`] to one
//! [`ActionVector`] per house. The engine validates external actions; the
//! bundled controllers produce valid actions by construction.

mod baseline;
mod rule_based;

use std::collections::BTreeMap;
use std::fmt;

pub use baseline::{baseline_battery, baseline_loads, baseline_pv, baseline_step, thermostat, Baseline};
pub use rule_based::{max_charge_dispatch, priority_order, priority_stack, RuleBased};

use crate::config::{ControllerKind, GridMode, HouseConfig, ScenarioConfig};
use crate::data::PriorityEnergies;
use crate::devices::{candidate_energies, ActionVector, DeviceEnergies, HouseState};
use crate::grid::{evaluate, resolve_step, CommunityBalance, FeasibilityOutcome};
use crate::scalar::Scalar;

/// Everything a policy may look at for step `k`.
#[derive(Debug, Clone, Copy)]
pub struct ControllerInput<'a, T> {
    pub step: usize,
    pub scenario: &'a ScenarioConfig<T>,
    pub states: &'a [HouseState<T>],
    /// PV potential per house, kWh (0 for houses without PV).
    pub pv_potential: &'a [T],
    /// Desired prioritized loads per house, kWh.
    pub desired: &'a [PriorityEnergies<T>],
    /// AC startup power per house, kW.
    pub p_su: &'a [T],
}

impl<T: Scalar> ControllerInput<'_, T> {
    pub fn n_houses(&self) -> usize {
        self.states.len()
    }

    pub fn grid_mode(&self) -> GridMode {
        self.scenario.grid_mode
    }

    pub fn dt_hours(&self) -> T {
        self.scenario.dt_hours
    }

    pub fn house(&self, i: usize) -> &HouseConfig<T> {
        &self.scenario.houses[i]
    }

    /// Candidate device energies of every house under `actions`.
    pub fn energies(&self, actions: &[ActionVector<T>]) -> Vec<DeviceEnergies<T>> {
        (0..self.n_houses())
            .map(|i| {
                candidate_energies(
                    self.house(i),
                    &self.states[i],
                    &actions[i],
                    self.pv_potential[i],
                    &self.desired[i],
                    self.grid_mode(),
                    self.dt_hours(),
                )
            })
            .collect()
    }

    /// Candidate energies, balance and feasibility verdict for `actions`.
    pub fn assess(&self, actions: &[ActionVector<T>]) -> (Vec<DeviceEnergies<T>>, CommunityBalance<T>, FeasibilityOutcome) {
        let energies = self.energies(actions);
        let now: Vec<bool> = actions.iter().map(|a| a.u_ac).collect();
        let prev: Vec<bool> = self.states.iter().map(|s| s.u_ac_prev).collect();
        let balance = evaluate(&energies, &now, &prev, self.p_su, self.dt_hours());
        let outcome = resolve_step(&balance, self.grid_mode(), self.scenario.startup.mode);
        (energies, balance, outcome)
    }
}

pub trait Controller<T: Scalar>: Send {
    fn name(&self) -> &str;

    fn decide(&mut self, input: &ControllerInput<'_, T>) -> Vec<ActionVector<T>>;

    /// Called at episode start.
    fn reset(&mut self) {}
}

type Factory<T> = Box<dyn Fn(&ScenarioConfig<T>) -> Box<dyn Controller<T>> + Send + Sync>;

/// Name → controller constructor. Names are matched case-insensitively.
pub struct ControllerRegistry<T> {
    factories: BTreeMap<String, Factory<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownController {
    pub name: String,
    pub known: Vec<String>,
}

impl fmt::Display for UnknownController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown controller `{}` (registered: {})", self.name, self.known.join(", "))
    }
}

impl std::error::Error for UnknownController {}

impl<T: Scalar> ControllerRegistry<T> {
    pub fn empty() -> Self {
        ControllerRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registry holding `baseline` and `rulebased`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("baseline", |_| Box::new(Baseline));
        r.register("rulebased", |_| Box::new(RuleBased));
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&ScenarioConfig<T>) -> Box<dyn Controller<T>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_ascii_lowercase(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn create(&self, kind: &ControllerKind, scenario: &ScenarioConfig<T>) -> Result<Box<dyn Controller<T>>, UnknownController> {
        let name = kind.name().to_ascii_lowercase();
        self.factories.get(&name).map(|f| f(scenario)).ok_or_else(|| UnknownController {
            name: kind.name().to_string(),
            known: self.names(),
        })
    }
}

impl<T: Scalar> Default for ControllerRegistry<T> {
    fn default() -> Self {
        Self::with_builtins()
    }
}
