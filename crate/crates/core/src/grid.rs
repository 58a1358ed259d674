//! Community energy balance, AC startup feasibility and the serve / black-out
//! decision for off-grid and on-grid operation.

use serde::{Deserialize, Serialize};

use crate::config::{GridMode, StartupMode};
use crate::devices::DeviceEnergies;
use crate::scalar::Scalar;

/// Community totals over one step, kWh. Positive `e_grid` is export.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBalance<T> {
    pub e_gen: T,
    pub e_dem: T,
    pub e_mis: T,
    pub e_grid: T,
}

/// Energy balance plus the AC startup power check.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommunityBalance<T> {
    pub energy: EnergyBalance<T>,
    /// Generation power left after AC startups, kW.
    pub p_mis_ac: T,
    pub startup_flags: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ServeAll,
    ServeNone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Feasible,
    EnergyDeficit,
    StartupDeficit,
    OnGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeasibilityOutcome {
    pub verdict: Verdict,
    pub reason: Reason,
}

impl FeasibilityOutcome {
    pub fn served(&self) -> bool {
        self.verdict == Verdict::ServeAll
    }
}

pub fn community_balance<T: Scalar>(energies: &[DeviceEnergies<T>]) -> EnergyBalance<T> {
    let mut e_gen = T::zero();
    let mut e_dem = T::zero();
    for e in energies {
        e_gen += e.generation();
        e_dem += e.demand();
    }
    let e_mis = e_gen - e_dem;
    EnergyBalance {
        e_gen,
        e_dem,
        e_mis,
        e_grid: e_mis,
    }
}

/// An AC draws startup power when it switches from off to on.
#[inline]
pub fn startup_flag(prev: bool, now: bool) -> bool {
    now && !prev
}

/// `e_gen / dt - sum(delta_i * p_su_i)` with per-house startup powers `p_su`.
pub fn startup_mismatch<T: Scalar>(e_gen: T, u_ac_now: &[bool], u_ac_prev: &[bool], p_su: &[T], dt_hours: T) -> (T, Vec<bool>) {
    debug_assert!(u_ac_now.len() == u_ac_prev.len() && u_ac_now.len() == p_su.len());
    let flags: Vec<bool> = u_ac_now.iter().zip(u_ac_prev).map(|(&n, &p)| startup_flag(p, n)).collect();
    let draw: T = flags.iter().zip(p_su).filter(|(f, _)| **f).map(|(_, p)| *p).sum();
    (e_gen / dt_hours - draw, flags)
}

/// Full balance for a candidate action set.
pub fn evaluate<T: Scalar>(
    energies: &[DeviceEnergies<T>],
    u_ac_now: &[bool],
    u_ac_prev: &[bool],
    p_su: &[T],
    dt_hours: T,
) -> CommunityBalance<T> {
    let energy = community_balance(energies);
    let (p_mis_ac, startup_flags) = startup_mismatch(energy.e_gen, u_ac_now, u_ac_prev, p_su, dt_hours);
    CommunityBalance {
        energy,
        p_mis_ac,
        startup_flags,
    }
}

/// Serve-or-black-out decision. Comparisons against zero allow a rounding
/// slack of [`Scalar::balance_tol`] of the quantities involved.
pub fn resolve_step<T: Scalar>(balance: &CommunityBalance<T>, grid_mode: GridMode, startup_mode: StartupMode) -> FeasibilityOutcome {
    let outcome = |verdict, reason| FeasibilityOutcome { verdict, reason };
    if grid_mode == GridMode::OnGrid {
        return outcome(Verdict::ServeAll, Reason::OnGrid);
    }
    let e = &balance.energy;
    if e.e_mis < -T::balance_tol(e.e_gen + e.e_dem) {
        return outcome(Verdict::ServeNone, Reason::EnergyDeficit);
    }
    if startup_mode == StartupMode::Wacsc && balance.p_mis_ac < -T::balance_tol(balance.p_mis_ac.abs() + e.e_gen) {
        return outcome(Verdict::ServeNone, Reason::StartupDeficit);
    }
    outcome(Verdict::ServeAll, Reason::Feasible)
}

/// Off-grid surplus has nowhere to go: trims battery discharge (ascending
/// house index) and then PV output until generation equals demand. Returns
/// the surplus that could not be removed (zero unless charging or loads are
/// fed by nothing, which cannot happen for a nonnegative surplus).
pub fn curtail_surplus<T: Scalar>(energies: &mut [DeviceEnergies<T>], mut surplus: T) -> T {
    for e in energies.iter_mut() {
        if surplus <= T::zero() {
            break;
        }
        let cut = e.e_bat_d.min(surplus);
        e.e_bat_d -= cut;
        surplus -= cut;
    }
    for e in energies.iter_mut() {
        if surplus <= T::zero() {
            break;
        }
        let cut = e.e_pv.min(surplus);
        e.e_pv -= cut;
        surplus -= cut;
    }
    surplus.max(T::zero())
}
