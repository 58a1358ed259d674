//! Uncoordinated per-house logic of a typical residential installation:
//! hysteresis thermostat, load-matching (off-grid) or uncurtailed (on-grid)
//! PV, passive battery, occupant-driven loads.

use crate::config::{BatteryParams, GridMode, ThermostatParams, N_PRIORITIES};
use crate::data::PriorityEnergies;
use crate::devices::{ac_energy, battery_dispatch, AcMode, ActionVector, HouseState};
use crate::scalar::{clamp01, Scalar};

use super::{Controller, ControllerInput};

/// Two-band hysteresis thermostat returning `(u_ac, mode)`.
///
/// Heating engages at or below `t_mode_low`, cooling at or above
/// `t_mode_high`. In cooling the AC turns on at `t_ac_high` and off at
/// `t_ac_low`; heating mirrors this. `inverted_mode_bands` swaps the mode
/// thresholds and uses the cooling band in both modes.
pub fn thermostat<T: Scalar>(t_house: T, u_ac_prev: bool, mode_prev: AcMode, p: &ThermostatParams<T>) -> (bool, AcMode) {
    let (at_low, at_high) = if p.inverted_mode_bands {
        (AcMode::Cool, AcMode::Heat)
    } else {
        (AcMode::Heat, AcMode::Cool)
    };
    let mode = if t_house <= p.t_mode_low {
        at_low
    } else if t_house >= p.t_mode_high {
        at_high
    } else {
        mode_prev
    };
    let cooling_band = mode == AcMode::Cool || p.inverted_mode_bands;
    let u_ac = if cooling_band {
        if t_house >= p.t_ac_high {
            true
        } else if t_house <= p.t_ac_low {
            false
        } else {
            u_ac_prev
        }
    } else if t_house <= p.t_ac_low {
        true
    } else if t_house >= p.t_ac_high {
        false
    } else {
        u_ac_prev
    };
    (u_ac, mode)
}

/// Every load with positive demand is on.
pub fn baseline_loads<T: Scalar>(desired: &PriorityEnergies<T>) -> [bool; N_PRIORITIES] {
    std::array::from_fn(|j| desired[j] > T::zero())
}

/// `(c, d)` commands. Off-grid: charge when the PV potential covers the
/// house demand `e_d2`, otherwise discharge when PV output falls short
/// (charging wins if both hold). On-grid: charge until full, never discharge.
pub fn baseline_battery<T: Scalar>(grid_mode: GridMode, potential: T, e_pv: T, e_d2: T, e_bat: T, p: &BatteryParams<T>) -> (T, T) {
    let (z, one) = (T::zero(), T::one());
    match grid_mode {
        GridMode::OffGrid => {
            if potential >= e_d2 {
                (one, z)
            } else if e_pv < e_d2 {
                (z, one)
            } else {
                (z, z)
            }
        }
        GridMode::OnGrid => (if e_bat < p.e_max { one } else { z }, z),
    }
}

/// PV fraction: load-matching `e_d1 / potential` off-grid, full output
/// on-grid, zero without potential.
pub fn baseline_pv<T: Scalar>(grid_mode: GridMode, potential: T, e_d1: T) -> T {
    if potential <= T::zero() {
        return T::zero();
    }
    match grid_mode {
        GridMode::OffGrid => clamp01(e_d1 / potential),
        GridMode::OnGrid => T::one(),
    }
}

/// Baseline commands of every house: thermostat, then loads, then battery,
/// then PV with the battery dispatch folded into the demand it matches.
pub fn baseline_step<T: Scalar>(input: &ControllerInput<'_, T>) -> Vec<ActionVector<T>> {
    let grid = input.grid_mode();
    let dt = input.dt_hours();
    (0..input.n_houses())
        .map(|i| {
            let house = input.house(i);
            let s: &HouseState<T> = &input.states[i];
            let (u_ac, u_mode) = thermostat(s.t_house, s.u_ac_prev, s.u_mode_prev, &house.thermostat);
            let desired = &input.desired[i];
            let u_loads = baseline_loads(desired);
            let e_l: T = desired.iter().copied().sum();
            let e_ac = ac_energy(u_ac, house.thermal.p_ac_rated, dt);
            let e_d2 = e_l + e_ac;
            let potential = input.pv_potential[i];

            let mut a = ActionVector::idle(u_mode);
            a.u_ac = u_ac;
            a.u_loads = u_loads;
            let (mut e_c, mut e_d) = (T::zero(), T::zero());
            if let Some(b) = &house.battery {
                let (c, d) = baseline_battery(grid, potential, potential.min(e_d2), e_d2, s.e_bat, b);
                let bound = match grid {
                    GridMode::OffGrid => (potential - e_d2).abs(),
                    GridMode::OnGrid => T::infinity(),
                };
                (e_c, e_d) = battery_dispatch(s.e_bat, c, d, bound, b);
                a.c = c;
                a.d = d;
            }
            if house.pv.is_some() {
                a.u_pv = baseline_pv(grid, potential, e_d2 + e_c - e_d);
            }
            a
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Baseline;

impl<T: Scalar> Controller<T> for Baseline {
    fn name(&self) -> &str {
        "baseline"
    }

    fn decide(&mut self, input: &ControllerInput<'_, T>) -> Vec<ActionVector<T>> {
        baseline_step(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_parameters, ControllerKind, DerClass, ScenarioConfig, StartupMode};
    use proptest::prelude::*;

    fn tp() -> ThermostatParams<f64> {
        default_parameters::<f64>().thermostat
    }

    #[test]
    fn thermostat_examples() {
        assert_eq!(thermostat(24.0, false, AcMode::Cool, &tp()), (false, AcMode::Cool));
        assert_eq!(thermostat(26.0, false, AcMode::Cool, &tp()), (true, AcMode::Cool));
        assert_eq!(thermostat(22.0, true, AcMode::Cool, &tp()), (false, AcMode::Cool));
        assert_eq!(thermostat(24.0, true, AcMode::Cool, &tp()), (true, AcMode::Cool));
    }

    #[test]
    fn thermostat_mode_orientation() {
        assert_eq!(thermostat(31.0, false, AcMode::Heat, &tp()), (true, AcMode::Cool));
        assert_eq!(thermostat(17.0, false, AcMode::Cool, &tp()), (true, AcMode::Heat));
        // heating band is mirrored: off once warm enough
        assert_eq!(thermostat(25.5, true, AcMode::Heat, &tp()), (false, AcMode::Heat));
        let mut lit = tp();
        lit.inverted_mode_bands = true;
        assert_eq!(thermostat(17.0, false, AcMode::Heat, &lit), (false, AcMode::Cool));
        assert_eq!(thermostat(31.0, false, AcMode::Cool, &lit), (true, AcMode::Heat));
    }

    #[test]
    fn pv_examples() {
        assert_eq!(baseline_pv(GridMode::OffGrid, 0.0, 0.4), 0.0);
        assert_eq!(baseline_pv(GridMode::OffGrid, 1.0, 0.4), 0.4);
        assert_eq!(baseline_pv(GridMode::OffGrid, 1.0, 1.7), 1.0);
        assert_eq!(baseline_pv(GridMode::OnGrid, 0.7, 0.0), 1.0);
    }

    #[test]
    fn battery_examples() {
        let b = default_parameters::<f64>().battery;
        assert_eq!(baseline_battery(GridMode::OffGrid, 1.0, 0.6, 0.6, 5.0, &b), (1.0, 0.0));
        assert_eq!(baseline_battery(GridMode::OffGrid, 0.2, 0.2, 0.6, 5.0, &b), (0.0, 1.0));
        assert_eq!(baseline_battery(GridMode::OnGrid, 0.2, 0.2, 0.6, 13.5, &b), (0.0, 0.0));
        assert_eq!(baseline_battery(GridMode::OnGrid, 0.2, 0.2, 0.6, 3.0, &b), (1.0, 0.0));
    }

    #[test]
    fn loads_follow_demand() {
        let mut d = [0.0; 8];
        d[0] = 0.2;
        assert_eq!(baseline_loads(&d), [true, false, false, false, false, false, false, false]);
        assert_eq!(baseline_loads(&[0.0; 8]), [false; 8]);
        assert_eq!(baseline_loads(&[0.1; 8]), [true; 8]);
    }

    fn input_for<'a>(
        cfg: &'a ScenarioConfig<f64>,
        states: &'a [HouseState<f64>],
        pot: &'a [f64],
        desired: &'a [[f64; 8]],
        p_su: &'a [f64],
    ) -> ControllerInput<'a, f64> {
        ControllerInput {
            step: 0,
            scenario: cfg,
            states,
            pv_potential: pot,
            desired,
            p_su,
        }
    }

    fn state(t: f64) -> HouseState<f64> {
        HouseState {
            t_house: t,
            e_bat: 6.75,
            u_ac_prev: false,
            u_mode_prev: AcMode::Cool,
        }
    }

    #[test]
    fn quiescent_house_stays_idle() {
        let cfg = ScenarioConfig::<f64>::synthetic("q", &[DerClass::PvAndBattery], GridMode::OffGrid, ControllerKind::Baseline, StartupMode::Wacsc);
        let st = [state(24.0)];
        let a = baseline_step(&input_for(&cfg, &st, &[0.0], &[[0.0; 8]], &[10.5]));
        assert!(!a[0].u_ac && a[0].u_pv == 0.0 && a[0].d == 0.0 && a[0].u_loads == [false; 8]);
        assert_eq!(a[0].u_mode, AcMode::Cool);
    }

    #[test]
    fn hot_house_with_ample_pv() {
        let cfg = ScenarioConfig::<f64>::synthetic("h", &[DerClass::PvAndBattery], GridMode::OffGrid, ControllerKind::Baseline, StartupMode::Wacsc);
        let st = [state(27.0)];
        let desired = [[0.05; 8]];
        let a = baseline_step(&input_for(&cfg, &st, &[1.5], &desired, &[10.5]));
        assert!(a[0].u_ac);
        assert_eq!(a[0].u_mode, AcMode::Cool);
        // e_d2 = 0.4 + 0.5 <= 1.5, so charge, and PV matches demand plus charge
        assert_eq!((a[0].c, a[0].d), (1.0, 0.0));
        let e_c = 0.6f64.min(5.0 / 6.0);
        assert!((a[0].u_pv - (0.9 + e_c) / 1.5).abs() < 1e-12);
    }

    #[test]
    fn no_der_house_is_gated() {
        let cfg = ScenarioConfig::<f64>::synthetic("n", &[DerClass::NoDer], GridMode::OffGrid, ControllerKind::Baseline, StartupMode::Wacsc);
        let st = [state(27.0)];
        let a = baseline_step(&input_for(&cfg, &st, &[0.0], &[[0.1; 8]], &[10.5]));
        assert_eq!((a[0].u_pv, a[0].c, a[0].d), (0.0, 0.0, 0.0));
        assert!(a[0].validate("h1", DerClass::NoDer).is_ok());
    }

    proptest! {
        #[test]
        fn ac_switches_only_outside_band(temps in proptest::collection::vec(15.0..33.0f64, 1..200)) {
            let p = tp();
            let (mut on, mut mode) = (false, AcMode::Cool);
            for t in temps {
                let (n, m) = thermostat(t, on, mode, &p);
                if n != on {
                    prop_assert!(t <= p.t_ac_low || t >= p.t_ac_high);
                }
                on = n;
                mode = m;
            }
        }

        #[test]
        fn off_grid_pv_never_exceeds_demand_or_potential(pot in 0.0..3.0f64, load in 0.0..0.3f64, t in 20.0..30.0f64, e0 in 0.0..=13.5f64) {
            let cfg = ScenarioConfig::<f64>::synthetic("p", &[DerClass::PvAndBattery], GridMode::OffGrid, ControllerKind::Baseline, StartupMode::Wacsc);
            let mut s = state(t);
            s.e_bat = e0;
            let st = [s];
            let desired = [[load; 8]];
            let (pots, p_su) = ([pot], [10.5]);
            let inp = input_for(&cfg, &st, &pots, &desired, &p_su);
            let a = baseline_step(&inp);
            let e = inp.energies(&a);
            let e_d1 = e[0].e_load_total + e[0].e_ac + e[0].e_bat_c - e[0].e_bat_d;
            prop_assert!(e[0].e_pv <= pot + 1e-12);
            prop_assert!(e[0].e_pv <= e_d1.max(0.0) + 1e-12);
            prop_assert!(a[0].c * a[0].d == 0.0);
        }
    }
}
