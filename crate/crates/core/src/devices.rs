//! Per-step device physics: house thermal update, PV, battery bucket, AC and
//! prioritized loads. Everything here is a pure function of its arguments.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BatteryParams, DerClass, GridMode, HouseConfig, PvParams, StartupParams, ThermalParams, N_PRIORITIES};
use crate::data::PriorityEnergies;
use crate::scalar::Scalar;

/// AC operating mode: heating adds heat, cooling removes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcMode {
    Heat,
    Cool,
}

impl AcMode {
    /// `+1` for heating, `-1` for cooling.
    pub fn sign(self) -> i8 {
        match self {
            AcMode::Heat => 1,
            AcMode::Cool => -1,
        }
    }

    pub fn from_sign(s: i8) -> Option<Self> {
        match s {
            1 => Some(AcMode::Heat),
            -1 => Some(AcMode::Cool),
            _ => None,
        }
    }
}

impl fmt::Display for AcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AcMode::Heat => "heat",
            AcMode::Cool => "cool",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseState<T> {
    /// Indoor temperature, °C.
    pub t_house: T,
    /// Stored energy, kWh (0 for houses without a battery).
    pub e_bat: T,
    pub u_ac_prev: bool,
    pub u_mode_prev: AcMode,
}

/// Commands for one house over one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionVector<T> {
    pub u_ac: bool,
    pub u_mode: AcMode,
    /// Fraction of PV potential used, [0, 1].
    pub u_pv: T,
    /// Charge command, [0, 1].
    pub c: T,
    /// Discharge command, [0, 1].
    pub d: T,
    pub u_loads: [bool; N_PRIORITIES],
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("house `{house}`: {field}: {reason}")]
pub struct ActionError {
    pub house: String,
    pub field: &'static str,
    pub reason: String,
}

impl<T: Scalar> ActionVector<T> {
    /// Everything off, keeping `mode`.
    pub fn idle(mode: AcMode) -> Self {
        ActionVector {
            u_ac: false,
            u_mode: mode,
            u_pv: T::zero(),
            c: T::zero(),
            d: T::zero(),
            u_loads: [false; N_PRIORITIES],
        }
    }

    /// Checks ranges, charge/discharge exclusion and DER gating.
    pub fn validate(&self, house: &str, class: DerClass) -> Result<(), ActionError> {
        let err = |field, reason: &str| {
            Err(ActionError {
                house: house.to_string(),
                field,
                reason: reason.to_string(),
            })
        };
        let unit = |x: T| x >= T::zero() && x <= T::one();
        if !unit(self.u_pv) {
            return err("u_pv", "must lie in [0, 1]");
        }
        if !unit(self.c) {
            return err("c", "must lie in [0, 1]");
        }
        if !unit(self.d) {
            return err("d", "must lie in [0, 1]");
        }
        if self.c * self.d != T::zero() {
            return err("c", "simultaneous charge and discharge (c * d != 0)");
        }
        if !class.has_pv() && self.u_pv != T::zero() {
            return err("u_pv", "house has no PV");
        }
        if !class.has_battery() && (self.c != T::zero() || self.d != T::zero()) {
            return err("c", "house has no battery");
        }
        Ok(())
    }

    /// Number of loads switched on.
    pub fn loads_on(&self) -> usize {
        self.u_loads.iter().filter(|u| **u).count()
    }
}

/// Energies of one house over one step, kWh.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviceEnergies<T> {
    pub e_pv: T,
    pub e_pv_potential: T,
    pub e_bat_c: T,
    pub e_bat_d: T,
    pub e_ac: T,
    pub e_loads: PriorityEnergies<T>,
    pub e_load_total: T,
    /// Loads plus AC: the demand PV and battery try to match.
    pub e_house_demand_d2: T,
}

impl<T: Scalar> DeviceEnergies<T> {
    pub fn generation(&self) -> T {
        self.e_pv + self.e_bat_d
    }

    pub fn demand(&self) -> T {
        self.e_ac + self.e_bat_c + self.e_load_total
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("u_pv = {0} outside [0, 1]")]
    PvFraction(f64),
    #[error("battery precondition violated: {0}")]
    Battery(&'static str),
}

/// `T' = a T + u_ac s q Q_ac + d T_am`, where `s` is the mode sign and
/// `q = q_coeff` converts thermal power to a per-step temperature change.
#[inline]
pub fn thermal_step<T: Scalar>(t_house: T, u_ac: bool, mode: AcMode, t_ambient: T, p: &ThermalParams<T>) -> T {
    let mut t = p.a * t_house + p.d * t_ambient;
    if u_ac {
        t += T::lit(mode.sign() as f64) * p.q_coeff * p.q_ac();
    }
    t
}

/// Faiman module temperature, °C.
#[inline]
pub fn module_temperature<T: Scalar>(ghi: T, t_ambient: T, wind: T, p: &PvParams<T>) -> T {
    let u = if p.faiman_additive_wind {
        p.u0 + p.u1 + wind
    } else {
        p.u0 + p.u1 * wind
    };
    t_ambient + ghi / u
}

/// Available PV energy over one step, kWh, clamped at zero.
#[inline]
pub fn pv_potential<T: Scalar>(ghi: T, t_ambient: T, wind: T, p: &PvParams<T>, dt_hours: T) -> T {
    if ghi <= T::zero() {
        return T::zero();
    }
    let tm = module_temperature(ghi, t_ambient, wind, p);
    let derate = T::one() + p.gamma_pct_per_degc / T::lit(100.0) * (tm - p.t_std);
    (p.rated_kw() * (ghi / p.g_std) * derate * dt_hours).max(T::zero())
}

#[inline]
pub fn pv_output<T: Scalar>(u_pv: T, potential: T) -> Result<T, DeviceError> {
    if !(u_pv >= T::zero() && u_pv <= T::one()) {
        return Err(DeviceError::PvFraction(u_pv.as_f64()));
    }
    Ok(u_pv * potential)
}

/// Result of one battery update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep<T> {
    pub e_next: T,
    pub e_c: T,
    pub e_d: T,
}

/// Charge and discharge energies for commands `c`, `d` limited by headroom,
/// the per-step caps and the mismatch bound `e_mismatch`.
#[inline]
pub fn battery_dispatch<T: Scalar>(e_bat: T, c: T, d: T, e_mismatch: T, p: &BatteryParams<T>) -> (T, T) {
    let headroom = ((p.e_max - e_bat) / p.eta_c).max(T::zero());
    let available = ((e_bat - p.e_min) * p.eta_d).max(T::zero());
    let e_c = c * headroom.min(p.e_charge_cap).min(e_mismatch);
    let e_d = d * available.min(p.e_discharge_cap).min(e_mismatch);
    (e_c, e_d)
}

/// Bucket update `e' = e + eta_c e_c - e_d / eta_d`, kept inside
/// `[e_min, e_max]` against rounding.
pub fn battery_step<T: Scalar>(e_bat: T, c: T, d: T, e_mismatch: T, p: &BatteryParams<T>) -> Result<BatteryStep<T>, DeviceError> {
    if c * d != T::zero() {
        return Err(DeviceError::Battery("c * d = 0"));
    }
    if !(c >= T::zero() && c <= T::one() && d >= T::zero() && d <= T::one()) {
        return Err(DeviceError::Battery("c, d in [0, 1]"));
    }
    if !p.contains(e_bat) {
        return Err(DeviceError::Battery("e_min <= e_bat <= e_max"));
    }
    if !(e_mismatch >= T::zero()) {
        return Err(DeviceError::Battery("e_mismatch >= 0"));
    }
    let (e_c, e_d) = battery_dispatch(e_bat, c, d, e_mismatch, p);
    Ok(BatteryStep {
        e_next: battery_advance(e_bat, e_c, e_d, p),
        e_c,
        e_d,
    })
}

#[inline]
pub(crate) fn battery_advance<T: Scalar>(e_bat: T, e_c: T, e_d: T, p: &BatteryParams<T>) -> T {
    (e_bat + p.eta_c * e_c - e_d / p.eta_d).max(p.e_min).min(p.e_max)
}

#[inline]
pub fn ac_energy<T: Scalar>(u_ac: bool, p_ac_rated: T, dt_hours: T) -> T {
    if u_ac {
        p_ac_rated * dt_hours
    } else {
        T::zero()
    }
}

/// Served energy per priority and its total.
#[inline]
pub fn load_energy<T: Scalar>(u_loads: &[bool; N_PRIORITIES], desired: &PriorityEnergies<T>) -> (PriorityEnergies<T>, T) {
    let served: PriorityEnergies<T> = std::array::from_fn(|j| if u_loads[j] { desired[j] } else { T::zero() });
    let total = served.iter().copied().sum();
    (served, total)
}

/// Power drawn while an AC compressor starts, kW.
#[inline]
pub fn ac_startup_power<T: Scalar>(p: &StartupParams<T>, p_ac_rated: T) -> T {
    (T::one() - p.alpha_v) * p.alpha_i * p_ac_rated
}

/// Candidate energies of one house for `action` before any feasibility
/// decision. Off-grid, battery dispatch is bounded by `|potential - e_d2|`;
/// on-grid the grid absorbs any mismatch, so only headroom and caps bind.
pub fn candidate_energies<T: Scalar>(
    house: &HouseConfig<T>,
    state: &HouseState<T>,
    action: &ActionVector<T>,
    potential: T,
    desired: &PriorityEnergies<T>,
    grid_mode: GridMode,
    dt_hours: T,
) -> DeviceEnergies<T> {
    let e_ac = ac_energy(action.u_ac, house.thermal.p_ac_rated, dt_hours);
    let (e_loads, e_load_total) = load_energy(&action.u_loads, desired);
    let e_d2 = e_load_total + e_ac;
    let (e_bat_c, e_bat_d) = match &house.battery {
        Some(b) => {
            let bound = match grid_mode {
                GridMode::OffGrid => (potential - e_d2).abs(),
                GridMode::OnGrid => T::infinity(),
            };
            battery_dispatch(state.e_bat, action.c, action.d, bound, b)
        }
        None => (T::zero(), T::zero()),
    };
    DeviceEnergies {
        e_pv: action.u_pv * potential,
        e_pv_potential: potential,
        e_bat_c,
        e_bat_d,
        e_ac,
        e_loads,
        e_load_total,
        e_house_demand_d2: e_d2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_parameters;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn thermal(a: f64, d: f64) -> ThermalParams<f64> {
        ThermalParams {
            a,
            d,
            cop: 3.0,
            p_ac_rated: 3.0,
            q_coeff: 1.0,
        }
    }

    fn battery() -> BatteryParams<f64> {
        default_parameters::<f64>().battery
    }

    #[test]
    fn thermal_examples() {
        assert_eq!(thermal_step(21.3, false, AcMode::Cool, 40.0, &thermal(1.0, 0.0)), 21.3);
        assert_relative_eq!(thermal_step(20.0, false, AcMode::Cool, 30.0, &thermal(0.9, 0.1)), 21.0, epsilon = 1e-12);
        assert_relative_eq!(thermal_step(20.0, true, AcMode::Cool, 30.0, &thermal(0.9, 0.1)), 12.0, epsilon = 1e-12);
        assert_relative_eq!(thermal_step(20.0, true, AcMode::Heat, 30.0, &thermal(0.9, 0.1)), 30.0, epsilon = 1e-12);
    }

    #[test]
    fn thermal_relaxes_to_fixed_point() {
        let p = thermal(0.8, 0.15);
        let fixed = 0.15 * 30.0 / 0.2;
        let mut t: f64 = 10.0;
        let mut gap = (t - fixed).abs();
        for _ in 0..200 {
            t = thermal_step(t, false, AcMode::Cool, 30.0, &p);
            let g = (t - fixed).abs();
            assert!(g <= gap);
            gap = g;
        }
        assert!(gap < 1e-9);
    }

    #[test]
    fn pv_matches_straight_line_formula() {
        let p = default_parameters::<f64>().pv;
        let dt = 1.0 / 6.0;
        let (g, ta, w) = (800.0, 30.0, 3.0);
        let tm = ta + g / (25.0 + 6.84 * w);
        let oracle = 31.0 * 0.325 * (g / 1000.0) * (1.0 + (-0.35 / 100.0) * (tm - 25.0)) * dt;
        assert_relative_eq!(pv_potential(g, ta, w, &p, dt), oracle, max_relative = 1e-14);
        assert_relative_eq!(oracle, 1.2371947, epsilon = 1e-6);
    }

    #[test]
    fn pv_standard_conditions_and_dark() {
        let p = default_parameters::<f64>().pv;
        // ghi = g_std and t_am chosen so the module sits at t_std.
        let wind = 2.0;
        let ta = 25.0 - 1000.0 / (25.0 + 6.84 * wind);
        assert_relative_eq!(pv_potential(1000.0, ta, wind, &p, 1.0 / 6.0), 10.075 / 6.0, max_relative = 1e-14);
        assert_eq!(pv_potential(0.0, 30.0, 1.0, &p, 1.0 / 6.0), 0.0);
    }

    #[test]
    fn additive_wind_flag_changes_denominator() {
        let mut p = default_parameters::<f64>().pv;
        p.faiman_additive_wind = true;
        assert_relative_eq!(module_temperature(800.0, 30.0, 3.0, &p), 30.0 + 800.0 / (25.0 + 6.84 + 3.0));
    }

    #[test]
    fn pv_negative_potential_clamped() {
        let mut p = default_parameters::<f64>().pv;
        p.gamma_pct_per_degc = -5.0;
        assert_eq!(pv_potential(1000.0, 60.0, 0.0, &p, 1.0), 0.0);
    }

    #[test]
    fn pv_output_examples() {
        assert_eq!(pv_output(1.0, 0.8).unwrap(), 0.8);
        assert_eq!(pv_output(0.0, 0.8).unwrap(), 0.0);
        assert_relative_eq!(pv_output(0.5, 1.2).unwrap(), 0.6);
        assert!(pv_output(1.2, 1.0).is_err());
        assert!(pv_output(-0.1, 1.0).is_err());
    }

    #[test]
    fn battery_examples() {
        let b = battery();
        let full = battery_step(13.5, 1.0, 0.0, 5.0, &b).unwrap();
        assert_eq!((full.e_c, full.e_next), (0.0, 13.5));
        let empty = battery_step(0.0, 0.0, 1.0, 5.0, &b).unwrap();
        assert_eq!((empty.e_d, empty.e_next), (0.0, 0.0));
        let s = battery_step(10.0, 1.0, 0.0, 0.5, &b).unwrap();
        assert_relative_eq!(s.e_c, 0.5);
        assert_relative_eq!(s.e_next, 10.475, epsilon = 1e-12);
        assert!(battery_step(10.0, 1.0, 1.0, 0.5, &b).is_err());
        assert!(battery_step(14.0, 1.0, 0.0, 0.5, &b).is_err());
    }

    #[test]
    fn ac_and_load_examples() {
        assert_relative_eq!(ac_energy(true, 3.0, 1.0 / 6.0), 0.5);
        assert_eq!(ac_energy(false, 3.0, 1.0 / 6.0), 0.0);
        assert_eq!(ac_energy(true, 0.0, 1.0 / 6.0), 0.0);
        let mut desired = [0.0; 8];
        desired[0] = 0.2;
        desired[1] = 0.3;
        let mut u = [false; 8];
        u[0] = true;
        assert_relative_eq!(load_energy(&u, &desired).1, 0.2);
        assert_relative_eq!(load_energy(&[true; 8], &desired).1, 0.5);
        assert_eq!(load_energy(&[false; 8], &desired).1, 0.0);
    }

    #[test]
    fn startup_power_examples() {
        let mut s = default_parameters::<f64>().startup;
        assert_relative_eq!(ac_startup_power(&s, 3.0), 10.5, epsilon = 1e-12);
        s.alpha_i = 3.0;
        assert_relative_eq!(ac_startup_power(&s, 3.0), 6.3, epsilon = 1e-12);
        assert_eq!(ac_startup_power(&s, 0.0), 0.0);
    }

    #[test]
    fn action_validation() {
        let mut a = ActionVector::<f64>::idle(AcMode::Cool);
        assert!(a.validate("h1", DerClass::NoDer).is_ok());
        a.c = 1.0;
        a.d = 1.0;
        let e = a.validate("h1", DerClass::PvAndBattery).unwrap_err();
        assert!(e.to_string().contains("h1") && e.to_string().contains("c * d"));
        a.d = 0.0;
        assert!(a.validate("h2", DerClass::PvOnly).is_err());
        a.c = 0.0;
        a.u_pv = 0.5;
        assert!(a.validate("h2", DerClass::BatteryOnly).is_err());
        assert!(a.validate("h2", DerClass::PvOnly).is_ok());
        a.u_pv = 1.5;
        assert!(a.validate("h2", DerClass::PvOnly).is_err());
    }

    #[test]
    fn f32_thermal_matches_f64() {
        let p32 = ThermalParams::<f32> {
            a: 0.9,
            d: 0.1,
            cop: 3.0,
            p_ac_rated: 3.0,
            q_coeff: 1.0,
        };
        assert!((thermal_step(20.0f32, true, AcMode::Cool, 30.0, &p32) - 12.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn battery_stays_in_bounds(e0 in 0.0..=13.5f64, cmd in 0.0..=1.0f64, charge in any::<bool>(), mis in 0.0..5.0f64) {
            let b = battery();
            let (c, d) = if charge { (cmd, 0.0) } else { (0.0, cmd) };
            let s = battery_step(e0, c, d, mis, &b).unwrap();
            prop_assert!(s.e_next >= b.e_min && s.e_next <= b.e_max);
            prop_assert!(s.e_c >= 0.0 && s.e_c <= b.e_charge_cap);
            prop_assert!(s.e_d >= 0.0 && s.e_d <= b.e_discharge_cap);
            prop_assert!((s.e_next - e0 - (b.eta_c * s.e_c - s.e_d / b.eta_d)).abs() < 1e-9);
        }

        #[test]
        fn pv_output_monotone(u1 in 0.0..=1.0f64, u2 in 0.0..=1.0f64, pot in 0.0..3.0f64) {
            let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            prop_assert!(pv_output(lo, pot).unwrap() <= pv_output(hi, pot).unwrap());
            prop_assert!(pv_output(hi, pot).unwrap() <= pot);
        }

        #[test]
        fn cooling_lowers_temperature(t in 10.0..40.0f64, ta in 0.0..45.0f64) {
            let p = ThermalParams::defaults(1.0 / 6.0);
            prop_assert!(thermal_step(t, true, AcMode::Cool, ta, &p) < thermal_step(t, false, AcMode::Cool, ta, &p));
        }
    }
}
