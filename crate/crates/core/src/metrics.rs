//! Community performance metrics computed from a [`Trace`].
//!
//! Ratios are accumulated in f64 whatever the trace's scalar type.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{StepRecord, Trace};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("trace has no steps")]
    EmptyTrace,
    #[error("trace has no step timings")]
    NoTimings,
}

/// Which zero-denominator conventions were applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    /// No critical load was desired; `lrm_cri` reported as 1.
    pub no_critical_demand: bool,
    /// No load was desired; `lrm_o` reported as 1.
    pub no_demand: bool,
    /// Community demand was zero; `lgr` absent.
    pub lgr_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseMetrics {
    pub id: String,
    pub trm_h: f64,
    pub lrm_cri: f64,
    pub lrm_o: f64,
    pub trm_deviation_degc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub trm_h: f64,
    pub lrm_cri: f64,
    pub lrm_o: f64,
    pub lgr: Option<f64>,
    /// Summed degrees outside the comfort band over houses and steps.
    pub trm_deviation_degc: f64,
    /// Share of steps not blacked out.
    pub served_fraction: f64,
    pub flags: MetricFlags,
    pub houses: Vec<HouseMetrics>,
    pub timing: Option<TimingStats>,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den > 0.0 {
        ((num / den).clamp(0.0, 1.0), false)
    } else {
        (1.0, true)
    }
}

fn load_sums<T: Scalar>(records: &[StepRecord<T>], house: Option<usize>) -> (f64, f64, f64, f64) {
    let (mut cri_s, mut cri_d, mut all_s, mut all_d) = (0.0, 0.0, 0.0, 0.0);
    for r in records {
        for (i, (e, d)) in r.energies.iter().zip(&r.desired).enumerate() {
            if house.is_some_and(|h| h != i) {
                continue;
            }
            cri_s += e.e_loads[0].as_f64();
            cri_d += d[0].as_f64();
            all_s += e.e_loads.iter().map(|x| x.as_f64()).sum::<f64>();
            all_d += d.iter().map(|x| x.as_f64()).sum::<f64>();
        }
    }
    (cri_s, cri_d, all_s, all_d)
}

/// Σ served P1 / Σ desired P1; 1 when nothing critical was desired.
pub fn lrm_critical<T: Scalar>(trace: &Trace<T>) -> f64 {
    let (s, d, _, _) = load_sums(&trace.records, None);
    ratio(s, d).0
}

/// Σ served / Σ desired over all priorities; 1 when nothing was desired.
pub fn lrm_other<T: Scalar>(trace: &Trace<T>) -> f64 {
    let (_, _, s, d) = load_sums(&trace.records, None);
    ratio(s, d).0
}

fn in_band<T: Scalar>(t: T, band: (T, T)) -> bool {
    t >= band.0 && t <= band.1
}

fn deviation<T: Scalar>(t: T, band: (T, T)) -> f64 {
    ((band.0 - t).max(T::zero()) + (t - band.1).max(T::zero())).as_f64()
}

/// Fraction of (house, step) pairs with the indoor temperature inside the
/// house's comfort band. Errors on an empty trace.
pub fn trm_thermal<T: Scalar>(trace: &Trace<T>) -> Result<f64, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let mut inside = 0usize;
    let mut total = 0usize;
    for r in &trace.records {
        for (t, b) in r.t_house.iter().zip(&trace.bands) {
            inside += in_band(*t, *b) as usize;
            total += 1;
        }
    }
    Ok(inside as f64 / total as f64)
}

/// Σ over houses and steps of `[t_low - T]_+ + [T - t_high]_+`, °C.
pub fn trm_deviation<T: Scalar>(trace: &Trace<T>) -> f64 {
    trace
        .records
        .iter()
        .flat_map(|r| r.t_house.iter().zip(&trace.bands).map(|(t, b)| deviation(*t, *b)))
        .sum()
}

/// Σ e_gen / Σ e_dem over the episode; `None` when demand is zero.
pub fn lgr<T: Scalar>(trace: &Trace<T>) -> Option<f64> {
    let (g, d) = trace.records.iter().fold((0.0, 0.0), |(g, d), r| {
        (g + r.balance.e_gen.as_f64(), d + r.balance.e_dem.as_f64())
    });
    (d > 0.0).then(|| g / d)
}

/// Mean, nearest-rank 95th percentile and maximum of per-step timings.
pub fn timing_stats(step_ms: &[f64]) -> Result<TimingStats, MetricsError> {
    if step_ms.is_empty() {
        return Err(MetricsError::NoTimings);
    }
    let mut v = step_ms.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Ok(TimingStats {
        mean_ms: v.iter().sum::<f64>() / n as f64,
        p95_ms: v[rank - 1],
        max_ms: v[n - 1],
        steps: n,
    })
}

pub fn compute<T: Scalar>(trace: &Trace<T>) -> Result<MetricsReport, MetricsError> {
    let trm_h = trm_thermal(trace)?;
    let (cs, cd, s, d) = load_sums(&trace.records, None);
    let (lrm_cri, no_cri) = ratio(cs, cd);
    let (lrm_o, no_dem) = ratio(s, d);
    let lgr = lgr(trace);
    let served = trace.records.iter().filter(|r| r.outcome.served()).count();
    let houses = trace
        .house_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let (cs, cd, s, d) = load_sums(&trace.records, Some(i));
            let b = trace.bands[i];
            let temps = trace.records.iter().map(|r| r.t_house[i]);
            let inside = temps.clone().filter(|t| in_band(*t, b)).count();
            HouseMetrics {
                id: id.clone(),
                trm_h: inside as f64 / trace.len() as f64,
                lrm_cri: ratio(cs, cd).0,
                lrm_o: ratio(s, d).0,
                trm_deviation_degc: temps.map(|t| deviation(t, b)).sum(),
            }
        })
        .collect();
    Ok(MetricsReport {
        trm_h,
        lrm_cri,
        lrm_o,
        lgr,
        trm_deviation_degc: trm_deviation(trace),
        served_fraction: served as f64 / trace.len() as f64,
        flags: MetricFlags {
            no_critical_demand: no_cri,
            no_demand: no_dem,
            lgr_undefined: lgr.is_none(),
        },
        houses,
        timing: timing_stats(&trace.step_ms).ok(),
    })
}
