//! Seeded synthetic weather and load profiles.
//!
//! Algorithm (all arithmetic in `f64`, converted at the end):
//! * GHI: `peak * max(0, sin(pi * (h - 6) / 12)) * cloud_day * (1 + 0.08 n)`,
//!   clipped at 0, where `cloud_day = 1 - cloudiness * u` is drawn once per day.
//! * Ambient temperature: `t_mean + t_range / 2 * sin(2 pi (h - 9) / 24) + 0.3 n`.
//! * Wind: `max(0, wind_mean + 0.8 n)`.
//! * Load of priority j: `mean_kw[j] * occupancy(h) * LogNormal(-s^2/2, s) * dt`,
//!   with occupancy 0.7 at night (h < 6), 1.3 in the morning (6-9) and evening
//!   (17-23), 0.9 otherwise.
//!
//! `n` is standard normal and `u` uniform on [0, 1). Weather uses ChaCha8
//! stream 0 of `seed`; house `i` uses stream `i + 1`, so adding houses leaves
//! the weather and earlier houses unchanged.

use std::f64::consts::PI;

use chrono::{NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{parse_timestamp, step_delta, DataError, LoadSeries, PriorityEnergies, WeatherSeries};
use crate::config::N_PRIORITIES;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct SynthSpec<T> {
    pub days: f64,
    /// Clear-sky noon irradiance, W/m².
    pub peak_ghi: T,
    pub t_mean: T,
    /// Peak-to-peak diurnal temperature swing, °C.
    pub t_range: T,
    pub wind_mean: T,
    /// Mean power of each priority group, kW (P1 first).
    pub load_mean_kw: [T; N_PRIORITIES],
    /// Log-space standard deviation of the load noise.
    pub load_sigma: T,
    /// 0 = always clear, 1 = fully overcast days possible.
    pub cloudiness: T,
    /// Timestamp of the first step.
    pub start: String,
}

impl<T: Scalar> Default for SynthSpec<T> {
    fn default() -> Self {
        SynthSpec {
            days: 7.0,
            peak_ghi: T::lit(850.0),
            t_mean: T::lit(28.0),
            t_range: T::lit(8.0),
            wind_mean: T::lit(3.0),
            load_mean_kw: [0.15, 0.25, 0.2, 0.2, 0.3, 0.15, 0.2, 0.3].map(T::lit),
            load_sigma: T::lit(0.35),
            cloudiness: T::lit(0.5),
            start: "2017-09-11T00:00:00".into(),
        }
    }
}

impl<T: Scalar> SynthSpec<T> {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.into()));
        if !(self.days > 0.0 && self.days.is_finite()) {
            return bad("days must be positive");
        }
        if !(self.peak_ghi >= T::zero()) {
            return bad("peak_ghi must be >= 0");
        }
        if !(self.t_range >= T::zero()) || !self.t_mean.is_finite() {
            return bad("t_mean must be finite and t_range >= 0");
        }
        if !(self.wind_mean >= T::zero()) {
            return bad("wind_mean must be >= 0");
        }
        if self.load_mean_kw.iter().any(|m| !(*m >= T::zero())) {
            return bad("load_mean_kw entries must be >= 0");
        }
        if !(self.load_sigma >= T::zero()) {
            return bad("load_sigma must be >= 0");
        }
        if !(self.cloudiness >= T::zero() && self.cloudiness <= T::one()) {
            return bad("cloudiness must lie in [0, 1]");
        }
        self.start_time()?;
        Ok(())
    }

    fn start_time(&self) -> Result<NaiveDateTime, DataError> {
        parse_timestamp(&self.start).ok_or_else(|| DataError::InvalidSpec(format!("bad start timestamp `{}`", self.start)))
    }

    /// Number of steps generated at `dt_hours`.
    pub fn steps(&self, dt_hours: f64) -> usize {
        (self.days * 24.0 / dt_hours).round() as usize
    }
}

fn occupancy(hour: f64) -> f64 {
    if hour < 6.0 {
        0.7
    } else if hour < 9.0 || (17.0..23.0).contains(&hour) {
        1.3
    } else {
        0.9
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn synth_disturbances<T: Scalar>(
    spec: &SynthSpec<T>,
    n_houses: usize,
    dt_hours: f64,
    seed: u64,
) -> Result<(WeatherSeries<T>, LoadSeries<T>), DataError> {
    spec.validate()?;
    if n_houses == 0 {
        return Err(DataError::InvalidSpec("at least one house required".into()));
    }
    let step = step_delta(dt_hours).ok_or_else(|| DataError::InvalidSpec(format!("dt_hours {dt_hours} is not whole seconds")))?;
    let start = spec.start_time()?;
    let n = spec.steps(dt_hours);
    let times: Vec<NaiveDateTime> = (0..n).map(|k| start + step * k as i32).collect();
    let hour = |t: &NaiveDateTime| t.hour() as f64 + t.minute() as f64 / 60.0 + t.second() as f64 / 3600.0;

    let peak = spec.peak_ghi.as_f64();
    let cloudiness = spec.cloudiness.as_f64();
    let (t_mean, t_amp) = (spec.t_mean.as_f64(), spec.t_range.as_f64() / 2.0);
    let wind_mean = spec.wind_mean.as_f64();

    let mut rng = stream(seed, 0);
    let mut ghi = Vec::with_capacity(n);
    let mut temp = Vec::with_capacity(n);
    let mut wind = Vec::with_capacity(n);
    let mut day = None;
    let mut cloud = 1.0;
    for t in &times {
        if day != Some(t.date()) {
            day = Some(t.date());
            cloud = 1.0 - cloudiness * rng.random::<f64>();
        }
        let h = hour(t);
        let n_g: f64 = rng.sample(StandardNormal);
        let n_t: f64 = rng.sample(StandardNormal);
        let n_w: f64 = rng.sample(StandardNormal);
        let shape = if h > 6.0 && h < 18.0 { (PI * (h - 6.0) / 12.0).sin() } else { 0.0 };
        // `+ 0.0` folds a negative zero into +0.
        let g = (peak * shape * cloud * (1.0 + 0.08 * n_g)).max(0.0) + 0.0;
        ghi.push(T::lit(g));
        temp.push(T::lit(t_mean + t_amp * (2.0 * PI * (h - 9.0) / 24.0).sin() + 0.3 * n_t));
        wind.push(T::lit((wind_mean + 0.8 * n_w).max(0.0) + 0.0));
    }

    let sigma = spec.load_sigma.as_f64();
    let noise = LogNormal::new(-sigma * sigma / 2.0, sigma).map_err(|e| DataError::InvalidSpec(e.to_string()))?;
    let means = spec.load_mean_kw.map(|m| m.as_f64());
    let mut per_house: Vec<Vec<PriorityEnergies<T>>> = Vec::with_capacity(n_houses);
    for i in 0..n_houses {
        let mut rng = stream(seed, i as u64 + 1);
        per_house.push(
            times
                .iter()
                .map(|t| {
                    let occ = occupancy(hour(t));
                    std::array::from_fn(|j| T::lit(means[j] * occ * noise.sample(&mut rng) * dt_hours))
                })
                .collect(),
        );
    }
    let refs: Vec<&[PriorityEnergies<T>]> = per_house.iter().map(Vec::as_slice).collect();
    let weather = WeatherSeries {
        timestamps: times,
        ghi,
        t_ambient: temp,
        wind_speed: wind,
    };
    Ok((weather, LoadSeries::from_houses(&refs)))
}
