//! NSRDB-style weather CSV ingestion and resampling.
//!
//! Accepted layouts:
//! * a `timestamp` (or `time` / `datetime`) column with ISO-8601 values, or
//!   NSRDB's `Year, Month, Day, Hour, Minute` columns;
//! * `GHI` (W/m²), `Temperature` (°C) and `Wind Speed` (m/s) columns, matched
//!   case-insensitively with unit suffixes such as `(W/m2)` ignored.
//!
//! NSRDB metadata rows above the header are skipped. Empty cells are
//! forward-filled for at most [`MAX_FILL`] consecutive rows.
//!
//! Resampling to the simulation step: GHI and wind are averaged over each
//! target step, temperature is sampled at the step start (exact interpolation
//! on a divisor grid). A trailing partial step is dropped.

use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};

use super::{normalize_header, open, parse_timestamp, step_delta, DataError, WeatherSeries};
use crate::scalar::Scalar;

/// Longest run of empty cells that is forward-filled.
pub const MAX_FILL: usize = 3;

#[derive(Debug, Clone, Copy, Default)]
pub struct WeatherOptions {
    /// Linearly interpolate when the file is coarser than the target step.
    pub allow_upsample: bool,
}

#[derive(Debug, Clone, Copy)]
enum TimeCols {
    Stamp(usize),
    Parts { year: usize, month: usize, day: usize, hour: usize, minute: usize },
}

struct Native {
    times: Vec<NaiveDateTime>,
    ghi: Vec<f64>,
    temp: Vec<f64>,
    wind: Vec<f64>,
}

pub fn load_weather_csv<T: Scalar>(path: &Path, dt_hours: f64, opts: WeatherOptions) -> Result<WeatherSeries<T>, DataError> {
    let text = open(path, "weather")?;
    let native = parse(path, &text)?;
    let target = step_delta(dt_hours).ok_or_else(|| DataError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        message: format!("dt_hours {dt_hours} is not a whole number of seconds"),
    })?;
    let series = resample(&native, target, opts)?;
    Ok(WeatherSeries {
        timestamps: series.times,
        ghi: series.ghi.into_iter().map(T::lit).collect(),
        t_ambient: series.temp.into_iter().map(T::lit).collect(),
        wind_speed: series.wind.into_iter().map(T::lit).collect(),
    })
}

fn parse(path: &Path, text: &str) -> Result<Native, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;

    let header_idx = rows
        .iter()
        .take(5)
        .position(|r| r.iter().any(|h| normalize_header(h) == "ghi"))
        .ok_or_else(|| DataError::MissingColumn {
            path: path.to_path_buf(),
            column: "GHI".into(),
        })?;
    let header: Vec<String> = rows[header_idx].iter().map(normalize_header).collect();
    let find = |names: &[&str]| header.iter().position(|h| names.contains(&h.as_str()));
    let missing = |c: &str| DataError::MissingColumn {
        path: path.to_path_buf(),
        column: c.into(),
    };

    let ghi_col = find(&["ghi"]).ok_or_else(|| missing("GHI"))?;
    let temp_col = find(&["temperature", "temp", "t ambient", "temp air", "air temperature"])
        .ok_or_else(|| missing("Temperature"))?;
    let wind_col = find(&["wind speed", "windspeed", "wind"]).ok_or_else(|| missing("Wind Speed"))?;
    let time_cols = match find(&["timestamp", "time", "datetime", "localminute"]) {
        Some(c) => TimeCols::Stamp(c),
        None => TimeCols::Parts {
            year: find(&["year"]).ok_or_else(|| missing("timestamp or Year"))?,
            month: find(&["month"]).ok_or_else(|| missing("Month"))?,
            day: find(&["day"]).ok_or_else(|| missing("Day"))?,
            hour: find(&["hour"]).ok_or_else(|| missing("Hour"))?,
            minute: find(&["minute"]).ok_or_else(|| missing("Minute"))?,
        },
    };

    let mut out = Native {
        times: Vec::new(),
        ghi: Vec::new(),
        temp: Vec::new(),
        wind: Vec::new(),
    };
    let mut last: [Option<f64>; 3] = [None; 3];
    let mut run = [0usize; 3];
    for (offset, row) in rows[header_idx + 1..].iter().enumerate() {
        let line = header_idx + offset + 2;
        if row.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let malformed = |message: String| DataError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let t = row_time(row, time_cols).ok_or_else(|| malformed("unparseable timestamp".into()))?;
        let mut vals = [0.0; 3];
        for (j, (col, name)) in [(ghi_col, "GHI"), (temp_col, "Temperature"), (wind_col, "Wind Speed")]
            .into_iter()
            .enumerate()
        {
            let cell = row.get(col).unwrap_or("").trim();
            if cell.is_empty() {
                run[j] += 1;
                let prev = last[j].ok_or_else(|| malformed(format!("empty {name} with no earlier value to fill from")))?;
                if run[j] > MAX_FILL {
                    return Err(malformed(format!("more than {MAX_FILL} consecutive empty {name} values")));
                }
                vals[j] = prev;
            } else {
                let v: f64 = cell.parse().map_err(|_| malformed(format!("bad {name} value `{cell}`")))?;
                if !v.is_finite() {
                    return Err(malformed(format!("non-finite {name} value")));
                }
                if j != 1 && v < 0.0 {
                    return Err(malformed(format!("negative {name} value {v}")));
                }
                run[j] = 0;
                last[j] = Some(v);
                vals[j] = v;
            }
        }
        if let Some(&prev) = out.times.last() {
            if t <= prev {
                return Err(malformed(format!("non-monotonic timestamp {t} after {prev}")));
            }
            if out.times.len() >= 2 {
                let native = out.times[1] - out.times[0];
                let gap = t - prev;
                if gap > native {
                    return Err(malformed(format!("gap of {} min exceeds the native step", gap.num_minutes())));
                }
                if gap != native {
                    return Err(malformed("irregular timestamp spacing".into()));
                }
            }
        }
        out.times.push(t);
        out.ghi.push(vals[0]);
        out.temp.push(vals[1]);
        out.wind.push(vals[2]);
    }
    if out.times.len() < 2 {
        return Err(DataError::Malformed {
            path: path.to_path_buf(),
            line: header_idx + 1,
            message: "need at least two data rows".into(),
        });
    }
    Ok(out)
}

fn row_time(row: &csv::StringRecord, cols: TimeCols) -> Option<NaiveDateTime> {
    match cols {
        TimeCols::Stamp(c) => parse_timestamp(row.get(c)?),
        TimeCols::Parts { year, month, day, hour, minute } => {
            let num = |c: usize| row.get(c)?.trim().parse::<u32>().ok();
            let date = NaiveDate::from_ymd_opt(row.get(year)?.trim().parse().ok()?, num(month)?, num(day)?)?;
            date.and_hms_opt(num(hour)?, num(minute)?, 0)
        }
    }
}

fn resample(n: &Native, target: TimeDelta, opts: WeatherOptions) -> Result<Native, DataError> {
    let native = n.times[1] - n.times[0];
    let (ns, ts) = (native.num_seconds(), target.num_seconds());
    let minutes = |s: i64| s as f64 / 60.0;
    if ns == ts {
        return Ok(Native {
            times: n.times.clone(),
            ghi: n.ghi.clone(),
            temp: n.temp.clone(),
            wind: n.wind.clone(),
        });
    }
    if ns > ts {
        if !opts.allow_upsample {
            return Err(DataError::CoarserThanTarget {
                native_min: minutes(ns),
                target_min: minutes(ts),
            });
        }
        return Ok(interpolate(n, target));
    }
    if ts % ns != 0 {
        return Err(DataError::NotMultiple {
            native_min: minutes(ns),
            target_min: minutes(ts),
        });
    }
    let r = (ts / ns) as usize;
    let blocks = n.times.len() / r;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut out = Native {
        times: Vec::with_capacity(blocks),
        ghi: Vec::with_capacity(blocks),
        temp: Vec::with_capacity(blocks),
        wind: Vec::with_capacity(blocks),
    };
    for b in 0..blocks {
        let range = b * r..(b + 1) * r;
        out.times.push(n.times[b * r]);
        out.ghi.push(mean(&n.ghi[range.clone()]));
        out.temp.push(n.temp[b * r]);
        out.wind.push(mean(&n.wind[range]));
    }
    Ok(out)
}

fn interpolate(n: &Native, target: TimeDelta) -> Native {
    let t0 = n.times[0];
    let end = *n.times.last().expect("nonempty");
    let ns = (n.times[1] - t0).num_seconds() as f64;
    let mut out = Native {
        times: Vec::new(),
        ghi: Vec::new(),
        temp: Vec::new(),
        wind: Vec::new(),
    };
    let lerp = |v: &[f64], i: usize, f: f64| if f == 0.0 { v[i] } else { v[i] + (v[i + 1] - v[i]) * f };
    let mut t = t0;
    while t <= end {
        let pos = (t - t0).num_seconds() as f64 / ns;
        let i = (pos.floor() as usize).min(n.times.len() - 1);
        let f = pos - i as f64;
        out.times.push(t);
        out.ghi.push(lerp(&n.ghi, i, f));
        out.temp.push(lerp(&n.temp, i, f));
        out.wind.push(lerp(&n.wind, i, f));
        t += target;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn iso_rows(minutes: i64, rows: &[(f64, f64, f64)]) -> String {
        let t0 = NaiveDate::from_ymd_opt(2017, 9, 11).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let mut s = String::from("timestamp,GHI,Temperature,Wind Speed\n");
        for (i, (g, t, w)) in rows.iter().enumerate() {
            let ts = t0 + TimeDelta::minutes(minutes * i as i64);
            s.push_str(&format!("{},{g},{t},{w}\n", ts.format("%Y-%m-%dT%H:%M:%S")));
        }
        s
    }

    const DT: f64 = 1.0 / 6.0;

    #[test]
    fn five_minute_ghi_averages_into_ten_minute_step() {
        let f = write(&iso_rows(5, &[(600.0, 20.0, 1.0), (800.0, 21.0, 3.0), (0.0, 22.0, 0.0), (0.0, 23.0, 0.0)]));
        let w: WeatherSeries<f64> = load_weather_csv(f.path(), DT, WeatherOptions::default()).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.ghi[0], 700.0);
        assert_eq!(w.wind_speed[0], 2.0);
        assert_eq!(w.t_ambient[1], 22.0);
        w.check(DT).unwrap();
    }

    #[test]
    fn constant_ghi_is_a_fixed_point() {
        let rows = vec![(1000.0, 25.0, 2.0); 12];
        let f = write(&iso_rows(5, &rows));
        let w: WeatherSeries<f64> = load_weather_csv(f.path(), DT, WeatherOptions::default()).unwrap();
        assert_eq!(w.len(), 6);
        assert!(w.ghi.iter().all(|&g| g == 1000.0));
    }

    #[test]
    fn coarser_native_needs_upsample_flag() {
        let rows = vec![(0.0, 20.0, 1.0), (300.0, 23.0, 2.0), (600.0, 26.0, 3.0)];
        let f = write(&iso_rows(30, &rows));
        let err = load_weather_csv::<f64>(f.path(), DT, WeatherOptions::default()).unwrap_err();
        assert!(err.to_string().contains("native resolution coarser than target"));

        let w: WeatherSeries<f64> = load_weather_csv(f.path(), DT, WeatherOptions { allow_upsample: true }).unwrap();
        assert_eq!(w.len(), 7);
        assert!((w.ghi[1] - 100.0).abs() < 1e-12);
        assert!((w.t_ambient[4] - 24.0).abs() < 1e-12);
        assert_eq!(w.ghi[6], 600.0);
    }

    #[test]
    fn nsrdb_layout_with_metadata_rows() {
        let text = "Source,Location ID,City\nNSRDB,123,Gainesville\nYear,Month,Day,Hour,Minute,GHI,Temperature,Wind Speed\n\
2017,9,11,0,0,0,24.5,3.1\n2017,9,11,0,10,0,24.4,3.0\n2017,9,11,0,20,0,24.3,2.9\n";
        let f = write(text);
        let w: WeatherSeries<f64> = load_weather_csv(f.path(), DT, WeatherOptions::default()).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.t_ambient[2], 24.3);
    }

    #[test]
    fn missing_column_and_gaps_are_reported() {
        let f = write("timestamp,GHI,Temperature\n2017-09-11T00:00:00,0,20\n");
        assert!(matches!(
            load_weather_csv::<f64>(f.path(), DT, WeatherOptions::default()),
            Err(DataError::MissingColumn { .. })
        ));

        let f = write("timestamp,GHI,Temperature,Wind Speed\n2017-09-11T00:00:00,0,20,1\n2017-09-11T00:10:00,0,20,1\n2017-09-11T00:30:00,0,20,1\n");
        let err = load_weather_csv::<f64>(f.path(), DT, WeatherOptions::default()).unwrap_err();
        assert!(err.to_string().contains("line 4") && err.to_string().contains("gap"), "{err}");

        let f = write("timestamp,GHI,Temperature,Wind Speed\n2017-09-11T00:10:00,0,20,1\n2017-09-11T00:00:00,0,20,1\n");
        let err = load_weather_csv::<f64>(f.path(), DT, WeatherOptions::default()).unwrap_err();
        assert!(err.to_string().contains("non-monotonic"), "{err}");
    }

    #[test]
    fn short_blank_runs_are_forward_filled() {
        let mut s = String::from("timestamp,GHI,Temperature,Wind Speed\n");
        let cells = ["5", "", "", "", "7"];
        for (i, c) in cells.iter().enumerate() {
            s.push_str(&format!("2017-09-11T00:{:02}:00,{c},20,1\n", i * 10));
        }
        let w: WeatherSeries<f64> = load_weather_csv(write(&s).path(), DT, WeatherOptions::default()).unwrap();
        assert_eq!(w.ghi, vec![5.0, 5.0, 5.0, 5.0, 7.0]);

        let mut s = String::from("timestamp,GHI,Temperature,Wind Speed\n");
        for i in 0..6 {
            let c = if i == 0 { "5" } else { "" };
            s.push_str(&format!("2017-09-11T00:{:02}:00,{c},20,1\n", i * 10));
        }
        let f = write(&s);
        let err = load_weather_csv::<f64>(f.path(), DT, WeatherOptions::default()).unwrap_err();
        assert!(err.to_string().contains("consecutive empty GHI"), "{err}");
    }

    #[test]
    fn missing_file_names_the_weather_input() {
        let err = load_weather_csv::<f64>(Path::new("/nonexistent/w.csv"), DT, WeatherOptions::default()).unwrap_err();
        assert!(err.to_string().starts_with("weather file not found"));
    }
}
