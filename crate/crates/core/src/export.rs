//! Trace and report files.
//!
//! * `trace.csv`: one row per step per house plus one `community` row per
//!   step. House-only columns are empty on community rows and vice versa.
//! * `timeseries.csv`: one wide row per step, plot-ready (PV output, stored
//!   energy, indoor temperature, served load per house, then community
//!   generation, demand and grid exchange).
//! * `metrics.toml`: [`MetricsReport`] plus run identity; wall-clock timings
//!   live only in its `[timing]` table.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::env::Trace;
use crate::metrics::{MetricsReport, TimingStats};
use crate::scalar::Scalar;

pub const TRACE_CSV_VERSION: u32 = 1;

pub const TRACE_HEADER: &[&str] = &[
    "step", "timestamp", "house", "verdict", "reason", "t_house", "e_bat", "u_ac", "u_mode", "u_pv", "c", "d", "e_pv",
    "e_pv_potential", "e_bat_c", "e_bat_d", "e_ac", "load_desired", "load_served", "p1_served", "p2_served",
    "p3_served", "p4_served", "p5_served", "p6_served", "p7_served", "p8_served", "e_gen", "e_dem", "e_mis", "e_grid",
    "p_mis_ac", "startups",
];

/// Columns of one sweep summary row, in table order.
pub const SUMMARY_HEADER: &[&str] = &[
    "case", "trm_h", "lrm_cri", "lrm_o", "lgr", "mean_ms", "p95_ms", "max_ms", "status",
];

fn num<T: Scalar>(x: T) -> String {
    format!("{}", x.as_f64())
}

fn stamp<T>(trace: &Trace<T>, k: usize) -> String {
    trace.timestamps.get(k).cloned().unwrap_or_default()
}

pub fn write_trace_csv<T: Scalar, W: Write>(trace: &Trace<T>, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        let (k, ts) = (r.step.to_string(), stamp(trace, r.step));
        let verdict = format!("{:?}", r.outcome.verdict).to_lowercase();
        let reason = format!("{:?}", r.outcome.reason).to_lowercase();
        for (i, id) in trace.house_ids.iter().enumerate() {
            let (a, e) = (&r.actions[i], &r.energies[i]);
            let mut row = vec![
                k.clone(),
                ts.clone(),
                id.clone(),
                verdict.clone(),
                reason.clone(),
                num(r.t_house[i]),
                num(r.e_bat[i]),
                (a.u_ac as u8).to_string(),
                a.u_mode.to_string(),
                num(a.u_pv),
                num(a.c),
                num(a.d),
                num(e.e_pv),
                num(e.e_pv_potential),
                num(e.e_bat_c),
                num(e.e_bat_d),
                num(e.e_ac),
                num(r.desired[i].iter().copied().sum::<T>()),
                num(e.e_load_total),
            ];
            row.extend(e.e_loads.iter().map(|x| num(*x)));
            row.extend(std::iter::repeat_n(String::new(), 6));
            out.write_record(&row)?;
        }
        let mut row = vec![k, ts, "community".into(), verdict, reason];
        row.extend(std::iter::repeat_n(String::new(), 12));
        row.push(num(r.desired_total()));
        row.push(num(r.served_total()));
        row.extend(std::iter::repeat_n(String::new(), 8));
        let b = &r.balance;
        row.extend([num(b.e_gen), num(b.e_dem), num(b.e_mis), num(b.e_grid), num(r.candidate.p_mis_ac)]);
        row.push(r.candidate.startup_flags.iter().filter(|f| **f).count().to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_timeseries_csv<T: Scalar, W: Write>(trace: &Trace<T>, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["step".to_string(), "timestamp".into()];
    for id in &trace.house_ids {
        for q in ["pv", "e_bat", "t_house", "load_served"] {
            header.push(format!("{id}_{q}"));
        }
    }
    header.extend(["e_gen", "e_dem", "e_grid", "ghi", "t_ambient"].map(String::from));
    out.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![r.step.to_string(), stamp(trace, r.step)];
        for i in 0..trace.house_ids.len() {
            let e = &r.energies[i];
            row.extend([num(e.e_pv), num(r.e_bat[i]), num(r.t_house[i]), num(e.e_load_total)]);
        }
        row.extend([num(r.balance.e_gen), num(r.balance.e_dem), num(r.balance.e_grid), num(r.ghi), num(r.t_ambient)]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    scenario: &'a str,
    controller: &'a str,
    grid_mode: String,
    seed: u64,
    steps: usize,
    scenario_digest: &'a str,
    trace_digest: String,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

/// Metrics report as TOML. `lgr` is omitted when undefined.
pub fn metrics_toml<T: Scalar>(trace: &Trace<T>, report: &MetricsReport) -> String {
    let f = MetricsFile {
        scenario: &trace.scenario,
        controller: &trace.controller,
        grid_mode: trace.grid_mode.to_string(),
        seed: trace.seed,
        steps: trace.len(),
        scenario_digest: &trace.scenario_digest,
        trace_digest: trace.content_digest(),
        report,
    };
    toml::to_string(&f).expect("metrics serialize")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into())
}

/// One summary row in [`SUMMARY_HEADER`] order.
pub fn summary_row(case: &str, report: Option<&MetricsReport>, status: &str) -> Vec<String> {
    let mut row = vec![case.to_string()];
    match report {
        Some(m) => {
            row.extend([m.trm_h, m.lrm_cri, m.lrm_o].map(|v| format!("{v:.4}")));
            row.push(fmt_opt(m.lgr));
            let t: Option<&TimingStats> = m.timing.as_ref();
            row.push(fmt_opt(t.map(|t| t.mean_ms)));
            row.push(fmt_opt(t.map(|t| t.p95_ms)));
            row.push(fmt_opt(t.map(|t| t.max_ms)));
        }
        None => row.extend(std::iter::repeat_n("NA".to_string(), 7)),
    }
    row.push(status.to_string());
    row
}

/// Paths written by [`write_run`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub trace_csv: PathBuf,
    pub timeseries_csv: PathBuf,
    pub metrics_toml: PathBuf,
}

/// Writes the three run artifacts into `dir` (created if missing).
pub fn write_run<T: Scalar>(dir: &Path, trace: &Trace<T>, report: &MetricsReport) -> std::io::Result<RunArtifacts> {
    std::fs::create_dir_all(dir)?;
    let a = RunArtifacts {
        trace_csv: dir.join("trace.csv"),
        timeseries_csv: dir.join("timeseries.csv"),
        metrics_toml: dir.join("metrics.toml"),
    };
    let io = |e: csv::Error| std::io::Error::other(e);
    write_trace_csv(trace, std::io::BufWriter::new(std::fs::File::create(&a.trace_csv)?)).map_err(io)?;
    write_timeseries_csv(trace, std::io::BufWriter::new(std::fs::File::create(&a.timeseries_csv)?)).map_err(io)?;
    std::fs::write(&a.metrics_toml, metrics_toml(trace, report))?;
    Ok(a)
}
