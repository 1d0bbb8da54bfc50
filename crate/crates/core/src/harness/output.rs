//! CSV and plot-data rendering, and all-or-nothing file emission.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::revocation_analytics::{sweep_csv, SweepRow};
use crate::schemes::RevocationScheme;

use super::config::{Experiment, MobilityModel};
use super::run::{RunRecord, SummaryRow};
use super::{ExperimentResult, HarnessError};

pub const RUN_HEADER: &str = "scheme,seed,vehicles,rsus,managers,area_km2,delay_ms,messages_sent,rsu_targets,\
vehicles_warned,intended,delivery_ratio,t_e2e_s,model,x,moot,rsu_messages,tracking_messages,security_events";

pub const SUMMARY_HEADER: &str = "model,x,scheme,runs,moot,messages_mean,messages_ci95,rsu_messages_mean,\
rsu_messages_ci95,delivery_ratio,delivery_ratio_ci95,t_e2e_mean_s,t_e2e_ci95_s,tracking_mean,tracking_ci95";

/// File stems: per-run CSV, figure file, and for E3 the analytic pair.
pub fn file_names(exp: Experiment) -> (&'static str, &'static str, Option<(&'static str, &'static str)>) {
    match exp {
        Experiment::E1 => ("e1_speed.csv", "fig10.dat", None),
        Experiment::E2 => ("e2_density.csv", "fig11.dat", None),
        Experiment::E3 => ("e3_area.csv", "fig12.dat", Some(("e3_area_analytic.csv", "fig13.dat"))),
        Experiment::E4 => ("e4_delay.csv", "fig14.dat", None),
        Experiment::E5 => ("e5_delivery.csv", "fig15.dat", None),
        Experiment::E6 => ("e6_managers.csv", "fig16.dat", None),
        Experiment::Custom => ("custom_runs.csv", "custom.dat", None),
    }
}

fn comment_block(config_text: &str) -> String {
    config_text.lines().map(|l| format!("# {l}\n")).collect()
}

pub fn runs_csv(config_text: &str, records: &[RunRecord]) -> String {
    let mut out = comment_block(config_text);
    out.push_str(RUN_HEADER);
    out.push('\n');
    for r in records {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{},{},{},{},{},{}",
            r.scheme,
            r.seed,
            r.vehicles,
            r.rsus,
            r.managers,
            r.area_km2,
            r.delay_ms,
            m.messages_sent,
            m.rsu_targets,
            m.vehicles_warned,
            m.intended_recipients,
            m.delivery_ratio,
            m.t_e2e_measured,
            r.model,
            r.x,
            u8::from(m.moot),
            m.rsu_messages,
            m.tracking_messages,
            r.security_events
        );
    }
    out
}

pub fn summary_csv(config_text: &str, rows: &[SummaryRow]) -> String {
    let mut out = comment_block(config_text);
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for s in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}",
            s.model,
            s.x,
            s.scheme,
            s.runs,
            s.moot,
            s.messages.mean,
            s.messages.half_width,
            s.rsu_messages.mean,
            s.rsu_messages.half_width,
            s.delivery_ratio.mean,
            s.delivery_ratio.half_width,
            s.t_e2e.mean,
            s.t_e2e.half_width,
            s.tracking.mean,
            s.tracking.half_width
        );
    }
    out
}

/// Plot data: the sweep value, then mean and half-width per model and
/// scheme.
pub fn figure_dat(title: &str, axis: &str, rows: &[SummaryRow], metric: fn(&SummaryRow) -> (f64, f64)) -> String {
    let series: BTreeSet<(MobilityModel, RevocationScheme)> = rows.iter().map(|r| (r.model, r.scheme)).collect();
    let xs: BTreeSet<usize> = rows.iter().map(|r| r.point).collect();
    let mut out = format!("# {title}\n# {axis}");
    for (m, s) in &series {
        let _ = write!(out, " {m}_{s} {m}_{s}_ci95");
    }
    out.push('\n');
    for p in xs {
        let x = rows.iter().find(|r| r.point == p).map_or(0.0, |r| r.x);
        let _ = write!(out, "{x}");
        for (m, s) in &series {
            match rows.iter().find(|r| r.point == p && r.model == *m && r.scheme == *s) {
                Some(r) => {
                    let (mean, ci) = metric(r);
                    let _ = write!(out, " {mean:.6} {ci:.6}");
                }
                None => out.push_str(" nan nan"),
            }
        }
        out.push('\n');
    }
    out
}

/// Analytic plot data: x, then DYN (m) and BRD (N) per model.
pub fn analytic_dat(title: &str, axis: &str, rows: &[SweepRow], xs: &[f64]) -> String {
    let models: Vec<&str> = rows.iter().fold(Vec::new(), |mut acc, r| {
        if !acc.contains(&r.model.as_str()) {
            acc.push(r.model.as_str());
        }
        acc
    });
    let mut out = format!("# {title}\n# {axis}");
    for m in &models {
        let _ = write!(out, " {m}_DYN {m}_BRD");
    }
    out.push('\n');
    let per_model = xs.len();
    for (i, x) in xs.iter().enumerate() {
        let _ = write!(out, "{x}");
        for k in 0..models.len() {
            let r = &rows[k * per_model + i];
            let _ = write!(out, " {} {}", r.m_msgs, r.brd_msgs);
        }
        out.push('\n');
    }
    out
}

fn analytic_csv(config_text: &str, rows: &[SweepRow]) -> String {
    comment_block(config_text) + &sweep_csv(rows)
}

/// Every file an experiment produces, as (name, contents).
pub fn render(result: &ExperimentResult) -> Result<Vec<(String, String)>, HarnessError> {
    let exp = result.config.experiment;
    let text = result.config.to_key_values();
    let (runs_name, fig_name, extra) = file_names(exp);
    let mut files = Vec::new();
    if exp == Experiment::E1 {
        if result.analytic.is_empty() {
            return Err(HarnessError::EmptyTable);
        }
        files.push((runs_name.to_string(), analytic_csv(&text, &result.analytic)));
        files.push((
            fig_name.to_string(),
            analytic_dat(
                "fig10: messages to revoke, analytic",
                "v_kmh",
                &result.analytic,
                &result.config.sweep,
            ),
        ));
        return Ok(files);
    }
    if result.runs.is_empty() || result.summary.is_empty() {
        return Err(HarnessError::EmptyTable);
    }
    files.push((runs_name.to_string(), runs_csv(&text, &result.runs)));
    let stem = runs_name.trim_end_matches(".csv");
    files.push((format!("{stem}_summary.csv"), summary_csv(&text, &result.summary)));
    let axis = exp.axis();
    let fig = match exp {
        Experiment::E5 => figure_dat("fig15: delivery ratio", axis, &result.summary, |r| {
            (r.delivery_ratio.mean, r.delivery_ratio.half_width)
        }),
        _ => figure_dat(
            &format!("{}: revocation messages sent", fig_name.trim_end_matches(".dat")),
            axis,
            &result.summary,
            |r| (r.messages.mean, r.messages.half_width),
        ),
    };
    files.push((fig_name.to_string(), fig));
    if let Some((csv, dat)) = extra {
        if result.analytic.is_empty() {
            return Err(HarnessError::EmptyTable);
        }
        files.push((csv.to_string(), analytic_csv(&text, &result.analytic)));
        files.push((
            dat.to_string(),
            analytic_dat(
                "fig13: messages to revoke by area, analytic",
                "area_km2",
                &result.analytic,
                &result.config.sweep,
            ),
        ));
    }
    Ok(files)
}

/// Writes every file to a temporary name first and renames only once all
/// writes succeeded.
pub fn write_all(out_dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>, HarnessError> {
    if files.is_empty() {
        return Err(HarnessError::EmptyTable);
    }
    fs::create_dir_all(out_dir)?;
    let pid = std::process::id();
    let mut staged = Vec::new();
    for (name, contents) in files {
        let tmp = out_dir.join(format!(".{name}.{pid}.tmp"));
        if let Err(e) = fs::write(&tmp, contents) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        staged.push((tmp, out_dir.join(name)));
    }
    let mut written = Vec::new();
    for (tmp, dst) in staged {
        fs::rename(&tmp, &dst)?;
        written.push(dst);
    }
    Ok(written)
}
