//! Closed-form revocation model: reachable radius, worst-case message count,
//! share of the network used, and end-to-end latency.

use std::fmt::Write as _;

use thiserror::Error;

use crate::netsim::LinkModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

fn arg(msg: impl Into<String>) -> AnalyticsError {
    AnalyticsError::Argument(msg.into())
}

/// Distance (m) a vehicle at `v_kmh` can cover during a lifetime of `l` s.
pub fn radius(v_kmh: f64, l: f64) -> Result<f64, AnalyticsError> {
    if !(v_kmh >= 0.0) || !v_kmh.is_finite() {
        return Err(arg(format!("speed {v_kmh}")));
    }
    if !(l > 0.0) {
        return Err(arg(format!("lifetime {l}")));
    }
    // multiply before dividing: keeps whole-number cases exact
    Ok(v_kmh * l * 1000.0 / 3600.0)
}

/// RSUs passed, hence messages needed, along a straight run of length `r`
/// with inter-RSU distance `d`: `ceil(r / d) + 1`.
pub fn message_count(r: f64, d: f64) -> Result<u64, AnalyticsError> {
    if !(d > 0.0) {
        return Err(arg(format!("RSU distance {d}")));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(arg(format!("radius {r}")));
    }
    // guard against r/d landing a hair above an integer
    let blocks = (r / d - 1e-9).ceil().max(0.0);
    Ok(blocks as u64 + 1)
}

/// Share of all `n_total` RSUs addressed, in percent.
pub fn node_percentage(m: u64, n_total: u64) -> Result<f64, AnalyticsError> {
    if n_total == 0 {
        return Err(arg("N must be at least 1"));
    }
    if m > n_total {
        return Err(arg(format!("m = {m} exceeds N = {n_total}")));
    }
    Ok(m as f64 * 100.0 / n_total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingParams {
    pub t_p_ca: f64,
    pub t_ca: f64,
    pub t_p_man: f64,
    pub t_man: f64,
    pub t_p_rsu: f64,
    pub t_rsu: f64,
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let all = [
            self.t_p_ca,
            self.t_ca,
            self.t_p_man,
            self.t_man,
            self.t_p_rsu,
            self.t_rsu,
        ];
        if all.iter().any(|t| !(*t >= 0.0)) {
            return Err(arg("timings must be >= 0"));
        }
        Ok(())
    }
}

impl From<&LinkModel> for TimingParams {
    fn from(l: &LinkModel) -> Self {
        TimingParams {
            t_p_ca: l.tp_ca,
            t_ca: l.t_ca,
            t_p_man: l.tp_man,
            t_man: l.t_man,
            t_p_rsu: l.tp_rsu,
            t_rsu: l.t_rsu,
        }
    }
}

/// Revocation latency over `n` RSUs visited one after another.
pub fn e2e_time(tp: &TimingParams, n: u64) -> f64 {
    tp.t_p_ca + tp.t_ca + tp.t_p_man + tp.t_man + n as f64 * (tp.t_p_rsu + tp.t_rsu)
}

/// Latency when the manager addresses all `n` RSUs at once: the slowest
/// branch is a single RSU hop.
pub fn e2e_time_parallel(tp: &TimingParams, n: u64) -> f64 {
    let hops = n.min(1) as f64;
    tp.t_p_ca + tp.t_ca + tp.t_p_man + tp.t_man + hops * (tp.t_p_rsu + tp.t_rsu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticParams {
    pub l: f64,
    pub v: f64,
    pub d: f64,
    pub n_total: u64,
    /// RSUs in the disc of radius r. Defaults to m when absent.
    pub n_disc: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticResult {
    pub r: f64,
    pub m: u64,
    pub p: f64,
    pub t_e2e: f64,
    /// m exceeded N; p is reported for m clipped to N.
    pub saturated: bool,
    /// The n used for the latency term was taken from m.
    pub n_from_m: bool,
}

pub fn evaluate(params: &AnalyticParams, timing: &TimingParams) -> Result<AnalyticResult, AnalyticsError> {
    timing.validate()?;
    let r = radius(params.v, params.l)?;
    let m = message_count(r, params.d)?;
    let saturated = m > params.n_total;
    let p = node_percentage(m.min(params.n_total), params.n_total)?;
    let n = params.n_disc.unwrap_or(m);
    Ok(AnalyticResult {
        r,
        m,
        p,
        t_e2e: e2e_time(timing, n),
        saturated,
        n_from_m: params.n_disc.is_none(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model: String,
    pub v_kmh: f64,
    pub l_s: f64,
    pub d_m: f64,
    pub n_total: u64,
    pub r_m: f64,
    pub m_msgs: u64,
    pub p_pct: f64,
    /// The broadcast baseline addresses every RSU.
    pub brd_msgs: u64,
    pub saturated: bool,
}

pub const SWEEP_HEADER: &str = "model,v_kmh,l_s,d_m,N,r_m,m_msgs,p_pct,brd_msgs";

fn row(model: &str, v: f64, l: f64, d: f64, n_total: u64) -> Result<SweepRow, AnalyticsError> {
    let r = radius(v, l)?;
    let m = message_count(r, d)?;
    Ok(SweepRow {
        model: model.to_string(),
        v_kmh: v,
        l_s: l,
        d_m: d,
        n_total,
        r_m: r,
        m_msgs: m,
        p_pct: node_percentage(m.min(n_total), n_total)?,
        brd_msgs: n_total,
        saturated: m > n_total,
    })
}

pub fn sweep_speed(model: &str, l: f64, d: f64, n_total: u64, speeds: &[f64]) -> Result<Vec<SweepRow>, AnalyticsError> {
    if speeds.is_empty() {
        return Err(arg("empty speed range"));
    }
    speeds.iter().map(|&v| row(model, v, l, d, n_total)).collect()
}

/// RSU count grows with the area (`area / d^2` RSUs); the DYN count does not.
pub fn sweep_area(model: &str, areas_km2: &[f64], v: f64, l: f64, d: f64) -> Result<Vec<SweepRow>, AnalyticsError> {
    if areas_km2.is_empty() {
        return Err(arg("empty area range"));
    }
    areas_km2
        .iter()
        .map(|&a| {
            if !(a > 0.0) {
                return Err(arg(format!("area {a}")));
            }
            let n_total = ((a * 1e6) / (d * d)).round().max(1.0) as u64;
            row(model, v, l, d, n_total)
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.2},{},{},{}",
            r.model, r.v_kmh, r.l_s, r.d_m, r.n_total, r.r_m, r.m_msgs, r.p_pct, r.brd_msgs
        );
    }
    out
}
