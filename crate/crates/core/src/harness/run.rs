//! Sweep expansion, replication jobs and summary statistics.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::crypto::CryptoProvider;
use crate::mobility::{generate_manhattan, generate_rwp, ManhattanParams, MobilityTrace, RwpParams};
use crate::netsim::{Keyring, LinkModel, SimWorld, Topology, WorldConfig};
use crate::revocation_analytics::{self as analytics, SweepRow};
use crate::schemes::{run_scenario, RevocationMetrics, RevocationScheme, RunPlan};

use super::config::{Experiment, ExperimentConfig, MobilityModel};
use super::HarnessError;

/// Derived seed for one replication of one sweep point. Schemes share it,
/// so DYN and BRD see the same traffic.
pub fn derive_seed(base: u64, point: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(point);
    rng.set_word_pos(u128::from(rep) * 16);
    rng.next_u64()
}

/// One simulated configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub index: usize,
    pub model: MobilityModel,
    pub x: f64,
    pub vehicles: usize,
    pub area_km2: f64,
    pub managers: usize,
    pub spacing: f64,
    pub lifetime: f64,
    pub link: LinkModel,
}

impl Point {
    pub fn side(&self) -> f64 {
        (self.area_km2 * 1e6).sqrt()
    }

    pub fn topology(&self) -> Result<Topology, HarnessError> {
        let side = self.side();
        Topology::grid((side, side), self.spacing, self.managers).map_err(HarnessError::from)
    }

    fn key(&self) -> u64 {
        ((self.model as u64) << 32) | self.index as u64
    }
}

pub fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    let mut out = Vec::new();
    for model in cfg.model.models() {
        for (index, &x) in cfg.sweep.iter().enumerate() {
            let mut p = Point {
                index,
                model,
                x,
                vehicles: cfg.vehicles,
                area_km2: cfg.area_km2,
                managers: cfg.managers,
                spacing: cfg.spacing_for(model),
                lifetime: cfg.lifetime_for(model),
                link: cfg.link(),
            };
            match cfg.experiment {
                Experiment::E2 | Experiment::E5 | Experiment::Custom => p.vehicles = x as usize,
                Experiment::E3 => p.area_km2 = x,
                Experiment::E4 => p.link = p.link.with_wired_delay(x / 1000.0),
                Experiment::E6 => p.managers = x as usize,
                Experiment::E1 => {}
            }
            out.push(p);
        }
    }
    out
}

/// Checks every sweep point builds before anything runs.
pub fn check_points(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    if cfg.is_analytic() {
        return Ok(());
    }
    for p in points(cfg) {
        let topo = p.topology()?;
        if let Some(n) = cfg.rsus {
            if n != topo.rsu_count() && cfg.experiment != Experiment::E3 {
                return Err(HarnessError::Config(super::ConfigError::Invalid(format!(
                    "rsus = {n} but the grid holds {} RSUs",
                    topo.rsu_count()
                ))));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub model: MobilityModel,
    pub point: usize,
    pub x: f64,
    pub scheme: RevocationScheme,
    pub rep: usize,
    pub seed: u64,
    pub vehicles: usize,
    pub rsus: usize,
    pub managers: usize,
    pub area_km2: f64,
    pub delay_ms: f64,
    pub metrics: RevocationMetrics,
    pub security_events: usize,
}

fn trace_for(cfg: &ExperimentConfig, p: &Point, seed: u64, duration: f64) -> Result<MobilityTrace, HarnessError> {
    let side = p.side();
    let (lo, hi) = cfg.speed_range(p.model);
    let trace = match p.model {
        MobilityModel::Manhattan => generate_manhattan(&ManhattanParams {
            grid_block: cfg.grid_block,
            max_speed: hi,
            min_speed: lo,
            turn_probability: cfg.turn_probability,
            bounds: (side, side),
            vehicle_count: p.vehicles,
            duration,
            seed,
        }),
        MobilityModel::Highway => generate_rwp(&RwpParams {
            max_speed: hi,
            min_speed: lo,
            pause: 0.0,
            bounds: (side, side),
            vehicle_count: p.vehicles,
            duration,
            seed,
        }),
    };
    trace.map_err(|e| HarnessError::Mobility(e.to_string()))
}

/// Seconds to let revocation traffic drain after it starts.
pub fn settle_time(link: &LinkModel) -> f64 {
    let hop = link.t_ca.max(link.t_man).max(link.t_rsu) + link.tp_ca.max(link.tp_man).max(link.tp_rsu);
    5.0 + 40.0 * hop
}

struct Job {
    point: usize,
    rep: usize,
}

fn run_job(
    cfg: &ExperimentConfig,
    p: &Point,
    keyring: &Arc<Keyring>,
    topology: &Arc<Topology>,
    crypto: &CryptoProvider,
    rep: usize,
) -> Result<Vec<RunRecord>, HarnessError> {
    let seed = derive_seed(cfg.seed, p.key(), rep as u64);
    let settle = settle_time(&p.link);
    let horizon = cfg.duration_for(p.model);
    let trace = Arc::new(trace_for(cfg, p, seed, horizon + settle)?);
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    pick.set_stream(u64::MAX);
    let plan = RunPlan {
        target: pick.gen_range(0..p.vehicles),
        revoke_delay: cfg.revoke_delay_for(p.model),
        settle,
        horizon,
    };
    let mut out = Vec::with_capacity(cfg.schemes.len());
    for &scheme in &cfg.schemes {
        let mut wc = WorldConfig::new(
            crypto.clone(),
            Arc::clone(keyring),
            Arc::clone(topology),
            Arc::clone(&trace),
            p.lifetime,
            seed,
        );
        wc.link = p.link.clone();
        wc.policy = cfg.policy();
        let mut world = SimWorld::new(wc)?;
        let metrics = run_scenario(&mut world, scheme, &plan)?;
        out.push(RunRecord {
            model: p.model,
            point: p.index,
            x: p.x,
            scheme,
            rep,
            seed,
            vehicles: p.vehicles,
            rsus: topology.rsu_count(),
            managers: p.managers,
            area_km2: p.area_km2,
            delay_ms: p.link.t_man * 1000.0,
            metrics,
            security_events: world.metrics.security_event_count(),
        });
    }
    Ok(out)
}

/// All replications of every sweep point, sorted by model, point, scheme
/// and replication whatever order they ran in.
pub fn run_simulations(cfg: &ExperimentConfig, parallel: bool) -> Result<Vec<RunRecord>, HarnessError> {
    let crypto = CryptoProvider::new(cfg.crypto);
    let pts = points(cfg);
    // One keyring per experiment; each point takes the prefix it needs.
    let mut topologies = Vec::with_capacity(pts.len());
    for p in &pts {
        topologies.push(Arc::new(p.topology()?));
    }
    let max_managers = pts.iter().map(|p| p.managers).max().unwrap_or(0);
    let max_rsus = topologies.iter().map(|t| t.rsu_count()).max().unwrap_or(0);
    let master = Keyring::generate(&crypto, max_managers, max_rsus, derive_seed(cfg.seed, u64::MAX, 0));
    let mut keyrings: BTreeMap<(usize, usize), Arc<Keyring>> = BTreeMap::new();
    let mut infra = Vec::with_capacity(pts.len());
    for (p, topology) in pts.iter().zip(topologies) {
        let rsus = topology.rsu_count();
        let keyring = keyrings
            .entry((p.managers, rsus))
            .or_insert_with(|| {
                Arc::new(
                    master
                        .prefix(p.managers, rsus)
                        .expect("master keyring covers every point"),
                )
            })
            .clone();
        infra.push((keyring, topology));
    }
    let jobs: Vec<Job> = (0..pts.len())
        .flat_map(|point| (0..cfg.replications).map(move |rep| Job { point, rep }))
        .collect();
    let run = |j: &Job| {
        let (keyring, topology) = &infra[j.point];
        run_job(cfg, &pts[j.point], keyring, topology, &crypto, j.rep)
    };
    let results: Vec<Result<Vec<RunRecord>, HarnessError>> = if parallel {
        par_map(&jobs, run)
    } else {
        jobs.iter().map(run).collect()
    };
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    records.sort_by(|a, b| (a.model, a.point, a.scheme, a.rep).cmp(&(b.model, b.point, b.scheme, b.rep)));
    Ok(records)
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(jobs: &[Job], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&Job) -> T + Sync + Send,
{
    use rayon::prelude::*;
    jobs.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(jobs: &[Job], f: F) -> Vec<T>
where
    F: Fn(&Job) -> T,
{
    jobs.iter().map(f).collect()
}

/// Mean with a 95% Student-t half-width.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                half_width: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Estimate {
                mean,
                half_width: 0.0,
                n,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::NAN);
        Estimate {
            mean,
            half_width: t * (var / n as f64).sqrt(),
            n,
        }
    }
}

/// Aggregate of the replications at one (model, point, scheme).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: MobilityModel,
    pub point: usize,
    pub x: f64,
    pub scheme: RevocationScheme,
    pub runs: usize,
    /// Replications whose target never held a live certificate.
    pub moot: usize,
    pub messages: Estimate,
    pub rsu_messages: Estimate,
    /// Pooled: warned over intended, summed across runs. The half-width is
    /// over the runs that intended anyone. NaN when no run did.
    pub delivery_ratio: Estimate,
    pub t_e2e: Estimate,
    pub tracking: Estimate,
}

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(MobilityModel, usize, RevocationScheme), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.model, r.point, r.scheme)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((model, point, scheme), rs)| {
            let live: Vec<&RunRecord> = rs.iter().copied().filter(|r| !r.metrics.moot).collect();
            let field = |f: &dyn Fn(&RevocationMetrics) -> f64| {
                Estimate::of(&live.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
            };
            let warned: u64 = live.iter().map(|r| r.metrics.vehicles_warned).sum();
            let intended: u64 = live.iter().map(|r| r.metrics.intended_recipients).sum();
            let ratios: Vec<f64> = live
                .iter()
                .filter(|r| r.metrics.intended_recipients > 0)
                .map(|r| r.metrics.delivery_ratio)
                .collect();
            let mut delivery_ratio = Estimate::of(&ratios);
            delivery_ratio.mean = if intended == 0 {
                f64::NAN
            } else {
                warned as f64 / intended as f64
            };
            SummaryRow {
                model,
                point,
                x: rs[0].x,
                scheme,
                runs: rs.len(),
                moot: rs.len() - live.len(),
                messages: field(&|m| m.messages_sent as f64),
                rsu_messages: field(&|m| m.rsu_messages as f64),
                delivery_ratio,
                t_e2e: field(&|m| m.t_e2e_measured),
                tracking: field(&|m| m.tracking_messages as f64),
            }
        })
        .collect()
}

/// Analytic rows for speed sweeps (one block per model).
pub fn analytic_speed_rows(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, HarnessError> {
    let n_total = cfg.rsus.unwrap_or(1000) as u64;
    let mut rows = Vec::new();
    for model in cfg.model.models() {
        rows.extend(analytics::sweep_speed(
            &model.to_string(),
            cfg.lifetime_for(model),
            cfg.spacing_for(model),
            n_total,
            &cfg.sweep,
        )?);
    }
    Ok(rows)
}

/// Analytic rows for area sweeps at each model's analytic speed.
pub fn analytic_area_rows(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows = Vec::new();
    for model in cfg.model.models() {
        rows.extend(analytics::sweep_area(
            &model.to_string(),
            &cfg.sweep,
            cfg.analytic_speed(model),
            cfg.lifetime_for(model),
            cfg.spacing_for(model),
        )?);
    }
    Ok(rows)
}
