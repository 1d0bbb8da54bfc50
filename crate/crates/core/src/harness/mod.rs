//! Experiment suite E1 to E6: configuration, replication runs, statistics
//! and output files.

mod config;
mod output;
mod run;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ConfigError, Experiment, ExperimentConfig, MobilityModel, ModelSelection, KEYS};
pub use output::{figure_dat, file_names, render, runs_csv, summary_csv, write_all, RUN_HEADER, SUMMARY_HEADER};
pub use run::{
    analytic_area_rows, analytic_speed_rows, check_points, derive_seed, points, run_simulations, settle_time,
    summarize, Estimate, Point, RunRecord, SummaryRow,
};

use crate::netsim::SimError;
use crate::revocation_analytics::{AnalyticsError, SweepRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("analytics: {0}")]
    Analytics(#[from] AnalyticsError),
    #[error("mobility: {0}")]
    Mobility(String),
    #[error("nothing to write")]
    EmptyTable,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything one experiment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    /// Closed-form rows (E1, and the analytic half of E3).
    pub analytic: Vec<SweepRow>,
}

/// Runs `cfg`. With `parallel` set (and the feature enabled) replications
/// spread over the rayon pool; results are identical either way.
pub fn run_experiment(cfg: &ExperimentConfig, parallel: bool) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    check_points(cfg)?;
    let analytic = match cfg.experiment {
        Experiment::E1 => analytic_speed_rows(cfg)?,
        Experiment::E3 => analytic_area_rows(cfg)?,
        _ => Vec::new(),
    };
    let runs = if cfg.is_analytic() {
        Vec::new()
    } else {
        run_simulations(cfg, parallel)?
    };
    let summary = summarize(&runs);
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
        summary,
        analytic,
    })
}

pub fn emit_results(result: &ExperimentResult, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    write_all(out_dir, &render(result)?)
}

/// Preset for `experiment`, then the optional config file text, then a
/// seed override.
pub fn load_config(
    experiment: Experiment,
    file_text: Option<&str>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::preset(experiment);
    if let Some(text) = file_text {
        cfg.apply_text(text)?;
        if cfg.experiment != experiment {
            return Err(ConfigError::Invalid(format!(
                "config names experiment {} but {experiment} was requested",
                cfg.experiment
            )));
        }
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}
