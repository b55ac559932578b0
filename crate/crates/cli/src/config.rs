//! Run configuration: a JSON file overridden by command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use sweeping_core::integrate::IntegratorOptions;
use sweeping_core::penalty::ScheduleConfig;
use sweeping_core::problem::ProbeGrid;
use sweeping_core::Execution;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub levels: Option<usize>,
    pub sigma_ratio: Option<f64>,
    pub margin: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorFile {
    pub tol: Option<f64>,
    pub max_steps: Option<usize>,
    pub stiffness_factor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFile {
    pub time_samples: Option<usize>,
    pub state_per_axis: Option<usize>,
    pub control_per_axis: Option<usize>,
    pub beta: Option<f64>,
}

/// Mirror of every command-line option. Keys not listed here are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub sequential: Option<bool>,
    #[serde(default)]
    pub schedule: ScheduleFile,
    #[serde(default)]
    pub integrator: IntegratorFile,
    #[serde(default)]
    pub probe: ProbeFile,

    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
    pub level: Option<usize>,
    pub method: Option<String>,
    pub steps: Option<usize>,
    pub switch: Option<f64>,
    pub lambda: Option<f64>,
    pub p_t: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub trajectory: Option<PathBuf>,
    pub oracle_steps: Option<usize>,
    pub compare_points: Option<usize>,
    pub switch_points: Option<usize>,
    pub catchup_steps: Option<usize>,
    pub adversaries: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in problem: example1, example2 or static-disc.
    #[arg(long)]
    pub problem: Option<String>,
    /// Problem parameter override, repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// Output directory.
    #[arg(short, long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Integrator local error tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Integrator step budget.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Step cap factor relative to the local decay rate.
    #[arg(long)]
    pub stiffness_factor: Option<f64>,
    /// Number of penalty levels K.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Ratio r in sigma_k = r^k.
    #[arg(long)]
    pub sigma_ratio: Option<f64>,
    /// Inclusion margin m in mu(gamma_k) > -m sigma_k.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Assumption probes per time axis.
    #[arg(long)]
    pub probe_times: Option<usize>,
    /// Assumption probes per state axis.
    #[arg(long)]
    pub probe_states: Option<usize>,
    /// Assumption probes per control axis.
    #[arg(long)]
    pub probe_controls: Option<usize>,
    /// Band width beta of the gradient probe region.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Seed for random adversary controls.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable data-parallel loops.
    #[arg(long)]
    pub sequential: bool,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// Settings every command needs, after merging file and flags.
#[derive(Debug)]
pub struct Settings {
    pub problem: String,
    pub params: BTreeMap<String, f64>,
    pub out: PathBuf,
    pub seed: u64,
    pub exec: Execution,
    pub schedule: ScheduleConfig,
    pub integrator: IntegratorOptions,
    pub probe: ProbeGrid,
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<usize, CliError> {
    if v >= min {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be at least {min}, got {v}")))
    }
}

/// Reads the optional config file and applies the flags on top.
pub fn resolve(c: &Common) -> Result<(Settings, RunConfig), CliError> {
    let mut file = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut params = std::mem::take(&mut file.params);
    params.extend(c.params.iter().cloned());

    let d = ScheduleConfig::default();
    let schedule = ScheduleConfig {
        levels: at_least("levels", c.levels.or(file.schedule.levels).unwrap_or(d.levels), 1)?,
        sigma_ratio: positive("sigma_ratio", c.sigma_ratio.or(file.schedule.sigma_ratio).unwrap_or(d.sigma_ratio))?,
        margin: positive("margin", c.margin.or(file.schedule.margin).unwrap_or(d.margin))?,
    };
    if schedule.sigma_ratio >= 1.0 {
        return Err(CliError::Config(format!("sigma_ratio must be below 1, got {}", schedule.sigma_ratio)));
    }

    let d = IntegratorOptions::default();
    let integrator = IntegratorOptions {
        tol: positive("tol", c.tol.or(file.integrator.tol).unwrap_or(d.tol))?,
        max_steps: at_least("max_steps", c.max_steps.or(file.integrator.max_steps).unwrap_or(d.max_steps), 1)?,
        stiffness_factor: positive(
            "stiffness_factor",
            c.stiffness_factor.or(file.integrator.stiffness_factor).unwrap_or(d.stiffness_factor),
        )?,
    };

    let exec = if c.sequential || file.sequential == Some(true) {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let d = ProbeGrid::default();
    let probe = ProbeGrid {
        time_samples: at_least("probe time samples", c.probe_times.or(file.probe.time_samples).unwrap_or(d.time_samples), 2)?,
        state_per_axis: at_least(
            "probe states per axis",
            c.probe_states.or(file.probe.state_per_axis).unwrap_or(d.state_per_axis),
            2,
        )?,
        control_per_axis: at_least(
            "probe controls per axis",
            c.probe_controls.or(file.probe.control_per_axis).unwrap_or(d.control_per_axis),
            2,
        )?,
        beta: positive("beta", c.beta.or(file.probe.beta).unwrap_or(d.beta))?,
        exec,
    };

    let settings = Settings {
        problem: c.problem.clone().or(file.problem.take()).unwrap_or_else(|| "example1".into()),
        params,
        out: c.out.clone().or(file.out.take()).unwrap_or_else(|| PathBuf::from("out")),
        seed: c.seed.or(file.seed).unwrap_or(42),
        exec,
        schedule,
        integrator,
        probe,
    };
    Ok((settings, file))
}

pub fn check_positive(name: &str, v: f64) -> Result<f64, CliError> {
    positive(name, v)
}

pub fn check_at_least(name: &str, v: usize, min: usize) -> Result<usize, CliError> {
    at_least(name, v, min)
}
