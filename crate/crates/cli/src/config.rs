//! Run configuration (TOML, schema version 1).
//!
//! ```toml
//! version = 1
//! seed = 42
//! output_dir = "out"      # optional, default "out"
//! threads = 0             # optional, 0 = all cores
//!
//! [model]
//! h = 0.35
//! kappa = 1.0
//! horizon = 0.25
//! x = 0.0                 # optional evaluation point
//! u0 = { kind = "constant", value = 1.0 }
//!
//! [grid]
//! domain_length = 32.0
//! mode_cutoff = 1024
//! dt = 2.5e-4
//!
//! [solver]                # optional
//! trajectories = 200
//! scheme = "exact_variance"   # or "exponential_euler"
//! snapshot_every = 100
//! probe_modes = 8
//!
//! [fk]
//! dt_b = 6.25e-5          # optional, default dt/4
//! eps_schedule = [0.1, 0.01, 0.001]
//! samples = 10000
//! n_list = [1, 2, 3]
//!
//! [lab]                   # optional
//! n_list = [2, 3, 4, 5]
//! t_grid = [0.1, 0.2, 0.3, 0.4, 0.5]
//! kappa_list = [0.5, 1.0, 2.0]
//! kappa_order = 2
//! tolerance = 0.25
//! synthetic = 0.3         # optional: power-law table with this constant
//!
//! [chaos]                 # optional
//! n_max = 8
//! max_samples = 4000000
//! target_rel_stderr = 0.002
//! simplex_m_max = 4
//! ```
//!
//! Other `u0` kinds: `gaussian_bump` (`center`, `width`, `amplitude`),
//! `catalog` (`name`), `power_spectrum` (`amplitude`, `decay`).

use std::path::{Path, PathBuf};

use roughpam::chaos::ChaosBudget;
use roughpam::heat_solver::{InitialCondition, InitialConditionSpec, ModelParams, TimeScheme};
use roughpam::intermittency::{LabPlan, ScanBudget};
use roughpam::{HurstParam, SpectralGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub threads: usize,
    pub model: ModelSection,
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub fk: FkSection,
    #[serde(default)]
    pub lab: LabSection,
    #[serde(default)]
    pub chaos: ChaosSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub h: f64,
    pub kappa: f64,
    pub horizon: f64,
    #[serde(default)]
    pub x: f64,
    pub u0: InitialConditionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub domain_length: f64,
    pub mode_cutoff: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub trajectories: usize,
    pub scheme: TimeScheme,
    pub snapshot_every: usize,
    pub probe_modes: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            trajectories: 200,
            scheme: TimeScheme::ExactVariance,
            snapshot_every: 100,
            probe_modes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkSection {
    #[serde(default)]
    pub dt_b: Option<f64>,
    pub eps_schedule: Vec<f64>,
    pub samples: usize,
    #[serde(default = "default_fk_orders")]
    pub n_list: Vec<usize>,
}

fn default_fk_orders() -> Vec<usize> {
    vec![1, 2, 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabSection {
    pub n_list: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub kappa_list: Vec<f64>,
    pub kappa_order: usize,
    pub tolerance: f64,
    pub synthetic: Option<f64>,
}

impl Default for LabSection {
    fn default() -> Self {
        let p = LabPlan::default();
        LabSection {
            n_list: p.n_list,
            t_grid: p.t_grid,
            kappa_list: p.kappa_list,
            kappa_order: p.kappa_order,
            tolerance: p.tolerance,
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosSection {
    pub n_max: usize,
    pub max_samples: u64,
    pub target_rel_stderr: f64,
    pub simplex_m_max: usize,
}

impl Default for ChaosSection {
    fn default() -> Self {
        let b = ChaosBudget::default();
        ChaosSection {
            n_max: 8,
            max_samples: b.max_samples,
            target_rel_stderr: b.target_rel_stderr,
            simplex_m_max: 4,
        }
    }
}

/// A configuration that passed every check, with its derived objects.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: RunConfig,
    pub params: ModelParams,
    pub grid: SpectralGrid,
    pub dt_b: f64,
    pub fingerprint: String,
}

impl Validated {
    pub fn scan_budget(&self) -> ScanBudget {
        ScanBudget {
            samples: self.config.fk.samples,
            dt_b: self.dt_b,
            eps_schedule: self.config.fk.eps_schedule.clone(),
            seed: self.config.seed,
        }
    }

    pub fn lab_plan(&self) -> LabPlan {
        let l = &self.config.lab;
        LabPlan {
            n_list: l.n_list.clone(),
            t_grid: l.t_grid.clone(),
            kappa_list: l.kappa_list.clone(),
            kappa_order: l.kappa_order,
            tolerance: l.tolerance,
        }
    }

    pub fn chaos_budget(&self) -> ChaosBudget {
        ChaosBudget {
            max_samples: self.config.chaos.max_samples,
            target_rel_stderr: self.config.chaos.target_rel_stderr,
            seed: self.config.seed,
            ..ChaosBudget::default()
        }
    }
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "unsupported config version {} (expected {SCHEMA_VERSION})",
            cfg.version
        )));
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn field(name: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {reason}"))
}

fn divides(t: f64, dt: f64) -> bool {
    let r = t / dt;
    (r - r.round()).abs() <= 1e-9 * r.max(1.0)
}

fn resolve_model(m: &ModelSection) -> Result<ModelParams, CliError> {
    let h = HurstParam::new(m.h).map_err(|e| field("model.h", e))?;
    let u0: InitialCondition = m.u0.resolve().map_err(|e| field("model.u0", e))?;
    if !m.x.is_finite() {
        return Err(field("model.x", "must be finite"));
    }
    ModelParams::new(h, m.kappa, m.horizon, u0).map_err(|e| field("model", e))
}

/// Structural checks and derived objects. Admissibility quadratures are
/// separate (see [`crate::commands::admissibility`]).
pub fn validate(mut cfg: RunConfig) -> Result<Validated, CliError> {
    let params = resolve_model(&cfg.model)?;
    let g = &cfg.grid;
    let grid = SpectralGrid::new(g.domain_length, g.mode_cutoff, g.dt).map_err(|e| field("grid", e))?;
    if !divides(params.horizon, grid.dt) {
        return Err(field("grid.dt", format!("{} does not divide the horizon {}", grid.dt, params.horizon)));
    }
    let s = &cfg.solver;
    if s.trajectories == 0 {
        return Err(field("solver.trajectories", "must be positive"));
    }
    if s.snapshot_every == 0 {
        return Err(field("solver.snapshot_every", "must be positive"));
    }
    if s.probe_modes > grid.mode_cutoff {
        return Err(field("solver.probe_modes", "exceeds grid.mode_cutoff"));
    }
    let fk = &cfg.fk;
    let dt_b = fk.dt_b.unwrap_or(grid.dt / 4.0);
    if !(dt_b > 0.0) || !divides(params.horizon, dt_b) {
        return Err(field("fk.dt_b", format!("{dt_b} must be positive and divide the horizon")));
    }
    if fk.eps_schedule.len() < 3 {
        return Err(field("fk.eps_schedule", "need at least 3 scales"));
    }
    if fk.eps_schedule.iter().any(|e| !(*e > 0.0)) || fk.eps_schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(field("fk.eps_schedule", "scales must be positive and strictly decreasing"));
    }
    if fk.samples < 2 {
        return Err(field("fk.samples", "need at least 2"));
    }
    if fk.n_list.is_empty() || fk.n_list.iter().any(|n| !(1..=6).contains(n)) {
        return Err(field("fk.n_list", "orders must lie in 1..=6"));
    }
    let lab = &cfg.lab;
    if lab.n_list.len() < 3 || lab.n_list.iter().any(|n| !(2..=6).contains(n)) {
        return Err(field("lab.n_list", "need at least 3 orders in 2..=6"));
    }
    if lab.kappa_list.len() < 3 || lab.kappa_list.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
        return Err(field("lab.kappa_list", "need at least 3 positive values"));
    }
    if !lab.kappa_list.contains(&params.kappa) {
        return Err(field("lab.kappa_list", "must contain model.kappa"));
    }
    if lab.t_grid.len() < 4 || lab.t_grid[0] <= 0.0 || lab.t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(field("lab.t_grid", "need at least 4 positive increasing times"));
    }
    if let Some(t) = lab.t_grid.iter().find(|t| !divides(**t, dt_b)) {
        return Err(field("lab.t_grid", format!("{t} is not a multiple of dt_b = {dt_b}")));
    }
    if !(2..=6).contains(&lab.kappa_order) {
        return Err(field("lab.kappa_order", "must lie in 2..=6"));
    }
    if !(lab.tolerance > 0.0) {
        return Err(field("lab.tolerance", "must be positive"));
    }
    if let Some(c) = lab.synthetic {
        if !(c > 0.0 && c.is_finite()) {
            return Err(field("lab.synthetic", "rate constant must be positive"));
        }
    }
    let ch = &cfg.chaos;
    if !(2..=12).contains(&ch.n_max) {
        return Err(field("chaos.n_max", "must lie in 2..=12"));
    }
    if ch.max_samples == 0 || !(ch.target_rel_stderr > 0.0) {
        return Err(field("chaos", "budget must be positive"));
    }
    if !(1..=6).contains(&ch.simplex_m_max) {
        return Err(field("chaos.simplex_m_max", "must lie in 1..=6"));
    }
    cfg.fk.dt_b = Some(dt_b);
    let fingerprint = fingerprint(&cfg);
    Ok(Validated {
        config: cfg,
        params,
        grid,
        dt_b,
        fingerprint,
    })
}

/// SHA-256 of the canonical JSON form (keys sorted) with `output_dir` and
/// `threads` removed: neither changes any payload.
pub fn fingerprint(cfg: &RunConfig) -> String {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(o) = v.as_object_mut() {
        o.remove("output_dir");
        o.remove("threads");
    }
    let canon = serde_json::to_string(&v).expect("json");
    hex(&Sha256::digest(canon.as_bytes()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Configuration used by the acceptance runs and the shipped example.
pub fn default_config_text() -> &'static str {
    include_str!("../configs/default.toml")
}
