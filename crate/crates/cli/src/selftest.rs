//! Quick invariant suite plus determinism replays.
//!
//! Two fixed-seed pipelines (a small solver ensemble and a small moment run)
//! are executed twice, the second time on a single-thread pool, and their
//! payload bytes are compared.

use std::f64::consts::PI;
use std::path::Path;

use roughpam::feynman_kac::{fk_moment, FkOptions};
use roughpam::heat_solver::{InitialCondition, ModelParams, SpectralSolver, TimeScheme};
use roughpam::intermittency::{analyze, synthetic_table, LabPlan};
use roughpam::special::gamma;
use roughpam::spectral_noise::mollified_cov;
use roughpam::HurstParam;
use serde::Serialize;

use crate::commands::{cmd_moments, cmd_solve, json_artifact, Outcome};
use crate::config::{default_config_text, parse, validate, Validated};
use crate::store::{Artifacts, ResultRecord, ResultStore};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Replay {
    pub pipeline: String,
    pub files: usize,
    pub differing_bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<SelfCheck>,
    pub replays: Vec<Replay>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.replays.iter().all(|r| r.differing_bytes == 0)
    }
}

fn check(name: &str, passed: bool, detail: String) -> SelfCheck {
    SelfCheck {
        name: name.into(),
        passed,
        detail,
    }
}

/// Small configurations for the two replay pipelines.
pub fn replay_configs() -> Result<(Validated, Validated), CliError> {
    let mut c = parse(default_config_text())?;
    c.grid.domain_length = 8.0;
    c.grid.mode_cutoff = 64;
    c.grid.dt = 1e-3;
    c.model.horizon = 0.05;
    c.solver.trajectories = 48;
    c.solver.snapshot_every = 10;
    c.fk.dt_b = Some(1e-3);
    c.fk.samples = 600;
    c.lab.t_grid = vec![0.01, 0.02, 0.03, 0.04];
    let mut a = c.clone();
    a.seed = 7;
    let mut b = c;
    b.seed = 11;
    Ok((validate(a)?, validate(b)?))
}

fn differing_bytes(a: &Artifacts, b: &Artifacts) -> usize {
    let mut d = 0;
    for (name, x) in &a.files {
        match b.get(name) {
            None => d += x.len(),
            Some(y) => {
                d += x.iter().zip(y).filter(|(p, q)| p != q).count();
                d += x.len().abs_diff(y.len());
            }
        }
    }
    d + b.files.keys().filter(|k| !a.files.contains_key(*k)).map(|k| b.files[k].len()).sum::<usize>()
}

fn replay(name: &str, v: &Validated, f: fn(&Validated) -> Result<Outcome, CliError>) -> Result<Replay, CliError> {
    let first = f(v)?.artifacts;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let second = pool.install(|| f(v))?.artifacts;
    Ok(Replay {
        pipeline: name.into(),
        files: first.files.len(),
        differing_bytes: differing_bytes(&first, &second),
    })
}

fn invariant_checks(scratch: &Path) -> Result<Vec<SelfCheck>, CliError> {
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for &h in &[0.3, 0.35, 0.45] {
        let hp = HurstParam::new(h)?;
        for &eps in &[1e-1, 1e-2, 1e-3] {
            let r = mollified_cov(0.0, eps, hp)? * 2.0 * PI / (gamma(1.0 - h) * eps.powf(h - 1.0));
            worst = worst.max((r - 1.0).abs());
        }
    }
    out.push(check("mollifier_origin", worst <= 1e-6, format!("max relative error {worst:.2e}")));

    let h = HurstParam::new(0.35)?;
    let params = ModelParams::new(h, 1.0, 0.05, InitialCondition::bump(1.0, 0.5, 0.7))?;
    let grid = roughpam::SpectralGrid::new(8.0, 64, 1e-3)?;
    let solver = SpectralSolver::with_coupling(&params, &grid, TimeScheme::ExactVariance, 0.0);
    let field = solver.solve(1, 0, 50, 50)?.pop().expect("final snapshot");
    let heat = solver.heat_flow_field(0.05)?;
    let diff = (0..=64).map(|k| (field.coeff(k) - heat.coeff(k)).norm()).fold(0.0, f64::max);
    out.push(check("noiseless_solver", diff < 1e-12, format!("max coefficient gap {diff:.2e}")));

    let p1 = ModelParams::new(h, 1.0, 0.1, InitialCondition::constant(1.0))?;
    let mut o = FkOptions::new(1e-3, 200, 3);
    o.coupling_scale = 0.0;
    let e = fk_moment(3, 0.1, 0.0, 1e-2, &p1, &o)?;
    out.push(check("fk_zero_coupling", e.mean == 1.0 && e.stderr == 0.0, format!("mean {}", e.mean)));

    let plan = LabPlan::default();
    let rep = analyze(synthetic_table(h, 0.3, &plan, 1.0), h, 1.0, &plan)?;
    let gap = (rep.scaling.slope_n - rep.scaling.target_n)
        .abs()
        .max((rep.scaling.slope_kappa - rep.scaling.target_kappa).abs());
    out.push(check("synthetic_scaling", gap < 1e-8, format!("max slope error {gap:.2e}")));

    let dir = scratch.join("store_probe");
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    let store = ResultStore::open(&dir)?;
    let mut a = Artifacts::default();
    a.add("a.csv", b"1\n".to_vec());
    store.append(&ResultRecord::new("probe", "selftest", &a))?;
    a.add("a.csv", b"2\n".to_vec());
    let collided = matches!(store.append(&ResultRecord::new("probe", "selftest", &a)), Err(CliError::Integrity(_)));
    std::fs::remove_dir_all(&dir)?;
    out.push(check("store_integrity", collided, "differing payload under one fingerprint rejected".into()));
    Ok(out)
}

pub fn run_selftest(scratch: &Path) -> Result<SelftestReport, CliError> {
    let checks = invariant_checks(scratch)?;
    let (a, b) = replay_configs()?;
    let replays = vec![replay("solve", &a, cmd_solve)?, replay("moments", &b, cmd_moments)?];
    Ok(SelftestReport { checks, replays })
}

pub fn cmd_selftest(fingerprint: &str, scratch: &Path) -> Result<Outcome, CliError> {
    let rep = run_selftest(scratch)?;
    let mut lines: Vec<String> = rep
        .checks
        .iter()
        .map(|c| format!("{:<20} {} {}", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail))
        .collect();
    for r in &rep.replays {
        lines.push(format!(
            "replay {:<13} {} {} files, {} differing bytes",
            r.pipeline,
            if r.differing_bytes == 0 { "pass" } else { "FAIL" },
            r.files,
            r.differing_bytes
        ));
    }
    let mut artifacts = Artifacts::default();
    artifacts.add("selftest.json", json_artifact(fingerprint, "selftest", &rep)?);
    Ok(Outcome {
        artifacts,
        summary: lines.join("\n"),
        flagged: (!rep.passed()).then(|| "selftest failures".to_string()),
    })
}
