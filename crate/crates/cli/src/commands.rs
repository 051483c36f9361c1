//! Subcommand bodies. Each returns the artifacts it produced and, when an
//! estimate is flagged, the reason; persistence happens in [`crate::run`].

use roughpam::chaos::{second_moment_series, simplex_sweep, write_simplex_sweep_csv};
use roughpam::feynman_kac::{fk_moment_extrapolated, jensen_floor, ExtrapolatedMoment, FkOptions};
use roughpam::heat_solver::{write_trajectory, SpectralSolver};
use roughpam::intermittency::{analyze, run_lab, synthetic_table, LabReport};
use roughpam::PamError;
use serde::Serialize;
use serde_json::json;

use crate::config::Validated;
use crate::store::Artifacts;
use crate::CliError;

pub struct Outcome {
    pub artifacts: Artifacts,
    pub summary: String,
    pub flagged: Option<String>,
}

/// CSV text prefixed with a fingerprint comment line.
pub fn csv_artifact(fingerprint: &str, body: Vec<u8>) -> Vec<u8> {
    let mut out = format!("# fingerprint: {fingerprint}\n").into_bytes();
    out.extend(body);
    out
}

pub fn json_artifact<T: Serialize>(fingerprint: &str, command: &str, report: &T) -> Result<Vec<u8>, CliError> {
    let v = json!({ "fingerprint": fingerprint, "command": command, "report": report });
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub integral: Option<f64>,
    pub detail: String,
}

/// Picard and chaos admissibility integrals of the initial condition.
pub fn admissibility(v: &Validated) -> Result<Vec<Check>, CliError> {
    let h = v.params.h;
    let u0 = &v.params.u0;
    let picard = u0.picard_admissibility(h)?;
    let chaos = u0.chaos_admissibility(h)?;
    let mk = |name: &str, a: roughpam::heat_solver::Admissibility, what: &str| Check {
        name: name.to_string(),
        passed: a.finite,
        integral: a.finite.then_some(a.integral),
        detail: if a.finite {
            format!("{what} finite")
        } else {
            format!("{what} diverges")
        },
    };
    Ok(vec![
        mk("picard", picard, "∫(1+|ξ|^{1-2h})|Fu₀|² dξ"),
        mk("chaos", chaos, "∫(1+|ξ|^{1/2-h})|Fu₀| dξ"),
    ])
}

pub fn cmd_validate(v: &Validated) -> Result<Outcome, CliError> {
    let mut checks = vec![Check {
        name: "parameters".into(),
        passed: true,
        integral: None,
        detail: format!(
            "h = {}, kappa = {}, horizon = {}, L = {}, K = {}, dt = {}, dt_b = {}",
            v.params.h.value(),
            v.params.kappa,
            v.params.horizon,
            v.grid.domain_length,
            v.grid.mode_cutoff,
            v.grid.dt,
            v.dt_b
        ),
    }];
    checks.extend(admissibility(v)?);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let mut artifacts = Artifacts::default();
    artifacts.add("validate.json", json_artifact(&v.fingerprint, "validate", &checks)?);
    let summary = checks
        .iter()
        .map(|c| format!("{:<10} {} {}", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail))
        .collect::<Vec<_>>()
        .join("\n");
    if !failed.is_empty() {
        return Err(CliError::Config(format!("{summary}\ninadmissible initial condition: {}", failed.join(", "))));
    }
    Ok(Outcome {
        artifacts,
        summary,
        flagged: None,
    })
}

/// Refuses to run anything on an inadmissible initial condition.
pub fn require_admissible(v: &Validated) -> Result<(), CliError> {
    let bad: Vec<String> = admissibility(v)?.into_iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!("inadmissible initial condition: {}", bad.join(", "))))
    }
}

#[derive(Debug, Clone, Serialize)]
struct SolveReport {
    t: f64,
    trajectories: u64,
    mean_at_0: f64,
    mean_at_0_stderr: f64,
    heat_flow_at_0: f64,
    second_moment_at_0: f64,
    second_moment_at_0_stderr: f64,
    spatial_mean_square: f64,
    spatial_mean_square_stderr: f64,
}

pub fn cmd_solve(v: &Validated) -> Result<Outcome, CliError> {
    let s = &v.config.solver;
    let seed = v.config.seed;
    let solver = SpectralSolver::new(&v.params, &v.grid, s.scheme);
    let n_steps = solver.steps_for_horizon()?;
    let summary = solver.run_ensemble(s.trajectories, seed, n_steps, s.snapshot_every, s.probe_modes)?;
    let last = summary.times.len() - 1;
    let t = summary.times[last];
    let rep = SolveReport {
        t,
        trajectories: summary.samples(),
        mean_at_0: summary.value_at_0[last].mean(),
        mean_at_0_stderr: summary.value_at_0[last].stderr(),
        heat_flow_at_0: v.params.u0.heat_flow(t, 0.0, v.params.kappa)?,
        second_moment_at_0: summary.square_at_0[last].mean(),
        second_moment_at_0_stderr: summary.square_at_0[last].stderr(),
        spatial_mean_square: summary.mean_square[last].mean(),
        spatial_mean_square_stderr: summary.mean_square[last].stderr(),
    };
    let mut csv = Vec::new();
    summary.write_csv(&mut csv)?;
    // trajectory 0 of the ensemble, with a fingerprint trailer
    let traj = solver.solve(seed, 0, n_steps, s.snapshot_every)?;
    let mut bin = Vec::new();
    write_trajectory(&mut bin, &v.grid, &v.params, seed, &traj)?;
    bin.extend_from_slice(b"FPRT");
    bin.extend_from_slice(v.fingerprint.as_bytes());
    let mut artifacts = Artifacts::default();
    artifacts.add("summary.csv", csv_artifact(&v.fingerprint, csv));
    artifacts.add("solve.json", json_artifact(&v.fingerprint, "solve", &rep)?);
    artifacts.add("trajectory.bin", bin);
    Ok(Outcome {
        artifacts,
        summary: format!(
            "t = {t}: E u(t,0) = {:.6} ± {:.6} (heat flow {:.6}); E u² = {:.6} ± {:.6} (spatial mean square)",
            rep.mean_at_0, rep.mean_at_0_stderr, rep.heat_flow_at_0, rep.spatial_mean_square, rep.spatial_mean_square_stderr
        ),
        flagged: None,
    })
}

#[derive(Debug, Clone, Serialize)]
struct MomentsReport {
    results: Vec<ExtrapolatedMoment>,
    /// `c^n exp(...)` lower bounds at the smallest scale, constant data only.
    jensen_floors: Option<Vec<f64>>,
}

pub fn cmd_moments(v: &Validated) -> Result<Outcome, CliError> {
    let fk = &v.config.fk;
    let opts = FkOptions::new(v.dt_b, fk.samples, v.config.seed);
    let (t, x) = (v.params.horizon, v.config.model.x);
    let mut results = Vec::new();
    for &n in &fk.n_list {
        results.push(fk_moment_extrapolated(n, t, x, &v.params, &fk.eps_schedule, &opts)?);
    }
    let eps_min = *fk.eps_schedule.last().unwrap();
    let jensen_floors = v.params.u0.as_constant().map(|c| {
        fk.n_list
            .iter()
            .map(|&n| c.powi(n as i32) * jensen_floor(n, t, eps_min, v.params.h, v.params.kappa))
            .collect()
    });
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record([
        "n", "t", "x", "kappa", "eps", "mean", "stderr", "samples", "seed", "clipped", "flagged", "extrapolation_uncertainty",
    ])
    .map_err(PamError::from)?;
    let mut lines = Vec::new();
    let mut flagged = Vec::new();
    for r in &results {
        for e in r.schedule.iter().chain(std::iter::once(&r.extrapolated)) {
            wr.write_record(&[
                e.n.to_string(),
                e.t.to_string(),
                e.x.to_string(),
                e.kappa.to_string(),
                e.eps.to_string(),
                format!("{:.16e}", e.mean),
                format!("{:.16e}", e.stderr),
                e.samples.to_string(),
                e.seed.to_string(),
                e.clipped.to_string(),
                e.flagged.to_string(),
                e.extrapolation_uncertainty.map(|u| format!("{u:.16e}")).unwrap_or_default(),
            ])
            .map_err(PamError::from)?;
        }
        let e = &r.extrapolated;
        lines.push(format!(
            "n = {}: E u^n = {:.6} ± {:.6} (extrapolated; smallest eps {:.6}){}",
            e.n,
            e.mean,
            e.stderr,
            r.smallest_eps().mean,
            if e.flagged { " FLAGGED" } else { "" }
        ));
        if e.flagged {
            flagged.push(format!("n = {}", e.n));
        }
    }
    let csv = wr.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut artifacts = Artifacts::default();
    artifacts.add("moments.csv", csv_artifact(&v.fingerprint, csv));
    let rep = MomentsReport { results, jensen_floors };
    artifacts.add("moments.json", json_artifact(&v.fingerprint, "moments", &rep)?);
    Ok(Outcome {
        artifacts,
        summary: lines.join("\n"),
        flagged: (!flagged.is_empty()).then(|| format!("flagged moment estimates: {}", flagged.join(", "))),
    })
}

#[derive(Debug, Clone, Serialize)]
struct FitsReport<'a> {
    synthetic: bool,
    /// Scaling targets are stated for constant initial data only.
    verdict_applies: bool,
    n_fits: &'a [roughpam::intermittency::GrowthFit],
    kappa_fits: &'a [roughpam::intermittency::GrowthFit],
    scaling: &'a roughpam::intermittency::ScalingReport,
    ordering: &'a roughpam::intermittency::OrderingReport,
    excluded_rows: usize,
}

pub fn lab_report(v: &Validated) -> Result<LabReport, CliError> {
    let plan = v.lab_plan();
    let res = match v.config.lab.synthetic {
        Some(c) => analyze(synthetic_table(v.params.h, c, &plan, v.params.kappa), v.params.h, v.params.kappa, &plan),
        None => run_lab(&v.params, &plan, &v.scan_budget()),
    };
    res.map_err(|e| match e {
        PamError::InsufficientData(m) => CliError::Flagged(format!("growth fit impossible: {m}")),
        other => other.into(),
    })
}

pub fn cmd_intermittency(v: &Validated) -> Result<Outcome, CliError> {
    let rep = lab_report(v)?;
    let verdict_applies = v.config.lab.synthetic.is_some() || v.params.u0.as_constant().is_some();
    let mut csv = Vec::new();
    rep.table.write_csv(&mut csv)?;
    let fits = FitsReport {
        synthetic: v.config.lab.synthetic.is_some(),
        verdict_applies,
        n_fits: &rep.n_fits,
        kappa_fits: &rep.kappa_fits,
        scaling: &rep.scaling,
        ordering: &rep.ordering,
        excluded_rows: rep.table.excluded.len(),
    };
    let mut artifacts = Artifacts::default();
    artifacts.add("results.csv", csv_artifact(&v.fingerprint, csv));
    artifacts.add("fits.json", json_artifact(&v.fingerprint, "intermittency", &fits)?);
    let s = &rep.scaling;
    let mut lines: Vec<String> = rep
        .n_fits
        .iter()
        .chain(&rep.kappa_fits)
        .map(|f| format!("n = {}, kappa = {}: gamma = {:.5} ± {:.5}, r² = {:.4}", f.n, f.kappa, f.gamma_n, f.gamma_stderr, f.r_squared))
        .collect();
    let verdict = |ok: bool| match (verdict_applies, ok) {
        (false, _) => "no verdict (non-constant u0)",
        (true, true) => "pass",
        (true, false) => "FAIL",
    };
    lines.push(format!(
        "slope in n: {:.4} (target {:.4}) {}; slope in kappa: {:.4} (target {:.4}) {}",
        s.slope_n,
        s.target_n,
        verdict(s.pass_n),
        s.slope_kappa,
        s.target_kappa,
        verdict(s.pass_kappa)
    ));
    let n_ex = rep.table.excluded.len();
    Ok(Outcome {
        artifacts,
        summary: lines.join("\n"),
        flagged: (n_ex > 0).then(|| format!("{n_ex} flagged rows excluded from the fits")),
    })
}

#[derive(Debug, Clone, Serialize)]
struct ChaosReport {
    t: f64,
    x: f64,
    partial_sums: Vec<f64>,
    second_moment: f64,
    stderr: f64,
    tail_bound: f64,
    under_resolved: bool,
}

pub fn cmd_chaos(v: &Validated) -> Result<Outcome, CliError> {
    let (t, x) = (v.params.horizon, v.config.model.x);
    let series = second_moment_series(t, x, &v.params, v.config.chaos.n_max, &v.chaos_budget())?;
    let sweep = simplex_sweep(t, v.params.h, v.config.chaos.simplex_m_max)?;
    let mut a = Vec::new();
    series.write_csv(&mut a)?;
    let mut b = Vec::new();
    write_simplex_sweep_csv(&sweep, &mut b)?;
    let rep = ChaosReport {
        t,
        x,
        partial_sums: series.partial_sums(),
        second_moment: series.partial_sum,
        stderr: series.partial_stderr,
        tail_bound: series.tail_bound,
        under_resolved: series.under_resolved,
    };
    let mut artifacts = Artifacts::default();
    artifacts.add("chaos.csv", csv_artifact(&v.fingerprint, a));
    artifacts.add("simplex.csv", csv_artifact(&v.fingerprint, b));
    artifacts.add("chaos.json", json_artifact(&v.fingerprint, "chaos", &rep)?);
    Ok(Outcome {
        artifacts,
        summary: format!(
            "E u²({t},{x}) = {:.6} ± {:.6} through order {}, tail bound {:.3e}{}",
            rep.second_moment,
            rep.stderr,
            v.config.chaos.n_max,
            rep.tail_bound,
            if rep.under_resolved { " (under-resolved)" } else { "" }
        ),
        flagged: series.under_resolved.then(|| "chaos tail exceeds 10% of the partial sum".to_string()),
    })
}
