//! Moment growth over `(n, t, κ)` and the scaling of the growth rates.
//!
//! At large times `E[u^n(t,x)] ≈ exp(γ_n t)` with `γ_n ∝ n^{1+1/h} κ^{1-1/h}`.
//! The lab fits `γ_n` on a time grid and regresses `log γ_n` against `log n`
//! and `log κ`. On short horizons the moments are still in the regime
//! `log E[u^n] ≈ C n(n-1) κ^{h-1} t^h`, so the recovered slopes sit between
//! the short-time values (`≈ 2`, `h - 1`) and the asymptotic ones.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chaos::{chaos_norm_sq, chaos_norm_upper_bound, ChaosBudget, ChaosNormEstimate};
use crate::error::{PamError, Result};
use crate::feynman_kac::{fk_moment_extrapolated_grid, FkOptions, MomentEstimate};
use crate::heat_solver::ModelParams;
use crate::spectral_noise::HurstParam;
use crate::stats::{line_fit, weighted_line_fit};

/// Monte Carlo settings shared by every cell of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanBudget {
    pub samples: usize,
    pub dt_b: f64,
    pub eps_schedule: Vec<f64>,
    pub seed: u64,
}

impl Default for ScanBudget {
    fn default() -> Self {
        ScanBudget {
            samples: 10_000,
            dt_b: 6.25e-5,
            eps_schedule: vec![1e-1, 1e-2, 1e-3],
            seed: 0,
        }
    }
}

impl ScanBudget {
    fn options(&self) -> FkOptions {
        FkOptions::new(self.dt_b, self.samples, self.seed)
    }
}

/// One `(n, t, κ)` cell: the extrapolated moment and its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub estimate: MomentEstimate,
    pub smallest_eps_mean: f64,
    pub nonmonotone: bool,
}

impl ScanRow {
    pub fn flagged(&self) -> bool {
        self.estimate.flagged
    }

    pub fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.estimate.clipped as f64 > crate::feynman_kac::CLIP_TOLERANCE * self.estimate.samples as f64 {
            f.push("clipped");
        }
        if self.nonmonotone {
            f.push("nonmonotone");
        }
        f.join("|")
    }
}

/// Scan results; flagged cells are kept apart from the usable rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GrowthTable {
    pub rows: Vec<ScanRow>,
    pub excluded: Vec<ScanRow>,
}

impl GrowthTable {
    pub fn push(&mut self, row: ScanRow) {
        if row.flagged() {
            self.excluded.push(row);
        } else {
            self.rows.push(row);
        }
    }

    pub fn extend(&mut self, other: GrowthTable) {
        self.rows.extend(other.rows);
        self.excluded.extend(other.excluded);
    }

    /// Usable rows at order `n` and diffusivity `kappa`, sorted by time.
    pub fn series(&self, n: usize, kappa: f64) -> Vec<MomentEstimate> {
        let mut v: Vec<MomentEstimate> = self
            .rows
            .iter()
            .map(|r| r.estimate)
            .filter(|e| e.n == n && e.kappa == kappa)
            .collect();
        v.sort_by(|a, b| a.t.total_cmp(&b.t));
        v
    }

    /// Results CSV: `n, t, kappa, eps, mean, stderr, samples, seed, flags`.
    /// Excluded rows are written too, with their flags.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["n", "t", "kappa", "eps", "mean", "stderr", "samples", "seed", "flags"])?;
        for r in self.rows.iter().chain(&self.excluded) {
            let e = &r.estimate;
            wr.write_record(&[
                e.n.to_string(),
                e.t.to_string(),
                e.kappa.to_string(),
                e.eps.to_string(),
                format!("{:.16e}", e.mean),
                format!("{:.16e}", e.stderr),
                e.samples.to_string(),
                e.seed.to_string(),
                r.flags(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Extrapolated moments for every `n` in `n_list` on `t_grid`. All orders
/// use the same seed, so each cell equals a standalone
/// [`fk_moment_extrapolated`](crate::feynman_kac::fk_moment_extrapolated) run.
pub fn moment_growth_scan(n_list: &[usize], t_grid: &[f64], params: &ModelParams, budget: &ScanBudget) -> Result<GrowthTable> {
    if n_list.iter().any(|n| !(1..=6).contains(n)) {
        return Err(PamError::param("n_list", "orders must lie in 1..=6"));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid[0] <= 0.0 {
        return Err(PamError::param("t_grid", "times must be positive and increasing"));
    }
    let opts = budget.options();
    let mut table = GrowthTable::default();
    for &n in n_list {
        for e in fk_moment_extrapolated_grid(n, t_grid, 0.0, params, &budget.eps_schedule, &opts)? {
            table.push(ScanRow {
                estimate: e.extrapolated,
                smallest_eps_mean: e.smallest_eps().mean,
                nonmonotone: e.monotonicity_violated,
            });
        }
    }
    Ok(table)
}

/// Exponential growth rate of one moment in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub n: usize,
    pub kappa: f64,
    pub gamma_n: f64,
    pub gamma_stderr: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub t_window: (f64, f64),
    pub points: usize,
}

/// Weighted least squares of `log mean` against `t` with weights
/// `(mean/stderr)²`. Rows share paths across `t`, so `gamma_stderr` is
/// optimistic. Zero standard errors (exact input) fall back to equal weights.
pub fn fit_growth(table: &GrowthTable, n: usize, kappa: f64) -> Result<GrowthFit> {
    let rows = table.series(n, kappa);
    if rows.len() < 4 {
        return Err(PamError::InsufficientData(format!(
            "{} unflagged rows at n = {n}, kappa = {kappa}; need 4",
            rows.len()
        )));
    }
    if rows.iter().any(|r| !(r.mean > 0.0)) {
        return Err(PamError::InsufficientData("non-positive moment in growth fit".into()));
    }
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean.ln()).collect();
    let fit = if rows.iter().all(|r| r.stderr > 0.0) {
        let w: Vec<f64> = rows.iter().map(|r| (r.mean / r.stderr).powi(2)).collect();
        weighted_line_fit(&t, &y, &w)?
    } else {
        line_fit(&t, &y)?
    };
    Ok(GrowthFit {
        n,
        kappa,
        gamma_n: fit.slope,
        gamma_stderr: fit.slope_stderr,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        t_window: (t[0], t[t.len() - 1]),
        points: t.len(),
    })
}

/// Log-log slopes of the growth rates against their targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub h: f64,
    pub slope_n: f64,
    pub slope_n_stderr: f64,
    pub slope_kappa: f64,
    pub slope_kappa_stderr: f64,
    pub target_n: f64,
    pub target_kappa: f64,
    /// Relative tolerance on each slope.
    pub tolerance: f64,
    pub pass_n: bool,
    pub pass_kappa: bool,
}

fn log_slope(x: &[f64], g: &[GrowthFit]) -> Result<(f64, f64)> {
    if g.iter().any(|f| !(f.gamma_n > 0.0)) {
        return Err(PamError::InsufficientData("growth rates must be positive for a log-log fit".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = g.iter().map(|f| f.gamma_n.ln()).collect();
    let fit = line_fit(&lx, &ly)?;
    Ok((fit.slope, fit.slope_stderr))
}

/// Regresses `log γ` on `log n` (fits at fixed κ) and on `log κ` (fits at
/// fixed n) and compares with `1 + 1/h` and `1 - 1/h`.
pub fn scaling_exponents(h: HurstParam, n_fits: &[GrowthFit], kappa_fits: &[GrowthFit], tolerance: f64) -> Result<ScalingReport> {
    if n_fits.len() < 3 || kappa_fits.len() < 3 {
        return Err(PamError::InsufficientData("need at least 3 orders and 3 diffusivities".into()));
    }
    let n: Vec<f64> = n_fits.iter().map(|f| f.n as f64).collect();
    let k: Vec<f64> = kappa_fits.iter().map(|f| f.kappa).collect();
    let (slope_n, slope_n_stderr) = log_slope(&n, n_fits)?;
    let (slope_kappa, slope_kappa_stderr) = log_slope(&k, kappa_fits)?;
    let target_n = 1.0 + 1.0 / h.value();
    let target_kappa = 1.0 - 1.0 / h.value();
    Ok(ScalingReport {
        h: h.value(),
        slope_n,
        slope_n_stderr,
        slope_kappa,
        slope_kappa_stderr,
        target_n,
        target_kappa,
        tolerance,
        pass_n: (slope_n - target_n).abs() <= tolerance * target_n.abs(),
        pass_kappa: (slope_kappa - target_kappa).abs() <= tolerance * target_kappa.abs(),
    })
}

/// Ordering checks on fitted rates sorted by `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// `γ_{n+1} > γ_n - 3σ` for consecutive orders.
    pub gamma_increasing: bool,
    /// Same for `γ_n / n`.
    pub gamma_per_order_nondecreasing: bool,
}

pub fn ordering_checks(fits: &[GrowthFit]) -> OrderingReport {
    let mut inc = true;
    let mut per = true;
    for w in fits.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let s = a.gamma_stderr.hypot(b.gamma_stderr);
        inc &= b.gamma_n > a.gamma_n - 3.0 * s;
        let (na, nb) = (a.n as f64, b.n as f64);
        let sp = (a.gamma_stderr / na).hypot(b.gamma_stderr / nb);
        per &= b.gamma_n / nb >= a.gamma_n / na - 3.0 * sp;
    }
    OrderingReport {
        gamma_increasing: inc,
        gamma_per_order_nondecreasing: per,
    }
}

/// Orders, times and diffusivities of a lab run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabPlan {
    pub n_list: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub kappa_list: Vec<f64>,
    /// Order used for the κ regression.
    pub kappa_order: usize,
    pub tolerance: f64,
}

impl Default for LabPlan {
    fn default() -> Self {
        LabPlan {
            n_list: vec![2, 3, 4, 5],
            t_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            kappa_list: vec![0.5, 1.0, 2.0],
            kappa_order: 2,
            tolerance: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabReport {
    pub table: GrowthTable,
    pub n_fits: Vec<GrowthFit>,
    pub kappa_fits: Vec<GrowthFit>,
    pub scaling: ScalingReport,
    pub ordering: OrderingReport,
}

/// Fits and scaling regressions over an existing table.
pub fn analyze(table: GrowthTable, h: HurstParam, base_kappa: f64, plan: &LabPlan) -> Result<LabReport> {
    let n_fits = plan
        .n_list
        .iter()
        .map(|&n| fit_growth(&table, n, base_kappa))
        .collect::<Result<Vec<_>>>()?;
    let kappa_fits = plan
        .kappa_list
        .iter()
        .map(|&k| fit_growth(&table, plan.kappa_order, k))
        .collect::<Result<Vec<_>>>()?;
    let scaling = scaling_exponents(h, &n_fits, &kappa_fits, plan.tolerance)?;
    let ordering = ordering_checks(&n_fits);
    Ok(LabReport {
        table,
        n_fits,
        kappa_fits,
        scaling,
        ordering,
    })
}

/// Full pipeline: order scan at `params.kappa`, κ scan at `plan.kappa_order`,
/// fits and scaling report.
pub fn run_lab(params: &ModelParams, plan: &LabPlan, budget: &ScanBudget) -> Result<LabReport> {
    let mut table = moment_growth_scan(&plan.n_list, &plan.t_grid, params, budget)?;
    for &k in &plan.kappa_list {
        if k == params.kappa && plan.n_list.contains(&plan.kappa_order) {
            continue;
        }
        let p = ModelParams { kappa: k, ..params.clone() };
        table.extend(moment_growth_scan(&[plan.kappa_order], &plan.t_grid, &p, budget)?);
    }
    analyze(table, params.h, params.kappa, plan)
}

/// Table with `mean = exp(c n^{1+1/h} κ^{1-1/h} t)` exactly and zero error.
pub fn synthetic_table(h: HurstParam, c: f64, plan: &LabPlan, base_kappa: f64) -> GrowthTable {
    let hv = h.value();
    let mut table = GrowthTable::default();
    let mut cells: Vec<(usize, f64)> = plan.n_list.iter().map(|&n| (n, base_kappa)).collect();
    cells.extend(plan.kappa_list.iter().filter(|k| **k != base_kappa).map(|&k| (plan.kappa_order, k)));
    for (n, k) in cells {
        let rate = c * (n as f64).powf(1.0 + 1.0 / hv) * k.powf(1.0 - 1.0 / hv);
        for &t in &plan.t_grid {
            table.push(ScanRow {
                estimate: MomentEstimate {
                    n,
                    t,
                    x: 0.0,
                    kappa: k,
                    eps: 0.0,
                    mean: (rate * t).exp(),
                    stderr: 0.0,
                    samples: 0,
                    seed: 0,
                    clipped: 0,
                    flagged: false,
                    extrapolation_uncertainty: None,
                },
                smallest_eps_mean: (rate * t).exp(),
                nonmonotone: false,
            });
        }
    }
    table
}

/// Chaos majorant of `‖u(t,x)‖_{L^n}` against a moment estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n: usize,
    pub t: f64,
    /// `Σ_{m ≤ m_max} n^{m/2} (m!‖f_m‖²)^{1/2}`, zeroth chaos included.
    pub resolved: f64,
    pub resolved_stderr: f64,
    /// Same sum over `m > m_max` with the explicit chaos-norm bounds.
    pub tail: f64,
    pub majorant: f64,
    pub moment_root: f64,
    pub moment_root_stderr: f64,
    pub dominated: bool,
    /// Tail above 10% of the majorant, or tail sum not converged.
    pub tail_under_resolved: bool,
    pub terms: Vec<ChaosNormEstimate>,
}

/// Compares `estimate^{1/n}` with the hypercontractive chaos majorant.
pub fn upper_bound_audit(
    estimate: &MomentEstimate,
    params: &ModelParams,
    m_max: usize,
    chaos_budget: &ChaosBudget,
) -> Result<AuditReport> {
    let n = estimate.n;
    let t = estimate.t;
    let x = estimate.x;
    if n < 2 {
        return Err(PamError::param("n", "audit needs n >= 2"));
    }
    if m_max < 1 {
        return Err(PamError::param("m_max", "need at least one chaos"));
    }
    let nf = n as f64;
    let mut resolved = params.u0.heat_flow(t, x, params.kappa)?.abs();
    let mut var = 0.0;
    let mut terms = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let e = chaos_norm_sq(m, t, x, params, chaos_budget)?;
        let c = nf.powf(m as f64 / 2.0);
        let root = e.value.max(0.0).sqrt();
        resolved += c * root;
        if root > 0.0 {
            var += (c * e.stderr / (2.0 * root)).powi(2);
        }
        terms.push(e);
    }
    let mut tail = 0.0;
    let mut converged = false;
    for m in m_max + 1..m_max + 2000 {
        let term = nf.powf(m as f64 / 2.0) * chaos_norm_upper_bound(m, t, params)?.sqrt();
        tail += term;
        if term < 1e-17 * (resolved + tail) {
            converged = true;
            break;
        }
    }
    let majorant = resolved + tail;
    let root = estimate.mean.max(0.0).powf(1.0 / nf);
    let root_se = if estimate.mean > 0.0 {
        root / (nf * estimate.mean) * estimate.stderr
    } else {
        0.0
    };
    let resolved_stderr = var.sqrt();
    Ok(AuditReport {
        n,
        t,
        resolved,
        resolved_stderr,
        tail,
        majorant,
        moment_root: root,
        moment_root_stderr: root_se,
        dominated: root - 3.0 * root_se.hypot(resolved_stderr) <= majorant,
        tail_under_resolved: !converged || tail > 0.1 * majorant,
        terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat_solver::InitialCondition;

    fn hp(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    #[test]
    fn synthetic_power_law_is_recovered() {
        let plan = LabPlan::default();
        let table = synthetic_table(hp(0.35), 0.3, &plan, 1.0);
        let rep = analyze(table, hp(0.35), 1.0, &plan).unwrap();
        assert!((rep.scaling.slope_n - rep.scaling.target_n).abs() < 1e-8);
        assert!((rep.scaling.slope_kappa - rep.scaling.target_kappa).abs() < 1e-8);
        assert!(rep.scaling.pass_n && rep.scaling.pass_kappa);
        assert!(rep.ordering.gamma_increasing && rep.ordering.gamma_per_order_nondecreasing);
    }

    #[test]
    fn targets_follow_hurst_index() {
        let plan = LabPlan::default();
        let rep = analyze(synthetic_table(hp(0.35), 0.1, &plan, 1.0), hp(0.35), 1.0, &plan).unwrap();
        assert_eq!(rep.scaling.target_n, 1.0 + 1.0 / 0.35);
        assert_eq!(rep.scaling.target_kappa, 1.0 - 1.0 / 0.35);
    }

    #[test]
    fn exact_exponential_fit() {
        let mut table = GrowthTable::default();
        for i in 1..=5 {
            let t = 0.1 * i as f64;
            let mut e = synthetic_table(hp(0.3), 1.0, &LabPlan::default(), 1.0).rows[0];
            e.estimate.n = 2;
            e.estimate.t = t;
            e.estimate.mean = (3.0 * t).exp();
            e.estimate.stderr = 1e-3 * e.estimate.mean;
            table.push(e);
        }
        let f = fit_growth(&table, 2, 1.0).unwrap();
        assert!((f.gamma_n - 3.0).abs() < 1e-10);
        assert_eq!(f.points, 5);
        assert!(fit_growth(&table, 3, 1.0).is_err());
    }

    #[test]
    fn noisy_fit_within_five_percent() {
        use crate::rng;
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut r = rng::stream(9, 0);
        let mut table = GrowthTable::default();
        for i in 1..=8 {
            let t = 0.25 * i as f64;
            let mut e = synthetic_table(hp(0.3), 1.0, &LabPlan::default(), 1.0).rows[0];
            e.estimate.t = t;
            e.estimate.mean = (2.0 * t).exp() * (1.0 + noise.sample(&mut r));
            e.estimate.stderr = 0.01 * e.estimate.mean;
            table.push(e);
        }
        let f = fit_growth(&table, e_n(&table), 1.0).unwrap();
        assert!((f.gamma_n / 2.0 - 1.0).abs() < 0.05);
    }

    fn e_n(t: &GrowthTable) -> usize {
        t.rows[0].estimate.n
    }

    #[test]
    fn flagged_rows_are_excluded() {
        let plan = LabPlan::default();
        let mut table = synthetic_table(hp(0.35), 0.3, &plan, 1.0);
        let mut bad = table.rows[0];
        bad.nonmonotone = true;
        bad.estimate.flagged = true;
        table.push(bad);
        assert_eq!(table.excluded.len(), 1);
        assert_eq!(table.excluded[0].flags(), "nonmonotone");
    }

    #[test]
    fn first_moment_row_is_flat() {
        let p = ModelParams::new(hp(0.35), 1.0, 0.2, InitialCondition::constant(1.0)).unwrap();
        let b = ScanBudget {
            samples: 20,
            dt_b: 0.01,
            ..ScanBudget::default()
        };
        let t = moment_growth_scan(&[1], &[0.1, 0.2], &p, &b).unwrap();
        assert!(t.rows.iter().all(|r| r.estimate.mean == 1.0));
    }

    #[test]
    fn majorant_dominates_second_moment_series() {
        let p = ModelParams::new(hp(0.35), 1.0, 0.25, InitialCondition::constant(1.0)).unwrap();
        let est = MomentEstimate {
            n: 2,
            t: 0.25,
            x: 0.0,
            kappa: 1.0,
            eps: 0.0,
            mean: 1.0,
            stderr: 0.0,
            samples: 1,
            seed: 0,
            clipped: 0,
            flagged: false,
            extrapolation_uncertainty: None,
        };
        let budget = ChaosBudget {
            max_samples: 200_000,
            ..ChaosBudget::default()
        };
        let a = upper_bound_audit(&est, &p, 3, &budget).unwrap();
        let s2: f64 = 1.0 + a.terms.iter().map(|e| e.value).sum::<f64>();
        assert!(a.resolved >= s2.sqrt());
        assert!(a.majorant.is_finite() && a.dominated);
    }
}
