//! Wiener-chaos side: simplex integrals, kernels, chaos norms and the
//! second-moment series.
//!
//! With gaps `u_i = s_{i+1} - s_i` (`s_{n+1} = t`) and partial frequency sums
//! `η_i = ξ_1 + … + ξ_i`, the `n`-th term of `E[u²]` for `u₀ ≡ c` reads
//!
//! ```text
//! T_n = c² c1h^n ∫_{T_n(t)} ds ∫ dη  Π_i e^{-κ u_i η_i²} |η_i - η_{i-1}|^{1-2h},   η_0 = 0.
//! ```
//!
//! `n ≤ 2` is integrated by quadrature (the time integral is analytic), higher
//! orders by importance sampling: Dirichlet gaps and Gaussian `η`.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PamError, Result};
use crate::heat_solver::{Bump, InitialCondition, ModelParams};
use crate::quadrature::{integrate, integrate_to_infinity, Tolerance};
use crate::rng;
use crate::special::{gamma, gamma_moment, heat_kernel, ln_gamma, log_sum_exp};
use crate::spectral_noise::{c1h, HurstParam};
use crate::stats::RunningStats;

/// Exponents `α` of a simplex integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<f64>);

impl MultiIndex {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(PamError::param("alpha", "empty multi-index"));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > -1.0)) {
            return Err(PamError::param("alpha", format!("component {a} <= -1 makes the integral diverge")));
        }
        Ok(MultiIndex(alpha))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `J_m(t, α) = ∫_{0<r_1<…<r_m<t} Π (r_i - r_{i-1})^{α_i} dr
///            = t^{|α|+m} Π Γ(α_i+1) / Γ(|α|+m+1)`.
pub fn simplex_integral_exact(t: f64, alpha: &MultiIndex) -> Result<f64> {
    if !(t > 0.0) {
        return Err(PamError::param("t", format!("{t} must be positive")));
    }
    let m = alpha.len() as f64;
    let s = alpha.total() + m;
    let lg: f64 = alpha.0.iter().map(|a| ln_gamma(a + 1.0)).sum();
    Ok((s * t.ln() + lg - ln_gamma(s + 1.0)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexBoundReport {
    pub exact: f64,
    pub bound: f64,
    pub minimal_c: f64,
    pub holds: bool,
}

/// Compares `J_m` with `c^m t^{|α|+m} / Γ(|α|+m+1)`.
pub fn simplex_bound_check(t: f64, alpha: &MultiIndex, c: f64) -> Result<SimplexBoundReport> {
    let exact = simplex_integral_exact(t, alpha)?;
    let m = alpha.len() as f64;
    let s = alpha.total() + m;
    let bound = (m * c.ln() + s * t.ln() - ln_gamma(s + 1.0)).exp();
    let minimal_c = (alpha.0.iter().map(|a| ln_gamma(a + 1.0)).sum::<f64>() / m).exp();
    Ok(SimplexBoundReport {
        exact,
        bound,
        minimal_c,
        holds: exact <= bound * (1.0 + 1e-12),
    })
}

/// `f_n` at `points = [(s_i, y_i)]`:
/// `(1/n!) p_{t-s_(n)}(x - y_(n)) ⋯ p_{s_(2)-s_(1)}(y_(2) - y_(1)) (p_{s_(1)} * u₀)(y_(1))`
/// with the points sorted by time.
pub fn chaos_kernel(points: &[(f64, f64)], t: f64, x: f64, params: &ModelParams) -> Result<f64> {
    let n = points.len();
    if n == 0 {
        return params.u0.heat_flow(t, x, params.kappa);
    }
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in p.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(PamError::param("points", "coincident times"));
        }
    }
    if p[0].0 <= 0.0 || p[n - 1].0 >= t {
        return Err(PamError::param("points", "times must lie in (0, t)"));
    }
    let k = params.kappa;
    let mut v = params.u0.heat_flow(p[0].0, p[0].1, k)?;
    for w in p.windows(2) {
        v *= heat_kernel(w[1].0 - w[0].0, w[1].1 - w[0].1, k);
    }
    v *= heat_kernel(t - p[n - 1].0, x - p[n - 1].1, k);
    Ok(v / gamma(n as f64 + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChaosMethod {
    Quadrature,
    MonteCarlo,
}

/// Estimate of `n! ‖f_n‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosNormEstimate {
    pub order: usize,
    pub value: f64,
    pub stderr: f64,
    pub method: ChaosMethod,
    pub samples: u64,
    /// Budget ran out before the stderr target.
    pub budget_exhausted: bool,
}

/// Monte Carlo budget: batches of `batch` samples until the relative stderr
/// drops below `target_rel_stderr` or `max_samples` is reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosBudget {
    pub max_samples: u64,
    pub batch: u64,
    pub target_rel_stderr: f64,
    pub seed: u64,
}

impl Default for ChaosBudget {
    fn default() -> Self {
        ChaosBudget {
            max_samples: 4_000_000,
            batch: 20_000,
            target_rel_stderr: 2e-3,
            seed: 0x5eed,
        }
    }
}

/// `(g(a) - g(b)) / (b - a)` with `g(z) = (1 - e^{-zt})/z`: the integral of
/// `e^{-a u_1 - b u_2}` over `u_1, u_2 > 0`, `u_1 + u_2 < t`.
pub(crate) fn two_gap_time_integral(a: f64, b: f64, t: f64) -> f64 {
    let d = b - a;
    if (d * t).abs() < 1e-3 {
        // Taylor expansion about the midpoint; g^{(k)}(z) = (-1)^k t^{k+1} γ_k(zt)
        let m = 0.5 * (a + b);
        let z = m * t;
        let g1 = -t * t * gamma_moment(1, z);
        let g3 = -t.powi(4) * gamma_moment(3, z);
        return -g1 - g3 * d * d / 24.0;
    }
    let g = |z: f64| t * crate::special::phi1(z * t);
    (g(a) - g(b)) / d
}

fn require_order(n: usize) -> Result<()> {
    if n == 0 {
        Err(PamError::param("n", "chaos order must be at least 1"))
    } else {
        Ok(())
    }
}

/// `n! ‖f_n(·, t, x)‖²`.
pub fn chaos_norm_sq(n: usize, t: f64, x: f64, params: &ModelParams, budget: &ChaosBudget) -> Result<ChaosNormEstimate> {
    chaos_norm_sq_mollified(n, t, x, 0.0, params, budget)
}

/// Chaos norm with the mollifier `e^{-ε Σ ξ_i²}`; gives the terms of
/// `E[u_ε²]`. `eps = 0` is the unmollified norm.
pub fn chaos_norm_sq_mollified(
    n: usize,
    t: f64,
    x: f64,
    eps: f64,
    params: &ModelParams,
    budget: &ChaosBudget,
) -> Result<ChaosNormEstimate> {
    require_order(n)?;
    if !(t > 0.0) {
        return Err(PamError::param("t", format!("{t} must be positive")));
    }
    if !(eps >= 0.0) {
        return Err(PamError::param("eps", format!("{eps} must be nonnegative")));
    }
    let exact = |value: f64| ChaosNormEstimate {
        order: n,
        value,
        stderr: 0.0,
        method: ChaosMethod::Quadrature,
        samples: 0,
        budget_exhausted: false,
    };
    match &params.u0 {
        InitialCondition::Constant(c) => {
            if *c == 0.0 {
                return Ok(exact(0.0));
            }
            if eps == 0.0 && n == 1 {
                return Ok(exact(c * c * first_chaos_constant(t, params)?));
            }
            if eps == 0.0 && n == 2 {
                return Ok(exact(c * c * second_chaos_constant(t, params)?));
            }
            let mut e = chaos_mc(n, t, x, eps, params, budget)?;
            e.value *= c * c;
            e.stderr *= c * c;
            Ok(e)
        }
        InitialCondition::Bumps(b) if b.len() == 1 => {
            if b[0].amplitude == 0.0 {
                return Ok(exact(0.0));
            }
            if eps == 0.0 && n == 1 {
                return Ok(exact(first_chaos_bump(t, x, &b[0], params)?));
            }
            chaos_mc(n, t, x, eps, params, budget)
        }
        _ => Err(PamError::param(
            "u0",
            "chaos norms are implemented for constant and single-bump initial conditions",
        )),
    }
}

/// `T_1 = c1h ∫ |η|^β t φ₁(κ t η²) dη` for `u₀ ≡ 1`.
fn first_chaos_constant(t: f64, params: &ModelParams) -> Result<f64> {
    let beta = params.h.beta();
    let k = params.kappa;
    let f = |eta: f64| eta.powf(beta) * t * crate::special::phi1(k * t * eta * eta);
    let tol = Tolerance::new(1e-14, 1e-10).with_max_intervals(100_000);
    let scale = 1.0 / (k * t).sqrt();
    let r = integrate_to_infinity(|s: f64| f(s * scale) * scale, 0.0, tol)?;
    Ok(2.0 * c1h(params.h) * r.value)
}

/// Closed form of `T_1` for `u₀ ≡ 1`: `c1h Γ(1-h) κ^{h-1} t^h / h`.
pub fn first_chaos_closed_form(t: f64, h: HurstParam, kappa: f64) -> f64 {
    let hv = h.value();
    c1h(h) * gamma(1.0 - hv) * kappa.powf(hv - 1.0) * t.powf(hv) / hv
}

/// `T_2 = c1h² ∫∫ I(κη_1², κη_2²) |η_1|^β |η_2 - η_1|^β dη` with the time
/// integral `I` done analytically. The integrand is even under `η → -η`, so
/// only `η_1 > 0` is integrated; the inner line is split at `0` and `η_1`.
fn second_chaos_constant(t: f64, params: &ModelParams) -> Result<f64> {
    let beta = params.h.beta();
    let k = params.kappa;
    // unit scale: η = ζ / √(κ t)
    let sc = 1.0 / (k * t).sqrt();
    let inner_tol = Tolerance::new(1e-15, 1e-9).with_max_intervals(50_000);
    let outer_tol = Tolerance::new(1e-14, 2e-8).with_max_intervals(50_000);
    let inner = |z1: f64| -> Result<f64> {
        let e1 = z1 * sc;
        let a = k * e1 * e1;
        let f = |e2: f64| two_gap_time_integral(a, k * e2 * e2, t) * (e2 - e1).abs().powf(beta);
        let left = integrate_to_infinity(|r: f64| f(-r * sc) * sc, 0.0, inner_tol)?.value;
        let mid = integrate(|r: f64| f(r * sc) * sc, 0.0, z1, inner_tol)?.value;
        let right = integrate_to_infinity(|r: f64| f((z1 + r) * sc) * sc, 0.0, inner_tol)?.value;
        Ok(e1.powf(beta) * (left + mid + right))
    };
    let err = std::cell::RefCell::new(None);
    let outer = integrate_to_infinity(
        |z1: f64| match inner(z1) {
            Ok(v) => v * sc,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        0.0,
        outer_tol,
    )?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    let c = c1h(params.h);
    Ok(2.0 * c * c * outer.value)
}

/// `T_1` for a single Gaussian bump.
fn first_chaos_bump(t: f64, x: f64, b: &Bump, params: &ModelParams) -> Result<f64> {
    let hv = params.h.value();
    let k = params.kappa;
    let w2 = b.width * b.width;
    let s_tot = w2 + k * t;
    let d = x - b.center;
    let pref = b.amplitude * b.amplitude * (w2 / s_tot) * (-d * d / s_tot).exp();
    // ∫ e^{-κuη² + (κuη)²/S} |η|^β dη = Γ(1-h) (κ u (w² + κ s) / S)^{h-1},  u = t - s
    let f = |s: f64| {
        let u = t - s;
        (k * u * (w2 + k * s) / s_tot).powf(hv - 1.0)
    };
    let tol = Tolerance::new(1e-15, 1e-10);
    let r = integrate(f, 0.0, t, tol)?;
    Ok(c1h(params.h) * pref * gamma(1.0 - hv) * r.value)
}

/// Dirichlet proposal exponents for the gaps `(slack, u_1, …, u_n)`.
fn proposal_exponents(n: usize, h: f64) -> Vec<f64> {
    let mut a = vec![1.0];
    for _ in 1..n {
        a.push(2.0 * h - 0.5);
    }
    a.push(h);
    a
}

struct McSetup {
    n: usize,
    t: f64,
    eps: f64,
    kappa: f64,
    beta: f64,
    log_c: f64,
    alphas: Vec<f64>,
    gammas: Vec<Gamma<f64>>,
    log_dir_norm: f64,
    bump: Option<(Bump, f64)>,
}

impl McSetup {
    fn sample<R: Rng>(&self, r: &mut R, gaps: &mut [f64], eta: &mut [f64]) -> f64 {
        let n = self.n;
        let mut tot = 0.0;
        for (g, d) in gaps.iter_mut().zip(&self.gammas) {
            // floor keeps the log finite when a tiny-shape draw underflows
            *g = d.sample(r).max(1e-300);
            tot += *g;
        }
        let mut log_q = self.log_dir_norm;
        for (g, a) in gaps.iter_mut().zip(&self.alphas) {
            *g /= tot;
            log_q += (a - 1.0) * g.ln();
            *g *= self.t;
        }
        // gaps[0] is the slack s_1, gaps[i] = u_i
        let mut log_w = n as f64 * self.t.ln() - log_q + self.log_c;
        let shared = match &self.bump {
            Some((b, _)) => {
                let s1 = b.width * b.width + self.kappa * gaps[0];
                let y: f64 = r.sample(StandardNormal);
                y / (2.0 * s1).sqrt()
            }
            None => 0.0,
        };
        for i in 1..=n {
            let u = gaps[i];
            let z: f64 = r.sample(StandardNormal);
            eta[i - 1] = z / (2.0 * self.kappa * u).sqrt() + shared;
            log_w += 0.5 * (PI / (self.kappa * u)).ln();
        }
        if let Some((b, s_tot)) = &self.bump {
            let s1 = b.width * b.width + self.kappa * gaps[0];
            log_w += 0.5 * (s_tot / s1).ln();
        }
        let mut prev = 0.0;
        let mut sq = 0.0;
        for &e in eta.iter().take(n) {
            let d = e - prev;
            log_w += self.beta * d.abs().ln();
            sq += d * d;
            prev = e;
        }
        if self.eps > 0.0 {
            log_w -= self.eps * sq;
        }
        log_w.exp()
    }
}

fn chaos_mc(n: usize, t: f64, x: f64, eps: f64, params: &ModelParams, budget: &ChaosBudget) -> Result<ChaosNormEstimate> {
    let hv = params.h.value();
    let alphas = proposal_exponents(n, hv);
    let gammas = alphas
        .iter()
        .map(|a| Gamma::new(*a, 1.0).map_err(|e| PamError::param("alpha", e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let log_dir_norm = ln_gamma(alphas.iter().sum()) - alphas.iter().map(|a| ln_gamma(*a)).sum::<f64>();
    let mut log_c = n as f64 * c1h(params.h).ln();
    let bump = match &params.u0 {
        InitialCondition::Bumps(b) => {
            let b = b[0];
            let w2 = b.width * b.width;
            let s_tot = w2 + params.kappa * t;
            let d = x - b.center;
            log_c += (b.amplitude * b.amplitude * w2 / s_tot).ln() - d * d / s_tot;
            Some((b, s_tot))
        }
        _ => None,
    };
    let setup = McSetup {
        n,
        t,
        eps,
        kappa: params.kappa,
        beta: params.h.beta(),
        log_c,
        alphas,
        gammas,
        log_dir_norm,
        bump,
    };
    let mut stats = RunningStats::new();
    let mut next_stream = 0u64;
    let batch = budget.batch.max(2);
    // fixed work units so results do not depend on the thread count
    const UNIT: u64 = 1000;
    let tag = (n as u64) << 32 | (eps.to_bits() >> 32);
    let seed = rng::derive_seed(budget.seed, tag);
    loop {
        let units = batch.div_ceil(UNIT);
        let parts: Vec<RunningStats> = (next_stream..next_stream + units)
            .into_par_iter()
            .map(|s| {
                let mut r = rng::stream(seed, s);
                let mut gaps = vec![0.0; n + 1];
                let mut eta = vec![0.0; n];
                (0..UNIT).map(|_| setup.sample(&mut r, &mut gaps, &mut eta)).collect()
            })
            .collect();
        next_stream += units;
        for p in &parts {
            stats.merge(p);
        }
        let rel = stats.stderr() / stats.mean().abs().max(f64::MIN_POSITIVE);
        if rel <= budget.target_rel_stderr {
            return Ok(mc_estimate(n, &stats, false));
        }
        if stats.count() >= budget.max_samples {
            return Ok(mc_estimate(n, &stats, true));
        }
    }
}

fn mc_estimate(n: usize, s: &RunningStats, exhausted: bool) -> ChaosNormEstimate {
    ChaosNormEstimate {
        order: n,
        value: s.mean(),
        stderr: s.stderr(),
        method: ChaosMethod::MonteCarlo,
        samples: s.count(),
        budget_exhausted: exhausted,
    }
}

/// Forces the Monte Carlo estimator, for cross-checking the quadrature.
pub fn chaos_norm_sq_monte_carlo(
    n: usize,
    t: f64,
    x: f64,
    params: &ModelParams,
    budget: &ChaosBudget,
) -> Result<ChaosNormEstimate> {
    require_order(n)?;
    let c2 = params.u0.as_constant().map(|c| c * c).unwrap_or(1.0);
    let mut e = chaos_mc(n, t, x, 0.0, params, budget)?;
    e.value *= c2;
    e.stderr *= c2;
    Ok(e)
}

/// `Γ((1 + βm)/2) Γ((1 - βm)/2)`: η-moment times the simplex Gamma factor.
fn pair_weight(m: usize, beta: f64) -> f64 {
    let bm = beta * m as f64;
    gamma(0.5 * (1.0 + bm)) * gamma(0.5 * (1.0 - bm))
}

/// Sum over the `2^{n-1}` ways of charging each factor `|η_i - η_{i-1}|^β`
/// (bounded by `|η_i|^β + |η_{i-1}|^β`) to one endpoint. `first_on_eta1`
/// says whether the first factor lands on `η_1` (else on an external mode).
fn charge_sum(n: usize, beta: f64, first_on_eta1: bool) -> f64 {
    let a1 = usize::from(first_on_eta1);
    if n == 1 {
        return pair_weight(a1, beta);
    }
    // state: choice of factor i, 0 = left endpoint, 1 = right endpoint
    let mut dp = [pair_weight(a1 + 1, beta), pair_weight(a1, beta)];
    for _ in 2..n {
        let mut next = [0.0; 2];
        for (c, v) in dp.iter().enumerate() {
            let from_prev = usize::from(c == 1);
            next[0] += v * pair_weight(from_prev + 1, beta);
            next[1] += v * pair_weight(from_prev, beta);
        }
        dp = next;
    }
    dp[0] * pair_weight(0, beta) + dp[1] * pair_weight(1, beta)
}

/// Upper bound for `n!‖f_n‖²` when `u₀ ≡ 1` and the first factor is charged
/// to `η_1` (`first_on_eta1`) or to an external mode.
fn constant_bound(n: usize, t: f64, h: HurstParam, kappa: f64, first_on_eta1: bool) -> f64 {
    let beta = h.beta();
    let m_on_eta = (n - 1 + usize::from(first_on_eta1)) as f64;
    let expo = 0.5 * (n as f64 - beta * m_on_eta);
    let log = n as f64 * c1h(h).ln() - 0.5 * (n as f64 + beta * m_on_eta) * kappa.ln() + expo * t.ln()
        - ln_gamma(expo + 1.0)
        + charge_sum(n, beta, first_on_eta1).ln();
    log.exp()
}

/// Rigorous upper bound for `n! ‖f_n(·,t,x)‖²`.
///
/// Uses `|a - b|^β ≤ |a|^β + |b|^β`, the Gaussian moments of every `η_i` and
/// the exact Dirichlet simplex integral; all constants are explicit. For
/// non-constant `u₀` the initial frequency `ζ` is handled by Minkowski:
/// `[(2π)^{-1} ∫ |Fu₀(ζ)| (B_n + |ζ|^β B'_n)^{1/2} dζ]²`.
pub fn chaos_norm_upper_bound(n: usize, t: f64, params: &ModelParams) -> Result<f64> {
    require_order(n)?;
    let h = params.h;
    let b_on = constant_bound(n, t, h, params.kappa, true);
    match &params.u0 {
        InitialCondition::Constant(c) => Ok(c * c * b_on),
        u0 => {
            let b_off = constant_bound(n, t, h, params.kappa, false);
            let beta = h.beta();
            let f = |z: f64| {
                let fu = u0.fourier(z).unwrap().norm() + u0.fourier(-z).unwrap().norm();
                fu * (b_on + z.powf(beta) * b_off).sqrt()
            };
            let r = integrate_to_infinity(f, 0.0, Tolerance::new(1e-15, 1e-9))?;
            Ok((r.value / (2.0 * PI)).powi(2))
        }
    }
}

/// Limit of `B_{n+1}/B_n · Γ((n+1)h+1)/Γ(nh+1)` for constant data:
/// `c1h κ^{h-1} t^h` times the leading eigenvalue of the charging transfer matrix.
pub fn bound_growth_constant(t: f64, h: HurstParam, kappa: f64) -> f64 {
    let beta = h.beta();
    let (w0, w1, w2) = (pair_weight(0, beta), pair_weight(1, beta), pair_weight(2, beta));
    // [[w1, w0], [w2, w1]]
    let lambda = w1 + (w0 * w2).sqrt();
    c1h(h) * kappa.powf(h.value() - 1.0) * t.powf(h.value()) * lambda
}

/// Truncated series for `E[u²(t,x)]` with a rigorous tail envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub t: f64,
    pub x: f64,
    pub n_max: usize,
    pub terms: Vec<ChaosNormEstimate>,
    pub upper_bounds: Vec<f64>,
    /// `(p_t * u₀)(x)² + Σ_{n ≤ n_max} n!‖f_n‖²`.
    pub partial_sum: f64,
    pub partial_stderr: f64,
    /// `Σ_{n > n_max}` of the upper bounds.
    pub tail_bound: f64,
    /// Tail above 10% of the partial sum.
    pub under_resolved: bool,
}

impl SeriesReport {
    pub fn value(&self) -> f64 {
        self.partial_sum
    }

    /// Partial sums after each order, starting with the zeroth chaos.
    pub fn partial_sums(&self) -> Vec<f64> {
        let mut s = self.partial_sum - self.terms.iter().map(|e| e.value).sum::<f64>();
        let mut out = vec![s];
        for e in &self.terms {
            s += e.value;
            out.push(s);
        }
        out
    }

    /// CSV with columns `n, chaos_norm_sq, stderr, upper_bound`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["n", "chaos_norm_sq", "stderr", "upper_bound"])?;
        for (e, b) in self.terms.iter().zip(&self.upper_bounds) {
            wr.write_record(&[
                e.order.to_string(),
                format!("{:.16e}", e.value),
                format!("{:.16e}", e.stderr),
                format!("{:.16e}", b),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn second_moment_series(
    t: f64,
    x: f64,
    params: &ModelParams,
    n_max: usize,
    budget: &ChaosBudget,
) -> Result<SeriesReport> {
    second_moment_series_mollified(t, x, 0.0, params, n_max, budget)
}

/// Same series with mollified terms; the tail bound is unchanged since the
/// mollifier only lowers each term.
pub fn second_moment_series_mollified(
    t: f64,
    x: f64,
    eps: f64,
    params: &ModelParams,
    n_max: usize,
    budget: &ChaosBudget,
) -> Result<SeriesReport> {
    if n_max < 2 {
        return Err(PamError::param("n_max", "need at least 2"));
    }
    let p0 = params.u0.heat_flow(t, x, params.kappa)?;
    let mut sum = p0 * p0;
    let mut var = 0.0;
    let mut terms = Vec::new();
    let mut bounds = Vec::new();
    for n in 1..=n_max {
        let e = chaos_norm_sq_mollified(n, t, x, eps, params, budget)?;
        sum += e.value;
        var += e.stderr * e.stderr;
        terms.push(e);
        bounds.push(chaos_norm_upper_bound(n, t, params)?);
    }
    let mut tail = 0.0;
    for n in n_max + 1..n_max + 400 {
        let b = chaos_norm_upper_bound(n, t, params)?;
        tail += b;
        if b < 1e-17 * sum {
            break;
        }
    }
    Ok(SeriesReport {
        t,
        x,
        n_max,
        terms,
        upper_bounds: bounds,
        partial_sum: sum,
        partial_stderr: var.sqrt(),
        tail_bound: tail,
        under_resolved: tail > 0.1 * sum,
    })
}

/// Partial sum of `Σ x^m / Γ(am+1)` against `c₁ exp(c₂ x^{1/a})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MittagLefflerReport {
    pub x: f64,
    pub a: f64,
    pub terms: usize,
    pub log_partial_sum: f64,
    pub partial_sum: f64,
    pub envelope: f64,
    pub log_envelope: f64,
    pub within: bool,
}

pub fn mittag_leffler_envelope(x: f64, a: f64) -> Result<MittagLefflerReport> {
    mittag_leffler_envelope_with(x, a, 2.0, 1.0)
}

pub fn mittag_leffler_envelope_with(x: f64, a: f64, c1: f64, c2: f64) -> Result<MittagLefflerReport> {
    if !(a > 0.0 && a < 1.0) {
        return Err(PamError::param("a", format!("{a} must lie in (0, 1)")));
    }
    if !(x >= 0.0) {
        return Err(PamError::param("x", format!("{x} must be nonnegative")));
    }
    let mut logs = vec![0.0];
    if x > 0.0 {
        let lx = x.ln();
        let mut best = 0.0f64;
        let mut m = 1usize;
        loop {
            let lt = m as f64 * lx - ln_gamma(a * m as f64 + 1.0);
            logs.push(lt);
            best = best.max(lt);
            // past the peak and below the cutoff relative to the largest term
            if lt < best && lt - best < 16.0 * -(10f64.ln()) - 5.0 {
                break;
            }
            m += 1;
            if m > 1_000_000 {
                break;
            }
        }
    }
    let ls = log_sum_exp(&logs);
    let le = c1.ln() + c2 * x.powf(1.0 / a);
    Ok(MittagLefflerReport {
        x,
        a,
        terms: logs.len(),
        log_partial_sum: ls,
        partial_sum: ls.exp(),
        envelope: le.exp(),
        log_envelope: le,
        within: ls <= le,
    })
}

/// One row of the simplex sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexSweepRow {
    pub m: usize,
    pub alpha: Vec<f64>,
    pub exact: f64,
    pub minimal_c: f64,
}

/// All multi-indices of length `1..=m_max` over `{0, β, 2β}`.
pub fn simplex_sweep(t: f64, h: HurstParam, m_max: usize) -> Result<Vec<SimplexSweepRow>> {
    let beta = h.beta();
    let choices = [0.0, beta, 2.0 * beta];
    let mut rows = Vec::new();
    for m in 1..=m_max {
        let total = 3usize.pow(m as u32);
        for code in 0..total {
            let mut c = code;
            let alpha: Vec<f64> = (0..m)
                .map(|_| {
                    let v = choices[c % 3];
                    c /= 3;
                    v
                })
                .collect();
            let mi = MultiIndex::new(alpha.clone())?;
            let rep = simplex_bound_check(t, &mi, 1.0)?;
            rows.push(SimplexSweepRow {
                m,
                alpha,
                exact: rep.exact,
                minimal_c: rep.minimal_c,
            });
        }
    }
    Ok(rows)
}

pub fn write_simplex_sweep_csv<W: Write>(rows: &[SimplexSweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["m", "alpha", "exact", "minimal_c"])?;
    for r in rows {
        let a: Vec<String> = r.alpha.iter().map(|v| format!("{v:.6}")).collect();
        wr.write_record(&[
            r.m.to_string(),
            a.join(";"),
            format!("{:.16e}", r.exact),
            format!("{:.16e}", r.minimal_c),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
