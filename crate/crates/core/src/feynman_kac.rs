//! Mollified Feynman–Kac moments.
//!
//! For noise mollified at scale `ε` and `u₀` bounded,
//!
//! ```text
//! E[u_ε(t,x)^n] = E[ Π_j u₀(x + B^j_{κt}) · exp(2π c1h Σ_{j<k} V^{jk}) ],
//! V^{jk} = ∫_0^t f_ε(B^j_{κr} - B^k_{κr}) dr,
//! ```
//!
//! where `f_ε` is the mollified covariance normalized with `(2π)^{-1}`. The
//! `2π` restores the spectral measure `c1h |ξ|^{1-2h} dξ` of the noise, and
//! each unordered pair is counted once; with this weight the first-order term
//! of the exponential matches the first chaos exactly.
//!
//! Path integrals use the trapezoid rule on a uniform grid and a tabulated
//! `F(y) = f_1(y)`, from which `f_ε(x) = ε^{h-1} F(x/√ε)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PamError, Result};
use crate::heat_solver::ModelParams;
use crate::rng;
use crate::special::gamma;
use crate::spectral_noise::{c1h, scaled_kernel, scaled_kernel_derivative, HurstParam};
use crate::stats::RunningStats;

/// Exponent ceiling; larger exponents are clipped and counted.
pub const EXPONENT_CLIP: f64 = 700.0;

/// Share of clipped samples above which an estimate is invalid.
pub const CLIP_TOLERANCE: f64 = 1e-3;

const TABLE_STEP: f64 = 0.005;

/// Cubic Hermite table of `F` on the grid `s = asinh(y)`.
#[derive(Debug)]
pub struct MollifierTable {
    h: HurstParam,
    y_max: f64,
    values: Vec<f64>,
    // dF/ds at the nodes
    slopes: Vec<f64>,
}

impl MollifierTable {
    pub fn build(h: HurstParam, y_max: f64) -> Result<Self> {
        let s_max = y_max.asinh();
        let n = (s_max / TABLE_STEP).ceil() as usize + 1;
        let nodes: Vec<Result<(f64, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let s = i as f64 * TABLE_STEP;
                let y = s.sinh();
                let f = scaled_kernel(y, h, 1e-13)?;
                let d = scaled_kernel_derivative(y, h, 1e-13)?;
                Ok((f, d * s.cosh()))
            })
            .collect();
        let mut values = Vec::with_capacity(n);
        let mut slopes = Vec::with_capacity(n);
        for r in nodes {
            let (f, d) = r?;
            values.push(f);
            slopes.push(d);
        }
        Ok(MollifierTable {
            h,
            y_max: ((n - 1) as f64 * TABLE_STEP).sinh(),
            values,
            slopes,
        })
    }

    /// Shared table covering at least `y_max`, built once per Hurst index
    /// and power-of-two range.
    pub fn shared(h: HurstParam, y_max: f64) -> Result<Arc<MollifierTable>> {
        static CACHE: OnceLock<Mutex<HashMap<(u64, u64), Arc<MollifierTable>>>> = OnceLock::new();
        let bucket = y_max.max(16.0).log2().ceil() as u64;
        let key = (h.value().to_bits(), bucket);
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(t) = cache.lock().expect("table cache").get(&key) {
            return Ok(t.clone());
        }
        let t = Arc::new(MollifierTable::build(h, 2f64.powi(bucket as i32))?);
        cache.lock().expect("table cache").entry(key).or_insert(t.clone());
        Ok(t)
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn hurst(&self) -> HurstParam {
        self.h
    }

    /// `F(|y|)`; beyond the table the kernel is evaluated by quadrature.
    pub fn eval(&self, y: f64) -> f64 {
        let y = y.abs();
        if y > self.y_max {
            return scaled_kernel(y, self.h, 1e-13).unwrap_or(0.0);
        }
        let s = y.asinh();
        let pos = s / TABLE_STEP;
        let i = (pos as usize).min(self.values.len() - 2);
        let u = pos - i as f64;
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        let (d0, d1) = (self.slopes[i] * TABLE_STEP, self.slopes[i + 1] * TABLE_STEP);
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * f0 + (u3 - 2.0 * u2 + u) * d0 + (-2.0 * u3 + 3.0 * u2) * f1 + (u3 - u2) * d1
    }

    /// `f_ε(x)`.
    pub fn mollified(&self, x: f64, eps: f64) -> f64 {
        eps.powf(self.h.value() - 1.0) * self.eval(x / eps.sqrt())
    }
}

/// Table range sufficient for path differences at time `t` and scale `eps`.
fn table_range(t: f64, kappa: f64, eps: f64) -> f64 {
    // differences of two paths have variance 2κt; 9 standard deviations
    9.0 * (2.0 * kappa * t).sqrt() / eps.sqrt() + 1.0
}

/// Discretized `B_{κ·}` paths on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianEnsemble {
    pub n_paths: usize,
    pub dt_b: f64,
    pub times: Vec<f64>,
    /// `values[j][i]` is path `j` at `times[i]`.
    pub values: Vec<Vec<f64>>,
    pub kappa_scaled: bool,
}

fn step_count(t: f64, dt_b: f64) -> Result<usize> {
    if !(dt_b > 0.0) {
        return Err(PamError::param("dt_b", format!("{dt_b} must be positive")));
    }
    if !(t >= 0.0) {
        return Err(PamError::param("t", format!("{t} must be nonnegative")));
    }
    let r = t / dt_b;
    let n = r.round();
    if (r - n).abs() > 1e-9 * r.max(1.0) {
        return Err(PamError::param("dt_b", format!("{dt_b} does not divide t = {t}")));
    }
    Ok(n as usize)
}

/// Draws `n` independent paths of `B_{κr}`, `0 ≤ r ≤ t`. Increments are drawn
/// step by step across paths, so a longer horizon extends the same paths.
pub fn sample_ensemble<R: Rng + ?Sized>(n: usize, t: f64, dt_b: f64, kappa: f64, rng: &mut R) -> Result<BrownianEnsemble> {
    let steps = step_count(t, dt_b)?;
    let sd = (kappa * dt_b).sqrt();
    let mut values = vec![Vec::with_capacity(steps + 1); n];
    for v in values.iter_mut() {
        v.push(0.0);
    }
    for _ in 0..steps {
        for v in values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            let last = *v.last().unwrap();
            v.push(last + sd * z);
        }
    }
    Ok(BrownianEnsemble {
        n_paths: n,
        dt_b,
        times: (0..=steps).map(|i| i as f64 * dt_b).collect(),
        values,
        kappa_scaled: true,
    })
}

/// `V^{jk} = ∫_0^t f_ε(B^j - B^k) dr` by the trapezoid rule.
pub fn pair_functional(ens: &BrownianEnsemble, j: usize, k: usize, eps: f64, h: HurstParam) -> Result<f64> {
    if j == k {
        return Err(PamError::param("k", "pair functional needs two distinct paths"));
    }
    if !(eps > 0.0) {
        return Err(PamError::param("eps", format!("{eps} must be positive")));
    }
    let a = &ens.values[j];
    let b = &ens.values[k];
    let steps = a.len() - 1;
    if steps == 0 {
        return Ok(0.0);
    }
    let span = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let table = MollifierTable::shared(h, span / eps.sqrt() + 1.0)?;
    Ok(trapezoid(a.iter().zip(b).map(|(x, y)| table.mollified(x - y, eps)), ens.dt_b))
}

/// `Σ_{j≠k} V^{jk}` over ordered pairs, `(j,k)` and `(k,j)` taken together.
pub fn pair_sum_ordered(ens: &BrownianEnsemble, eps: f64, h: HurstParam) -> Result<f64> {
    let mut sum = 0.0;
    for j in 0..ens.n_paths {
        for k in j + 1..ens.n_paths {
            sum += pair_functional(ens, j, k, eps, h)? + pair_functional(ens, k, j, eps, h)?;
        }
    }
    Ok(sum)
}

/// `Σ_{j<k} V^{jk}`.
pub fn pair_sum_unordered(ens: &BrownianEnsemble, eps: f64, h: HurstParam) -> Result<f64> {
    let mut sum = 0.0;
    for j in 0..ens.n_paths {
        for k in j + 1..ens.n_paths {
            sum += pair_functional(ens, j, k, eps, h)?;
        }
    }
    Ok(sum)
}

fn trapezoid<I: Iterator<Item = f64>>(values: I, dt: f64) -> f64 {
    let mut sum = 0.0;
    let mut first = None;
    let mut last = 0.0;
    for v in values {
        if first.is_none() {
            first = Some(v);
        }
        sum += v;
        last = v;
    }
    match first {
        None => 0.0,
        Some(f) => dt * (sum - 0.5 * (f + last)),
    }
}

/// `E V^{jk} = Γ(1-h) [(ε+κt)^h - ε^h] / (2π κ h)`.
pub fn expected_pair_functional(t: f64, eps: f64, h: HurstParam, kappa: f64) -> f64 {
    let hv = h.value();
    gamma(1.0 - hv) * ((eps + kappa * t).powf(hv) - eps.powf(hv)) / (2.0 * PI * kappa * hv)
}

/// Coupling in front of `Σ_{j<k} V^{jk}`.
pub fn pair_coupling(h: HurstParam) -> f64 {
    2.0 * PI * c1h(h)
}

/// Jensen lower bound `exp(2π c1h · n(n-1)/2 · E V)` for `u₀ ≡ 1`.
pub fn jensen_floor(n: usize, t: f64, eps: f64, h: HurstParam, kappa: f64) -> f64 {
    let pairs = (n * n.saturating_sub(1) / 2) as f64;
    (pair_coupling(h) * pairs * expected_pair_functional(t, eps, h, kappa)).exp()
}

/// Sampling controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkOptions {
    pub dt_b: f64,
    pub samples: usize,
    pub seed: u64,
    /// Multiplies the pair coupling; 0 gives the noiseless model.
    #[serde(default = "one")]
    pub coupling_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl FkOptions {
    pub fn new(dt_b: f64, samples: usize, seed: u64) -> Self {
        FkOptions {
            dt_b,
            samples,
            seed,
            coupling_scale: 1.0,
        }
    }
}

/// Monte Carlo estimate of `E[u^n(t,x)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub n: usize,
    pub t: f64,
    pub x: f64,
    pub kappa: f64,
    /// Mollification scale; 0 marks an extrapolated value.
    pub eps: f64,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
    pub clipped: usize,
    /// Set when the estimate must not be used (clipping, monotonicity).
    pub flagged: bool,
    pub extrapolation_uncertainty: Option<f64>,
}

/// Shared sampler: one pass over the paths serves every `ε` of a schedule
/// and every horizon of a time grid.
struct FkRun<'a> {
    n: usize,
    x: f64,
    params: &'a ModelParams,
    eps: &'a [f64],
    // step counts at which the functional is read off, increasing
    stops: Vec<usize>,
    opts: FkOptions,
    table: Arc<MollifierTable>,
    coupling: f64,
}

struct SampleOut {
    // [stop][eps]
    values: Vec<Vec<f64>>,
    clipped: Vec<Vec<bool>>,
}

struct RunOut {
    stats: Vec<Vec<RunningStats>>,
    clips: Vec<Vec<usize>>,
    per_sample: Vec<Vec<Vec<f64>>>,
}

impl FkRun<'_> {
    fn weight(&self, pos: &[f64]) -> Result<f64> {
        match self.params.u0.as_constant() {
            Some(c) => Ok(c.powi(self.n as i32)),
            None => pos.iter().map(|p| self.params.u0.value(self.x + p)).product(),
        }
    }

    fn sample(&self, s: u64, pos: &mut [f64], acc: &mut [f64], cur: &mut [f64], scale: &[f64], inv_sqrt: &[f64]) -> Result<SampleOut> {
        let n = self.n;
        let ne = self.eps.len();
        let mut r = rng::stream(self.opts.seed, s);
        let sd = (self.params.kappa * self.opts.dt_b).sqrt();
        let pairs = (n * (n - 1) / 2) as f64;
        pos.fill(0.0);
        // r = 0: all paths coincide
        let first: Vec<f64> = (0..ne).map(|e| pairs * scale[e] * self.table.eval(0.0)).collect();
        acc.copy_from_slice(&first);
        cur.copy_from_slice(&first);
        let mut out = SampleOut {
            values: Vec::with_capacity(self.stops.len()),
            clipped: Vec::with_capacity(self.stops.len()),
        };
        let mut step = 0;
        for &stop in &self.stops {
            while step < stop {
                step += 1;
                for p in pos.iter_mut() {
                    let z: f64 = r.sample(StandardNormal);
                    *p += sd * z;
                }
                cur.fill(0.0);
                for j in 0..n {
                    for k in j + 1..n {
                        let d = (pos[j] - pos[k]).abs();
                        for e in 0..ne {
                            cur[e] += scale[e] * self.table.eval(d * inv_sqrt[e]);
                        }
                    }
                }
                for e in 0..ne {
                    acc[e] += cur[e];
                }
            }
            let weight = self.weight(pos)?;
            let mut values = Vec::with_capacity(ne);
            let mut clipped = Vec::with_capacity(ne);
            for e in 0..ne {
                let ex = self.coupling * (acc[e] - 0.5 * (first[e] + cur[e])) * self.opts.dt_b;
                clipped.push(ex > EXPONENT_CLIP);
                values.push(weight * ex.min(EXPONENT_CLIP).exp());
            }
            out.values.push(values);
            out.clipped.push(clipped);
        }
        Ok(out)
    }

    fn run(&self) -> Result<RunOut> {
        const UNIT: usize = 250;
        let ne = self.eps.len();
        let ns = self.stops.len();
        let hv = self.params.h.value();
        let scale: Vec<f64> = self.eps.iter().map(|e| e.powf(hv - 1.0)).collect();
        let inv_sqrt: Vec<f64> = self.eps.iter().map(|e| 1.0 / e.sqrt()).collect();
        let units = self.opts.samples.div_ceil(UNIT);
        let parts: Vec<Result<Vec<SampleOut>>> = (0..units)
            .into_par_iter()
            .map(|u| {
                let mut pos = vec![0.0; self.n];
                let mut acc = vec![0.0; ne];
                let mut cur = vec![0.0; ne];
                let lo = u * UNIT;
                let hi = (lo + UNIT).min(self.opts.samples);
                (lo..hi)
                    .map(|s| self.sample(s as u64, &mut pos, &mut acc, &mut cur, &scale, &inv_sqrt))
                    .collect()
            })
            .collect();
        let mut out = RunOut {
            stats: vec![vec![RunningStats::new(); ne]; ns],
            clips: vec![vec![0; ne]; ns],
            per_sample: vec![vec![Vec::with_capacity(self.opts.samples); ne]; ns],
        };
        for p in parts {
            for s in p? {
                for i in 0..ns {
                    for e in 0..ne {
                        let v = s.values[i][e];
                        out.stats[i][e].push(v);
                        out.clips[i][e] += usize::from(s.clipped[i][e]);
                        out.per_sample[i][e].push(v);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn make_run<'a>(
    n: usize,
    times: &[f64],
    x: f64,
    eps: &'a [f64],
    params: &'a ModelParams,
    opts: &FkOptions,
) -> Result<FkRun<'a>> {
    if n == 0 {
        return Err(PamError::param("n", "moment order must be at least 1"));
    }
    if eps.iter().any(|e| !(*e > 0.0)) {
        return Err(PamError::param("eps", "mollification scales must be positive"));
    }
    if opts.samples < 2 {
        return Err(PamError::param("samples", "need at least 2 samples"));
    }
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PamError::param("t", "time grid must be non-empty and increasing"));
    }
    let stops = times.iter().map(|t| step_count(*t, opts.dt_b)).collect::<Result<Vec<_>>>()?;
    let t_max = *times.last().unwrap();
    let eps_min = eps.iter().cloned().fold(f64::INFINITY, f64::min);
    let table = MollifierTable::shared(params.h, table_range(t_max.max(opts.dt_b), params.kappa, eps_min))?;
    Ok(FkRun {
        n,
        x,
        params,
        eps,
        stops,
        opts: *opts,
        table,
        coupling: pair_coupling(params.h) * opts.coupling_scale,
    })
}

#[allow(clippy::too_many_arguments)]
fn estimate(n: usize, t: f64, x: f64, eps: f64, params: &ModelParams, opts: &FkOptions, s: &RunningStats, clips: usize) -> MomentEstimate {
    MomentEstimate {
        n,
        t,
        x,
        kappa: params.kappa,
        eps,
        mean: s.mean(),
        stderr: s.stderr(),
        samples: s.count() as usize,
        seed: opts.seed,
        clipped: clips,
        flagged: clips as f64 > CLIP_TOLERANCE * s.count() as f64,
        extrapolation_uncertainty: None,
    }
}

/// `E[u_ε^n(t,x)]` at one mollification scale.
pub fn fk_moment(n: usize, t: f64, x: f64, eps: f64, params: &ModelParams, opts: &FkOptions) -> Result<MomentEstimate> {
    let sched = [eps];
    let run = make_run(n, &[t], x, &sched, params, opts)?;
    let out = run.run()?;
    Ok(estimate(n, t, x, eps, params, opts, &out.stats[0][0], out.clips[0][0]))
}

/// Consecutive difference along the schedule, from paired samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleIncrement {
    pub eps_from: f64,
    pub eps_to: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Schedule run and its extrapolation to `ε = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolatedMoment {
    pub schedule: Vec<MomentEstimate>,
    pub increments: Vec<ScheduleIncrement>,
    /// Some increment is below `-3` paired standard errors.
    pub monotonicity_violated: bool,
    /// Exponent `p` of the fitted model `E_0 - a ε^p`.
    pub exponent: f64,
    pub extrapolated: MomentEstimate,
}

impl ExtrapolatedMoment {
    pub fn smallest_eps(&self) -> &MomentEstimate {
        self.schedule.last().expect("non-empty schedule")
    }
}

/// Runs the schedule with common random numbers and extrapolates with the
/// model `E_ε = E_0 - a ε^{2h - 1/2}`, the decay rate of the mollification
/// deficit in the second and higher chaoses. `E_0` is a fixed linear
/// combination of the schedule values, so its standard error comes from the
/// same combination applied per sample. The extrapolation uncertainty is the
/// distance from `E_0` to the smallest-`ε` value.
pub fn fk_moment_extrapolated(
    n: usize,
    t: f64,
    x: f64,
    params: &ModelParams,
    schedule: &[f64],
    opts: &FkOptions,
) -> Result<ExtrapolatedMoment> {
    Ok(fk_moment_extrapolated_grid(n, &[t], x, params, schedule, opts)?.remove(0))
}

/// [`fk_moment_extrapolated`] at every time of an increasing grid, from one
/// set of paths. Each entry equals the standalone run at that time.
pub fn fk_moment_extrapolated_grid(
    n: usize,
    times: &[f64],
    x: f64,
    params: &ModelParams,
    schedule: &[f64],
    opts: &FkOptions,
) -> Result<Vec<ExtrapolatedMoment>> {
    if schedule.len() < 3 {
        return Err(PamError::param("eps_schedule", "need at least 3 scales"));
    }
    if schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(PamError::param("eps_schedule", "scales must be strictly decreasing"));
    }
    let run = make_run(n, times, x, schedule, params, opts)?;
    let out = run.run()?;
    let p = 2.0 * params.h.value() - 0.5;
    let weights = extrapolation_weights(schedule, p);
    let mut res = Vec::with_capacity(times.len());
    for (ti, &t) in times.iter().enumerate() {
        let per_sample = &out.per_sample[ti];
        let clips = &out.clips[ti];
        let mut est: Vec<MomentEstimate> = schedule
            .iter()
            .enumerate()
            .map(|(i, e)| estimate(n, t, x, *e, params, opts, &out.stats[ti][i], clips[i]))
            .collect();
        let mut increments = Vec::new();
        let mut violated = false;
        for i in 0..schedule.len() - 1 {
            let d: RunningStats = per_sample[i + 1].iter().zip(&per_sample[i]).map(|(a, b)| a - b).collect();
            if d.mean() < -3.0 * d.stderr() {
                violated = true;
            }
            increments.push(ScheduleIncrement {
                eps_from: schedule[i],
                eps_to: schedule[i + 1],
                mean: d.mean(),
                stderr: d.stderr(),
            });
        }
        if violated {
            for e in est.iter_mut() {
                e.flagged = true;
            }
        }
        let combo: RunningStats = (0..opts.samples)
            .map(|s| {
                // weights sum to one: anchor on the smallest scale
                let base = per_sample[schedule.len() - 1][s];
                base + weights.iter().enumerate().map(|(i, w)| w * (per_sample[i][s] - base)).sum::<f64>()
            })
            .collect();
        let last = *est.last().unwrap();
        let extrapolated = MomentEstimate {
            eps: 0.0,
            mean: combo.mean(),
            stderr: combo.stderr(),
            clipped: clips.iter().cloned().max().unwrap_or(0),
            flagged: est.iter().any(|e| e.flagged),
            extrapolation_uncertainty: Some((combo.mean() - last.mean).abs()),
            ..last
        };
        res.push(ExtrapolatedMoment {
            schedule: est,
            increments,
            monotonicity_violated: violated,
            exponent: p,
            extrapolated,
        });
    }
    Ok(res)
}

/// Least-squares weights `w` with `E_0 = Σ w_i E_{ε_i}` for the model
/// `E_0 - a ε^p`.
pub fn extrapolation_weights(schedule: &[f64], p: f64) -> Vec<f64> {
    let z: Vec<f64> = schedule.iter().map(|e| e.powf(p)).collect();
    let m = z.len() as f64;
    let zm = z.iter().sum::<f64>() / m;
    let szz: f64 = z.iter().map(|v| (v - zm).powi(2)).sum();
    // intercept of a line in z: E_0 = ȳ - slope·z̄, slope = Σ (z_i - z̄) y_i / Szz
    z.iter().map(|v| 1.0 / m - zm * (v - zm) / szz).collect()
}
