//! Fourier–Galerkin solver for the mild equation on a periodized domain.
//!
//! The field is stored as Fourier-series coefficients `û_k`, `0 ≤ k ≤ K`, of an
//! `L`-periodic real function; negative modes are conjugates. Each step forms
//! the product `u · dW` on a zero-padded collocation grid of size `M > 3K`,
//! transforms back, truncates to `|k| ≤ K` and applies the heat factor.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{PamError, Result};
use crate::quadrature::{cosine_transform, integrate, Tolerance};
use crate::rng;
use crate::special::phi1;
use crate::spectral_noise::{default_catalog, HurstParam, NoiseIncrement, NoiseSampler, SpectralGrid};
use crate::stats::RunningStats;

/// Abort threshold on the V-norm of any single field.
pub const INSTABILITY_THRESHOLD: f64 = 1e12;

/// Gaussian profile `amplitude · exp(-(x - center)² / (2 width²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl Bump {
    pub fn value(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        self.amplitude * (-0.5 * z * z).exp()
    }

    pub fn fourier(&self, xi: f64) -> Complex64 {
        let mag = self.amplitude * self.width * (2.0 * PI).sqrt() * (-0.5 * self.width * self.width * xi * xi).exp();
        Complex64::from_polar(mag, -xi * self.center)
    }

    /// `(p_t * u₀)(x)` for the `(κ/2)Δ` heat kernel.
    pub fn heat_flow(&self, t: f64, x: f64, kappa: f64) -> f64 {
        let s2 = self.width * self.width + kappa * t;
        let d = x - self.center;
        self.amplitude * self.width / s2.sqrt() * (-0.5 * d * d / s2).exp()
    }
}

/// Initial condition as written in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConditionSpec {
    Constant { value: f64 },
    GaussianBump { center: f64, width: f64, amplitude: f64 },
    /// Spatial parts of a catalog test function, summed.
    Catalog { name: String },
    /// `Fu₀(ξ) = amplitude · (1 + |ξ|)^{-decay}`.
    PowerSpectrum { amplitude: f64, decay: f64 },
}

impl InitialConditionSpec {
    pub fn resolve(&self) -> Result<InitialCondition> {
        match self {
            InitialConditionSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(PamError::param("u0.value", "must be finite"));
                }
                Ok(InitialCondition::Constant(*value))
            }
            InitialConditionSpec::GaussianBump {
                center,
                width,
                amplitude,
            } => {
                if !(*width > 0.0) {
                    return Err(PamError::param("u0.width", format!("{width} must be positive")));
                }
                Ok(InitialCondition::Bumps(vec![Bump {
                    amplitude: *amplitude,
                    center: *center,
                    width: *width,
                }]))
            }
            InitialConditionSpec::Catalog { name } => {
                let f = default_catalog()
                    .into_iter()
                    .find(|f| &f.name == name)
                    .ok_or_else(|| PamError::param("u0.name", format!("no catalog entry named {name}")))?;
                Ok(InitialCondition::Bumps(
                    f.terms
                        .iter()
                        .map(|t| Bump {
                            amplitude: t.amplitude / (t.width * (2.0 * PI).sqrt()),
                            center: t.center,
                            width: t.width,
                        })
                        .collect(),
                ))
            }
            InitialConditionSpec::PowerSpectrum { amplitude, decay } => {
                if !(*decay > 0.0) {
                    return Err(PamError::param("u0.decay", format!("{decay} must be positive")));
                }
                Ok(InitialCondition::PowerSpectrum {
                    amplitude: *amplitude,
                    decay: *decay,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Constant(f64),
    Bumps(Vec<Bump>),
    PowerSpectrum { amplitude: f64, decay: f64 },
}

/// Result of an admissibility quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub integral: f64,
    pub finite: bool,
}

impl InitialCondition {
    pub fn constant(c: f64) -> Self {
        InitialCondition::Constant(c)
    }

    pub fn bump(amplitude: f64, center: f64, width: f64) -> Self {
        InitialCondition::Bumps(vec![Bump {
            amplitude,
            center,
            width,
        }])
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            InitialCondition::Constant(c) => Some(*c),
            _ => None,
        }
    }

    /// `Fu₀(ξ)`; `None` for constants, whose transform is a point mass.
    pub fn fourier(&self, xi: f64) -> Option<Complex64> {
        match self {
            InitialCondition::Constant(_) => None,
            InitialCondition::Bumps(b) => Some(b.iter().map(|b| b.fourier(xi)).sum()),
            InitialCondition::PowerSpectrum { amplitude, decay } => {
                Some(Complex64::new(amplitude * (1.0 + xi.abs()).powf(-decay), 0.0))
            }
        }
    }

    /// Pointwise value; fails where `u₀` is not a bounded function.
    pub fn value(&self, x: f64) -> Result<f64> {
        self.heat_flow(0.0, x, 1.0)
    }

    /// `(p_t * u₀)(x)`.
    pub fn heat_flow(&self, t: f64, x: f64, kappa: f64) -> Result<f64> {
        match self {
            InitialCondition::Constant(c) => Ok(*c),
            InitialCondition::Bumps(b) => Ok(b.iter().map(|b| b.heat_flow(t, x, kappa)).sum()),
            InitialCondition::PowerSpectrum { amplitude, decay } => {
                if t == 0.0 && *decay <= 1.0 {
                    return Err(PamError::param(
                        "u0",
                        "power-spectrum initial condition with decay <= 1 has no pointwise values",
                    ));
                }
                let a = 0.5 * kappa * t;
                let g = |xi: f64| (1.0 + xi).powf(-decay) * (-a * xi * xi).exp();
                let cutoff = if a > 0.0 { (40.0 / a).sqrt() } else { 1e8 };
                let r = cosine_transform(g, x, cutoff, Tolerance::new(1e-12, 1e-10))?;
                Ok(amplitude * r.value / PI)
            }
        }
    }

    /// `∫ (1 + |ξ|^{1/2-h}) |Fu₀(ξ)| dξ < ∞`.
    pub fn chaos_admissibility(&self, h: HurstParam) -> Result<Admissibility> {
        let p = 0.5 - h.value();
        self.spectral_integral(move |xi, f| (1.0 + xi.abs().powf(p)) * f.norm())
    }

    /// `∫ |Fu₀(ξ)|² (1 + |ξ|^{1-2h}) dξ < ∞`.
    pub fn picard_admissibility(&self, h: HurstParam) -> Result<Admissibility> {
        let beta = h.beta();
        self.spectral_integral(move |xi, f| (1.0 + xi.abs().powf(beta)) * f.norm_sqr())
    }

    /// Integrates `w(ξ, Fu₀(ξ))` over the line decade by decade and declares
    /// divergence when the decade contributions stop shrinking.
    fn spectral_integral<W: Fn(f64, Complex64) -> f64>(&self, w: W) -> Result<Admissibility> {
        if self.as_constant().is_some() {
            return Ok(Admissibility {
                integral: 0.0,
                finite: true,
            });
        }
        let tol = Tolerance::new(1e-14, 1e-10);
        let f = |xi: f64| w(xi, self.fourier(xi).unwrap()) + w(-xi, self.fourier(-xi).unwrap());
        let mut total = integrate(f, 0.0, 1.0, tol)?.value;
        let mut shells = Vec::new();
        for j in 0..12 {
            let a = 10f64.powi(j);
            let s = integrate(f, a, 10.0 * a, tol)?.value;
            shells.push(s);
            total += s;
        }
        let n = shells.len();
        let (last, prev) = (shells[n - 1], shells[n - 2]);
        if last <= 1e-15 * total.abs().max(1e-300) {
            return Ok(Admissibility {
                integral: total,
                finite: true,
            });
        }
        let ratio = last / prev;
        if ratio < 0.9 {
            Ok(Admissibility {
                integral: total + last * ratio / (1.0 - ratio),
                finite: true,
            })
        } else {
            Ok(Admissibility {
                integral: f64::INFINITY,
                finite: false,
            })
        }
    }

    /// Fourier-series coefficients `û_k`, `0 ≤ k ≤ K`, of the `L`-periodization.
    pub fn grid_coeffs(&self, grid: &SpectralGrid) -> Vec<Complex64> {
        let mut c = vec![Complex64::new(0.0, 0.0); grid.mode_cutoff + 1];
        match self.as_constant() {
            Some(v) => c[0] = Complex64::new(v, 0.0),
            None => {
                for (k, ck) in c.iter_mut().enumerate() {
                    *ck = self.fourier(grid.xi(k as i64)).unwrap() / grid.domain_length;
                }
                c[0].im = 0.0;
            }
        }
        c
    }
}

/// Model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub h: HurstParam,
    pub kappa: f64,
    pub horizon: f64,
    pub u0: InitialCondition,
}

impl ModelParams {
    pub fn new(h: HurstParam, kappa: f64, horizon: f64, u0: InitialCondition) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(PamError::param("kappa", format!("{kappa} must be positive")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(PamError::param("horizon", format!("{horizon} must be positive")));
        }
        Ok(ModelParams { h, kappa, horizon, u0 })
    }
}

/// Snapshot `u(t, ·)` in Fourier form.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub time: f64,
    pub domain_length: f64,
    coeffs: Vec<Complex64>,
}

impl SolutionField {
    pub fn new(time: f64, domain_length: f64, mut coeffs: Vec<Complex64>) -> Self {
        coeffs[0].im = 0.0;
        SolutionField {
            time,
            domain_length,
            coeffs,
        }
    }

    pub fn initial(u0: &InitialCondition, grid: &SpectralGrid) -> Self {
        SolutionField::new(0.0, grid.domain_length, u0.grid_coeffs(grid))
    }

    pub fn mode_cutoff(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, k: i64) -> Complex64 {
        let c = self.coeffs[k.unsigned_abs() as usize];
        if k < 0 {
            c.conj()
        } else {
            c
        }
    }

    pub fn nonnegative_modes(&self) -> &[Complex64] {
        &self.coeffs
    }

    fn xi(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.domain_length
    }

    pub fn scaled(&self, a: f64) -> Self {
        SolutionField {
            time: self.time,
            domain_length: self.domain_length,
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    /// `u(t, x)` by direct summation.
    pub fn value_at(&self, x: f64) -> f64 {
        let mut s = self.coeffs[0].re;
        for k in 1..self.coeffs.len() {
            s += 2.0 * (self.coeffs[k] * Complex64::from_polar(1.0, self.xi(k) * x)).re;
        }
        s
    }

    /// Values on the collocation grid of `grid`.
    pub fn real_values(&self, grid: &SpectralGrid) -> Result<Vec<f64>> {
        if self.mode_cutoff() != grid.mode_cutoff || self.domain_length != grid.domain_length {
            return Err(PamError::GridMismatch("field does not live on this grid".into()));
        }
        let m = grid.fft_len();
        let inv = RealFftPlanner::<f64>::new().plan_fft_inverse(m);
        let mut spec = inv.make_input_vec();
        spec[..self.coeffs.len()].copy_from_slice(&self.coeffs);
        let mut out = inv.make_output_vec();
        inv.process(&mut spec, &mut out)
            .map_err(|e| PamError::GridMismatch(e.to_string()))?;
        Ok(out)
    }

    /// `∫ |Fu(ξ)|² (1 + |ξ|^{1-2h}) dξ` as a sum over grid modes.
    pub fn v_norm(&self, h: HurstParam) -> f64 {
        v_norm_of(&self.coeffs, self.domain_length, h.beta())
    }

    /// `(1/L) ∫ u² dx`.
    pub fn mean_square(&self) -> f64 {
        self.coeffs[0].norm_sqr() + 2.0 * self.coeffs[1..].iter().map(|c| c.norm_sqr()).sum::<f64>()
    }
}

fn v_norm_of(coeffs: &[Complex64], l: f64, beta: f64) -> f64 {
    let mut s = coeffs[0].norm_sqr();
    for (k, c) in coeffs.iter().enumerate().skip(1) {
        let xi = 2.0 * PI * k as f64 / l;
        s += 2.0 * c.norm_sqr() * (1.0 + xi.powf(beta));
    }
    2.0 * PI * l * s
}

pub fn v_norm(field: &SolutionField, h: HurstParam) -> f64 {
    field.v_norm(h)
}

/// Multiplies each coefficient by `e^{-κτξ_k²/2}`.
pub fn heat_semigroup_apply(field: &SolutionField, tau: f64, kappa: f64) -> Result<SolutionField> {
    if !(tau >= 0.0) {
        return Err(PamError::param("tau", format!("{tau} must be nonnegative")));
    }
    let coeffs = field
        .coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let xi = field.xi(k);
            c * (-0.5 * kappa * tau * xi * xi).exp()
        })
        .collect();
    Ok(SolutionField {
        time: field.time + tau,
        domain_length: field.domain_length,
        coeffs,
    })
}

/// Time discretization of the stochastic convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    /// `û ← e^{-a/2} (û + F[u dW])`, `a = κ dt ξ²`.
    ExponentialEuler,
    /// `û ← e^{-a/2} û + √φ₁(a) F[u dW]`: the increment carries the exact
    /// variance of the frozen-integrand convolution over one step.
    #[default]
    ExactVariance,
}

/// Reusable FFT plans and per-mode factors.
#[derive(Clone)]
pub struct SpectralSolver {
    grid: SpectralGrid,
    params: ModelParams,
    scheme: TimeScheme,
    sampler: NoiseSampler,
    damping: Vec<f64>,
    gain: Vec<f64>,
    v_weight: Vec<f64>,
    fwd: Arc<dyn RealToComplex<f64>>,
    inv: Arc<dyn ComplexToReal<f64>>,
}

/// Buffers owned by one trajectory.
pub struct Workspace {
    spec: Vec<Complex64>,
    real: Vec<f64>,
    noise: Vec<f64>,
    u: Vec<f64>,
    scratch_fwd: Vec<Complex64>,
    scratch_inv: Vec<Complex64>,
    draw: Vec<Complex64>,
}

impl SpectralSolver {
    pub fn new(params: &ModelParams, grid: &SpectralGrid, scheme: TimeScheme) -> Self {
        Self::with_coupling(params, grid, scheme, 1.0)
    }

    /// `coupling` multiplies the noise variance; 0 switches the noise off.
    pub fn with_coupling(params: &ModelParams, grid: &SpectralGrid, scheme: TimeScheme, coupling: f64) -> Self {
        let m = grid.fft_len();
        let mut planner = RealFftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let beta = params.h.beta();
        let mut damping = Vec::with_capacity(grid.mode_cutoff + 1);
        let mut gain = Vec::with_capacity(grid.mode_cutoff + 1);
        let mut v_weight = Vec::with_capacity(grid.mode_cutoff + 1);
        for k in 0..=grid.mode_cutoff {
            let xi = grid.xi(k as i64);
            let a = params.kappa * grid.dt * xi * xi;
            let d = (-0.5 * a).exp();
            damping.push(d);
            gain.push(match scheme {
                TimeScheme::ExponentialEuler => d,
                TimeScheme::ExactVariance => phi1(a).sqrt(),
            });
            v_weight.push(if k == 0 { 1.0 } else { 2.0 * (1.0 + xi.powf(beta)) });
        }
        SpectralSolver {
            grid: *grid,
            params: params.clone(),
            scheme,
            sampler: NoiseSampler::with_coupling(grid, params.h, coupling),
            damping,
            gain,
            v_weight,
            fwd,
            inv,
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn scheme(&self) -> TimeScheme {
        self.scheme
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            spec: self.fwd.make_output_vec(),
            real: self.fwd.make_input_vec(),
            noise: self.fwd.make_input_vec(),
            u: self.fwd.make_input_vec(),
            scratch_fwd: self.fwd.make_scratch_vec(),
            scratch_inv: self.inv.make_scratch_vec(),
            draw: vec![Complex64::new(0.0, 0.0); self.grid.mode_cutoff + 1],
        }
    }

    fn v_norm_fast(&self, coeffs: &[Complex64]) -> f64 {
        let s: f64 = coeffs.iter().zip(&self.v_weight).map(|(c, w)| c.norm_sqr() * w).sum();
        2.0 * PI * self.grid.domain_length * s
    }

    /// Inverse transform of `coeffs` (modes `0..=K`) into `out`.
    fn to_real(&self, coeffs: &[Complex64], out: &mut [f64], ws_spec: &mut [Complex64], scratch: &mut [Complex64]) {
        ws_spec.fill(Complex64::new(0.0, 0.0));
        ws_spec[..coeffs.len()].copy_from_slice(coeffs);
        ws_spec[0].im = 0.0;
        self.inv
            .process_with_scratch(ws_spec, out, scratch)
            .expect("buffer sizes fixed at construction");
    }

    /// Advances `coeffs` by one step given `u` on the collocation grid and the
    /// real-space noise; `u` is left stale.
    fn advance(&self, coeffs: &mut [Complex64], u: &[f64], noise: &[f64], ws: &mut Workspace) {
        for ((p, a), b) in ws.real.iter_mut().zip(u).zip(noise) {
            *p = a * b;
        }
        self.fwd
            .process_with_scratch(&mut ws.real, &mut ws.spec, &mut ws.scratch_fwd)
            .expect("buffer sizes fixed at construction");
        let inv_m = 1.0 / self.grid.fft_len() as f64;
        match self.scheme {
            TimeScheme::ExponentialEuler => {
                for k in 0..coeffs.len() {
                    coeffs[k] = (coeffs[k] + ws.spec[k] * inv_m) * self.damping[k];
                }
            }
            TimeScheme::ExactVariance => {
                for k in 0..coeffs.len() {
                    coeffs[k] = coeffs[k] * self.damping[k] + ws.spec[k] * (self.gain[k] * inv_m);
                }
            }
        }
        coeffs[0].im = 0.0;
    }

    fn noise_to_real(&self, ws: &mut Workspace) {
        let Workspace {
            draw,
            noise,
            spec,
            scratch_inv,
            ..
        } = ws;
        self.to_real(draw, noise, spec, scratch_inv);
    }

    /// One mild step with a given noise increment.
    pub fn step_mild(&self, field: &SolutionField, dw: &NoiseIncrement) -> Result<SolutionField> {
        if field.mode_cutoff() != self.grid.mode_cutoff || field.domain_length != self.grid.domain_length {
            return Err(PamError::GridMismatch("field does not match solver grid".into()));
        }
        if dw.mode_cutoff() != self.grid.mode_cutoff {
            return Err(PamError::GridMismatch("noise does not match solver grid".into()));
        }
        let mut ws = self.workspace();
        ws.draw.copy_from_slice(dw.nonnegative_modes());
        self.noise_to_real(&mut ws);
        let mut coeffs = field.coeffs.clone();
        let mut u = std::mem::take(&mut ws.u);
        self.to_real(&coeffs, &mut u, &mut ws.spec, &mut ws.scratch_inv);
        let noise = std::mem::take(&mut ws.noise);
        self.advance(&mut coeffs, &u, &noise, &mut ws);
        Ok(SolutionField {
            time: field.time + self.grid.dt,
            domain_length: field.domain_length,
            coeffs,
        })
    }

    /// Runs one trajectory, calling `observe(step, coeffs)` after the initial
    /// condition (step 0) and after every step.
    fn run<R: Rng, F: FnMut(usize, &[Complex64])>(
        &self,
        rng: &mut R,
        n_steps: usize,
        ws: &mut Workspace,
        mut observe: F,
    ) -> Result<()> {
        let mut coeffs = self.params.u0.grid_coeffs(&self.grid);
        observe(0, &coeffs);
        let mut u = std::mem::take(&mut ws.u);
        let mut noise = std::mem::take(&mut ws.noise);
        let result = (|| {
            for step in 1..=n_steps {
                self.sampler.sample_into(&mut ws.draw, rng);
                self.to_real(&ws.draw, &mut noise, &mut ws.spec, &mut ws.scratch_inv);
                self.to_real(&coeffs, &mut u, &mut ws.spec, &mut ws.scratch_inv);
                self.advance(&mut coeffs, &u, &noise, ws);
                let norm = self.v_norm_fast(&coeffs);
                if !(norm <= INSTABILITY_THRESHOLD) {
                    return Err(PamError::Unstable {
                        time: step as f64 * self.grid.dt,
                        norm,
                        threshold: INSTABILITY_THRESHOLD,
                    });
                }
                observe(step, &coeffs);
            }
            Ok(())
        })();
        ws.u = u;
        ws.noise = noise;
        result
    }

    fn check_steps(&self, n_steps: usize) -> Result<()> {
        let t = n_steps as f64 * self.grid.dt;
        if (t - self.params.horizon).abs() > 1e-9 * self.params.horizon.max(1.0) {
            return Err(PamError::param(
                "n_steps",
                format!("n_steps * dt = {t} does not match horizon {}", self.params.horizon),
            ));
        }
        Ok(())
    }

    /// Number of steps covering the horizon.
    pub fn steps_for_horizon(&self) -> Result<usize> {
        let n = (self.params.horizon / self.grid.dt).round() as usize;
        self.check_steps(n)?;
        Ok(n)
    }

    /// Single trajectory from stream `(seed, stream)`; snapshots every
    /// `snapshot_every` steps plus the initial and final states.
    pub fn solve(&self, seed: u64, stream: u64, n_steps: usize, snapshot_every: usize) -> Result<Vec<SolutionField>> {
        self.check_steps(n_steps)?;
        let every = snapshot_every.max(1);
        let mut ws = self.workspace();
        let mut r = rng::stream(seed, stream);
        let mut out = Vec::new();
        let dt = self.grid.dt;
        let l = self.grid.domain_length;
        self.run(&mut r, n_steps, &mut ws, |step, c| {
            if step % every == 0 || step == n_steps {
                out.push(SolutionField {
                    time: step as f64 * dt,
                    domain_length: l,
                    coeffs: c.to_vec(),
                });
            }
        })?;
        Ok(out)
    }

    /// Ensemble statistics over `n_traj` trajectories; trajectory `i` uses
    /// stream `i` of `seed`.
    pub fn run_ensemble(
        &self,
        n_traj: usize,
        seed: u64,
        n_steps: usize,
        snapshot_every: usize,
        probe_modes: usize,
    ) -> Result<EnsembleSummary> {
        self.check_steps(n_steps)?;
        let every = snapshot_every.max(1);
        let snaps: Vec<usize> = (0..=n_steps).filter(|s| s % every == 0 || *s == n_steps).collect();
        let kp = probe_modes.min(self.grid.mode_cutoff);
        const BATCH: usize = 16;
        let n_batches = n_traj.div_ceil(BATCH);
        let partial: Vec<Result<EnsembleSummary>> = (0..n_batches)
            .into_par_iter()
            .map(|b| {
                let mut acc = EnsembleSummary::empty(&snaps, self.grid.dt, kp);
                let mut ws = self.workspace();
                for i in b * BATCH..((b + 1) * BATCH).min(n_traj) {
                    let mut r = rng::stream(seed, i as u64);
                    let mut si = 0;
                    self.run(&mut r, n_steps, &mut ws, |step, c| {
                        if si < snaps.len() && snaps[si] == step {
                            acc.record(si, c);
                            si += 1;
                        }
                    })?;
                }
                Ok(acc)
            })
            .collect();
        let mut total = EnsembleSummary::empty(&snaps, self.grid.dt, kp);
        for p in partial {
            total.merge(&p?);
        }
        Ok(total)
    }

    /// Deterministic heat flow of the initial condition at time `t`.
    pub fn heat_flow_field(&self, t: f64) -> Result<SolutionField> {
        heat_semigroup_apply(&SolutionField::initial(&self.params.u0, &self.grid), t, self.params.kappa)
    }
}

/// Per-snapshot ensemble statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    /// `[snapshot][k]` statistics of `Re û_k` and `Im û_k`, `0 ≤ k ≤ probe`.
    pub mode_re: Vec<Vec<RunningStats>>,
    pub mode_im: Vec<Vec<RunningStats>>,
    pub value_at_0: Vec<RunningStats>,
    pub square_at_0: Vec<RunningStats>,
    /// `(1/L)∫u²`; equals `E u²(t,0)` in law for constant initial data.
    pub mean_square: Vec<RunningStats>,
}

impl EnsembleSummary {
    fn empty(snaps: &[usize], dt: f64, probe: usize) -> Self {
        let n = snaps.len();
        EnsembleSummary {
            times: snaps.iter().map(|s| *s as f64 * dt).collect(),
            mode_re: vec![vec![RunningStats::new(); probe + 1]; n],
            mode_im: vec![vec![RunningStats::new(); probe + 1]; n],
            value_at_0: vec![RunningStats::new(); n],
            square_at_0: vec![RunningStats::new(); n],
            mean_square: vec![RunningStats::new(); n],
        }
    }

    fn record(&mut self, si: usize, c: &[Complex64]) {
        for k in 0..self.mode_re[si].len() {
            self.mode_re[si][k].push(c[k].re);
            self.mode_im[si][k].push(c[k].im);
        }
        let u0 = c[0].re + 2.0 * c[1..].iter().map(|z| z.re).sum::<f64>();
        self.value_at_0[si].push(u0);
        self.square_at_0[si].push(u0 * u0);
        let ms = c[0].norm_sqr() + 2.0 * c[1..].iter().map(|z| z.norm_sqr()).sum::<f64>();
        self.mean_square[si].push(ms);
    }

    fn merge(&mut self, o: &EnsembleSummary) {
        for si in 0..self.times.len() {
            for k in 0..self.mode_re[si].len() {
                self.mode_re[si][k].merge(&o.mode_re[si][k]);
                self.mode_im[si][k].merge(&o.mode_im[si][k]);
            }
            self.value_at_0[si].merge(&o.value_at_0[si]);
            self.square_at_0[si].merge(&o.square_at_0[si]);
            self.mean_square[si].merge(&o.mean_square[si]);
        }
    }

    pub fn samples(&self) -> u64 {
        self.value_at_0.first().map(|s| s.count()).unwrap_or(0)
    }

    /// Index of the snapshot closest to `t`.
    pub fn snapshot_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    /// Summary CSV: `t, mean_at_0, second_moment_at_0, stderr, n_samples`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "mean_at_0", "second_moment_at_0", "stderr", "n_samples"])?;
        for i in 0..self.times.len() {
            wr.write_record(&[
                format!("{:.10e}", self.times[i]),
                format!("{:.16e}", self.value_at_0[i].mean()),
                format!("{:.16e}", self.square_at_0[i].mean()),
                format!("{:.16e}", self.square_at_0[i].stderr()),
                self.square_at_0[i].count().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Output of [`picard_contraction_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    /// `sup_t E‖u_{m+1} - u_m‖²_V` for `m = 0..n_iter`.
    pub differences: Vec<f64>,
    /// `sup_t E‖u_{n_iter} - u‖²_V / sup_t E‖u‖²_V` against the direct solve.
    pub final_discrepancy: f64,
}

/// Picard iteration `u_{m+1} = Γ(u_m)` started from the heat flow, with one
/// stored noise realization per sample shared by all iterates.
pub fn picard_contraction_probe(
    solver: &SpectralSolver,
    n_iter: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<PicardReport> {
    if n_iter < 2 {
        return Err(PamError::param("n_iter", "need at least 2 iterates"));
    }
    let n_steps = solver.steps_for_horizon()?;
    let m = solver.grid.fft_len();
    let kc = solver.grid.mode_cutoff + 1;
    let per_sample: Vec<Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)>> = (0..mc_samples)
        .into_par_iter()
        .map(|s| {
            let mut ws = solver.workspace();
            let mut r = rng::stream(seed, s as u64);
            // noise in real space, all steps
            let mut noise = vec![0.0; n_steps * m];
            for j in 0..n_steps {
                solver.sampler.sample_into(&mut ws.draw, &mut r);
                let Workspace {
                    draw, spec, scratch_inv, ..
                } = &mut ws;
                solver.to_real(draw, &mut noise[j * m..(j + 1) * m], spec, scratch_inv);
            }
            // iterate 0: heat flow
            let mut prev_c = vec![Complex64::new(0.0, 0.0); (n_steps + 1) * kc];
            let mut prev_u = vec![0.0; (n_steps + 1) * m];
            let init = solver.params.u0.grid_coeffs(&solver.grid);
            for j in 0..=n_steps {
                for k in 0..kc {
                    let xi = solver.grid.xi(k as i64);
                    prev_c[j * kc + k] =
                        init[k] * (-0.5 * solver.params.kappa * j as f64 * solver.grid.dt * xi * xi).exp();
                }
                let Workspace { spec, scratch_inv, .. } = &mut ws;
                solver.to_real(
                    &prev_c[j * kc..(j + 1) * kc],
                    &mut prev_u[j * m..(j + 1) * m],
                    spec,
                    scratch_inv,
                );
            }
            let mut diffs = Vec::with_capacity(n_iter);
            let mut next_c = prev_c.clone();
            let mut next_u = prev_u.clone();
            for _ in 0..n_iter {
                next_c[..kc].copy_from_slice(&init);
                let mut d = vec![0.0; n_steps + 1];
                for j in 0..n_steps {
                    let (head, tail) = next_c.split_at_mut((j + 1) * kc);
                    let cur = &mut tail[..kc];
                    cur.copy_from_slice(&head[j * kc..]);
                    solver.advance(cur, &prev_u[j * m..(j + 1) * m], &noise[j * m..(j + 1) * m], &mut ws);
                    let Workspace { spec, scratch_inv, .. } = &mut ws;
                    solver.to_real(cur, &mut next_u[(j + 1) * m..(j + 2) * m], spec, scratch_inv);
                    let diff: Vec<Complex64> = cur
                        .iter()
                        .zip(&prev_c[(j + 1) * kc..(j + 2) * kc])
                        .map(|(a, b)| a - b)
                        .collect();
                    d[j + 1] = solver.v_norm_fast(&diff);
                }
                diffs.push(d);
                std::mem::swap(&mut prev_c, &mut next_c);
                std::mem::swap(&mut prev_u, &mut next_u);
            }
            // direct solve with the same noise
            let mut direct = init.clone();
            let mut u = vec![0.0; m];
            let mut disc = vec![0.0; n_steps + 1];
            let mut size = vec![0.0; n_steps + 1];
            size[0] = solver.v_norm_fast(&direct);
            for j in 0..n_steps {
                let Workspace { spec, scratch_inv, .. } = &mut ws;
                solver.to_real(&direct, &mut u, spec, scratch_inv);
                solver.advance(&mut direct, &u, &noise[j * m..(j + 1) * m], &mut ws);
                let diff: Vec<Complex64> = direct
                    .iter()
                    .zip(&prev_c[(j + 1) * kc..(j + 2) * kc])
                    .map(|(a, b)| a - b)
                    .collect();
                disc[j + 1] = solver.v_norm_fast(&diff);
                size[j + 1] = solver.v_norm_fast(&direct);
            }
            Ok((diffs, disc, size))
        })
        .collect();
    let mut mean_diffs = vec![vec![0.0; n_steps + 1]; n_iter];
    let mut mean_disc = vec![0.0; n_steps + 1];
    let mut mean_size = vec![0.0; n_steps + 1];
    let inv = 1.0 / mc_samples.max(1) as f64;
    for r in per_sample {
        let (d, disc, size) = r?;
        for (acc, v) in mean_diffs.iter_mut().zip(&d) {
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b * inv;
            }
        }
        for j in 0..=n_steps {
            mean_disc[j] += disc[j] * inv;
            mean_size[j] += size[j] * inv;
        }
    }
    let sup = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    Ok(PicardReport {
        differences: mean_diffs.iter().map(|d| sup(d)).collect(),
        final_discrepancy: sup(&mean_disc) / sup(&mean_size),
    })
}

const TRAJ_MAGIC: &[u8; 8] = b"PAMTRAJ1";

/// Binary snapshot stream, little-endian:
/// magic "PAMTRAJ1", L f64, K u64, dt f64, h f64, kappa f64, seed u64,
/// n_snapshots u64; then per snapshot the time (f64) and `K + 1` pairs
/// (re f64, im f64) for `k = 0..=K`.
pub fn write_trajectory<W: Write>(
    mut w: W,
    grid: &SpectralGrid,
    params: &ModelParams,
    seed: u64,
    snapshots: &[SolutionField],
) -> Result<()> {
    w.write_all(TRAJ_MAGIC)?;
    w.write_all(&grid.domain_length.to_le_bytes())?;
    w.write_all(&(grid.mode_cutoff as u64).to_le_bytes())?;
    w.write_all(&grid.dt.to_le_bytes())?;
    w.write_all(&params.h.value().to_le_bytes())?;
    w.write_all(&params.kappa.to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&(snapshots.len() as u64).to_le_bytes())?;
    for s in snapshots {
        w.write_all(&s.time.to_le_bytes())?;
        for c in &s.coeffs {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    fn small_params(u0: InitialCondition) -> ModelParams {
        ModelParams::new(h(0.35), 1.0, 0.05, u0).unwrap()
    }

    #[test]
    fn semigroup_identity_and_constant() {
        let grid = SpectralGrid::new(8.0, 16, 0.01).unwrap();
        let f = SolutionField::initial(&InitialCondition::bump(1.0, 0.5, 0.7), &grid);
        assert_eq!(heat_semigroup_apply(&f, 0.0, 1.0).unwrap().coeffs, f.coeffs);
        let c = SolutionField::initial(&InitialCondition::constant(2.0), &grid);
        assert_eq!(heat_semigroup_apply(&c, 3.0, 1.0).unwrap().coeffs, c.coeffs);
        assert!(heat_semigroup_apply(&c, -1.0, 1.0).is_err());
    }

    #[test]
    fn semigroup_single_mode_ratio() {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 9];
        coeffs[5] = Complex64::new(0.3, -0.2);
        let f = SolutionField::new(0.0, 4.0, coeffs);
        let g = heat_semigroup_apply(&f, 0.1, 2.0).unwrap();
        let xi = 2.0 * PI * 5.0 / 4.0;
        let ratio = g.coeff(5) / f.coeff(5);
        assert!((ratio.re - (-0.5 * 2.0 * 0.1 * xi * xi).exp()).abs() < 1e-16);
        assert!(ratio.im.abs() < 1e-16);
    }

    #[test]
    fn bump_coefficients_reproduce_profile() {
        let grid = SpectralGrid::new(20.0, 128, 0.01).unwrap();
        let u0 = InitialCondition::bump(1.5, 0.3, 0.8);
        let f = SolutionField::initial(&u0, &grid);
        for &x in &[-1.0, 0.0, 0.3, 2.0] {
            assert!((f.value_at(x) - u0.value(x).unwrap()).abs() < 1e-12);
        }
        let vals = f.real_values(&grid).unwrap();
        let xs = grid.collocation_points();
        for j in (0..xs.len()).step_by(37) {
            assert!((vals[j] - f.value_at(xs[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn v_norm_of_unit_bump() {
        // Fu = e^{-ξ²/2}; ∫ e^{-ξ²}(1+|ξ|^{0.4}) dξ = 3.0705091835530738 (mpmath)
        let grid = SpectralGrid::new(256.0, 2048, 0.01).unwrap();
        let u0 = InitialCondition::bump(1.0 / (2.0 * PI).sqrt(), 0.0, 1.0);
        let f = SolutionField::initial(&u0, &grid);
        let v = f.v_norm(h(0.3));
        assert!((v / 3.070_509_183_553_073_8 - 1.0).abs() < 2e-3, "{v}");
        assert!((f.scaled(3.0).v_norm(h(0.3)) - 9.0 * v).abs() < 1e-12 * v);
        let zero = SolutionField::new(0.0, 256.0, vec![Complex64::new(0.0, 0.0); 5]);
        assert_eq!(zero.v_norm(h(0.3)), 0.0);
    }

    #[test]
    fn zero_noise_step_is_heat_step() {
        let grid = SpectralGrid::new(8.0, 32, 0.01).unwrap();
        let params = small_params(InitialCondition::bump(1.0, 0.0, 0.5));
        for scheme in [TimeScheme::ExponentialEuler, TimeScheme::ExactVariance] {
            let s = SpectralSolver::new(&params, &grid, scheme);
            let f = SolutionField::initial(&params.u0, &grid);
            let g = s.step_mild(&f, &NoiseIncrement::zeros(32)).unwrap();
            let e = heat_semigroup_apply(&f, 0.01, 1.0).unwrap();
            for k in 0..=32 {
                assert!((g.coeff(k) - e.coeff(k)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn step_is_linear_in_field() {
        let grid = SpectralGrid::new(8.0, 32, 0.01).unwrap();
        let params = small_params(InitialCondition::bump(1.0, 0.0, 0.5));
        let s = SpectralSolver::new(&params, &grid, TimeScheme::ExponentialEuler);
        let dw = s.sampler.sample(&mut rng::stream(3, 0));
        let f = SolutionField::initial(&params.u0, &grid);
        let a = s.step_mild(&f, &dw).unwrap();
        let b = s.step_mild(&f.scaled(2.0), &dw).unwrap();
        for k in 0..=32 {
            assert_eq!(b.coeff(k), a.coeff(k) * 2.0);
        }
    }

    #[test]
    fn step_matches_direct_convolution() {
        // product of two truncated series, computed mode by mode
        let grid = SpectralGrid::new(6.0, 8, 0.01).unwrap();
        let params = small_params(InitialCondition::bump(1.0, 0.2, 0.6));
        let s = SpectralSolver::new(&params, &grid, TimeScheme::ExponentialEuler);
        let dw = s.sampler.sample(&mut rng::stream(4, 0));
        let f = SolutionField::initial(&params.u0, &grid);
        let g = s.step_mild(&f, &dw).unwrap();
        for k in 0..=8i64 {
            let mut conv = Complex64::new(0.0, 0.0);
            for j in -8i64..=8 {
                if (k - j).abs() <= 8 {
                    conv += f.coeff(j) * dw.coeff(k - j);
                }
            }
            let xi = grid.xi(k);
            let expect = (f.coeff(k) + conv) * (-0.5 * 0.01 * xi * xi).exp();
            assert!((g.coeff(k) - expect).norm() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let grid = SpectralGrid::new(8.0, 32, 0.01).unwrap();
        let params = small_params(InitialCondition::constant(1.0));
        let s = SpectralSolver::new(&params, &grid, TimeScheme::default());
        let f = SolutionField::initial(&params.u0, &grid);
        assert!(matches!(s.step_mild(&f, &NoiseIncrement::zeros(16)), Err(PamError::GridMismatch(_))));
    }

    #[test]
    fn noiseless_solve_is_heat_flow() {
        let grid = SpectralGrid::new(8.0, 32, 0.005).unwrap();
        let params = small_params(InitialCondition::bump(1.0, 0.0, 0.4));
        let s = SpectralSolver::with_coupling(&params, &grid, TimeScheme::default(), 0.0);
        let traj = s.solve(1, 0, 10, 5).unwrap();
        assert_eq!(traj.len(), 3);
        let last = traj.last().unwrap();
        let exact = s.heat_flow_field(0.05).unwrap();
        let vals = last.real_values(&grid).unwrap();
        let ev = exact.real_values(&grid).unwrap();
        let err = vals.iter().zip(&ev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "{err}");
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let grid = SpectralGrid::new(8.0, 16, 0.01).unwrap();
        let s = SpectralSolver::new(&small_params(InitialCondition::constant(1.0)), &grid, TimeScheme::default());
        assert!(s.solve(1, 0, 7, 1).is_err());
    }

    #[test]
    fn admissibility_flags() {
        let hh = h(0.35);
        let c = InitialCondition::constant(1.0);
        assert!(c.chaos_admissibility(hh).unwrap().finite);
        let b = InitialCondition::bump(1.0, 0.0, 1.0);
        let a = b.chaos_admissibility(hh).unwrap();
        assert!(a.finite && a.integral > 0.0);
        let p = InitialConditionSpec::PowerSpectrum {
            amplitude: 1.0,
            decay: 1.0,
        }
        .resolve()
        .unwrap();
        assert!(!p.chaos_admissibility(hh).unwrap().finite);
        assert!(p.picard_admissibility(hh).unwrap().finite);
    }

    #[test]
    fn catalog_initial_condition_resolves() {
        let u = InitialConditionSpec::Catalog {
            name: "unit_bump".into(),
        }
        .resolve()
        .unwrap();
        let peak = 1.0 / (2.0 * PI).sqrt();
        assert!((u.value(0.0).unwrap() - peak).abs() < 1e-15);
        assert!(InitialConditionSpec::Catalog { name: "nope".into() }.resolve().is_err());
    }
}
