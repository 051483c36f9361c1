//! Rough spatial noise in Fourier form.
//!
//! The noise is white in time with spatial spectral measure
//! `c1h · |ξ|^{1-2h} dξ`. On the torus of length `L` the mode `k` sits at
//! `ξ_k = 2πk/L` and carries a centered complex Gaussian amplitude of variance
//! `c1h · |ξ_k|^{1-2h} · dt · 2π/L`. Only `k ≥ 0` is stored; negative modes are
//! the complex conjugates.
//!
//! Binary noise stream layout (all little-endian):
//!
//! ```text
//! magic    [u8; 8]  = "PAMNOISE"
//! version  u32      = 1
//! L        f64
//! K        u64
//! dt       f64
//! h        f64
//! seed     u64
//! n_steps  u64
//! then n_steps blocks of (K + 1) pairs (re f64, im f64) for k = 0..=K
//! ```

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PamError, Result};
use crate::quadrature::{cosine_transform, Tolerance};
use crate::rng;
use crate::special::gamma;
use crate::stats::RunningStats;

/// Hurst index restricted to the open interval `(1/4, 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.25 && h < 0.5 {
            Ok(HurstParam(h))
        } else {
            Err(PamError::param("h", format!("{h} is outside the open interval (1/4, 1/2)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Spectral exponent `1 - 2h`.
    pub fn beta(self) -> f64 {
        1.0 - 2.0 * self.0
    }
}

impl TryFrom<f64> for HurstParam {
    type Error = PamError;
    fn try_from(h: f64) -> Result<Self> {
        HurstParam::new(h)
    }
}

impl From<HurstParam> for f64 {
    fn from(h: HurstParam) -> f64 {
        h.0
    }
}

/// `Γ(2h+1) sin(πh) / (2π)` for any real `h`; used for boundary checks.
pub fn c1h_unchecked(h: f64) -> f64 {
    gamma(2.0 * h + 1.0) * (PI * h).sin() / (2.0 * PI)
}

pub fn c1h(h: HurstParam) -> f64 {
    c1h_unchecked(h.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensityWeight {
    pub exponent: f64,
    pub c1h: f64,
}

impl SpectralDensityWeight {
    pub fn new(h: HurstParam) -> Self {
        SpectralDensityWeight {
            exponent: h.beta(),
            c1h: c1h(h),
        }
    }

    /// `c1h · |ξ|^{1-2h}`, zero at the origin.
    pub fn density(&self, xi: f64) -> f64 {
        if xi == 0.0 {
            0.0
        } else {
            self.c1h * xi.abs().powf(self.exponent)
        }
    }
}

/// Periodized spatial domain, mode cutoff and time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    pub domain_length: f64,
    pub mode_cutoff: usize,
    pub dt: f64,
}

impl SpectralGrid {
    pub fn new(domain_length: f64, mode_cutoff: usize, dt: f64) -> Result<Self> {
        if !(domain_length > 0.0 && domain_length.is_finite()) {
            return Err(PamError::param("domain_length", format!("{domain_length} must be positive")));
        }
        if mode_cutoff < 2 {
            return Err(PamError::param("mode_cutoff", format!("{mode_cutoff} must be at least 2")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PamError::param("dt", format!("{dt} must be positive")));
        }
        Ok(SpectralGrid {
            domain_length,
            mode_cutoff,
            dt,
        })
    }

    pub fn xi(&self, k: i64) -> f64 {
        2.0 * PI * k as f64 / self.domain_length
    }

    pub fn dxi(&self) -> f64 {
        2.0 * PI / self.domain_length
    }

    /// Collocation size for products: a power of two above `3K`, which
    /// removes aliasing from the quadratic term.
    pub fn fft_len(&self) -> usize {
        (3 * self.mode_cutoff + 1).next_power_of_two()
    }

    pub fn collocation_points(&self) -> Vec<f64> {
        let m = self.fft_len();
        (0..m).map(|j| j as f64 * self.domain_length / m as f64).collect()
    }

    pub fn same_discretization(&self, other: &SpectralGrid) -> bool {
        self.domain_length == other.domain_length && self.mode_cutoff == other.mode_cutoff
    }
}

/// One time step of noise, modes `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    coeffs: Vec<Complex64>,
}

impl NoiseIncrement {
    pub fn zeros(mode_cutoff: usize) -> Self {
        NoiseIncrement {
            coeffs: vec![Complex64::new(0.0, 0.0); mode_cutoff + 1],
        }
    }

    pub fn from_nonnegative_modes(mut coeffs: Vec<Complex64>) -> Self {
        coeffs[0].im = 0.0;
        NoiseIncrement { coeffs }
    }

    pub fn mode_cutoff(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficient of mode `k`, `|k| ≤ K`.
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

    pub fn scaled(&self, a: f64) -> Self {
        NoiseIncrement {
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    /// `dW(x_j) = Σ_{|k|≤K} a_k e^{iξ_k x_j}` on the collocation grid.
    pub fn real_space(&self, grid: &SpectralGrid) -> Result<Vec<f64>> {
        if self.mode_cutoff() != grid.mode_cutoff {
            return Err(PamError::GridMismatch(format!(
                "noise has K = {}, grid has K = {}",
                self.mode_cutoff(),
                grid.mode_cutoff
            )));
        }
        let m = grid.fft_len();
        let mut planner = realfft::RealFftPlanner::<f64>::new();
        let inv = planner.plan_fft_inverse(m);
        let mut spec = inv.make_input_vec();
        spec[..self.coeffs.len()].copy_from_slice(&self.coeffs);
        let mut out = inv.make_output_vec();
        inv.process(&mut spec, &mut out)
            .map_err(|e| PamError::GridMismatch(e.to_string()))?;
        Ok(out)
    }
}

/// Precomputed per-mode standard deviations for repeated sampling.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    grid: SpectralGrid,
    // standard deviation of the real and of the imaginary part, per mode
    component_sd: Vec<f64>,
}

impl NoiseSampler {
    pub fn new(grid: &SpectralGrid, h: HurstParam) -> Self {
        Self::with_coupling(grid, h, 1.0)
    }

    /// Multiplies every variance by `scale`; `scale = 0` gives the noiseless
    /// test configuration.
    pub fn with_coupling(grid: &SpectralGrid, h: HurstParam, scale: f64) -> Self {
        let w = SpectralDensityWeight::new(h);
        let component_sd = (0..=grid.mode_cutoff)
            .map(|k| {
                let var = scale * w.density(grid.xi(k as i64)) * grid.dt * grid.dxi();
                (0.5 * var).sqrt()
            })
            .collect();
        NoiseSampler {
            grid: *grid,
            component_sd,
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    /// `E|a_k|²` for `k ≥ 0`.
    pub fn variance(&self, k: usize) -> f64 {
        2.0 * self.component_sd[k] * self.component_sd[k]
    }

    /// Fills `out[0..=K]`; `out[0]` is always zero.
    pub fn sample_into<R: Rng + ?Sized>(&self, out: &mut [Complex64], rng: &mut R) {
        out[0] = Complex64::new(0.0, 0.0);
        for (c, &sd) in out[1..].iter_mut().zip(&self.component_sd[1..]) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *c = Complex64::new(sd * re, sd * im);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseIncrement {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); self.grid.mode_cutoff + 1];
        self.sample_into(&mut coeffs, rng);
        NoiseIncrement { coeffs }
    }
}

pub fn sample_noise_increment<R: Rng + ?Sized>(grid: &SpectralGrid, h: HurstParam, rng: &mut R) -> NoiseIncrement {
    NoiseSampler::new(grid, h).sample(rng)
}

/// Truncation point of `∫ e^{-λ²} λ^β dλ` where the integrand drops below 1e-16.
fn scaled_cutoff(beta: f64) -> f64 {
    let target = 16.0 * 10f64.ln();
    let mut lam: f64 = 6.0;
    for _ in 0..20 {
        lam = (target + beta * lam.ln()).sqrt();
    }
    lam
}

/// `F(y) = (1/π) ∫_0^∞ cos(λy) e^{-λ²} λ^{1-2h} dλ`, the mollified covariance
/// at `ε = 1`; every other `ε` follows from `f_ε(x) = ε^{h-1} F(x/√ε)`.
pub fn scaled_kernel(y: f64, h: HurstParam, abs_tol: f64) -> Result<f64> {
    let beta = h.beta();
    let cutoff = scaled_cutoff(beta);
    let tol = Tolerance::new(abs_tol * PI, 1e-13).with_max_intervals(200_000);
    let r = cosine_transform(|l| (-l * l).exp() * l.powf(beta), y, cutoff, tol)?;
    Ok(r.value / PI)
}

/// `F'(y) = -(1/π) ∫_0^∞ λ sin(λy) e^{-λ²} λ^{1-2h} dλ`.
pub fn scaled_kernel_derivative(y: f64, h: HurstParam, abs_tol: f64) -> Result<f64> {
    let beta = h.beta();
    let cutoff = scaled_cutoff(beta + 1.0);
    let tol = Tolerance::new(abs_tol * PI, 1e-13).with_max_intervals(200_000);
    let r = crate::quadrature::sine_transform(|l| (-l * l).exp() * l.powf(beta + 1.0), y, cutoff, tol)?;
    Ok(-r.value / PI)
}

/// Mollified covariance `f_ε(x) = (2π)^{-1} ∫ e^{iξx} e^{-εξ²} |ξ|^{1-2h} dξ`,
/// evaluated as a cosine transform to absolute accuracy 1e-10.
pub fn mollified_cov(x: f64, eps: f64, h: HurstParam) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(PamError::param("eps", format!("{eps} must be positive")));
    }
    let scale = eps.powf(h.value() - 1.0);
    Ok(scale * scaled_kernel(x / eps.sqrt(), h, 1e-10 / scale)?)
}

/// Closed form of `f_ε(0)`.
pub fn mollified_cov_at_origin(eps: f64, h: HurstParam) -> f64 {
    gamma(1.0 - h.value()) * eps.powf(h.value() - 1.0) / (2.0 * PI)
}

/// One separable piece `1_[t_start,t_end](s) · g(x)` with `g` a Gaussian
/// bump of total mass `amplitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparableBump {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl SeparableBump {
    pub fn value(&self, s: f64, x: f64) -> f64 {
        if s < self.t_start || s > self.t_end {
            return 0.0;
        }
        let z = (x - self.center) / self.width;
        self.amplitude * (-0.5 * z * z).exp() / (self.width * (2.0 * PI).sqrt())
    }

    pub fn fourier(&self, xi: f64) -> Complex64 {
        let mag = self.amplitude * (-0.5 * self.width * self.width * xi * xi).exp();
        Complex64::from_polar(mag, -xi * self.center)
    }

    fn time_overlap(&self, a: f64, b: f64) -> f64 {
        (self.t_end.min(b) - self.t_start.max(a)).max(0.0)
    }
}

/// Finite sum of separable Gaussian bumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub name: String,
    pub terms: Vec<SeparableBump>,
}

impl TestFunction {
    pub fn zero(name: &str) -> Self {
        TestFunction {
            name: name.into(),
            terms: Vec::new(),
        }
    }

    pub fn single(name: &str, bump: SeparableBump) -> Self {
        TestFunction {
            name: name.into(),
            terms: vec![bump],
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        TestFunction {
            name: self.name.clone(),
            terms: self
                .terms
                .iter()
                .map(|t| SeparableBump {
                    amplitude: a * t.amplitude,
                    ..*t
                })
                .collect(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.terms.iter().map(|t| t.t_end).fold(0.0, f64::max)
    }

    /// Space-Fourier transform at time `s`.
    pub fn fourier(&self, s: f64, xi: f64) -> Complex64 {
        self.terms
            .iter()
            .filter(|t| s >= t.t_start && s <= t.t_end)
            .map(|t| t.fourier(xi))
            .sum()
    }

    /// Time-average of the space-Fourier transform over `[a, b]`.
    pub fn fourier_window_mean(&self, a: f64, b: f64, xi: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.fourier(xi) * (t.time_overlap(a, b) / (b - a)))
            .sum()
    }

    /// Mode cutoff on a torus of length `l` beyond which every term's
    /// transform is below `e^{-40}`.
    pub fn suggested_cutoff(&self, l: f64) -> usize {
        let wmin = self.terms.iter().map(|t| t.width).fold(f64::INFINITY, f64::min);
        if !wmin.is_finite() {
            return 2;
        }
        let xi_max = (80.0f64).sqrt() / wmin;
        ((xi_max * l / (2.0 * PI)).ceil() as usize).max(2)
    }
}

/// Default catalog shipped with the crate.
pub const DEFAULT_CATALOG: &str = include_str!("../data/test_functions.csv");

#[derive(Debug, Deserialize)]
struct CatalogRow {
    name: String,
    amplitude: f64,
    center: f64,
    width: f64,
    t_start: f64,
    t_end: f64,
}

/// Parses a catalog; rows sharing a name are merged in order of appearance.
pub fn parse_catalog<R: Read>(reader: R) -> Result<Vec<TestFunction>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out: Vec<TestFunction> = Vec::new();
    for row in rdr.deserialize() {
        let row: CatalogRow = row?;
        if !(row.width > 0.0) {
            return Err(PamError::param("width", format!("{} in catalog entry {}", row.width, row.name)));
        }
        if !(row.t_end >= row.t_start && row.t_start >= 0.0) {
            return Err(PamError::param(
                "t_start",
                format!("bad time window [{}, {}] in catalog entry {}", row.t_start, row.t_end, row.name),
            ));
        }
        let bump = SeparableBump {
            amplitude: row.amplitude,
            center: row.center,
            width: row.width,
            t_start: row.t_start,
            t_end: row.t_end,
        };
        match out.iter_mut().find(|f| f.name == row.name) {
            Some(f) => f.terms.push(bump),
            None => out.push(TestFunction::single(&row.name, bump)),
        }
    }
    Ok(out)
}

pub fn load_catalog(path: &Path) -> Result<Vec<TestFunction>> {
    parse_catalog(std::fs::File::open(path)?)
}

pub fn default_catalog() -> Vec<TestFunction> {
    parse_catalog(DEFAULT_CATALOG.as_bytes()).expect("bundled catalog parses")
}

/// `⟨φ, ψ⟩_H = c1h ∫∫ Fφ(s,ξ) conj(Fψ(s,ξ)) |ξ|^{1-2h} dξ ds`.
///
/// For a pair of bumps the ξ-integral reduces to one scaled cosine
/// transform, evaluated adaptively.
pub fn inner_product_h(phi: &TestFunction, psi: &TestFunction, h: HurstParam) -> Result<f64> {
    let beta = h.beta();
    let mut total = 0.0;
    for a in &phi.terms {
        for b in &psi.terms {
            let overlap = a.time_overlap(b.t_start, b.t_end);
            if overlap == 0.0 || a.amplitude == 0.0 || b.amplitude == 0.0 {
                continue;
            }
            let sigma = (0.5 * (a.width * a.width + b.width * b.width)).sqrt();
            let y = (a.center - b.center) / sigma;
            let f = scaled_kernel(y, h, 1e-14)?;
            // ∫_R cos(ξΔ) e^{-σ²ξ²} |ξ|^β dξ = 2π σ^{-(1+β)} F(Δ/σ)
            let spatial = 2.0 * PI * sigma.powf(-(1.0 + beta)) * f;
            total += a.amplitude * b.amplitude * overlap * spatial;
        }
    }
    Ok(c1h(h) * total)
}

/// Outcome of a discrete isometry check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    pub samples: usize,
    pub empirical_second_moment: f64,
    pub stderr: f64,
    /// `E X²` of the discrete integral, summed exactly over grid modes.
    pub grid_norm_sq: f64,
    /// `‖g‖²_H` from [`inner_product_h`].
    pub continuum_norm_sq: f64,
    pub z_score: f64,
}

/// Monte Carlo check of `E[(∫∫ g dW)²] = ‖g‖²_H` on the discrete noise.
///
/// Each sample draws every grid mode of every time step and forms
/// `X = Σ_j Σ_{|k|≤K} a_{jk} conj(G_{jk})`, where `G_{jk}` is the time-averaged
/// transform of `g` over step `j`.
pub fn ito_integral_variance_check(
    g: &TestFunction,
    grid: &SpectralGrid,
    h: HurstParam,
    samples: usize,
    seed: u64,
) -> Result<IsometryReport> {
    let continuum = inner_product_h(g, g, h)?;
    let n_steps = (g.horizon() / grid.dt).ceil() as usize;
    let kmax = grid.mode_cutoff;
    let sampler = NoiseSampler::new(grid, h);
    // weights G_{jk}, k ≥ 1 (the k = 0 variance is zero)
    let mut weights: Vec<Vec<Complex64>> = Vec::with_capacity(n_steps);
    let mut active_steps = Vec::new();
    let mut grid_norm = 0.0;
    for j in 0..n_steps {
        let a = j as f64 * grid.dt;
        let b = a + grid.dt;
        let w: Vec<Complex64> = (0..=kmax).map(|k| g.fourier_window_mean(a, b, grid.xi(k as i64))).collect();
        if w.iter().all(|c| c.norm_sqr() == 0.0) {
            continue;
        }
        grid_norm += (1..=kmax).map(|k| 2.0 * sampler.variance(k) * w[k].norm_sqr()).sum::<f64>();
        active_steps.push(j);
        weights.push(w);
    }
    if samples < 2 {
        return Err(PamError::InsufficientData("isometry check needs at least 2 samples".into()));
    }
    const BATCH: usize = 256;
    let n_batches = samples.div_ceil(BATCH);
    let partial: Vec<RunningStats> = (0..n_batches)
        .into_par_iter()
        .map(|bi| {
            let mut stats = RunningStats::new();
            let mut buf = vec![Complex64::new(0.0, 0.0); kmax + 1];
            let lo = bi * BATCH;
            let hi = (lo + BATCH).min(samples);
            for s in lo..hi {
                let mut r = rng::stream(seed, s as u64);
                let mut x = 0.0;
                // all steps are drawn, including inactive ones, so the
                // stream layout matches a full noise realization
                let mut wi = 0;
                for j in 0..n_steps {
                    sampler.sample_into(&mut buf, &mut r);
                    if wi < active_steps.len() && active_steps[wi] == j {
                        let w = &weights[wi];
                        for k in 1..=kmax {
                            // a_k conj(G_k) + conj(a_k) G_k
                            x += 2.0 * (buf[k] * w[k].conj()).re;
                        }
                        wi += 1;
                    }
                }
                stats.push(x * x);
            }
            stats
        })
        .collect();
    let mut stats = RunningStats::new();
    for p in &partial {
        stats.merge(p);
    }
    let m2 = stats.mean();
    let se = stats.stderr();
    let z = if se > 0.0 {
        (m2 - continuum) / se
    } else if m2 == continuum {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(IsometryReport {
        samples,
        empirical_second_moment: m2,
        stderr: se,
        grid_norm_sq: grid_norm,
        continuum_norm_sq: continuum,
        z_score: z,
    })
}

/// Header of a binary noise stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseStreamHeader {
    pub grid: SpectralGrid,
    pub h: f64,
    pub seed: u64,
    pub n_steps: u64,
}

const NOISE_MAGIC: &[u8; 8] = b"PAMNOISE";

pub fn write_noise_stream<W: Write>(
    mut w: W,
    grid: &SpectralGrid,
    h: HurstParam,
    seed: u64,
    steps: &[NoiseIncrement],
) -> Result<()> {
    w.write_all(NOISE_MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&grid.domain_length.to_le_bytes())?;
    w.write_all(&(grid.mode_cutoff as u64).to_le_bytes())?;
    w.write_all(&grid.dt.to_le_bytes())?;
    w.write_all(&h.value().to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&(steps.len() as u64).to_le_bytes())?;
    for s in steps {
        if s.mode_cutoff() != grid.mode_cutoff {
            return Err(PamError::GridMismatch("noise step does not match grid".into()));
        }
        for c in s.nonnegative_modes() {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_noise_stream<R: Read>(mut r: R) -> Result<(NoiseStreamHeader, Vec<NoiseIncrement>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != NOISE_MAGIC {
        return Err(PamError::Io("not a noise stream".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    if u32::from_le_bytes(v) != 1 {
        return Err(PamError::Io("unsupported noise stream version".into()));
    }
    let l = read_f64(&mut r)?;
    let k = read_u64(&mut r)? as usize;
    let dt = read_f64(&mut r)?;
    let h = read_f64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let n = read_u64(&mut r)?;
    let grid = SpectralGrid::new(l, k, dt)?;
    let mut steps = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let mut coeffs = Vec::with_capacity(k + 1);
        for _ in 0..=k {
            let re = read_f64(&mut r)?;
            let im = read_f64(&mut r)?;
            coeffs.push(Complex64::new(re, im));
        }
        steps.push(NoiseIncrement { coeffs });
    }
    Ok((
        NoiseStreamHeader {
            grid,
            h,
            seed,
            n_steps: n,
        },
        steps,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    #[test]
    fn hurst_range_is_open() {
        assert!(HurstParam::new(0.25).is_err());
        assert!(HurstParam::new(0.5).is_err());
        assert!(HurstParam::new(0.2).is_err());
        assert!(HurstParam::new(f64::NAN).is_err());
        assert!(HurstParam::new(0.3).is_ok());
    }

    #[test]
    fn c1h_reference_values() {
        // mpmath, 30 digits
        assert!((c1h_unchecked(0.5) - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((c1h(h(0.3)) - 0.115_048_190_840_816_05).abs() < 1e-13);
        assert!((c1h_unchecked(0.25) - 0.099_735_570_100_358_17).abs() < 1e-13);
        assert!((c1h(h(0.35)) - 0.128_852_325_615_389_19).abs() < 1e-13);
    }

    #[test]
    fn grid_validation() {
        assert!(SpectralGrid::new(0.0, 8, 0.1).is_err());
        assert!(SpectralGrid::new(1.0, 1, 0.1).is_err());
        assert!(SpectralGrid::new(1.0, 8, -0.1).is_err());
        let g = SpectralGrid::new(32.0, 1024, 2.5e-4).unwrap();
        assert_eq!(g.fft_len(), 4096);
    }

    #[test]
    fn zero_mode_is_real_and_silent() {
        let grid = SpectralGrid::new(8.0, 16, 0.01).unwrap();
        let mut r = rng::stream(1, 0);
        for _ in 0..10 {
            let n = sample_noise_increment(&grid, h(0.35), &mut r);
            assert_eq!(n.coeff(0), Complex64::new(0.0, 0.0));
            assert_eq!(n.coeff(-3), n.coeff(3).conj());
        }
    }

    #[test]
    fn real_space_transform_matches_direct_sum() {
        let grid = SpectralGrid::new(8.0, 6, 0.01).unwrap();
        let n = sample_noise_increment(&grid, h(0.3), &mut rng::stream(5, 0));
        let values = n.real_space(&grid).unwrap();
        for (j, x) in grid.collocation_points().iter().enumerate() {
            let direct: Complex64 = (-6i64..=6)
                .map(|k| n.coeff(k) * Complex64::from_polar(1.0, grid.xi(k) * x))
                .sum();
            assert!(direct.im.abs() < 1e-14);
            assert!((direct.re - values[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn mollified_cov_at_origin_matches_closed_form() {
        for &hv in &[0.3, 0.35, 0.45] {
            for &eps in &[1e-1, 1e-2, 1e-3] {
                let q = mollified_cov(0.0, eps, h(hv)).unwrap();
                let exact = mollified_cov_at_origin(eps, h(hv));
                assert!((q / exact - 1.0).abs() < 1e-9, "h={hv} eps={eps}");
            }
        }
    }

    #[test]
    fn scaled_kernel_matches_kummer_values() {
        // Γ(1-h)/(2π) · M(1-h, 1/2, -y²/4) at h = 0.35, from mpmath
        let table = [
            (0.0, 0.220_396_985_656_964_59),
            (0.5, 0.203_091_917_480_445_70),
            (1.0, 0.157_800_857_652_948_82),
            (2.0, 0.047_748_693_171_673_585),
            (3.5, -0.020_938_706_671_616_898),
            (5.0, -0.018_332_127_525_230_923),
            (8.0, -0.009_149_059_452_463_588),
            (12.0, -0.005_240_583_019_136_360),
        ];
        for (y, v) in table {
            let f = scaled_kernel(y, h(0.35), 1e-13).unwrap();
            assert!((f - v).abs() < 1e-11, "y={y}: {f} vs {v}");
        }
    }

    #[test]
    fn kernel_derivative_matches_finite_difference() {
        for &y in &[0.3, 1.7, 6.0] {
            let d = scaled_kernel_derivative(y, h(0.35), 1e-13).unwrap();
            let e = 1e-4;
            let fd = (scaled_kernel(y + e, h(0.35), 1e-14).unwrap() - scaled_kernel(y - e, h(0.35), 1e-14).unwrap())
                / (2.0 * e);
            assert!((d - fd).abs() < 1e-7, "y={y}: {d} vs {fd}");
        }
    }

    #[test]
    fn mollified_cov_rejects_bad_eps() {
        assert!(mollified_cov(0.0, 0.0, h(0.35)).is_err());
        assert!(mollified_cov(0.0, -1.0, h(0.35)).is_err());
    }

    #[test]
    fn unit_bump_norm_is_c1h_gamma() {
        let g = TestFunction::single(
            "g",
            SeparableBump {
                amplitude: 1.0,
                center: 0.0,
                width: 1.0,
                t_start: 0.0,
                t_end: 1.0,
            },
        );
        for &hv in &[0.3, 0.35, 0.45] {
            let v = inner_product_h(&g, &g, h(hv)).unwrap();
            let exact = c1h(h(hv)) * gamma(1.0 - hv);
            assert!((v / exact - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn disjoint_time_supports_are_orthogonal() {
        let b = SeparableBump {
            amplitude: 1.0,
            center: 0.0,
            width: 1.0,
            t_start: 0.0,
            t_end: 1.0,
        };
        let phi = TestFunction::single("phi", b);
        let psi = TestFunction::single(
            "psi",
            SeparableBump {
                t_start: 2.0,
                t_end: 3.0,
                ..b
            },
        );
        assert_eq!(inner_product_h(&phi, &psi, h(0.35)).unwrap(), 0.0);
        let zero = TestFunction::zero("0");
        assert_eq!(inner_product_h(&zero, &zero, h(0.35)).unwrap(), 0.0);
    }

    #[test]
    fn catalog_has_ten_functions() {
        let c = default_catalog();
        assert_eq!(c.len(), 10);
        assert!(c.iter().any(|f| f.terms.len() == 2));
    }

    #[test]
    fn catalog_rejects_bad_rows() {
        let bad = "name,amplitude,center,width,t_start,t_end\nx,1,0,-1,0,1\n";
        assert!(parse_catalog(bad.as_bytes()).is_err());
        let bad = "name,amplitude,center,width,t_start,t_end\nx,1,0,1,2,1\n";
        assert!(parse_catalog(bad.as_bytes()).is_err());
    }

    #[test]
    fn noise_stream_roundtrip() {
        let grid = SpectralGrid::new(4.0, 5, 0.1).unwrap();
        let mut r = rng::stream(9, 0);
        let steps: Vec<_> = (0..3).map(|_| sample_noise_increment(&grid, h(0.3), &mut r)).collect();
        let mut buf = Vec::new();
        write_noise_stream(&mut buf, &grid, h(0.3), 9, &steps).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 6 * 8 + 3 * 6 * 16);
        let (hdr, back) = read_noise_stream(buf.as_slice()).unwrap();
        assert_eq!(hdr.grid, grid);
        assert_eq!(hdr.seed, 9);
        assert_eq!(back, steps);
    }

    #[test]
    fn zero_function_isometry_is_trivial() {
        let grid = SpectralGrid::new(16.0, 8, 0.5).unwrap();
        let zero = TestFunction::single(
            "z",
            SeparableBump {
                amplitude: 0.0,
                center: 0.0,
                width: 1.0,
                t_start: 0.0,
                t_end: 1.0,
            },
        );
        let rep = ito_integral_variance_check(&zero, &grid, h(0.35), 10, 1).unwrap();
        assert_eq!(rep.empirical_second_moment, 0.0);
        assert_eq!(rep.continuum_norm_sq, 0.0);
        assert_eq!(rep.z_score, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn mollified_cov_is_even(x in 0.0f64..3.0, eps in 0.01f64..1.0) {
            let a = mollified_cov(x, eps, h(0.35)).unwrap();
            let b = mollified_cov(-x, eps, h(0.35)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn inner_product_is_symmetric(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, w1 in 0.5f64..2.0, w2 in 0.5f64..2.0) {
            let a = TestFunction::single("a", SeparableBump { amplitude: 1.0, center: c1, width: w1, t_start: 0.0, t_end: 1.0 });
            let b = TestFunction::single("b", SeparableBump { amplitude: 0.7, center: c2, width: w2, t_start: 0.5, t_end: 2.0 });
            let ab = inner_product_h(&a, &b, h(0.3)).unwrap();
            let ba = inner_product_h(&b, &a, h(0.3)).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab.abs()));
        }
    }
}
