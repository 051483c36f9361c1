//! Adaptive Gauss–Kronrod (G10/K21) quadrature with global error control.
//!
//! The driver keeps every subinterval in a max-heap keyed by its error
//! estimate and bisects the worst one until the summed estimate drops below
//! `max(abs, rel * |I|)`. Running out of intervals is reported as an error
//! carrying the achieved estimate; nothing is silently truncated.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{PamError, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Requested accuracy and work limit.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance {
            abs,
            rel,
            max_intervals: 20_000,
        }
    }

    pub fn with_max_intervals(mut self, n: usize) -> Self {
        self.max_intervals = n;
        self
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(1e-12, 1e-10)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One 21-point Kronrod panel with the QUADPACK error heuristic.
fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = fc.abs() * WGK[10];
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let h = half.abs();
    let value = res_k * half;
    res_abs *= h;
    res_asc *= h;
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Segment {
        a,
        b,
        value,
        error: if err.is_finite() { err } else { f64::INFINITY },
    }
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult> {
    integrate_partitioned(f, &[a, b], tol)
}

/// Integrates `f` over `[breaks[0], breaks[last]]`, starting from the given
/// partition. Breakpoints are where the integrand is known to be rough or
/// where oscillation half-periods end.
pub fn integrate_partitioned<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<QuadResult> {
    assert!(breaks.len() >= 2, "need at least one interval");
    let mut heap = BinaryHeap::with_capacity(breaks.len() * 2);
    let mut total = 0.0;
    let mut err = 0.0;
    for w in breaks.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        let s = gk21(&f, w[0], w[1]);
        total += s.value;
        err += s.error;
        heap.push(s);
    }
    if heap.is_empty() {
        return Ok(QuadResult {
            value: 0.0,
            abs_error: 0.0,
            intervals: 0,
        });
    }
    loop {
        let target = tol.abs.max(tol.rel * total.abs());
        if err <= target {
            break;
        }
        if heap.len() >= tol.max_intervals {
            return Err(PamError::Quadrature {
                requested: target,
                achieved: err,
                value: total,
            });
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            // interval cannot be split further in double precision
            heap.push(Segment {
                error: 0.0,
                ..worst
            });
            err -= worst.error;
            continue;
        }
        let left = gk21(&f, worst.a, mid);
        let right = gk21(&f, mid, worst.b);
        total += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        if !err.is_finite() || !total.is_finite() {
            return Err(PamError::Quadrature {
                requested: target,
                achieved: err,
                value: total,
            });
        }
    }
    // re-sum to shed the drift of the running updates
    let (value, abs_error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Ok(QuadResult {
        value,
        abs_error,
        intervals: heap.len(),
    })
}

/// Integrates `f` over `[a, ∞)` through the map `x = a + s / (1 - s)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: Tolerance) -> Result<QuadResult> {
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let d = 1.0 - s;
        let x = a + s / d;
        let v = f(x) / (d * d);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate_partitioned(g, &[0.0, 0.5, 0.9, 0.99, 1.0], tol)
}

/// `∫_0^cutoff cos(ξ x) g(ξ) dξ`, pre-split at half-periods of the cosine so
/// the adaptive driver never has to discover the oscillation on its own.
pub fn cosine_transform<F: Fn(f64) -> f64>(
    g: F,
    x: f64,
    cutoff: f64,
    tol: Tolerance,
) -> Result<QuadResult> {
    let breaks = oscillation_breaks(x, cutoff);
    let ax = x.abs();
    integrate_partitioned(|xi| (xi * ax).cos() * g(xi), &breaks, tol)
}

/// `∫_0^cutoff sin(ξ x) g(ξ) dξ`.
pub fn sine_transform<F: Fn(f64) -> f64>(g: F, x: f64, cutoff: f64, tol: Tolerance) -> Result<QuadResult> {
    let breaks = oscillation_breaks(x, cutoff);
    integrate_partitioned(|xi| (xi * x).sin() * g(xi), &breaks, tol)
}

fn oscillation_breaks(x: f64, cutoff: f64) -> Vec<f64> {
    let ax = x.abs();
    // a handful of small panels near the origin, where ξ^β is not smooth
    let mut breaks = vec![0.0];
    let first = if ax > 0.0 {
        (std::f64::consts::PI / ax).min(cutoff)
    } else {
        cutoff
    };
    let mut edge = first * 1e-4;
    while edge < first {
        breaks.push(edge);
        edge *= 10.0;
    }
    breaks.push(first);
    if ax > 0.0 {
        let half_period = std::f64::consts::PI / ax;
        let pieces = (cutoff / half_period).ceil() as usize;
        for i in 2..pieces {
            breaks.push(i as f64 * half_period);
        }
    }
    if *breaks.last().unwrap() < cutoff {
        breaks.push(cutoff);
    }
    breaks
}
