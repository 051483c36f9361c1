//! Streaming moments and small regression helpers.

use serde::{Deserialize, Serialize};

use crate::error::{PamError, Result};

/// Welford accumulator with Chan's pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// Result of a straight-line fit `y ≈ intercept + slope · x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

/// Weighted least squares. `slope_stderr` uses the weights as inverse
/// variances, so it is only meaningful when they are.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(PamError::InsufficientData("length mismatch in fit".into()));
    }
    if x.len() < 2 {
        return Err(PamError::InsufficientData(format!("{} points, need 2", x.len())));
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(PamError::InsufficientData("weights must be finite and positive".into()));
    }
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - xm;
        let dy = y[i] - ym;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    if sxx == 0.0 {
        return Err(PamError::InsufficientData("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res = (syy - slope * sxy).max(0.0);
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr: (1.0 / sxx).sqrt(),
        r_squared,
    })
}

/// Unweighted least squares.
pub fn line_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let w = vec![1.0; x.len()];
    let mut fit = weighted_line_fit(x, y, &w)?;
    // residual-based slope error for the unweighted case
    let n = x.len();
    if n > 2 {
        let xm = x.iter().sum::<f64>() / n as f64;
        let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - fit.intercept - fit.slope * a).powi(2))
            .sum();
        fit.slope_stderr = (ss_res / (n - 2) as f64 / sxx).sqrt();
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = line_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_short_input() {
        assert!(line_fit(&[1.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn merge_matches_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let whole: RunningStats = xs.iter().cloned().collect();
            let mut left: RunningStats = xs[..split].iter().cloned().collect();
            let right: RunningStats = xs[split..].iter().cloned().collect();
            left.merge(&right);
            prop_assert_eq!(left.count(), whole.count());
            prop_assert!((left.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
            prop_assert!((left.variance() - whole.variance()).abs() <= 1e-8 * (1.0 + whole.variance()));
        }
    }
}
