//! Thin wrappers around Gamma-function evaluations plus a few elementary
//! kernels that need care near zero.

pub use statrs::function::gamma::{gamma, ln_gamma};

/// `(1 - e^{-z}) / z`, continuous at `z = 0`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        -(-z).exp_m1() / z
    }
}

/// `∫_0^1 s^k e^{-z s} ds` for `z ≥ 0`.
pub fn gamma_moment(k: u32, z: f64) -> f64 {
    if z < 0.5 {
        // alternating series in z
        let mut term = 1.0;
        let mut sum = 0.0;
        for j in 0..60u32 {
            let c = term / (k + j + 1) as f64;
            sum += c;
            term *= -z / (j + 1) as f64;
            if c.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return sum;
    }
    // upward recursion from k = 0: γ_k = (k γ_{k-1} - e^{-z}) / z
    let e = (-z).exp();
    let mut g = -(-z).exp_m1() / z;
    for j in 1..=k {
        g = (j as f64 * g - e) / z;
    }
    g
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Heat kernel of `(κ/2)Δ` on the line: Gaussian with variance `κ t`.
pub fn heat_kernel(t: f64, x: f64, kappa: f64) -> f64 {
    let v = kappa * t;
    (-x * x / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// `log Σ exp(v_i)` without overflow.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi1_matches_series_and_closed_form() {
        assert_eq!(phi1(0.0), 1.0);
        assert!((phi1(1e-9) - (1.0 - 0.5e-9)).abs() < 1e-16);
        assert!((phi1(2.0) - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_moment_branches_agree() {
        // both branches near the switch, checked against a fine midpoint rule
        for &k in &[0u32, 1, 3] {
            for &z in &[0.0, 0.3, 0.49, 0.51, 2.0, 30.0] {
                let n = 200_000;
                let h = 1.0 / n as f64;
                let brute: f64 = (0..n)
                    .map(|i| {
                        let s = (i as f64 + 0.5) * h;
                        s.powi(k as i32) * (-z * s).exp() * h
                    })
                    .sum();
                let g = gamma_moment(k, z);
                assert!((g - brute).abs() < 1e-9, "k={k} z={z}: {g} vs {brute}");
            }
        }
    }

    #[test]
    fn log_sum_exp_handles_large_values() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
