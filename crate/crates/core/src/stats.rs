//! Small numerical helpers shared across modules.

use std::f64::consts::PI;

#[inline]
pub fn log_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = x - mean;
    -0.5 * ((2.0 * PI * variance).ln() + z * z / variance)
}

/// `ln sum exp(v)`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Bessel-corrected variance; 0 for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Median (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `P(X > k)` for `X ~ Binomial(n, p)`, summed term by term in log space.
pub fn binomial_survival(k: u64, n: u64, p: f64) -> f64 {
    if k >= n {
        return 0.0;
    }
    let ln_choose = |j: u64| ln_factorial(n) - ln_factorial(j) - ln_factorial(n - j);
    let terms: Vec<f64> = (k + 1..=n)
        .map(|j| ln_choose(j) + j as f64 * p.ln() + (n - j) as f64 * (1.0 - p).ln())
        .collect();
    log_sum_exp(&terms).exp()
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[-3.5]), -3.5);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn binomial_small_case() {
        // P(X > 1) for Bin(3, 1/2) = 4/8
        assert!((binomial_survival(1, 3, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(binomial_survival(3, 3, 0.5), 0.0);
    }
}
