//! Small statistical helpers for the Monte Carlo experiments: Wilson score
//! intervals, a chi-square uniformity test, and a two-proportion z-test.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Wilson score interval for a binomial proportion.
///
/// Returns `(lower, upper)` at confidence `1 - alpha`. Handles the
/// boundary counts 0 and n without degenerating to a point.
pub fn wilson_interval(successes: u64, trials: u64, alpha: f64) -> (f64, f64) {
    assert!(trials > 0, "wilson_interval needs at least one trial");
    assert!(successes <= trials);
    assert!(alpha > 0.0 && alpha < 1.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Chi-square goodness-of-fit p-value against the uniform distribution
/// over the given bins.
pub fn chi_square_uniform_pvalue(counts: &[usize]) -> f64 {
    assert!(counts.len() >= 2, "need at least two bins");
    let total: usize = counts.iter().sum();
    assert!(total > 0, "empty sample");
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

/// Two-sided two-proportion z-test p-value with a pooled variance
/// estimate. Returns 1.0 when the pooled proportion is degenerate.
pub fn two_proportion_pvalue(s1: u64, n1: u64, s2: u64, n2: u64) -> f64 {
    assert!(n1 > 0 && n2 > 0);
    let (p1, p2) = (s1 as f64 / n1 as f64, s2 as f64 / n2 as f64);
    let pooled = (s1 + s2) as f64 / (n1 + n2) as f64;
    let var = pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64);
    if var == 0.0 {
        return 1.0;
    }
    let z = (p1 - p2) / var.sqrt();
    2.0 * (1.0 - normal_cdf(z.abs()))
}
