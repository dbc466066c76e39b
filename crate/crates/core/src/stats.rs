//! Exact binomial probabilities in log space and interval estimates.

/// `ln C(n, k)`, summed term by term so it is exact for the small `n` used here.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (1..=k)
        .map(|i| ((n - k + i) as f64).ln() - (i as f64).ln())
        .sum()
}

/// `ln Pr[Bin(n, p) = j]`.
pub fn ln_binomial_pmf(n: u64, p: f64, j: u64) -> f64 {
    if j > n {
        return f64::NEG_INFINITY;
    }
    if p <= 0.0 {
        return if j == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p >= 1.0 {
        return if j == n { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_choose(n, j) + j as f64 * p.ln() + (n - j) as f64 * (-p).ln_1p()
}

pub fn binomial_pmf(n: u64, p: f64, j: u64) -> f64 {
    ln_binomial_pmf(n, p, j).exp()
}

/// `Pr[Bin(n, p) < 2]`.
pub fn binomial_below_two(n: u64, p: f64) -> f64 {
    match n {
        0 | 1 => 1.0,
        _ => binomial_pmf(n, p, 0) + binomial_pmf(n, p, 1),
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// z-value of a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_matches_direct_products() {
        // Bin(3, 0.5) = 1 with probability 3/8.
        assert!((binomial_pmf(3, 0.5, 1) - 0.375).abs() < 1e-15);
        assert!((binomial_pmf(10, 0.3, 4) - 210.0 * 0.3f64.powi(4) * 0.7f64.powi(6)).abs() < 1e-14);
        assert_eq!(binomial_pmf(6, 1.0, 6), 1.0);
        assert_eq!(binomial_pmf(6, 1.0, 5), 0.0);
        assert_eq!(binomial_pmf(6, 0.0, 0), 1.0);
    }

    #[test]
    fn pmf_sums_to_one() {
        let total: f64 = (0..=40).map(|j| binomial_pmf(40, 0.37, j)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn below_two() {
        let q = 0.2f64;
        assert!((binomial_below_two(5, q) - (0.8f64.powi(5) + 5.0 * 0.2 * 0.8f64.powi(4))).abs() < 1e-15);
        assert_eq!(binomial_below_two(1, 0.9), 1.0);
        assert_eq!(binomial_below_two(0, 0.9), 1.0);
    }

    #[test]
    fn wilson_brackets_estimate() {
        let (lo, hi) = wilson_interval(30, 30, Z95);
        assert!((lo - 30.0 / (30.0 + Z95 * Z95)).abs() < 1e-12);
        assert_eq!(hi, 1.0);
        let (lo, hi) = wilson_interval(0, 20, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi < 0.2);
        let (lo, hi) = wilson_interval(10, 20, Z95);
        assert!(lo < 0.5 && hi > 0.5);
    }
}
