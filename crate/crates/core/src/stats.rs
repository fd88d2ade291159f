//! Scalar distribution helpers.

use statrs::function::gamma::ln_gamma;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard error of a binomial proportion estimate.
pub fn binomial_std_error(rate: f64, trials: usize) -> f64 {
    if trials == 0 {
        return f64::NAN;
    }
    (rate * (1.0 - rate) / trials as f64).max(0.0).sqrt()
}

/// `E‖g‖` for `g ~ N(0, I_d)`.
pub fn expected_gaussian_norm(d: usize) -> f64 {
    let d = d as f64;
    std::f64::consts::SQRT_2 * (ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0)).exp()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        // Values from standard tables.
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((normal_cdf(-1.96) - 0.024_997_895_148_220_435).abs() < 1e-15);
        assert!((normal_cdf(-10.0) - 7.619_853_024_160_527e-24).abs() < 1e-36);
        assert_eq!(normal_cdf(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn gaussian_norm_moments() {
        assert!((expected_gaussian_norm(1) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((expected_gaussian_norm(2) - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-14);
        let d = 200;
        let e = expected_gaussian_norm(d);
        assert!(e < (d as f64).sqrt() && e > (d as f64 - 0.5).sqrt() - 1e-3);
    }

    #[test]
    fn std_error_edges() {
        assert_eq!(binomial_std_error(0.0, 10), 0.0);
        assert!((binomial_std_error(0.5, 100) - 0.05).abs() < 1e-15);
    }
}
