//! Expected improvement acquisition, generic over the scalar type.

use num_traits::Float;

/// Φ(z) via a rational erfc approximation (Numerical Recipes erfcc),
/// accurate to ~1.2e-7 everywhere and exact at z = 0.
pub fn standard_normal_cdf<F: Float>(z: F) -> F {
    if z == F::zero() {
        return F::from(0.5).unwrap();
    }
    let f = |x: f64| F::from(x).unwrap();
    let x = z / f(std::f64::consts::SQRT_2);
    let t = F::one() / (F::one() + f(0.5) * x.abs());
    let poly = f(-1.26551223)
        + t * (f(1.00002368)
            + t * (f(0.37409196)
                + t * (f(0.09678418)
                    + t * (f(-0.18628806)
                        + t * (f(0.27886807)
                            + t * (f(-1.13520398)
                                + t * (f(1.48851587)
                                    + t * (f(-0.82215223) + t * f(0.17087277)))))))));
    let erfc_abs = t * (-x * x + poly).exp();
    let erfc = if x >= F::zero() {
        erfc_abs
    } else {
        f(2.0) - erfc_abs
    };
    F::one() - erfc / f(2.0)
}

pub fn standard_normal_pdf<F: Float>(z: F) -> F {
    let two_pi = F::from(std::f64::consts::TAU).unwrap();
    (-z * z / (F::one() + F::one())).exp() / two_pi.sqrt()
}

/// Closed-form expected improvement of a Gaussian posterior over the
/// incumbent. With improvement d = mean − incumbent (maximize) or
/// incumbent − mean (minimize) and z = d/sd:
/// EI = sd·(z·Φ(z) + φ(z)); degenerates to max(d, 0) when sd = 0.
pub fn expected_improvement<F: Float>(mean: F, variance: F, incumbent_best: F, maximize: bool) -> F {
    debug_assert!(variance >= F::zero());
    let d = if maximize {
        mean - incumbent_best
    } else {
        incumbent_best - mean
    };
    if variance <= F::zero() {
        return d.max(F::zero());
    }
    let sd = variance.sqrt();
    let z = d / sd;
    (sd * (z * standard_normal_cdf(z) + standard_normal_pdf(z))).max(F::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_at_incumbent_gives_zero() {
        assert_eq!(expected_improvement(5.0, 0.0, 5.0, true), 0.0);
        assert_eq!(expected_improvement(4.0, 0.0, 5.0, true), 0.0);
        assert_eq!(expected_improvement(6.0, 0.0, 5.0, true), 1.0);
    }

    #[test]
    fn at_incumbent_with_unit_sd_equals_one_over_sqrt_two_pi() {
        let ei = expected_improvement(5.0, 1.0, 5.0, true);
        let expect = 1.0 / std::f64::consts::TAU.sqrt();
        assert!((ei - expect).abs() < 1e-9, "ei {ei} vs {expect}");
        let ei_min = expected_improvement(5.0, 1.0, 5.0, false);
        assert!((ei_min - expect).abs() < 1e-9);
    }

    #[test]
    fn monotone_in_mean_for_fixed_sd() {
        let mut prev = expected_improvement(-3.0, 0.25, 0.0, true);
        for i in 1..=60 {
            let mean = -3.0 + 0.1 * i as f64;
            let ei = expected_improvement(mean, 0.25, 0.0, true);
            assert!(ei >= prev, "ei not monotone at mean {mean}");
            prev = ei;
        }
    }

    #[test]
    fn cdf_matches_known_values() {
        assert_eq!(standard_normal_cdf(0.0), 0.5);
        assert!((standard_normal_cdf(1.96) - 0.975_002_1).abs() < 1e-5);
        assert!((standard_normal_cdf(-1.96) - 0.024_997_9).abs() < 1e-5);
        assert!(standard_normal_cdf(8.0) > 1.0 - 1e-12);
    }

    #[test]
    fn minimize_mirrors_maximize() {
        let a = expected_improvement(2.0, 0.5, 3.0, true);
        let b = expected_improvement(4.0, 0.5, 3.0, false);
        assert!((a - b).abs() < 1e-12);
    }
}
