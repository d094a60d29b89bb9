//! Small special-function helpers used by the kernel reductions.

/// Scaled modified Bessel function `exp(-x) * I_0(x)` for `x >= 0`.
///
/// Power series below the crossover, asymptotic expansion above; relative
/// accuracy is ~1e-10 or better across the range used here.
pub fn i0e(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 18.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > 1e-18 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum * (-x).exp()
    } else {
        // I_0(x) ~ e^x/sqrt(2 pi x) * sum_k a_k / (8x)^k, a_k = prod (2j-1)^2 / k!
        let inv = 1.0 / (8.0 * x);
        let mut sum = 1.0;
        let mut num = 1.0;
        for k in 1..=8u32 {
            num *= (2.0 * k as f64 - 1.0).powi(2);
            let term = num * inv.powi(k as i32) / (1..=k).map(|j| j as f64).product::<f64>();
            sum += term;
        }
        sum / (2.0 * std::f64::consts::PI * x).sqrt()
    }
}

/// Legendre polynomial `P_l(x)` by the three-term recurrence.
pub fn legendre_p(l: usize, x: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => x,
        _ => {
            let mut pm1 = 1.0;
            let mut p = x;
            for k in 1..l {
                let kf = k as f64;
                let next = ((2.0 * kf + 1.0) * x * p - kf * pm1) / (kf + 1.0);
                pm1 = p;
                p = next;
            }
            p
        }
    }
}

/// Gamma function (thin wrapper so call sites stay uniform).
pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_gk;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn i0e_matches_quadrature_definition() {
        // I_0(x) = (1/pi) int_0^pi exp(x cos t) dt
        for &x in &[0.0, 0.3, 1.7, 5.0, 12.0, 17.9, 18.1, 25.0, 80.0] {
            let (integral, _) = adaptive_gk(
                &|t: f64| (x * (t.cos() - 1.0)).exp(),
                0.0,
                std::f64::consts::PI,
                1e-13,
                1e-15,
                4000,
            )
            .unwrap();
            let reference = integral / std::f64::consts::PI;
            assert_relative_eq!(i0e(x), reference, max_relative = 1e-9);
        }
    }

    #[test]
    fn legendre_values() {
        assert_abs_diff_eq!(legendre_p(2, 0.5), (3.0 * 0.25 - 1.0) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(legendre_p(5, 1.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(legendre_p(4, 0.0), 3.0 / 8.0, epsilon = 1e-14);
    }

    #[test]
    fn gamma_half_integers() {
        assert_relative_eq!(
            gamma(0.5),
            std::f64::consts::PI.sqrt(),
            max_relative = 1e-14
        );
        assert_relative_eq!(gamma(2.0), 1.0, max_relative = 1e-14);
    }
}
