//! Special functions used by the likelihood model.

use std::f64::consts::{PI, SQRT_2};

const LN_SQRT_PI: f64 = 0.572_364_942_924_700_1;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `ln(erfc(z))`, accurate far into the upper tail.
pub fn ln_erfc(z: f64) -> f64 {
    if z < 26.0 {
        libm::erfc(z).ln()
    } else {
        // asymptotic series; relative error < 1e-16 for z >= 26
        let inv = 1.0 / (z * z);
        let series =
            1.0 - 0.5 * inv + 0.75 * inv * inv - 1.875 * inv * inv * inv + 6.5625 * inv * inv * inv * inv;
        -z * z - z.ln() - LN_SQRT_PI + series.ln()
    }
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.into_iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log density at `x` of `Laplace(0, scale) + Normal(0, variance)`.
///
/// With `variance == 0` this is the plain Laplace log density. Otherwise both
/// exponential-times-erfc branches are evaluated in log space so neither the
/// `exp(variance / 2 scale^2)` factor nor the erfc tail underflows.
pub fn laplace_normal_log_density(x: f64, scale: f64, variance: f64) -> f64 {
    if variance <= 1e-18 {
        return crate::dp::laplace_log_density(x, scale);
    }
    let sd = variance.sqrt();
    let half_ratio = variance / (2.0 * scale * scale);
    let branch = |y: f64| -> f64 {
        let z = (variance / scale - y) / (sd * SQRT_2);
        if z > 0.0 {
            // half_ratio - y/scale - z^2 == -y^2 / (2 variance)
            -y * y / (2.0 * variance) + (ln_erfc(z) + z * z)
        } else {
            half_ratio - y / scale + ln_erfc(z)
        }
    };
    -(4.0 * scale).ln() + log_add_exp(branch(x), branch(-x))
}

/// `P(X > t, Y > t) - P(X > t)^2` for a standard bivariate normal pair with
/// correlation `rho >= 0`, where `P(X > t) = normal_cdf(a)`.
///
/// Integrates the orthant density derivative `d/dr Phi2(a, a; r)` from 0 to
/// `rho` with 8-point Gauss-Legendre.
pub fn orthant_covariance(a: f64, rho: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    const NODES: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const WEIGHTS: [f64; 4] = [
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let half = rho / 2.0;
    let density = |r: f64| (-a * a / (1.0 + r)).exp() / (2.0 * PI * (1.0 - r * r).sqrt());
    let mut acc = 0.0;
    for (node, weight) in NODES.iter().zip(WEIGHTS) {
        acc += weight * (density(half * (1.0 + node)) + density(half * (1.0 - node)));
    }
    acc * half
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_conv(x: f64, scale: f64, variance: f64) -> f64 {
        // composite Simpson on each side of the Laplace kink at u = x
        let sd = variance.sqrt();
        let f = |u: f64| (-(x - u).abs() / scale).exp() / (2.0 * scale) * normal_pdf(u / sd) / sd;
        let simpson = |a: f64, b: f64| {
            let n = 200_000;
            let h = (b - a) / n as f64;
            let mut acc = f(a) + f(b);
            for i in 1..n {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + h * i as f64);
            }
            acc * h / 3.0
        };
        let (lo, hi) = (-12.0 * sd, 12.0 * sd);
        let kink = x.clamp(lo, hi);
        (simpson(lo, kink) + simpson(kink, hi)).ln()
    }

    #[test]
    fn convolution_matches_quadrature() {
        for &(x, b, v) in &[
            (0.0, 1.0, 1.0),
            (3.0, 1.0, 4.0),
            (-7.5, 3.3, 50.0),
            (40.0, 10.0, 300.0),
            (1.0, 0.1, 25.0),
            (25.0, 0.5, 2.0),
        ] {
            let got = laplace_normal_log_density(x, b, v);
            let want = quad_conv(x, b, v);
            assert!((got - want).abs() < 1e-6, "x={x} b={b} v={v}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_variance_is_laplace() {
        let got = laplace_normal_log_density(2.0, 4.0, 0.0);
        assert!((got - (-(8.0f64).ln() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn ln_erfc_is_continuous_at_switch() {
        let below = ln_erfc(26.0 - 1e-9);
        let above = ln_erfc(26.0);
        assert!((below - above).abs() < 1e-6, "{below} vs {above}");
    }

    #[test]
    fn orthant_covariance_matches_monte_carlo_free_identities() {
        // at a = 0 the orthant probability is 1/4 + asin(rho) / (2 pi)
        for &rho in &[0.1, 0.3, 0.5, 0.7] {
            let want = f64::asin(rho) / (2.0 * PI);
            let got = orthant_covariance(0.0, rho);
            assert!((got - want).abs() < 1e-9, "rho={rho}: {got} vs {want}");
        }
        assert_eq!(orthant_covariance(1.0, 0.0), 0.0);
    }

    #[test]
    fn log_sum_exp_basics() {
        let v = [1.0f64, 2.0, 3.0];
        let want = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(v) - want).abs() < 1e-14);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 2.0), 2.0);
    }
}
