//! Regularized incomplete gamma function and χ² quantiles.

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cont_frac(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cont_frac(a, x)
    }
}

fn prefactor(a: f64, x: f64) -> f64 {
    (a * x.ln() - x - ln_gamma(a)).exp()
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * prefactor(a, x)
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_cont_frac(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    prefactor(a, x) * h
}

/// Survival function of χ²_dof at `x`.
pub fn chi2_sf(dof: f64, x: f64) -> f64 {
    gamma_q(dof / 2.0, x / 2.0)
}

/// Density of χ²_dof at `x`.
pub fn chi2_pdf(dof: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = dof / 2.0;
    ((a - 1.0) * (x / 2.0).ln() - x / 2.0 - ln_gamma(a)).exp() / 2.0
}

/// Standard normal quantile (Acklam's rational approximation, ~1e-9).
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let tail = |q: f64| {
        let q = (-2.0 * q.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < 0.02425 {
        tail(p)
    } else if p > 1.0 - 0.02425 {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Upper `beta`-percentile of χ²_dof: the `x` with `P(χ²_dof > x) = beta`.
///
/// Safeguarded Newton iteration on the regularized upper incomplete gamma,
/// started from the Wilson–Hilferty approximation.
pub fn chi2_upper_percentile(dof: u32, beta: f64) -> Result<f64> {
    if dof < 1 {
        return Err(Error::Parameter("degrees of freedom must be >= 1".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Parameter(format!("significance level {beta} outside (0, 1)")));
    }
    let nu = f64::from(dof);
    let z = normal_quantile(1.0 - beta);
    let c = 2.0 / (9.0 * nu);
    let mut x = (nu * (1.0 - c + z * c.sqrt()).powi(3)).max(1e-8);

    // Bracket the root: Q is decreasing in x.
    let (mut lo, mut hi) = (0.0_f64, x.max(1.0));
    while chi2_sf(nu, hi) > beta {
        lo = hi;
        hi *= 2.0;
    }
    if !(lo..=hi).contains(&x) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let f = chi2_sf(nu, x) - beta;
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = -chi2_pdf(nu, x);
        let mut next = if slope != 0.0 { x - f / slope } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * x.max(1e-300) {
            return Ok(next);
        }
        x = next;
        if (hi - lo) <= 1e-15 * hi {
            break;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn chi2_two_dof_is_exponential() {
        for beta in [0.5, 0.2, 0.05, 0.01, 1e-6] {
            let x = chi2_upper_percentile(2, beta).unwrap();
            let exact = -2.0 * f64::ln(beta);
            assert!(((x - exact) / exact).abs() < 1e-10, "beta={beta}: {x} vs {exact}");
        }
        assert!((chi2_upper_percentile(2, 0.05).unwrap() - 5.9915).abs() < 1e-3);
    }

    #[test]
    fn chi2_table_values() {
        assert!((chi2_upper_percentile(1, 0.5).unwrap() - 0.4549).abs() < 1e-3);
        assert!((chi2_upper_percentile(20, 0.05).unwrap() - 31.410).abs() < 1e-2);
        assert!((chi2_upper_percentile(10, 0.2).unwrap() - 13.442).abs() < 1e-3);
        assert!((chi2_upper_percentile(99, 0.05).unwrap() - 123.225).abs() < 1e-3);
    }

    #[test]
    fn chi2_matches_independent_library() {
        // statrs inverts by bisection; compare its forward CDF at our root
        // instead of trusting its quantile to 1e-8.
        for dof in [1u32, 2, 3, 6, 10, 20, 49, 99, 200] {
            let dist = ChiSquared::new(f64::from(dof)).unwrap();
            for beta in [0.9, 0.5, 0.2, 0.05, 0.01, 1e-4] {
                let x = chi2_upper_percentile(dof, beta).unwrap();
                let sf = dist.sf(x);
                assert!(((sf - beta) / beta).abs() < 1e-8, "dof={dof} beta={beta}: sf={sf}");
                // Relative accuracy of x via the local slope.
                let dx = (sf - beta) / chi2_pdf(f64::from(dof), x);
                assert!((dx / x).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn chi2_invalid_inputs() {
        assert!(chi2_upper_percentile(0, 0.05).is_err());
        assert!(chi2_upper_percentile(3, 0.0).is_err());
        assert!(chi2_upper_percentile(3, 1.0).is_err());
        assert!(chi2_upper_percentile(3, f64::NAN).is_err());
    }

    #[test]
    fn percentile_monotone_in_beta() {
        let mut prev = 0.0;
        for beta in [0.99, 0.9, 0.5, 0.2, 0.05, 0.01, 0.001] {
            let x = chi2_upper_percentile(10, beta).unwrap();
            assert!(x > prev);
            prev = x;
        }
    }
}
