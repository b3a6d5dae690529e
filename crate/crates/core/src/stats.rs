//! Special functions for Student's t: log-gamma, the regularized
//! incomplete beta function, and the t CDF and quantile built on it.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
    #[error("degrees of freedom must be >= 1, got {0}")]
    DegreesOfFreedom(f64),
}

/// Lanczos approximation (g = 7, n = 9); relative error around 1e-15.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
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
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let t2 = t * t;
    if t2 < df {
        // Near the centre, integrate outward from 0 to keep precision.
        let half = 0.5 * reg_inc_beta(0.5, 0.5 * df, t2 / (df + t2));
        return if t >= 0.0 { 0.5 + half } else { 0.5 - half };
    }
    let tail = 0.5 * reg_inc_beta(0.5 * df, 0.5, df / (df + t2));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse CDF of Student's t, found by bisection on [`t_cdf`].
pub fn t_quantile(p: f64, df: f64) -> Result<f64, StatsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::Probability(p));
    }
    if !(df >= 1.0) {
        return Err(StatsError::DegreesOfFreedom(df));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let (target, sign) = if p > 0.5 { (p, 1.0) } else { (1.0 - p, -1.0) };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while t_cdf(hi, df) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if t_cdf(mid, df) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(sign * 0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_at_integers() {
        let mut fact: f64 = 1.0;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n = {n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a
        for &x in &[0.1, 0.5, 0.9] {
            assert!((reg_inc_beta(1.0, 1.0, x) - x).abs() < 1e-14);
            assert!((reg_inc_beta(2.5, 1.0, x) - x.powf(2.5)).abs() < 1e-13);
        }
    }

    #[test]
    fn t_table_values() {
        let table = [
            (0.975, 1.0, 12.706),
            (0.975, 2.0, 4.303),
            (0.975, 5.0, 2.571),
            (0.975, 10.0, 2.228),
            (0.975, 30.0, 2.042),
            (0.95, 10.0, 1.812),
            (0.995, 20.0, 2.845),
            (0.9, 3.0, 1.638),
        ];
        for (p, df, want) in table {
            let got = t_quantile(p, df).unwrap();
            assert!((got - want).abs() < 1e-3, "p={p} df={df}: {got} vs {want}");
        }
    }

    #[test]
    fn median_and_symmetry() {
        for df in [1.0, 4.0, 100.0] {
            assert_eq!(t_quantile(0.5, df).unwrap(), 0.0);
            let hi = t_quantile(0.8, df).unwrap();
            let lo = t_quantile(0.2, df).unwrap();
            assert!((hi + lo).abs() < 1e-12);
        }
    }

    #[test]
    fn approaches_normal_quantile() {
        let q = t_quantile(0.975, 1e6).unwrap();
        assert!((q - 1.959964).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert_eq!(t_quantile(1.0, 3.0), Err(StatsError::Probability(1.0)));
        assert_eq!(t_quantile(0.0, 3.0), Err(StatsError::Probability(0.0)));
        assert!(matches!(t_quantile(0.9, 0.5), Err(StatsError::DegreesOfFreedom(_))));
    }

    /// Checks against statrs as an independent implementation.
    mod statrs_oracle {
        use approx::assert_relative_eq;
        use statrs::distribution::{ContinuousCDF, StudentsT};
        use statrs::function::{beta::beta_reg, gamma::ln_gamma as sr_ln_gamma};

        use super::super::{ln_gamma, reg_inc_beta, t_cdf, t_quantile};

        #[test]
        fn ln_gamma_matches() {
            for i in 1..400 {
                let x = i as f64 * 0.137;
                assert_relative_eq!(ln_gamma(x), sr_ln_gamma(x), epsilon = 1e-12, max_relative = 1e-12);
            }
        }

        #[test]
        fn incomplete_beta_matches() {
            for &(a, b) in &[(0.5, 0.5), (0.7, 0.7), (2.0, 5.0), (4.5, 0.5), (30.0, 0.5)] {
                for i in 1..50 {
                    let x = i as f64 / 50.0;
                    assert_relative_eq!(reg_inc_beta(a, b, x), beta_reg(a, b, x), epsilon = 1e-12);
                }
            }
        }

        #[test]
        fn student_t_matches() {
            for &df in &[1.0, 2.0, 3.0, 5.0, 9.0, 10.0, 29.0, 100.0] {
                let t = StudentsT::new(0.0, 1.0, df).unwrap();
                for i in -40..=40 {
                    let x = i as f64 * 0.25;
                    assert_relative_eq!(t_cdf(x, df), t.cdf(x), epsilon = 1e-12);
                }
                for &p in &[0.5, 0.6, 0.9, 0.95, 0.975, 0.995, 0.9995] {
                    assert_relative_eq!(t_quantile(p, df).unwrap(), t.inverse_cdf(p), max_relative = 1e-9);
                }
            }
        }
    }
}
