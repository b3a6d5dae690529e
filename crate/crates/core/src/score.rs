//! Logistic score density emitted by the listener network.
//!
//! A prediction is a pair `(μ, log a)`. The density over MUSHRA scores is
//! `p(s) = sech²((s − μ)/2a) / 4a`, whose standard deviation is `π·a/√3`.
//! The training loss is the negative log of that density.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("sample count must be >= 1")]
    NoSamples,
    #[error("confidence intervals need at least 2 listeners, got {0}")]
    TooFewListeners(usize),
    #[error("confidence level {0} outside (0, 1)")]
    Level(f64),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Exact sum `a + b = s + e` (Knuth two-sum).
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Exact product `a·b = p + e`.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn dd_add((ah, al): (f64, f64), (bh, bl): (f64, f64)) -> (f64, f64) {
    let (s, e) = two_sum(ah, bh);
    let (s, e2) = two_sum(s, e + al + bl);
    (s, e2)
}

fn dd_mul((ah, al): (f64, f64), (bh, bl): (f64, f64)) -> (f64, f64) {
    let (p, e) = two_prod(ah, bh);
    two_sum(p, e + ah * bl + al * bh)
}

fn dd_div((ah, al): (f64, f64), b: f64) -> (f64, f64) {
    let q = ah / b;
    let (p, e) = two_prod(q, b);
    two_sum(q, ((ah - p - e) + al) / b)
}

/// `e^y` as a double-double, accurate to about 1e-30 relative for the
/// moderate arguments a log-scale takes.
fn dd_exp(y: f64) -> (f64, f64) {
    // ln 2 split so that n·LN2_HI is exact for |n| < 2^20.
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    const LN2_LO2: f64 = 1.161_222_722_936_253_2e-26;
    let n = (y / std::f64::consts::LN_2).round();
    let r = (y - n * LN2_HI, 0.0);
    let r = dd_add(r, two_prod(-n, LN2_LO));
    let r = dd_add(r, (-n * LN2_LO2, 0.0));
    // Taylor series, |r| <= 0.35.
    let mut sum = (1.0, 0.0);
    let mut term = (1.0, 0.0);
    for k in 1..=27 {
        term = dd_mul(term, r);
        term = dd_div(term, k as f64);
        sum = dd_add(sum, term);
    }
    let scale = 2f64.powi(n as i32);
    (sum.0 * scale, sum.1 * scale)
}

/// Negative log-likelihood of score `s` under a logistic with location
/// `mu` and scale `exp(log_a)`:
///
/// `log(4a) − 2·log sech(z)` with `z = (s − μ)/2a`, evaluated as
/// `log a + x + 2·log1p(e^{−x})` with `x = |s − μ|/a` (the `log 4` and
/// `2·log 2` terms cancel). `x` is carried in double-double precision so
/// the result stays correctly rounded even when `x` reaches 1e7.
pub fn logistic_nll(mu: f64, log_a: f64, s: f64) -> f64 {
    let (mut d_hi, mut d_lo) = two_sum(s, -mu);
    if d_hi < 0.0 {
        d_hi = -d_hi;
        d_lo = -d_lo;
    }
    if !(d_hi.is_finite() && log_a.is_finite()) || log_a.abs() > 700.0 {
        let x = d_hi / log_a.exp();
        return log_a + x + 2.0 * (-x).exp().ln_1p();
    }
    let (x, x_lo) = dd_mul((d_hi, d_lo), dd_exp(-log_a));
    let tail = 2.0 * (-x).exp().ln_1p();
    x + ((log_a + tail) + x_lo)
}

/// Partial derivatives of [`logistic_nll`] with respect to `mu` and `log_a`.
pub fn logistic_nll_grad(mu: f64, log_a: f64, s: f64) -> (f64, f64) {
    let a = log_a.exp();
    let d = s - mu;
    let th = (d / (2.0 * a)).tanh();
    let dmu = -th / a;
    // x·tanh(x/2) with x = |d|/a equals (d/a)·tanh(d/2a).
    let dlog_a = 1.0 - (d / a) * th;
    (dmu, dlog_a)
}

/// Predicted distribution of listener scores for one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub mu: f64,
    pub log_a: f64,
}

impl ScoreDistribution {
    pub fn new(mu: f64, log_a: f64) -> Self {
        ScoreDistribution { mu, log_a }
    }

    pub fn from_scale(mu: f64, a: f64) -> Self {
        ScoreDistribution { mu, log_a: a.ln() }
    }

    /// Logistic scale `a`.
    pub fn scale(&self) -> f64 {
        self.log_a.exp()
    }

    pub fn std(&self) -> f64 {
        std::f64::consts::PI * self.scale() / 3f64.sqrt()
    }

    pub fn nll(&self, s: f64) -> f64 {
        logistic_nll(self.mu, self.log_a, s)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.mu + self.scale() * (p / (1.0 - p)).ln()
    }

    /// Inverse-CDF draws. Scores are not clipped.
    pub fn sample<R: RngCore + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>, ScoreError> {
        if n == 0 {
            return Err(ScoreError::NoSamples);
        }
        let a = self.scale();
        Ok((0..n)
            .map(|_| {
                let u = open_unit(rng);
                self.mu + a * (u / (1.0 - u)).ln()
            })
            .collect())
    }

    /// `μ ± t_{(1+level)/2, n−1} · std / √n`.
    pub fn confidence_interval(&self, n_listeners: usize, level: f64) -> Result<(f64, f64), ScoreError> {
        if n_listeners < 2 {
            return Err(ScoreError::TooFewListeners(n_listeners));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(ScoreError::Level(level));
        }
        let t = stats::t_quantile(0.5 * (1.0 + level), (n_listeners - 1) as f64)?;
        let half = t * self.std() / (n_listeners as f64).sqrt();
        Ok((self.mu - half, self.mu + half))
    }
}

/// Uniform draw in the open interval (0, 1) with 53 random bits.
pub(crate) fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let k = rng.next_u64() >> 11;
    (k as f64 + 0.5) / (1u64 << 53) as f64
}

/// Simulated listening test: `n` draws, optionally clipped to the MUSHRA
/// range [0, 100] for reporting.
pub fn simulate_listeners<R: RngCore + ?Sized>(
    dist: &ScoreDistribution,
    n: usize,
    rng: &mut R,
    clip: bool,
) -> Result<Vec<f64>, ScoreError> {
    let mut v = dist.sample(n, rng)?;
    if clip {
        v.iter_mut().for_each(|s| *s = s.clamp(0.0, 100.0));
    }
    Ok(v)
}

pub fn t_quantile(p: f64, df: usize) -> Result<f64, StatsError> {
    stats::t_quantile(p, df as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of the density's negative log in plain f64, valid
    /// while cosh does not overflow.
    fn direct_nll(mu: f64, a: f64, s: f64) -> f64 {
        let z = (s - mu) / (2.0 * a);
        (4.0 * a).ln() - 2.0 * (1.0 / z.cosh()).ln()
    }

    #[test]
    fn nll_at_the_mode() {
        assert_eq!(logistic_nll(60.0, 0.25f64.ln(), 60.0), 0.0);
        for a in [0.01, 1.0, 7.5, 300.0] {
            let v = ScoreDistribution::from_scale(42.0, a).nll(42.0);
            assert!((v - (4.0 * a).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn nll_worked_value() {
        // log 40 + 2·ln cosh(1) = 3.688879454 + 0.867561661
        let v = ScoreDistribution::from_scale(50.0, 10.0).nll(70.0);
        assert!((v - 4.556_441_115_08).abs() < 1e-10, "{v}");
        assert!((v - direct_nll(50.0, 10.0, 70.0)).abs() < 1e-13);
    }

    #[test]
    fn nll_matches_direct_form_in_safe_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let mu = 100.0 * open_unit(&mut rng);
            let a = (0.5 + 20.0 * open_unit(&mut rng)) as f64;
            let s = mu + 200.0 * (open_unit(&mut rng) - 0.5);
            let got = logistic_nll(mu, a.ln(), s);
            assert!((got - direct_nll(mu, a, s)).abs() < 1e-11);
        }
    }

    #[test]
    fn symmetric_and_monotone() {
        let d = ScoreDistribution::from_scale(55.0, 3.0);
        let mut last = d.nll(55.0);
        for k in 1..200 {
            let off = k as f64 * 0.5;
            assert!((d.nll(55.0 + off) - d.nll(55.0 - off)).abs() < 1e-12);
            let v = d.nll(55.0 + off);
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let (mu, a) = (40.0, 2.5);
        let d = ScoreDistribution::from_scale(mu, a);
        let (lo, hi) = (mu - 60.0 * a, mu + 60.0 * a);
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        // Composite Simpson.
        let mut acc = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * (-d.nll(lo + i as f64 * h)).exp();
        }
        assert!((acc * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cases = [
            (50.0, 1.0, 70.0),
            (10.0, -2.0, 9.5),
            (80.0, 3.0, 20.0),
            (60.0, 0.5, 60.0),
        ];
        let h = 1e-6;
        for (mu, la, s) in cases {
            let (gm, gl) = logistic_nll_grad(mu, la, s);
            let nm = (logistic_nll(mu + h, la, s) - logistic_nll(mu - h, la, s)) / (2.0 * h);
            let nl = (logistic_nll(mu, la + h, s) - logistic_nll(mu, la - h, s)) / (2.0 * h);
            assert!((gm - nm).abs() < 1e-6, "{gm} {nm}");
            assert!((gl - nl).abs() < 1e-6, "{gl} {nl}");
        }
        assert_eq!(logistic_nll_grad(60.0, 1.0, 60.0).0, 0.0);
    }

    #[test]
    fn std_formula() {
        let unit = ScoreDistribution::from_scale(0.0, 3f64.sqrt() / std::f64::consts::PI);
        assert!((unit.std() - 1.0).abs() < 1e-12);
        let ten = ScoreDistribution::from_scale(0.0, 10.0);
        assert!((ten.std() - 18.1380).abs() < 1e-4);
        let twenty = ScoreDistribution::from_scale(0.0, 20.0);
        assert!((twenty.std() - 2.0 * ten.std()).abs() < 1e-12);
    }

    #[test]
    fn sampling_median_and_determinism() {
        let d = ScoreDistribution::new(60.0, 5f64.ln());
        assert_eq!(d.quantile(0.5), 60.0);
        let a = d.sample(32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = d.sample(32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            d.sample(0, &mut ChaCha8Rng::seed_from_u64(9)),
            Err(ScoreError::NoSamples)
        );
    }

    #[test]
    fn sample_moments_and_quantiles() {
        let d = ScoreDistribution::new(60.0, 5f64.ln());
        let mut v = d.sample(100_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 60.0).abs() < 0.15);
        assert!((sd / d.std() - 1.0).abs() < 0.01);
        v.sort_by(f64::total_cmp);
        for p in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let emp = v[(p * n) as usize];
            let want = d.quantile(p);
            assert!(((emp - want) / want).abs() < 0.02, "p={p}");
        }
    }

    #[test]
    fn confidence_intervals() {
        let d = ScoreDistribution::from_scale(80.0, 3f64.sqrt() / std::f64::consts::PI);
        let (lo, hi) = d.confidence_interval(11, 0.95).unwrap();
        assert!((hi - 80.0 - 0.6718).abs() < 1e-3);
        assert!(((80.0 - lo) - (hi - 80.0)).abs() < 1e-12);
        let (lo0, hi0) = d.confidence_interval(11, 1e-12).unwrap();
        assert!((hi0 - lo0).abs() < 1e-9);
        let w = |n| {
            let (l, h) = d.confidence_interval(n, 0.95).unwrap();
            let t = t_quantile(0.975, n - 1).unwrap();
            (h - l) / t
        };
        assert!((w(4) / w(16) - 2.0).abs() < 1e-12);
        assert_eq!(d.confidence_interval(1, 0.95), Err(ScoreError::TooFewListeners(1)));
        assert_eq!(d.confidence_interval(5, 1.0), Err(ScoreError::Level(1.0)));
    }

    #[test]
    fn clipping_only_at_report_time() {
        let d = ScoreDistribution::new(98.0, 2f64.ln());
        let raw = d.sample(500, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let clipped = simulate_listeners(&d, 500, &mut ChaCha8Rng::seed_from_u64(3), true).unwrap();
        assert!(raw.iter().any(|&s| s > 100.0));
        assert!(clipped.iter().all(|&s| (0.0..=100.0).contains(&s)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn interval_is_symmetric_and_shrinks(mu in 0.0..100.0f64, log_a in -2.0..3.0f64, n in 2usize..200) {
                let d = ScoreDistribution::new(mu, log_a);
                let (lo, hi) = d.confidence_interval(n, 0.95).unwrap();
                prop_assert!(((mu - lo) - (hi - mu)).abs() < 1e-9);
                let (lo2, hi2) = d.confidence_interval(n + 1, 0.95).unwrap();
                prop_assert!(hi2 - lo2 < hi - lo);
            }

            #[test]
            fn nll_is_symmetric_about_mu(mu in 0.0..100.0f64, log_a in -3.0..5.0f64, d in 0.0..500.0f64) {
                let l = logistic_nll(mu, log_a, mu + d);
                let r = logistic_nll(mu, log_a, mu - d);
                prop_assert!((l - r).abs() <= 1e-12 * l.abs().max(1.0));
            }
        }
    }
}
