//! CutMix on spectrogram segments and the matching label interpolation.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::Segment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("beta parameter must be > 0, got {0}")]
    Alpha(f64),
    #[error("mixing weight must lie in [0, 1], got {0}")]
    Lambda(f64),
    #[error("cutmix needs shape-identical segments")]
    Shape,
}

pub type Result<T> = std::result::Result<T, AugmentError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutMixConfig {
    pub alpha: f64,
    pub enabled: bool,
    /// Chance that a batch item is mixed with a partner.
    pub probability: f64,
}

impl Default for CutMixConfig {
    fn default() -> Self {
        CutMixConfig {
            alpha: 0.7,
            enabled: true,
            probability: 0.5,
        }
    }
}

/// `λ ~ Beta(α, α)` as `X/(X+Y)` with `X, Y ~ Gamma(α, 1)`; redrawn until
/// strictly inside (0, 1).
pub fn sample_beta<R: RngCore + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(AugmentError::Alpha(alpha));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| AugmentError::Alpha(alpha))?;
    loop {
        let x: f64 = gamma.sample(rng);
        let y: f64 = gamma.sample(rng);
        let l = x / (x + y);
        if l > 0.0 && l < 1.0 {
            return Ok(l);
        }
    }
}

/// Cut rectangle in (band, frame) cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub band: usize,
    pub frame: usize,
    pub bands: usize,
    pub frames: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.bands * self.frames
    }

    pub fn contains(&self, b: usize, t: usize) -> bool {
        (self.band..self.band + self.bands).contains(&b) && (self.frame..self.frame + self.frames).contains(&t)
    }
}

/// Rectangle with sides `√(1−λ)` of the plane (rounded, at least one
/// cell), placed uniformly and fully inside. `λ = 1` cuts nothing.
pub fn sample_rect<R: RngCore + ?Sized>(bands: usize, frames: usize, lambda: f64, rng: &mut R) -> Result<Option<Rect>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AugmentError::Lambda(lambda));
    }
    if lambda == 1.0 {
        return Ok(None);
    }
    let side = (1.0 - lambda).sqrt();
    let h = ((side * bands as f64).round() as usize).clamp(1, bands);
    let w = ((side * frames as f64).round() as usize).clamp(1, frames);
    let band = rng.random_range(0..=bands - h);
    let frame = rng.random_range(0..=frames - w);
    Ok(Some(Rect {
        band,
        frame,
        bands: h,
        frames: w,
    }))
}

/// Pastes `rect` of `b` onto `a` in every plane. Returns the mixed segment
/// and the realized surviving fraction of `a`.
pub fn cutmix_with_rect(a: &Segment, b: &Segment, rect: Option<Rect>) -> Result<(Segment, f64)> {
    if !a.same_shape(b) {
        return Err(AugmentError::Shape);
    }
    let Some(r) = rect else {
        return Ok((a.clone(), 1.0));
    };
    if r.band + r.bands > a.bands || r.frame + r.frames > a.frames {
        return Err(AugmentError::Shape);
    }
    let mut out = a.clone();
    let t = a.frames;
    for p in 0..a.planes {
        for band in r.band..r.band + r.bands {
            let row = (p * a.bands + band) * t;
            out.data[row + r.frame..row + r.frame + r.frames]
                .copy_from_slice(&b.data[row + r.frame..row + r.frame + r.frames]);
        }
    }
    out.padded = a.padded || b.padded;
    let lambda = 1.0 - r.area() as f64 / a.cells() as f64;
    Ok((out, lambda))
}

/// `ỹ = λ·y_a + (1−λ)·y_b`.
pub fn mix_labels(y_a: f64, y_b: f64, lambda: f64) -> f64 {
    lambda * y_a + (1.0 - lambda) * y_b
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub segment: Segment,
    pub label: f64,
    pub lambda: f64,
    pub rect: Option<Rect>,
}

/// CutMix of `(a, y_a)` and `(b, y_b)` at target weight `lambda`; the
/// label uses the realized area fraction.
pub fn cutmix<R: RngCore + ?Sized>(
    a: &Segment,
    y_a: f64,
    b: &Segment,
    y_b: f64,
    lambda: f64,
    rng: &mut R,
) -> Result<Mixed> {
    if !a.same_shape(b) {
        return Err(AugmentError::Shape);
    }
    let rect = sample_rect(a.bands, a.frames, lambda, rng)?;
    let (segment, lambda) = cutmix_with_rect(a, b, rect)?;
    Ok(Mixed {
        segment,
        label: mix_labels(y_a, y_b, lambda),
        lambda,
        rect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seg(planes: usize, fill: impl Fn(usize) -> f32) -> Segment {
        let (b, t) = (6, 10);
        Segment::new(planes, b, t, (0..planes * b * t).map(fill).collect())
    }

    #[test]
    fn beta_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_beta(0.7, &mut rng).unwrap()).collect();
        assert!(xs.iter().all(|&x| x > 0.0 && x < 1.0));
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
        let want = 1.0 / (4.0 * (2.0 * 0.7 + 1.0));
        assert!((var / want - 1.0).abs() < 0.05, "{var}");
        assert_eq!(sample_beta(0.0, &mut rng), Err(AugmentError::Alpha(0.0)));
    }

    #[test]
    fn lambda_one_is_identity() {
        let a = seg(4, |i| i as f32);
        let b = seg(4, |i| -(i as f32));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = cutmix(&a, 70.0, &b, 20.0, 1.0, &mut rng).unwrap();
        assert_eq!(m.segment, a);
        assert_eq!(m.label, 70.0);
    }

    #[test]
    fn label_arithmetic() {
        assert_eq!(mix_labels(80.0, 40.0, 0.25), 50.0);
        assert_eq!(mix_labels(80.0, 40.0, 0.25), mix_labels(40.0, 80.0, 0.75));
    }

    #[test]
    fn realized_area_and_provenance() {
        let a = seg(8, |_| 1.0);
        let b = seg(8, |_| 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (bands, frames) = (a.bands, a.frames);
        let tol = (bands + frames) as f64 / (bands * frames) as f64;
        for k in 0..200 {
            let lambda = k as f64 / 200.0;
            let m = cutmix(&a, 90.0, &b, 10.0, lambda, &mut rng).unwrap();
            let from_b = m.segment.data.iter().filter(|&&v| v == 2.0).count();
            assert!(m.segment.data.iter().all(|&v| v == 1.0 || v == 2.0));
            let per_plane = from_b / 8;
            assert_eq!(per_plane * 8, from_b);
            assert!((1.0 - per_plane as f64 / (bands * frames) as f64 - m.lambda).abs() < 1e-15);
            assert!((m.lambda - lambda).abs() <= tol, "{lambda} -> {}", m.lambda);
            assert_eq!(m.label, mix_labels(90.0, 10.0, m.lambda));
            if let Some(r) = m.rect {
                for p in 0..8 {
                    for bb in 0..bands {
                        for t in 0..frames {
                            let v = m.segment.data[(p * bands + bb) * frames + t];
                            assert_eq!(v == 2.0, r.contains(bb, t));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let a = seg(4, |_| 0.0);
        let b = seg(8, |_| 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(cutmix(&a, 1.0, &b, 1.0, 0.5, &mut rng), Err(AugmentError::Shape));
        assert_eq!(cutmix(&a, 1.0, &a, 1.0, 1.5, &mut rng), Err(AugmentError::Lambda(1.5)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cutmix_invariants(lambda in 0.0..=1.0f64, ya in 0.0..100.0f64, yb in 0.0..100.0f64, seed in any::<u64>()) {
                let a = seg(4, |_| 1.0);
                let b = seg(4, |_| 2.0);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = cutmix(&a, ya, &b, yb, lambda, &mut rng).unwrap();
                prop_assert!(m.segment.same_shape(&a));
                prop_assert!((0.0..=1.0).contains(&m.lambda));
                let cells = (a.bands * a.frames) as f64;
                let pasted = m.segment.data.iter().filter(|&&v| v == 2.0).count() as f64 / 4.0;
                prop_assert!((1.0 - pasted / cells - m.lambda).abs() < 1e-12);
                prop_assert_eq!(m.label, mix_labels(ya, yb, m.lambda));
                prop_assert!(m.label >= ya.min(yb) - 1e-9 && m.label <= ya.max(yb) + 1e-9);
                if let Some(r) = m.rect {
                    for p in 0..4 {
                        for bb in 0..a.bands {
                            for t in 0..a.frames {
                                let v = m.segment.data[(p * a.bands + bb) * a.frames + t];
                                prop_assert_eq!(v == 2.0, r.contains(bb, t));
                            }
                        }
                    }
                }
            }
        }
    }
}
