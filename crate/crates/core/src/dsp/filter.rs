use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AudioBuffer, DspError, Result, SAMPLE_RATE};

const STOPBAND_DB: f64 = 75.0;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass. The passband runs to `cutoff`; the
/// response is below −75 dB from `1.1 × cutoff` (or Nyquist) upwards.
#[derive(Debug, Clone)]
pub struct LowpassDesign {
    pub cutoff: f64,
    pub taps: Vec<f64>,
}

impl LowpassDesign {
    pub fn new(cutoff: f64) -> Result<Self> {
        let nyq = SAMPLE_RATE as f64 / 2.0;
        if !(cutoff > 0.0 && cutoff < nyq) {
            return Err(DspError::InvalidCutoff(cutoff));
        }
        let transition = (0.1 * cutoff).min(nyq - cutoff).max(20.0);
        let edge = cutoff + 0.5 * transition;
        let dw = 2.0 * std::f64::consts::PI * transition / SAMPLE_RATE as f64;
        let beta = 0.1102 * (STOPBAND_DB - 8.7);
        let mut n = ((STOPBAND_DB - 7.95) / (2.285 * dw)).ceil() as usize + 1;
        if n % 2 == 0 {
            n += 1;
        }
        let mid = (n / 2) as f64;
        let fc = edge / SAMPLE_RATE as f64;
        let i0b = bessel_i0(beta);
        let mut taps: Vec<f64> = (0..n)
            .map(|i| {
                let k = i as f64 - mid;
                let sinc = if k == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * std::f64::consts::PI * fc * k).sin() / (std::f64::consts::PI * k)
                };
                let r = k / mid;
                let win = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
                sinc * win
            })
            .collect();
        let dc: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= dc);
        Ok(LowpassDesign { cutoff, taps })
    }

    /// Magnitude response at `freq` Hz.
    pub fn response(&self, freq: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq / SAMPLE_RATE as f64;
        let mid = (self.taps.len() / 2) as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, t) in self.taps.iter().enumerate() {
            let ph = w * (i as f64 - mid);
            re += t * ph.cos();
            im -= t * ph.sin();
        }
        (re * re + im * im).sqrt()
    }

    /// Zero-phase filtering: FFT convolution with the group delay removed,
    /// so the output has the input's length and alignment.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let n = (x.len() + self.taps.len() - 1).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        a.resize(n, Complex64::new(0.0, 0.0));
        let mut h: Vec<Complex64> = self.taps.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        h.resize(n, Complex64::new(0.0, 0.0));
        fwd.process(&mut a);
        fwd.process(&mut h);
        a.iter_mut().zip(&h).for_each(|(u, v)| *u *= v);
        inv.process(&mut a);
        let delay = self.taps.len() / 2;
        let scale = 1.0 / n as f64;
        a[delay..delay + x.len()].iter().map(|c| c.re * scale).collect()
    }
}

/// Linear-phase low-pass applied to every channel.
pub fn lowpass(buffer: &AudioBuffer, cutoff: f64) -> Result<AudioBuffer> {
    let design = LowpassDesign::new(cutoff)?;
    Ok(buffer.map_channels(|c| design.apply(c)))
}
