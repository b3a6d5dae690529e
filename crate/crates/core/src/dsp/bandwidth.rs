use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AudioBuffer, DspError, Result, SAMPLE_RATE};

const NFFT: usize = 8192;
const RANGE_DB: f64 = 60.0;

/// 4-term Blackman-Harris; sidelobes sit near −92 dB, well below the
/// 60 dB detection range.
fn blackman_harris(n: usize) -> Vec<f64> {
    let (a0, a1, a2, a3) = (0.35875, 0.48829, 0.14128, 0.01168);
    (0..n)
        .map(|i| {
            let x = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            a0 - a1 * x.cos() + a2 * (2.0 * x).cos() - a3 * (3.0 * x).cos()
        })
        .collect()
}

/// Highest frequency whose long-term average power lies within 60 dB of
/// the spectral peak. Channels are averaged; the DC bin is ignored.
/// Digital silence yields 0 Hz.
pub fn estimate_bandwidth(buffer: &AudioBuffer) -> Result<f64> {
    if buffer.len() < SAMPLE_RATE as usize {
        return Err(DspError::TooShort {
            got: buffer.len(),
            need: SAMPLE_RATE as usize,
        });
    }
    let win = blackman_harris(NFFT);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let hop = NFFT / 2;
    let frames = (buffer.len() - NFFT) / hop + 1;
    let mut avg = vec![0.0; NFFT / 2 + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    for c in 0..buffer.channels() {
        let x = buffer.channel(c);
        for t in 0..frames {
            let s = t * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[s + i] * win[i], 0.0);
            }
            fft.process(&mut buf);
            for (a, v) in avg.iter_mut().zip(&buf) {
                *a += v.norm_sqr();
            }
        }
    }
    let peak = avg[1..].iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Ok(0.0);
    }
    let threshold = peak * 10f64.powf(-RANGE_DB / 10.0);
    let top = (1..avg.len()).rev().find(|&k| avg[k] > threshold).unwrap_or(0);
    Ok(top as f64 * SAMPLE_RATE as f64 / NFFT as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::lowpass;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(secs: f64, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (secs * SAMPLE_RATE as f64) as usize;
        AudioBuffer::mono((0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
    }

    #[test]
    fn white_noise_is_full_band() {
        let bw = estimate_bandwidth(&noise(2.0, 1)).unwrap();
        assert!(bw >= 20_000.0, "{bw}");
    }

    #[test]
    fn lowpassed_noise() {
        let bw = estimate_bandwidth(&lowpass(&noise(2.0, 2), 3500.0).unwrap()).unwrap();
        assert!((3300.0..=3900.0).contains(&bw), "{bw}");
    }

    #[test]
    fn pure_tone() {
        let n = 2 * SAMPLE_RATE as usize;
        let x = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        let bw = estimate_bandwidth(&AudioBuffer::mono(x).unwrap()).unwrap();
        assert!((900.0..=1100.0).contains(&bw), "{bw}");
    }

    #[test]
    fn silence_and_short_input() {
        let silent = AudioBuffer::mono(vec![0.0; 48_000]).unwrap();
        assert_eq!(estimate_bandwidth(&silent).unwrap(), 0.0);
        let short = AudioBuffer::mono(vec![0.1; 1000]).unwrap();
        assert!(estimate_bandwidth(&short).is_err());
    }

    #[test]
    fn monotone_in_cutoff() {
        let src = noise(1.5, 3);
        let mut last = 0.0;
        for cutoff in [2000.0, 4000.0, 7000.0, 11_000.0, 16_000.0] {
            let bw = estimate_bandwidth(&lowpass(&src, cutoff).unwrap()).unwrap();
            assert!(bw >= last, "{cutoff}: {bw} < {last}");
            last = bw;
        }
    }
}
