use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::spectrogram::{Spectrogram, PLANES};
use super::{mid_side, AudioBuffer, DspError, Result, SAMPLE_RATE};

/// Front-end parameters. Window and hop are in samples at 48 kHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub bands: usize,
    pub min_center_hz: f64,
    pub max_center_hz: f64,
    pub window: usize,
    pub hop: usize,
    pub filter_order: u32,
    pub floor_db: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            bands: 64,
            min_center_hz: 50.0,
            max_center_hz: 23_000.0,
            window: 2048,
            hop: 1024,
            filter_order: 4,
            floor_db: -80.0,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DspError::InvalidConfig(m.to_string()));
        if self.bands < 4 {
            return bad("at least 4 bands required");
        }
        if !(self.hop > 0 && self.window >= self.hop) {
            return bad("need window >= hop > 0");
        }
        let nyq = SAMPLE_RATE as f64 / 2.0;
        if !(self.min_center_hz > 0.0 && self.min_center_hz < self.max_center_hz && self.max_center_hz < nyq) {
            return bad("need 0 < min center < max center < 24000 Hz");
        }
        if self.filter_order == 0 {
            return bad("filter order must be >= 1");
        }
        if !self.floor_db.is_finite() {
            return bad("log floor must be finite");
        }
        Ok(())
    }

    pub fn window_seconds(&self) -> f64 {
        self.window as f64 / SAMPLE_RATE as f64
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / SAMPLE_RATE as f64
    }

    /// Stable identifier: FNV-1a over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        if samples < self.window {
            0
        } else {
            (samples - self.window) / self.hop + 1
        }
    }
}

/// Equivalent rectangular bandwidth (Glasberg & Moore) in Hz.
pub fn erb_hz(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

fn erb_number(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

fn erb_number_inv(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// `bands` centre frequencies equally spaced on the ERB-number scale,
/// inclusive of both ends.
pub fn erb_centers(bands: usize, lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (erb_number(lo), erb_number(hi));
    (0..bands)
        .map(|i| erb_number_inv(a + (b - a) * i as f64 / (bands - 1) as f64))
        .collect()
}

/// Sparse matrix of squared Gammatone magnitude responses sampled on the
/// FFT bin grid: `|H(f)|² = (1 + ((f − fc)/(1.019·ERB(fc)))²)^(−order)`.
#[derive(Debug, Clone)]
pub struct GammatoneWeights {
    pub centers: Vec<f64>,
    rows: Vec<(usize, Vec<f64>)>,
}

impl GammatoneWeights {
    pub fn new(config: &FrontendConfig) -> Self {
        let centers = erb_centers(config.bands, config.min_center_hz, config.max_center_hz);
        let n_bins = config.window / 2 + 1;
        let bin_hz = SAMPLE_RATE as f64 / config.window as f64;
        let rows = centers
            .iter()
            .map(|&fc| {
                let bw = 1.019 * erb_hz(fc);
                let w: Vec<f64> = (0..n_bins)
                    .map(|k| {
                        let x = (k as f64 * bin_hz - fc) / bw;
                        (1.0 + x * x).powi(-(config.filter_order as i32))
                    })
                    .collect();
                let first = w.iter().position(|&v| v > 1e-12).unwrap_or(0);
                let last = w.iter().rposition(|&v| v > 1e-12).unwrap_or(0);
                (first, w[first..=last].to_vec())
            })
            .collect();
        GammatoneWeights { centers, rows }
    }

    /// Weight of band `b` at bin `k`.
    pub fn weight(&self, b: usize, k: usize) -> f64 {
        let (start, w) = &self.rows[b];
        if k < *start {
            return 0.0;
        }
        w.get(k - start).copied().unwrap_or(0.0)
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.rows) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

struct Stft {
    window: Vec<f64>,
    hop: usize,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    fn new(len: usize, hop: usize) -> Self {
        let window: Vec<f64> = (0..len)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
            .collect();
        let sum: f64 = window.iter().sum();
        let fft = FftPlanner::new().plan_fft_forward(len);
        Stft {
            window,
            hop,
            // A unit-amplitude sine reads as power 1/2 at its peak bin.
            scale: 2.0 / (sum * sum),
            fft,
        }
    }

    /// Power spectrum of frame `t`, bins 0..=len/2.
    fn power(&self, x: &[f64], t: usize, buf: &mut Vec<Complex64>, out: &mut [f64]) {
        let start = t * self.hop;
        buf.clear();
        buf.extend(
            x[start..start + self.window.len()]
                .iter()
                .zip(&self.window)
                .map(|(v, w)| Complex64::new(v * w, 0.0)),
        );
        self.fft.process(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.norm_sqr() * self.scale;
        }
    }
}

/// Log-compressed Gammatone energies of L, R, M and S, all framed
/// identically. Each cell stores `max(10·log10 E, floor) − floor`.
pub fn gammatone_spectrogram(buffer: &AudioBuffer, config: &FrontendConfig) -> Result<Spectrogram> {
    config.validate()?;
    if buffer.channels() != 2 {
        return Err(DspError::NeedsStereo {
            op: "gammatone_spectrogram",
        });
    }
    let frames = config.frames_for(buffer.len());
    if frames == 0 {
        return Err(DspError::TooShort {
            got: buffer.len(),
            need: config.window,
        });
    }
    let (mid, side) = mid_side(buffer)?;
    let signals: [&[f64]; PLANES] = [buffer.channel(0), buffer.channel(1), &mid, &side];

    let weights = GammatoneWeights::new(config);
    let stft = Stft::new(config.window, config.hop);
    let bands = config.bands;
    let mut planes = vec![0f32; PLANES * bands * frames];
    let mut buf = Vec::with_capacity(config.window);
    let mut power = vec![0.0; config.window / 2 + 1];
    let mut energy = vec![0.0; bands];
    for (p, sig) in signals.iter().enumerate() {
        let plane = &mut planes[p * bands * frames..(p + 1) * bands * frames];
        for t in 0..frames {
            stft.power(sig, t, &mut buf, &mut power);
            weights.apply(&power, &mut energy);
            for (b, &e) in energy.iter().enumerate() {
                let db = if e > 0.0 { 10.0 * e.log10() } else { f64::NEG_INFINITY };
                plane[b * frames + t] = (db.max(config.floor_db) - config.floor_db) as f32;
            }
        }
    }
    Ok(Spectrogram::new(
        bands,
        frames,
        planes,
        weights.centers,
        config.hop_seconds(),
        Some(config.hash()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, secs: f64) -> Vec<f64> {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect()
    }

    #[test]
    fn centers_are_increasing_and_bounded() {
        let c = erb_centers(64, 50.0, 23_000.0);
        assert!((c[0] - 50.0).abs() < 1e-9);
        assert!((c[63] - 23_000.0).abs() < 1e-6);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn weight_peaks_at_center() {
        let cfg = FrontendConfig::default();
        let w = GammatoneWeights::new(&cfg);
        let bin_hz = 48_000.0 / 2048.0;
        for b in [5, 30, 60] {
            let k = (w.centers[b] / bin_hz).round() as usize;
            assert!(w.weight(b, k) > 0.9);
            assert!(w.weight(b, k) >= w.weight(b, k + 3));
        }
    }

    #[test]
    fn silence_sits_at_the_floor() {
        let buf = AudioBuffer::stereo(vec![0.0; 8192], vec![0.0; 8192]).unwrap();
        let s = gammatone_spectrogram(&buf, &FrontendConfig::default()).unwrap();
        assert_eq!(s.frames(), 7);
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_lands_in_nearest_band() {
        let x = tone(1000.0, 1.0, 0.5);
        let buf = AudioBuffer::stereo(x.clone(), x).unwrap();
        let s = gammatone_spectrogram(&buf, &FrontendConfig::default()).unwrap();
        let nearest = s
            .band_centers()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let t = s.frames() / 2;
        let argmax = (0..s.bands())
            .max_by(|&a, &b| s.value(2, a, t).total_cmp(&s.value(2, b, t)))
            .unwrap();
        assert_eq!(argmax, nearest);
        assert!((0..s.bands()).all(|b| s.value(3, b, t) == 0.0));
    }

    #[test]
    fn halving_amplitude_drops_six_db() {
        let cfg = FrontendConfig::default();
        let l = tone(440.0, 0.8, 0.3);
        let r: Vec<f64> = tone(3000.0, 0.5, 0.3)
            .iter()
            .zip(&l)
            .map(|(a, b)| a + 0.1 * b)
            .collect();
        let full = AudioBuffer::stereo(l, r).unwrap();
        let a = gammatone_spectrogram(&full, &cfg).unwrap();
        let b = gammatone_spectrogram(&full.scaled(0.5), &cfg).unwrap();
        let drop = 20.0 * 0.5f64.log10();
        let mut checked = 0;
        for (x, y) in a.data().iter().zip(b.data()) {
            if *y > 0.0 {
                assert!(((y - x) as f64 - drop).abs() < 1e-3);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn rejects_mono_and_short_input() {
        let cfg = FrontendConfig::default();
        let mono = AudioBuffer::mono(vec![0.0; 4096]).unwrap();
        assert!(matches!(
            gammatone_spectrogram(&mono, &cfg),
            Err(DspError::NeedsStereo { .. })
        ));
        let short = AudioBuffer::stereo(vec![0.0; 100], vec![0.0; 100]).unwrap();
        assert!(matches!(
            gammatone_spectrogram(&short, &cfg),
            Err(DspError::TooShort { .. })
        ));
    }

    #[test]
    fn config_validation_and_hash() {
        let cfg = FrontendConfig::default();
        assert_eq!(cfg.hash(), FrontendConfig::default().hash());
        let other = FrontendConfig {
            bands: 32,
            ..cfg.clone()
        };
        assert_ne!(cfg.hash(), other.hash());
        assert!(FrontendConfig {
            bands: 3,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(FrontendConfig {
            hop: 4096,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!((cfg.window_seconds() - 0.042_666).abs() < 1e-5);
    }
}
