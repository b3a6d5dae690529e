//! Synthetic listening-test corpora: bundled source material, a parametric
//! band-limiting "codec" ladder, and a logistic listener panel.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{lowpass, write_wav, AudioBuffer, DspError, SAMPLE_RATE};
use crate::score::ScoreDistribution;
use crate::train::{DatasetManifest, ListeningRecord, TrainError, ANCHOR_3K5, ANCHOR_7K, HIDDEN_REFERENCE};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid ladder: {0}")]
    Ladder(String),
    #[error("unknown condition {0}")]
    UnknownCondition(String),
    #[error("need at least 2 source excerpts, got {0}")]
    TooFewExcerpts(usize),
    #[error("{path}: {source}")]
    File { path: String, source: DspError },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatagenError>;

/// One rung of the degradation ladder. `noise_snr` is infinite for no noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub level: usize,
    pub cutoff: f64,
    pub noise_snr: f64,
    pub label: String,
}

pub fn default_ladder() -> Vec<DegradationSpec> {
    [
        (23_000.0, f64::INFINITY),
        (14_000.0, 45.0),
        (10_000.0, 35.0),
        (7_000.0, 28.0),
        (5_000.0, 22.0),
    ]
    .iter()
    .enumerate()
    .map(|(level, &(cutoff, noise_snr))| DegradationSpec {
        level,
        cutoff,
        noise_snr,
        label: format!("codec_{level}"),
    })
    .collect()
}

/// True qualities of the default ladder, by level.
pub const LADDER_QUALITY: [f64; 5] = [100.0, 85.0, 65.0, 45.0, 30.0];
pub const ANCHOR_7K_QUALITY: f64 = 40.0;
pub const ANCHOR_3K5_QUALITY: f64 = 20.0;

/// Checks that cutoff and SNR never increase along the ladder.
pub fn validate_ladder(ladder: &[DegradationSpec]) -> Result<()> {
    for w in ladder.windows(2) {
        if w[1].level <= w[0].level {
            return Err(DatagenError::Ladder("levels must increase".into()));
        }
        if w[1].cutoff > w[0].cutoff || w[1].noise_snr > w[0].noise_snr {
            return Err(DatagenError::Ladder(format!(
                "{} is milder than {}",
                w[1].label, w[0].label
            )));
        }
    }
    for s in ladder {
        if s.label.is_empty() || s.noise_snr.is_nan() || !(s.cutoff > 0.0) {
            return Err(DatagenError::Ladder(format!("bad rung {s:?}")));
        }
    }
    Ok(())
}

/// Applies one ladder rung. Level 0 returns the input unchanged; otherwise
/// white noise at `noise_snr` below each channel's power is added and the
/// result is band-limited at `cutoff`, so the noise shares the band limit.
pub fn synth_codec(buffer: &AudioBuffer, spec: &DegradationSpec, seed: u64) -> Result<AudioBuffer> {
    if spec.level == 0 {
        return Ok(buffer.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = if spec.noise_snr.is_finite() {
        buffer.map_channels(|x| {
            let power = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
            let sigma = (power / 10f64.powf(spec.noise_snr / 10.0)).sqrt();
            x.iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
    } else {
        buffer.clone()
    };
    if spec.cutoff >= SAMPLE_RATE as f64 / 2.0 {
        return Ok(noisy);
    }
    Ok(lowpass(&noisy, spec.cutoff)?)
}

/// MUSHRA low-pass anchor.
pub fn anchor(buffer: &AudioBuffer, cutoff: f64) -> Result<AudioBuffer> {
    Ok(lowpass(buffer, cutoff)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListenerModel {
    pub true_quality: BTreeMap<String, f64>,
    pub spread_a: BTreeMap<String, f64>,
    pub n_listeners: usize,
}

impl ListenerModel {
    /// Panel for the hidden reference, both anchors and the given ladder
    /// rungs (qualities indexed by level from the default table).
    pub fn for_ladder(ladder: &[DegradationSpec], n_listeners: usize) -> Self {
        let mut q = BTreeMap::new();
        let mut a = BTreeMap::new();
        q.insert(HIDDEN_REFERENCE.to_string(), 100.0);
        a.insert(HIDDEN_REFERENCE.to_string(), 3.0);
        q.insert(ANCHOR_7K.to_string(), ANCHOR_7K_QUALITY);
        q.insert(ANCHOR_3K5.to_string(), ANCHOR_3K5_QUALITY);
        for s in ladder {
            let quality = LADDER_QUALITY[s.level.min(LADDER_QUALITY.len() - 1)];
            q.insert(s.label.clone(), quality);
        }
        for k in q.keys() {
            a.entry(k.clone()).or_insert(4.0);
        }
        ListenerModel {
            true_quality: q,
            spread_a: a,
            n_listeners,
        }
    }
}

/// `n_listeners` logistic draws around the condition's true quality,
/// clipped to [0, 100].
pub fn synth_listener_scores<R: RngCore + ?Sized>(
    model: &ListenerModel,
    condition: &str,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let q = *model
        .true_quality
        .get(condition)
        .ok_or_else(|| DatagenError::UnknownCondition(condition.into()))?;
    let a = model.spread_a.get(condition).copied().unwrap_or(0.0);
    if a <= 0.0 || model.n_listeners == 0 {
        return Ok(vec![q.clamp(0.0, 100.0); model.n_listeners]);
    }
    let draws = ScoreDistribution::from_scale(q, a)
        .sample(model.n_listeners, rng)
        .expect("n_listeners > 0");
    Ok(draws.into_iter().map(|s| s.clamp(0.0, 100.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    TiltedNoise,
    ToneComplex,
    ModulatedNoise,
    Bursts,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [
        SourceKind::TiltedNoise,
        SourceKind::ToneComplex,
        SourceKind::ModulatedNoise,
        SourceKind::Bursts,
    ];
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn mono_source(kind: SourceKind, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    match kind {
        SourceKind::TiltedNoise => {
            let c = rng.random_range(0.0..0.9);
            let mut y = 0.0;
            (0..n)
                .map(|_| {
                    y = gauss(rng) + c * y;
                    y
                })
                .collect()
        }
        SourceKind::ToneComplex => {
            let f0 = rng.random_range(80.0..400.0);
            let roll: f64 = rng.random_range(0.5..1.2);
            let vib = rng.random_range(0.0..0.01);
            let harmonics: Vec<(f64, f64, f64)> = (1..)
                .map(|k| k as f64)
                .take_while(|k| k * f0 * (1.0 + vib) < 21_000.0)
                .map(|k| (k, k.powf(-roll), rng.random_range(0.0..2.0 * PI)))
                .collect();
            let mut out: Vec<f64> = (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let f = f0 * (1.0 + vib * (2.0 * PI * 5.0 * t).sin());
                    harmonics
                        .iter()
                        .map(|&(k, amp, ph)| amp * (2.0 * PI * k * f * t + ph).sin())
                        .sum()
                })
                .collect();
            let floor = 0.01;
            out.iter_mut().for_each(|v| *v += floor * gauss(rng));
            out
        }
        SourceKind::ModulatedNoise => {
            let fm = rng.random_range(2.0..12.0);
            let depth = rng.random_range(0.5..0.95);
            (0..n)
                .map(|i| (1.0 + depth * (2.0 * PI * fm * i as f64 / sr).sin()) * gauss(rng))
                .collect()
        }
        SourceKind::Bursts => {
            let mut env = vec![0.0; n];
            let mut t = 0usize;
            while t < n {
                let decay = rng.random_range(0.02..0.15) * sr;
                let amp = rng.random_range(0.3..1.0);
                for (j, e) in env[t..].iter_mut().enumerate() {
                    *e += amp * (-(j as f64) / decay).exp();
                }
                t += (rng.random_range(0.15..0.5) * sr) as usize;
            }
            env.iter().map(|e| (e + 0.02) * gauss(rng)).collect()
        }
    }
}

/// Stereo excerpt of `samples` samples at 48 kHz and RMS 0.1: a mono
/// source panned by a random gain plus a faint decorrelated floor.
pub fn synth_source(kind: SourceKind, samples: usize, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let main = mono_source(kind, samples, &mut rng);
    let pan = rng.random_range(0.6..1.0);
    let (gl, gr) = if rng.random_bool(0.5) { (1.0, pan) } else { (pan, 1.0) };
    let rms = (main.iter().map(|v| v * v).sum::<f64>() / samples.max(1) as f64)
        .sqrt()
        .max(1e-12);
    let mut ch = |g: f64| -> Vec<f64> { main.iter().map(|v| g * v / rms + 0.03 * gauss(&mut rng)).collect() };
    let (l, r) = (ch(gl), ch(gr));
    let total = ((l.iter().chain(&r).map(|v| v * v).sum::<f64>()) / (2 * samples.max(1)) as f64).sqrt();
    let k = 0.1 / total.max(1e-12);
    AudioBuffer::stereo(l.iter().map(|v| v * k).collect(), r.iter().map(|v| v * k).collect()).expect("equal lengths")
}

/// SplitMix64 step; derives independent per-item seeds from one seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` excerpts cycling through the source kinds, named `{prefix}NNN`.
pub fn synth_sources(prefix: &str, count: usize, samples: usize, seed: u64) -> Vec<(String, AudioBuffer)> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let kind = SourceKind::ALL[i % SourceKind::ALL.len()];
            (
                format!("{prefix}{i:03}"),
                synth_source(kind, samples, derive_seed(seed, i as u64)),
            )
        })
        .collect()
}

/// Renders every condition of every excerpt to `out_dir/audio` and writes
/// `out_dir/manifest.csv`. Conditions per excerpt: hidden reference, the
/// 3.5 kHz and 7 kHz anchors, then each ladder rung.
pub fn generate_corpus(
    sources: &[(String, AudioBuffer)],
    ladder: &[DegradationSpec],
    listeners: &ListenerModel,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if sources.len() < 2 {
        return Err(DatagenError::TooFewExcerpts(sources.len()));
    }
    validate_ladder(ladder)?;
    let audio = out_dir.join("audio");
    std::fs::create_dir_all(&audio)?;
    let per_excerpt = sources
        .par_iter()
        .enumerate()
        .map(|(i, (id, buf))| -> Result<Vec<ListeningRecord>> {
            let s = derive_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut conditions = vec![
                (HIDDEN_REFERENCE.to_string(), buf.clone()),
                (ANCHOR_3K5.to_string(), anchor(buf, 3_500.0)?),
                (ANCHOR_7K.to_string(), anchor(buf, 7_000.0)?),
            ];
            for (j, spec) in ladder.iter().enumerate() {
                conditions.push((spec.label.clone(), synth_codec(buf, spec, derive_seed(s, j as u64))?));
            }
            let mut records = Vec::new();
            for (system, out) in conditions {
                let rel = format!("audio/{id}_{system}.wav");
                let path = out_dir.join(&rel);
                write_wav(&path, &out).map_err(|source| DatagenError::File {
                    path: path.display().to_string(),
                    source,
                })?;
                let scores = synth_listener_scores(listeners, &system, &mut rng)?;
                for (l, score) in scores.into_iter().enumerate() {
                    records.push(ListeningRecord {
                        excerpt_id: id.clone(),
                        system_id: system.clone(),
                        listener_id: format!("L{:02}", l + 1),
                        score,
                        audio_path: rel.clone(),
                    });
                }
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(per_excerpt.into_iter().flatten().collect(), out_dir);
    manifest.validate(true)?;
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{estimate_bandwidth, load_wav};

    const SECOND: usize = SAMPLE_RATE as usize;

    #[test]
    fn ladder_defaults_are_monotone() {
        let l = default_ladder();
        validate_ladder(&l).unwrap();
        assert_eq!(l.len(), 5);
        assert_eq!(l[0].noise_snr, f64::INFINITY);
        let mut bad = l.clone();
        bad.swap(1, 2);
        assert!(validate_ladder(&bad).is_err());
    }

    #[test]
    fn level_zero_is_bit_exact() {
        let src = synth_source(SourceKind::ToneComplex, SECOND, 1);
        let out = synth_codec(&src, &default_ladder()[0], 9).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn cutoff_sets_measured_bandwidth() {
        let src = synth_source(SourceKind::TiltedNoise, 2 * SECOND, 2);
        let spec = DegradationSpec {
            level: 1,
            cutoff: 3_500.0,
            noise_snr: 30.0,
            label: "x".into(),
        };
        let bw = estimate_bandwidth(&synth_codec(&src, &spec, 3).unwrap()).unwrap();
        assert!((3_300.0..=3_900.0).contains(&bw), "{bw}");
    }

    #[test]
    fn bandwidth_never_grows_along_the_ladder() {
        for kind in SourceKind::ALL {
            let src = synth_source(kind, 2 * SECOND, 4);
            let bws: Vec<f64> = default_ladder()
                .iter()
                .map(|s| estimate_bandwidth(&synth_codec(&src, s, 5).unwrap()).unwrap())
                .collect();
            assert!(bws.windows(2).all(|w| w[1] <= w[0]), "{kind:?}: {bws:?}");
            assert!(bws[0] > 20_000.0, "{kind:?}: {bws:?}");
        }
    }

    #[test]
    fn listener_scores() {
        let mut m = ListenerModel::for_ladder(&default_ladder(), 10_000);
        m.true_quality.insert("probe".into(), 60.0);
        m.spread_a.insert("probe".into(), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = synth_listener_scores(&m, "probe", &mut rng).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 60.0).abs() < 0.5, "{mean}");
        let r = synth_listener_scores(&m, HIDDEN_REFERENCE, &mut rng).unwrap();
        assert!(r.iter().all(|v| (0.0..=100.0).contains(v)));
        m.spread_a.insert("probe".into(), 0.0);
        assert!(synth_listener_scores(&m, "probe", &mut rng)
            .unwrap()
            .iter()
            .all(|&v| v == 60.0));
        assert!(matches!(
            synth_listener_scores(&m, "nope", &mut rng),
            Err(DatagenError::UnknownCondition(_))
        ));
    }

    #[test]
    fn corpus_structure_and_determinism() {
        let ladder = default_ladder()[1..4].to_vec();
        let listeners = ListenerModel::for_ladder(&ladder, 10);
        let sources = synth_sources("ex", 5, SECOND / 2, 7);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let m = generate_corpus(&sources, &ladder, &listeners, 8, dirs[0].path()).unwrap();
        generate_corpus(&sources, &ladder, &listeners, 8, dirs[1].path()).unwrap();
        assert_eq!(m.records.len(), 5 * (1 + 2 + 3) * 10);
        let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("manifest.csv")).unwrap();
        assert_eq!(read(&dirs[0]), read(&dirs[1]));
        let wav = load_wav(m.resolve(&m.records[0].audio_path)).unwrap();
        assert_eq!(wav.len(), SECOND / 2);

        let other = tempfile::tempdir().unwrap();
        let m2 = generate_corpus(&sources, &ladder, &listeners, 9, other.path()).unwrap();
        assert_ne!(m2.records, m.records);
        let keys = |m: &DatasetManifest| m.items().into_keys().collect::<Vec<_>>();
        assert_eq!(keys(&m), keys(&m2));

        let order = [HIDDEN_REFERENCE, "codec_1", "codec_2", "codec_3"];
        for (id, _) in &sources {
            let means: Vec<f64> = order
                .iter()
                .map(|sys| {
                    let v: Vec<f64> = m
                        .records
                        .iter()
                        .filter(|r| &r.excerpt_id == id && r.system_id == *sys)
                        .map(|r| r.score)
                        .collect();
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect();
            assert!(means.windows(2).all(|w| w[1] <= w[0] + 2.0), "{id}: {means:?}");
        }
        assert!(matches!(
            generate_corpus(&sources[..1], &ladder, &listeners, 8, other.path()),
            Err(DatagenError::TooFewExcerpts(1))
        ));
    }
}
