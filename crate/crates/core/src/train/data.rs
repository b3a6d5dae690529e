use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::{DatasetManifest, HIDDEN_REFERENCE};
use super::{Result, TrainError};
use crate::dsp::{gammatone_spectrogram, load_wav, FrontendConfig, Segment, PLANES};
use crate::model::{NormStats, Variant};

/// Features of one (excerpt, system) pair: its complete 4-plane segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFeatures {
    pub excerpt_id: String,
    pub system_id: String,
    pub segments: Vec<Segment>,
}

/// Manifest plus per-item features, indexed for training.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub items: Vec<ItemFeatures>,
    /// Item index of every record.
    pub record_item: Vec<usize>,
    /// Hidden-reference item of each item's excerpt, if present.
    pub reference_of: Vec<Option<usize>>,
}

impl Dataset {
    /// Assembles a dataset from precomputed features keyed by
    /// (excerpt, system).
    pub fn from_features(
        manifest: DatasetManifest,
        mut features: BTreeMap<(String, String), Vec<Segment>>,
    ) -> Result<Self> {
        manifest.validate(false)?;
        let groups = manifest.items();
        let mut items = Vec::with_capacity(groups.len());
        let mut record_item = vec![0; manifest.records.len()];
        for (i, (key, recs)) in groups.iter().enumerate() {
            let segments = features
                .remove(key)
                .ok_or_else(|| TrainError::Manifest(format!("no features for {}/{}", key.0, key.1)))?;
            if segments.is_empty() {
                return Err(TrainError::Manifest(format!(
                    "{}/{}: no complete segment",
                    key.0, key.1
                )));
            }
            if segments.iter().any(|s| s.planes != PLANES || s.padded) {
                return Err(TrainError::Manifest(format!("{}/{}: bad segment", key.0, key.1)));
            }
            for &r in recs {
                record_item[r] = i;
            }
            items.push(ItemFeatures {
                excerpt_id: key.0.clone(),
                system_id: key.1.clone(),
                segments,
            });
        }
        let reference_of = items
            .iter()
            .map(|it| {
                items
                    .iter()
                    .position(|o| o.excerpt_id == it.excerpt_id && o.system_id == HIDDEN_REFERENCE)
            })
            .collect();
        Ok(Dataset {
            manifest,
            items,
            record_item,
            reference_of,
        })
    }

    /// Loads and featurizes every referenced file, `jobs` files at a time.
    /// Only complete segments of `frames` frames are kept.
    pub fn load(manifest: DatasetManifest, frontend: &FrontendConfig, frames: usize, jobs: usize) -> Result<Self> {
        manifest.validate(true)?;
        let keys: Vec<((String, String), String)> = manifest
            .items()
            .into_iter()
            .map(|(k, recs)| (k, manifest.records[recs[0]].audio_path.clone()))
            .collect();
        let work = |(key, path): &((String, String), String)| -> Result<((String, String), Vec<Segment>)> {
            let full = manifest.resolve(path);
            let buf = load_wav(&full)?.to_stereo();
            let spec = gammatone_spectrogram(&buf, frontend)?;
            let segs: Vec<Segment> = spec.segments(frames).into_iter().filter(|s| !s.padded).collect();
            if segs.is_empty() {
                return Err(TrainError::Manifest(format!(
                    "{path}: {} frames is shorter than one {frames}-frame segment",
                    spec.frames()
                )));
            }
            Ok((key.clone(), segs))
        };
        let results: Vec<Result<_>> = if jobs <= 1 {
            keys.iter().map(work).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| TrainError::Manifest(e.to_string()))?;
            pool.install(|| keys.par_iter().map(work).collect())
        };
        let features = results.into_iter().collect::<Result<BTreeMap<_, _>>>()?;
        Dataset::from_features(manifest, features)
    }

    /// Network input for segment `k` of `item`: the 4 degraded planes, or
    /// for the full-reference variant the reference planes followed by them.
    pub fn input(&self, item: usize, k: usize, variant: Variant) -> Result<Segment> {
        let deg = &self.items[item].segments[k];
        match variant {
            Variant::ReferenceFree => Ok(deg.clone()),
            Variant::FullReference => {
                let r = self.reference_of[item].ok_or_else(|| {
                    TrainError::Manifest(format!(
                        "excerpt {} has no {HIDDEN_REFERENCE}",
                        self.items[item].excerpt_id
                    ))
                })?;
                let refs = &self.items[r].segments;
                Ok(Segment::pair(&refs[k.min(refs.len() - 1)], deg))
            }
        }
    }

    /// Per-item record indices.
    pub fn item_records(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.items.len()];
        for (r, &i) in self.record_item.iter().enumerate() {
            out[i].push(r);
        }
        out
    }
}

/// Partitions records into `k` folds grouped by excerpt. Excerpts are
/// shuffled with `seed` and dealt round-robin, so fold sizes (in
/// excerpts) differ by at most one.
pub fn split_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut excerpts = manifest.excerpts();
    if k < 2 {
        return Err(TrainError::Config(format!("need at least 2 folds, got {k}")));
    }
    if excerpts.len() < k {
        return Err(TrainError::Config(format!(
            "{} excerpts cannot fill {k} folds",
            excerpts.len()
        )));
    }
    excerpts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: BTreeMap<&str, usize> = excerpts.iter().enumerate().map(|(i, e)| (e.as_str(), i % k)).collect();
    let mut folds = vec![Vec::new(); k];
    for (i, r) in manifest.records.iter().enumerate() {
        folds[fold_of[r.excerpt_id.as_str()]].push(i);
    }
    Ok(folds)
}

/// Per-plane, per-band mean and population standard deviation over all
/// frames of the given 4-plane segments, with the deviation floored.
pub fn compute_normalization<'a>(segments: impl IntoIterator<Item = &'a Segment>) -> Result<NormStats> {
    let segs: Vec<&Segment> = segments.into_iter().collect();
    let first = segs
        .first()
        .ok_or_else(|| TrainError::Config("no segments to normalize".into()))?;
    let bands = first.bands;
    if segs.iter().any(|s| s.bands != bands || s.planes % PLANES != 0) {
        return Err(TrainError::Config("segments disagree on shape".into()));
    }
    let k = PLANES * bands;
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    let rows = |s: &'a Segment| {
        (0..s.planes * s.bands).map(move |row| {
            let key = (row / s.bands % PLANES) * s.bands + row % s.bands;
            (key, &s.data[row * s.frames..(row + 1) * s.frames])
        })
    };
    for s in &segs {
        for (key, row) in rows(s) {
            sum[key] += row.iter().map(|&v| v as f64).sum::<f64>();
            count[key] += row.len();
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let mut sq = vec![0.0; k];
    for s in &segs {
        for (key, row) in rows(s) {
            sq[key] += row.iter().map(|&v| (v as f64 - mean[key]).powi(2)).sum::<f64>();
        }
    }
    let std = sq
        .iter()
        .zip(&count)
        .map(|(q, &c)| (q / c as f64).sqrt().max(NormStats::STD_FLOOR))
        .collect();
    Ok(NormStats {
        planes: PLANES,
        bands,
        mean,
        std,
    })
}
