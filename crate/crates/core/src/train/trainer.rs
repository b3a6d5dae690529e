use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{compute_normalization, split_folds, Dataset};
use super::{Result, TrainError};
use crate::augment::{cutmix, sample_beta, CutMixConfig};
use crate::dsp::Segment;
use crate::eval::{fmt6, pearson, spearman};
use crate::model::{aggregate_segments, Model};
use crate::score::ScoreDistribution;
use crate::tensor::AdamState;

pub const METRICS_HEADER: &str = "epoch,fold,train_nll,val_nll,val_rp,val_rs";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs_per_fold: usize,
    pub folds: usize,
    pub cutmix: CutMixConfig,
    pub swap_lr_augment: bool,
    /// Chance that a batch item has its left and right planes exchanged.
    pub swap_probability: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 8,
            epochs_per_fold: 10,
            folds: 5,
            cutmix: CutMixConfig::default(),
            swap_lr_augment: true,
            swap_probability: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if self.batch == 0 || self.epochs_per_fold == 0 {
            return bad("batch and epochs_per_fold must be >= 1");
        }
        if self.folds < 2 {
            return bad("folds must be >= 2");
        }
        if !(self.cutmix.alpha > 0.0) {
            return bad("cutmix alpha must be > 0");
        }
        if !(0.0..=1.0).contains(&self.cutmix.probability) || !(0.0..=1.0).contains(&self.swap_probability) {
            return bad("probabilities must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Record fed to a gradient step.
    Train,
    /// Record scored for validation metrics.
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    /// 1-based across the whole schedule.
    pub epoch: usize,
    pub fold: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub val_rp: Option<f64>,
    pub val_rs: Option<f64>,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt6).unwrap_or_else(|| "NaN".into());
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.fold,
            fmt6(self.train_nll),
            fmt6(self.val_nll),
            opt(self.val_rp),
            opt(self.val_rs)
        )
    }
}

/// Hooks into the training loop; every method defaults to doing nothing.
pub trait TrainObserver {
    fn record_access(&mut self, _fold: usize, _record: usize, _phase: Phase) {}
    /// Called after each optimizer step with the batch predictions, the
    /// (possibly mixed) targets and the loss that was minimized.
    fn batch(&mut self, _step: usize, _dists: &[ScoreDistribution], _targets: &[f64], _loss: f64) {}
    fn epoch(&mut self, _metrics: &EpochMetrics) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    /// Clean-pass NLL over all records before the first step.
    pub initial_nll: f64,
    pub steps: usize,
}

impl TrainReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for m in &self.metrics {
            out.push_str(&m.csv_row());
            out.push('\n');
        }
        out
    }
}

/// File-level prediction of every item, all segments averaged.
fn predict_items(model: &Model, data: &Dataset) -> Result<Vec<ScoreDistribution>> {
    let variant = model.config().variant;
    (0..data.items.len())
        .into_par_iter()
        .map(|i| {
            let dists = (0..data.items[i].segments.len())
                .map(|k| Ok(model.forward(&data.input(i, k, variant)?)?))
                .collect::<Result<Vec<_>>>()?;
            Ok(aggregate_segments(&dists)?)
        })
        .collect()
}

fn mean_nll(data: &Dataset, preds: &[ScoreDistribution], records: &[usize]) -> f64 {
    let total: f64 = records
        .iter()
        .map(|&r| preds[data.record_item[r]].nll(data.manifest.records[r].score))
        .sum();
    total / records.len() as f64
}

/// Correlations of per-item predicted μ against per-item mean labels over
/// the items touched by `records`.
fn item_correlations(data: &Dataset, preds: &[ScoreDistribution], records: &[usize]) -> (Option<f64>, Option<f64>) {
    let mut sums = vec![(0.0, 0usize); data.items.len()];
    for &r in records {
        let s = &mut sums[data.record_item[r]];
        s.0 += data.manifest.records[r].score;
        s.1 += 1;
    }
    let (mut p, mut y) = (Vec::new(), Vec::new());
    for (i, &(sum, n)) in sums.iter().enumerate() {
        if n > 0 {
            p.push(preds[i].mu);
            y.push(sum / n as f64);
        }
    }
    (pearson(&p, &y).ok(), spearman(&p, &y).ok())
}

/// Builds the augmented batch: one random complete segment per record,
/// optional L/R swap, then within-batch CutMix.
fn make_batch(
    model: &Model,
    data: &Dataset,
    records: &[usize],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Segment, f64)>> {
    let variant = model.config().variant;
    let mut items = Vec::with_capacity(records.len());
    for &r in records {
        let item = data.record_item[r];
        let k = rng.random_range(0..data.items[item].segments.len());
        let mut seg = data.input(item, k, variant)?;
        if config.swap_lr_augment && rng.random_bool(config.swap_probability) {
            seg = seg.swap_lr();
        }
        items.push((seg, data.manifest.records[r].score));
    }
    if !config.cutmix.enabled || items.len() < 2 {
        return Ok(items);
    }
    let mut out = Vec::with_capacity(items.len());
    for i in 0..items.len() {
        if rng.random_bool(config.cutmix.probability) {
            let mut j = rng.random_range(0..items.len() - 1);
            if j >= i {
                j += 1;
            }
            let lambda = sample_beta(config.cutmix.alpha, rng)?;
            let m = cutmix(&items[i].0, items[i].1, &items[j].0, items[j].1, lambda, rng)?;
            out.push((m.segment, m.label));
        } else {
            out.push(items[i].clone());
        }
    }
    Ok(out)
}

/// Fold-rotation training of a single model: for each fold in turn,
/// `epochs_per_fold` epochs on the remaining folds with that fold held out.
/// Normalization statistics are computed from the whole manifest unless the
/// model already carries them. On a non-finite loss or gradient the model
/// is left at its last good step and an error is returned.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    config.validate()?;
    if model.config().bands != data.items[0].segments[0].bands
        || model.config().frames != data.items[0].segments[0].frames
    {
        return Err(TrainError::Config(format!(
            "model expects {}x{} segments, dataset has {}x{}",
            model.config().bands,
            model.config().frames,
            data.items[0].segments[0].bands,
            data.items[0].segments[0].frames
        )));
    }
    if model.norm().is_none() {
        let norm = compute_normalization(data.items.iter().flat_map(|it| &it.segments))?;
        model.set_norm(norm);
    }
    let folds = split_folds(&data.manifest, config.folds, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::for_params(config.lr, model.params());
    let all: Vec<usize> = (0..data.manifest.records.len()).collect();
    let initial_nll = mean_nll(data, &predict_items(model, data)?, &all);

    let mut metrics = Vec::new();
    let mut step = 0;
    for (fold, val) in folds.iter().enumerate() {
        let train_set: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, recs)| recs.iter().copied())
            .collect();
        for _ in 0..config.epochs_per_fold {
            let mut order = train_set.clone();
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch) {
                for &r in chunk {
                    observer.record_access(fold, r, Phase::Train);
                }
                let batch = make_batch(model, data, chunk, config, &mut rng)?;
                let results = batch
                    .par_iter()
                    .map(|(seg, y)| Ok(model.loss_and_grads(model.input(seg)?, *y)?))
                    .collect::<Result<Vec<_>>>()?;
                let n = results.len() as f64;
                let loss = results.iter().map(|r| r.0).sum::<f64>() / n;
                let mut grads: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
                for (_, _, g) in &results {
                    for (acc, gi) in grads.iter_mut().zip(g) {
                        acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
                    }
                }
                grads.iter_mut().flatten().for_each(|v| *v /= n);
                if !loss.is_finite() || grads.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFinite {
                        fold,
                        epoch: metrics.len() + 1,
                        step,
                    });
                }
                model.apply_gradients(&mut grads, &mut adam)?;
                step += 1;
                let dists: Vec<ScoreDistribution> = results.iter().map(|r| r.1).collect();
                let targets: Vec<f64> = batch.iter().map(|b| b.1).collect();
                observer.batch(step, &dists, &targets, loss);
            }
            for &r in val {
                observer.record_access(fold, r, Phase::Validate);
            }
            let preds = predict_items(model, data)?;
            let (val_rp, val_rs) = item_correlations(data, &preds, val);
            let m = EpochMetrics {
                epoch: metrics.len() + 1,
                fold,
                train_nll: mean_nll(data, &preds, &train_set),
                val_nll: mean_nll(data, &preds, val),
                val_rp,
                val_rs,
            };
            observer.epoch(&m);
            metrics.push(m);
        }
    }

    let mut meta = model.metadata().clone();
    if !meta.is_object() {
        meta = serde_json::json!({});
    }
    meta["training"] = serde_json::json!({
        "config": config,
        "schedule": "fold_rotation",
        "steps": step,
        "records": data.manifest.records.len(),
        "fold_excerpts": folds.iter().map(|f| {
            let mut e: Vec<&str> = f.iter().map(|&r| data.manifest.records[r].excerpt_id.as_str()).collect();
            e.dedup();
            e.sort();
            e.dedup();
            e
        }).collect::<Vec<_>>(),
    });
    model.set_metadata(meta);
    Ok(TrainReport {
        metrics,
        initial_nll,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::model::{ModelConfig, NormStats, Variant};
    use crate::score::logistic_nll;
    use crate::train::{DatasetManifest, ListeningRecord, HIDDEN_REFERENCE};

    /// Tiny-config dataset: `excerpts` × systems, 2 listeners each, items
    /// whose spectrogram level tracks their score.
    fn toy(excerpts: usize, segments: usize) -> Dataset {
        let cfg = ModelConfig::tiny(Variant::ReferenceFree);
        let systems = [(HIDDEN_REFERENCE, 95.0), ("codec_a", 60.0), ("codec_b", 25.0)];
        let mut records = Vec::new();
        let mut features = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for e in 0..excerpts {
            let ex = format!("e{e:02}");
            for (s, q) in systems {
                for l in 0..2 {
                    records.push(ListeningRecord {
                        excerpt_id: ex.clone(),
                        system_id: s.into(),
                        listener_id: format!("L{l}"),
                        score: (q + if l == 0 { -3.0 } else { 3.0 }) as f64,
                        audio_path: format!("{ex}_{s}.wav"),
                    });
                }
                let segs = (0..segments)
                    .map(|_| {
                        let n = 4 * cfg.bands * cfg.frames;
                        let data = (0..n).map(|_| (q / 10.0) as f32 + rng.random_range(0.0..1.0)).collect();
                        Segment::new(4, cfg.bands, cfg.frames, data)
                    })
                    .collect();
                features.insert((ex.clone(), s.to_string()), segs);
            }
        }
        Dataset::from_features(DatasetManifest::new(records, "."), features).unwrap()
    }

    fn tiny_model(seed: u64) -> Model {
        Model::new(ModelConfig::tiny(Variant::ReferenceFree), seed).unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: 3e-3,
            batch: 4,
            epochs_per_fold: epochs,
            folds: 2,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            folds: 1,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn overfit_probe_reduces_nll() {
        // 4 excerpts × 3 systems × 2 listeners = 24 records.
        let data = toy(4, 1);
        let mut m = tiny_model(1);
        let mut cfg = quick(60);
        cfg.cutmix.enabled = false;
        let report = train(&mut m, &data, &cfg, &mut ()).unwrap();
        assert!(report.steps >= 200, "{}", report.steps);
        let last = report.metrics.last().unwrap();
        assert!(
            last.train_nll < report.initial_nll,
            "{} vs {}",
            last.train_nll,
            report.initial_nll
        );
    }

    #[test]
    fn zero_lr_is_a_pure_evaluation() {
        let data = toy(4, 2);
        let mut m = tiny_model(2);
        m.set_norm(NormStats::identity(4, 8));
        let before = m.params().to_vec();
        let mut cfg = quick(2);
        cfg.lr = 0.0;
        cfg.cutmix.enabled = false;
        let report = train(&mut m, &data, &cfg, &mut ()).unwrap();
        assert_eq!(m.params(), &before[..]);
        let first = &report.metrics[0];
        for r in &report.metrics {
            assert_eq!(
                (r.train_nll + r.val_nll).to_bits(),
                (first.train_nll + first.val_nll).to_bits()
            );
        }
        assert_eq!(m.norm().unwrap(), &NormStats::identity(4, 8));
    }

    #[test]
    fn identical_seeds_give_identical_logs_and_weights() {
        let data = toy(4, 2);
        let run = || {
            let mut m = tiny_model(3);
            let r = train(&mut m, &data, &quick(2), &mut ()).unwrap();
            (r.metrics_csv(), m.to_bytes())
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.0.starts_with(METRICS_HEADER));
        assert_eq!(a.0.lines().count(), 1 + 2 * 2);
    }

    struct Log {
        access: Vec<(usize, usize, Phase)>,
        batches: Vec<(Vec<ScoreDistribution>, Vec<f64>, f64)>,
    }

    impl TrainObserver for Log {
        fn record_access(&mut self, fold: usize, record: usize, phase: Phase) {
            self.access.push((fold, record, phase));
        }
        fn batch(&mut self, _step: usize, dists: &[ScoreDistribution], targets: &[f64], loss: f64) {
            self.batches.push((dists.to_vec(), targets.to_vec(), loss));
        }
    }

    #[test]
    fn validation_fold_never_feeds_gradients_and_loss_matches_oracle() {
        let data = toy(6, 2);
        let cfg = TrainConfig { folds: 3, ..quick(1) };
        let folds = split_folds(&data.manifest, 3, cfg.seed).unwrap();
        let mut log = Log {
            access: Vec::new(),
            batches: Vec::new(),
        };
        train(&mut tiny_model(4), &data, &cfg, &mut log).unwrap();
        assert!(log.access.iter().any(|a| a.2 == Phase::Validate));
        for &(fold, r, phase) in &log.access {
            assert_eq!(folds[fold].contains(&r), phase == Phase::Validate);
        }
        for (dists, targets, loss) in &log.batches {
            let oracle = dists
                .iter()
                .zip(targets)
                .map(|(d, &t)| logistic_nll(d.mu, d.log_a, t))
                .sum::<f64>()
                / dists.len() as f64;
            assert!((oracle - loss).abs() <= 1e-9, "{oracle} vs {loss}");
        }
    }

    #[test]
    fn metadata_records_schedule() {
        let data = toy(4, 1);
        let mut m = tiny_model(5);
        train(&mut m, &data, &quick(1), &mut ()).unwrap();
        let t = &m.metadata()["training"];
        assert_eq!(t["config"]["seed"], 5);
        assert_eq!(t["config"]["cutmix"]["probability"], 0.5);
        assert_eq!(t["schedule"], "fold_rotation");
    }

    #[test]
    fn split_folds_partitions_by_excerpt() {
        let data = toy(7, 1);
        let folds = split_folds(&data.manifest, 3, 9).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..data.manifest.records.len()).collect::<Vec<_>>());
        let ex = |f: &Vec<usize>| {
            let mut e: Vec<&str> = f
                .iter()
                .map(|&r| data.manifest.records[r].excerpt_id.as_str())
                .collect();
            e.sort();
            e.dedup();
            e
        };
        let sizes: Vec<usize> = folds.iter().map(|f| ex(f).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(ex(&folds[i]).iter().all(|e| !ex(&folds[j]).contains(e)));
            }
        }
        assert_eq!(folds, split_folds(&data.manifest, 3, 9).unwrap());
        assert!(split_folds(&data.manifest, 8, 9).is_err());
        assert!(split_folds(&data.manifest, 1, 9).is_err());
    }

    #[test]
    fn normalization_whitens_and_floors() {
        let data = toy(3, 2);
        let segs: Vec<&Segment> = data.items.iter().flat_map(|i| &i.segments).collect();
        let norm = compute_normalization(segs.iter().copied()).unwrap();
        let mut rev = segs.clone();
        rev.reverse();
        let back = compute_normalization(rev).unwrap();
        for (a, b) in norm.mean.iter().zip(&back.mean) {
            assert!((a - b).abs() < 1e-9);
        }
        let xs: Vec<_> = segs.iter().map(|s| norm.apply(s).unwrap()).collect();
        let (bands, frames) = (8, 16);
        for p in 0..4 {
            for b in 0..bands {
                let vals: Vec<f64> = xs
                    .iter()
                    .flat_map(|x| x.data()[(p * bands + b) * frames..(p * bands + b + 1) * frames].to_vec())
                    .collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                assert!(mean.abs() <= 1e-6 && (std - 1.0).abs() <= 1e-3, "{mean} {std}");
            }
        }
        let flat = Segment::new(4, 2, 3, vec![5.0; 24]);
        let norm = compute_normalization([&flat]).unwrap();
        assert!(norm.std.iter().all(|&s| s == NormStats::STD_FLOOR));
        assert!(norm.apply(&flat).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
