//! Correlation metrics, MUSHRA aggregation, the MU metric and the
//! scaling and bandwidth reports.

use serde::Serialize;
use thiserror::Error;

use crate::dsp::{estimate_bandwidth, AudioBuffer, DspError};
use crate::model::{predict_file, Model, ModelError};
use crate::score::{t_quantile, ScoreDistribution};
use crate::train::HIDDEN_REFERENCE;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("no hidden_reference items to compute MU")]
    NoReference,
    #[error("no scores to aggregate")]
    Empty,
    #[error("need at least {need} files, got {got}")]
    TooFewFiles { got: usize, need: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooFewPoints(x.len()));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; ties share their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&ranks(x), &ranks(y))
}

/// Mean of listener scores with a t-based 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MushraAggregate {
    pub mean: f64,
    /// `None` for a single listener.
    pub ci: Option<(f64, f64)>,
    pub n: usize,
}

impl MushraAggregate {
    pub fn half_width(&self) -> Option<f64> {
        self.ci.map(|(lo, hi)| 0.5 * (hi - lo))
    }
}

/// `mean ± t_{0.975, n−1}·sd/√n` with the `n − 1` sample deviation.
pub fn aggregate_mushra(scores: &[f64]) -> Result<MushraAggregate> {
    let n = scores.len();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Ok(MushraAggregate { mean, ci: None, n });
    }
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = t_quantile(0.975, n - 1).expect("n >= 2 gives a valid quantile");
    let half = t * var.sqrt() / (n as f64).sqrt();
    Ok(MushraAggregate {
        mean,
        ci: Some((mean - half, mean + half)),
        n,
    })
}

/// Prediction and listening-test summary for one (excerpt, system) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemScore {
    pub excerpt_id: String,
    pub system_id: String,
    pub predicted: ScoreDistribution,
    pub subjective_mean: f64,
    pub subjective_ci: Option<(f64, f64)>,
    pub n_listeners: usize,
}

/// Mean predicted μ over hidden-reference items.
pub fn mu_metric(scores: &[SystemScore]) -> Result<f64> {
    let refs: Vec<f64> = scores
        .iter()
        .filter(|s| s.system_id == HIDDEN_REFERENCE)
        .map(|s| s.predicted.mu)
        .collect();
    if refs.is_empty() {
        return Err(EvalError::NoReference);
    }
    Ok(refs.iter().sum::<f64>() / refs.len() as f64)
}

/// Pooled correlations of predicted μ against subjective means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlations {
    pub n: usize,
    pub rp: Option<f64>,
    pub rs: Option<f64>,
}

pub fn correlations(scores: &[SystemScore]) -> Correlations {
    let p: Vec<f64> = scores.iter().map(|s| s.predicted.mu).collect();
    let s: Vec<f64> = scores.iter().map(|s| s.subjective_mean).collect();
    Correlations {
        n: scores.len(),
        rp: pearson(&p, &s).ok(),
        rs: spearman(&p, &s).ok(),
    }
}

/// Correlations computed separately within each excerpt, in order of
/// first appearance.
pub fn per_excerpt_correlations(scores: &[SystemScore]) -> Vec<(String, Correlations)> {
    let mut ids: Vec<&str> = Vec::new();
    for s in scores {
        if !ids.contains(&s.excerpt_id.as_str()) {
            ids.push(&s.excerpt_id);
        }
    }
    ids.into_iter()
        .map(|id| {
            let sub: Vec<SystemScore> = scores.iter().filter(|s| s.excerpt_id == id).cloned().collect();
            (id.to_string(), correlations(&sub))
        })
        .collect()
}

/// Formats with 6 significant digits and a '.' decimal separator.
pub fn fmt6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-4..15).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, x)
    } else {
        sci
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_else(|| "NaN".into())
}

pub fn system_scores_csv(scores: &[SystemScore]) -> String {
    let mut out = String::from("excerpt_id,system_id,mu,log_a,subjective_mean,ci_lo,ci_hi,n_listeners\n");
    for s in scores {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.excerpt_id,
            s.system_id,
            fmt6(s.predicted.mu),
            fmt6(s.predicted.log_a),
            fmt6(s.subjective_mean),
            fmt_opt(s.subjective_ci.map(|c| c.0)),
            fmt_opt(s.subjective_ci.map(|c| c.1)),
            s.n_listeners
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub level: usize,
    pub condition: String,
    pub mean_mu: f64,
    pub n: usize,
}

/// Mean prediction per condition, conditions ordered best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Spearman(level, mean μ); `None` when undefined.
    pub spearman: Option<f64>,
    /// Whether means are nonincreasing along the ladder; `None` for a
    /// single condition.
    pub nonincreasing: Option<bool>,
}

impl ScalingReport {
    pub fn from_predictions(conditions: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut rows = Vec::with_capacity(conditions.len());
        for (level, (name, mus)) in conditions.iter().enumerate() {
            if mus.is_empty() {
                return Err(EvalError::Empty);
            }
            rows.push(ScalingRow {
                level,
                condition: name.clone(),
                mean_mu: mus.iter().sum::<f64>() / mus.len() as f64,
                n: mus.len(),
            });
        }
        let levels: Vec<f64> = rows.iter().map(|r| r.level as f64).collect();
        let means: Vec<f64> = rows.iter().map(|r| r.mean_mu).collect();
        let nonincreasing = (rows.len() >= 2).then(|| means.windows(2).all(|w| w[1] <= w[0]));
        Ok(ScalingReport {
            spearman: spearman(&levels, &means).ok(),
            nonincreasing,
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,condition,mean_mu,n\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.level, r.condition, fmt6(r.mean_mu), r.n));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mono = match self.nonincreasing {
            Some(true) => "nonincreasing",
            Some(false) => "not_monotone",
            None => "undefined",
        };
        format!("spearman_level_mean={},monotonicity={mono}", fmt_opt(self.spearman))
    }
}

/// Predicted mean per condition over excerpts; `conditions` are ordered
/// by intended quality, best first.
pub fn scaling_report(model: &Model, conditions: &[(String, Vec<AudioBuffer>)]) -> Result<ScalingReport> {
    let mut preds = Vec::with_capacity(conditions.len());
    for (name, buffers) in conditions {
        let mus = buffers
            .iter()
            .map(|b| predict_file(model, b).map(|d| d.mu))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        preds.push((name.clone(), mus));
    }
    ScalingReport::from_predictions(&preds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub file: String,
    pub bandwidth_hz: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthScatter {
    pub rows: Vec<ScatterRow>,
    pub pearson: Option<f64>,
    /// Why the correlation is missing, if it is.
    pub flag: Option<String>,
}

impl BandwidthScatter {
    pub fn from_rows(rows: Vec<ScatterRow>) -> Result<Self> {
        if rows.len() < 3 {
            return Err(EvalError::TooFewFiles {
                got: rows.len(),
                need: 3,
            });
        }
        let bw: Vec<f64> = rows.iter().map(|r| r.bandwidth_hz).collect();
        let mu: Vec<f64> = rows.iter().map(|r| r.mu).collect();
        let (pearson, flag) = match pearson(&bw, &mu) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(BandwidthScatter { rows, pearson, flag })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("file,bandwidth_hz,mu\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.file, fmt6(r.bandwidth_hz), fmt6(r.mu)));
        }
        out
    }

    pub fn summary(&self) -> String {
        match &self.flag {
            None => format!("pearson_bandwidth_mu={}", fmt_opt(self.pearson)),
            Some(f) => format!("pearson_bandwidth_mu=NaN,flag={}", f.replace(' ', "_")),
        }
    }
}

pub fn bandwidth_scatter(model: &Model, files: &[(String, AudioBuffer)]) -> Result<BandwidthScatter> {
    if files.len() < 3 {
        return Err(EvalError::TooFewFiles {
            got: files.len(),
            need: 3,
        });
    }
    let rows = files
        .iter()
        .map(|(name, buf)| {
            Ok(ScatterRow {
                file: name.clone(),
                bandwidth_hz: estimate_bandwidth(buf)?,
                mu: predict_file(model, buf)?.mu,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    BandwidthScatter::from_rows(rows)
}
