use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{input_facing, param_specs, ModelConfig, Precision, Stage, Variant};
use super::{ModelError, Result};
use crate::dsp::{gammatone_spectrogram, AudioBuffer, FrontendConfig, Segment};
use crate::score::ScoreDistribution;
use crate::tensor::{adam_step, AdamState, Conv2dSpec, Graph, PoolSpec, Tensor, Var};

/// Per-plane, per-band input statistics. FR inputs reuse the four
/// planes' statistics for both the reference and degraded groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub planes: usize,
    pub bands: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub const STD_FLOOR: f64 = 1e-6;

    pub fn identity(planes: usize, bands: usize) -> Self {
        NormStats {
            planes,
            bands,
            mean: vec![0.0; planes * bands],
            std: vec![1.0; planes * bands],
        }
    }

    /// Normalized `planes × bands × frames` tensor.
    pub fn apply(&self, seg: &Segment) -> Result<Tensor> {
        if seg.bands != self.bands || seg.planes % self.planes != 0 {
            return Err(ModelError::Shape(format!(
                "segment {}x{} planes/bands does not fit normalization {}x{}",
                seg.planes, seg.bands, self.planes, self.bands
            )));
        }
        let t = seg.frames;
        let mut data = Vec::with_capacity(seg.data.len());
        for p in 0..seg.planes {
            for b in 0..seg.bands {
                let k = (p % self.planes) * self.bands + b;
                let (m, s) = (self.mean[k], self.std[k]);
                let row = &seg.data[(p * seg.bands + b) * t..(p * seg.bands + b + 1) * t];
                data.extend(row.iter().map(|&v| (v as f64 - m) / s));
            }
        }
        Ok(Tensor::from_vec(vec![seg.planes, seg.bands, t], data)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    #[serde(rename = "def")]
    Def,
    #[serde(rename = "deg")]
    Deg,
    #[serde(rename = "degF")]
    DegF,
    #[serde(rename = "all")]
    All,
}

impl std::str::FromStr for InitMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "def" => Ok(InitMode::Def),
            "deg" => Ok(InitMode::Deg),
            "degF" => Ok(InitMode::DegF),
            "all" => Ok(InitMode::All),
            _ => Err(ModelError::Config(format!(
                "unknown init mode {s:?} (def, deg, degF, all)"
            ))),
        }
    }
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMode::Def => "def",
            InitMode::Deg => "deg",
            InitMode::DegF => "degF",
            InitMode::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(super) config: ModelConfig,
    pub(super) frontend: FrontendConfig,
    pub(super) names: Vec<String>,
    pub(super) params: Vec<Tensor>,
    pub(super) frozen: Vec<bool>,
    pub(super) norm: Option<NormStats>,
    pub(super) metadata: serde_json::Value,
}

fn round_to(precision: Precision, t: &mut Tensor) {
    if precision == Precision::F32 {
        for v in t.data_mut() {
            *v = *v as f32 as f64;
        }
    }
}

impl Model {
    /// Fresh parameters drawn from `U(±1/√fan_in)` with a seeded generator.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = param_specs(&config);
        let mut params = Vec::with_capacity(specs.len());
        let mut fan_in = 1usize;
        for (name, shape) in &specs {
            if name.ends_with(".weight") {
                fan_in = shape[1..].iter().product();
            }
            let k = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-k..k)).collect();
            let mut t = Tensor::from_vec(shape.clone(), data)?;
            round_to(config.precision, &mut t);
            params.push(t);
        }
        Ok(Model {
            names: specs.into_iter().map(|(n, _)| n).collect(),
            frozen: vec![false; params.len()],
            params,
            config,
            frontend: FrontendConfig::default(),
            norm: None,
            metadata: serde_json::Value::Object(Default::default()),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn frontend(&self) -> &FrontendConfig {
        &self.frontend
    }

    pub fn set_frontend(&mut self, frontend: FrontendConfig) {
        self.frontend = frontend;
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.params[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn set_frozen(&mut self, name: &str, flag: bool) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| ModelError::Config(format!("no parameter named {name}")))?;
        self.frozen[i] = flag;
        Ok(())
    }

    pub fn norm(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    pub fn set_norm(&mut self, norm: NormStats) {
        self.norm = Some(norm);
    }

    pub fn metadata(&self) -> &serde_json::Value {
        &self.metadata
    }

    pub fn set_metadata(&mut self, metadata: serde_json::Value) {
        self.metadata = metadata;
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_segment(&self, seg: &Segment) -> Result<()> {
        let c = &self.config;
        if seg.planes != c.input_planes() || seg.bands != c.bands || seg.frames != c.frames {
            return Err(ModelError::Shape(format!(
                "segment is {}x{}x{}, model expects {}x{}x{}",
                seg.planes,
                seg.bands,
                seg.frames,
                c.input_planes(),
                c.bands,
                c.frames
            )));
        }
        Ok(())
    }

    /// Normalized network input for one segment.
    pub fn input(&self, seg: &Segment) -> Result<Tensor> {
        self.check_segment(seg)?;
        let norm = self.norm.as_ref().ok_or(ModelError::MissingNorm)?;
        norm.apply(seg)
    }

    /// Records the network on `g`; returns the `(μ, log a)` node.
    pub fn forward_graph(&self, g: &mut Graph, x: Var, params: &[Var]) -> crate::tensor::Result<Var> {
        let c = &self.config;
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("parameter list matches the config");
        let mut h = g.avg_pool(x, PoolSpec::downsample(c.stem_pool))?;
        for (i, block) in c.blocks.iter().enumerate() {
            let mut outs = Vec::with_capacity(block.branches.len());
            for branch in &block.branches {
                let mut y = h;
                for stage in branch {
                    y = match stage {
                        Stage::Conv { kernel, .. } => {
                            let (w, b) = (next(), next());
                            let z = g.conv2d(y, w, b, Conv2dSpec::same(*kernel))?;
                            g.relu(z)
                        }
                        Stage::Pool { kernel } => g.avg_pool(y, PoolSpec::same(*kernel))?,
                        Stage::Split { convs } => {
                            let mut parts = Vec::with_capacity(convs.len());
                            for (kernel, _) in convs {
                                let (w, b) = (next(), next());
                                let z = g.conv2d(y, w, b, Conv2dSpec::same(*kernel))?;
                                parts.push(g.relu(z));
                            }
                            g.concat_channels(&parts)?
                        }
                    };
                }
                outs.push(y);
            }
            h = g.concat_channels(&outs)?;
            if i < 3 {
                let s = g.global_avg_pool(h)?;
                let (w0, b0, w1, b1) = (next(), next(), next(), next());
                let s = g.linear(s, w0, b0)?;
                let s = g.relu(s);
                let s = g.linear(s, w1, b1)?;
                let s = g.sigmoid(s);
                h = g.channel_scale(h, s)?;
                h = g.avg_pool(h, PoolSpec::downsample(c.block_pool))?;
            }
        }
        let mut v = g.global_avg_pool(h)?;
        for l in 0..=c.fc_hidden.len() {
            let (w, b) = (next(), next());
            v = g.linear(v, w, b)?;
            if l < c.fc_hidden.len() {
                v = g.relu(v);
            }
        }
        g.score_head(v)
    }

    fn bind(&self, g: &mut Graph, with_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let mut t = p.clone();
                t.set_requires_grad(with_grad);
                g.leaf(t)
            })
            .collect()
    }

    /// Forward pass on an already normalized input tensor.
    pub fn forward_input(&self, x: Tensor) -> Result<ScoreDistribution> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.leaf(x);
        let d = self.forward_graph(&mut g, x, &params)?;
        let v = g.value(d).data();
        Ok(ScoreDistribution::new(v[0], v[1]))
    }

    pub fn forward(&self, seg: &Segment) -> Result<ScoreDistribution> {
        self.forward_input(self.input(seg)?)
    }

    /// Loss `nll(target)` on one normalized input, its prediction, and the
    /// gradient of the loss for every parameter.
    pub fn loss_and_grads(&self, x: Tensor, target: f64) -> Result<(f64, ScoreDistribution, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, true);
        let x = g.leaf(x);
        let d = self.forward_graph(&mut g, x, &params)?;
        let dv = g.value(d).data();
        let dist = ScoreDistribution::new(dv[0], dv[1]);
        let loss = g.logistic_nll(d, target)?;
        let value = g.value(loss).item();
        g.backward(loss)?;
        let grads = params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| g.take_grad(v).unwrap_or_else(|| vec![0.0; p.len()]))
            .collect();
        Ok((value, dist, grads))
    }

    /// Masks frozen gradients, takes one Adam step and re-applies the
    /// storage precision.
    pub fn apply_gradients(&mut self, grads: &mut [Vec<f64>], state: &mut AdamState) -> Result<()> {
        for (g, &f) in grads.iter_mut().zip(&self.frozen) {
            if f {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        adam_step(&mut self.params, grads, state)?;
        let precision = self.config.precision;
        for p in &mut self.params {
            round_to(precision, p);
        }
        Ok(())
    }

    /// Pre-activations of the first block's input-facing convolutions on a
    /// raw (already normalized) input, after the stem pool.
    pub fn first_block_preactivations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let x = g.leaf(x.clone());
        let h = g.avg_pool(x, PoolSpec::downsample(self.config.stem_pool))?;
        let mut out = Vec::new();
        for (j, branch) in self.config.blocks[0].branches.iter().enumerate() {
            let mut y = h;
            for (k, stage) in branch.iter().enumerate() {
                let convs: Vec<(String, (usize, usize))> = match stage {
                    Stage::Pool { kernel } => {
                        y = g.avg_pool(y, PoolSpec::same(*kernel))?;
                        continue;
                    }
                    Stage::Conv { kernel, .. } => vec![(format!("block0.branch{j}.conv{k}"), *kernel)],
                    Stage::Split { convs } => convs
                        .iter()
                        .enumerate()
                        .map(|(s, (kernel, _))| (format!("block0.branch{j}.split{s}"), *kernel))
                        .collect(),
                };
                for (name, kernel) in convs {
                    let w = g.leaf(self.param(&format!("{name}.weight")).unwrap().clone());
                    let b = g.leaf(self.param(&format!("{name}.bias")).unwrap().clone());
                    let z = g.conv2d(y, w, b, Conv2dSpec::same(kernel))?;
                    out.push(g.value(z).clone());
                }
                break;
            }
        }
        Ok(out)
    }
}

/// Degraded-channel slice (input channels 4..8) of an FR first-block kernel.
pub fn transfer_first_block(donor: &Tensor) -> Result<Tensor> {
    let s = donor.shape();
    if s.len() != 4 || s[1] != 8 {
        return Err(ModelError::IncompatibleDonor(format!(
            "first-block kernel must have 8 input channels, got shape {s:?}"
        )));
    }
    let (c_out, kh, kw) = (s[0], s[2], s[3]);
    let per_in = kh * kw;
    let mut data = Vec::with_capacity(c_out * 4 * per_in);
    for o in 0..c_out {
        let base = o * 8 * per_in;
        data.extend_from_slice(&donor.data()[base + 4 * per_in..base + 8 * per_in]);
    }
    Ok(Tensor::from_vec(vec![c_out, 4, kh, kw], data)?)
}

/// Builds a reference-free or full-reference model, optionally
/// initialized from a full-reference donor.
pub fn build_model(config: ModelConfig, mode: InitMode, donor: Option<&Model>, seed: u64) -> Result<Model> {
    let mut model = Model::new(config, seed)?;
    if mode == InitMode::Def {
        return Ok(model);
    }
    let donor = donor.ok_or(ModelError::MissingDonor(mode))?;
    if donor.config.variant != Variant::FullReference {
        return Err(ModelError::IncompatibleDonor(
            "donor must be a full-reference model".into(),
        ));
    }
    if model.config.variant != Variant::ReferenceFree {
        return Err(ModelError::IncompatibleDonor(
            "weight transfer targets a reference-free model".into(),
        ));
    }
    let sliced = input_facing(&model.config);
    let mut targets: Vec<String> = Vec::new();
    for name in &sliced {
        targets.push(format!("{name}.weight"));
        targets.push(format!("{name}.bias"));
    }
    if mode == InitMode::All {
        for name in &model.names {
            if (name.starts_with("block") || name.starts_with("se")) && !targets.contains(name) {
                targets.push(name.clone());
            }
        }
    }
    for name in &targets {
        let src = donor
            .param(name)
            .ok_or_else(|| ModelError::IncompatibleDonor(format!("donor lacks parameter {name}")))?;
        let is_sliced = name.ends_with(".weight") && sliced.iter().any(|s| name == &format!("{s}.weight"));
        let value = if is_sliced {
            transfer_first_block(src).map_err(|e| ModelError::IncompatibleDonor(format!("{name}: {e}")))?
        } else {
            src.clone()
        };
        let i = model.index_of(name).expect("target names come from the model");
        if value.shape() != model.params[i].shape() {
            return Err(ModelError::IncompatibleDonor(format!(
                "{name}: donor shape {:?} does not match {:?}",
                value.shape(),
                model.params[i].shape()
            )));
        }
        let mut value = value;
        round_to(model.config.precision, &mut value);
        model.params[i] = value;
        if mode == InitMode::DegF && sliced.iter().any(|s| name.starts_with(&format!("{s}."))) {
            model.frozen[i] = true;
        }
    }
    if let Some(norm) = &donor.norm {
        model.norm = Some(norm.clone());
    }
    model.frontend = donor.frontend.clone();
    Ok(model)
}

/// File-level distribution: arithmetic means of segment μ and segment a.
pub fn aggregate_segments(dists: &[ScoreDistribution]) -> Result<ScoreDistribution> {
    if dists.is_empty() {
        return Err(ModelError::NoSegments);
    }
    // Offsets from a pivot keep the mean of identical values exact.
    let n = dists.len() as f64;
    let mu0 = dists[0].mu;
    let mu = mu0 + dists.iter().map(|d| d.mu - mu0).sum::<f64>() / n;
    let top = dists.iter().map(|d| d.log_a).fold(f64::NEG_INFINITY, f64::max);
    let log_a = top + (dists.iter().map(|d| (d.log_a - top).exp()).sum::<f64>() / n).ln();
    Ok(ScoreDistribution::new(mu, log_a))
}

/// Reference-free prediction for a whole file. Mono input is duplicated
/// to dual-mono; only complete segments are scored.
pub fn predict_file(model: &Model, buffer: &AudioBuffer) -> Result<ScoreDistribution> {
    if model.config.variant != Variant::ReferenceFree {
        return Err(ModelError::Config("predict_file needs a reference-free model".into()));
    }
    let stereo = buffer.to_stereo();
    let spec = gammatone_spectrogram(&stereo, &model.frontend)?;
    let segs: Vec<Segment> = spec
        .segments(model.config.frames)
        .into_iter()
        .filter(|s| !s.padded)
        .collect();
    if segs.is_empty() {
        return Err(ModelError::TooShort {
            frames: spec.frames(),
            need: model.config.frames,
        });
    }
    let dists = segs.iter().map(|s| model.forward(s)).collect::<Result<Vec<_>>>()?;
    aggregate_segments(&dists)
}
