use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// 8 input planes: reference L, R, M, S then degraded L, R, M, S.
    FullReference,
    /// 4 input planes: degraded L, R, M, S.
    ReferenceFree,
}

impl Variant {
    pub fn input_planes(self) -> usize {
        match self {
            Variant::FullReference => 8,
            Variant::ReferenceFree => 4,
        }
    }
}

/// Storage precision of trained parameters. With `F32` every parameter is
/// rounded to single precision after initialization and after each
/// optimizer step, so the float32 checkpoint payload is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// One step of an inception branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Convolution with "same" zero padding, followed by relu.
    Conv { kernel: (usize, usize), out: usize },
    /// Stride-1 average pool with "same" padding.
    Pool { kernel: (usize, usize) },
    /// Parallel convolutions on the same input whose outputs are
    /// concatenated; must be the last stage of its branch.
    Split { convs: Vec<((usize, usize), usize)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InceptionSpec {
    pub name: String,
    pub branches: Vec<Vec<Stage>>,
}

impl InceptionSpec {
    pub fn out_channels(&self, c_in: usize) -> usize {
        self.branches
            .iter()
            .map(|b| {
                b.iter().fold(c_in, |c, s| match s {
                    Stage::Conv { out, .. } => *out,
                    Stage::Pool { .. } => c,
                    Stage::Split { convs } => convs.iter().map(|(_, o)| o).sum(),
                })
            })
            .sum()
    }
}

fn conv(k: (usize, usize), out: usize) -> Stage {
    Stage::Conv { kernel: k, out }
}

fn pool3() -> Stage {
    Stage::Pool { kernel: (3, 3) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub bands: usize,
    pub frames: usize,
    /// Average-pool factor (freq, time) applied to the input.
    pub stem_pool: (usize, usize),
    /// In-A, In-A, In-B, In-C.
    pub blocks: Vec<InceptionSpec>,
    /// Downsampling after each of the first three blocks.
    pub block_pool: (usize, usize),
    pub se_reduction: usize,
    /// Hidden widths of the dense stack; the final 2-unit layer is implied.
    pub fc_hidden: Vec<usize>,
    pub channel_order: String,
    pub precision: Precision,
}

impl ModelConfig {
    /// Desk-scale network of roughly 140k parameters.
    pub fn desk(variant: Variant) -> Self {
        let in_a1 = InceptionSpec {
            name: "In-A".into(),
            branches: vec![
                vec![conv((1, 1), 8)],
                vec![conv((1, 1), 8), conv((3, 3), 16)],
                vec![conv((1, 1), 4), conv((5, 5), 8)],
                vec![pool3(), conv((1, 1), 8)],
            ],
        };
        let in_a2 = InceptionSpec {
            name: "In-A".into(),
            branches: vec![
                vec![conv((1, 1), 16)],
                vec![conv((1, 1), 16), conv((3, 3), 24)],
                vec![conv((1, 1), 8), conv((5, 5), 8)],
                vec![pool3(), conv((1, 1), 16)],
            ],
        };
        let in_b = InceptionSpec {
            name: "In-B".into(),
            branches: vec![
                vec![conv((1, 1), 24)],
                vec![conv((1, 1), 16), conv((1, 7), 24), conv((7, 1), 32)],
                vec![conv((1, 1), 16), conv((3, 3), 24)],
                vec![pool3(), conv((1, 1), 16)],
            ],
        };
        let in_c = InceptionSpec {
            name: "In-C".into(),
            branches: vec![
                vec![conv((1, 1), 40)],
                vec![
                    conv((1, 1), 32),
                    Stage::Split {
                        convs: vec![((1, 3), 32), ((3, 1), 32)],
                    },
                ],
                vec![
                    conv((1, 1), 32),
                    conv((3, 3), 32),
                    Stage::Split {
                        convs: vec![((1, 3), 20), ((3, 1), 20)],
                    },
                ],
                vec![pool3(), conv((1, 1), 16)],
            ],
        };
        ModelConfig {
            variant,
            bands: 64,
            frames: 240,
            stem_pool: (2, 4),
            blocks: vec![in_a1, in_a2, in_b, in_c],
            block_pool: (2, 2),
            se_reduction: 4,
            fc_hidden: vec![256, 128],
            channel_order: "ref_L,ref_R,ref_M,ref_S,deg_L,deg_R,deg_M,deg_S".into(),
            precision: Precision::F32,
        }
    }

    /// Same topology with every width divided by 8 and an 8×16 input;
    /// small enough for exhaustive gradient checks.
    pub fn tiny(variant: Variant) -> Self {
        let mut cfg = ModelConfig::desk(variant);
        for block in &mut cfg.blocks {
            for branch in &mut block.branches {
                for stage in branch {
                    match stage {
                        Stage::Conv { out, .. } => *out = (*out / 8).max(1),
                        Stage::Split { convs } => convs.iter_mut().for_each(|c| c.1 = (c.1 / 8).max(1)),
                        Stage::Pool { .. } => {}
                    }
                }
            }
        }
        cfg.bands = 8;
        cfg.frames = 16;
        cfg.stem_pool = (1, 2);
        cfg.fc_hidden = vec![8, 6];
        cfg.precision = Precision::F64;
        cfg
    }

    pub fn input_planes(&self) -> usize {
        self.variant.input_planes()
    }

    /// Same topology with another input variant.
    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        let names: Vec<&str> = self.blocks.iter().map(|b| b.name.as_str()).collect();
        if names != ["In-A", "In-A", "In-B", "In-C"] {
            return bad(format!("block sequence must be In-A, In-A, In-B, In-C; got {names:?}"));
        }
        if self.fc_hidden.len() != 2 || self.fc_hidden.contains(&0) {
            return bad("need exactly two nonzero hidden FC widths".into());
        }
        if self.se_reduction == 0 {
            return bad("SE reduction must be >= 1".into());
        }
        let (sh, sw) = self.stem_pool;
        let (ph, pw) = self.block_pool;
        if sh == 0 || sw == 0 || ph == 0 || pw == 0 {
            return bad("pool factors must be >= 1".into());
        }
        let (mut h, mut w) = (self.bands / sh, self.frames / sw);
        for _ in 0..3 {
            h /= ph;
            w /= pw;
        }
        if h == 0 || w == 0 {
            return bad(format!(
                "input {}x{} too small for the pooling schedule",
                self.bands, self.frames
            ));
        }
        for (i, block) in self.blocks.iter().enumerate() {
            if block.branches.is_empty() {
                return bad(format!("block {i} has no branches"));
            }
            for (j, branch) in block.branches.iter().enumerate() {
                let convs = branch.iter().filter(|s| !matches!(s, Stage::Pool { .. })).count();
                if convs == 0 {
                    return bad(format!("block {i} branch {j} has no convolution"));
                }
                for (k, stage) in branch.iter().enumerate() {
                    let kernels: Vec<(usize, usize)> = match stage {
                        Stage::Conv { kernel, out } => {
                            if *out == 0 {
                                return bad(format!("block {i} branch {j} has a zero-width conv"));
                            }
                            vec![*kernel]
                        }
                        Stage::Pool { kernel } => vec![*kernel],
                        Stage::Split { convs } => {
                            if k + 1 != branch.len() {
                                return bad(format!("block {i} branch {j}: split must be last"));
                            }
                            convs.iter().map(|c| c.0).collect()
                        }
                    };
                    if kernels.iter().any(|&(a, b)| a % 2 == 0 || b % 2 == 0) {
                        return bad(format!("block {i} branch {j}: kernels must be odd-sized"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Channel count entering each block and leaving the last one.
    pub fn block_channels(&self) -> Vec<usize> {
        let mut c = vec![self.input_planes()];
        for b in &self.blocks {
            c.push(b.out_channels(*c.last().unwrap()));
        }
        c
    }
}

/// Ordered parameter names and shapes. The network consumes parameters in
/// exactly this order.
pub fn param_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let push_conv = |out: &mut Vec<(String, Vec<usize>)>, name: String, c_in, c_out, (kh, kw)| {
        out.push((format!("{name}.weight"), vec![c_out, c_in, kh, kw]));
        out.push((format!("{name}.bias"), vec![c_out]));
    };
    let chans = config.block_channels();
    for (i, block) in config.blocks.iter().enumerate() {
        for (j, branch) in block.branches.iter().enumerate() {
            let mut c = chans[i];
            for (k, stage) in branch.iter().enumerate() {
                match stage {
                    Stage::Conv { kernel, out: o } => {
                        push_conv(&mut out, format!("block{i}.branch{j}.conv{k}"), c, *o, *kernel);
                        c = *o;
                    }
                    Stage::Pool { .. } => {}
                    Stage::Split { convs } => {
                        for (s, (kernel, o)) in convs.iter().enumerate() {
                            push_conv(&mut out, format!("block{i}.branch{j}.split{s}"), c, *o, *kernel);
                        }
                    }
                }
            }
        }
        if i < 3 {
            let c = chans[i + 1];
            let r = (c / config.se_reduction).max(1);
            out.push((format!("se{i}.fc0.weight"), vec![r, c]));
            out.push((format!("se{i}.fc0.bias"), vec![r]));
            out.push((format!("se{i}.fc1.weight"), vec![c, r]));
            out.push((format!("se{i}.fc1.bias"), vec![c]));
        }
    }
    let mut widths = vec![*chans.last().unwrap()];
    widths.extend(&config.fc_hidden);
    widths.push(2);
    for (l, pair) in widths.windows(2).enumerate() {
        out.push((format!("fc{l}.weight"), vec![pair[1], pair[0]]));
        out.push((format!("fc{l}.bias"), vec![pair[1]]));
    }
    out
}

/// Exact parameter total from shape arithmetic.
pub fn param_count(config: &ModelConfig) -> usize {
    param_specs(config)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

/// Names of the first block's convolutions that read the network input
/// directly (possibly through a pool).
pub fn input_facing(config: &ModelConfig) -> Vec<String> {
    let mut names = Vec::new();
    for (j, branch) in config.blocks[0].branches.iter().enumerate() {
        for (k, stage) in branch.iter().enumerate() {
            match stage {
                Stage::Pool { .. } => continue,
                Stage::Conv { .. } => names.push(format!("block0.branch{j}.conv{k}")),
                Stage::Split { convs } => names.extend((0..convs.len()).map(|s| format!("block0.branch{j}.split{s}"))),
            }
            break;
        }
    }
    names
}
