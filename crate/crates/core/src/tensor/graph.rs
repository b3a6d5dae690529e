use std::str::FromStr;

use super::kernels::{self, ConvGeom, PoolGeom};
use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl FromStr for Activation {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(TensorError::UnknownActivation(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: (1, 1),
            padding: (0, 0),
        }
    }
}

impl Conv2dSpec {
    /// Stride 1 with the padding that keeps odd kernels size-preserving.
    pub fn same(kernel: (usize, usize)) -> Self {
        Conv2dSpec {
            stride: (1, 1),
            padding: (kernel.0 / 2, kernel.1 / 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolSpec {
    pub fn same(kernel: (usize, usize)) -> Self {
        PoolSpec {
            kernel,
            stride: (1, 1),
            padding: (kernel.0 / 2, kernel.1 / 2),
        }
    }

    pub fn downsample(factor: (usize, usize)) -> Self {
        PoolSpec {
            kernel: factor,
            stride: factor,
            padding: (0, 0),
        }
    }
}

/// Operation recorded for one node, with the ids of its inputs.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeomPub },
    AvgPool { x: Var, geom: PoolGeomPub },
    Activation(Var, Activation),
    Linear { x: Var, w: Var, b: Var },
    GlobalAvgPool(Var),
    Concat(Vec<Var>),
    ChannelScale { x: Var, s: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    ScoreHead(Var),
    LogisticNll { dist: Var, target: f64 },
}

// Opaque wrappers so the kernel geometry types stay crate-private.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeomPub(ConvGeom);
#[derive(Debug, Clone, Copy)]
pub struct PoolGeomPub(PoolGeom);

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Tape of operations. Nodes are appended in evaluation order, so the
/// insertion order is a topological order.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

const MU_EPS: f64 = 1e-12;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mismatch(op: &'static str, dim: impl Into<String>, expected: usize, got: usize) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        dim: dim.into(),
        expected,
        got,
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    /// Gradient accumulated on a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].value.grad.take()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(Op::Leaf, t, needs_grad)
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn chw(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(v) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(mismatch(op, "rank", 3, s.len())),
        }
    }

    /// Cross-correlation of a `C_in×H×W` input with `C_out×C_in×kH×kW` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var> {
        const OP: &str = "conv2d";
        let (c_in, h, wd) = self.chw(OP, x)?;
        let (c_out, kc, kh, kw) = match *self.shape(w) {
            [a, b, c, d] => (a, b, c, d),
            ref s => return Err(mismatch(OP, "kernel rank", 4, s.len())),
        };
        if kc != c_in {
            return Err(mismatch(OP, "kernel input channels", c_in, kc));
        }
        if self.shape(b) != [c_out] {
            return Err(mismatch(OP, "bias length", c_out, self.value(b).len()));
        }
        if spec.stride.0 == 0 || spec.stride.1 == 0 {
            return Err(TensorError::Invalid("conv2d: stride must be >= 1".into()));
        }
        if kh > h + 2 * spec.padding.0 {
            return Err(mismatch(
                OP,
                "kernel height vs padded input",
                h + 2 * spec.padding.0,
                kh,
            ));
        }
        if kw > wd + 2 * spec.padding.1 {
            return Err(mismatch(
                OP,
                "kernel width vs padded input",
                wd + 2 * spec.padding.1,
                kw,
            ));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.padding.0,
            pw: spec.padding.1,
        };
        let out = kernels::conv2d_forward(self.data(x), self.data(w), self.data(b), &geom);
        let value = Tensor::from_vec(vec![c_out, geom.out_h(), geom.out_w()], out)?;
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(
            Op::Conv2d {
                x,
                w,
                b,
                geom: ConvGeomPub(geom),
            },
            value,
            needs,
        ))
    }

    pub fn avg_pool(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        const OP: &str = "avg_pool";
        let (c, h, w) = self.chw(OP, x)?;
        if spec.stride.0 == 0 || spec.stride.1 == 0 || spec.kernel.0 == 0 || spec.kernel.1 == 0 {
            return Err(TensorError::Invalid("avg_pool: kernel and stride must be >= 1".into()));
        }
        if spec.kernel.0 > h + 2 * spec.padding.0 {
            return Err(mismatch(
                OP,
                "window height vs padded input",
                h + 2 * spec.padding.0,
                spec.kernel.0,
            ));
        }
        if spec.kernel.1 > w + 2 * spec.padding.1 {
            return Err(mismatch(
                OP,
                "window width vs padded input",
                w + 2 * spec.padding.1,
                spec.kernel.1,
            ));
        }
        let geom = PoolGeom {
            c,
            h,
            w,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.padding.0,
            pw: spec.padding.1,
        };
        let out = kernels::avg_pool_forward(self.data(x), &geom);
        let value = Tensor::from_vec(vec![c, geom.out_h(), geom.out_w()], out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(
            Op::AvgPool {
                x,
                geom: PoolGeomPub(geom),
            },
            value,
            needs,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Activation::Relu => |v| v.max(0.0),
            Activation::Sigmoid => sigmoid,
        };
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_vec(src.shape().to_vec(), data).unwrap();
        let needs = self.needs(&[x]);
        self.push(Op::Activation(x, kind), value, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// `y = W x + b` for a vector `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "linear";
        let n = match *self.shape(x) {
            [n] => n,
            ref s => return Err(mismatch(OP, "input rank", 1, s.len())),
        };
        let (m, k) = match *self.shape(w) {
            [m, k] => (m, k),
            ref s => return Err(mismatch(OP, "weight rank", 2, s.len())),
        };
        if k != n {
            return Err(mismatch(OP, "inner dimension", k, n));
        }
        if self.shape(b) != [m] {
            return Err(mismatch(OP, "bias length", m, self.value(b).len()));
        }
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        let out: Vec<f64> = (0..m)
            .map(|i| {
                let row = &wd[i * n..(i + 1) * n];
                bd[i] + row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let value = Tensor::from_vec(vec![m], out)?;
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(Op::Linear { x, w, b }, value, needs))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw("global_avg_pool", x)?;
        let hw = h * w;
        let out = self
            .data(x)
            .chunks(hw)
            .map(|ch| ch.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::from_vec(vec![c], out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(Op::GlobalAvgPool(x), value, needs))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *xs
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_channels: empty input list".into()))?;
        let (_, h, w) = self.chw(OP, first)?;
        let mut total = 0;
        for &v in xs {
            let (c, hh, ww) = self.chw(OP, v)?;
            if hh != h {
                return Err(mismatch(OP, "height", h, hh));
            }
            if ww != w {
                return Err(mismatch(OP, "width", w, ww));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(total * h * w);
        for &v in xs {
            out.extend_from_slice(self.data(v));
        }
        let value = Tensor::from_vec(vec![total, h, w], out)?;
        let needs = self.needs(xs);
        Ok(self.push(Op::Concat(xs.to_vec()), value, needs))
    }

    /// Multiplies every channel `c` of `x` by `s[c]`.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (c, h, w) = self.chw("channel_scale", x)?;
        if self.shape(s) != [c] {
            return Err(mismatch("channel_scale", "scale length", c, self.value(s).len()));
        }
        let hw = h * w;
        let sd = self.data(s);
        let out = self
            .data(x)
            .chunks(hw)
            .zip(sd)
            .flat_map(|(ch, &k)| ch.iter().map(move |v| v * k))
            .collect();
        let value = Tensor::from_vec(vec![c, h, w], out)?;
        let needs = self.needs(&[x, s]);
        Ok(self.push(Op::ChannelScale { x, s }, value, needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(mismatch(op, "rank", sa.len(), sb.len()));
        }
        for (i, (x, y)) in sa.iter().zip(sb).enumerate() {
            if x != y {
                return Err(mismatch(op, format!("axis {i}"), *x, *y));
            }
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(self.shape(a).to_vec(), out)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(self.shape(a).to_vec(), out)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Mul(a, b), value, needs))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.data(x).iter().map(|v| v * k).collect();
        let value = Tensor::from_vec(self.shape(x).to_vec(), out).unwrap();
        let needs = self.needs(&[x]);
        self.push(Op::Scale(x, k), value, needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let needs = self.needs(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(s), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let needs = self.needs(&[x]);
        self.push(Op::Mean(x), Tensor::scalar(s), needs)
    }

    /// Maps raw network outputs `(r0, r1)` to `(μ, log a)` with
    /// `μ = 100·σ(r0)` kept strictly inside (0, 100).
    pub fn score_head(&mut self, raw: Var) -> Result<Var> {
        if self.shape(raw) != [2] {
            return Err(mismatch("score_head", "length", 2, self.value(raw).len()));
        }
        let r = self.data(raw);
        let mu = 100.0 * sigmoid(r[0]).clamp(MU_EPS, 1.0 - MU_EPS);
        let value = Tensor::from_vec(vec![2], vec![mu, r[1]])?;
        let needs = self.needs(&[raw]);
        Ok(self.push(Op::ScoreHead(raw), value, needs))
    }

    /// Logistic negative log-likelihood of `target` under `dist = (μ, log a)`.
    pub fn logistic_nll(&mut self, dist: Var, target: f64) -> Result<Var> {
        if self.shape(dist) != [2] {
            return Err(mismatch("logistic_nll", "length", 2, self.value(dist).len()));
        }
        let d = self.data(dist);
        let v = crate::score::logistic_nll(d[0], d[1], target);
        let needs = self.needs(&[dist]);
        Ok(self.push(Op::LogisticNll { dist, target }, Tensor::scalar(v), needs))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are added onto every
    /// `requires_grad` leaf reachable from the loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(gy) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    self.nodes[i].value.accumulate_grad(&gy);
                }
                Op::Conv2d { x, w, b, geom } => {
                    let need_dx = self.nodes[x.0].needs_grad;
                    let (dx, dw, db) = kernels::conv2d_backward(self.data(x), self.data(w), &gy, &geom.0, need_dx);
                    if let Some(dx) = dx {
                        self.route(&mut adj, x, dx);
                    }
                    self.route(&mut adj, w, dw);
                    self.route(&mut adj, b, db);
                }
                Op::AvgPool { x, geom } => {
                    let dx = kernels::avg_pool_backward(&gy, &geom.0);
                    self.route(&mut adj, x, dx);
                }
                Op::Activation(x, kind) => {
                    let dx = match kind {
                        Activation::Relu => self
                            .data(x)
                            .iter()
                            .zip(&gy)
                            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                            .collect(),
                        Activation::Sigmoid => self.nodes[i]
                            .value
                            .data()
                            .iter()
                            .zip(&gy)
                            .map(|(&y, &g)| g * y * (1.0 - y))
                            .collect(),
                    };
                    self.route(&mut adj, x, dx);
                }
                Op::Linear { x, w, b } => {
                    let (xd, wd) = (self.data(x), self.data(w));
                    let n = xd.len();
                    let mut dw = vec![0.0; wd.len()];
                    let mut dx = vec![0.0; n];
                    for (r, &g) in gy.iter().enumerate() {
                        let row = &wd[r * n..(r + 1) * n];
                        let drow = &mut dw[r * n..(r + 1) * n];
                        for k in 0..n {
                            drow[k] = g * xd[k];
                            dx[k] += g * row[k];
                        }
                    }
                    self.route(&mut adj, x, dx);
                    self.route(&mut adj, w, dw);
                    self.route(&mut adj, b, gy);
                }
                Op::GlobalAvgPool(x) => {
                    let s = self.shape(x);
                    let hw = s[1] * s[2];
                    let inv = 1.0 / hw as f64;
                    let dx = gy.iter().flat_map(|&g| std::iter::repeat_n(g * inv, hw)).collect();
                    self.route(&mut adj, x, dx);
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for v in xs {
                        let n = self.value(v).len();
                        self.route(&mut adj, v, gy[off..off + n].to_vec());
                        off += n;
                    }
                }
                Op::ChannelScale { x, s } => {
                    let hw = self.shape(x)[1] * self.shape(x)[2];
                    let (xd, sd) = (self.data(x), self.data(s));
                    let mut dx = vec![0.0; xd.len()];
                    let mut ds = vec![0.0; sd.len()];
                    for c in 0..sd.len() {
                        let range = c * hw..(c + 1) * hw;
                        let mut acc = 0.0;
                        for ((d, &g), &v) in dx[range.clone()].iter_mut().zip(&gy[range.clone()]).zip(&xd[range]) {
                            *d = g * sd[c];
                            acc += g * v;
                        }
                        ds[c] = acc;
                    }
                    self.route(&mut adj, x, dx);
                    self.route(&mut adj, s, ds);
                }
                Op::Add(a, b) => {
                    self.route(&mut adj, a, gy.clone());
                    self.route(&mut adj, b, gy);
                }
                Op::Mul(a, b) => {
                    let da = gy.iter().zip(self.data(b)).map(|(g, v)| g * v).collect();
                    let db = gy.iter().zip(self.data(a)).map(|(g, v)| g * v).collect();
                    self.route(&mut adj, a, da);
                    self.route(&mut adj, b, db);
                }
                Op::Scale(x, k) => {
                    let dx = gy.iter().map(|g| g * k).collect();
                    self.route(&mut adj, x, dx);
                }
                Op::Sum(x) => {
                    let n = self.value(x).len();
                    self.route(&mut adj, x, vec![gy[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(x).len();
                    self.route(&mut adj, x, vec![gy[0] / n as f64; n]);
                }
                Op::ScoreHead(raw) => {
                    let r0 = self.data(raw)[0];
                    let s = sigmoid(r0);
                    let dmu = if (MU_EPS..=1.0 - MU_EPS).contains(&s) {
                        100.0 * s * (1.0 - s)
                    } else {
                        0.0
                    };
                    self.route(&mut adj, raw, vec![gy[0] * dmu, gy[1]]);
                }
                Op::LogisticNll { dist, target } => {
                    let d = self.data(dist);
                    let (dmu, dlog_a) = crate::score::logistic_nll_grad(d[0], d[1], target);
                    self.route(&mut adj, dist, vec![gy[0] * dmu, gy[0] * dlog_a]);
                }
            }
        }
        Ok(())
    }

    fn route(&self, adj: &mut [Option<Vec<f64>>], to: Var, g: Vec<f64>) {
        if !self.nodes[to.0].needs_grad {
            return;
        }
        match &mut adj[to.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..9).map(|v| v as f64 * 0.5 - 1.0).collect();
        let x = g.leaf(t(&[1, 3, 3], &data));
        let w = g.leaf(t(&[1, 1, 1, 1], &[1.0]));
        let b = g.leaf(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, Conv2dSpec::default()).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn all_ones_3x3_over_4x4_sums_to_nine() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 4, 4], &[1.0; 16]));
        let w = g.leaf(t(&[1, 1, 3, 3], &[1.0; 9]));
        let b = g.leaf(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, Conv2dSpec::default()).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[9.0; 4]);
    }

    #[test]
    fn pointwise_kernel_mixes_channels() {
        let mut g = Graph::new();
        let ch0 = [1.0, -2.0, 0.5, 4.0];
        let ch1 = [3.0, 1.0, -1.0, 0.25];
        let x = g.leaf(t(&[2, 2, 2], &[ch0, ch1].concat()));
        let w = g.leaf(t(&[1, 2, 1, 1], &[2.0, 3.0]));
        let b = g.leaf(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, Conv2dSpec::default()).unwrap();
        let want: Vec<f64> = ch0.iter().zip(&ch1).map(|(a, b)| 2.0 * a + 3.0 * b).collect();
        assert_eq!(g.value(y).data(), &want[..]);
    }

    #[test]
    fn conv_shape_errors_name_the_dimension() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 4, 4]));
        let w = g.leaf(Tensor::zeros(&[1, 3, 1, 1]));
        let b = g.leaf(Tensor::zeros(&[1]));
        let err = g.conv2d(x, w, b, Conv2dSpec::default()).unwrap_err();
        assert!(err.to_string().contains("kernel input channels"), "{err}");

        let w = g.leaf(Tensor::zeros(&[1, 2, 5, 1]));
        let err = g.conv2d(x, w, b, Conv2dSpec::default()).unwrap_err();
        assert!(err.to_string().contains("kernel height"), "{err}");
    }

    #[test]
    fn output_size_formula() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[1, 7, 10]));
        let w = g.leaf(Tensor::zeros(&[2, 1, 3, 4]));
        let b = g.leaf(Tensor::zeros(&[2]));
        let spec = Conv2dSpec {
            stride: (2, 3),
            padding: (1, 2),
        };
        let y = g.conv2d(x, w, b, spec).unwrap();
        // (7 + 2 - 3)/2 + 1 = 4, (10 + 4 - 4)/3 + 1 = 4
        assert_eq!(g.value(y).shape(), &[2, 4, 4]);
    }

    #[test]
    fn activations() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[-1.5, 2.0, 0.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 2.0, 0.0]);
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[2], 0.5);
        assert!("tanh".parse::<Activation>().is_err());
        assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
    }

    #[test]
    fn linear_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[3.0, -1.0]));
        let w = g.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.leaf(t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);

        let x = g.leaf(t(&[2], &[2.0, 3.0]));
        let w = g.leaf(t(&[1, 2], &[1.0, 1.0]));
        let b = g.leaf(t(&[1], &[5.0]).with_grad());
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[10.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[1.0]);

        let bad = g.leaf(Tensor::zeros(&[3]));
        assert!(g.linear(bad, w, b).is_err());
    }

    #[test]
    fn global_pool_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 2, 2], &[0.0, 2.0, 4.0, 6.0, 7.0, 7.0, 7.0, 7.0]).with_grad());
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25; 8]);
    }

    #[test]
    fn concat_routes_gradients() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[1, 1, 2], &[1.0, 2.0]).with_grad());
        let b = g.leaf(t(&[2, 1, 2], &[3.0, 4.0, 5.0, 6.0]).with_grad());
        let single = g.concat_channels(&[a]).unwrap();
        assert_eq!(g.value(single).data(), g.value(a).data());
        let y = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 1, 2]);
        assert_eq!(&g.value(y).data()[..2], &[1.0, 2.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0; 2]);
        assert_eq!(g.grad(b).unwrap(), &[1.0; 4]);

        let c = g.leaf(Tensor::zeros(&[1, 2, 2]));
        let err = g.concat_channels(&[a, c]).unwrap_err();
        assert!(err.to_string().contains("height"));
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0).with_grad());
        g.backward(x).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0]);

        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[-1.0, 2.0]).with_grad());
        let r = g.relu(x);
        let loss = g.sum(r);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
        assert!(matches!(g.backward(r), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn leaves_without_grad_are_untouched() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        let w = g.leaf(t(&[2], &[3.0, 4.0]).with_grad());
        let y = g.mul(x, w).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap(), &[1.0, 2.0]);
    }
}
