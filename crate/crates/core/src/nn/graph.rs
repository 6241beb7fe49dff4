//! Reverse-mode tape.
//!
//! A [`Graph`] is an append-only arena of nodes. Every op records its inputs
//! by index, and inputs always precede their consumers, so the arena order is
//! a topological order and cycles cannot be expressed. `backward` walks the
//! arena in reverse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Error, Result};
use crate::math;
use crate::nn::conv::{self, ConvGeom, PoolGeom};
use crate::nn::params::{ParamGrads, ParamId, ParamStore};
use crate::nn::tensor::Tensor;

/// Clamp applied to scores inside [`Graph::bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pooling variants supported by [`Graph::pool`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Max { window: usize, stride: usize },
    GlobalAvg,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MulConst(Var, Vec<f64>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MatVec(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Sum(Var),
    Mean(Var),
    Bce {
        scores: Var,
        labels: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    ChannelWeightedSum {
        maps: Var,
        weights: Vec<f64>,
    },
    MinMaxNorm {
        input: Var,
        argmin: usize,
        argmax: usize,
        range: f64,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

/// Per-node gradients produced by a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Non-differentiated input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Node for a stored parameter. Repeated calls return the same node so
    /// gradients from every use accumulate in one place; the value is the
    /// one the store held at the first call.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let i = id.index();
        if self.param_nodes.len() <= i {
            self.param_nodes.resize(i + 1, None);
        }
        if let Some(v) = self.param_nodes[i] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.param_nodes[i] = Some(v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{}: {:?} vs {:?}",
                what,
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[a.0].value;
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    /// `a + s` elementwise.
    pub fn shift(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Shift(a), |x| x + s)
    }

    /// Elementwise product with a constant (dropout masks, fixed weights).
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.nodes[a.0].value.len() {
            return Err(shape_err!(
                "mul_const: {} constants for {:?}",
                c.len(),
                self.shape(a)
            ));
        }
        let data = self.data(a).iter().zip(&c).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MulConst(a, c), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), math::tanh)
    }

    /// `w · x` for `w: [m, n]`, `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = self.shape(w);
        let xs = self.shape(x);
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(shape_err!("matvec: W {:?} with x {:?}", ws, xs));
        }
        let (m, n) = (ws[0], ws[1]);
        let wd = self.data(w);
        let xd = self.data(x);
        let out = (0..m)
            .map(|i| wd[i * n..(i + 1) * n].iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        let rg = self.rg(w) || self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), rg))
    }

    /// `w · x + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matvec(w, x)?;
        self.add(y, b)
    }

    /// Cross-correlation of `input: [C,H,W]` with `kernel: [K,C,kh,kw]` and an
    /// optional per-kernel bias `[K]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), stride, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.kernels] {
                return Err(shape_err!(
                    "conv2d bias {:?} for {} kernels",
                    self.shape(b),
                    geom.kernels
                ));
            }
        }
        let out = conv::conv_forward(
            &geom,
            self.data(input),
            self.data(kernel),
            bias.map(|b| self.data(b)),
        );
        let value = Tensor::new(vec![geom.kernels, geom.out_h, geom.out_w], out)?;
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn pool(&mut self, input: Var, kind: Pool) -> Result<Var> {
        match kind {
            Pool::Max { window, stride } => self.max_pool(input, window, stride),
            Pool::GlobalAvg => self.global_avg_pool(input),
        }
    }

    pub fn max_pool(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let geom = PoolGeom::new(self.shape(input), window, stride)?;
        let (out, argmax) = conv::max_pool_forward(&geom, self.data(input));
        let value = Tensor::new(vec![geom.channels, geom.out_h, geom.out_w], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    /// `[C,H,W] -> [C]`, mean over each channel plane.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 3 {
            return Err(shape_err!("global_avg_pool expects [C,H,W], got {:?}", s));
        }
        let (c, plane) = (s[0], s[1] * s[2]);
        let d = self.data(input);
        let out = (0..c)
            .map(|k| d[k * plane..(k + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        let rg = self.rg(input);
        Ok(self.push(Tensor::vector(out), Op::GlobalAvgPool(input), rg))
    }

    /// Flattens and concatenates into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat parts"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), rg))
    }

    /// Contiguous range `[start, start+len)` of the flattened value.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.nodes[a.0].value.len();
        if len == 0 || start + len > n {
            return Err(shape_err!("slice {}..{} of {} values", start, start + len, n));
        }
        let out = self.data(a)[start..start + len].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::vector(out), Op::Slice(a, start), rg))
    }

    /// Row `index` of a `[rows, cols]` table.
    pub fn row(&mut self, table: Var, index: usize) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 || index >= s[0] {
            return Err(shape_err!("row {} of table {:?}", index, s));
        }
        let cols = s[1];
        let out = self.data(table)[index * cols..(index + 1) * cols].to_vec();
        let rg = self.rg(table);
        Ok(self.push(Tensor::vector(out), Op::Row(table, index), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.nodes[a.0].value.clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean binary cross-entropy. Scores are clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`; the gradient is taken at the clamped value.
    pub fn bce(&mut self, scores: Var, labels: &[f64]) -> Result<Var> {
        let value = bce_value(self.data(scores), labels)?;
        let rg = self.rg(scores);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Bce {
                scores,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.data(pred);
        if p.len() != target.len() {
            return Err(shape_err!("mse: {} predictions, {} targets", p.len(), target.len()));
        }
        let v = p
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(v),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// `Σ_k weights[k] · maps[k]` for `maps: [C,H,W]` and constant weights.
    pub fn channel_weighted_sum(&mut self, maps: Var, weights: &[f64]) -> Result<Var> {
        let s = self.shape(maps);
        if s.len() != 3 || s[0] != weights.len() {
            return Err(shape_err!(
                "channel_weighted_sum: maps {:?}, {} weights",
                s,
                weights.len()
            ));
        }
        let (h, w) = (s[1], s[2]);
        let plane = h * w;
        let d = self.data(maps);
        let mut out = vec![0.0; plane];
        for (k, &wk) in weights.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&d[k * plane..(k + 1) * plane]) {
                *o += wk * v;
            }
        }
        let rg = self.rg(maps);
        Ok(self.push(
            Tensor::new(vec![h, w], out)?,
            Op::ChannelWeightedSum {
                maps,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// `(x - min) / (max - min)`; a constant input maps to all zeros.
    pub fn min_max_normalize(&mut self, input: Var) -> Var {
        let d = self.data(input);
        let (mut argmin, mut argmax) = (0, 0);
        for (i, &v) in d.iter().enumerate() {
            if v < d[argmin] {
                argmin = i;
            }
            if v > d[argmax] {
                argmax = i;
            }
        }
        let range = d[argmax] - d[argmin];
        let out = if range > 0.0 {
            d.iter().map(|v| (v - d[argmin]) / range).collect()
        } else {
            vec![0.0; d.len()]
        };
        let shape = self.shape(input).to_vec();
        let rg = self.rg(input);
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::MinMaxNorm {
                input,
                argmin,
                argmax,
                range,
            },
            rg,
        )
    }

    /// Gradients of a one-element `loss` with respect to every node that
    /// requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check_scalar(loss)?;
        Ok(Gradients {
            grads: self.backprop(loss, 0),
        })
    }

    /// Gradient of a one-element `output` with respect to the node `wrt`,
    /// walking only the part of the tape recorded after `wrt`.
    pub fn grad_of(&self, output: Var, wrt: Var) -> Result<Tensor> {
        self.check_scalar(output)?;
        if wrt.0 > output.0 {
            return Err(invalid!("grad_of: node {} recorded after output {}", wrt.0, output.0));
        }
        let mut grads = self.backprop(output, wrt.0);
        let shape = self.shape(wrt).to_vec();
        let data = grads[wrt.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.nodes[wrt.0].value.len()]);
        Tensor::new(shape, data)
    }

    /// Adds every parameter node's gradient into `out`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, out: &mut ParamGrads) {
        for (i, v) in self.param_nodes.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads.get(*v) {
                    out.add_to(ParamId::from_index(i), g);
                }
            }
        }
    }

    fn check_scalar(&self, v: Var) -> Result<()> {
        if self.nodes[v.0].value.len() != 1 {
            return Err(shape_err!(
                "backward needs a one-element output, got {:?}",
                self.shape(v)
            ));
        }
        Ok(())
    }

    fn backprop(&self, seed: Var, lowest: usize) -> Vec<Option<Vec<f64>>> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(vec![1.0]);
        let wants = |j: Var| j.0 >= lowest && (self.nodes[j.0].requires_grad || j.0 == lowest);
        for i in (lowest..=seed.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &g, &mut grads, &wants);
            grads[i] = Some(g);
        }
        grads
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        wants: &dyn Fn(Var) -> bool,
    ) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        axpy(slot(self, grads, v), 1.0, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    axpy(slot(self, grads, *a), 1.0, g);
                }
                if wants(*b) {
                    axpy(slot(self, grads, *b), -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bd = self.data(*b);
                    for ((o, gi), bi) in slot(self, grads, *a).iter_mut().zip(g).zip(bd) {
                        *o += gi * bi;
                    }
                }
                if wants(*b) {
                    let ad = self.data(*a);
                    for ((o, gi), ai) in slot(self, grads, *b).iter_mut().zip(g).zip(ad) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    axpy(slot(self, grads, *a), *s, g);
                }
            }
            Op::Shift(a) | Op::Reshape(a) => {
                if wants(*a) {
                    axpy(slot(self, grads, *a), 1.0, g);
                }
            }
            Op::MulConst(a, c) => {
                if wants(*a) {
                    for ((o, gi), ci) in slot(self, grads, *a).iter_mut().zip(g).zip(c) {
                        *o += gi * ci;
                    }
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let x = self.data(*a);
                    for ((o, gi), xi) in slot(self, grads, *a).iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    for ((o, gi), yi) in slot(self, grads, *a).iter_mut().zip(g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    for ((o, gi), yi) in slot(self, grads, *a).iter_mut().zip(g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::MatVec(w, x) => {
                let n = self.shape(*w)[1];
                if wants(*w) {
                    let xd = self.data(*x);
                    let gw = slot(self, grads, *w);
                    for (i, gi) in g.iter().enumerate() {
                        for (o, xj) in gw[i * n..(i + 1) * n].iter_mut().zip(xd) {
                            *o += gi * xj;
                        }
                    }
                }
                if wants(*x) {
                    let wd = self.data(*w);
                    let gx = slot(self, grads, *x);
                    for (i, gi) in g.iter().enumerate() {
                        for (o, wij) in gx.iter_mut().zip(&wd[i * n..(i + 1) * n]) {
                            *o += gi * wij;
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let mut gin = wants(*input).then(|| take_slot(self, grads, *input));
                let mut gk = wants(*kernel).then(|| take_slot(self, grads, *kernel));
                let mut gb = bias.filter(|b| wants(*b)).map(|b| take_slot(self, grads, b));
                conv::conv_backward(
                    geom,
                    self.data(*input),
                    self.data(*kernel),
                    g,
                    gin.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(v) = gin {
                    grads[input.0] = Some(v);
                }
                if let Some(v) = gk {
                    grads[kernel.0] = Some(v);
                }
                if let (Some(v), Some(b)) = (gb, bias) {
                    grads[b.0] = Some(v);
                }
            }
            Op::MaxPool { input, argmax } => {
                if wants(*input) {
                    let gi = slot(self, grads, *input);
                    for (&src, gv) in argmax.iter().zip(g) {
                        gi[src] += gv;
                    }
                }
            }
            Op::GlobalAvgPool(a) => {
                if wants(*a) {
                    let s = self.shape(*a);
                    let plane = s[1] * s[2];
                    let inv = 1.0 / plane as f64;
                    let ga = slot(self, grads, *a);
                    for (k, gk) in g.iter().enumerate() {
                        for o in &mut ga[k * plane..(k + 1) * plane] {
                            *o += gk * inv;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    if wants(p) {
                        axpy(slot(self, grads, p), 1.0, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                if wants(*a) {
                    let ga = slot(self, grads, *a);
                    axpy(&mut ga[*start..*start + g.len()], 1.0, g);
                }
            }
            Op::Row(t, index) => {
                if wants(*t) {
                    let cols = g.len();
                    let gt = slot(self, grads, *t);
                    axpy(&mut gt[index * cols..(index + 1) * cols], 1.0, g);
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    slot(self, grads, *a).iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean(a) => {
                if wants(*a) {
                    let ga = slot(self, grads, *a);
                    let s = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|o| *o += s);
                }
            }
            Op::Bce { scores, labels } => {
                if wants(*scores) {
                    let sd = self.data(*scores);
                    let n = sd.len() as f64;
                    let gs = slot(self, grads, *scores);
                    for ((o, &s), &t) in gs.iter_mut().zip(sd).zip(labels) {
                        let s = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        *o += g[0] * (s - t) / (s * (1.0 - s)) / n;
                    }
                }
            }
            Op::Mse { pred, target } => {
                if wants(*pred) {
                    let pd = self.data(*pred);
                    let n = pd.len() as f64;
                    let gp = slot(self, grads, *pred);
                    for ((o, p), t) in gp.iter_mut().zip(pd).zip(target) {
                        *o += g[0] * 2.0 * (p - t) / n;
                    }
                }
            }
            Op::ChannelWeightedSum { maps, weights } => {
                if wants(*maps) {
                    let plane = g.len();
                    let gm = slot(self, grads, *maps);
                    for (k, wk) in weights.iter().enumerate() {
                        axpy(&mut gm[k * plane..(k + 1) * plane], *wk, g);
                    }
                }
            }
            Op::MinMaxNorm {
                input,
                argmin,
                argmax,
                range,
            } => {
                if wants(*input) && *range > 0.0 {
                    let gi = slot(self, grads, *input);
                    let inv = 1.0 / range;
                    let mut g_min = 0.0;
                    let mut g_max = 0.0;
                    for ((o, gv), yv) in gi.iter_mut().zip(g).zip(y) {
                        *o += gv * inv;
                        g_min += gv * (yv - 1.0) * inv;
                        g_max -= gv * yv * inv;
                    }
                    gi[*argmin] += g_min;
                    gi[*argmax] += g_max;
                }
            }
        }
    }
}

fn slot<'a>(graph: &Graph, grads: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut [f64] {
    let n = graph.nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn take_slot(graph: &Graph, grads: &mut [Option<Vec<f64>>], v: Var) -> Vec<f64> {
    let n = graph.nodes[v.0].value.len();
    grads[v.0].take().unwrap_or_else(|| vec![0.0; n])
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Mean binary cross-entropy with scores clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_value(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(shape_err!(
            "bce: {} scores, {} labels",
            scores.len(),
            labels.len()
        ));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(invalid!("bce label {} is not 0 or 1", bad));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * math::ln(s) + (1.0 - y) * math::ln(1.0 - s))
        })
        .sum();
    let v = total / scores.len() as f64;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("bce over {} scores", scores.len())));
    }
    Ok(v)
}
