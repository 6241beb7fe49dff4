//! Parameterized layers built on the tape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::dropout::DropoutSpec;
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{glorot_uniform, ParamId, ParamStore};
use crate::nn::tensor::Tensor;

/// Fully connected layer `W x + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            &format!("{name}.weight"),
            glorot_uniform(rng, &[outputs, inputs], inputs, outputs),
        );
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.dense(x, w, b)
    }
}

/// 2-D convolution layer with bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        size: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let area = size * size;
        let kernel = store.add(
            &format!("{name}.kernel"),
            glorot_uniform(
                rng,
                &[out_channels, in_channels, size, size],
                in_channels * area,
                out_channels * area,
            ),
        );
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            kernel,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        g.conv2d(x, k, Some(b), self.stride, self.pad)
    }
}

/// Shape of the convolutional image encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStackConfig {
    /// Square grayscale input side length.
    pub image_size: usize,
    /// Output channels of each block.
    pub channels: Vec<usize>,
}

impl Default for ConvStackConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: vec![8, 16, 32, 32],
        }
    }
}

impl ConvStackConfig {
    /// Side length of the final conv grid: every block but the last halves
    /// the resolution.
    pub fn grid_size(&self) -> usize {
        self.image_size >> self.channels.len().saturating_sub(1)
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidArgument("conv stack needs positive channel counts".into()));
        }
        let halvings = self.channels.len() - 1;
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << halvings) {
            return Err(Error::InvalidArgument(format!(
                "image size {} not divisible by 2^{}",
                self.image_size, halvings
            )));
        }
        Ok(())
    }
}

/// Blocks of conv3×3 (stride 1, pad 1) + ReLU, each followed by 2×2 max
/// pooling except the last. The last block's activation is the "final conv
/// layer" used for class activation maps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStack {
    pub config: ConvStackConfig,
    pub blocks: Vec<Conv2d>,
}

impl ConvStack {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: &ConvStackConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut in_ch = 1;
        let mut blocks = Vec::with_capacity(config.channels.len());
        for (i, &out_ch) in config.channels.iter().enumerate() {
            blocks.push(Conv2d::init(
                store,
                &format!("{name}.conv{i}"),
                in_ch,
                out_ch,
                3,
                1,
                1,
                rng,
            ));
            in_ch = out_ch;
        }
        Ok(Self {
            config: config.clone(),
            blocks,
        })
    }

    /// Runs the stack on a `[1, S, S]` image; returns the final conv
    /// activation `[C, G, G]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<Var> {
        let s = self.config.image_size;
        if g.value(image).shape() != [1, s, s] {
            return Err(shape_err!(
                "encoder expects [1, {s}, {s}], got {:?}",
                g.value(image).shape()
            ));
        }
        let mut x = image;
        let last = self.blocks.len() - 1;
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(g, store, x)?;
            x = g.relu(x);
            if i < last {
                x = g.max_pool(x, 2, 2)?;
            }
        }
        Ok(x)
    }
}

/// Weights of one LSTM direction. Gate blocks are stacked in the order
/// input, forget, cell candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `[4H, input_size]`
    pub input_weights: ParamId,
    /// `[4H, H]`
    pub recurrent_weights: ParamId,
    /// `[4H]`
    pub biases: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmParams {
    /// Glorot-uniform weights, zero biases except the forget gate at 1.0.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let h4 = 4 * hidden_size;
        let input_weights = store.add(
            &format!("{name}.w_input"),
            glorot_uniform(rng, &[h4, input_size], input_size, h4),
        );
        let recurrent_weights = store.add(
            &format!("{name}.w_recurrent"),
            glorot_uniform(rng, &[h4, hidden_size], hidden_size, h4),
        );
        let mut b = vec![0.0; h4];
        b[hidden_size..2 * hidden_size].iter_mut().for_each(|v| *v = 1.0);
        let biases = store.add(&format!("{name}.bias"), Tensor::vector(b));
        Self {
            input_weights,
            recurrent_weights,
            biases,
            input_size,
            hidden_size,
        }
    }
}

/// One LSTM cell update. Returns `(h_t, c_t)`.
pub fn lstm_step(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams,
) -> Result<(Var, Var)> {
    let hs = p.hidden_size;
    if g.value(x).shape() != [p.input_size]
        || g.value(h_prev).shape() != [hs]
        || g.value(c_prev).shape() != [hs]
    {
        return Err(shape_err!(
            "lstm_step: x {:?}, h {:?}, c {:?} for input {} hidden {}",
            g.value(x).shape(),
            g.value(h_prev).shape(),
            g.value(c_prev).shape(),
            p.input_size,
            hs
        ));
    }
    let wx = g.param(store, p.input_weights);
    let wh = g.param(store, p.recurrent_weights);
    let b = g.param(store, p.biases);
    let zx = g.matvec(wx, x)?;
    let zh = g.matvec(wh, h_prev)?;
    let z = g.add(zx, zh)?;
    let z = g.add(z, b)?;
    let zi = g.slice(z, 0, hs)?;
    let zf = g.slice(z, hs, hs)?;
    let zg = g.slice(z, 2 * hs, hs)?;
    let zo = g.slice(z, 3 * hs, hs)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

fn run_direction<'a>(
    g: &mut Graph,
    store: &ParamStore,
    seq: impl Iterator<Item = &'a Var>,
    p: &LstmParams,
    input_mask: Option<Vec<f64>>,
    recurrent_mask: Option<Vec<f64>>,
) -> Result<Var> {
    let mut h = g.constant(Tensor::zeros(&[p.hidden_size]));
    let mut c = g.constant(Tensor::zeros(&[p.hidden_size]));
    for &x in seq {
        let x = match &input_mask {
            Some(m) => g.mul_const(x, m.clone())?,
            None => x,
        };
        let h_in = match &recurrent_mask {
            Some(m) => g.mul_const(h, m.clone())?,
            None => h,
        };
        (h, c) = lstm_step(g, store, x, h_in, c, p)?;
    }
    Ok(h)
}

/// Concatenation of the final forward hidden state (after the last element)
/// and the final backward hidden state (after the first element).
///
/// Dropout masks are drawn once per sequence and direction (variational
/// dropout) from the stream `dropout.rng(key)`.
pub fn bilstm_encode(
    g: &mut Graph,
    store: &ParamStore,
    seq: &[Var],
    fwd: &LstmParams,
    bwd: &LstmParams,
    dropout: &DropoutSpec,
    key: u64,
) -> Result<Var> {
    if seq.is_empty() {
        return Err(Error::Empty("bilstm sequence"));
    }
    let mut rng = dropout.rng(key);
    let fwd_in = dropout.mask(&mut rng, fwd.input_size, dropout.rate);
    let fwd_rec = dropout.mask(&mut rng, fwd.hidden_size, dropout.recurrent_rate);
    let bwd_in = dropout.mask(&mut rng, bwd.input_size, dropout.rate);
    let bwd_rec = dropout.mask(&mut rng, bwd.hidden_size, dropout.recurrent_rate);
    let hf = run_direction(g, store, seq.iter(), fwd, fwd_in, fwd_rec)?;
    let hb = run_direction(g, store, seq.iter().rev(), bwd, bwd_in, bwd_rec)?;
    g.concat(&[hf, hb])
}
