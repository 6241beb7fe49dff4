//! Box regression from an image and a location phrase: a conv encoder and
//! a Bi-LSTM over the phrase's words, concatenated and passed through two
//! dense layers to four sigmoid outputs `(x, y, w, h)`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{iou, LocationLabel, NormalizedBox};
use crate::error::{invalid, shape_err, Error, Result};
use crate::image::Plane;
use crate::nn::gradcheck::{compare_with_finite_differences, Coordinates};
use crate::nn::{
    adam_step, bilstm_encode, dropout_key, epoch_batches, glorot_uniform, AdamState, Checkpoint,
    ConvStack, ConvStackConfig, Dense, DropoutSpec, Graph, LstmParams, NamedTensor, ParamGrads,
    ParamId, ParamStore, Tensor, Var,
};

pub const CHECKPOINT_KIND: &str = "text2box";
/// Smallest predicted width/height.
pub const MIN_EXTENT: f64 = 1e-3;
pub const PAD: usize = 0;
const PAD_WORD: &str = "<pad>";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Text2BoxConfig {
    pub encoder: ConvStackConfig,
    /// Width of the image feature vector.
    pub image_dim: usize,
    pub embed_dim: usize,
    pub hidden_size: usize,
    pub fusion_dim: usize,
    pub max_steps: usize,
    /// Token words; index 0 is padding.
    pub vocab: Vec<String>,
}

impl Default for Text2BoxConfig {
    fn default() -> Self {
        Self {
            encoder: ConvStackConfig::default(),
            image_dim: 32,
            embed_dim: 8,
            hidden_size: 16,
            fusion_dim: 32,
            max_steps: 16,
            vocab: location_vocab(),
        }
    }
}

/// Padding plus every word of the 17 location label names, sorted.
pub fn location_vocab() -> Vec<String> {
    let words: BTreeSet<&str> = LocationLabel::ALL.iter().flat_map(|l| l.words()).collect();
    core::iter::once(PAD_WORD)
        .chain(words)
        .map(ToString::to_string)
        .collect()
}

/// Word ids of a location phrase, padded to `max_steps`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<usize>,
    len: usize,
}

impl TokenSequence {
    /// The words of each label in order, truncated to `max_steps`.
    pub fn from_labels(labels: &[LocationLabel], config: &Text2BoxConfig) -> Result<Self> {
        let mut ids = Vec::new();
        for w in labels.iter().flat_map(|l| l.words()) {
            let id = config
                .vocab
                .iter()
                .position(|v| v == w)
                .ok_or_else(|| invalid!("word `{w}` not in vocabulary"))?;
            ids.push(id);
        }
        Self::from_ids(ids, config)
    }

    pub fn from_ids(mut ids: Vec<usize>, config: &Text2BoxConfig) -> Result<Self> {
        ids.truncate(config.max_steps);
        if let Some(bad) = ids.iter().find(|&&i| i == PAD || i >= config.vocab.len()) {
            return Err(invalid!("token id {bad} outside vocabulary 1..{}", config.vocab.len()));
        }
        if ids.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        let len = ids.len();
        ids.resize(config.max_steps, PAD);
        Ok(Self { ids, len })
    }

    /// Non-padding ids.
    pub fn tokens(&self) -> &[usize] {
        &self.ids[..self.len]
    }

    pub fn padded(&self) -> &[usize] {
        &self.ids
    }
}

/// Maps raw head outputs to a valid box: extents floored at
/// [`MIN_EXTENT`], the corner moved so the box stays in the unit square.
pub fn box_from_outputs(out: [f64; 4]) -> NormalizedBox {
    let w = out[2].clamp(MIN_EXTENT, 1.0);
    let h = out[3].clamp(MIN_EXTENT, 1.0);
    let x = out[0].clamp(0.0, 1.0 - w);
    let y = out[1].clamp(0.0, 1.0 - h);
    NormalizedBox::new(x, y, w, h).expect("clamped into the unit square")
}

/// Mean squared error over `(x, y, w, h)`.
pub fn t2b_loss(predicted: &NormalizedBox, truth: &NormalizedBox) -> f64 {
    let (p, t) = (predicted.to_array(), truth.to_array());
    p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 4.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Text2BoxModel {
    pub config: Text2BoxConfig,
    pub store: ParamStore,
    encoder: ConvStack,
    image_dense: Dense,
    embedding: ParamId,
    fwd: LstmParams,
    bwd: LstmParams,
    fuse: Dense,
    head: Dense,
}

impl Text2BoxModel {
    pub fn new(config: Text2BoxConfig, seed: u64) -> Result<Self> {
        if config.vocab.len() < 2 || config.vocab[PAD] != PAD_WORD {
            return Err(invalid!("vocabulary must start with `{PAD_WORD}`"));
        }
        if config.max_steps == 0 {
            return Err(invalid!("max_steps must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = ConvStack::init(&mut store, "t2b.encoder", &config.encoder, &mut rng)?;
        let image_dense = Dense::init(
            &mut store,
            "t2b.image_dense",
            config.encoder.out_channels(),
            config.image_dim,
            &mut rng,
        );
        let v = config.vocab.len();
        let embedding = store.add(
            "t2b.embedding",
            glorot_uniform(&mut rng, &[v, config.embed_dim], v, config.embed_dim),
        );
        let fwd = LstmParams::init(&mut store, "t2b.lstm_fwd", config.embed_dim, config.hidden_size, &mut rng);
        let bwd = LstmParams::init(&mut store, "t2b.lstm_bwd", config.embed_dim, config.hidden_size, &mut rng);
        let fused_in = config.image_dim + 2 * config.hidden_size;
        let fuse = Dense::init(&mut store, "t2b.fuse", fused_in, config.fusion_dim, &mut rng);
        let head = Dense::init(&mut store, "t2b.head", config.fusion_dim, 4, &mut rng);
        Ok(Self {
            config,
            store,
            encoder,
            image_dense,
            embedding,
            fwd,
            bwd,
            fuse,
            head,
        })
    }

    /// Head parameters, for tests that pin the output.
    pub fn head(&self) -> Dense {
        self.head
    }

    pub fn image_tensor(&self, image: &Plane) -> Result<Tensor> {
        let s = self.config.encoder.image_size;
        if image.height != s || image.width != s {
            return Err(shape_err!(
                "text2box expects {s}x{s} images, got {}x{}",
                image.height,
                image.width
            ));
        }
        Tensor::new(vec![1, s, s], image.data.clone())
    }

    /// Records the forward pass; returns the four sigmoid outputs.
    pub fn forward(
        &self,
        g: &mut Graph,
        image: &Plane,
        tokens: &TokenSequence,
        dropout: &DropoutSpec,
        key: u64,
    ) -> Result<Var> {
        self.forward_with(&self.store, g, image, tokens, dropout, key)
    }

    /// Like [`Self::forward`] but reading weights from `store`, which must
    /// have this model's layout.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        image: &Plane,
        tokens: &TokenSequence,
        dropout: &DropoutSpec,
        key: u64,
    ) -> Result<Var> {
        if store.len() != self.store.len() {
            return Err(shape_err!("parameter store has {} tensors, model {}", store.len(), self.store.len()));
        }
        if tokens.padded().len() != self.config.max_steps {
            return Err(shape_err!("token sequence not padded to {}", self.config.max_steps));
        }
        if let Some(bad) = tokens.tokens().iter().find(|&&i| i >= self.config.vocab.len()) {
            return Err(invalid!("token id {bad} outside vocabulary"));
        }
        let x = g.constant(self.image_tensor(image)?);
        let feat = self.encoder.forward(g, store, x)?;
        let pooled = g.global_avg_pool(feat)?;
        let img = self.image_dense.forward(g, store, pooled)?;
        let img = g.relu(img);

        let table = g.param(store, self.embedding);
        let seq = tokens
            .tokens()
            .iter()
            .map(|&id| g.row(table, id))
            .collect::<Result<Vec<_>>>()?;
        let text = bilstm_encode(g, store, &seq, &self.fwd, &self.bwd, dropout, key)?;

        let joint = g.concat(&[img, text])?;
        let hidden = self.fuse.forward(g, store, joint)?;
        let hidden = g.relu(hidden);
        let out = self.head.forward(g, store, hidden)?;
        Ok(g.sigmoid(out))
    }

    pub fn raw_outputs(&self, image: &Plane, tokens: &TokenSequence) -> Result<[f64; 4]> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, image, tokens, &DropoutSpec::disabled(), 0)?;
        let d = g.value(out).data();
        Ok([d[0], d[1], d[2], d[3]])
    }

    pub fn predict_box(&self, image: &Plane, tokens: &TokenSequence) -> Result<NormalizedBox> {
        Ok(box_from_outputs(self.raw_outputs(image, tokens)?))
    }

    /// MSE loss of one example and its parameter gradients.
    pub fn loss_and_grads(
        &self,
        example: &T2bExample,
        dropout: &DropoutSpec,
        key: u64,
    ) -> Result<(f64, ParamGrads)> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, &example.image, &example.tokens, dropout, key)?;
        let loss = g.mse(out, &example.truth.to_array())?;
        let grads = g.backward(loss)?;
        let mut pg = ParamGrads::zeros_like(&self.store);
        g.accumulate_param_grads(&grads, &mut pg);
        Ok((g.value(loss).item(), pg))
    }

    /// Largest relative error between the tape gradient of one example's
    /// loss and central differences over the chosen coordinates.
    pub fn gradient_error(
        &self,
        example: &T2bExample,
        dropout: &DropoutSpec,
        key: u64,
        step: f64,
        coords: &Coordinates,
    ) -> Result<f64> {
        let (_, analytic) = self.loss_and_grads(example, dropout, key)?;
        let truth = example.truth.to_array();
        let eval = |store: &ParamStore| -> Result<f64> {
            let mut g = Graph::new();
            let out = self.forward_with(store, &mut g, &example.image, &example.tokens, dropout, key)?;
            let loss = g.mse(out, &truth)?;
            Ok(g.value(loss).item())
        };
        compare_with_finite_differences(&self.store, &analytic, &eval, step, coords)
    }

    pub fn checkpoint(&self, optimizer: Option<AdamState>) -> Checkpoint<Text2BoxConfig> {
        Checkpoint::new(CHECKPOINT_KIND, self.config.clone(), &self.store, optimizer)
    }

    /// Rebuilds the architecture from the checkpoint's config and loads its
    /// tensors.
    pub fn from_checkpoint(ckpt: &Checkpoint<Text2BoxConfig>) -> Result<Self> {
        ckpt.check_header(CHECKPOINT_KIND)?;
        let mut model = Self::new(ckpt.config.clone(), 0)?;
        model.store.load_entries(&ckpt.params)?;
        if let Some(opt) = &ckpt.optimizer {
            opt.validate(&model.store)?;
        }
        Ok(model)
    }
}

/// One training query: an image, a location phrase and the box it denotes.
#[derive(Clone, Debug, PartialEq)]
pub struct T2bExample {
    pub id: String,
    pub image: Plane,
    pub tokens: TokenSequence,
    pub truth: NormalizedBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct T2bHyper {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout: f64,
    pub recurrent_dropout: f64,
}

impl Default for T2bHyper {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.002,
            batch_size: 8,
            seed: 11,
            dropout: 0.25,
            recurrent_dropout: 0.1,
        }
    }
}

impl T2bHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(invalid!("epochs, batch size and lr must be positive"));
        }
        DropoutSpec::new(self.dropout, self.recurrent_dropout, true, self.seed).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct T2bEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct T2bOutcome {
    pub history: Vec<T2bEpoch>,
    pub best_epoch: usize,
    pub best_val_miou: f64,
    pub optimizer: AdamState,
}

/// Mean IOU of predictions over `examples` plus each example's IOU.
pub fn eval_text2box(model: &Text2BoxModel, examples: &[T2bExample]) -> Result<(f64, Vec<f64>)> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let ious = examples
        .iter()
        .map(|e| Ok(iou(&model.predict_box(&e.image, &e.tokens)?, &e.truth)))
        .collect::<Result<Vec<f64>>>()?;
    let m = ious.iter().sum::<f64>() / ious.len() as f64;
    Ok((m, ious))
}

/// Adam over shuffled minibatches of per-example MSE. After every epoch the
/// validation mIOU is measured; the model is left holding the parameters of
/// the best epoch (earliest on ties).
pub fn train_text2box(
    model: &mut Text2BoxModel,
    train: &[T2bExample],
    val: &[T2bExample],
    hyper: &T2bHyper,
    mut on_epoch: impl FnMut(&T2bEpoch),
) -> Result<T2bOutcome> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let dropout = DropoutSpec::new(hyper.dropout, hyper.recurrent_dropout, true, hyper.seed)?;
    let mut adam = AdamState::new(&model.store);
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(usize, f64, Vec<NamedTensor>)> = None;
    for epoch in 0..hyper.epochs {
        let mut loss_sum = 0.0;
        for batch in epoch_batches(train.len(), hyper.batch_size, hyper.seed, epoch as u64) {
            let step = adam.step;
            let mut total = ParamGrads::zeros_like(&model.store);
            let mut batch_loss = 0.0;
            for &i in &batch {
                let (loss, grads) =
                    model.loss_and_grads(&train[i], &dropout, dropout_key(step, i as u64))?;
                batch_loss += loss;
                total.add(&grads)?;
            }
            if !batch_loss.is_finite() || !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "text2box loss at epoch {epoch}, step {step}"
                )));
            }
            total.scale(1.0 / batch.len() as f64);
            adam_step(&mut model.store, &total, &mut adam, hyper.lr)?;
            loss_sum += batch_loss;
        }
        let (val_miou, _) = eval_text2box(model, val)?;
        let record = T2bEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_miou,
        };
        on_epoch(&record);
        if best.as_ref().is_none_or(|b| val_miou > b.1) {
            best = Some((epoch, val_miou, model.store.entries().to_vec()));
        }
        history.push(record);
    }
    let (best_epoch, best_val_miou, params) = best.expect("at least one epoch");
    model.store.load_entries(&params)?;
    Ok(T2bOutcome {
        history,
        best_epoch,
        best_val_miou,
        optimizer: adam,
    })
}

#[cfg(test)]
mod tests;
