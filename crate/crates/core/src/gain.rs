//! Opacity classifier with Grad-CAM attention, soft masking and the guided
//! attention objective. The unguided baseline is the same model trained on
//! the classification term alone.
//!
//! Grad-CAM channel weights and the soft masks are computed from the current
//! weights and then held constant: the mining term differentiates through
//! the second forward pass on the masked image, and the pixel term through
//! the weighted channel sum, but neither through the gradient inside
//! Grad-CAM.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::image::Plane;
use crate::math;
use crate::metrics::{attention_in_box, auroc, pr_curve, ScoredSet};
use crate::nn::gradcheck::{compare_with_finite_differences, Coordinates};
use crate::nn::{
    adam_step, epoch_batches, AdamState, Checkpoint, ConvStack, ConvStackConfig, Dense, Graph,
    NamedTensor, ParamGrads, ParamStore, Tensor, Var,
};

pub const CHECKPOINT_KIND: &str = "classifier";
pub const NUM_CLASSES: usize = 2;
/// Class order of the score vector.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["right opacity", "left opacity"];

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub encoder: ConvStackConfig,
}

/// Conv backbone, global average pooling and one sigmoid score per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub store: ParamStore,
    backbone: ConvStack,
    head: Dense,
}

/// Nodes of one recorded classifier pass.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierPass {
    /// Final conv activation `[C, G, G]`.
    pub features: Var,
    /// Sigmoid scores `[NUM_CLASSES]`.
    pub scores: Var,
}

impl Classifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = ConvStack::init(&mut store, "cls.backbone", &config.encoder, &mut rng)?;
        let head = Dense::init(
            &mut store,
            "cls.head",
            config.encoder.out_channels(),
            NUM_CLASSES,
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            backbone,
            head,
        })
    }

    pub fn head(&self) -> Dense {
        self.head
    }

    pub fn grid_size(&self) -> usize {
        self.config.encoder.grid_size()
    }

    pub fn image_size(&self) -> usize {
        self.config.encoder.image_size
    }

    fn check_image(&self, image: &Plane) -> Result<()> {
        let s = self.image_size();
        if image.height != s || image.width != s {
            return Err(shape_err!(
                "classifier expects {s}x{s} images, got {}x{}",
                image.height,
                image.width
            ));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, image: &Plane) -> Result<ClassifierPass> {
        self.forward_with(&self.store, g, image)
    }

    /// Like [`Self::forward`] with weights read from `store`.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        image: &Plane,
    ) -> Result<ClassifierPass> {
        if store.len() != self.store.len() {
            return Err(shape_err!("parameter store has {} tensors, model {}", store.len(), self.store.len()));
        }
        self.check_image(image)?;
        let s = self.image_size();
        let x = g.constant(Tensor::new(vec![1, s, s], image.data.clone())?);
        let features = self.backbone.forward(g, store, x)?;
        let pooled = g.global_avg_pool(features)?;
        let logits = self.head.forward(g, store, pooled)?;
        let scores = g.sigmoid(logits);
        Ok(ClassifierPass { features, scores })
    }

    pub fn scores(&self, image: &Plane) -> Result<[f64; NUM_CLASSES]> {
        let mut g = Graph::new();
        let pass = self.forward(&mut g, image)?;
        let d = g.value(pass.scores).data();
        Ok([d[0], d[1]])
    }

    /// Grad-CAM of `class` on the final conv grid.
    pub fn gradcam(&self, image: &Plane, class: usize) -> Result<AttentionMap> {
        check_class(class)?;
        let mut g = Graph::new();
        let pass = self.forward(&mut g, image)?;
        let score = g.slice(pass.scores, class, 1)?;
        let cam = grad_cam(&mut g, pass.features, score)?;
        cam.to_map(&g)
    }

    pub fn checkpoint(&self, optimizer: Option<AdamState>) -> Checkpoint<ClassifierConfig> {
        Checkpoint::new(CHECKPOINT_KIND, self.config.clone(), &self.store, optimizer)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<ClassifierConfig>) -> Result<Self> {
        ckpt.check_header(CHECKPOINT_KIND)?;
        let mut model = Self::new(ckpt.config.clone(), 0)?;
        model.store.load_entries(&ckpt.params)?;
        if let Some(opt) = &ckpt.optimizer {
            opt.validate(&model.store)?;
        }
        Ok(model)
    }
}

fn check_class(class: usize) -> Result<()> {
    if class >= NUM_CLASSES {
        return Err(invalid!("class index {class} outside 0..{NUM_CLASSES}"));
    }
    Ok(())
}

/// Tape nodes of one Grad-CAM computation.
#[derive(Clone, Debug)]
pub struct CamNodes {
    /// Channel weights, constants on the tape.
    pub weights: Vec<f64>,
    /// `ReLU(Σ_k w_k A_k)`, `[G, G]`.
    pub raw: Var,
    /// Min-max normalized `raw`; all zeros when `raw` is constant.
    pub normalized: Var,
}

impl CamNodes {
    pub fn to_map(&self, g: &Graph) -> Result<AttentionMap> {
        let shape = g.value(self.raw).shape();
        let (h, w) = (shape[0], shape[1]);
        Ok(AttentionMap {
            raw: Plane::new(h, w, g.value(self.raw).data().to_vec())?,
            map: Plane::new(h, w, g.value(self.normalized).data().to_vec())?,
        })
    }
}

/// Grad-CAM of a one-element `score` with respect to `features: [C, H, W]`.
pub fn grad_cam(g: &mut Graph, features: Var, score: Var) -> Result<CamNodes> {
    let grad = g.grad_of(score, features)?;
    let weights = channel_means(&grad)?;
    cam_with_weights(g, features, weights)
}

/// Grad-CAM with given channel weights.
pub fn cam_with_weights(g: &mut Graph, features: Var, weights: Vec<f64>) -> Result<CamNodes> {
    let sum = g.channel_weighted_sum(features, &weights)?;
    let raw = g.relu(sum);
    let normalized = g.min_max_normalize(raw);
    Ok(CamNodes {
        weights,
        raw,
        normalized,
    })
}

fn channel_means(t: &Tensor) -> Result<Vec<f64>> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(shape_err!("expected [C, H, W], got {s:?}"));
    }
    let plane = s[1] * s[2];
    Ok(t
        .data()
        .chunks(plane)
        .map(|c| c.iter().sum::<f64>() / plane as f64)
        .collect())
}

/// Class attention on the final conv grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    /// Values in `[0, 1]`.
    pub map: Plane,
    /// Before normalization.
    pub raw: Plane,
}

impl AttentionMap {
    /// Bilinear upsampling of the normalized map.
    pub fn upsample(&self, size: usize) -> Plane {
        self.map.resize_bilinear(size, size)
    }
}

/// `I ⊙ (1 − sigmoid(k (A − τ)))` with `attention` already at image size.
pub fn soft_mask(image: &Plane, attention: &Plane, k: f64, tau: f64) -> Result<Plane> {
    if !image.same_grid(attention) {
        return Err(shape_err!(
            "attention {}x{} vs image {}x{}",
            attention.height,
            attention.width,
            image.height,
            image.width
        ));
    }
    let data = image
        .data
        .iter()
        .zip(&attention.data)
        .map(|(i, a)| i * (1.0 - math::sigmoid(k * (a - tau))))
        .collect();
    Plane::new(image.height, image.width, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainHyper {
    pub lambda: f64,
    pub alpha: f64,
    pub omega: f64,
    /// Soft-mask steepness.
    pub k: f64,
    /// Soft-mask threshold.
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GainHyper {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            alpha: 1.0,
            omega: 10.0,
            k: 100.0,
            tau: 0.5,
            lr: 0.001,
            epochs: 50,
            batch_size: 32,
            seed: 13,
        }
    }
}

impl GainHyper {
    /// Plain cross-entropy training. At lr 0.01 this network collapses to
    /// a constant output within the first epoch, so the default is lower.
    pub fn baseline() -> Self {
        Self {
            lambda: 1.0,
            alpha: 0.0,
            omega: 0.0,
            lr: 0.003,
            epochs: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("alpha", self.alpha), ("omega", self.omega)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid!("{name} must be a finite non-negative weight, got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(invalid!("k must be positive, got {}", self.k));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(invalid!("epochs, batch size and lr must be positive"));
        }
        Ok(())
    }

    /// Only the classification term contributes.
    pub fn is_unguided(&self) -> bool {
        self.alpha == 0.0 && self.omega == 0.0
    }
}

/// One training image with its class labels and, per positive class, an
/// optional target mask on the conv grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GainExample {
    pub id: String,
    pub image: Plane,
    pub labels: [bool; NUM_CLASSES],
    pub masks: [Option<Plane>; NUM_CLASSES],
}

impl GainExample {
    fn label_values(&self) -> [f64; NUM_CLASSES] {
        self.labels.map(|l| if l { 1.0 } else { 0.0 })
    }

    fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_CLASSES).filter(|&c| self.labels[c])
    }
}

/// Unweighted terms of the objective and its total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainLossTerms {
    /// Mean BCE of the scores on the original image.
    pub classification: f64,
    /// Mean masked-image score over ground-truth classes.
    pub mining: f64,
    /// Mean over ground-truth classes with a mask of the mean squared
    /// difference between attention and mask.
    pub pixel: f64,
    /// `λ·classification + α·mining + ω·pixel`.
    pub total: f64,
    /// Ground-truth classes in the mining sum.
    pub n_mining: usize,
    /// Ground-truth classes with a mask.
    pub n_pixel: usize,
}

impl GainLossTerms {
    pub fn weighted(&self, hyper: &GainHyper) -> [f64; 3] {
        [
            hyper.lambda * self.classification,
            hyper.alpha * self.mining,
            hyper.omega * self.pixel,
        ]
    }
}

/// Grad-CAM weights and masked images for each ground-truth class, fixed
/// before the objective is differentiated.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionInputs {
    pub weights: [Option<Vec<f64>>; NUM_CLASSES],
    pub masked: [Option<Plane>; NUM_CLASSES],
}

/// A recorded objective.
pub struct Objective {
    pub graph: Graph,
    pub total: Var,
    pub terms: GainLossTerms,
    pub inputs: AttentionInputs,
}

/// Records the objective for one example. With `frozen` the Grad-CAM
/// weights and masked images are taken from it instead of this pass.
pub fn record_objective(
    model: &Classifier,
    store: &ParamStore,
    ex: &GainExample,
    hyper: &GainHyper,
    frozen: Option<&AttentionInputs>,
) -> Result<Objective> {
    record(model, store, ex, hyper, frozen, !hyper.is_unguided())
}

fn record(
    model: &Classifier,
    store: &ParamStore,
    ex: &GainExample,
    hyper: &GainHyper,
    frozen: Option<&AttentionInputs>,
    guided: bool,
) -> Result<Objective> {
    let grid = model.grid_size();
    for m in ex.masks.iter().flatten() {
        if m.height != grid || m.width != grid {
            return Err(shape_err!("mask {}x{} on a {grid}x{grid} grid", m.height, m.width));
        }
    }
    let mut g = Graph::new();
    let pass = model.forward_with(store, &mut g, &ex.image)?;
    let labels = ex.label_values();
    let cls = g.bce(pass.scores, &labels)?;

    let mut inputs = AttentionInputs {
        weights: [None, None],
        masked: [None, None],
    };
    let zero = g.constant(Tensor::scalar(0.0));
    let (mut mining, mut pixel) = (zero, zero);
    let (mut n_mining, mut n_pixel) = (0, 0);
    if guided {
        let mut mining_sum = None;
        let mut pixel_sum = None;
        for c in ex.positives() {
            let cam = match frozen.and_then(|f| f.weights[c].clone()) {
                Some(w) => cam_with_weights(&mut g, pass.features, w)?,
                None => {
                    let score = g.slice(pass.scores, c, 1)?;
                    grad_cam(&mut g, pass.features, score)?
                }
            };
            let masked = match frozen.and_then(|f| f.masked[c].clone()) {
                Some(m) => m,
                None => {
                    let map = cam.to_map(&g)?;
                    soft_mask(&ex.image, &map.upsample(model.image_size()), hyper.k, hyper.tau)?
                }
            };
            let second = model.forward_with(store, &mut g, &masked)?;
            let s = g.slice(second.scores, c, 1)?;
            mining_sum = Some(match mining_sum {
                None => s,
                Some(acc) => g.add(acc, s)?,
            });
            n_mining += 1;
            if let Some(h) = &ex.masks[c] {
                let d = g.mse(cam.normalized, &h.data)?;
                pixel_sum = Some(match pixel_sum {
                    None => d,
                    Some(acc) => g.add(acc, d)?,
                });
                n_pixel += 1;
            }
            inputs.weights[c] = Some(cam.weights);
            inputs.masked[c] = Some(masked);
        }
        if let Some(m) = mining_sum {
            mining = g.scale(m, 1.0 / n_mining as f64);
        }
        if let Some(p) = pixel_sum {
            pixel = g.scale(p, 1.0 / n_pixel as f64);
        }
    }
    let a = g.scale(cls, hyper.lambda);
    let b = g.scale(mining, hyper.alpha);
    let c = g.scale(pixel, hyper.omega);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    let terms = GainLossTerms {
        classification: g.value(cls).item(),
        mining: g.value(mining).item(),
        pixel: g.value(pixel).item(),
        total: g.value(total).item(),
        n_mining,
        n_pixel,
    };
    Ok(Objective {
        graph: g,
        total,
        terms,
        inputs,
    })
}

/// Loss terms for one example.
pub fn gain_loss(model: &Classifier, ex: &GainExample, hyper: &GainHyper) -> Result<GainLossTerms> {
    Ok(record_objective(model, &model.store, ex, hyper, None)?.terms)
}

/// Loss terms and parameter gradients of the total for one example.
pub fn gain_loss_and_grads(
    model: &Classifier,
    ex: &GainExample,
    hyper: &GainHyper,
) -> Result<(GainLossTerms, ParamGrads)> {
    grads_of(record_objective(model, &model.store, ex, hyper, None)?, &model.store)
}

fn grads_of(obj: Objective, store: &ParamStore) -> Result<(GainLossTerms, ParamGrads)> {
    let grads = obj.graph.backward(obj.total)?;
    let mut pg = ParamGrads::zeros_like(store);
    obj.graph.accumulate_param_grads(&grads, &mut pg);
    Ok((obj.terms, pg))
}

/// Largest relative error between the tape gradient of one example's
/// objective and central differences with the attention inputs frozen.
pub fn gain_gradient_error(
    model: &Classifier,
    ex: &GainExample,
    hyper: &GainHyper,
    step: f64,
    coords: &Coordinates,
) -> Result<f64> {
    let obj = record_objective(model, &model.store, ex, hyper, None)?;
    let frozen = obj.inputs.clone();
    let (_, analytic) = grads_of(obj, &model.store)?;
    let eval = |store: &ParamStore| -> Result<f64> {
        Ok(record_objective(model, store, ex, hyper, Some(&frozen))?.terms.total)
    };
    compare_with_finite_differences(&model.store, &analytic, &eval, step, coords)
}

/// Epoch means of the loss terms and validation scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainEpoch {
    pub epoch: usize,
    pub classification: f64,
    pub mining: f64,
    pub pixel: f64,
    pub total: f64,
    pub val_auroc: [f64; NUM_CLASSES],
    pub val_mean_auroc: f64,
    /// Mean objective on the validation split.
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainOutcome {
    pub history: Vec<GainEpoch>,
    pub best_epoch: usize,
    pub best_val_mean_auroc: f64,
    pub optimizer: AdamState,
}

/// Adam over shuffled minibatches of the objective. After every epoch the
/// mean validation AUROC and objective are measured; the model is left
/// holding the parameters of the epoch with the highest AUROC, ties going to
/// the lower validation objective and then to the earlier epoch.
pub fn train_classifier(
    model: &mut Classifier,
    train: &[GainExample],
    val: &[GainExample],
    hyper: &GainHyper,
    mut on_epoch: impl FnMut(&GainEpoch),
) -> Result<GainOutcome> {
    train_impl(model, train, val, hyper, !hyper.is_unguided(), &mut on_epoch)
}

fn train_impl(
    model: &mut Classifier,
    train: &[GainExample],
    val: &[GainExample],
    hyper: &GainHyper,
    guided: bool,
    on_epoch: &mut dyn FnMut(&GainEpoch),
) -> Result<GainOutcome> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut adam = AdamState::new(&model.store);
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(usize, f64, f64, Vec<NamedTensor>)> = None;
    for epoch in 0..hyper.epochs {
        let mut sums = [0.0; 4];
        for batch in epoch_batches(train.len(), hyper.batch_size, hyper.seed, epoch as u64) {
            let mut total = ParamGrads::zeros_like(&model.store);
            for &i in &batch {
                let obj = record(model, &model.store, &train[i], hyper, None, guided)?;
                let (terms, grads) = grads_of(obj, &model.store)?;
                check_terms(&terms, &train[i].id, epoch)?;
                sums[0] += terms.classification;
                sums[1] += terms.mining;
                sums[2] += terms.pixel;
                sums[3] += terms.total;
                total.add(&grads)?;
            }
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}, step {}", adam.step)));
            }
            total.scale(1.0 / batch.len() as f64);
            adam_step(&mut model.store, &total, &mut adam, hyper.lr)?;
        }
        let n = train.len() as f64;
        let eval = evaluate_classifier(model, val)?;
        let mut val_loss = 0.0;
        for ex in val {
            val_loss += record(model, &model.store, ex, hyper, None, guided)?.terms.total;
        }
        let val_loss = val_loss / val.len() as f64;
        let record = GainEpoch {
            epoch,
            classification: sums[0] / n,
            mining: sums[1] / n,
            pixel: sums[2] / n,
            total: sums[3] / n,
            val_auroc: eval.auroc,
            val_mean_auroc: eval.mean_auroc(),
            val_loss,
        };
        on_epoch(&record);
        let better = best.as_ref().is_none_or(|b| {
            record.val_mean_auroc > b.1 || (record.val_mean_auroc == b.1 && record.val_loss < b.2)
        });
        if better {
            best = Some((epoch, record.val_mean_auroc, record.val_loss, model.store.entries().to_vec()));
        }
        history.push(record);
    }
    let (best_epoch, best_val_mean_auroc, _, params) = best.expect("at least one epoch");
    model.store.load_entries(&params)?;
    Ok(GainOutcome {
        history,
        best_epoch,
        best_val_mean_auroc,
        optimizer: adam,
    })
}

fn check_terms(t: &GainLossTerms, id: &str, epoch: usize) -> Result<()> {
    for (name, v) in [
        ("classification", t.classification),
        ("attention mining", t.mining),
        ("pixel", t.pixel),
        ("total", t.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} term on `{id}` at epoch {epoch}")));
        }
    }
    Ok(())
}

/// Scores and ranking metrics over a labelled split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEval {
    pub scores: Vec<[f64; NUM_CLASSES]>,
    pub auroc: [f64; NUM_CLASSES],
    pub aupr: [f64; NUM_CLASSES],
}

impl ClassifierEval {
    pub fn mean_auroc(&self) -> f64 {
        self.auroc.iter().sum::<f64>() / NUM_CLASSES as f64
    }
}

pub fn evaluate_classifier(model: &Classifier, examples: &[GainExample]) -> Result<ClassifierEval> {
    let scores = examples
        .iter()
        .map(|e| model.scores(&e.image))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ClassifierEval {
        scores,
        auroc: [0.0; NUM_CLASSES],
        aupr: [0.0; NUM_CLASSES],
    };
    for c in 0..NUM_CLASSES {
        let set = ScoredSet::new(
            CLASS_NAMES[c],
            out.scores.iter().map(|s| s[c]).collect(),
            examples.iter().map(|e| e.labels[c]).collect(),
        )?;
        out.auroc[c] = auroc(&set)?;
        out.aupr[c] = pr_curve(&set)?.area;
    }
    Ok(out)
}

/// Mean `attention_in_box` of the Grad-CAM map over every (example,
/// positive class) pair that has a truth mask on the conv grid.
pub fn mean_attention_in_box(
    model: &Classifier,
    examples: &[GainExample],
    truth: &[[Option<Plane>; NUM_CLASSES]],
) -> Result<f64> {
    if examples.len() != truth.len() {
        return Err(shape_err!("{} examples, {} truth entries", examples.len(), truth.len()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ex, masks) in examples.iter().zip(truth) {
        for c in ex.positives() {
            if let Some(h) = &masks[c] {
                sum += attention_in_box(&model.gradcam(&ex.image, c)?.map, h)?;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Empty("positive classes with truth masks"));
    }
    Ok(sum / n as f64)
}
