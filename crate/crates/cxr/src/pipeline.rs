//! Training and evaluation stages with their on-disk outputs, and the
//! `run-all` pipeline that chains them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cxr_core::atlas::{mean_iou, Atlas, NormalizedBox};
use cxr_core::gain::{
    evaluate_classifier, mean_attention_in_box, train_classifier, Classifier, ClassifierConfig,
    GainEpoch, GainExample, GainHyper, GainOutcome, CHECKPOINT_KIND as CLASSIFIER_KIND, CLASS_NAMES,
    NUM_CLASSES,
};
use cxr_core::image::Plane;
use cxr_core::metrics::{pr_curve, PrPoint, ScoredSet};
use cxr_core::report::{Lexicon, ReportParse};
use cxr_core::synth::{ReportTemplates, SplitTag};
use cxr_core::text2box::{
    eval_text2box, train_text2box, T2bEpoch, T2bExample, T2bHyper, T2bOutcome, Text2BoxConfig,
    Text2BoxModel, CHECKPOINT_KIND as T2B_KIND,
};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Seeds};
use crate::dataset::{load_dataset, write_dataset, DatasetSummary, LoadedSample};
use crate::error::{Error, Result, StageContext};
use crate::files::{load_checkpoint, save_checkpoint, write_csv, write_json, write_jsonl};
use crate::imageio::{save_attention_triptych, save_box_overlay};
use crate::shipped;
use crate::stages::{
    build_queries, check_labels, gain_examples, parse_reports, truth_masks, MaskProvider,
    MaskSource, Query, CLASS_SIDES,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Lexicon, atlas and report templates a run works with.
#[derive(Clone, Debug)]
pub struct Resources {
    pub lexicon: Lexicon,
    pub atlas: Atlas,
    pub templates: ReportTemplates,
}

impl Resources {
    pub fn shipped() -> Result<Self> {
        Ok(Resources {
            lexicon: shipped::lexicon()?,
            atlas: shipped::atlas()?,
            templates: shipped::templates()?,
        })
    }

    /// The finding whose laterality is classified.
    pub fn finding(&self) -> &str {
        &self.templates.finding
    }
}

/// Progress sink.
pub type Log<'a> = &'a mut dyn FnMut(&str);

pub fn train_text2box_stage(
    config: Text2BoxConfig,
    init_seed: u64,
    hyper: &T2bHyper,
    train: &[T2bExample],
    val: &[T2bExample],
    dir: &Path,
    log: Log,
) -> Result<(Text2BoxModel, T2bOutcome)> {
    let mut model = Text2BoxModel::new(config, init_seed)?;
    let start = Instant::now();
    let outcome = train_text2box(&mut model, train, val, hyper, |e| {
        log(&format!(
            "text2box epoch {:>3}  train loss {:.6}  val mIOU {:.4}  ({:.0?})",
            e.epoch,
            e.train_loss,
            e.val_miou,
            start.elapsed()
        ))
    })?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &model.checkpoint(Some(outcome.optimizer.clone())))?;
    write_csv(&dir.join(METRICS_FILE), &outcome.history)?;
    Ok((model, outcome))
}

pub fn load_text2box(path: &Path) -> Result<Text2BoxModel> {
    Ok(Text2BoxModel::from_checkpoint(&load_checkpoint(path, T2B_KIND)?)?)
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    Ok(Classifier::from_checkpoint(&load_checkpoint::<ClassifierConfig>(path, CLASSIFIER_KIND)?)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IouRow {
    query: String,
    side: String,
    phrase: String,
    truth_x: f64,
    truth_y: f64,
    truth_w: f64,
    truth_h: f64,
    pred_x: f64,
    pred_y: f64,
    pred_w: f64,
    pred_h: f64,
    iou: f64,
}

/// mIOU over `queries`; writes per-query rows to `csv` and the first
/// `overlays` queries as PNGs when a directory is given.
pub fn eval_text2box_stage(
    model: &Text2BoxModel,
    queries: &[Query],
    csv: Option<&Path>,
    overlays: Option<(&Path, usize, usize)>,
) -> Result<f64> {
    let examples: Vec<T2bExample> = queries.iter().map(|q| q.example.clone()).collect();
    let (miou, ious) = eval_text2box(model, &examples)?;
    if let Some(path) = csv {
        let rows = queries
            .iter()
            .zip(&ious)
            .map(|(q, &iou)| {
                let p = model.predict_box(&q.example.image, &q.example.tokens)?;
                let t = q.example.truth;
                Ok(IouRow {
                    query: q.example.id.clone(),
                    side: q.side.name().to_string(),
                    phrase: q.labels.iter().map(|l| l.name()).collect::<Vec<_>>().join(" + "),
                    truth_x: t.x(),
                    truth_y: t.y(),
                    truth_w: t.w(),
                    truth_h: t.h(),
                    pred_x: p.x(),
                    pred_y: p.y(),
                    pred_w: p.w(),
                    pred_h: p.h(),
                    iou,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_csv(path, &rows)?;
    }
    if let Some((dir, n, scale)) = overlays {
        for q in queries.iter().take(n) {
            let p = model.predict_box(&q.example.image, &q.example.tokens)?;
            let path = dir.join(format!("{}.png", q.example.id));
            save_box_overlay(&path, &q.example.image, &q.example.truth, &p, scale)?;
        }
    }
    Ok(miou)
}

/// mIOU of an image-blind predictor: the mean training box of each query
/// phrase, or of all training queries for unseen phrases.
pub fn phrase_prior_miou(train: &[T2bExample], val: &[T2bExample]) -> Result<f64> {
    fn mean(boxes: &[NormalizedBox]) -> Result<NormalizedBox> {
        let mut m = [0.0; 4];
        for b in boxes {
            for (a, v) in m.iter_mut().zip(b.to_array()) {
                *a += v / boxes.len() as f64;
            }
        }
        Ok(NormalizedBox::try_from(m)?)
    }
    if train.is_empty() {
        return Err(Error::Invalid("no training queries".into()));
    }
    let mut by_phrase: BTreeMap<&[usize], Vec<NormalizedBox>> = BTreeMap::new();
    for e in train {
        by_phrase.entry(e.tokens.tokens()).or_default().push(e.truth);
    }
    let overall = mean(&train.iter().map(|e| e.truth).collect::<Vec<_>>())?;
    let priors = by_phrase
        .into_iter()
        .map(|(k, v)| Ok((k, mean(&v)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let pairs: Vec<_> = val
        .iter()
        .map(|e| (*priors.get(e.tokens.tokens()).unwrap_or(&overall), e.truth))
        .collect();
    Ok(mean_iou(&pairs)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ClassifierEpochRow {
    epoch: usize,
    classification: f64,
    mining: f64,
    pixel: f64,
    total: f64,
    val_auroc_right: f64,
    val_auroc_left: f64,
    val_mean_auroc: f64,
    val_loss: f64,
}

impl From<&GainEpoch> for ClassifierEpochRow {
    fn from(e: &GainEpoch) -> Self {
        ClassifierEpochRow {
            epoch: e.epoch,
            classification: e.classification,
            mining: e.mining,
            pixel: e.pixel,
            total: e.total,
            val_auroc_right: e.val_auroc[0],
            val_auroc_left: e.val_auroc[1],
            val_mean_auroc: e.val_mean_auroc,
            val_loss: e.val_loss,
        }
    }
}

/// Trains `model` in place, then writes its checkpoint and epoch metrics.
pub fn train_classifier_stage(
    name: &str,
    model: &mut Classifier,
    hyper: &GainHyper,
    train: &[GainExample],
    val: &[GainExample],
    dir: &Path,
    log: Log,
) -> Result<GainOutcome> {
    let start = Instant::now();
    let outcome = train_classifier(model, train, val, hyper, |e| {
        log(&format!(
            "{name} epoch {:>3}  cls {:.4}  mining {:.4}  pixel {:.4}  total {:.4}  val AUROC {:.4}  val loss {:.4}  ({:.0?})",
            e.epoch,
            e.classification,
            e.mining,
            e.pixel,
            e.total,
            e.val_mean_auroc,
            e.val_loss,
            start.elapsed()
        ))
    })?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &model.checkpoint(Some(outcome.optimizer.clone())))?;
    let rows: Vec<ClassifierEpochRow> = outcome.history.iter().map(Into::into).collect();
    write_csv(&dir.join(METRICS_FILE), &rows)?;
    Ok(outcome)
}

/// Ranking and localization metrics of a classifier on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub auroc: [f64; NUM_CLASSES],
    pub aupr: [f64; NUM_CLASSES],
    pub mean_auroc: f64,
    /// `None` when the split has no positive class with a truth box.
    pub attention_in_box: Option<f64>,
}

pub fn evaluate_stage(
    model: &Classifier,
    examples: &[GainExample],
    truth: &[[Option<Plane>; NUM_CLASSES]],
) -> Result<ClassifierReport> {
    let ev = evaluate_classifier(model, examples)?;
    let attention = match mean_attention_in_box(model, examples, truth) {
        Ok(v) => Some(v),
        Err(cxr_core::Error::Empty(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(ClassifierReport {
        auroc: ev.auroc,
        aupr: ev.aupr,
        mean_auroc: ev.mean_auroc(),
        attention_in_box: attention,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub split: String,
    pub metric: String,
    pub class: String,
    pub value: f64,
}

pub fn report_rows(model: &str, split: SplitTag, r: &ClassifierReport) -> Vec<MetricRow> {
    let row = |metric: &str, class: &str, value: f64| MetricRow {
        model: model.to_string(),
        split: split.name().to_string(),
        metric: metric.to_string(),
        class: class.to_string(),
        value,
    };
    let mut rows = Vec::new();
    for c in 0..NUM_CLASSES {
        rows.push(row("auroc", CLASS_NAMES[c], r.auroc[c]));
        rows.push(row("aupr", CLASS_NAMES[c], r.aupr[c]));
    }
    rows.push(row("mean_auroc", "all", r.mean_auroc));
    if let Some(a) = r.attention_in_box {
        rows.push(row("attention_in_box", "all", a));
    }
    rows
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PrRow {
    model: String,
    class: String,
    threshold: f64,
    precision: f64,
    recall: f64,
}

/// Precision/recall points of every class, one CSV for all.
pub fn write_pr_curves(path: &Path, named: &[(&str, &Classifier)], examples: &[GainExample]) -> Result<()> {
    let mut rows = Vec::new();
    for &(name, model) in named {
        let ev = evaluate_classifier(model, examples)?;
        for c in 0..NUM_CLASSES {
            let set = ScoredSet::new(
                CLASS_NAMES[c],
                ev.scores.iter().map(|s| s[c]).collect(),
                examples.iter().map(|e| e.labels[c]).collect(),
            )?;
            for PrPoint {
                threshold,
                precision,
                recall,
            } in pr_curve(&set)?.points
            {
                rows.push(PrRow {
                    model: name.to_string(),
                    class: CLASS_NAMES[c].to_string(),
                    threshold,
                    precision,
                    recall,
                });
            }
        }
    }
    write_csv(path, &rows)
}

/// Triptychs (guided attention, image with truth box, baseline attention)
/// for each positive class of the first `n` examples with a positive class.
pub fn cam_dump(
    guided: &Classifier,
    baseline: &Classifier,
    samples: &[&LoadedSample],
    examples: &[GainExample],
    n: usize,
    dir: &Path,
    scale: usize,
) -> Result<usize> {
    let mut written = 0;
    let positive = samples
        .iter()
        .zip(examples)
        .filter(|(_, e)| e.labels.iter().any(|&l| l))
        .take(n);
    for (s, e) in positive {
        for c in (0..NUM_CLASSES).filter(|&c| e.labels[c]) {
            let g = guided.gradcam(&e.image, c)?.map;
            let b = baseline.gradcam(&e.image, c)?.map;
            let truth = s.record.truth_box(CLASS_SIDES[c]);
            let path = dir.join(format!("{}-{}.png", e.id, CLASS_SIDES[c].name()));
            save_attention_triptych(&path, &e.image, &g, &b, truth.as_ref(), scale)?;
            written += 1;
        }
    }
    Ok(written)
}

/// Numbers a run reports; identical for identical configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub text2box: Text2BoxMetrics,
    pub baseline: ClassifierMetrics,
    pub gain: ClassifierMetrics,
    /// `gain / baseline − 1` of test attention-in-box.
    pub attention_improvement: Option<f64>,
    /// Share of consecutive GAIN epochs whose mean pixel term decreased.
    pub pixel_decrease_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Text2BoxMetrics {
    pub train_queries: usize,
    pub val_queries: usize,
    pub test_queries: usize,
    pub best_epoch: usize,
    pub val_miou: f64,
    pub test_miou: f64,
    /// Image-blind reference: see [`phrase_prior_miou`].
    pub phrase_prior_val_miou: f64,
    pub history: Vec<T2bEpoch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub best_epoch: usize,
    pub val: ClassifierReport,
    pub test: ClassifierReport,
    pub history: Vec<GainEpoch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPaths {
    pub text2box: PathBuf,
    pub baseline: PathBuf,
    pub gain: PathBuf,
}

/// Everything needed to reproduce and audit a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub seeds: Seeds,
    pub dataset: DatasetSummary,
    pub checkpoints: CheckpointPaths,
    pub metrics: RunMetrics,
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    pub fn seconds(&self, stage: &str) -> f64 {
        self.timings
            .iter()
            .filter(|t| t.stage == stage)
            .map(|t| t.seconds)
            .sum()
    }
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().stage(stage)?;
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

fn fraction_decreasing(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let down = values.windows(2).filter(|w| w[1] < w[0]).count();
    Some(down as f64 / (values.len() - 1) as f64)
}

fn take_first(mut v: Vec<Query>, limit: Option<usize>) -> Vec<Query> {
    if let Some(n) = limit {
        v.truncate(n);
    }
    v
}

/// Data generation, report parsing, text2box, baseline and GAIN training
/// and evaluation, with every output under `out`. Stops at the first
/// failing stage.
pub fn run_pipeline(config: &RunConfig, res: &Resources, out: &Path, log: Log) -> Result<RunManifest> {
    config.validate().stage("config")?;
    let seeds = config.seeds();
    let finding = res.finding().to_string();
    let mut timer = Timer { timings: Vec::new() };
    let scale = config.output.scale;

    let dataset = timer.run("gen-data", || {
        write_dataset(&out.join("data"), &config.dataset(), &res.atlas, &res.templates, &res.lexicon)
    })?;
    log(&format!(
        "dataset: {} samples ({} train, {} val, {} test)",
        dataset.samples, dataset.train, dataset.val, dataset.test
    ));
    let samples = timer.run("load-data", || load_dataset(&dataset.manifest))?;

    let parses = timer.run("parse", || {
        let records: Vec<_> = samples.iter().map(|s| s.record.clone()).collect();
        let parses = parse_reports(&records, &res.lexicon)?;
        write_jsonl(&out.join("parses.jsonl"), &parses)?;
        check_labels(&records, &parses, &finding)?;
        Ok(parses)
    })?;
    let split = |t: SplitTag| -> (Vec<&LoadedSample>, Vec<&ReportParse>) {
        samples.iter().zip(&parses).filter(|(s, _)| s.record.split == t).unzip()
    };
    let (train_s, train_p) = split(SplitTag::Train);
    let (val_s, val_p) = split(SplitTag::Val);
    let (test_s, test_p) = split(SplitTag::Test);

    let t2b_config = config.text2box_model();
    let t2b_dir = out.join("text2box");
    let (t2b, t2b_metrics) = timer.run("text2box", || {
        let train_q = take_first(
            build_queries(&train_s, &train_p, &finding, &t2b_config)?,
            config.text2box.max_train_queries,
        );
        let val_q = take_first(
            build_queries(&val_s, &val_p, &finding, &t2b_config)?,
            config.text2box.max_val_queries,
        );
        let test_q = build_queries(&test_s, &test_p, &finding, &t2b_config)?;
        log(&format!(
            "text2box queries: {} train, {} val, {} test",
            train_q.len(),
            val_q.len(),
            test_q.len()
        ));
        let ex = |q: &[Query]| q.iter().map(|q| q.example.clone()).collect::<Vec<_>>();
        let (train_e, val_e) = (ex(&train_q), ex(&val_q));
        let (model, outcome) = train_text2box_stage(
            t2b_config.clone(),
            seeds.text2box_init,
            &config.text2box_hyper(),
            &train_e,
            &val_e,
            &t2b_dir,
            log,
        )?;
        let val_miou = eval_text2box_stage(&model, &val_q, Some(&t2b_dir.join("val_ious.csv")), None)?;
        let test_miou = eval_text2box_stage(
            &model,
            &test_q,
            Some(&t2b_dir.join("test_ious.csv")),
            Some((&t2b_dir.join("overlays"), config.output.overlays, scale)),
        )?;
        let metrics = Text2BoxMetrics {
            train_queries: train_q.len(),
            val_queries: val_q.len(),
            test_queries: test_q.len(),
            best_epoch: outcome.best_epoch,
            val_miou,
            test_miou,
            phrase_prior_val_miou: phrase_prior_miou(&train_e, &val_e)?,
            history: outcome.history,
        };
        log(&format!(
            "text2box: val mIOU {:.4} (phrase prior {:.4}), test mIOU {:.4}",
            val_miou, metrics.phrase_prior_val_miou, test_miou
        ));
        Ok((model, metrics))
    })?;

    let classifier_config = config.classifier_model();
    let grid = classifier_config.encoder.grid_size();
    let (train_g, val_g, test_g, test_truth) = timer.run("masks", || {
        let provider = match config.gain.masks {
            MaskSource::Predicted => MaskProvider::Predicted(&t2b),
            MaskSource::Atlas => MaskProvider::Atlas(&res.atlas),
            MaskSource::Truth => MaskProvider::Truth,
            MaskSource::None => MaskProvider::None,
        };
        let train_g = gain_examples(&train_s, &train_p, &finding, grid, &provider)?;
        let val_g = gain_examples(&val_s, &val_p, &finding, grid, &provider)?;
        let test_g = gain_examples(&test_s, &test_p, &finding, grid, &MaskProvider::None)?;
        Ok((train_g, val_g, test_g, truth_masks(&test_s, grid)))
    })?;
    let val_truth = truth_masks(&val_s, grid);

    let base_dir = out.join("baseline");
    let (baseline, baseline_metrics) = timer.run("baseline", || {
        let mut model = Classifier::new(classifier_config.clone(), seeds.classifier_init)?;
        let outcome = train_classifier_stage(
            "baseline",
            &mut model,
            &config.baseline_hyper(),
            &train_g,
            &val_g,
            &base_dir,
            log,
        )?;
        let metrics = ClassifierMetrics {
            best_epoch: outcome.best_epoch,
            val: evaluate_stage(&model, &val_g, &val_truth)?,
            test: evaluate_stage(&model, &test_g, &test_truth)?,
            history: outcome.history,
        };
        Ok((model, metrics))
    })?;

    let gain_dir = out.join("gain");
    let (guided, gain_metrics) = timer.run("gain", || {
        let mut model = baseline.clone();
        let outcome = train_classifier_stage(
            "gain",
            &mut model,
            &config.gain_hyper(),
            &train_g,
            &val_g,
            &gain_dir,
            log,
        )?;
        let metrics = ClassifierMetrics {
            best_epoch: outcome.best_epoch,
            val: evaluate_stage(&model, &val_g, &val_truth)?,
            test: evaluate_stage(&model, &test_g, &test_truth)?,
            history: outcome.history,
        };
        Ok((model, metrics))
    })?;

    timer.run("eval", || {
        let mut rows = Vec::new();
        for (name, m) in [("baseline", &baseline_metrics), ("gain", &gain_metrics)] {
            rows.extend(report_rows(name, SplitTag::Val, &m.val));
            rows.extend(report_rows(name, SplitTag::Test, &m.test));
        }
        write_csv(&out.join("eval").join(METRICS_FILE), &rows)?;
        write_pr_curves(
            &out.join("eval").join("pr_curves.csv"),
            &[("baseline", &baseline), ("gain", &guided)],
            &test_g,
        )?;
        cam_dump(&guided, &baseline, &test_s, &test_g, config.output.cams, &out.join("cams"), scale)?;
        Ok(())
    })?;

    let attention_improvement = match (
        gain_metrics.test.attention_in_box,
        baseline_metrics.test.attention_in_box,
    ) {
        (Some(g), Some(b)) if b > 0.0 => Some(g / b - 1.0),
        _ => None,
    };
    let pixels: Vec<f64> = gain_metrics.history.iter().map(|e| e.pixel).collect();
    let manifest = RunManifest {
        config: config.clone(),
        seeds,
        dataset,
        checkpoints: CheckpointPaths {
            text2box: t2b_dir.join(CHECKPOINT_FILE),
            baseline: base_dir.join(CHECKPOINT_FILE),
            gain: gain_dir.join(CHECKPOINT_FILE),
        },
        metrics: RunMetrics {
            text2box: t2b_metrics,
            baseline: baseline_metrics,
            gain: gain_metrics,
            attention_improvement,
            pixel_decrease_fraction: fraction_decreasing(&pixels),
        },
        timings: timer.timings,
    };
    write_json(&out.join(RUN_MANIFEST_FILE), &manifest).stage("manifest")?;
    Ok(manifest)
}
