use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cxr::config::{RunConfig, Seeds};
use cxr::dataset::{load_dataset, parse_split, write_dataset, LoadedSample};
use cxr::error::{Error, Result};
use cxr::files::{load_atlas, load_lexicon, load_templates, read_text, to_jsonl, write_csv, write_json};
use cxr::imageio::save_mask;
use cxr::pipeline::{
    cam_dump, eval_text2box_stage, evaluate_stage, load_classifier, load_text2box, report_rows,
    run_pipeline, train_classifier_stage, train_text2box_stage, Resources, RUN_MANIFEST_FILE,
};
use cxr::shipped;
use cxr::stages::{build_queries, gain_examples, parse_reports, truth_masks, MaskProvider, MaskSource, CLASS_SIDES};
use cxr_core::gain::{Classifier, GainHyper, NUM_CLASSES};
use cxr_core::nn::ConvStackConfig;
use cxr_core::report::{parse_report, ReportParse};
use cxr_core::synth::{DatasetConfig, SplitTag};
use cxr_core::text2box::{T2bHyper, Text2BoxConfig};

#[derive(Parser)]
#[command(name = "cxr", version, about = "Synthetic chest X-ray report labeling, box regression and attention-guided classification")]
struct Cli {
    #[command(flatten)]
    resources: ResourceArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ResourceArgs {
    /// Lexicon TOML (defaults to the shipped one).
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    /// Atlas TOML (defaults to the shipped one).
    #[arg(long, global = true)]
    atlas: Option<PathBuf>,
    /// Report templates TOML (defaults to the shipped ones).
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
}

impl ResourceArgs {
    fn load(&self) -> Result<Resources> {
        Ok(Resources {
            lexicon: match &self.lexicon {
                Some(p) => load_lexicon(p)?,
                None => shipped::lexicon()?,
            },
            atlas: match &self.atlas {
                Some(p) => load_atlas(p)?,
                None => shipped::atlas()?,
            },
            templates: match &self.templates {
                Some(p) => load_templates(p)?,
                None => shipped::templates()?,
            },
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom images, reports and a manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
    /// Parse reports into finding records (JSONL).
    Parse {
        /// Parse every report of a manifest.
        #[arg(long, conflicts_with_all = ["text", "input"])]
        manifest: Option<PathBuf>,
        /// Parse one report given inline.
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        /// Parse a text file holding one report.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a lexicon and print its coverage.
    CheckLexicon,
    /// Train the text2box regressor.
    TrainT2b {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = T2bHyper::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = T2bHyper::default().lr)]
        lr: f64,
        #[arg(long, default_value_t = T2bHyper::default().batch_size)]
        batch_size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        max_train: Option<usize>,
        #[arg(long)]
        max_val: Option<usize>,
    },
    /// mIOU of a text2box checkpoint on one split.
    EvalT2b {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Per-query IOU table.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Directory for truth (red) / prediction (green) overlays.
        #[arg(long)]
        overlays: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        limit: usize,
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// Write the guidance mask of each positive class as PNG.
    ExportMasks {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = MaskArg::Predicted)]
        masks: MaskArg,
        /// Text2box checkpoint for predicted masks.
        #[arg(long)]
        t2b: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value_t = 8)]
        grid: usize,
        #[arg(long, default_value_t = 8)]
        scale: usize,
    },
    /// Train the plain cross-entropy classifier.
    TrainBaseline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = GainHyper::baseline().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = GainHyper::baseline().lr)]
        lr: f64,
        #[arg(long, default_value_t = GainHyper::baseline().batch_size)]
        batch_size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train with the attention-guided objective.
    TrainGain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Classifier checkpoint to fine-tune; a fresh model when absent.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MaskArg::Predicted)]
        masks: MaskArg,
        /// Text2box checkpoint for predicted masks.
        #[arg(long)]
        t2b: Option<PathBuf>,
        #[arg(long, default_value_t = GainHyper::default().lambda)]
        lambda: f64,
        #[arg(long, default_value_t = GainHyper::default().alpha)]
        alpha: f64,
        #[arg(long, default_value_t = GainHyper::default().omega)]
        omega: f64,
        #[arg(long, default_value_t = GainHyper::default().k)]
        k: f64,
        #[arg(long, default_value_t = GainHyper::default().tau)]
        tau: f64,
        #[arg(long, default_value_t = GainHyper::default().lr)]
        lr: f64,
        #[arg(long, default_value_t = GainHyper::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = GainHyper::default().batch_size)]
        batch_size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// AUROC, AUPR and attention-in-box of a classifier checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Name written in the model column.
        #[arg(long, default_value = "model")]
        name: String,
        /// Metrics CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attention triptychs: guided map, image with truth box, baseline map.
    CamDump {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        limit: usize,
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// Every stage from data generation to evaluation.
    RunAll {
        /// Run config TOML, or `smoke` / `full` for the shipped ones.
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Predicted,
    Atlas,
    Truth,
    None,
}

impl From<MaskArg> for MaskSource {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Predicted => MaskSource::Predicted,
            MaskArg::Atlas => MaskSource::Atlas,
            MaskArg::Truth => MaskSource::Truth,
            MaskArg::None => MaskSource::None,
        }
    }
}

fn log_line(s: &str) {
    eprintln!("{s}");
}

struct Data {
    samples: Vec<LoadedSample>,
    parses: Vec<ReportParse>,
}

impl Data {
    fn load(manifest: &Path, res: &Resources) -> Result<Self> {
        let samples = load_dataset(manifest)?;
        let records: Vec<_> = samples.iter().map(|s| s.record.clone()).collect();
        let parses = parse_reports(&records, &res.lexicon)?;
        Ok(Data { samples, parses })
    }

    fn split(&self, t: SplitTag) -> (Vec<&LoadedSample>, Vec<&ReportParse>) {
        self.samples
            .iter()
            .zip(&self.parses)
            .filter(|(s, _)| s.record.split == t)
            .unzip()
    }

    fn image_size(&self) -> usize {
        self.samples[0].image.height
    }
}

fn encoder(image_size: usize) -> ConvStackConfig {
    ConvStackConfig {
        image_size,
        ..ConvStackConfig::default()
    }
}

fn provider<'a>(
    masks: MaskArg,
    t2b: &'a Option<cxr_core::text2box::Text2BoxModel>,
    res: &'a Resources,
) -> Result<MaskProvider<'a>> {
    Ok(match masks {
        MaskArg::Predicted => MaskProvider::Predicted(
            t2b.as_ref()
                .ok_or_else(|| Error::Invalid("predicted masks need --t2b".into()))?,
        ),
        MaskArg::Atlas => MaskProvider::Atlas(&res.atlas),
        MaskArg::Truth => MaskProvider::Truth,
        MaskArg::None => MaskProvider::None,
    })
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => cxr::files::write_text(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Invalid(format!("stdout: {e}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let res = cli.resources.load()?;
    let finding = res.finding().to_string();
    let mut log = |s: &str| log_line(s);
    match cli.command {
        Command::GenData { out, n, seed, image_size } => {
            let config = DatasetConfig {
                n,
                seed: Seeds::from_master(seed).data,
                image_size,
                ..DatasetConfig::default()
            };
            let summary = write_dataset(&out, &config, &res.atlas, &res.templates, &res.lexicon)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
        }
        Command::Parse { manifest, text, input, out } => {
            let parses = if let Some(m) = manifest {
                let records = cxr::dataset::read_manifest(&m)?;
                parse_reports(&records, &res.lexicon)?
            } else if let Some(t) = text {
                vec![parse_report("inline", &t, &res.lexicon)?]
            } else if let Some(p) = input {
                let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                vec![parse_report(&id, &read_text(&p)?, &res.lexicon)?]
            } else {
                return Err(Error::Invalid("give one of --manifest, --text or --input".into()));
            };
            write_or_print(out.as_deref(), &to_jsonl(&parses))?;
        }
        Command::CheckLexicon => {
            let lex = &res.lexicon;
            let covered = lex.covered_locations();
            println!("findings: {}", lex.findings().len());
            println!("terms: {}", lex.term_count());
            println!("location entries: {}", lex.location_entry_count());
            println!("labels covered: {}/17", covered.len());
            let missing: Vec<_> = cxr_core::atlas::LocationLabel::ALL
                .iter()
                .filter(|l| !covered.contains(l))
                .map(|l| l.name())
                .collect();
            if !missing.is_empty() {
                return Err(Error::Invalid(format!("labels without a lexicon entry: {}", missing.join(", "))));
            }
        }
        Command::TrainT2b { manifest, out, epochs, lr, batch_size, seed, max_train, max_val } => {
            let data = Data::load(&manifest, &res)?;
            let config = Text2BoxConfig {
                encoder: encoder(data.image_size()),
                ..Text2BoxConfig::default()
            };
            let seeds = Seeds::from_master(seed);
            let (ts, tp) = data.split(SplitTag::Train);
            let (vs, vp) = data.split(SplitTag::Val);
            let mut train: Vec<_> = build_queries(&ts, &tp, &finding, &config)?.into_iter().map(|q| q.example).collect();
            let mut val: Vec<_> = build_queries(&vs, &vp, &finding, &config)?.into_iter().map(|q| q.example).collect();
            train.truncate(max_train.unwrap_or(usize::MAX));
            val.truncate(max_val.unwrap_or(usize::MAX));
            let hyper = T2bHyper {
                epochs,
                lr,
                batch_size,
                seed: seeds.text2box_train,
                ..T2bHyper::default()
            };
            let (_, outcome) = train_text2box_stage(config, seeds.text2box_init, &hyper, &train, &val, &out, &mut log)?;
            println!("best epoch {} val mIOU {:.6}", outcome.best_epoch, outcome.best_val_miou);
        }
        Command::EvalT2b { ckpt, manifest, split, csv, overlays, limit, scale } => {
            let model = load_text2box(&ckpt)?;
            let data = Data::load(&manifest, &res)?;
            let (s, p) = data.split(parse_split(&split)?);
            let queries = build_queries(&s, &p, &finding, &model.config)?;
            let miou = eval_text2box_stage(&model, &queries, csv.as_deref(), overlays.as_deref().map(|d| (d, limit, scale)))?;
            println!("{split} mIOU {miou:.6} over {} queries", queries.len());
        }
        Command::ExportMasks { manifest, out, masks, t2b, split, grid, scale } => {
            let t2b = t2b.as_deref().map(load_text2box).transpose()?;
            let data = Data::load(&manifest, &res)?;
            let (s, p) = data.split(parse_split(&split)?);
            let examples = gain_examples(&s, &p, &finding, grid, &provider(masks, &t2b, &res)?)?;
            let mut n = 0;
            for e in &examples {
                for c in 0..NUM_CLASSES {
                    if let Some(m) = &e.masks[c] {
                        save_mask(&out.join(format!("{}-{}.png", e.id, CLASS_SIDES[c].name())), m, scale)?;
                        n += 1;
                    }
                }
            }
            println!("wrote {n} masks to {}", out.display());
        }
        Command::TrainBaseline { manifest, out, epochs, lr, batch_size, seed } => {
            let data = Data::load(&manifest, &res)?;
            let seeds = Seeds::from_master(seed);
            let config = cxr_core::gain::ClassifierConfig { encoder: encoder(data.image_size()) };
            let grid = config.encoder.grid_size();
            let (ts, tp) = data.split(SplitTag::Train);
            let (vs, vp) = data.split(SplitTag::Val);
            let train = gain_examples(&ts, &tp, &finding, grid, &MaskProvider::None)?;
            let val = gain_examples(&vs, &vp, &finding, grid, &MaskProvider::None)?;
            let hyper = GainHyper {
                epochs,
                lr,
                batch_size,
                seed: seeds.baseline_train,
                ..GainHyper::baseline()
            };
            let mut model = Classifier::new(config, seeds.classifier_init)?;
            let outcome = train_classifier_stage("baseline", &mut model, &hyper, &train, &val, &out, &mut log)?;
            println!("best epoch {} val mean AUROC {:.6}", outcome.best_epoch, outcome.best_val_mean_auroc);
        }
        Command::TrainGain {
            manifest, out, init, masks, t2b, lambda, alpha, omega, k, tau, lr, epochs, batch_size, seed,
        } => {
            let data = Data::load(&manifest, &res)?;
            let seeds = Seeds::from_master(seed);
            let mut model = match init {
                Some(p) => load_classifier(&p)?,
                None => Classifier::new(
                    cxr_core::gain::ClassifierConfig { encoder: encoder(data.image_size()) },
                    seeds.classifier_init,
                )?,
            };
            let t2b = t2b.as_deref().map(load_text2box).transpose()?;
            let provider = provider(masks, &t2b, &res)?;
            let grid = model.grid_size();
            let (ts, tp) = data.split(SplitTag::Train);
            let (vs, vp) = data.split(SplitTag::Val);
            let train = gain_examples(&ts, &tp, &finding, grid, &provider)?;
            let val = gain_examples(&vs, &vp, &finding, grid, &provider)?;
            let hyper = GainHyper { lambda, alpha, omega, k, tau, lr, epochs, batch_size, seed: seeds.gain_train };
            let outcome = train_classifier_stage("gain", &mut model, &hyper, &train, &val, &out, &mut log)?;
            println!("best epoch {} val mean AUROC {:.6}", outcome.best_epoch, outcome.best_val_mean_auroc);
        }
        Command::Eval { ckpt, manifest, split, name, out } => {
            let model = load_classifier(&ckpt)?;
            let data = Data::load(&manifest, &res)?;
            let tag = parse_split(&split)?;
            let (s, p) = data.split(tag);
            let grid = model.grid_size();
            let examples = gain_examples(&s, &p, &finding, grid, &MaskProvider::None)?;
            let report = evaluate_stage(&model, &examples, &truth_masks(&s, grid))?;
            let rows = report_rows(&name, tag, &report);
            match out {
                Some(p) => write_csv(&p, &rows)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    for r in &rows {
                        w.serialize(r).map_err(|e| Error::Invalid(e.to_string()))?;
                    }
                    w.flush().map_err(|e| Error::Invalid(e.to_string()))?;
                }
            }
        }
        Command::CamDump { ckpt, baseline, manifest, split, out, limit, scale } => {
            let guided = load_classifier(&ckpt)?;
            let base = load_classifier(&baseline)?;
            let data = Data::load(&manifest, &res)?;
            let (s, p) = data.split(parse_split(&split)?);
            let examples = gain_examples(&s, &p, &finding, guided.grid_size(), &MaskProvider::None)?;
            let n = cam_dump(&guided, &base, &s, &examples, limit, &out, scale)?;
            println!("wrote {n} triptychs to {}", out.display());
        }
        Command::RunAll { config, out } => {
            let config = match config.as_str() {
                "smoke" => RunConfig::parse(shipped::SMOKE_CONFIG_TOML, Path::new("<shipped smoke.toml>"))?,
                "full" => RunConfig::parse(shipped::FULL_CONFIG_TOML, Path::new("<shipped full.toml>"))?,
                path => RunConfig::load(Path::new(path))?,
            };
            let manifest = run_pipeline(&config, &res, &out, &mut log)?;
            write_json(&out.join("metrics.json"), &manifest.metrics)?;
            let m = &manifest.metrics;
            println!("text2box val mIOU      {:.4}", m.text2box.val_miou);
            println!("baseline test AUROC    {:.4} {:.4}", m.baseline.test.auroc[0], m.baseline.test.auroc[1]);
            println!("gain test AUROC        {:.4} {:.4}", m.gain.test.auroc[0], m.gain.test.auroc[1]);
            let aib = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!("baseline attention in box {}", aib(m.baseline.test.attention_in_box));
            println!("gain attention in box     {}", aib(m.gain.test.attention_in_box));
            println!("run manifest: {}", out.join(RUN_MANIFEST_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
