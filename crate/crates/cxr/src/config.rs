//! End-to-end run configuration and the seeds derived from it.

use std::path::Path;

use cxr_core::gain::{ClassifierConfig, GainHyper};
use cxr_core::nn::ConvStackConfig;
use cxr_core::synth::{DatasetConfig, SplitCounts};
use cxr_core::text2box::{T2bHyper, Text2BoxConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::{parse_toml, read_text};
use crate::stages::MaskSource;

/// A `run-all` configuration file. Every random stream is derived from
/// `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub text2box: T2bSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub gain: GainSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n: usize,
    pub image_size: usize,
    pub intensity_range: (f64, f64),
    pub sigma_range: (f64, f64),
    pub noise: f64,
    pub splits: Option<SplitCounts>,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            n: d.n,
            image_size: d.image_size,
            intensity_range: d.intensity_range,
            sigma_range: d.sigma_range,
            noise: d.noise,
            splits: d.splits,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct T2bSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    /// Use only the first this-many training queries.
    pub max_train_queries: Option<usize>,
    /// Use only the first this-many validation queries.
    pub max_val_queries: Option<usize>,
}

impl Default for T2bSection {
    fn default() -> Self {
        let h = T2bHyper::default();
        Self {
            epochs: h.epochs,
            lr: h.lr,
            batch_size: h.batch_size,
            dropout: h.dropout,
            recurrent_dropout: h.recurrent_dropout,
            max_train_queries: None,
            max_val_queries: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let h = GainHyper::baseline();
        Self {
            epochs: h.epochs,
            lr: h.lr,
            batch_size: h.batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainSection {
    pub lambda: f64,
    pub alpha: f64,
    pub omega: f64,
    pub k: f64,
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub masks: MaskSource,
}

impl Default for GainSection {
    fn default() -> Self {
        let h = GainHyper::default();
        Self {
            lambda: h.lambda,
            alpha: h.alpha,
            omega: h.omega,
            k: h.k,
            tau: h.tau,
            lr: h.lr,
            epochs: h.epochs,
            batch_size: h.batch_size,
            masks: MaskSource::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Test queries drawn as box overlays.
    pub overlays: usize,
    /// Test images drawn as attention triptychs.
    pub cams: usize,
    /// Pixel scale of the written PNG overlays.
    pub scale: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            overlays: 12,
            cams: 12,
            scale: 4,
        }
    }
}

/// Seeds of every random stream in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub text2box_init: u64,
    pub text2box_train: u64,
    pub classifier_init: u64,
    pub baseline_train: u64,
    pub gain_train: u64,
}

/// First eight bytes of `SHA-256(seed || name)`, little endian.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("eight bytes"))
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            data: derive_seed(seed, "data"),
            text2box_init: derive_seed(seed, "text2box.init"),
            text2box_train: derive_seed(seed, "text2box.train"),
            classifier_init: derive_seed(seed, "classifier.init"),
            baseline_train: derive_seed(seed, "baseline.train"),
            gain_train: derive_seed(seed, "gain.train"),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let c: RunConfig = parse_toml(text, origin)?;
        c.validate().map_err(|e| Error::format(origin, e))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            n: self.data.n,
            seed: self.seeds().data,
            image_size: self.data.image_size,
            intensity_range: self.data.intensity_range,
            sigma_range: self.data.sigma_range,
            noise: self.data.noise,
            splits: self.data.splits,
        }
    }

    fn encoder(&self) -> ConvStackConfig {
        ConvStackConfig {
            image_size: self.data.image_size,
            ..ConvStackConfig::default()
        }
    }

    pub fn text2box_model(&self) -> Text2BoxConfig {
        Text2BoxConfig {
            encoder: self.encoder(),
            ..Text2BoxConfig::default()
        }
    }

    pub fn classifier_model(&self) -> ClassifierConfig {
        ClassifierConfig {
            encoder: self.encoder(),
        }
    }

    pub fn text2box_hyper(&self) -> T2bHyper {
        let t = &self.text2box;
        T2bHyper {
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            seed: self.seeds().text2box_train,
            dropout: t.dropout,
            recurrent_dropout: t.recurrent_dropout,
        }
    }

    pub fn baseline_hyper(&self) -> GainHyper {
        GainHyper {
            epochs: self.baseline.epochs,
            lr: self.baseline.lr,
            batch_size: self.baseline.batch_size,
            seed: self.seeds().baseline_train,
            ..GainHyper::baseline()
        }
    }

    pub fn gain_hyper(&self) -> GainHyper {
        let g = &self.gain;
        GainHyper {
            lambda: g.lambda,
            alpha: g.alpha,
            omega: g.omega,
            k: g.k,
            tau: g.tau,
            lr: g.lr,
            epochs: g.epochs,
            batch_size: g.batch_size,
            seed: self.seeds().gain_train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset().validate()?;
        self.encoder().validate()?;
        self.text2box_hyper().validate()?;
        self.baseline_hyper().validate()?;
        self.gain_hyper().validate()?;
        if self.output.scale == 0 {
            return Err(Error::Invalid("output scale must be positive".into()));
        }
        Ok(())
    }
}
