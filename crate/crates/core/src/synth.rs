//! Procedural phantom radiographs with zone-placed opacities and matching
//! templated reports.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::atlas::{Atlas, LocationLabel, NormalizedBox, Side};
use crate::error::{Error, Result};
use crate::image::Plane;
use crate::math;
use crate::report::{parse_report, Context, Laterality, Lexicon, ReportParse};

/// Zones an opacity may be placed in.
pub const LUNG_ZONES: [LocationLabel; 6] = [
    LocationLabel::RightUpperLungZone,
    LocationLabel::RightMidLungZone,
    LocationLabel::RightLowerLungZone,
    LocationLabel::LeftUpperLungZone,
    LocationLabel::LeftMidLungZone,
    LocationLabel::LeftLowerLungZone,
];

/// Truth boxes may extend past their zone by this fraction of its size.
pub const ZONE_MARGIN: f64 = 0.1;

const OUTSIDE: f64 = 0.05;
const THORAX: f64 = 0.30;
const LUNG: f64 = 0.12;
const MEDIASTINUM: f64 = 0.55;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpacitySides {
    None,
    Left,
    Right,
    Both,
}

impl OpacitySides {
    pub fn has(self, side: Side) -> bool {
        matches!(
            (self, side),
            (OpacitySides::Both, _)
                | (OpacitySides::Left, Side::Left)
                | (OpacitySides::Right, Side::Right)
        )
    }

    pub fn laterality(self) -> Laterality {
        match self {
            OpacitySides::None => Laterality::Unspecified,
            OpacitySides::Left => Laterality::Left,
            OpacitySides::Right => Laterality::Right,
            OpacitySides::Both => Laterality::Bilateral,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub image_size: usize,
    pub sides: OpacitySides,
    /// Zone of the opacity; with `Both` the mirrored zone is used as well.
    pub zone: Option<LocationLabel>,
    /// Peak added brightness of the blob, in `(0, 1]`.
    pub intensity: f64,
    /// Range of the blob's Gaussian σ as a fraction of the image side.
    pub sigma_range: (f64, f64),
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Zones occupied by opacities, one per affected side.
    pub fn zones(&self) -> Vec<LocationLabel> {
        match (self.sides, self.zone) {
            (OpacitySides::None, _) | (_, None) => Vec::new(),
            (OpacitySides::Both, Some(z)) => {
                let mut v = alloc::vec![z.on_side(Side::Right), z.on_side(Side::Left)];
                v.sort();
                v
            }
            (_, Some(z)) => alloc::vec![z],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Phantom(m));
        if self.image_size < 8 {
            return err(format!("image size {} too small", self.image_size));
        }
        if !(self.intensity > 0.0 && self.intensity <= 1.0) {
            return err(format!("intensity {} outside (0, 1]", self.intensity));
        }
        let (lo, hi) = self.sigma_range;
        if !(lo > 0.0 && lo <= hi && hi < 0.25) {
            return err(format!("bad sigma range ({lo}, {hi})"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return err(format!("bad noise level {}", self.noise));
        }
        match (self.sides, self.zone) {
            (OpacitySides::None, None) => Ok(()),
            (OpacitySides::None, Some(z)) => err(format!("zone {z} given without an opacity")),
            (s, None) => err(format!("{s:?} opacity needs a zone")),
            (s, Some(z)) => {
                if !LUNG_ZONES.contains(&z) {
                    return err(format!("{z} is not a lung zone"));
                }
                let ok = match s {
                    OpacitySides::Left => z.side() == Some(Side::Left),
                    OpacitySides::Right => z.side() == Some(Side::Right),
                    _ => true,
                };
                if ok {
                    Ok(())
                } else {
                    err(format!("zone {z} contradicts side {s:?}"))
                }
            }
        }
    }
}

/// Truth boxes per patient side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub right: Option<NormalizedBox>,
    pub left: Option<NormalizedBox>,
}

impl PhantomTruth {
    pub fn get(&self, side: Side) -> Option<NormalizedBox> {
        match side {
            Side::Right => self.right,
            Side::Left => self.left,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: Plane,
    pub truth: PhantomTruth,
}

fn lung_field(atlas: &Atlas, side: Side) -> Result<NormalizedBox> {
    let labels: Vec<LocationLabel> = LUNG_ZONES
        .iter()
        .copied()
        .filter(|z| z.side() == Some(side))
        .collect();
    atlas.union_box(&labels)
}

fn in_ellipse(b: &NormalizedBox, x: f64, y: f64) -> bool {
    let (cx, cy) = b.center();
    let dx = (x - cx) / (b.w() / 2.0);
    let dy = (y - cy) / (b.h() / 2.0);
    dx * dx + dy * dy <= 1.0
}

/// Noise-free, opacity-free phantom: dark surround, thorax, two lung
/// ellipses inscribed in the atlas lung fields and a bright mediastinal
/// band between them.
pub fn background(size: usize, atlas: &Atlas) -> Result<Plane> {
    let right = lung_field(atlas, Side::Right)?;
    let left = lung_field(atlas, Side::Left)?;
    let (a, b) = if right.x() < left.x() {
        (right, left)
    } else {
        (left, right)
    };
    let (med0, med1) = (a.right(), b.x());
    let thorax = NormalizedBox::new(0.01, 0.01, 0.98, 0.98)?;
    let mut p = Plane::zeros(size, size);
    for r in 0..size {
        let y = (r as f64 + 0.5) / size as f64;
        for c in 0..size {
            let x = (c as f64 + 0.5) / size as f64;
            let v = if !in_ellipse(&thorax, x, y) {
                OUTSIDE
            } else if in_ellipse(&right, x, y) || in_ellipse(&left, x, y) {
                LUNG
            } else if x >= med0 && x < med1 && y < 0.95 {
                MEDIASTINUM
            } else {
                THORAX
            };
            p.data[r * size + c] = v;
        }
    }
    Ok(p)
}

fn place_blob<R: Rng>(
    rng: &mut R,
    zone: &NormalizedBox,
    sigma_range: (f64, f64),
) -> Result<(f64, f64, f64)> {
    let sigma = if sigma_range.0 == sigma_range.1 {
        sigma_range.0
    } else {
        rng.gen_range(sigma_range.0..sigma_range.1)
    };
    let d = zone.dilate(ZONE_MARGIN);
    let reach = 2.0 * sigma;
    let x0 = (d.x() + reach).max(zone.x());
    let x1 = (d.right() - reach).min(zone.right());
    let y0 = (d.y() + reach).max(zone.y());
    let y1 = (d.bottom() - reach).min(zone.bottom());
    if x0 > x1 || y0 > y1 {
        return Err(Error::Phantom(format!(
            "blob with sigma {sigma} does not fit its zone"
        )));
    }
    let cx = if x0 < x1 { rng.gen_range(x0..x1) } else { x0 };
    let cy = if y0 < y1 { rng.gen_range(y0..y1) } else { y0 };
    Ok((cx, cy, sigma))
}

/// Renders a phantom. Each opacity is a Gaussian blob whose centre is
/// uniform over the part of the zone that keeps its 2σ box within the zone
/// grown by [`ZONE_MARGIN`]; the truth box is that 2σ box. Pixels are
/// quantized to 8 bits so the in-memory image equals its PNG.
pub fn generate_phantom(spec: &PhantomSpec, atlas: &Atlas) -> Result<Phantom> {
    spec.validate()?;
    let n = spec.image_size;
    let mut image = background(n, atlas)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut truth = PhantomTruth::default();
    for zone in spec.zones() {
        let zb = atlas.zone_box(zone)?;
        let (cx, cy, sigma) = place_blob(&mut rng, &zb, spec.sigma_range)?;
        let two_var = 2.0 * sigma * sigma;
        for r in 0..n {
            let y = (r as f64 + 0.5) / n as f64;
            for c in 0..n {
                let x = (c as f64 + 0.5) / n as f64;
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                image.data[r * n + c] += spec.intensity * math::exp(-d2 / two_var);
            }
        }
        let b = NormalizedBox::from_corners(
            (cx - 2.0 * sigma).max(0.0),
            (cy - 2.0 * sigma).max(0.0),
            (cx + 2.0 * sigma).min(1.0),
            (cy + 2.0 * sigma).min(1.0),
        )?;
        match zone.side() {
            Some(Side::Right) => truth.right = Some(b),
            Some(Side::Left) => truth.left = Some(b),
            None => unreachable!("lung zones are sided"),
        }
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise)
            .map_err(|e| Error::Phantom(format!("noise: {e}")))?;
        for v in &mut image.data {
            *v += normal.sample(&mut rng);
        }
    }
    let pixels = image.to_u8();
    let image = Plane::from_u8(n, n, &pixels)?;
    Ok(Phantom { image, truth })
}

/// Report sentence templates.
///
/// Placeholders: `{zone}` the full zone name ("right lower lung zone"),
/// `{side}` its side word, `{region}` the zone name without the side
/// ("lower lung zone"), `{other_zone}` the mirrored zone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportTemplates {
    /// Parent label the round-trip check looks at.
    pub finding: String,
    /// One-sided opacity sentences.
    pub single: Vec<String>,
    /// Sentences for the same zone on both sides.
    pub bilateral: Vec<String>,
    /// Sentences stating the absence of the finding.
    pub normal: Vec<String>,
    /// Unrelated negative sentences mixed into every report.
    pub distractors: Vec<String>,
    /// Inclusive range for the number of distractors per report.
    pub distractors_per_report: (usize, usize),
}

const PLACEHOLDERS: [&str; 4] = ["zone", "side", "region", "other_zone"];

impl ReportTemplates {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Template(m));
        for (name, list) in [
            ("single", &self.single),
            ("bilateral", &self.bilateral),
            ("normal", &self.normal),
            ("distractors", &self.distractors),
        ] {
            if list.is_empty() {
                return err(format!("no `{name}` templates"));
            }
            for t in list {
                let mut rest = t.as_str();
                while let Some(open) = rest.find('{') {
                    let Some(close) = rest[open..].find('}') else {
                        return err(format!("unclosed placeholder in `{t}`"));
                    };
                    let key = &rest[open + 1..open + close];
                    if !PLACEHOLDERS.contains(&key) {
                        return err(format!("unknown placeholder `{{{key}}}` in `{t}`"));
                    }
                    rest = &rest[open + close + 1..];
                }
            }
        }
        let (lo, hi) = self.distractors_per_report;
        if lo > hi || hi > self.distractors.len() {
            return err(format!("bad distractor range ({lo}, {hi})"));
        }
        Ok(())
    }
}

fn fill(template: &str, zone: LocationLabel) -> String {
    let name = zone.name();
    let (side, region) = match zone.side() {
        Some(s) => (s.name(), name.split_once(' ').map_or(name, |(_, r)| r)),
        None => ("", name),
    };
    template
        .replace("{zone}", name)
        .replace("{side}", side)
        .replace("{region}", region)
        .replace("{other_zone}", zone.mirror().name())
}

/// Whether a parse carries exactly the labels of `spec`: the target parent
/// is positive with the spec's laterality and zones, or is not positive
/// when there is no opacity.
pub fn parse_matches_spec(parse: &ReportParse, finding: &str, spec: &PhantomSpec) -> bool {
    let parent = parse
        .parent(finding)
        .filter(|p| p.context == Context::Positive);
    match (spec.sides, parent) {
        (OpacitySides::None, p) => p.is_none(),
        (_, None) => false,
        (sides, Some(p)) => {
            let want: BTreeSet<LocationLabel> = spec.zones().into_iter().collect();
            p.laterality == sides.laterality() && p.locations == want
        }
    }
}

/// Writes a report for `spec`. Templates are tried from a random starting
/// point until the assembled report parses back to the spec's labels.
pub fn generate_report<R: Rng>(
    spec: &PhantomSpec,
    templates: &ReportTemplates,
    lexicon: &Lexicon,
    rng: &mut R,
) -> Result<String> {
    let (pool, zone) = match (spec.sides, spec.zone) {
        (OpacitySides::None, _) => (&templates.normal, None),
        (OpacitySides::Both, Some(z)) => (&templates.bilateral, Some(z.on_side(Side::Right))),
        (_, Some(z)) => (&templates.single, Some(z)),
        (_, None) => return Err(Error::Template("opacity without zone".into())),
    };
    let (lo, hi) = templates.distractors_per_report;
    let k = rng.gen_range(lo..=hi);
    let sentences: Vec<String> = templates
        .distractors
        .choose_multiple(rng, k)
        .cloned()
        .collect();
    let slot = rng.gen_range(0..=sentences.len());
    let first = rng.gen_range(0..pool.len());
    for offset in 0..pool.len() {
        let t = &pool[(first + offset) % pool.len()];
        let main = match zone {
            Some(z) => fill(t, z),
            None => t.to_string(),
        };
        let mut all = sentences.clone();
        all.insert(slot, main);
        let text = all.join(" ");
        let parse = parse_report("", &text, lexicon)?;
        if parse_matches_spec(&parse, &templates.finding, spec) {
            return Ok(text);
        }
    }
    Err(Error::Template(format!(
        "no template yields {:?} in {:?}",
        spec.sides,
        spec.zones()
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    /// 70/10/20, with rounding remainders going to train.
    pub fn standard(n: usize) -> Self {
        let val = n / 10;
        let test = n / 5;
        Self {
            train: n - val - test,
            val,
            test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
    pub image_size: usize,
    pub intensity_range: (f64, f64),
    pub sigma_range: (f64, f64),
    pub noise: f64,
    /// Explicit split sizes; 70/10/20 when absent.
    #[serde(default)]
    pub splits: Option<SplitCounts>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 100,
            seed: 7,
            image_size: 64,
            intensity_range: (0.35, 0.6),
            sigma_range: (0.05, 0.065),
            noise: 0.02,
            splits: None,
        }
    }
}

impl DatasetConfig {
    pub fn split_counts(&self) -> SplitCounts {
        self.splits.unwrap_or_else(|| SplitCounts::standard(self.n))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs at least 10 samples, got {}",
                self.n
            )));
        }
        if self.split_counts().total() != self.n {
            return Err(Error::InvalidArgument(format!(
                "split sizes {:?} do not add up to {}",
                self.split_counts(),
                self.n
            )));
        }
        let (a, b) = self.intensity_range;
        if !(a > 0.0 && a <= b && b <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bad intensity range ({a}, {b})"
            )));
        }
        Ok(())
    }
}

/// Opacity pattern by sample index. Each cycle holds three right-positive
/// and three left-positive images, plus one normal image.
const SIDE_CYCLE: [OpacitySides; 6] = [
    OpacitySides::Right,
    OpacitySides::Left,
    OpacitySides::Right,
    OpacitySides::Left,
    OpacitySides::Both,
    OpacitySides::None,
];

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub id: String,
    pub split: SplitTag,
    pub spec: PhantomSpec,
    pub image: Plane,
    pub report: String,
    pub truth: PhantomTruth,
}

/// Random stream for sample `index`; independent of every other sample.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Split tag of every sample: a seeded shuffle of the tag multiset.
pub fn assign_splits(config: &DatasetConfig) -> Vec<SplitTag> {
    let c = config.split_counts();
    let mut tags: Vec<SplitTag> = core::iter::repeat_n(SplitTag::Train, c.train)
        .chain(core::iter::repeat_n(SplitTag::Val, c.val))
        .chain(core::iter::repeat_n(SplitTag::Test, c.test))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    tags.shuffle(&mut rng);
    tags
}

/// The phantom spec of sample `index`, drawn from its own stream so that
/// samples can be produced in any order.
pub fn sample_spec(config: &DatasetConfig, index: usize, rng: &mut ChaCha8Rng) -> PhantomSpec {
    let sides = SIDE_CYCLE[index % SIDE_CYCLE.len()];
    let row = rng.gen_range(0..3);
    let zone = match sides {
        OpacitySides::None => None,
        OpacitySides::Left => Some(LUNG_ZONES[3 + row]),
        _ => Some(LUNG_ZONES[row]),
    };
    let (a, b) = config.intensity_range;
    let intensity = if a < b { rng.gen_range(a..=b) } else { a };
    PhantomSpec {
        image_size: config.image_size,
        sides,
        zone,
        intensity,
        sigma_range: config.sigma_range,
        noise: config.noise,
        seed: rng.gen(),
    }
}

pub fn generate_sample(
    config: &DatasetConfig,
    index: usize,
    split: SplitTag,
    atlas: &Atlas,
    templates: &ReportTemplates,
    lexicon: &Lexicon,
) -> Result<Sample> {
    let mut rng = sample_rng(config.seed, index);
    let spec = sample_spec(config, index, &mut rng);
    let phantom = generate_phantom(&spec, atlas)?;
    let report = generate_report(&spec, templates, lexicon, &mut rng)?;
    Ok(Sample {
        index,
        id: format!("s{index:05}"),
        split,
        spec,
        image: phantom.image,
        report,
        truth: phantom.truth,
    })
}

/// All samples of a dataset, in index order.
pub fn generate_dataset(
    config: &DatasetConfig,
    atlas: &Atlas,
    templates: &ReportTemplates,
    lexicon: &Lexicon,
) -> Result<Vec<Sample>> {
    config.validate()?;
    templates.validate()?;
    assign_splits(config)
        .into_iter()
        .enumerate()
        .map(|(i, tag)| generate_sample(config, i, tag, atlas, templates, lexicon))
        .collect()
}
