//! Glue between parsed reports, generated samples and the models: building
//! text2box queries, target masks and classifier examples.

use cxr_core::atlas::{rasterize_mask, Atlas, LocationLabel, Side};
use cxr_core::gain::{GainExample, NUM_CLASSES};
use cxr_core::image::Plane;
use cxr_core::report::{parse_report, Context, Laterality, Lexicon, ReportParse};
use cxr_core::text2box::{T2bExample, Text2BoxConfig, Text2BoxModel, TokenSequence};
use serde::{Deserialize, Serialize};

use crate::dataset::{LoadedSample, SampleRecord};
use crate::error::{Error, Result};

/// Class index of each side: 0 is right opacity, 1 is left opacity.
pub const CLASS_SIDES: [Side; NUM_CLASSES] = [Side::Right, Side::Left];

pub fn parse_reports(records: &[SampleRecord], lexicon: &Lexicon) -> Result<Vec<ReportParse>> {
    records
        .iter()
        .map(|r| Ok(parse_report(&r.id, &r.report, lexicon)?))
        .collect()
}

/// Location labels on `side` of the positive `finding` parent.
pub fn side_labels(parse: &ReportParse, finding: &str, side: Side) -> Vec<LocationLabel> {
    parse
        .parent(finding)
        .filter(|p| p.context == Context::Positive)
        .map(|p| p.locations.iter().copied().filter(|l| l.side() == Some(side)).collect())
        .unwrap_or_default()
}

/// Report-derived class labels: a side is positive when the finding is
/// positive and either its laterality or one of its locations names that
/// side.
pub fn report_labels(parse: &ReportParse, finding: &str) -> [bool; NUM_CLASSES] {
    let Some(p) = parse.parent(finding).filter(|p| p.context == Context::Positive) else {
        return [false; NUM_CLASSES];
    };
    CLASS_SIDES.map(|side| {
        let by_laterality = matches!(
            (p.laterality, side),
            (Laterality::Bilateral, _) | (Laterality::Right, Side::Right) | (Laterality::Left, Side::Left)
        );
        by_laterality || p.locations.iter().any(|l| l.side() == Some(side))
    })
}

/// Flags samples whose report-derived labels disagree with generation.
pub fn check_labels(records: &[SampleRecord], parses: &[ReportParse], finding: &str) -> Result<()> {
    for (r, p) in records.iter().zip(parses) {
        if report_labels(p, finding) != r.labels() {
            return Err(Error::Invalid(format!(
                "sample {}: report labels {:?} but generated {:?}",
                r.id,
                report_labels(p, finding),
                r.labels()
            )));
        }
    }
    Ok(())
}

/// One text2box query: a location phrase for one side of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    /// Position in the sample slice the query was built from.
    pub sample: usize,
    pub side: Side,
    pub labels: Vec<LocationLabel>,
    pub example: T2bExample,
}

/// Queries for every positive side with at least one location label on
/// that side. The target is the generated box of that side.
pub fn build_queries(
    samples: &[&LoadedSample],
    parses: &[&ReportParse],
    finding: &str,
    config: &Text2BoxConfig,
) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    for (i, (s, p)) in samples.iter().zip(parses).enumerate() {
        let labels = report_labels(p, finding);
        for (c, side) in CLASS_SIDES.into_iter().enumerate() {
            let words = side_labels(p, finding, side);
            if !labels[c] || words.is_empty() {
                continue;
            }
            let truth = s.record.truth_box(side).ok_or_else(|| {
                Error::Invalid(format!(
                    "sample {}: report places the finding on the {} side, which has no opacity",
                    s.record.id,
                    side.name()
                ))
            })?;
            out.push(Query {
                sample: i,
                side,
                example: T2bExample {
                    id: format!("{}-{}", s.record.id, side.name()),
                    image: s.image.clone(),
                    tokens: TokenSequence::from_labels(&words, config)?,
                    truth,
                },
                labels: words,
            });
        }
    }
    Ok(out)
}

/// Where classifier guidance masks come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    /// Boxes predicted by a trained text2box model.
    #[default]
    Predicted,
    /// Union of the atlas zones the report names.
    Atlas,
    /// The generated truth boxes.
    Truth,
    /// No masks; the pixel term is skipped.
    None,
}

pub enum MaskProvider<'a> {
    Predicted(&'a Text2BoxModel),
    Atlas(&'a Atlas),
    Truth,
    None,
}

impl MaskProvider<'_> {
    fn mask(
        &self,
        sample: &LoadedSample,
        parse: &ReportParse,
        finding: &str,
        side: Side,
        grid: usize,
    ) -> Result<Option<Plane>> {
        let labels = side_labels(parse, finding, side);
        let b = match self {
            MaskProvider::None => None,
            MaskProvider::Truth => sample.record.truth_box(side),
            _ if labels.is_empty() => None,
            MaskProvider::Atlas(atlas) => Some(atlas.union_box(&labels)?),
            MaskProvider::Predicted(model) => {
                let tokens = TokenSequence::from_labels(&labels, &model.config)?;
                Some(model.predict_box(&sample.image, &tokens)?)
            }
        };
        Ok(b.map(|b| rasterize_mask(&b, grid, grid)))
    }
}

/// Classifier examples with report-derived labels and a mask for each
/// positive class the provider can place.
pub fn gain_examples(
    samples: &[&LoadedSample],
    parses: &[&ReportParse],
    finding: &str,
    grid: usize,
    masks: &MaskProvider,
) -> Result<Vec<GainExample>> {
    samples
        .iter()
        .zip(parses)
        .map(|(s, p)| {
            let labels = report_labels(p, finding);
            let mut m: [Option<Plane>; NUM_CLASSES] = [None, None];
            for (c, side) in CLASS_SIDES.into_iter().enumerate() {
                if labels[c] {
                    m[c] = masks.mask(s, p, finding, side, grid)?;
                }
            }
            Ok(GainExample {
                id: s.record.id.clone(),
                image: s.image.clone(),
                labels,
                masks: m,
            })
        })
        .collect()
}

/// Generated truth boxes rasterized on the classifier grid, for positive
/// classes only.
pub fn truth_masks(samples: &[&LoadedSample], grid: usize) -> Vec<[Option<Plane>; NUM_CLASSES]> {
    samples
        .iter()
        .map(|s| {
            CLASS_SIDES.map(|side| s.record.truth_box(side).map(|b| rasterize_mask(&b, grid, grid)))
        })
        .collect()
}

