//! Rule-based extraction of findings from free-text chest radiograph
//! reports.
//!
//! A report is split into sentences; each sentence is scanned for finding
//! terms. Every mention gets a context from preceding cue phrases and, when
//! positive, a laterality and set of location labels from the same sentence
//! (or from the default-location table when the sentence names none).
//! Child findings are finally rolled up to their parent labels.

mod lexicon;
mod parse;
mod text;

pub use lexicon::{
    Cue, DefaultRuleSpec, Finding, FindingSpec, LateralitySpec, Lexicon, LexiconSpec,
    LocationSpec, LocationTerm, SideNeutralSpec,
};
pub use parse::{
    apply_default_locations, classify_context, extract_location, find_mentions, parse_report,
    roll_up, split_sentences, LocationExtraction, Mention,
};
pub use text::{
    phrase_tokens, split_sentences_with, tokenize, PhraseMatch, PhraseSet, Sentence, Token,
};

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::atlas::{LocationLabel, Side};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    Positive,
    Negative,
    Hypothetical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Laterality {
    Left,
    Right,
    Bilateral,
    Unspecified,
}

impl Laterality {
    pub fn name(self) -> &'static str {
        match self {
            Laterality::Left => "left",
            Laterality::Right => "right",
            Laterality::Bilateral => "bilateral",
            Laterality::Unspecified => "unspecified",
        }
    }

    pub fn from_side(side: Side) -> Self {
        match side {
            Side::Left => Laterality::Left,
            Side::Right => Laterality::Right,
        }
    }

    /// Least laterality covering both: equal values stay, `Unspecified`
    /// is the identity, anything else is `Bilateral`.
    pub fn join(self, other: Laterality) -> Laterality {
        match (self, other) {
            (a, b) if a == b => a,
            (Laterality::Unspecified, x) | (x, Laterality::Unspecified) => x,
            _ => Laterality::Bilateral,
        }
    }

    /// Sides a zone may lie on under this laterality.
    pub fn sides(self) -> &'static [Side] {
        match self {
            Laterality::Left => &[Side::Left],
            Laterality::Right => &[Side::Right],
            Laterality::Bilateral | Laterality::Unspecified => &[Side::Right, Side::Left],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationSource {
    Explicit,
    Default,
}

/// One finding mention. Laterality, locations and location source are only
/// filled for positive mentions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingRecord {
    pub child_finding: String,
    pub parent_finding: String,
    pub context: Context,
    pub laterality: Laterality,
    pub locations: BTreeSet<LocationLabel>,
    pub location_source: Option<LocationSource>,
    pub sentence_index: usize,
    /// Byte span of the mention in the report.
    pub span: (usize, usize),
}

/// Roll-up of the child records sharing a parent label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentRecord {
    pub parent_finding: String,
    pub context: Context,
    pub laterality: Laterality,
    pub locations: BTreeSet<LocationLabel>,
    /// Indices into [`ReportParse::findings`].
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportParse {
    pub id: String,
    pub sentences: Vec<Sentence>,
    pub findings: Vec<FindingRecord>,
    pub parents: Vec<ParentRecord>,
}

impl ReportParse {
    pub fn parent(&self, name: &str) -> Option<&ParentRecord> {
        self.parents.iter().find(|p| p.parent_finding == name)
    }

    pub fn positive_parents(&self) -> impl Iterator<Item = &ParentRecord> {
        self.parents.iter().filter(|p| p.context == Context::Positive)
    }
}
