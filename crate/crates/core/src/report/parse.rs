use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::atlas::LocationLabel;
use crate::error::{Error, Result};
use crate::report::lexicon::{Cue, Lexicon, LocationTerm};
use crate::report::text::{split_sentences_with, tokenize, Sentence, Token};
use crate::report::{
    Context, FindingRecord, Laterality, LocationSource, ParentRecord, ReportParse,
};

/// Sentence segmentation using the lexicon's abbreviation list.
pub fn split_sentences(text: &str, lexicon: &Lexicon) -> Vec<Sentence> {
    split_sentences_with(text, lexicon.abbreviations())
}

/// A finding term found in a sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mention {
    pub finding: String,
    pub parent: String,
    /// Token range within the sentence.
    pub tokens: (usize, usize),
    /// Byte span within the sentence.
    pub span: (usize, usize),
}

fn mentions_in(tokens: &[Token], lexicon: &Lexicon) -> Vec<Mention> {
    lexicon
        .finding_terms
        .find(tokens)
        .into_iter()
        .map(|m| {
            let f = &lexicon.findings[m.value];
            Mention {
                finding: f.name.clone(),
                parent: f.parent.clone(),
                tokens: (m.start, m.end),
                span: (tokens[m.start].start, tokens[m.end - 1].end),
            }
        })
        .collect()
}

/// Finding terms in `sentence`, longest match first, case-insensitive, on
/// word boundaries.
pub fn find_mentions(sentence: &str, lexicon: &Lexicon) -> Vec<Mention> {
    mentions_in(&tokenize(sentence), lexicon)
}

fn context_in(tokens: &[Token], mention: &Mention, lexicon: &Lexicon) -> Context {
    let m = mention.tokens.0;
    let window_start = m.saturating_sub(lexicon.scope_window);
    let cues = lexicon.cues.find(tokens);
    let governs = |kind: Cue| {
        cues.iter().any(|c| {
            c.value == kind
                && c.start >= window_start
                && c.end <= m
                && !cues
                    .iter()
                    .any(|r| r.value == Cue::Reset && r.start >= c.end && r.end <= m)
        })
    };
    if governs(Cue::Negation) {
        Context::Negative
    } else if governs(Cue::Hypothetical) {
        Context::Hypothetical
    } else {
        Context::Positive
    }
}

/// Negative when a negation cue starts within the scope window before the
/// mention with no conjunction reset in between; otherwise Hypothetical for
/// a hypothetical cue under the same rule; otherwise Positive.
pub fn classify_context(sentence: &str, mention: &Mention, lexicon: &Lexicon) -> Context {
    context_in(&tokenize(sentence), mention, lexicon)
}

/// Laterality and explicit locations of a sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocationExtraction {
    pub laterality: Laterality,
    pub locations: BTreeSet<LocationLabel>,
    /// No location phrase survived; default rules apply.
    pub default_needed: bool,
}

fn location_in(tokens: &[Token], lexicon: &Lexicon) -> LocationExtraction {
    let locs = lexicon.location_terms.find(tokens);
    let in_sided = |i: usize| {
        locs.iter()
            .any(|l| matches!(l.value, LocationTerm::Sided(_)) && l.start <= i && i < l.end)
    };
    // Side words inside a sided location phrase ("left lower lobe") describe
    // that phrase, not the sentence.
    let stated = lexicon
        .laterality_terms
        .find(tokens)
        .into_iter()
        .filter(|m| !(m.start..m.end).any(in_sided))
        .map(|m| m.value)
        .fold(Laterality::Unspecified, Laterality::join);

    let sided: Vec<LocationLabel> = locs
        .iter()
        .filter_map(|l| match l.value {
            LocationTerm::Sided(label) => Some(label),
            LocationTerm::Neutral(_) => None,
        })
        .collect();
    let laterality = if stated != Laterality::Unspecified {
        stated
    } else {
        sided
            .iter()
            .filter_map(|l| l.side())
            .map(Laterality::from_side)
            .fold(Laterality::Unspecified, Laterality::join)
    };

    let allowed = laterality.sides();
    let mut locations = BTreeSet::new();
    for l in &locs {
        match l.value {
            LocationTerm::Sided(label) => {
                if label.side().is_none_or(|s| allowed.contains(&s)) {
                    locations.insert(label);
                }
            }
            LocationTerm::Neutral(label) => {
                locations.extend(allowed.iter().map(|&s| label.on_side(s)));
            }
        }
    }
    LocationExtraction {
        laterality,
        default_needed: locations.is_empty(),
        locations,
    }
}

/// Laterality and location cues anywhere in the sentence. Laterality comes
/// from free-standing side words, or failing that from the sides of sided
/// location phrases. Zones on a side the laterality excludes are dropped;
/// side-neutral zones are placed on every allowed side.
pub fn extract_location(sentence: &str, lexicon: &Lexicon) -> LocationExtraction {
    location_in(&tokenize(sentence), lexicon)
}

/// Zones from the default-location table, placed on the sides allowed by
/// `laterality` (both when unspecified).
pub fn apply_default_locations(
    finding: &str,
    laterality: Laterality,
    lexicon: &Lexicon,
) -> Result<BTreeSet<LocationLabel>> {
    let zones = lexicon
        .defaults
        .get(finding)
        .ok_or_else(|| Error::NoDefaultRule(String::from(finding)))?;
    let mut out = BTreeSet::new();
    for z in zones {
        for &side in laterality.sides() {
            out.insert(z.on_side(side));
        }
    }
    Ok(out)
}

/// Groups child records by parent, in order of first appearance. A parent
/// is Positive if any child is, else Negative if any child is, else
/// Hypothetical; laterality and locations are joined over positive
/// children only.
pub fn roll_up(findings: &[FindingRecord]) -> Vec<ParentRecord> {
    let mut parents: Vec<ParentRecord> = Vec::new();
    for (i, f) in findings.iter().enumerate() {
        let idx = match parents.iter().position(|p| p.parent_finding == f.parent_finding) {
            Some(idx) => idx,
            None => {
                parents.push(ParentRecord {
                    parent_finding: f.parent_finding.clone(),
                    context: Context::Hypothetical,
                    laterality: Laterality::Unspecified,
                    locations: BTreeSet::new(),
                    children: Vec::new(),
                });
                parents.len() - 1
            }
        };
        let p = &mut parents[idx];
        p.children.push(i);
        match (f.context, p.context) {
            (Context::Positive, _) => {
                p.context = Context::Positive;
                p.laterality = p.laterality.join(f.laterality);
                p.locations.extend(f.locations.iter().copied());
            }
            (Context::Negative, Context::Hypothetical) => p.context = Context::Negative,
            _ => {}
        }
    }
    parents
}

/// Full pipeline over one report.
pub fn parse_report(id: &str, text: &str, lexicon: &Lexicon) -> Result<ReportParse> {
    let sentences = split_sentences(text, lexicon);
    let mut findings = Vec::new();
    for (si, s) in sentences.iter().enumerate() {
        let tokens = tokenize(&s.text);
        let mut extraction: Option<LocationExtraction> = None;
        for m in mentions_in(&tokens, lexicon) {
            let context = context_in(&tokens, &m, lexicon);
            let (laterality, locations, source) = if context == Context::Positive {
                let ex = extraction.get_or_insert_with(|| location_in(&tokens, lexicon));
                if ex.default_needed {
                    let locs = apply_default_locations(&m.finding, ex.laterality, lexicon)?;
                    (ex.laterality, locs, Some(LocationSource::Default))
                } else {
                    (ex.laterality, ex.locations.clone(), Some(LocationSource::Explicit))
                }
            } else {
                (Laterality::Unspecified, BTreeSet::new(), None)
            };
            findings.push(FindingRecord {
                child_finding: m.finding,
                parent_finding: m.parent,
                context,
                laterality,
                locations,
                location_source: source,
                sentence_index: si,
                span: (s.start + m.span.0, s.start + m.span.1),
            });
        }
    }
    let parents = roll_up(&findings);
    Ok(ReportParse {
        id: String::from(id),
        sentences,
        findings,
        parents,
    })
}
