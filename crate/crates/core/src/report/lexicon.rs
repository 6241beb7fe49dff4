//! Term dictionary and rule tables.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::atlas::{LocationLabel, Side};
use crate::error::{Error, Result};
use crate::report::text::{phrase_tokens, PhraseSet};
use crate::report::Laterality;

fn default_scope_window() -> usize {
    6
}

/// Serialized lexicon, as written in the lexicon file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconSpec {
    /// Tokens a cue may precede a mention by and still govern it.
    #[serde(default = "default_scope_window")]
    pub scope_window: usize,
    /// Words whose trailing period does not end a sentence.
    #[serde(default)]
    pub abbreviations: Vec<String>,
    #[serde(default)]
    pub negation_cues: Vec<String>,
    #[serde(default)]
    pub hypothetical_cues: Vec<String>,
    /// Words that stop a cue's scope ("but", "however", ...).
    #[serde(default)]
    pub conjunction_resets: Vec<String>,
    #[serde(default)]
    pub findings: Vec<FindingSpec>,
    #[serde(default)]
    pub laterality: LateralitySpec,
    #[serde(default)]
    pub locations: Vec<LocationSpec>,
    /// Location phrases that name a zone without a side ("lung bases");
    /// the side comes from the sentence's laterality.
    #[serde(default)]
    pub side_neutral_locations: Vec<SideNeutralSpec>,
    #[serde(default)]
    pub default_locations: Vec<DefaultRuleSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindingSpec {
    pub name: String,
    pub parent: Option<String>,
    pub variants: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateralitySpec {
    #[serde(default)]
    pub left: Vec<String>,
    #[serde(default)]
    pub right: Vec<String>,
    #[serde(default)]
    pub bilateral: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationSpec {
    pub label: String,
    pub variants: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideNeutralSpec {
    /// The right-side member of the mirrored pair, or a midline label.
    pub right: String,
    pub variants: Vec<String>,
}

/// Zones for a finding reported without location. Zones are given for the
/// right side (or midline) and mirrored according to laterality.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultRuleSpec {
    pub finding: String,
    pub zones: Vec<String>,
}

/// What a matched location phrase denotes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocationTerm {
    Sided(LocationLabel),
    /// Right-side (or midline) representative of a mirrored pair.
    Neutral(LocationLabel),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cue {
    Negation,
    Hypothetical,
    Reset,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub name: String,
    pub parent: String,
}

/// Validated, indexed lexicon.
#[derive(Clone, Debug)]
pub struct Lexicon {
    spec: LexiconSpec,
    pub(crate) findings: Vec<Finding>,
    pub(crate) finding_terms: PhraseSet<usize>,
    pub(crate) laterality_terms: PhraseSet<Laterality>,
    pub(crate) location_terms: PhraseSet<LocationTerm>,
    pub(crate) cues: PhraseSet<Cue>,
    pub(crate) abbreviations: BTreeSet<String>,
    pub(crate) defaults: BTreeMap<String, Vec<LocationLabel>>,
    pub(crate) scope_window: usize,
}

fn lex_err(msg: String) -> Error {
    Error::Lexicon(msg)
}

fn variant_tokens(owner: &str, v: &str) -> Result<Vec<String>> {
    if v.trim().is_empty() {
        return Err(lex_err(format!("empty variant in `{owner}`")));
    }
    if v != v.trim() || v.to_lowercase() != v {
        return Err(lex_err(format!(
            "variant `{v}` in `{owner}` must be trimmed lowercase"
        )));
    }
    let t = phrase_tokens(v);
    if t.is_empty() {
        return Err(lex_err(format!("variant `{v}` in `{owner}` has no words")));
    }
    Ok(t)
}

fn insert_all<T: Clone + PartialEq>(
    set: &mut PhraseSet<T>,
    owner: &str,
    variants: &[String],
    value: T,
    describe: impl Fn(&T) -> String,
) -> Result<()> {
    if variants.is_empty() {
        return Err(lex_err(format!("`{owner}` has no variants")));
    }
    for v in variants {
        let tokens = variant_tokens(owner, v)?;
        if let Err(prev) = set.insert(tokens, value.clone()) {
            let what = if prev == value {
                format!("twice in `{owner}`")
            } else {
                format!("in both `{}` and `{owner}`", describe(&prev))
            };
            return Err(lex_err(format!("duplicate variant `{v}` {what}")));
        }
    }
    Ok(())
}

impl Lexicon {
    /// Validates and indexes a spec. Rejects duplicate variants within a
    /// category, findings without a parent, unknown location labels, cue
    /// phrases listed twice, and an empty lexicon.
    pub fn from_spec(spec: LexiconSpec) -> Result<Self> {
        if spec.findings.is_empty() {
            return Err(lex_err("no findings defined".into()));
        }
        if spec.scope_window == 0 {
            return Err(lex_err("scope_window must be positive".into()));
        }

        let names: Vec<String> = spec.findings.iter().map(|f| f.name.clone()).collect();
        let mut findings = Vec::new();
        let mut finding_terms = PhraseSet::default();
        for f in &spec.findings {
            if findings.iter().any(|x: &Finding| x.name == f.name) {
                return Err(lex_err(format!("finding `{}` defined twice", f.name)));
            }
            let parent = match &f.parent {
                Some(p) if !p.trim().is_empty() => p.clone(),
                _ => return Err(lex_err(format!("finding `{}` has no parent", f.name))),
            };
            let idx = findings.len();
            findings.push(Finding {
                name: f.name.clone(),
                parent,
            });
            insert_all(&mut finding_terms, &f.name, &f.variants, idx, |&i| {
                names[i].clone()
            })?;
        }

        let mut laterality_terms = PhraseSet::default();
        for (lat, variants) in [
            (Laterality::Left, &spec.laterality.left),
            (Laterality::Right, &spec.laterality.right),
            (Laterality::Bilateral, &spec.laterality.bilateral),
        ] {
            insert_all(&mut laterality_terms, lat.name(), variants, lat, |l| {
                l.name().into()
            })?;
        }

        let mut location_terms = PhraseSet::default();
        let describe = |t: &LocationTerm| match t {
            LocationTerm::Sided(l) => l.name().into(),
            LocationTerm::Neutral(l) => format!("side-neutral {}", l.name()),
        };
        for loc in &spec.locations {
            let label = LocationLabel::from_name(&loc.label)?;
            insert_all(
                &mut location_terms,
                &loc.label,
                &loc.variants,
                LocationTerm::Sided(label),
                describe,
            )?;
        }
        for loc in &spec.side_neutral_locations {
            let label = LocationLabel::from_name(&loc.right)?;
            if label.side() == Some(Side::Left) {
                return Err(lex_err(format!(
                    "side-neutral entry `{}` must name the right-side label",
                    loc.right
                )));
            }
            insert_all(
                &mut location_terms,
                &loc.right,
                &loc.variants,
                LocationTerm::Neutral(label),
                describe,
            )?;
        }

        let mut cues = PhraseSet::default();
        for (cue, owner, list) in [
            (Cue::Negation, "negation_cues", &spec.negation_cues),
            (Cue::Hypothetical, "hypothetical_cues", &spec.hypothetical_cues),
            (Cue::Reset, "conjunction_resets", &spec.conjunction_resets),
        ] {
            if list.is_empty() && cue != Cue::Reset {
                return Err(lex_err(format!("`{owner}` is empty")));
            }
            if !list.is_empty() {
                insert_all(&mut cues, owner, list, cue, |c| format!("{c:?}"))?;
            }
        }

        let mut defaults = BTreeMap::new();
        for rule in &spec.default_locations {
            if !findings.iter().any(|f| f.name == rule.finding) {
                return Err(lex_err(format!(
                    "default rule for unknown finding `{}`",
                    rule.finding
                )));
            }
            if rule.zones.is_empty() {
                return Err(lex_err(format!("default rule for `{}` has no zones", rule.finding)));
            }
            let mut zones = Vec::new();
            for z in &rule.zones {
                let label = LocationLabel::from_name(z)?;
                if label.side() == Some(Side::Left) {
                    return Err(lex_err(format!(
                        "default zones are given for the right side; got `{z}`"
                    )));
                }
                zones.push(label);
            }
            if defaults.insert(rule.finding.clone(), zones).is_some() {
                return Err(lex_err(format!("two default rules for `{}`", rule.finding)));
            }
        }

        let abbreviations = spec
            .abbreviations
            .iter()
            .map(|a| a.trim_end_matches('.').to_lowercase())
            .collect();

        Ok(Self {
            scope_window: spec.scope_window,
            findings,
            finding_terms,
            laterality_terms,
            location_terms,
            cues,
            abbreviations,
            defaults,
            spec,
        })
    }

    pub fn spec(&self) -> &LexiconSpec {
        &self.spec
    }

    pub fn findings(&self) -> &[Finding] {
        &self.findings
    }

    pub fn finding(&self, name: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.name == name)
    }

    pub fn scope_window(&self) -> usize {
        self.scope_window
    }

    pub fn abbreviations(&self) -> &BTreeSet<String> {
        &self.abbreviations
    }

    /// Number of sided location entries in the file.
    pub fn location_entry_count(&self) -> usize {
        self.spec.locations.len()
    }

    /// Location labels reachable from some variant.
    pub fn covered_locations(&self) -> BTreeSet<LocationLabel> {
        let mut out = BTreeSet::new();
        for l in &self.spec.locations {
            if let Ok(label) = LocationLabel::from_name(&l.label) {
                out.insert(label);
            }
        }
        for l in &self.spec.side_neutral_locations {
            if let Ok(label) = LocationLabel::from_name(&l.right) {
                out.insert(label);
                out.insert(label.mirror());
            }
        }
        out
    }

    pub fn term_count(&self) -> usize {
        self.finding_terms.len()
            + self.laterality_terms.len()
            + self.location_terms.len()
            + self.cues.len()
    }
}
