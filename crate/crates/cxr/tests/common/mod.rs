#![allow(dead_code)]

use std::path::PathBuf;

use cxr_core::report::{parse_report, Context, ReportParse};
use cxr_core::report::Lexicon;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct GoldenCase {
    pub id: String,
    pub text: String,
    pub findings: Vec<GoldenFinding>,
    pub parents: Vec<GoldenParent>,
}

#[derive(Debug, Deserialize)]
pub struct GoldenFinding {
    pub finding: String,
    pub context: Context,
    #[serde(default = "unspecified")]
    pub laterality: String,
    #[serde(default)]
    pub locations: Vec<String>,
    pub source: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct GoldenParent {
    pub parent: String,
    pub context: Context,
    pub laterality: String,
    pub locations: Vec<String>,
}

fn unspecified() -> String {
    "unspecified".into()
}

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn golden_cases() -> Vec<GoldenCase> {
    let text = std::fs::read_to_string(data_path("golden.jsonl")).expect("golden corpus");
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("golden line"))
        .collect()
}

fn sorted_names<'a>(labels: impl Iterator<Item = &'a cxr_core::atlas::LocationLabel>) -> Vec<String> {
    let mut v: Vec<String> = labels.map(|l| l.name().to_string()).collect();
    v.sort();
    v
}

/// Differences between a parse and its hand-written expectation.
pub fn golden_mismatches(case: &GoldenCase, parse: &ReportParse) -> Vec<String> {
    let mut out = Vec::new();
    if parse.findings.len() != case.findings.len() {
        out.push(format!(
            "{}: {} findings, expected {}",
            case.id,
            parse.findings.len(),
            case.findings.len()
        ));
    }
    for (i, (got, want)) in parse.findings.iter().zip(&case.findings).enumerate() {
        let source = got.location_source.map(|s| {
            serde_json::to_value(s).unwrap().as_str().unwrap().to_string()
        });
        let got_row = (
            got.child_finding.as_str(),
            got.context,
            got.laterality.name(),
            sorted_names(got.locations.iter()),
            source,
        );
        let mut want_locs = want.locations.clone();
        want_locs.sort();
        let want_row = (
            want.finding.as_str(),
            want.context,
            want.laterality.as_str(),
            want_locs,
            want.source.clone(),
        );
        if got_row != want_row {
            out.push(format!("{} finding {i}: got {got_row:?}, expected {want_row:?}", case.id));
        }
    }
    if parse.parents.len() != case.parents.len() {
        out.push(format!(
            "{}: {} parents, expected {}",
            case.id,
            parse.parents.len(),
            case.parents.len()
        ));
    }
    for (got, want) in parse.parents.iter().zip(&case.parents) {
        let got_row = (
            got.parent_finding.as_str(),
            got.context,
            got.laterality.name(),
            sorted_names(got.locations.iter()),
        );
        let mut want_locs = want.locations.clone();
        want_locs.sort();
        let want_row = (want.parent.as_str(), want.context, want.laterality.as_str(), want_locs);
        if got_row != want_row {
            out.push(format!("{} parent: got {got_row:?}, expected {want_row:?}", case.id));
        }
    }
    out
}

/// Runs the whole corpus; returns (cases, mismatch lines).
pub fn run_golden(lexicon: &Lexicon) -> (usize, Vec<String>) {
    let cases = golden_cases();
    let mut bad = Vec::new();
    for case in &cases {
        let parse = parse_report(&case.id, &case.text, lexicon).expect("parse");
        bad.extend(golden_mismatches(case, &parse));
    }
    (cases.len(), bad)
}

/// Inserts "no " before every positive mention of every golden case and
/// reports the mentions that did not become negative.
pub fn negation_insertion_failures(lexicon: &Lexicon) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut bad = Vec::new();
    for case in golden_cases() {
        let parse = parse_report(&case.id, &case.text, lexicon).expect("parse");
        for f in parse.findings.iter().filter(|f| f.context == Context::Positive) {
            let at = f.span.0;
            let text = format!("{}no {}", &case.text[..at], &case.text[at..]);
            let negated = parse_report(&case.id, &text, lexicon).expect("parse");
            let target = negated.findings.iter().find(|g| g.span.0 == at + 3);
            checked += 1;
            match target {
                Some(g) if g.context == Context::Negative => {}
                other => bad.push(format!(
                    "{}: {:?} -> {:?}",
                    case.id,
                    text,
                    other.map(|g| g.context)
                )),
            }
        }
    }
    (checked, bad)
}
