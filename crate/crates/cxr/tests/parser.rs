mod common;

use cxr::shipped;
use cxr_core::atlas::{LocationLabel, Side};
use cxr_core::report::{parse_report, Context, Laterality};
use proptest::prelude::*;

#[test]
fn golden_corpus_matches_exactly() {
    let lexicon = shipped::lexicon().unwrap();
    let (n, bad) = common::run_golden(&lexicon);
    assert!(n >= 40, "corpus has only {n} cases");
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}

#[test]
fn inserted_negation_flips_every_positive_golden_mention() {
    let lexicon = shipped::lexicon().unwrap();
    let (checked, bad) = common::negation_insertion_failures(&lexicon);
    assert!(checked >= 30);
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}

#[test]
fn shipped_lexicon_covers_every_zone() {
    let lexicon = shipped::lexicon().unwrap();
    assert!(lexicon.location_entry_count() >= 17);
    assert_eq!(lexicon.covered_locations().len(), LocationLabel::ALL.len());
}

#[test]
fn bibasilar_is_bilateral_lower() {
    let lexicon = shipped::lexicon().unwrap();
    let p = parse_report("r", "Bibasilar opacities.", &lexicon).unwrap();
    let parent = p.parent("opacity").unwrap();
    assert_eq!(parent.laterality, Laterality::Bilateral);
    let lower: Vec<_> = [Side::Right, Side::Left]
        .into_iter()
        .map(|s| LocationLabel::from_name(&format!("{} lower lung zone", s.name())).unwrap())
        .collect();
    assert!(lower.iter().all(|l| parent.locations.contains(l)));
}

#[test]
fn side_filter_drops_contradicting_zone() {
    let lexicon = shipped::lexicon().unwrap();
    // "left" is free, so the right-sided phrase is discarded.
    let p = parse_report("r", "Although the left lung is clear, there is a right lower lobe opacity.", &lexicon)
        .unwrap();
    let f = &p.findings[0];
    assert_eq!(f.context, Context::Positive);
    assert_eq!(f.laterality, Laterality::Left);
    assert!(f.locations.iter().all(|l| l.side() != Some(Side::Right)));
}

proptest! {
    #[test]
    fn parser_is_total_and_deterministic(text in "[ -~]{0,200}") {
        let lexicon = shipped::lexicon().unwrap();
        let a = parse_report("p", &text, &lexicon).unwrap();
        let b = parse_report("p", &text, &lexicon).unwrap();
        prop_assert_eq!(&a, &b);
        for f in &a.findings {
            prop_assert!(f.span.0 < f.span.1 && f.span.1 <= text.len());
            if f.context != Context::Positive {
                prop_assert!(f.locations.is_empty());
                prop_assert!(f.location_source.is_none());
            } else {
                prop_assert!(!f.locations.is_empty());
            }
        }
        for p in &a.parents {
            prop_assert!(!p.children.is_empty());
        }
    }
}

#[test]
fn cues_only_reach_six_tokens_forward() {
    let lexicon = shipped::lexicon().unwrap();
    let near = parse_report("r", "Resolution of left lower lobe pneumonia.", &lexicon).unwrap();
    assert_eq!(near.findings[0].context, Context::Negative);
    // "resolution of" starts eight tokens before the mention
    let far = parse_report("r", "Resolution of the previously seen left lower lobe pneumonia.", &lexicon).unwrap();
    assert_eq!(far.findings[0].context, Context::Positive);
    // trailing cues are not read
    let after = parse_report("r", "Hazy opacity over the right lung base has resolved.", &lexicon).unwrap();
    assert_eq!(after.findings[0].context, Context::Positive);
}

#[test]
fn reset_words_end_a_cue() {
    let lexicon = shipped::lexicon().unwrap();
    let p = parse_report("r", "No effusion, but small right pneumothorax.", &lexicon).unwrap();
    let contexts: Vec<_> = p.findings.iter().map(|f| (f.child_finding.as_str(), f.context)).collect();
    assert_eq!(
        contexts,
        vec![("pleural effusion", Context::Negative), ("pneumothorax", Context::Positive)]
    );
}
