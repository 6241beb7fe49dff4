use cxr_core::image::Plane;
use cxr_core::metrics::{attention_in_box, auroc, pr_curve, ScoredSet};
use proptest::prelude::*;

fn set(scores: &[f64], labels: &[bool]) -> ScoredSet {
    ScoredSet::new("c", scores.to_vec(), labels.to_vec()).unwrap()
}

#[test]
fn auroc_hand_cases() {
    let perfect = set(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
    assert_eq!(auroc(&perfect).unwrap(), 1.0);
    let inverted = set(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]);
    assert_eq!(auroc(&inverted).unwrap(), 0.0);
    let tied = set(&[0.5; 4], &[true, false, true, false]);
    assert_eq!(auroc(&tied).unwrap(), 0.5);
    // pairs: (0.8,0.6) (0.8,0.1) (0.4,0.6) (0.4,0.1) -> 3 of 4
    let mixed = set(&[0.8, 0.6, 0.4, 0.1], &[true, false, true, false]);
    assert_eq!(auroc(&mixed).unwrap(), 0.75);
}

#[test]
fn scores_must_be_probabilities() {
    assert!(ScoredSet::new("c", vec![1.5], vec![true]).is_err());
    assert!(ScoredSet::new("c", vec![0.5], vec![true, false]).is_err());
}

#[test]
fn auroc_needs_both_classes() {
    assert!(auroc(&set(&[0.1, 0.2], &[true, true])).is_err());
    assert!(auroc(&set(&[0.1, 0.2], &[false, false])).is_err());
}

#[test]
fn pr_curve_hand_case() {
    let s = set(&[0.9, 0.8, 0.7, 0.7, 0.3], &[true, false, true, false, true]);
    let c = pr_curve(&s).unwrap();
    let got: Vec<(f64, f64, f64)> = c.points.iter().map(|p| (p.threshold, p.precision, p.recall)).collect();
    let third = 1.0 / 3.0;
    assert_eq!(
        got,
        vec![
            (0.9, 1.0, third),
            (0.8, 0.5, third),
            (0.7, 0.5, 2.0 * third),
            (0.3, 0.6, 1.0),
        ]
    );
    let area = third * 1.0 + 0.0 * 0.75 + third * 0.5 + third * 0.55;
    assert!((c.area - area).abs() < 1e-15);
    assert!(pr_curve(&set(&[0.1], &[false])).is_err());
}

#[test]
fn attention_in_box_fraction() {
    let a = Plane::new(2, 2, vec![1.0, 3.0, 0.0, 4.0]).unwrap();
    let h = Plane::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert_eq!(attention_in_box(&a, &h).unwrap(), 3.0 / 8.0);
    assert_eq!(attention_in_box(&Plane::zeros(2, 2), &h).unwrap(), 0.0);
    assert!(attention_in_box(&a, &Plane::zeros(3, 2)).is_err());
}

proptest! {
    #[test]
    fn auroc_ignores_monotone_rescaling(
        items in prop::collection::vec((0u8..30, any::<bool>()), 2..40),
    ) {
        let labels: Vec<bool> = items.iter().map(|x| x.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let raw: Vec<f64> = items.iter().map(|x| x.0 as f64 / 30.0).collect();
        let squashed: Vec<f64> = raw.iter().map(|v| v * v * v).collect();
        let a = auroc(&set(&raw, &labels)).unwrap();
        let b = auroc(&set(&squashed, &labels)).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn flipping_labels_reflects_auroc(
        items in prop::collection::vec((0u8..30, any::<bool>()), 2..40),
    ) {
        let labels: Vec<bool> = items.iter().map(|x| x.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let scores: Vec<f64> = items.iter().map(|x| x.0 as f64 / 30.0).collect();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = auroc(&set(&scores, &labels)).unwrap();
        let b = auroc(&set(&scores, &flipped)).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pr_curve_is_well_formed(
        items in prop::collection::vec((0u8..30, any::<bool>()), 1..40),
    ) {
        let labels: Vec<bool> = items.iter().map(|x| x.1).collect();
        prop_assume!(labels.iter().any(|&l| l));
        let scores: Vec<f64> = items.iter().map(|x| x.0 as f64 / 30.0).collect();
        let c = pr_curve(&set(&scores, &labels)).unwrap();
        prop_assert_eq!(c.points.last().unwrap().recall, 1.0);
        for w in c.points.windows(2) {
            prop_assert!(w[0].threshold > w[1].threshold);
            prop_assert!(w[0].recall <= w[1].recall);
        }
        prop_assert!((0.0..=1.0).contains(&c.area));
    }
}
