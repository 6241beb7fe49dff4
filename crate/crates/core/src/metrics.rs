//! Ranking metrics and the attention localization score.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::image::Plane;

/// Scores in `[0, 1]` with parallel binary labels for one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub class_name: String,
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(class_name: impl Into<String>, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(shape_err!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            ));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(invalid!("score {s} outside [0, 1]"));
        }
        Ok(Self {
            class_name: class_name.into(),
            scores,
            labels,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Indices sorted by ascending score; equal scores keep index order.
    fn ascending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        idx
    }
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half. Computed from average ranks.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let pos = set.positives();
    let neg = set.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(invalid!(
            "auroc of `{}` needs both classes ({pos} positive, {neg} negative)",
            set.class_name
        ));
    }
    let order = set.ascending();
    // Ranks are 1-based; a tie group spanning ranks a..=b gets (a+b)/2.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let s = set.scores[order[start]];
        let mut end = start;
        while end + 1 < order.len() && set.scores[order[end + 1]] == s {
            end += 1;
        }
        let avg = (start + end + 2) as f64 / 2.0;
        let group_pos = order[start..=end].iter().filter(|&&i| set.labels[i]).count();
        rank_sum += avg * group_pos as f64;
        start = end + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, highest threshold first.
    pub points: Vec<PrPoint>,
    /// Trapezoidal area over recall, starting from `(0, P₁)` where `P₁` is
    /// the precision at the highest threshold.
    pub area: f64,
}

/// Precision/recall at each distinct threshold `t` (predict positive iff
/// score ≥ t), so tied scores always enter together.
pub fn pr_curve(set: &ScoredSet) -> Result<PrCurve> {
    let pos = set.positives();
    if pos == 0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "pr curve of `{}` has no positives",
            set.class_name
        )));
    }
    let mut order = set.ascending();
    order.reverse();
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == t {
            if set.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / pos as f64,
        });
    }
    let area = trapezoid_area(&points);
    Ok(PrCurve { points, area })
}

fn trapezoid_area(points: &[PrPoint]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let (mut r0, mut p0) = (0.0, first.precision);
    let mut area = 0.0;
    for p in points {
        area += (p.recall - r0) * (p.precision + p0) / 2.0;
        r0 = p.recall;
        p0 = p.precision;
    }
    area
}

/// Fraction of attention mass that falls inside the mask: `Σ(A⊙H) / ΣA`,
/// zero when `ΣA = 0`.
pub fn attention_in_box(attention: &Plane, mask: &Plane) -> Result<f64> {
    if !attention.same_grid(mask) {
        return Err(shape_err!(
            "attention {}x{} vs mask {}x{}",
            attention.height,
            attention.width,
            mask.height,
            mask.width
        ));
    }
    let total: f64 = attention.sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let inside: f64 = attention
        .data
        .iter()
        .zip(&mask.data)
        .map(|(a, h)| a * h)
        .sum();
    Ok(inside / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new("t", scores.to_vec(), labels.iter().map(|&l| l == 1).collect()).unwrap()
    }

    /// Counts ordered positive/negative pairs directly.
    fn pair_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut good = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        good += 1.0;
                    } else if scores[i] == scores[j] {
                        good += 0.5;
                    }
                }
            }
        }
        good / pairs
    }

    /// Recomputes the confusion counts from scratch at every threshold.
    fn sweep_oracle(scores: &[f64], labels: &[bool]) -> Vec<PrPoint> {
        let mut thresholds = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        thresholds
            .into_iter()
            .map(|t| {
                let sel: Vec<bool> = scores
                    .iter()
                    .zip(labels)
                    .filter(|(s, _)| **s >= t)
                    .map(|(_, &l)| l)
                    .collect();
                let tp = sel.iter().filter(|&&l| l).count() as f64;
                PrPoint {
                    threshold: t,
                    precision: tp / sel.len() as f64,
                    recall: tp / pos,
                }
            })
            .collect()
    }

    fn oracle_area(points: &[PrPoint]) -> f64 {
        let mut area = 0.0;
        for k in 0..points.len() {
            let (r_prev, p_prev) = if k == 0 {
                (0.0, points[0].precision)
            } else {
                (points[k - 1].recall, points[k - 1].precision)
            };
            area += (points[k].recall - r_prev) * (points[k].precision + p_prev) / 2.0;
        }
        area
    }

    fn check_against_oracles(scores: &[f64], labels: &[bool]) {
        let s = ScoredSet::new("x", scores.to_vec(), labels.to_vec()).unwrap();
        let pos = s.positives();
        if pos > 0 && pos < s.len() {
            let got = auroc(&s).unwrap();
            let want = pair_oracle(scores, labels);
            assert!((got - want).abs() < 1e-12, "{scores:?} {labels:?}: {got} vs {want}");
        }
        if pos > 0 {
            let c = pr_curve(&s).unwrap();
            let want = sweep_oracle(scores, labels);
            assert_eq!(c.points.len(), want.len());
            for (a, b) in c.points.iter().zip(&want) {
                assert_eq!(a.threshold, b.threshold);
                assert!((a.precision - b.precision).abs() < 1e-12);
                assert!((a.recall - b.recall).abs() < 1e-12);
            }
            assert!((c.area - oracle_area(&want)).abs() < 1e-12);
        }
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&set(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[0.5; 4], &[1, 0, 1, 0])).unwrap(), 0.5);
        assert_eq!(auroc(&set(&[0.9, 0.4, 0.35, 0.8], &[1, 0, 1, 0])).unwrap(), 0.5);
        assert!(auroc(&set(&[0.1, 0.2], &[1, 1])).is_err());
    }

    #[test]
    fn pr_examples() {
        let c = pr_curve(&set(&[0.9, 0.1], &[1, 0])).unwrap();
        assert_eq!(c.points[0], PrPoint { threshold: 0.9, precision: 1.0, recall: 1.0 });
        assert_eq!(c.area, 1.0);
        let c = pr_curve(&set(&[0.9, 0.8, 0.7, 0.3, 0.2], &[1, 1, 1, 0, 0])).unwrap();
        assert_eq!(c.area, 1.0);
        assert!(pr_curve(&set(&[0.1, 0.2], &[0, 0])).is_err());
    }

    #[test]
    fn pr_six_sample_hand_case() {
        let scores = [0.9, 0.8, 0.8, 0.6, 0.4, 0.2];
        let labels = [1, 0, 1, 1, 0, 0];
        let c = pr_curve(&set(&scores, &labels)).unwrap();
        // thresholds 0.9, 0.8, 0.6, 0.4, 0.2
        let want = [(1.0, 1.0 / 3.0), (2.0 / 3.0, 2.0 / 3.0), (0.75, 1.0), (0.6, 1.0), (0.5, 1.0)];
        for (p, (prec, rec)) in c.points.iter().zip(want) {
            assert!((p.precision - prec).abs() < 1e-15 && (p.recall - rec).abs() < 1e-15);
        }
        let area = 1.0 / 3.0
            + (1.0 / 3.0) * (1.0 + 2.0 / 3.0) / 2.0
            + (1.0 / 3.0) * (2.0 / 3.0 + 0.75) / 2.0;
        assert!((c.area - area).abs() < 1e-15);
        check_against_oracles(
            &scores,
            &labels.iter().map(|&l| l == 1).collect::<Vec<_>>(),
        );
    }

    #[test]
    fn exhaustive_small_inputs() {
        // Every score pattern over a k-level grid and every labelling, n ≤ 5.
        for n in 1..=5usize {
            let levels = n as u32;
            let patterns = levels.pow(n as u32);
            for code in 0..patterns {
                let mut c = code;
                let scores: Vec<f64> = (0..n)
                    .map(|_| {
                        let v = c % levels;
                        c /= levels;
                        v as f64 / levels as f64
                    })
                    .collect();
                for lab in 0..(1u32 << n) {
                    let labels: Vec<bool> = (0..n).map(|i| lab >> i & 1 == 1).collect();
                    check_against_oracles(&scores, &labels);
                }
            }
        }
    }

    #[test]
    fn every_labelling_up_to_twelve() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in 6..=12usize {
            for lab in 0..(1u32 << n) {
                let labels: Vec<bool> = (0..n).map(|i| lab >> i & 1 == 1).collect();
                // coarse levels force plenty of ties
                let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
                check_against_oracles(&scores, &labels);
            }
        }
    }

    proptest! {
        #[test]
        fn metrics_match_oracles(pairs in prop::collection::vec((0u8..=20, any::<bool>()), 1..=12)) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 20.0).collect();
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            check_against_oracles(&scores, &labels);
        }

        #[test]
        fn joint_shuffle_invariance(
            pairs in prop::collection::vec((0u8..=10, any::<bool>()), 2..=30),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mk = |v: &[(u8, bool)]| ScoredSet::new(
                "p",
                v.iter().map(|p| p.0 as f64 / 10.0).collect(),
                v.iter().map(|p| p.1).collect(),
            ).unwrap();
            let (a, b) = (mk(&pairs), mk(&shuffled));
            if let (Ok(x), Ok(y)) = (auroc(&a), auroc(&b)) {
                prop_assert_eq!(x, y);
            }
            if let (Ok(x), Ok(y)) = (pr_curve(&a), pr_curve(&b)) {
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn attention_in_box_examples() {
        let mut h = Plane::zeros(4, 4);
        for r in 0..2 {
            for c in 0..2 {
                h.data[r * 4 + c] = 1.0;
            }
        }
        let uniform = attention_in_box(&Plane::filled(4, 4, 0.3), &h).unwrap();
        assert!((uniform - 0.25).abs() < 1e-15);
        assert_eq!(attention_in_box(&Plane::zeros(4, 4), &h).unwrap(), 0.0);
        let mut a = Plane::zeros(4, 4);
        a.data[0] = 0.7;
        a.data[5] = 0.2;
        assert_eq!(attention_in_box(&a, &h).unwrap(), 1.0);
        assert!(attention_in_box(&a, &Plane::zeros(2, 2)).is_err());
    }
}
