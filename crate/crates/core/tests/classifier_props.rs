//! Histogram classifiers against exact oracles.

use std::collections::BTreeMap;

use col_core::classifier::{
    combine, drift_between, entropy, propose_new_class, ClassifierId, HistogramClassifier, Posterior,
};
use col_core::kb::{Element, KnowledgeBase};
use col_core::model::{FeatureDef, FeatureScope, Value};
use proptest::prelude::*;

/// Every way to spread at most `max_total` observations over `cells` cells.
fn compositions(cells: usize, max_total: u64, mut visit: impl FnMut(&[u64])) {
    fn go(cells: &mut Vec<u64>, i: usize, left: u64, visit: &mut dyn FnMut(&[u64])) {
        if i == cells.len() {
            visit(cells);
            return;
        }
        for n in 0..=left {
            cells[i] = n;
            go(cells, i + 1, left - n, visit);
        }
        cells[i] = 0;
    }
    let mut buf = vec![0; cells];
    go(&mut buf, 0, max_total, &mut visit);
}

fn classifier(classes: usize, bins: usize, cells: &[u64]) -> HistogramClassifier {
    let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let mut clf = HistogramClassifier::supervised(ClassifierId(0), "f", "K", &names, bins);
    for (c, name) in names.iter().enumerate() {
        for b in 0..bins {
            for _ in 0..cells[c * bins + b] {
                clf.observe_bin(b, Some(name)).unwrap();
            }
        }
    }
    clf
}

/// Posterior by exact integer arithmetic with α = 1: the score of class c
/// for bin v is (n_cv + 1)·n_c / (n_c + B), over a common denominator.
fn oracle(classes: usize, bins: usize, cells: &[u64], v: usize) -> Vec<f64> {
    let totals: Vec<u128> = (0..classes).map(|c| cells[c * bins..(c + 1) * bins].iter().map(|&n| n as u128).sum()).collect();
    if totals.iter().all(|&t| t == 0) {
        return vec![1.0 / classes as f64; classes];
    }
    let common: u128 = totals.iter().map(|t| t + bins as u128).product();
    let scores: Vec<u128> = (0..classes)
        .map(|c| (cells[c * bins + v] as u128 + 1) * totals[c] * (common / (totals[c] + bins as u128)))
        .collect();
    let z: u128 = scores.iter().sum();
    scores.iter().map(|&s| s as f64 / z as f64).collect()
}

#[test]
fn classify_matches_the_exact_oracle_exhaustively() {
    let mut checked = 0usize;
    for classes in 1..=3 {
        for bins in 1..=4 {
            compositions(classes * bins, 10, |cells| {
                let clf = classifier(classes, bins, cells);
                for v in 0..bins {
                    let post = clf.classify_bin(v, None).unwrap();
                    let want = oracle(classes, bins, cells, v);
                    for (c, p) in want.iter().enumerate() {
                        let got = post.get(&format!("c{c}"));
                        assert!((got - p).abs() <= 1e-12, "cells {cells:?} bin {v}: {got} vs {p}");
                    }
                    assert!((post.sum() - 1.0).abs() <= 1e-9);
                    checked += 1;
                }
            });
        }
    }
    assert!(checked > 1_000_000, "{checked}");
}

#[test]
fn worked_example_posterior() {
    // A: Yes 3, No 1; B: Yes 0, No 4.
    let clf = classifier(2, 2, &[3, 1, 0, 4]);
    let post = clf.classify_bin(0, None).unwrap();
    assert!((post.get("c0") - 0.8).abs() < 1e-12);
    assert!((post.get("c1") - 0.2).abs() < 1e-12);
}

#[test]
fn known_entropies() {
    assert_eq!(entropy(&[5, 5]), 1.0);
    assert_eq!(entropy(&[7, 0]), 0.0);
    assert_eq!(entropy(&[]), 0.0);
    let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
    assert!((entropy(&[3, 1]) - h).abs() < 1e-15);
    assert!((h - 0.8113).abs() < 1e-4);
}

#[test]
fn known_combinations() {
    let a = Posterior::from_pairs([("A", 0.8), ("B", 0.2)]);
    let half = Posterior::from_pairs([("A", 0.5), ("B", 0.5)]);
    let b = Posterior::from_pairs([("A", 0.9), ("B", 0.1)]);
    let ab = combine(&[a.clone(), half]).unwrap();
    assert!((ab.get("A") - 0.8).abs() < 1e-12);
    let ab = combine(&[a, b]).unwrap();
    assert!((ab.get("A") - 0.72 / 0.74).abs() < 1e-12);
    assert!((ab.get("B") - 0.02 / 0.74).abs() < 1e-12);
}

#[test]
fn drift_examples() {
    assert!(!drift_between(&[10, 10], &[2, 2], 0.25));
    assert!(drift_between(&[10, 10], &[4, 0], 0.5));
    assert!(!drift_between(&[10, 10], &[4, 0], f64::INFINITY));
}

#[test]
fn novelty_examples() {
    assert!(propose_new_class(&Posterior::from_pairs([("A", 0.97), ("B", 0.03)]), 0.5).is_none());
    assert!(propose_new_class(&Posterior::uniform(["A", "B", "C", "D"]), 0.5).is_some());
    assert!(propose_new_class(&Posterior::uniform(["A", "B", "C", "D"]), 0.0).is_none());
}

fn posterior(classes: usize) -> impl Strategy<Value = Posterior> {
    prop::collection::vec(0.001f64..1.0, classes).prop_map(|w| {
        let z: f64 = w.iter().sum();
        Posterior::from_pairs(w.iter().enumerate().map(|(i, x)| (format!("c{i}"), x / z)))
    })
}

fn posteriors() -> impl Strategy<Value = Vec<Posterior>> {
    (1usize..=4).prop_flat_map(|k| prop::collection::vec(posterior(k), 1..6))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn posteriors_sum_to_one(
        bins in 1usize..6,
        classes in 1usize..4,
        seq in prop::collection::vec((0usize..6, 0usize..4), 0..60),
    ) {
        let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
        let mut clf = HistogramClassifier::supervised(ClassifierId(0), "f", "K", &names, bins);
        for (b, c) in seq {
            clf.observe_bin(b % bins, Some(&names[c % classes])).unwrap();
            for v in 0..bins {
                let p = clf.classify_bin(v, None).unwrap();
                prop_assert!((p.sum() - 1.0).abs() <= 1e-9);
                prop_assert!(p.probabilities.values().all(|x| *x >= 0.0));
            }
        }
    }

    #[test]
    fn entropy_is_bounded(counts in prop::collection::vec(0u64..50, 1..8)) {
        let h = entropy(&counts);
        let max = (counts.len() as f64).log2();
        prop_assert!(h >= 0.0 && h <= max + 1e-12);
        let all_equal = counts.iter().all(|&c| c == counts[0]);
        if counts[0] > 0 && all_equal {
            prop_assert!((h - max).abs() < 1e-12);
        }
        if (h - max).abs() < 1e-12 && counts.len() > 1 {
            prop_assert!(all_equal || counts.iter().sum::<u64>() == 0);
        }
    }

    #[test]
    fn combine_ignores_order(ps in posteriors(), seed in any::<u64>()) {
        let mut shuffled = ps.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = combine(&ps).unwrap();
        let b = combine(&shuffled).unwrap();
        for (k, v) in &a.probabilities {
            prop_assert!((v - b.get(k)).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_fallback_is_an_identity(ps in posteriors(), at in any::<prop::sample::Index>()) {
        let classes: Vec<String> = ps[0].probabilities.keys().cloned().collect();
        let mut with = ps.clone();
        with.insert(at.index(ps.len() + 1), Posterior::uniform(classes));
        let a = combine(&ps).unwrap();
        let b = combine(&with).unwrap();
        for (k, v) in &a.probabilities {
            prop_assert!((v - b.get(k)).abs() <= 1e-12);
        }
    }

    #[test]
    fn combine_is_associative_under_renormalization(ps in posteriors(), split in any::<prop::sample::Index>()) {
        let cut = split.index(ps.len());
        if cut == 0 {
            return Ok(());
        }
        let left = combine(&ps[..cut]).unwrap();
        let right = if cut < ps.len() { Some(combine(&ps[cut..]).unwrap()) } else { None };
        let nested = combine(&[Some(left), right].into_iter().flatten().collect::<Vec<_>>()).unwrap();
        let flat = combine(&ps).unwrap();
        for (k, v) in &flat.probabilities {
            prop_assert!((v - nested.get(k)).abs() <= 1e-9);
        }
    }

    #[test]
    fn removing_an_untouched_class_keeps_ratios(
        seq in prop::collection::vec((0usize..3, 0usize..2), 1..30),
        bin in 0usize..3,
    ) {
        let mut kb = KnowledgeBase::new();
        kb.add_concept("K").unwrap();
        for c in ["a", "b", "spare"] {
            kb.add_class("K", c).unwrap();
        }
        kb.add_feature(FeatureScope::Concept("K".into()), FeatureDef::categorical("f", ["x", "y", "z"])).unwrap();
        let labels = ["x", "y", "z"];
        for (b, c) in &seq {
            kb.observe("f", &Value::label(labels[*b]), Some(["a", "b"][*c])).unwrap();
        }
        let value = Value::label(labels[bin]);
        let before = kb.classify("f", &value).unwrap();
        prop_assert_eq!(before.get("spare"), 0.0);
        kb.suppress(&Element::Class { concept: "K".into(), name: "spare".into() }, false).unwrap();
        let after = kb.classify("f", &value).unwrap();
        prop_assert!((after.sum() - 1.0).abs() <= 1e-9);
        let (a0, b0, a1, b1) = (before.get("a"), before.get("b"), after.get("a"), after.get("b"));
        prop_assert!((a0 * b1 - a1 * b0).abs() <= 1e-12);
    }
}

#[test]
fn supports_override_priors() {
    let clf = classifier(2, 2, &[1, 0, 0, 1]);
    let support = BTreeMap::from([("c0".to_string(), 3u64), ("c1".to_string(), 1)]);
    let p = clf.classify_bin(0, Some(&support)).unwrap();
    // likelihoods 2/3 and 1/3, priors 3/4 and 1/4.
    let (a, b) = (2.0 / 3.0 * 0.75, 1.0 / 3.0 * 0.25);
    assert!((p.get("c0") - a / (a + b)).abs() < 1e-12);
}
