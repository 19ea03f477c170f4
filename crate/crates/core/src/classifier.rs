//! Per-feature histogram classifiers.
//!
//! Every feature owns exactly one classifier. A classifier bound to a
//! concept-scoped feature keeps one histogram per class of that concept
//! (supervised); a frame-scoped feature gets a single pooled histogram
//! (unsupervised). Posteriors are Laplace-smoothed relative frequencies
//! weighted by class support, and several posteriors combine by the
//! independent-feature product rule.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::FactSet;
use crate::model::{name_key, FeatureDef, FeatureKind, Value};

/// Default Laplace smoothing.
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Default entropy gap (bits) above which a classifier is said to drift.
pub const DEFAULT_DRIFT_THRESHOLD: f64 = 0.25;
/// Tolerance on posterior normalization.
pub const POSTERIOR_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassifierId(pub u64);

impl fmt::Display for ClassifierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error("value {value} is not in the domain of feature {feature}")]
    UnknownValue { feature: String, value: String },
    #[error("supervised classifier for {feature} needs a class label")]
    MissingLabel { feature: String },
    #[error("unsupervised classifier for {feature} does not take a class label")]
    UnexpectedLabel { feature: String },
    #[error("class {class} is not tracked by the classifier for {feature}")]
    UnknownClass { feature: String, class: String },
    #[error("classifier for {feature} is unsupervised and cannot classify")]
    ModeError { feature: String },
    #[error("classifier for {feature} has no classes to choose from")]
    NoClasses { feature: String },
    #[error("no posterior to combine")]
    NoEvidence,
    #[error("posteriors range over different class sets")]
    ClassSetMismatch,
    #[error("every class received zero probability")]
    Degenerate,
    #[error("feature {0} is not ordinal")]
    NotOrdinal(String),
    #[error("feature {0} is not bound in both fact sets")]
    Unbound(String),
}

type Result<T> = std::result::Result<T, ClassifierError>;

/// Bin counts of one class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: String,
    pub counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Histograms {
    Unsupervised { counts: Vec<u64> },
    /// Keyed by class name key.
    Supervised { concept: String, classes: BTreeMap<String, ClassCounts> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramClassifier {
    pub id: ClassifierId,
    pub feature: String,
    pub alpha: f64,
    pub bins: usize,
    pub histograms: Histograms,
}

/// Class probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub probabilities: BTreeMap<String, f64>,
    /// Set when no evidence was available and the posterior is uniform.
    #[serde(default)]
    pub uniform_fallback: bool,
}

impl Posterior {
    pub fn uniform<I, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = classes.into_iter().map(Into::into).collect();
        let p = 1.0 / names.len() as f64;
        Posterior {
            probabilities: names.into_iter().map(|c| (c, p)).collect(),
            uniform_fallback: true,
        }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Posterior {
            probabilities: pairs.into_iter().map(|(c, p)| (c.into(), p)).collect(),
            uniform_fallback: false,
        }
    }

    pub fn get(&self, class: &str) -> f64 {
        self.probabilities.get(class).copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.probabilities.values().sum()
    }

    /// The most probable class; ties resolve to the first class by name.
    pub fn best(&self) -> Option<(&str, f64)> {
        self.probabilities
            .iter()
            .fold(None, |best: Option<(&str, f64)>, (c, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((c.as_str(), p)),
            })
    }

    fn class_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.probabilities.keys().map(|c| name_key(c)).collect();
        keys.sort();
        keys
    }
}

impl HistogramClassifier {
    pub fn unsupervised(id: ClassifierId, feature: impl Into<String>, bins: usize) -> Self {
        HistogramClassifier {
            id,
            feature: feature.into(),
            alpha: DEFAULT_ALPHA,
            bins,
            histograms: Histograms::Unsupervised { counts: vec![0; bins] },
        }
    }

    pub fn supervised<I, S>(
        id: ClassifierId,
        feature: impl Into<String>,
        concept: impl Into<String>,
        classes: I,
        bins: usize,
    ) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let classes = classes
            .into_iter()
            .map(|c| {
                let class = c.into();
                (name_key(&class), ClassCounts { class, counts: vec![0; bins] })
            })
            .collect();
        HistogramClassifier {
            id,
            feature: feature.into(),
            alpha: DEFAULT_ALPHA,
            bins,
            histograms: Histograms::Supervised { concept: concept.into(), classes },
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn is_supervised(&self) -> bool {
        matches!(self.histograms, Histograms::Supervised { .. })
    }

    /// Concept whose classes the classifier discriminates.
    pub fn concept(&self) -> Option<&str> {
        match &self.histograms {
            Histograms::Supervised { concept, .. } => Some(concept),
            Histograms::Unsupervised { .. } => None,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        match &self.histograms {
            Histograms::Supervised { classes, .. } => {
                classes.values().map(|c| c.class.clone()).collect()
            }
            Histograms::Unsupervised { .. } => Vec::new(),
        }
    }

    pub fn class_counts(&self, class: &str) -> Option<&[u64]> {
        match &self.histograms {
            Histograms::Supervised { classes, .. } => {
                classes.get(&name_key(class)).map(|c| c.counts.as_slice())
            }
            Histograms::Unsupervised { .. } => None,
        }
    }

    /// Counts pooled over every class.
    pub fn lifetime_histogram(&self) -> Vec<u64> {
        match &self.histograms {
            Histograms::Unsupervised { counts } => counts.clone(),
            Histograms::Supervised { classes, .. } => {
                let mut pooled = vec![0; self.bins];
                for c in classes.values() {
                    for (p, n) in pooled.iter_mut().zip(&c.counts) {
                        *p += n;
                    }
                }
                pooled
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.lifetime_histogram().iter().sum()
    }

    /// Records one observation of bin `bin`.
    pub fn observe_bin(&mut self, bin: usize, class: Option<&str>) -> Result<()> {
        if bin >= self.bins {
            return Err(ClassifierError::UnknownValue {
                feature: self.feature.clone(),
                value: format!("bin {bin}"),
            });
        }
        let feature = self.feature.clone();
        match (&mut self.histograms, class) {
            (Histograms::Unsupervised { counts }, None) => counts[bin] += 1,
            (Histograms::Unsupervised { .. }, Some(_)) => {
                return Err(ClassifierError::UnexpectedLabel { feature })
            }
            (Histograms::Supervised { .. }, None) => {
                return Err(ClassifierError::MissingLabel { feature })
            }
            (Histograms::Supervised { classes, .. }, Some(class)) => {
                let entry = classes.get_mut(&name_key(class)).ok_or_else(|| {
                    ClassifierError::UnknownClass { feature, class: class.to_string() }
                })?;
                entry.counts[bin] += 1;
            }
        }
        Ok(())
    }

    /// Records one observation of `value` for the feature `def`.
    pub fn observe(&mut self, def: &FeatureDef, value: &Value, class: Option<&str>) -> Result<()> {
        let bin = self.bin(def, value)?;
        self.observe_bin(bin, class)
    }

    fn bin(&self, def: &FeatureDef, value: &Value) -> Result<usize> {
        def.bin_of(value).ok_or_else(|| ClassifierError::UnknownValue {
            feature: def.name.clone(),
            value: value.to_string(),
        })
    }

    /// Grows every histogram by one empty bin (the domain gained a value).
    pub fn push_bin(&mut self) {
        self.bins += 1;
        match &mut self.histograms {
            Histograms::Unsupervised { counts } => counts.push(0),
            Histograms::Supervised { classes, .. } => {
                for c in classes.values_mut() {
                    c.counts.push(0);
                }
            }
        }
    }

    pub(crate) fn add_class(&mut self, class: &str) {
        let bins = self.bins;
        if let Histograms::Supervised { classes, .. } = &mut self.histograms {
            classes
                .entry(name_key(class))
                .or_insert_with(|| ClassCounts { class: class.to_string(), counts: vec![0; bins] });
        }
    }

    pub(crate) fn remove_class(&mut self, class: &str) {
        if let Histograms::Supervised { classes, .. } = &mut self.histograms {
            classes.remove(&name_key(class));
        }
    }

    /// Posterior over classes for `value`, with class priors proportional to
    /// the observations seen by this classifier.
    pub fn classify(&self, def: &FeatureDef, value: &Value) -> Result<Posterior> {
        let bin = self.bin(def, value)?;
        self.classify_bin(bin, None)
    }

    /// Posterior for bin `bin`. `support` overrides the class priors (the
    /// knowledge base passes the concept's class supports); missing classes
    /// count as zero support.
    pub fn classify_bin(&self, bin: usize, support: Option<&BTreeMap<String, u64>>) -> Result<Posterior> {
        let classes = match &self.histograms {
            Histograms::Supervised { classes, .. } => classes,
            Histograms::Unsupervised { .. } => {
                return Err(ClassifierError::ModeError { feature: self.feature.clone() })
            }
        };
        if classes.is_empty() {
            return Err(ClassifierError::NoClasses { feature: self.feature.clone() });
        }
        if bin >= self.bins {
            return Err(ClassifierError::UnknownValue {
                feature: self.feature.clone(),
                value: format!("bin {bin}"),
            });
        }
        let names = classes.values().map(|c| c.class.clone());
        if classes.values().all(|c| c.counts.iter().all(|&n| n == 0)) {
            return Ok(Posterior::uniform(names));
        }
        let prior_of = |key: &str, c: &ClassCounts| -> f64 {
            match support {
                Some(s) => s.get(key).copied().unwrap_or(0) as f64,
                None => c.counts.iter().sum::<u64>() as f64,
            }
        };
        let prior_total: f64 = classes.iter().map(|(k, c)| prior_of(k, c)).sum();
        let width = self.alpha * self.bins as f64;
        let scores: Vec<(String, f64)> = classes
            .iter()
            .map(|(k, c)| {
                let total = c.counts.iter().sum::<u64>() as f64;
                let likelihood = (c.counts[bin] as f64 + self.alpha) / (total + width);
                let prior = if prior_total > 0.0 {
                    prior_of(k, c) / prior_total
                } else {
                    1.0 / classes.len() as f64
                };
                (c.class.clone(), likelihood * prior)
            })
            .collect();
        let z: f64 = scores.iter().map(|(_, s)| s).sum();
        if z <= 0.0 || !z.is_finite() {
            return Ok(Posterior::uniform(names));
        }
        Ok(Posterior::from_pairs(scores.into_iter().map(|(c, s)| (c, s / z))))
    }

    /// Entropy of the pooled histogram.
    pub fn entropy(&self) -> f64 {
        entropy(&self.lifetime_histogram())
    }

    /// Whether a window of recent observations differs from the lifetime
    /// histogram by more than `threshold` bits of entropy.
    pub fn drift_detect(&self, def: &FeatureDef, window: &[Value], threshold: f64) -> Result<bool> {
        let mut recent = vec![0u64; self.bins];
        for v in window {
            recent[self.bin(def, v)?] += 1;
        }
        Ok(drift_between(&self.lifetime_histogram(), &recent, threshold))
    }
}

/// `|H(window) − H(lifetime)| > threshold`.
pub fn drift_between(lifetime: &[u64], window: &[u64], threshold: f64) -> bool {
    (entropy(window) - entropy(lifetime)).abs() > threshold
}

/// Shannon entropy in bits; zero for an empty histogram.
pub fn entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Product-rule combination of per-feature posteriors.
///
/// Posteriors flagged as uniform fallbacks carry no evidence and are
/// skipped; per-class log terms are summed in sorted order, so the result
/// does not depend on the order of `posteriors`.
pub fn combine(posteriors: &[Posterior]) -> Result<Posterior> {
    let first = posteriors.first().ok_or(ClassifierError::NoEvidence)?;
    let keys = first.class_keys();
    if posteriors.iter().any(|p| p.class_keys() != keys) {
        return Err(ClassifierError::ClassSetMismatch);
    }
    let informative: Vec<&Posterior> = posteriors.iter().filter(|p| !p.uniform_fallback).collect();
    if informative.is_empty() {
        return Ok(Posterior::uniform(first.probabilities.keys().cloned()));
    }
    let classes: Vec<&String> = first.probabilities.keys().collect();
    let log_scores: Vec<f64> = classes
        .iter()
        .map(|class| {
            let key = name_key(class);
            let mut terms: Vec<f64> = informative
                .iter()
                .map(|p| {
                    let prob = p
                        .probabilities
                        .iter()
                        .find(|(c, _)| name_key(c) == key)
                        .map_or(0.0, |(_, &v)| v);
                    prob.ln()
                })
                .collect();
            terms.sort_by(f64::total_cmp);
            terms.iter().sum()
        })
        .collect();
    let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(ClassifierError::Degenerate);
    }
    let weights: Vec<f64> = log_scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(Posterior::from_pairs(
        classes.into_iter().cloned().zip(weights.into_iter().map(|w| w / z)),
    ))
}

/// Evidence that an observation belongs to none of the known classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoveltyProposal {
    pub best_class: Option<String>,
    pub confidence: f64,
    pub threshold: f64,
}

/// Proposes a new class when no class reaches `threshold` probability.
pub fn propose_new_class(posterior: &Posterior, threshold: f64) -> Option<NoveltyProposal> {
    let (best, confidence) = match posterior.best() {
        Some((c, p)) => (Some(c.to_string()), p),
        None => (None, 0.0),
    };
    (confidence < threshold).then_some(NoveltyProposal { best_class: best, confidence, threshold })
}

/// Orders two fact sets by the position of their value in an ordinal domain.
pub fn compare_ordinal(def: &FeatureDef, a: &FactSet, b: &FactSet) -> Result<Ordering> {
    if def.kind != FeatureKind::Ordinal {
        return Err(ClassifierError::NotOrdinal(def.name.clone()));
    }
    let position = |facts: &FactSet| {
        facts
            .value(&def.name)
            .and_then(Value::as_label)
            .and_then(|l| def.position(l))
            .ok_or_else(|| ClassifierError::Unbound(def.name.clone()))
    };
    Ok(position(a)?.cmp(&position(b)?))
}
