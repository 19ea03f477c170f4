//! Data model shared by every layer: features, concepts, frames and rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierId;
use crate::expr::Expression;

/// Lookup key for a user-facing name.
///
/// Names are matched ignoring whitespace and letter case, so `"Owns glasses"`
/// and `OwnsGlasses` denote the same feature.
pub fn name_key(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

pub(crate) fn same_name(a: &str, b: &str) -> bool {
    name_key(a) == name_key(b)
}

/// Relative tolerance used when comparing derived numeric values.
pub const NUMERIC_REL_TOL: f64 = 1e-9;

/// A feature value: a domain label or a number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Label(String),
}

impl Value {
    pub fn label(s: impl Into<String>) -> Self {
        Value::Label(s.into())
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            Value::Label(_) => None,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            Value::Label(s) => Some(s),
            Value::Number(_) => None,
        }
    }

    /// Equality used by the engine: labels by name key, numbers within a
    /// relative tolerance.
    pub fn agrees_with(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Label(a), Value::Label(b)) => same_name(a, b),
            (Value::Number(a), Value::Number(b)) => {
                let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                a == b || (a - b).abs() <= NUMERIC_REL_TOL * scale
            }
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Label(s) => f.write_str(s),
        }
    }
}

/// `feature = value`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub feature: String,
    pub value: Value,
}

impl Binding {
    pub fn new(feature: impl Into<String>, value: Value) -> Self {
        Binding { feature: feature.into(), value }
    }

    pub fn label(feature: impl Into<String>, label: impl Into<String>) -> Self {
        Binding::new(feature, Value::Label(label.into()))
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.feature, self.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Categorical,
    Ordinal,
    Numeric,
}

/// Unit and optional bounds of a numeric feature. Bounds are needed only to
/// bin observations into the bound classifier's histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericSpec {
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub bins: usize,
}

/// Default number of equal-width histogram bins for numeric features.
pub const DEFAULT_NUMERIC_BINS: usize = 16;

/// Where a feature was introduced. Concept-scoped features get a supervised
/// classifier over that concept's classes; frame-scoped ones an unsupervised
/// one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "lowercase")]
pub enum FeatureScope {
    Concept(String),
    Frame(String),
}

/// An element of the feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
    /// Ordered value labels. Position is the order for ordinal features.
    /// Empty for numeric features.
    #[serde(default)]
    pub domain: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<NumericSpec>,
    /// The classifier bound to this feature; set by the knowledge base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierId>,
}

impl FeatureDef {
    pub fn categorical<I, S>(name: impl Into<String>, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        FeatureDef {
            name: name.into(),
            kind: FeatureKind::Categorical,
            domain: values.into_iter().map(Into::into).collect(),
            numeric: None,
            classifier: None,
        }
    }

    pub fn ordinal<I, S>(name: impl Into<String>, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        FeatureDef { kind: FeatureKind::Ordinal, ..FeatureDef::categorical(name, values) }
    }

    pub fn numeric(name: impl Into<String>, unit: impl Into<String>) -> Self {
        FeatureDef {
            name: name.into(),
            kind: FeatureKind::Numeric,
            domain: Vec::new(),
            numeric: Some(NumericSpec {
                unit: unit.into(),
                min: None,
                max: None,
                bins: DEFAULT_NUMERIC_BINS,
            }),
            classifier: None,
        }
    }

    pub fn with_bounds(mut self, min: f64, max: f64) -> Self {
        if let Some(spec) = self.numeric.as_mut() {
            spec.min = Some(min);
            spec.max = Some(max);
        }
        self
    }

    pub fn with_bins(mut self, bins: usize) -> Self {
        if let Some(spec) = self.numeric.as_mut() {
            spec.bins = bins.max(1);
        }
        self
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == FeatureKind::Numeric
    }

    /// Number of histogram bins of the bound classifier.
    pub fn bin_count(&self) -> usize {
        match &self.numeric {
            Some(spec) if self.is_numeric() => spec.bins,
            _ => self.domain.len(),
        }
    }

    /// Position of a label in the domain.
    pub fn position(&self, label: &str) -> Option<usize> {
        self.domain.iter().position(|v| same_name(v, label))
    }

    /// Canonical spelling of `label` in this domain.
    pub fn canonical_label(&self, label: &str) -> Option<&str> {
        self.position(label).map(|i| self.domain[i].as_str())
    }

    /// Histogram bin of a value, or `None` when the value is outside the
    /// domain (or the numeric feature has no bounds).
    pub fn bin_of(&self, value: &Value) -> Option<usize> {
        match (self.kind, value) {
            (FeatureKind::Numeric, Value::Number(x)) => {
                let spec = self.numeric.as_ref()?;
                let (lo, hi) = (spec.min?, spec.max?);
                if !(lo..=hi).contains(x) || hi <= lo {
                    return None;
                }
                let idx = ((x - lo) / (hi - lo) * spec.bins as f64).floor() as usize;
                Some(idx.min(spec.bins - 1))
            }
            (FeatureKind::Numeric, Value::Label(_)) => None,
            (_, Value::Label(l)) => self.position(l),
            (_, Value::Number(_)) => None,
        }
    }

    /// Whether `value` is admissible for this feature.
    pub fn admits(&self, value: &Value) -> bool {
        match (self.kind, value) {
            (FeatureKind::Numeric, Value::Number(x)) => {
                let spec = self.numeric.as_ref();
                let above = spec.and_then(|s| s.min).is_none_or(|lo| *x >= lo);
                let below = spec.and_then(|s| s.max).is_none_or(|hi| *x <= hi);
                x.is_finite() && above && below
            }
            (FeatureKind::Numeric, Value::Label(_)) => false,
            (_, Value::Label(l)) => self.position(l).is_some(),
            (_, Value::Number(_)) => false,
        }
    }

    /// Rewrites labels into their canonical spelling.
    pub fn canonicalize(&self, value: &Value) -> Option<Value> {
        if !self.admits(value) {
            return None;
        }
        Some(match value {
            Value::Label(l) => Value::Label(self.canonical_label(l)?.to_string()),
            other => other.clone(),
        })
    }
}

/// A class inside a concept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptClass {
    pub name: String,
    pub support: u64,
}

/// An element of the concept space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    /// Keyed by [`name_key`].
    pub classes: BTreeMap<String, ConceptClass>,
    pub features: BTreeSet<String>,
    /// Composition edges (e.g. Glasses → Material), distinct from frames.
    pub subconcepts: BTreeSet<String>,
}

impl Concept {
    pub fn new(name: impl Into<String>) -> Self {
        Concept {
            name: name.into(),
            classes: BTreeMap::new(),
            features: BTreeSet::new(),
            subconcepts: BTreeSet::new(),
        }
    }

    pub fn class(&self, name: &str) -> Option<&ConceptClass> {
        self.classes.get(&name_key(name))
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.values().map(|c| c.name.clone()).collect()
    }
}

/// Predicate guarding a quantitative rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "guard", content = "arg", rename_all = "lowercase")]
pub enum Guard {
    /// The feature is bound in the current facts.
    Given(String),
    /// The expression evaluates to a non-zero number.
    NonZero(Expression),
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::Given(name) => write!(f, "{name} given"),
            Guard::NonZero(e) => write!(f, "{e} ≠ 0"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalRule {
    pub antecedent: Vec<Binding>,
    pub consequent: Vec<Binding>,
    pub reciprocal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantitativeRule {
    pub guards: Vec<Guard>,
    pub target: String,
    pub formula: Expression,
}

impl QuantitativeRule {
    /// Features listed in `given(..)` guards.
    pub fn given_features(&self) -> impl Iterator<Item = &str> {
        self.guards.iter().filter_map(|g| match g {
            Guard::Given(name) => Some(name.as_str()),
            Guard::NonZero(_) => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Rule {
    Categorical(CategoricalRule),
    Quantitative(QuantitativeRule),
}

impl Rule {
    /// `antecedent ⇔ consequent`
    pub fn reciprocal(antecedent: Vec<Binding>, consequent: Vec<Binding>) -> Self {
        Rule::Categorical(CategoricalRule { antecedent, consequent, reciprocal: true })
    }

    /// `antecedent → consequent`
    pub fn implication(antecedent: Vec<Binding>, consequent: Vec<Binding>) -> Self {
        Rule::Categorical(CategoricalRule { antecedent, consequent, reciprocal: false })
    }

    pub fn formula(target: impl Into<String>, formula: Expression, guards: Vec<Guard>) -> Self {
        Rule::Quantitative(QuantitativeRule { guards, target: target.into(), formula })
    }

    pub fn is_reciprocal(&self) -> bool {
        matches!(self, Rule::Categorical(CategoricalRule { reciprocal: true, .. }))
    }

    /// Every feature name the rule mentions.
    pub fn referenced_features(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Rule::Categorical(r) => {
                out.extend(r.antecedent.iter().chain(&r.consequent).map(|b| b.feature.clone()));
            }
            Rule::Quantitative(r) => {
                out.push(r.target.clone());
                for g in &r.guards {
                    match g {
                        Guard::Given(name) => out.push(name.clone()),
                        Guard::NonZero(e) => out.extend(e.variables()),
                    }
                }
                out.extend(r.formula.variables());
            }
        }
        out
    }

    pub fn references(&self, feature: &str) -> bool {
        self.referenced_features().iter().any(|f| same_name(f, feature))
    }
}

fn join_bindings(bindings: &[Binding]) -> String {
    bindings.iter().map(ToString::to_string).collect::<Vec<_>>().join(" and ")
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Categorical(r) if r.reciprocal => write!(
                f,
                "If {} ⇔ {}",
                join_bindings(&r.antecedent),
                join_bindings(&r.consequent)
            ),
            Rule::Categorical(r) => write!(
                f,
                "If {} then {}",
                join_bindings(&r.antecedent),
                join_bindings(&r.consequent)
            ),
            Rule::Quantitative(r) => {
                let givens: Vec<&str> = r.given_features().collect();
                let nonzero: Vec<String> = r
                    .guards
                    .iter()
                    .filter(|g| matches!(g, Guard::NonZero(_)))
                    .map(ToString::to_string)
                    .collect();
                f.write_str("If ")?;
                if !givens.is_empty() {
                    write!(f, "{} given", givens.join(", "))?;
                }
                if !nonzero.is_empty() {
                    if !givens.is_empty() {
                        f.write_str(" and ")?;
                    }
                    f.write_str(&nonzero.join(", "))?;
                }
                if givens.is_empty() && nonzero.is_empty() {
                    f.write_str("true")?;
                }
                write!(f, " then {} = {}", r.target, r.formula)
            }
        }
    }
}

/// A verb-labelled directed transformer from one concept to another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub name: String,
    pub source: String,
    pub target: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub externals: Vec<String>,
    #[serde(default)]
    pub rules: Vec<Rule>,
}

impl Frame {
    pub fn is_input(&self, feature: &str) -> bool {
        self.inputs.iter().any(|f| same_name(f, feature))
    }

    pub fn is_output(&self, feature: &str) -> bool {
        self.outputs.iter().any(|f| same_name(f, feature))
    }

    pub fn is_external(&self, feature: &str) -> bool {
        self.externals.iter().any(|f| same_name(f, feature))
    }

    /// Inputs or externals: the features a rule may condition on.
    pub fn is_condition(&self, feature: &str) -> bool {
        self.is_input(feature) || self.is_external(feature)
    }

    pub fn declares(&self, feature: &str) -> bool {
        self.is_condition(feature) || self.is_output(feature)
    }

    pub fn declared_features(&self) -> impl Iterator<Item = &String> {
        self.inputs.iter().chain(&self.outputs).chain(&self.externals)
    }
}
