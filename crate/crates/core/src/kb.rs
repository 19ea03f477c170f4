//! The knowledge base: concept, feature, classifier and frame spaces plus the
//! three dictionaries, with every schema mutation checked against the model
//! invariants before it is applied.
//!
//! Mutations are all-or-nothing. A rejected operation returns an error and
//! leaves the knowledge base untouched; an accepted one bumps `revision`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    propose_new_class, ClassifierError, ClassifierId, HistogramClassifier, NoveltyProposal,
    Posterior,
};
use crate::expr::Expression;
use crate::model::{
    name_key, same_name, Binding, CategoricalRule, Concept, ConceptClass, FeatureDef, FeatureKind,
    FeatureScope, Frame, Guard, QuantitativeRule, Rule, Value,
};

/// Molar gas constant, J·mol⁻¹·K⁻¹.
pub const GAS_CONSTANT: f64 = 8.314;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KbError {
    #[error("invalid seed: {0}")]
    SeedError(String),
    #[error("concept {0} already exists")]
    DuplicateConcept(String),
    #[error("unknown concept {0}")]
    UnknownConcept(String),
    #[error("class {class} already exists in {concept}")]
    DuplicateClass { concept: String, class: String },
    #[error("unknown class {class} in {concept}")]
    UnknownClass { concept: String, class: String },
    #[error("feature {0} already exists")]
    DuplicateFeature(String),
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("invalid feature {feature}: {reason}")]
    InvalidFeature { feature: String, reason: String },
    #[error("value {value} already in the domain of {feature}")]
    DuplicateValue { feature: String, value: String },
    #[error("value {value} is not in the domain of {feature}")]
    UnknownValue { feature: String, value: String },
    #[error("frame {0} already exists")]
    DuplicateFrame(String),
    #[error("unknown frame {0}")]
    UnknownFrame(String),
    #[error("unknown reference: {0}")]
    UnknownReference(String),
    #[error("rule conflicts with reciprocal rule #{existing} of frame {frame}: {reason}")]
    ReciprocityConflict { frame: String, existing: usize, reason: String },
    #[error("frame {frame} already has this rule (#{existing})")]
    DuplicateRule { frame: String, existing: usize },
    #[error("invalid rule for frame {frame}: {reason}")]
    InvalidRule { frame: String, reason: String },
    #[error("division by {divisor} is not protected by a nonzero guard")]
    UnguardedDivision { divisor: String },
    #[error("{element} is still used by {users:?}")]
    InUse { element: String, users: Vec<String> },
    #[error("composition link {parent} -> {child} would create a cycle")]
    CyclicComposition { parent: String, child: String },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

type Result<T> = std::result::Result<T, KbError>;

/// A broken invariant found by [`KnowledgeBase::validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub element: String,
    pub invariant: String,
}

impl Violation {
    fn new(element: impl Into<String>, invariant: impl Into<String>) -> Self {
        Violation { element: element.into(), invariant: invariant.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.element, self.invariant)
    }
}

/// Target of [`KnowledgeBase::suppress`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Element {
    Concept { name: String },
    Class { concept: String, name: String },
    Feature { name: String },
}

/// Dictionary entry for a feature definition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    pub values: Vec<String>,
}

/// The u-concept, concept and feature-definition dictionaries, keyed by
/// [`name_key`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dictionaries {
    pub u_concepts: BTreeMap<String, String>,
    pub concepts: BTreeMap<String, String>,
    pub features: BTreeMap<String, FeatureEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeBase {
    pub(crate) concepts: BTreeMap<String, Concept>,
    pub(crate) features: BTreeMap<String, FeatureDef>,
    pub(crate) scopes: BTreeMap<String, FeatureScope>,
    pub(crate) classifiers: BTreeMap<ClassifierId, HistogramClassifier>,
    pub(crate) frames: BTreeMap<String, Frame>,
    pub(crate) dictionaries: Dictionaries,
    pub(crate) constants: BTreeMap<String, f64>,
    pub(crate) next_classifier: u64,
    pub(crate) revision: u64,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        KnowledgeBase::new()
    }
}

pub(crate) fn default_constants() -> BTreeMap<String, f64> {
    BTreeMap::from([("R".to_string(), GAS_CONSTANT)])
}

/// Creates a knowledge base, optionally from a serialized seed fragment.
///
/// The seed uses the document format; every section is optional. The
/// resulting knowledge base starts at revision 0.
pub fn new_kb(seed: Option<&str>) -> Result<KnowledgeBase> {
    let Some(text) = seed else {
        return Ok(KnowledgeBase::new());
    };
    let doc = crate::document::KbDocument::parse(text)
        .map_err(|e| KbError::SeedError(e.to_string()))?;
    let mut kb = doc.into_kb_unchecked().map_err(|e| KbError::SeedError(e.to_string()))?;
    let violations = kb.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(KbError::SeedError(list.join("; ")));
    }
    kb.revision = 0;
    Ok(kb)
}

impl KnowledgeBase {
    pub fn new() -> Self {
        KnowledgeBase {
            concepts: BTreeMap::new(),
            features: BTreeMap::new(),
            scopes: BTreeMap::new(),
            classifiers: BTreeMap::new(),
            frames: BTreeMap::new(),
            dictionaries: Dictionaries::default(),
            constants: default_constants(),
            next_classifier: 0,
            revision: 0,
        }
    }

    fn bump(&mut self) {
        self.revision += 1;
    }

    // ----- accessors -------------------------------------------------------

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// `p`, the number of concepts.
    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    /// `j`, the number of features.
    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    /// `l`, the number of classifiers.
    pub fn classifier_count(&self) -> usize {
        self.classifiers.len()
    }

    pub fn concept(&self, name: &str) -> Option<&Concept> {
        self.concepts.get(&name_key(name))
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureDef> {
        self.features.get(&name_key(name))
    }

    pub fn features(&self) -> impl Iterator<Item = &FeatureDef> {
        self.features.values()
    }

    pub fn feature_scope(&self, name: &str) -> Option<&FeatureScope> {
        self.scopes.get(&name_key(name))
    }

    pub fn classifier(&self, id: ClassifierId) -> Option<&HistogramClassifier> {
        self.classifiers.get(&id)
    }

    pub fn classifier_for(&self, feature: &str) -> Option<&HistogramClassifier> {
        self.feature(feature)?.classifier.and_then(|id| self.classifiers.get(&id))
    }

    pub fn classifiers(&self) -> impl Iterator<Item = &HistogramClassifier> {
        self.classifiers.values()
    }

    pub fn frame(&self, name: &str) -> Option<&Frame> {
        self.frames.get(&name_key(name))
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.values()
    }

    pub fn dictionaries(&self) -> &Dictionaries {
        &self.dictionaries
    }

    pub fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    pub fn class_count(&self, concept: &str) -> Option<usize> {
        self.concept(concept).map(|c| c.classes.len())
    }

    /// Canonical spelling of `value` for `feature`.
    pub fn resolve_value(&self, feature: &str, value: &Value) -> Result<Value> {
        let def = self
            .feature(feature)
            .ok_or_else(|| KbError::UnknownFeature(feature.to_string()))?;
        def.canonicalize(value).ok_or_else(|| KbError::UnknownValue {
            feature: def.name.clone(),
            value: value.to_string(),
        })
    }

    // ----- concepts and classes -------------------------------------------

    pub fn add_concept(&mut self, name: &str) -> Result<String> {
        let key = name_key(name);
        if key.is_empty() {
            return Err(KbError::UnknownReference("empty concept name".into()));
        }
        if self.concepts.contains_key(&key) {
            return Err(KbError::DuplicateConcept(name.to_string()));
        }
        self.concepts.insert(key.clone(), Concept::new(name));
        self.dictionaries.concepts.insert(key, name.to_string());
        self.bump();
        Ok(name.to_string())
    }

    fn concept_key(&self, name: &str) -> Result<String> {
        let key = name_key(name);
        if self.concepts.contains_key(&key) {
            Ok(key)
        } else {
            Err(KbError::UnknownConcept(name.to_string()))
        }
    }

    /// Adds a class with zero support. Supervised classifiers of the concept
    /// gain an empty histogram for it.
    pub fn add_class(&mut self, concept: &str, name: &str) -> Result<()> {
        let ckey = self.concept_key(concept)?;
        let key = name_key(name);
        let owner = &self.concepts[&ckey];
        if key.is_empty() {
            return Err(KbError::UnknownReference("empty class name".into()));
        }
        if owner.classes.contains_key(&key) {
            return Err(KbError::DuplicateClass { concept: owner.name.clone(), class: name.into() });
        }
        let owner_name = owner.name.clone();
        self.concepts
            .get_mut(&ckey)
            .expect("checked")
            .classes
            .insert(key, ConceptClass { name: name.to_string(), support: 0 });
        for clf in self.classifiers.values_mut() {
            if clf.concept().is_some_and(|c| same_name(c, &owner_name)) {
                clf.add_class(name);
            }
        }
        self.bump();
        Ok(())
    }

    /// Like [`add_class`](Self::add_class) but an existing class is a no-op.
    /// Returns whether the class was created.
    pub fn ensure_class(&mut self, concept: &str, name: &str) -> Result<bool> {
        match self.add_class(concept, name) {
            Ok(()) => Ok(true),
            Err(KbError::DuplicateClass { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Records that `child` is a component of `parent` (e.g. Glasses →
    /// Material). Composition links must stay acyclic.
    pub fn add_subconcept(&mut self, parent: &str, child: &str) -> Result<()> {
        let pkey = self.concept_key(parent)?;
        let ckey = self.concept_key(child)?;
        if pkey == ckey || self.composes(&ckey, &pkey) {
            return Err(KbError::CyclicComposition { parent: parent.into(), child: child.into() });
        }
        let child_name = self.concepts[&ckey].name.clone();
        let links = &mut self.concepts.get_mut(&pkey).expect("checked").subconcepts;
        if links.iter().any(|l| same_name(l, &child_name)) {
            return Ok(());
        }
        links.insert(child_name);
        self.bump();
        Ok(())
    }

    /// Whether `to` is reachable from `from` through composition links.
    fn composes(&self, from: &str, to: &str) -> bool {
        let mut stack = vec![from.to_string()];
        let mut seen = BTreeSet::new();
        while let Some(k) = stack.pop() {
            if k == to {
                return true;
            }
            if !seen.insert(k.clone()) {
                continue;
            }
            if let Some(c) = self.concepts.get(&k) {
                stack.extend(c.subconcepts.iter().map(|s| name_key(s)));
            }
        }
        false
    }

    // ----- features ---------------------------------------------------------

    /// Adds a feature and binds a fresh classifier to it. Returns the
    /// classifier's id.
    pub fn add_feature(&mut self, scope: FeatureScope, def: FeatureDef) -> Result<ClassifierId> {
        let key = name_key(&def.name);
        if key.is_empty() {
            return Err(KbError::InvalidFeature { feature: def.name, reason: "empty name".into() });
        }
        if self.features.contains_key(&key) {
            return Err(KbError::DuplicateFeature(def.name));
        }
        check_feature_def(&def)?;
        let scope = match scope {
            FeatureScope::Concept(c) => {
                FeatureScope::Concept(self.concepts[&self.concept_key(&c)?].name.clone())
            }
            frame @ FeatureScope::Frame(_) => frame,
        };

        let id = ClassifierId(self.next_classifier);
        let classifier = match &scope {
            FeatureScope::Concept(c) => HistogramClassifier::supervised(
                id,
                &def.name,
                c,
                self.concept(c).expect("resolved").class_names(),
                def.bin_count(),
            ),
            FeatureScope::Frame(_) => HistogramClassifier::unsupervised(id, &def.name, def.bin_count()),
        };
        self.next_classifier += 1;
        if let FeatureScope::Concept(c) = &scope {
            self.concepts.get_mut(&name_key(c)).expect("resolved").features.insert(def.name.clone());
        }
        let def = FeatureDef { classifier: Some(id), ..def };
        self.dictionaries.u_concepts.insert(key.clone(), def.name.clone());
        self.dictionaries
            .features
            .insert(key.clone(), FeatureEntry { name: def.name.clone(), values: def.domain.clone() });
        self.classifiers.insert(id, classifier);
        self.scopes.insert(key.clone(), scope);
        self.features.insert(key, def);
        self.bump();
        Ok(id)
    }

    /// Appends `value` to a categorical or ordinal domain; the bound
    /// classifier gains an empty bin.
    pub fn extend_feature_domain(&mut self, feature: &str, value: &str) -> Result<&FeatureDef> {
        let key = name_key(feature);
        let def = self.features.get(&key).ok_or_else(|| KbError::UnknownFeature(feature.into()))?;
        if def.is_numeric() {
            return Err(KbError::InvalidFeature {
                feature: def.name.clone(),
                reason: "numeric domains are ranges".into(),
            });
        }
        if name_key(value).is_empty() {
            return Err(KbError::InvalidFeature { feature: def.name.clone(), reason: "empty value".into() });
        }
        if def.position(value).is_some() {
            return Err(KbError::DuplicateValue { feature: def.name.clone(), value: value.into() });
        }
        let classifier = def.classifier;
        let def = self.features.get_mut(&key).expect("checked");
        def.domain.push(value.to_string());
        if let Some(entry) = self.dictionaries.features.get_mut(&key) {
            entry.values.push(value.to_string());
        }
        if let Some(clf) = classifier.and_then(|id| self.classifiers.get_mut(&id)) {
            clf.push_bin();
        }
        self.bump();
        Ok(&self.features[&key])
    }

    // ----- frames and rules -------------------------------------------------

    pub fn add_frame(
        &mut self,
        name: &str,
        source: &str,
        target: &str,
        inputs: &[&str],
        outputs: &[&str],
        externals: &[&str],
    ) -> Result<()> {
        let key = name_key(name);
        if key.is_empty() {
            return Err(KbError::UnknownReference("empty frame name".into()));
        }
        if self.frames.contains_key(&key) {
            return Err(KbError::DuplicateFrame(name.into()));
        }
        let endpoint = |c: &str| {
            self.concept(c)
                .map(|c| c.name.clone())
                .ok_or_else(|| KbError::UnknownReference(format!("concept {c}")))
        };
        let source = endpoint(source)?;
        let target = endpoint(target)?;
        let resolve = |list: &[&str]| -> Result<Vec<String>> {
            let mut out: Vec<String> = Vec::new();
            for f in list {
                let def = self
                    .feature(f)
                    .ok_or_else(|| KbError::UnknownReference(format!("feature {f}")))?;
                if !out.iter().any(|o| same_name(o, &def.name)) {
                    out.push(def.name.clone());
                }
            }
            Ok(out)
        };
        let frame = Frame {
            name: name.to_string(),
            source,
            target,
            inputs: resolve(inputs)?,
            outputs: resolve(outputs)?,
            externals: resolve(externals)?,
            rules: Vec::new(),
        };
        if let Some(f) = frame.externals.iter().find(|e| frame.is_input(e)) {
            return Err(KbError::InvalidRule {
                frame: frame.name.clone(),
                reason: format!("{f} cannot be both an input and an external"),
            });
        }
        self.frames.insert(key, frame);
        self.bump();
        Ok(())
    }

    /// Validates and appends a rule; returns its index in the frame.
    pub fn add_rule(&mut self, frame: &str, rule: Rule) -> Result<usize> {
        let fkey = name_key(frame);
        let owner = self.frames.get(&fkey).ok_or_else(|| KbError::UnknownFrame(frame.into()))?;
        let rule = self.canonical_rule(owner, &rule)?;
        check_reciprocity(owner, &owner.rules, &rule)?;
        let frame = self.frames.get_mut(&fkey).expect("checked");
        frame.rules.push(rule);
        let index = frame.rules.len() - 1;
        self.bump();
        Ok(index)
    }

    /// Checks a rule against its frame and rewrites names into their
    /// canonical spelling.
    fn canonical_rule(&self, frame: &Frame, rule: &Rule) -> Result<Rule> {
        let invalid = |reason: String| KbError::InvalidRule { frame: frame.name.clone(), reason };
        let declared = |f: &str| -> Result<&FeatureDef> {
            let def = self
                .feature(f)
                .ok_or_else(|| KbError::UnknownReference(format!("feature {f}")))?;
            if !frame.declares(&def.name) {
                return Err(KbError::UnknownReference(format!(
                    "feature {} is not declared by frame {}",
                    def.name, frame.name
                )));
            }
            Ok(def)
        };
        match rule {
            Rule::Categorical(r) => {
                if r.antecedent.is_empty() || r.consequent.is_empty() {
                    return Err(invalid("both sides of a rule need at least one binding".into()));
                }
                let side = |bindings: &[Binding], want_output: bool| -> Result<Vec<Binding>> {
                    let mut out: Vec<Binding> = Vec::new();
                    for b in bindings {
                        let def = declared(&b.feature)?;
                        let ok = if want_output { frame.is_output(&def.name) } else { frame.is_condition(&def.name) };
                        if !ok {
                            let role = if want_output { "an output" } else { "an input or external" };
                            return Err(invalid(format!("{} is not {role} of the frame", def.name)));
                        }
                        if out.iter().any(|o| same_name(&o.feature, &def.name)) {
                            return Err(invalid(format!("{} is bound twice", def.name)));
                        }
                        let value = def.canonicalize(&b.value).ok_or_else(|| KbError::UnknownValue {
                            feature: def.name.clone(),
                            value: b.value.to_string(),
                        })?;
                        out.push(Binding::new(def.name.clone(), value));
                    }
                    Ok(out)
                };
                let antecedent = side(&r.antecedent, false)?;
                let consequent = side(&r.consequent, true)?;
                if let Some(b) = antecedent.iter().find(|a| consequent.iter().any(|c| same_name(&a.feature, &c.feature))) {
                    return Err(invalid(format!("{} appears on both sides", b.feature)));
                }
                Ok(Rule::Categorical(CategoricalRule { antecedent, consequent, reciprocal: r.reciprocal }))
            }
            Rule::Quantitative(r) => {
                let target = declared(&r.target)?;
                if !frame.is_output(&target.name) {
                    return Err(invalid(format!("{} is not an output of the frame", target.name)));
                }
                if !target.is_numeric() {
                    return Err(invalid(format!("formula target {} is not numeric", target.name)));
                }
                let target = target.name.clone();
                let resolve_expr = |e: &Expression| -> Result<Expression> {
                    let e = e.resolve_constants(&|name: &str| {
                        self.constants.contains_key(name) && !frame.declares(name)
                    });
                    let mut renamed = e.clone();
                    for v in e.variables() {
                        let def = declared(&v)?;
                        if !frame.is_condition(&def.name) {
                            return Err(invalid(format!("{} is not an input or external of the frame", def.name)));
                        }
                        if !def.is_numeric() {
                            return Err(invalid(format!("{} is not numeric", def.name)));
                        }
                        renamed = rename_variable(&renamed, &v, &def.name);
                    }
                    Ok(renamed)
                };
                let mut guards = Vec::new();
                for g in &r.guards {
                    guards.push(match g {
                        Guard::Given(f) => {
                            let def = declared(f)?;
                            if !frame.is_condition(&def.name) {
                                return Err(invalid(format!("given({}) must name an input or external", def.name)));
                            }
                            Guard::Given(def.name.clone())
                        }
                        Guard::NonZero(e) => Guard::NonZero(resolve_expr(e)?),
                    });
                }
                let formula = resolve_expr(&r.formula)?;
                let guarded: Vec<&Expression> = guards
                    .iter()
                    .filter_map(|g| match g {
                        Guard::NonZero(e) => Some(e),
                        Guard::Given(_) => None,
                    })
                    .collect();
                let nonzero_constant = |c: &str| self.constants.get(c).is_some_and(|v| *v != 0.0);
                if let Some(d) = formula.unguarded_divisors(&guarded, &nonzero_constant).first() {
                    return Err(KbError::UnguardedDivision { divisor: d.to_string() });
                }
                for e in &guarded {
                    if let Some(d) = e.unguarded_divisors(&guarded, &nonzero_constant).first() {
                        return Err(KbError::UnguardedDivision { divisor: d.to_string() });
                    }
                }
                Ok(Rule::Quantitative(QuantitativeRule { guards, target, formula }))
            }
        }
    }

    // ----- suppression ------------------------------------------------------

    /// Removes a concept, class or feature.
    ///
    /// Without `cascade`, a feature referenced by a rule (or a concept used
    /// by a frame, a composition link or a scoped feature) is `InUse`. With
    /// `cascade`, dependants go too.
    pub fn suppress(&mut self, element: &Element, cascade: bool) -> Result<()> {
        match element {
            Element::Class { concept, name } => {
                let ckey = self.concept_key(concept)?;
                let key = name_key(name);
                let owner = &self.concepts[&ckey];
                if !owner.classes.contains_key(&key) {
                    return Err(KbError::UnknownClass { concept: owner.name.clone(), class: name.clone() });
                }
                let owner_name = owner.name.clone();
                self.concepts.get_mut(&ckey).expect("checked").classes.remove(&key);
                for clf in self.classifiers.values_mut() {
                    if clf.concept().is_some_and(|c| same_name(c, &owner_name)) {
                        clf.remove_class(name);
                    }
                }
                self.bump();
                Ok(())
            }
            Element::Feature { name } => {
                let key = name_key(name);
                if !self.features.contains_key(&key) {
                    return Err(KbError::UnknownFeature(name.clone()));
                }
                let users = self.rule_users(name);
                if !users.is_empty() && !cascade {
                    return Err(KbError::InUse { element: format!("feature {name}"), users });
                }
                self.remove_feature(&key);
                self.bump();
                Ok(())
            }
            Element::Concept { name } => {
                let ckey = self.concept_key(name)?;
                let concept_name = self.concepts[&ckey].name.clone();
                let mut users: Vec<String> = self
                    .frames
                    .values()
                    .filter(|f| same_name(&f.source, &concept_name) || same_name(&f.target, &concept_name))
                    .map(|f| format!("frame {}", f.name))
                    .collect();
                users.extend(
                    self.concepts
                        .values()
                        .filter(|c| c.subconcepts.iter().any(|s| same_name(s, &concept_name)))
                        .map(|c| format!("concept {}", c.name)),
                );
                let scoped: Vec<String> = self
                    .scopes
                    .iter()
                    .filter(|(_, s)| matches!(s, FeatureScope::Concept(c) if same_name(c, &concept_name)))
                    .map(|(k, _)| k.clone())
                    .collect();
                users.extend(scoped.iter().map(|k| format!("feature {}", self.features[k].name)));
                if !users.is_empty() && !cascade {
                    return Err(KbError::InUse { element: format!("concept {concept_name}"), users });
                }
                self.frames.retain(|_, f| {
                    !same_name(&f.source, &concept_name) && !same_name(&f.target, &concept_name)
                });
                for c in self.concepts.values_mut() {
                    c.subconcepts.retain(|s| !same_name(s, &concept_name));
                }
                for k in scoped {
                    self.remove_feature(&k);
                }
                self.concepts.remove(&ckey);
                self.dictionaries.concepts.remove(&ckey);
                self.bump();
                Ok(())
            }
        }
    }

    /// Rules that mention `feature`, as `frame#index` labels.
    pub fn rule_users(&self, feature: &str) -> Vec<String> {
        self.frames
            .values()
            .flat_map(|f| {
                f.rules
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.references(feature))
                    .map(move |(i, _)| format!("{}#{i}", f.name))
            })
            .collect()
    }

    fn remove_feature(&mut self, key: &str) {
        let Some(def) = self.features.remove(key) else { return };
        for frame in self.frames.values_mut() {
            frame.rules.retain(|r| !r.references(&def.name));
            for list in [&mut frame.inputs, &mut frame.outputs, &mut frame.externals] {
                list.retain(|f| !same_name(f, &def.name));
            }
        }
        for c in self.concepts.values_mut() {
            c.features.retain(|f| !same_name(f, &def.name));
        }
        if let Some(id) = def.classifier {
            self.classifiers.remove(&id);
        }
        self.scopes.remove(key);
        self.dictionaries.u_concepts.remove(key);
        self.dictionaries.features.remove(key);
    }

    // ----- classifiers ------------------------------------------------------

    /// Feeds one observation to the feature's classifier. For supervised
    /// classifiers `class` names a class of the bound concept, whose support
    /// grows by one.
    pub fn observe(&mut self, feature: &str, value: &Value, class: Option<&str>) -> Result<()> {
        let def = self.feature(feature).ok_or_else(|| KbError::UnknownFeature(feature.into()))?;
        let id = def.classifier.ok_or_else(|| KbError::UnknownReference(format!("classifier of {feature}")))?;
        let mut clf = self.classifiers.get(&id).cloned().ok_or_else(|| KbError::UnknownReference(format!("classifier {id}")))?;
        clf.observe(def, value, class)?;
        if let (Some(concept), Some(class)) = (clf.concept().map(str::to_string), class) {
            let entry = self
                .concepts
                .get_mut(&name_key(&concept))
                .and_then(|c| c.classes.get_mut(&name_key(class)))
                .ok_or_else(|| KbError::UnknownClass { concept, class: class.into() })?;
            entry.support += 1;
        }
        self.classifiers.insert(id, clf);
        self.bump();
        Ok(())
    }

    /// Class posterior for `value` of `feature`, with priors from the
    /// concept's class supports.
    pub fn classify(&self, feature: &str, value: &Value) -> Result<Posterior> {
        let def = self.feature(feature).ok_or_else(|| KbError::UnknownFeature(feature.into()))?;
        let clf = self
            .classifier_for(feature)
            .ok_or_else(|| KbError::UnknownReference(format!("classifier of {feature}")))?;
        let bin = def.bin_of(value).ok_or_else(|| KbError::UnknownValue {
            feature: def.name.clone(),
            value: value.to_string(),
        })?;
        let support = clf.concept().and_then(|c| self.concept(c)).map(|c| {
            c.classes.iter().map(|(k, cl)| (k.clone(), cl.support)).collect::<BTreeMap<_, _>>()
        });
        Ok(clf.classify_bin(bin, support.as_ref())?)
    }

    /// Classifies and, when no class reaches `threshold`, proposes a new
    /// class for the concept.
    pub fn detect_novelty(&self, feature: &str, value: &Value, threshold: f64) -> Result<Option<NoveltyProposal>> {
        Ok(propose_new_class(&self.classify(feature, value)?, threshold))
    }

    /// Creates the class suggested by a novelty proposal. Returns its name.
    pub fn apply_novelty(&mut self, concept: &str, _proposal: &NoveltyProposal) -> Result<String> {
        let c = self.concept(concept).ok_or_else(|| KbError::UnknownConcept(concept.into()))?;
        let name = (c.classes.len() + 1..)
            .map(|i| format!("{} class {i}", c.name))
            .find(|n| c.class(n).is_none())
            .expect("unbounded");
        self.add_class(concept, &name)?;
        Ok(name)
    }

    /// Suppresses every class of `concept` whose support is below
    /// `min_support`. Returns the removed class names.
    pub fn suppress_low_support(&mut self, concept: &str, min_support: u64) -> Result<Vec<String>> {
        let c = self.concept(concept).ok_or_else(|| KbError::UnknownConcept(concept.into()))?;
        let concept_name = c.name.clone();
        let weak: Vec<String> = c
            .classes
            .values()
            .filter(|cl| cl.support < min_support)
            .map(|cl| cl.name.clone())
            .collect();
        for name in &weak {
            self.suppress(&Element::Class { concept: concept_name.clone(), name: name.clone() }, false)?;
        }
        Ok(weak)
    }

    /// Adds or overrides a named constant usable in formulas.
    pub fn set_constant(&mut self, name: &str, value: f64) {
        self.constants.insert(name.to_string(), value);
        self.bump();
    }

    // ----- validation -------------------------------------------------------

    /// Every broken invariant; empty iff the knowledge base is consistent.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        self.validate_bijection(&mut out);
        for (key, def) in &self.features {
            if name_key(&def.name) != *key {
                out.push(Violation::new(format!("feature {}", def.name), "indexed under the wrong key"));
            }
            if let Err(e) = check_feature_def(def) {
                out.push(Violation::new(format!("feature {}", def.name), e.to_string()));
            }
            match self.scopes.get(key) {
                Some(FeatureScope::Concept(c)) if self.concept(c).is_none() => {
                    out.push(Violation::new(format!("feature {}", def.name), format!("scope concept {c} does not exist")))
                }
                None => out.push(Violation::new(format!("feature {}", def.name), "missing scope")),
                _ => {}
            }
        }
        for clf in self.classifiers.values() {
            let Some(def) = self.feature(&clf.feature) else { continue };
            if clf.bins != def.bin_count() || clf.lifetime_histogram().len() != clf.bins {
                out.push(Violation::new(format!("classifier {}", clf.id), "bin set differs from the feature domain"));
            }
            if let Some(concept) = clf.concept() {
                match self.concept(concept) {
                    None => out.push(Violation::new(format!("classifier {}", clf.id), format!("concept {concept} does not exist"))),
                    Some(c) => {
                        let mut want: Vec<String> = c.classes.keys().cloned().collect();
                        let mut have: Vec<String> = clf.class_names().iter().map(|n| name_key(n)).collect();
                        want.sort();
                        have.sort();
                        if want != have {
                            out.push(Violation::new(format!("classifier {}", clf.id), "histogram set differs from the concept's classes"));
                        }
                    }
                }
            }
        }
        for (key, c) in &self.concepts {
            let el = format!("concept {}", c.name);
            if name_key(&c.name) != *key {
                out.push(Violation::new(&el, "indexed under the wrong key"));
            }
            for (ck, class) in &c.classes {
                if name_key(&class.name) != *ck {
                    out.push(Violation::new(format!("{el}/{}", class.name), "class indexed under the wrong key"));
                }
            }
            for f in &c.features {
                if self.feature(f).is_none() {
                    out.push(Violation::new(&el, format!("feature {f} does not resolve")));
                }
            }
            for s in &c.subconcepts {
                match self.concept(s) {
                    None => out.push(Violation::new(&el, format!("subconcept {s} does not resolve"))),
                    Some(child) if self.composes(&name_key(&child.name), key) => {
                        out.push(Violation::new(&el, format!("composition cycle through {s}")))
                    }
                    _ => {}
                }
            }
        }
        for frame in self.frames.values() {
            let el = format!("frame {}", frame.name);
            for end in [&frame.source, &frame.target] {
                if self.concept(end).is_none() {
                    out.push(Violation::new(&el, format!("endpoint {end} is not a concept")));
                }
            }
            for f in frame.declared_features() {
                if self.feature(f).is_none() {
                    out.push(Violation::new(&el, format!("declared feature {f} does not resolve")));
                }
            }
            for (i, rule) in frame.rules.iter().enumerate() {
                match self.canonical_rule(frame, rule) {
                    Err(e) => out.push(Violation::new(format!("{el} rule #{i}"), e.to_string())),
                    Ok(_) => {
                        if let Err(e) = check_reciprocity(frame, &frame.rules[..i], rule) {
                            out.push(Violation::new(format!("{el} rule #{i}"), e.to_string()));
                        }
                    }
                }
            }
        }
        let d = &self.dictionaries;
        for name in d.u_concepts.values() {
            if self.feature(name).is_none() {
                out.push(Violation::new(format!("u-concept {name}"), "dictionary entry does not resolve"));
            }
        }
        for name in d.concepts.values() {
            if self.concept(name).is_none() {
                out.push(Violation::new(format!("concept entry {name}"), "dictionary entry does not resolve"));
            }
        }
        for entry in d.features.values() {
            match self.feature(&entry.name) {
                Some(def) if def.domain == entry.values => {}
                Some(_) => out.push(Violation::new(format!("feature entry {}", entry.name), "dictionary values differ from the domain")),
                None => out.push(Violation::new(format!("feature entry {}", entry.name), "dictionary entry does not resolve")),
            }
        }
        out
    }

    fn validate_bijection(&self, out: &mut Vec<Violation>) {
        let mut problems = Vec::new();
        if self.classifiers.len() != self.features.len() {
            problems.push(format!("{} classifiers for {} features", self.classifiers.len(), self.features.len()));
        }
        let mut bound = BTreeSet::new();
        for def in self.features.values() {
            match def.classifier.and_then(|id| self.classifiers.get(&id).map(|c| (id, c))) {
                Some((id, clf)) if same_name(&clf.feature, &def.name) => {
                    if !bound.insert(id) {
                        problems.push(format!("classifier {id} bound twice"));
                    }
                }
                Some((id, _)) => problems.push(format!("classifier {id} belongs to another feature than {}", def.name)),
                None => problems.push(format!("feature {} has no classifier", def.name)),
            }
        }
        for (id, clf) in &self.classifiers {
            if id != &clf.id {
                problems.push(format!("classifier {} stored under id {id}", clf.id));
            }
            if !bound.contains(id) {
                problems.push(format!("classifier {id} is not bound to a feature"));
            }
        }
        if !problems.is_empty() {
            out.push(Violation::new(problems.join("; "), "classifier/feature bijection"));
        }
    }
}

fn check_feature_def(def: &FeatureDef) -> Result<()> {
    let invalid = |reason: &str| KbError::InvalidFeature { feature: def.name.clone(), reason: reason.into() };
    match def.kind {
        FeatureKind::Numeric => {
            let spec = def.numeric.as_ref().ok_or_else(|| invalid("numeric feature without unit"))?;
            if spec.bins == 0 {
                return Err(invalid("numeric feature needs at least one bin"));
            }
            if let (Some(lo), Some(hi)) = (spec.min, spec.max) {
                if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                    return Err(invalid("lower bound must be below upper bound"));
                }
            }
            if !def.domain.is_empty() {
                return Err(invalid("numeric feature with value labels"));
            }
        }
        FeatureKind::Categorical | FeatureKind::Ordinal => {
            if def.domain.is_empty() {
                return Err(invalid("empty domain"));
            }
            let mut seen = BTreeSet::new();
            for v in &def.domain {
                let k = name_key(v);
                if k.is_empty() {
                    return Err(invalid("empty value label"));
                }
                if !seen.insert(k) {
                    return Err(KbError::DuplicateValue { feature: def.name.clone(), value: v.clone() });
                }
            }
        }
    }
    Ok(())
}

fn rename_variable(e: &Expression, from: &str, to: &str) -> Expression {
    match e {
        Expression::Variable(v) if same_name(v, from) => Expression::Variable(to.to_string()),
        Expression::Binary { op, lhs, rhs } => {
            Expression::binary(*op, rename_variable(lhs, from, to), rename_variable(rhs, from, to))
        }
        other => other.clone(),
    }
}

type Assignment = Vec<(String, String)>;

fn assignment(bindings: &[Binding]) -> Assignment {
    let mut a: Assignment = bindings
        .iter()
        .map(|b| {
            let v = match &b.value {
                Value::Label(l) => name_key(l),
                Value::Number(x) => format!("#{x}"),
            };
            (name_key(&b.feature), v)
        })
        .collect();
    a.sort();
    a
}

fn feature_set(a: &Assignment) -> BTreeSet<&str> {
    a.iter().map(|(f, _)| f.as_str()).collect()
}

/// Keeps the reciprocal rules of a frame functional in both directions.
///
/// Besides the direct check (no shared antecedent with a different
/// consequent and vice versa), reciprocal rules whose consequents touch the
/// same feature must range over the same antecedent and consequent feature
/// sets, so that they form a table over a fixed set of columns.
fn check_reciprocity(frame: &Frame, existing: &[Rule], rule: &Rule) -> Result<()> {
    let Rule::Categorical(new) = rule else { return Ok(()) };
    let (na, nc) = (assignment(&new.antecedent), assignment(&new.consequent));
    for (i, other) in existing.iter().enumerate() {
        let Rule::Categorical(old) = other else { continue };
        let (oa, oc) = (assignment(&old.antecedent), assignment(&old.consequent));
        if na == oa && nc == oc && new.reciprocal == old.reciprocal {
            return Err(KbError::DuplicateRule { frame: frame.name.clone(), existing: i });
        }
        if !(new.reciprocal && old.reciprocal) {
            continue;
        }
        let conflict = |reason: &str| KbError::ReciprocityConflict {
            frame: frame.name.clone(),
            existing: i,
            reason: reason.to_string(),
        };
        if na == oa {
            return Err(conflict("same antecedent, different consequent"));
        }
        if nc == oc {
            return Err(conflict("same consequent, different antecedent"));
        }
        let (ncf, ocf) = (feature_set(&nc), feature_set(&oc));
        if !ncf.is_disjoint(&ocf) && (ncf != ocf || feature_set(&na) != feature_set(&oa)) {
            return Err(conflict("overlapping consequents over different feature sets"));
        }
    }
    Ok(())
}

/// A knowledge base shared between one writer at a time and any number of
/// readers.
#[derive(Clone, Debug, Default)]
pub struct SharedKb(Arc<RwLock<KnowledgeBase>>);

impl SharedKb {
    pub fn new(kb: KnowledgeBase) -> Self {
        SharedKb(Arc::new(RwLock::new(kb)))
    }

    /// Read access at a revision boundary.
    pub fn read(&self) -> RwLockReadGuard<'_, KnowledgeBase> {
        self.0.read().unwrap_or_else(|e| e.into_inner())
    }

    /// A consistent copy of the current state.
    pub fn snapshot(&self) -> KnowledgeBase {
        self.read().clone()
    }

    /// Runs `f` as the single writer.
    pub fn write<T>(&self, f: impl FnOnce(&mut KnowledgeBase) -> T) -> T {
        let mut guard = self.0.write().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }
}
