//! The persisted knowledge-base document.
//!
//! Documents are UTF-8 JSON tagged `"version": "col/1"`. Every section is
//! sorted by name key and written with fixed indentation and a trailing
//! newline, so saving a loaded canonical document reproduces it byte for
//! byte. Seeds use the same format with every section optional and
//! classifiers created on demand.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierId, HistogramClassifier};
use crate::kb::{default_constants, Dictionaries, FeatureEntry, KnowledgeBase, Violation};
use crate::model::{name_key, Concept, ConceptClass, FeatureDef, FeatureKind, FeatureScope, Frame, NumericSpec};

/// Version tag written into every document.
pub const FORMAT_VERSION: &str = "col/1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DocError {
    #[error("malformed document at {path}: {message}")]
    Format { path: String, message: String },
    #[error("unsupported document version {0:?}")]
    Version(Option<String>),
    #[error("document violates {} invariant(s): {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Violations(Vec<Violation>),
    #[error("i/o error: {0}")]
    Io(String),
}

type Result<T> = std::result::Result<T, DocError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptDoc {
    pub name: String,
    #[serde(default)]
    pub classes: Vec<ConceptClass>,
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default)]
    pub subconcepts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDoc {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domain: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<NumericSpec>,
    pub scope: FeatureScope,
    /// Required in saved documents; seeds may omit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbDocument {
    #[serde(default)]
    pub version: Option<String>,
    #[serde(default)]
    pub revision: u64,
    #[serde(default)]
    pub next_classifier: u64,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    #[serde(default)]
    pub concepts: Vec<ConceptDoc>,
    #[serde(default)]
    pub features: Vec<FeatureDoc>,
    #[serde(default)]
    pub classifiers: Vec<HistogramClassifier>,
    #[serde(default)]
    pub frames: Vec<Frame>,
    #[serde(default)]
    pub dictionaries: Option<Dictionaries>,
}

impl KbDocument {
    /// Parses JSON, reporting the path of the first offending element.
    pub fn parse(text: &str) -> Result<KbDocument> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| DocError::Format {
            path: match e.path().to_string() {
                p if p == "." => "$".to_string(),
                p if p.starts_with('[') => format!("${p}"),
                p => format!("$.{p}"),
            },
            message: e.inner().to_string(),
        })
    }

    /// The canonical document of `kb`.
    pub fn from_kb(kb: &KnowledgeBase) -> KbDocument {
        KbDocument {
            version: Some(FORMAT_VERSION.to_string()),
            revision: kb.revision,
            next_classifier: kb.next_classifier,
            constants: kb.constants.clone(),
            concepts: kb
                .concepts
                .values()
                .map(|c| ConceptDoc {
                    name: c.name.clone(),
                    classes: c.classes.values().cloned().collect(),
                    features: c.features.iter().cloned().collect(),
                    subconcepts: c.subconcepts.iter().cloned().collect(),
                })
                .collect(),
            features: kb
                .features
                .iter()
                .map(|(key, def)| FeatureDoc {
                    name: def.name.clone(),
                    kind: def.kind,
                    domain: def.domain.clone(),
                    numeric: def.numeric.clone(),
                    scope: kb.scopes.get(key).cloned().unwrap_or_else(|| FeatureScope::Frame(String::new())),
                    classifier: def.classifier,
                })
                .collect(),
            classifiers: kb.classifiers.values().cloned().collect(),
            frames: kb.frames.values().cloned().collect(),
            dictionaries: Some(kb.dictionaries.clone()),
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_canonical_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("documents always serialize");
        s.push('\n');
        s
    }

    /// Builds a knowledge base without checking invariants. Seeds
    /// (`fill_in`) get classifiers for features that lack one and
    /// dictionaries derived from the content when the section is absent.
    pub(crate) fn build(self, fill_in: bool) -> Result<KnowledgeBase> {
        let mut kb = KnowledgeBase::new();
        if !self.constants.is_empty() || !fill_in {
            kb.constants = self.constants;
        }
        if fill_in {
            for (k, v) in default_constants() {
                kb.constants.entry(k).or_insert(v);
            }
        }
        kb.revision = self.revision;
        kb.next_classifier = self.next_classifier;
        for c in self.concepts {
            let mut concept = Concept::new(c.name.clone());
            for class in c.classes {
                concept.classes.insert(name_key(&class.name), class);
            }
            concept.features = c.features.into_iter().collect();
            concept.subconcepts = c.subconcepts.into_iter().collect();
            kb.concepts.insert(name_key(&c.name), concept);
        }
        for c in self.classifiers {
            kb.next_classifier = kb.next_classifier.max(c.id.0 + 1);
            kb.classifiers.insert(c.id, c);
        }
        for (i, f) in self.features.into_iter().enumerate() {
            let key = name_key(&f.name);
            let mut def = FeatureDef {
                name: f.name,
                kind: f.kind,
                domain: f.domain,
                numeric: f.numeric,
                classifier: f.classifier,
            };
            if def.classifier.is_none() && fill_in {
                let id = ClassifierId(kb.next_classifier);
                kb.next_classifier += 1;
                let clf = match &f.scope {
                    FeatureScope::Concept(c) => {
                        let owner = kb.concepts.get(&name_key(c)).ok_or_else(|| DocError::Format {
                            path: format!("$.features[{i}].scope"),
                            message: format!("unknown concept {c}"),
                        })?;
                        HistogramClassifier::supervised(id, &def.name, &owner.name, owner.class_names(), def.bin_count())
                    }
                    FeatureScope::Frame(_) => HistogramClassifier::unsupervised(id, &def.name, def.bin_count()),
                };
                kb.classifiers.insert(id, clf);
                def.classifier = Some(id);
            }
            if fill_in {
                if let FeatureScope::Concept(c) = &f.scope {
                    if let Some(owner) = kb.concepts.get_mut(&name_key(c)) {
                        owner.features.insert(def.name.clone());
                    }
                }
            }
            if kb.features.contains_key(&key) {
                return Err(DocError::Format {
                    path: format!("$.features[{i}].name"),
                    message: format!("duplicate feature {}", def.name),
                });
            }
            kb.scopes.insert(key.clone(), f.scope);
            kb.features.insert(key, def);
        }
        for f in self.frames {
            kb.frames.insert(name_key(&f.name), f);
        }
        kb.dictionaries = match self.dictionaries {
            Some(d) => d,
            None if fill_in => Dictionaries {
                u_concepts: kb.features.iter().map(|(k, d)| (k.clone(), d.name.clone())).collect(),
                concepts: kb.concepts.iter().map(|(k, c)| (k.clone(), c.name.clone())).collect(),
                features: kb
                    .features
                    .iter()
                    .map(|(k, d)| (k.clone(), FeatureEntry { name: d.name.clone(), values: d.domain.clone() }))
                    .collect(),
            },
            None => Dictionaries::default(),
        };
        Ok(kb)
    }

    /// Builds the knowledge base of a seed fragment (no invariant check).
    pub(crate) fn into_kb_unchecked(self) -> Result<KnowledgeBase> {
        if let Some(v) = &self.version {
            if v != FORMAT_VERSION {
                return Err(DocError::Version(Some(v.clone())));
            }
        }
        self.build(true)
    }

    /// Builds and validates the knowledge base of a saved document.
    pub fn into_kb(self) -> Result<KnowledgeBase> {
        if self.version.as_deref() != Some(FORMAT_VERSION) {
            return Err(DocError::Version(self.version));
        }
        let kb = self.build(false)?;
        let violations = kb.validate();
        if violations.is_empty() {
            Ok(kb)
        } else {
            Err(DocError::Violations(violations))
        }
    }
}

/// Canonical text of `kb`. Refuses knowledge bases that do not validate.
pub fn to_document_string(kb: &KnowledgeBase) -> Result<String> {
    let violations = kb.validate();
    if !violations.is_empty() {
        return Err(DocError::Violations(violations));
    }
    Ok(KbDocument::from_kb(kb).to_canonical_string())
}

/// Parses and validates a document.
pub fn from_document_str(text: &str) -> Result<KnowledgeBase> {
    KbDocument::parse(text)?.into_kb()
}

/// Writes the canonical document of `kb` to `path`.
pub fn save_kb(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<KbDocument> {
    let text = to_document_string(kb)?;
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| DocError::Io(format!("{}: {e}", path.display())))?;
    Ok(KbDocument::from_kb(kb))
}

/// Reads and validates the document at `path`.
pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DocError::Io(format!("{}: {e}", path.display())))?;
    from_document_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::new_kb;
    use crate::model::{Binding, Rule};

    fn sample() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        kb.add_concept("Humans").unwrap();
        kb.add_concept("See well").unwrap();
        kb.add_class("Humans", "Glasses").unwrap();
        let scope = FeatureScope::Concept("Humans".into());
        kb.add_feature(scope.clone(), FeatureDef::categorical("Owns glasses", ["Yes", "No"])).unwrap();
        kb.add_feature(scope, FeatureDef::categorical("Quality vision", ["Good", "Bad"])).unwrap();
        kb.add_frame("TO SEE", "Humans", "See well", &["Owns glasses"], &["Quality vision"], &[]).unwrap();
        kb.add_rule("TO SEE", Rule::reciprocal(vec![Binding::label("Owns glasses", "Yes")], vec![Binding::label("Quality vision", "Good")])).unwrap();
        kb.observe("Owns glasses", &crate::model::Value::label("Yes"), Some("Glasses")).unwrap();
        kb
    }

    #[test]
    fn empty_document() {
        let text = to_document_string(&KnowledgeBase::new()).unwrap();
        assert!(text.contains("\"version\": \"col/1\""));
        assert!(text.ends_with("}\n"));
        assert_eq!(from_document_str(&text).unwrap(), KnowledgeBase::new());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let kb = sample();
        let text = to_document_string(&kb).unwrap();
        let loaded = from_document_str(&text).unwrap();
        assert_eq!(loaded, kb);
        assert_eq!(to_document_string(&loaded).unwrap(), text);
    }

    #[test]
    fn format_errors_carry_paths() {
        let text = to_document_string(&sample()).unwrap();
        let truncated = &text[..text.len() / 2];
        assert!(matches!(from_document_str(truncated), Err(DocError::Format { .. })));
        let bad = text.replacen("\"kind\": \"categorical\"", "\"kind\": \"fuzzy\"", 1);
        let Err(DocError::Format { path, .. }) = from_document_str(&bad) else { panic!() };
        assert_eq!(path, "$.features[0].kind");
    }

    #[test]
    fn versions_are_checked() {
        let text = to_document_string(&sample()).unwrap().replace("col/1", "col/9");
        assert!(matches!(from_document_str(&text), Err(DocError::Version(_))));
    }

    #[test]
    fn broken_bijection_is_refused() {
        let mut doc = KbDocument::from_kb(&sample());
        doc.classifiers.pop();
        let Err(DocError::Violations(v)) = doc.into_kb() else { panic!() };
        assert!(v.iter().any(|v| v.invariant == "classifier/feature bijection"));
    }

    #[test]
    fn seeds_get_classifiers() {
        let seed = r#"{
            "concepts": [{"name": "Humans"}, {"name": "Breakable"}],
            "features": [{"name": "Breakable", "kind": "categorical", "domain": ["No", "Yes"],
                          "scope": {"kind": "concept", "name": "Humans"}}]
        }"#;
        let kb = new_kb(Some(seed)).unwrap();
        assert_eq!((kb.concept_count(), kb.feature_count(), kb.classifier_count(), kb.revision()), (2, 1, 1, 0));
        assert!(kb.validate().is_empty());
        let dangling = r#"{"concepts": [{"name": "Humans", "features": ["Wings"]}]}"#;
        assert!(new_kb(Some(dangling)).is_err());
    }
}
