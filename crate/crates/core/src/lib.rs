//! A concept-oriented knowledge base.
//!
//! The knowledge base grows incrementally: concepts and their classes, a
//! global feature space where every feature is bound to exactly one histogram
//! classifier, and verb-labelled frames that connect concepts through
//! reciprocal or one-sided rules. On top of that sit a rule engine (forward
//! and backward evaluation, chained queries, cause explanation), a controlled
//! teaching language with trainer sessions, and a canonical JSON document
//! format with DOT export.
//!
//! ```
//! use col_core::{KnowledgeBase, FeatureDef};
//!
//! let mut kb = KnowledgeBase::new();
//! kb.add_concept("Humans").unwrap();
//! kb.add_feature(
//!     col_core::FeatureScope::Concept("Humans".into()),
//!     FeatureDef::categorical("Breakable", ["No", "Yes"]),
//! )
//! .unwrap();
//! assert_eq!(kb.feature_count(), kb.classifier_count());
//! ```

pub mod classifier;
pub mod document;
pub mod engine;
pub mod expr;
pub mod fixtures;
pub mod graph;
pub mod kb;
pub mod model;
pub mod par;
pub mod teach;

pub use classifier::{
    combine, compare_ordinal, entropy, ClassifierError, ClassifierId, HistogramClassifier,
    NoveltyProposal, Posterior,
};
pub use document::{from_document_str, load_kb, save_kb, to_document_string, DocError, KbDocument};
pub use engine::{
    closure, eval_backward, eval_expression, eval_forward, explain_cause, explain_cause_with, query,
    query_batch, query_batch_seq, query_with, Answer, AnswerStatus, Derivation, Direction,
    EngineError, Fact, FactSet, QueryMode, QueryOptions, Step,
};
pub use expr::{BinOp, Expression};
pub use graph::{export_dot, EdgeKind, FrameTable, GraphEdge, GraphExport, GraphNode, NodeKind};
pub use kb::{new_kb, Dictionaries, Element, KbError, KnowledgeBase, SharedKb, Violation};
pub use teach::{
    parse_statement, replay_script, run_session_step, Command, MachineUtterance, ParseError,
    Session, SessionError, UtteranceKind,
};
pub use model::{
    name_key, Binding, CategoricalRule, Concept, ConceptClass, FeatureDef, FeatureKind,
    FeatureScope, Frame, Guard, NumericSpec, QuantitativeRule, Rule, Value,
};
