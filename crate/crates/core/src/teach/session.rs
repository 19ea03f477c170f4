//! Trainer sessions: apply teaching commands to a knowledge base, keep the
//! current-concept register, ask for confirmation before turning an
//! unknown noun into a class, and record the transcript.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parser::{parse_statement_at, AdjectiveDomain, ClauseItem, Command, ParseError};
use crate::engine::{query, Answer, AnswerStatus, EngineError, FactSet};
use crate::expr::Expression;
use crate::kb::{KbError, KnowledgeBase};
use crate::model::{same_name, Binding, FeatureDef, FeatureScope, Guard, Rule, Value};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SessionError {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtteranceKind {
    Clarification,
    Acknowledgment,
    QuestionBack,
    Answer,
}

/// A mutation the machine proposes and waits to have confirmed, or the
/// correction it asks for after a syntax error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "proposal", rename_all = "snake_case")]
pub enum Proposal {
    /// `yes` adds the class; `no` creates a standalone concept instead.
    AddClass { concept: String, class: String },
    /// Restate the line; the expected tokens are listed.
    Rephrase { line: usize, column: usize, expected: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineUtterance {
    pub kind: UtteranceKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<Proposal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
}

impl MachineUtterance {
    fn ack(text: impl Into<String>) -> Self {
        MachineUtterance { kind: UtteranceKind::Acknowledgment, text: text.into(), proposal: None, answer: None }
    }

    fn clarify(text: impl Into<String>, proposal: Proposal) -> Self {
        MachineUtterance { kind: UtteranceKind::Clarification, text: text.into(), proposal: Some(proposal), answer: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Trainer,
    Machine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub speaker: Speaker,
    pub utterance: String,
    /// Knowledge-base revision after the utterance.
    pub revision: u64,
}

/// Elements added or removed by one step, by display name. Rules are
/// listed as `frame#index`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbDelta {
    pub added_concepts: Vec<String>,
    pub removed_concepts: Vec<String>,
    /// `concept/class`
    pub added_classes: Vec<String>,
    pub removed_classes: Vec<String>,
    pub added_features: Vec<String>,
    pub removed_features: Vec<String>,
    /// `feature=value` for values appended to existing domains.
    pub added_values: Vec<String>,
    pub added_frames: Vec<String>,
    pub removed_frames: Vec<String>,
    pub added_rules: Vec<String>,
    pub removed_rules: Vec<String>,
    /// `concept/class` whose support changed.
    pub observed: Vec<String>,
}

impl KbDelta {
    pub fn between(before: &KnowledgeBase, after: &KnowledgeBase) -> Self {
        fn diff(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Vec<String> {
            b.difference(a).cloned().collect()
        }
        let concepts = |kb: &KnowledgeBase| kb.concepts().map(|c| c.name.clone()).collect::<BTreeSet<_>>();
        let classes = |kb: &KnowledgeBase| {
            kb.concepts()
                .flat_map(|c| c.classes.values().map(move |cl| format!("{}/{}", c.name, cl.name)))
                .collect::<BTreeSet<_>>()
        };
        let features = |kb: &KnowledgeBase| kb.features().map(|f| f.name.clone()).collect::<BTreeSet<_>>();
        let values = |kb: &KnowledgeBase| {
            kb.features()
                .flat_map(|f| f.domain.iter().map(move |v| format!("{}={v}", f.name)))
                .collect::<BTreeSet<_>>()
        };
        let frames = |kb: &KnowledgeBase| kb.frames().map(|f| f.name.clone()).collect::<BTreeSet<_>>();
        let rules = |kb: &KnowledgeBase| {
            kb.frames()
                .flat_map(|f| f.rules.iter().map(move |r| format!("{}#{r}", f.name)))
                .collect::<BTreeSet<_>>()
        };
        let support = |kb: &KnowledgeBase| {
            kb.concepts()
                .flat_map(|c| c.classes.values().map(move |cl| format!("{}/{}:{}", c.name, cl.name, cl.support)))
                .collect::<BTreeSet<_>>()
        };
        let (fb, fa) = (features(before), features(after));
        let new_features: BTreeSet<String> = fa.difference(&fb).cloned().collect();
        let rule_label = |kb: &KnowledgeBase, wanted: &BTreeSet<String>| {
            let mut out = Vec::new();
            for f in kb.frames() {
                for (i, r) in f.rules.iter().enumerate() {
                    if wanted.contains(&format!("{}#{r}", f.name)) {
                        out.push(format!("{}#{i}", f.name));
                    }
                }
            }
            out
        };
        let (rb, ra) = (rules(before), rules(after));
        KbDelta {
            added_concepts: diff(&concepts(before), &concepts(after)),
            removed_concepts: diff(&concepts(after), &concepts(before)),
            added_classes: diff(&classes(before), &classes(after)),
            removed_classes: diff(&classes(after), &classes(before)),
            added_features: new_features.iter().cloned().collect(),
            removed_features: diff(&fa, &fb),
            added_values: diff(&values(before), &values(after))
                .into_iter()
                .filter(|v| !new_features.iter().any(|f| v.starts_with(&format!("{f}="))))
                .collect(),
            added_frames: diff(&frames(before), &frames(after)),
            removed_frames: diff(&frames(after), &frames(before)),
            added_rules: rule_label(after, &ra.difference(&rb).cloned().collect()),
            removed_rules: rule_label(before, &rb.difference(&ra).cloned().collect()),
            observed: {
                let changed = diff(&support(before), &support(after));
                let names: BTreeSet<String> =
                    changed.iter().filter_map(|s| s.rsplit_once(':').map(|(n, _)| n.to_string())).collect();
                names.into_iter().collect()
            },
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == KbDelta::default()
    }
}

/// Result of one trainer line.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReply {
    pub reply: MachineUtterance,
    pub error: Option<SessionError>,
    pub delta: KbDelta,
    pub revision: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    /// The most recently mentioned concept.
    pub current_concept: Option<String>,
    /// The most recently mentioned class of the current concept.
    pub current_class: Option<String>,
    pub pending: Option<Proposal>,
    /// Facts stated during the session.
    pub facts: FactSet,
    pub transcript: Vec<TranscriptEntry>,
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        Session { id: id.into(), ..Session::default() }
    }

    /// Parses and applies one trainer line, appending both sides to the
    /// transcript. Blank lines are acknowledged without mutation; syntax
    /// errors come back as a clarification listing the expected tokens.
    pub fn step(&mut self, kb: &mut KnowledgeBase, text: &str) -> StepReply {
        self.step_at(kb, text, 1)
    }

    pub(crate) fn step_at(&mut self, kb: &mut KnowledgeBase, text: &str, line: usize) -> StepReply {
        let before = kb.clone();
        let (reply, error) = if text.trim().is_empty() {
            (MachineUtterance::ack("..."), None)
        } else {
            match parse_statement_at(text, line) {
                Err(e) => {
                    let proposal = Proposal::Rephrase { line: e.line, column: e.column, expected: e.expected.clone() };
                    let reply = MachineUtterance::clarify(
                        format!("I did not understand column {}: expected {}.", e.column, e.expected.join(" or ")),
                        proposal,
                    );
                    (reply, Some(SessionError::Parse(e)))
                }
                Ok(statement) => match self.apply(kb, &statement.command) {
                    Ok(reply) => (reply, None),
                    Err(e) => {
                        *kb = before.clone();
                        (MachineUtterance::ack(format!("Error: {e}")), Some(e))
                    }
                },
            }
        };
        self.transcript.push(TranscriptEntry {
            speaker: Speaker::Trainer,
            utterance: text.to_string(),
            revision: kb.revision(),
        });
        self.transcript.push(TranscriptEntry {
            speaker: Speaker::Machine,
            utterance: reply.text.clone(),
            revision: kb.revision(),
        });
        StepReply { delta: KbDelta::between(&before, kb), revision: kb.revision(), reply, error }
    }

    /// Applies a parsed command. On error the knowledge base may hold a
    /// partial change; [`step`](Self::step) rolls it back.
    pub fn apply(&mut self, kb: &mut KnowledgeBase, command: &Command) -> Result<MachineUtterance, SessionError> {
        if self.pending.is_some() && !matches!(command, Command::Confirm { .. } | Command::Ask { .. }) {
            return Err(SessionError::Protocol("answer the pending question with yes or no first".into()));
        }
        match command {
            Command::DeclareNoun { name, under: None } => self.noun(kb, name),
            Command::DeclareNoun { name, under: Some(parent) } => self.noun_under(kb, name, parent),
            Command::Confirm { yes } => self.confirm(kb, *yes),
            Command::DeclareVerb { name, source, target, inputs, outputs, externals } => {
                let mut created = Vec::new();
                for end in [source, target] {
                    if kb.concept(end).is_none() {
                        created.push(kb.add_concept(end)?);
                    }
                }
                fn list(v: &[String]) -> Vec<&str> {
                    v.iter().map(String::as_str).collect()
                }
                kb.add_frame(name, source, target, &list(inputs), &list(outputs), &list(externals))?;
                let frame = kb.frame(name).expect("just added");
                let text = created
                    .iter()
                    .map(|c| format!("New concept: \"{c}\". "))
                    .chain([format!("New frame: \"{}\" from \"{}\" to \"{}\".", frame.name, frame.source, frame.target)])
                    .collect::<String>();
                self.set_current(frame.source.clone());
                Ok(MachineUtterance::ack(text))
            }
            Command::DeclareAdjective { name, domain } => self.adjective(kb, name, domain),
            Command::DeclareRule { frame, lhs, reciprocal, rhs, guards } => {
                let rule = build_rule(kb, frame, lhs, *reciprocal, rhs, guards)?;
                let index = kb.add_rule(frame, rule)?;
                let frame = kb.frame(frame).expect("rule added");
                Ok(MachineUtterance::ack(format!("Rule #{index} of \"{}\": {}", frame.name, frame.rules[index])))
            }
            Command::StateFact { feature, value } => self.fact(kb, feature, value),
            Command::Ask { goal, given } => {
                let facts = if given.is_empty() { self.facts.clone() } else { FactSet::from_bindings(given) };
                facts.canonicalize(kb)?;
                if kb.feature(goal).is_none() {
                    return Err(EngineError::UnknownFeature(goal.clone()).into());
                }
                Ok(answer_utterance(query(kb, &facts, goal)))
            }
        }
    }

    fn set_current(&mut self, concept: String) {
        if !self.current_concept.as_deref().is_some_and(|c| same_name(c, &concept)) {
            self.current_class = None;
        }
        self.current_concept = Some(concept);
    }

    fn noun(&mut self, kb: &mut KnowledgeBase, name: &str) -> Result<MachineUtterance, SessionError> {
        if let Some(c) = kb.concept(name) {
            let c = c.name.clone();
            self.set_current(c.clone());
            return Ok(MachineUtterance::ack(format!("\"{c}\" is a known concept; current concept is now \"{c}\".")));
        }
        let Some(current) = self.current_concept.clone() else {
            let c = kb.add_concept(name)?;
            self.set_current(c.clone());
            return Ok(MachineUtterance::ack(format!("New concept: \"{c}\".")));
        };
        if let Some(class) = kb.concept(&current).and_then(|c| c.class(name)) {
            self.current_class = Some(class.name.clone());
            return Ok(MachineUtterance::ack(format!("\"{}\" exists: no operation.", class.name)));
        }
        let proposal = Proposal::AddClass { concept: current.clone(), class: name.to_string() };
        self.pending = Some(proposal.clone());
        Ok(MachineUtterance::clarify(
            format!("\"{name}\" does not exist: new class of the current concept ({current})? Your {name}?"),
            proposal,
        ))
    }

    fn noun_under(&mut self, kb: &mut KnowledgeBase, name: &str, parent: &str) -> Result<MachineUtterance, SessionError> {
        let parent = kb.concept(parent).ok_or_else(|| KbError::UnknownConcept(parent.into()))?.name.clone();
        if let Some(child) = kb.concept(name) {
            let child = child.name.clone();
            kb.add_subconcept(&parent, &child)?;
            self.set_current(parent.clone());
            return Ok(MachineUtterance::ack(format!("\"{child}\" is now a component of \"{parent}\".")));
        }
        let created = kb.ensure_class(&parent, name)?;
        let class = kb.concept(&parent).and_then(|c| c.class(name)).expect("ensured").name.clone();
        self.set_current(parent.clone());
        self.current_class = Some(class.clone());
        Ok(MachineUtterance::ack(if created {
            format!("New class \"{class}\" of \"{parent}\".")
        } else {
            format!("\"{class}\" exists: no operation.")
        }))
    }

    fn confirm(&mut self, kb: &mut KnowledgeBase, yes: bool) -> Result<MachineUtterance, SessionError> {
        let Some(pending) = self.pending.clone() else {
            return Err(SessionError::Protocol("there is no pending question".into()));
        };
        let Proposal::AddClass { concept, class } = pending else {
            return Err(SessionError::Protocol("there is no pending question".into()));
        };
        let reply = if yes {
            kb.add_class(&concept, &class)?;
            self.set_current(concept.clone());
            self.current_class = Some(class.clone());
            format!("New class \"{class}\" of \"{concept}\".")
        } else {
            let c = kb.add_concept(&class)?;
            self.set_current(c.clone());
            format!("New concept: \"{c}\".")
        };
        self.pending = None;
        Ok(MachineUtterance::ack(reply))
    }

    fn adjective(&mut self, kb: &mut KnowledgeBase, name: &str, domain: &AdjectiveDomain) -> Result<MachineUtterance, SessionError> {
        if let Some(def) = kb.feature(name) {
            let def_name = def.name.clone();
            let (AdjectiveDomain::Categorical { values } | AdjectiveDomain::Ordered { values }) = domain else {
                return Err(KbError::DuplicateFeature(def_name).into());
            };
            let fresh: Vec<&String> = values.iter().filter(|v| def.position(v).is_none()).collect();
            if fresh.is_empty() {
                return Ok(MachineUtterance::ack(format!("\"{def_name}\" exists: no operation.")));
            }
            for v in &fresh {
                kb.extend_feature_domain(&def_name, v)?;
            }
            let values = kb.feature(&def_name).expect("exists").domain.join(", ");
            return Ok(MachineUtterance::ack(format!("Feature \"{def_name}\": {values}.")));
        }
        let concept = self
            .current_concept
            .clone()
            .ok_or_else(|| SessionError::Protocol("name a concept before describing it".into()))?;
        let def = match domain {
            AdjectiveDomain::Categorical { values } => FeatureDef::categorical(name, values.iter().cloned()),
            AdjectiveDomain::Ordered { values } => FeatureDef::ordinal(name, values.iter().cloned()),
            AdjectiveDomain::Numeric { unit, bounds } => {
                let def = FeatureDef::numeric(name, unit.clone());
                match bounds {
                    Some((lo, hi)) => def.with_bounds(*lo, *hi),
                    None => def,
                }
            }
        };
        kb.add_feature(FeatureScope::Concept(concept.clone()), def)?;
        let def = kb.feature(name).expect("just added");
        let described = if def.is_numeric() {
            format!("numeric ({})", def.numeric.as_ref().map_or("", |n| n.unit.as_str()))
        } else {
            def.domain.join(", ")
        };
        Ok(MachineUtterance::ack(format!("New feature of \"{concept}\": {}: {described}.", def.name)))
    }

    fn fact(&mut self, kb: &mut KnowledgeBase, feature: &str, value: &Value) -> Result<MachineUtterance, SessionError> {
        let def = kb.feature(feature).ok_or_else(|| KbError::UnknownFeature(feature.into()))?.clone();
        let value = match value {
            Value::Label(l) if def.is_numeric() => {
                Value::Number(l.parse().map_err(|_| KbError::UnknownValue { feature: def.name.clone(), value: l.clone() })?)
            }
            v => v.clone(),
        };
        let value = kb.resolve_value(&def.name, &value)?;
        let clf = kb.classifier_for(&def.name).expect("bijection");
        let mut observed = None;
        if clf.is_supervised() {
            let concept = clf.concept().map(str::to_string);
            let class = self.current_class.clone().filter(|class| {
                concept.as_deref().is_some_and(|c| {
                    self.current_concept.as_deref().is_some_and(|cur| same_name(cur, c))
                        && kb.concept(c).is_some_and(|c| c.class(class).is_some())
                })
            });
            if let Some(class) = class {
                kb.observe(&def.name, &value, Some(&class))?;
                observed = Some(class);
            }
        } else if def.bin_of(&value).is_some() {
            kb.observe(&def.name, &value, None)?;
        }
        self.facts.bind(def.name.clone(), value.clone());
        Ok(MachineUtterance::ack(match observed {
            Some(class) => format!("Noted: {}={value} (class \"{class}\").", def.name),
            None => format!("Noted: {}={value}.", def.name),
        }))
    }
}

fn answer_utterance(answer: Answer) -> MachineUtterance {
    let frames = |a: &Answer| a.derivation.iter().map(|s| s.frame.clone()).collect::<Vec<_>>().join(", then ");
    let (kind, text) = match answer.status {
        AnswerStatus::Exact => {
            let value = answer.value.as_ref().expect("exact answers carry a value");
            let mut text = format!("{} = {value}", answer.goal);
            if !answer.premise.is_empty() {
                let wanted: Vec<String> = answer.premise.iter().map(ToString::to_string).collect();
                text.push_str(&format!(" to get {}", wanted.join(", ")));
            }
            if !answer.derivation.is_empty() {
                text.push_str(&format!(" (deduction from {})", frames(&answer)));
            }
            (UtteranceKind::Answer, text + ".")
        }
        AnswerStatus::Approximate => {
            let candidates: Vec<String> = answer.candidates.iter().map(ToString::to_string).collect();
            (
                UtteranceKind::QuestionBack,
                format!(
                    "{} could be {}. What about {}?",
                    answer.goal,
                    candidates.join(" or "),
                    answer.missing.join(", ")
                ),
            )
        }
        AnswerStatus::Unknown => (UtteranceKind::Answer, format!("No deduction for {}.", answer.goal)),
    };
    MachineUtterance { kind, text, proposal: None, answer: Some(answer) }
}

/// Turns a parsed rule into a knowledge-base rule. A rule whose right-hand
/// side assigns a numeric feature is quantitative; anything else is
/// categorical.
fn build_rule(
    kb: &KnowledgeBase,
    frame: &str,
    lhs: &[ClauseItem],
    reciprocal: bool,
    rhs: &[ClauseItem],
    guards: &[ClauseItem],
) -> Result<Rule, KbError> {
    let invalid = |reason: &str| KbError::InvalidRule { frame: frame.to_string(), reason: reason.to_string() };
    let quantitative = rhs.iter().any(|item| {
        matches!(item, ClauseItem::Assign { feature, .. } if kb.feature(feature).is_some_and(FeatureDef::is_numeric))
    });
    if quantitative {
        if reciprocal {
            return Err(invalid("formulas are one-sided; use '->'"));
        }
        let [ClauseItem::Assign { feature, value }] = rhs else {
            return Err(invalid("a formula rule assigns exactly one output"));
        };
        let mut out = Vec::new();
        for item in lhs.iter().chain(guards) {
            match item {
                ClauseItem::Given { features } => out.extend(features.iter().cloned().map(Guard::Given)),
                ClauseItem::NonZero { expr } => out.push(Guard::NonZero(expr.clone())),
                ClauseItem::Assign { .. } => return Err(invalid("formula conditions use given(..) and nonzero(..)")),
            }
        }
        return Ok(Rule::formula(feature.clone(), value.clone(), out));
    }
    if !guards.is_empty() {
        return Err(invalid("guards apply to formula rules only"));
    }
    let side = |items: &[ClauseItem]| -> Result<Vec<Binding>, KbError> {
        items
            .iter()
            .map(|item| match item {
                ClauseItem::Assign { feature, value: Expression::Variable(label) } => Ok(Binding::label(feature.clone(), label.clone())),
                ClauseItem::Assign { feature, value: Expression::Number(x) } => Ok(Binding::new(feature.clone(), Value::Number(*x))),
                ClauseItem::Assign { .. } => Err(invalid("categorical rules bind features to values")),
                _ => Err(invalid("given(..) and nonzero(..) belong to formula rules")),
            })
            .collect()
    };
    let (antecedent, consequent) = (side(lhs)?, side(rhs)?);
    Ok(if reciprocal { Rule::reciprocal(antecedent, consequent) } else { Rule::implication(antecedent, consequent) })
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Trainer => "trainer",
            Speaker::Machine => "machine",
        })
    }
}

/// Applies one trainer line in `session`.
pub fn run_session_step(session: &mut Session, kb: &mut KnowledgeBase, text: &str) -> StepReply {
    session.step(kb, text)
}

/// Applies one parsed command in `session`.
pub fn apply_command(session: &mut Session, kb: &mut KnowledgeBase, command: &Command) -> Result<MachineUtterance, SessionError> {
    session.apply(kb, command)
}
