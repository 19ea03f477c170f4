//! Rule evaluation over frames.
//!
//! A frame evaluates forward (inputs to outputs, every rule kind) or
//! backward (outputs to inputs, reciprocal rules only). Queries chain frame
//! evaluations breadth-first so the returned derivation is a shortest one;
//! when the facts do not determine the goal, the engine enumerates
//! completions of the missing categorical features and reports the
//! candidate values together with the facts that would settle the question.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expression;
use crate::kb::KnowledgeBase;
use crate::model::{name_key, same_name, Binding, Frame, Guard, Rule, Value};
use crate::par;

/// Default chaining depth of [`query`] and [`explain_cause`].
pub const DEFAULT_DEPTH: usize = 8;
/// Above this many joint completions, approximate answers complete one
/// missing feature at a time.
pub const DEFAULT_MAX_COMPLETIONS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("unknown frame {0}")]
    UnknownFrame(String),
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("value {value} is not in the domain of {feature}")]
    UnknownValue { feature: String, value: String },
    #[error("frame {frame} needs external {feature}")]
    MissingExternal { frame: String, feature: String },
    #[error("guard failed: {0}")]
    GuardError(String),
    #[error("inconsistent values for {feature}: {existing} vs {derived}")]
    Inconsistent { feature: String, existing: Value, derived: Value },
    #[error("frame {0} has only one-sided rules for these facts")]
    NonInvertible(String),
    #[error("unbound variable {0}")]
    Unbound(String),
    #[error("no frame produces {0}")]
    NoCause(String),
    #[error("replay diverged at step {step}: {reason}")]
    ReplayMismatch { step: usize, reason: String },
}

type Result<T> = std::result::Result<T, EngineError>;

/// Features produced and features needed by one direction of a rule.
type Edge = (Vec<String>, Vec<String>);

// ----- facts ----------------------------------------------------------------

/// One association in a [`FactSet`]. `value: None` marks the feature as
/// explicitly unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub feature: String,
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
}

/// Feature → value associations, at most one per feature.
///
/// Serializes as a JSON object `{feature: value}`, with `null` for unknown.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, Option<Value>>", into = "BTreeMap<String, Option<Value>>")]
pub struct FactSet {
    facts: BTreeMap<String, Fact>,
}

impl From<BTreeMap<String, Option<Value>>> for FactSet {
    fn from(map: BTreeMap<String, Option<Value>>) -> Self {
        let mut out = FactSet::new();
        for (feature, value) in map {
            match value {
                Some(v) => out.bind(feature, v),
                None => out.mark_unknown(feature),
            }
        }
        out
    }
}

impl From<FactSet> for BTreeMap<String, Option<Value>> {
    fn from(facts: FactSet) -> Self {
        facts.facts.into_values().map(|f| (f.feature, f.value)).collect()
    }
}

impl FactSet {
    pub fn new() -> Self {
        FactSet::default()
    }

    pub fn from_labels<I, F, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (F, V)>,
        F: Into<String>,
        V: Into<String>,
    {
        let mut out = FactSet::new();
        for (f, v) in pairs {
            out.bind(f, Value::Label(v.into()));
        }
        out
    }

    pub fn from_bindings<'a>(bindings: impl IntoIterator<Item = &'a Binding>) -> Self {
        let mut out = FactSet::new();
        for b in bindings {
            out.bind(b.feature.clone(), b.value.clone());
        }
        out
    }

    /// Binds `feature`, replacing any previous value.
    pub fn bind(&mut self, feature: impl Into<String>, value: Value) {
        let feature = feature.into();
        self.facts.insert(name_key(&feature), Fact { feature, value: Some(value), concept: None });
    }

    pub fn bind_in(&mut self, feature: impl Into<String>, value: Value, concept: impl Into<String>) {
        let feature = feature.into();
        self.facts.insert(
            name_key(&feature),
            Fact { feature, value: Some(value), concept: Some(concept.into()) },
        );
    }

    pub fn mark_unknown(&mut self, feature: impl Into<String>) {
        let feature = feature.into();
        self.facts.insert(name_key(&feature), Fact { feature, value: None, concept: None });
    }

    pub fn remove(&mut self, feature: &str) -> Option<Fact> {
        self.facts.remove(&name_key(feature))
    }

    pub fn fact(&self, feature: &str) -> Option<&Fact> {
        self.facts.get(&name_key(feature))
    }

    /// The given value of `feature`, if any.
    pub fn value(&self, feature: &str) -> Option<&Value> {
        self.fact(feature).and_then(|f| f.value.as_ref())
    }

    pub fn is_given(&self, feature: &str) -> bool {
        self.value(feature).is_some()
    }

    /// Given facts as bindings, ordered by feature key.
    pub fn bindings(&self) -> Vec<Binding> {
        self.facts
            .values()
            .filter_map(|f| f.value.clone().map(|v| Binding::new(f.feature.clone(), v)))
            .collect()
    }

    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.facts.values()
    }

    pub fn len(&self) -> usize {
        self.facts.values().filter(|f| f.value.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether every given fact of `other` is given here with an agreeing
    /// value.
    pub fn contains_all(&self, other: &FactSet) -> bool {
        other.bindings().iter().all(|b| self.agrees(b) == Some(true))
    }

    /// `Some(true)` if `b` is given with an agreeing value, `Some(false)`
    /// if given with a different one, `None` if unbound.
    pub fn agrees(&self, b: &Binding) -> Option<bool> {
        self.value(&b.feature).map(|v| v.agrees_with(&b.value))
    }

    /// Adds `b`; returns whether it was new.
    pub fn merge_binding(&mut self, b: &Binding) -> Result<bool> {
        match self.value(&b.feature) {
            Some(v) if v.agrees_with(&b.value) => Ok(false),
            Some(v) => Err(EngineError::Inconsistent {
                feature: b.feature.clone(),
                existing: v.clone(),
                derived: b.value.clone(),
            }),
            None => {
                let concept = self.fact(&b.feature).and_then(|f| f.concept.clone());
                self.facts.insert(
                    name_key(&b.feature),
                    Fact { feature: b.feature.clone(), value: Some(b.value.clone()), concept },
                );
                Ok(true)
            }
        }
    }

    /// Checks every fact against the knowledge base and rewrites feature
    /// names and labels into their canonical spelling.
    pub fn canonicalize(&self, kb: &KnowledgeBase) -> Result<FactSet> {
        let mut out = FactSet::new();
        for fact in self.facts.values() {
            let def = kb
                .feature(&fact.feature)
                .ok_or_else(|| EngineError::UnknownFeature(fact.feature.clone()))?;
            let value = match &fact.value {
                None => None,
                Some(v) => Some(def.canonicalize(&coerce(def, v)).ok_or_else(|| {
                    EngineError::UnknownValue { feature: def.name.clone(), value: v.to_string() }
                })?),
            };
            out.facts.insert(
                name_key(&def.name),
                Fact { feature: def.name.clone(), value, concept: fact.concept.clone() },
            );
        }
        Ok(out)
    }

    /// Stable textual signature, used to deduplicate search states.
    fn signature(&self) -> String {
        let mut s = String::new();
        for (k, f) in &self.facts {
            if let Some(v) = &f.value {
                s.push_str(k);
                s.push('=');
                match v {
                    Value::Label(l) => s.push_str(&name_key(l)),
                    Value::Number(x) => s.push_str(&format!("#{x:e}")),
                }
                s.push(';');
            }
        }
        s
    }
}

/// Numeric features accept numbers written as labels (e.g. from the CLI).
fn coerce(def: &crate::model::FeatureDef, v: &Value) -> Value {
    match v {
        Value::Label(l) if def.is_numeric() => l.trim().parse().map(Value::Number).unwrap_or_else(|_| v.clone()),
        _ => v.clone(),
    }
}

impl fmt::Display for FactSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.bindings().iter().map(ToString::to_string).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

// ----- derivations ----------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// One rule firing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub frame: String,
    pub rule: usize,
    pub direction: Direction,
    pub consumed: Vec<Binding>,
    pub produced: Vec<Binding>,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arrow = match self.direction {
            Direction::Forward => "→",
            Direction::Backward => "↩",
        };
        let join = |bs: &[Binding]| bs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
        write!(f, "{} {arrow} #{}: {} ⊢ {}", self.frame, self.rule, join(&self.consumed), join(&self.produced))
    }
}

/// An ordered chain of rule firings and the conclusion it supports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Derivation {
    pub steps: Vec<Step>,
    pub conclusion: Option<Binding>,
}

impl Derivation {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Frame names in firing order.
    pub fn frames(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.frame.as_str()).collect()
    }

    /// Re-fires every step from `initial` and checks that each consumes
    /// only known facts, produces what it records, and that the conclusion
    /// holds at the end. Returns the final facts.
    pub fn replay(&self, kb: &KnowledgeBase, initial: &FactSet) -> Result<FactSet> {
        let mut known = initial.canonicalize(kb)?;
        for (i, step) in self.steps.iter().enumerate() {
            let mismatch = |reason: String| EngineError::ReplayMismatch { step: i, reason };
            for b in &step.consumed {
                if known.agrees(b) != Some(true) {
                    return Err(mismatch(format!("{b} is not known")));
                }
            }
            let frame = kb.frame(&step.frame).ok_or_else(|| EngineError::UnknownFrame(step.frame.clone()))?;
            let rule = frame
                .rules
                .get(step.rule)
                .ok_or_else(|| mismatch(format!("frame {} has no rule #{}", frame.name, step.rule)))?;
            if step.direction == Direction::Backward && !rule.is_reciprocal() {
                return Err(mismatch("backward step through a one-sided rule".into()));
            }
            let (_, produced) = fire(kb, frame, rule, step.direction, &known)?
                .ok_or_else(|| mismatch("rule does not fire".into()))?;
            if produced.len() != step.produced.len()
                || produced.iter().zip(&step.produced).any(|(a, b)| !same_name(&a.feature, &b.feature) || !a.value.agrees_with(&b.value))
            {
                return Err(mismatch("produced bindings differ".into()));
            }
            for b in &produced {
                known.merge_binding(b)?;
            }
        }
        if let Some(c) = &self.conclusion {
            if known.agrees(c) != Some(true) {
                return Err(EngineError::ReplayMismatch { step: self.steps.len(), reason: format!("conclusion {c} not reached") });
            }
        }
        Ok(known)
    }
}

// ----- rule firing ----------------------------------------------------------

/// Fires one rule against `known`. `Ok(None)` means the rule does not apply;
/// `Ok(Some((consumed, produced)))` that it fires.
fn fire(
    kb: &KnowledgeBase,
    frame: &Frame,
    rule: &Rule,
    direction: Direction,
    known: &FactSet,
) -> Result<Option<(Vec<Binding>, Vec<Binding>)>> {
    match (rule, direction) {
        (Rule::Categorical(r), Direction::Forward) => {
            let mut missing_external = None;
            for b in &r.antecedent {
                match known.agrees(b) {
                    Some(true) => {}
                    Some(false) => return Ok(None),
                    None if frame.is_external(&b.feature) => {
                        missing_external.get_or_insert_with(|| b.feature.clone());
                    }
                    None => return Ok(None),
                }
            }
            if let Some(feature) = missing_external {
                return Err(EngineError::MissingExternal { frame: frame.name.clone(), feature });
            }
            Ok(Some((r.antecedent.clone(), r.consequent.clone())))
        }
        (Rule::Categorical(r), Direction::Backward) => {
            if !r.reciprocal || r.consequent.iter().any(|b| known.agrees(b) != Some(true)) {
                return Ok(None);
            }
            Ok(Some((r.consequent.clone(), r.antecedent.clone())))
        }
        (Rule::Quantitative(_), Direction::Backward) => Ok(None),
        (Rule::Quantitative(r), Direction::Forward) => {
            let mut needed: Vec<String> = r.given_features().map(str::to_string).collect();
            for g in &r.guards {
                if let Guard::NonZero(e) = g {
                    needed.extend(e.variables());
                }
            }
            needed.extend(r.formula.variables());
            let mut missing_external = None;
            for f in &needed {
                if known.is_given(f) {
                    continue;
                }
                if frame.is_external(f) {
                    missing_external.get_or_insert_with(|| f.clone());
                } else {
                    return Ok(None);
                }
            }
            if let Some(feature) = missing_external {
                return Err(EngineError::MissingExternal { frame: frame.name.clone(), feature });
            }
            for g in &r.guards {
                if let Guard::NonZero(e) = g {
                    let v = eval_expression(e, known, kb.constants())?;
                    if v == 0.0 {
                        return Err(EngineError::GuardError(format!("{e} ≠ 0 does not hold")));
                    }
                }
            }
            let value = eval_expression(&r.formula, known, kb.constants())?;
            if !value.is_finite() {
                return Err(EngineError::GuardError(format!("{} is not finite", r.formula)));
            }
            let mut consumed: Vec<Binding> = Vec::new();
            for f in &needed {
                if !consumed.iter().any(|b| same_name(&b.feature, f)) {
                    let v = known.value(f).expect("checked").clone();
                    consumed.push(Binding::new(f.clone(), v));
                }
            }
            Ok(Some((consumed, vec![Binding::new(r.target.clone(), Value::Number(value))])))
        }
    }
}

/// Evaluates an expression. Variables are looked up in `vars` (numeric
/// values only), named constants in `constants`. A zero divisor is a guard
/// failure.
pub fn eval_expression(expr: &Expression, vars: &FactSet, constants: &BTreeMap<String, f64>) -> Result<f64> {
    match expr {
        Expression::Number(x) => Ok(*x),
        Expression::Constant(c) => constants.get(c).copied().ok_or_else(|| EngineError::Unbound(c.clone())),
        Expression::Variable(v) => match vars.value(v) {
            Some(Value::Number(x)) => Ok(*x),
            Some(Value::Label(l)) => l.trim().parse().map_err(|_| EngineError::Unbound(v.clone())),
            None => constants.get(v).copied().ok_or_else(|| EngineError::Unbound(v.clone())),
        },
        Expression::Binary { op, lhs, rhs } => {
            let a = eval_expression(lhs, vars, constants)?;
            let b = eval_expression(rhs, vars, constants)?;
            if *op == crate::expr::BinOp::Div && b == 0.0 {
                return Err(EngineError::GuardError(format!("division by zero in {expr}")));
            }
            Ok(op.apply(a, b))
        }
    }
}

fn frame_of<'a>(kb: &'a KnowledgeBase, name: &str) -> Result<&'a Frame> {
    kb.frame(name).ok_or_else(|| EngineError::UnknownFrame(name.to_string()))
}

fn evaluate_frame(kb: &KnowledgeBase, frame: &Frame, facts: &FactSet, direction: Direction) -> Result<(FactSet, Vec<Step>)> {
    let facts = facts.canonicalize(kb)?;
    let mut derived = FactSet::new();
    let mut steps = Vec::new();
    for (i, rule) in frame.rules.iter().enumerate() {
        let Some((consumed, produced)) = fire(kb, frame, rule, direction, &facts)? else { continue };
        for b in &produced {
            if let Some(existing) = facts.value(&b.feature) {
                if !existing.agrees_with(&b.value) {
                    return Err(EngineError::Inconsistent {
                        feature: b.feature.clone(),
                        existing: existing.clone(),
                        derived: b.value.clone(),
                    });
                }
            }
            derived.merge_binding(b)?;
        }
        steps.push(Step { frame: frame.name.clone(), rule: i, direction, consumed, produced });
    }
    Ok((derived, steps))
}

/// Fires every applicable rule of `frame` on `facts` and returns the
/// derived outputs.
pub fn eval_forward(kb: &KnowledgeBase, frame: &str, facts: &FactSet) -> Result<FactSet> {
    let frame = frame_of(kb, frame)?;
    Ok(evaluate_frame(kb, frame, facts, Direction::Forward)?.0)
}

/// Fires the reciprocal rules of `frame` from consequent to antecedent.
pub fn eval_backward(kb: &KnowledgeBase, frame: &str, facts: &FactSet) -> Result<FactSet> {
    let frame = frame_of(kb, frame)?;
    let (derived, steps) = evaluate_frame(kb, frame, facts, Direction::Backward)?;
    if steps.is_empty() {
        let blocked = frame.rules.iter().any(|r| match r {
            Rule::Categorical(c) => !c.reciprocal && c.consequent.iter().any(|b| facts.is_given(&b.feature)),
            Rule::Quantitative(q) => facts.is_given(&q.target),
        });
        if blocked {
            return Err(EngineError::NonInvertible(frame.name.clone()));
        }
    }
    Ok(derived)
}

/// Forward evaluation that also reports each firing.
pub fn eval_forward_steps(kb: &KnowledgeBase, frame: &str, facts: &FactSet) -> Result<(FactSet, Vec<Step>)> {
    let frame = frame_of(kb, frame)?;
    evaluate_frame(kb, frame, facts, Direction::Forward)
}

// ----- queries --------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerStatus {
    Exact,
    Approximate,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub goal: String,
    pub status: AnswerStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default)]
    pub candidates: Vec<Value>,
    /// Supporting derivation steps of an exact answer.
    #[serde(default)]
    pub derivation: Vec<Step>,
    #[serde(default)]
    pub missing: Vec<String>,
    /// For advice: the desired outcomes the derivation starts from, which
    /// replace the observed ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub premise: Vec<Binding>,
}

impl Answer {
    fn unknown(goal: String, missing: Vec<String>) -> Self {
        Answer {
            goal,
            status: AnswerStatus::Unknown,
            value: None,
            candidates: Vec::new(),
            derivation: Vec::new(),
            missing,
            premise: Vec::new(),
        }
    }

    fn exact(goal: String, value: Value, derivation: Vec<Step>, premise: Vec<Binding>) -> Self {
        Answer {
            goal,
            status: AnswerStatus::Exact,
            value: Some(value),
            candidates: Vec::new(),
            derivation,
            missing: Vec::new(),
            premise,
        }
    }

    pub fn derivation(&self) -> Derivation {
        Derivation {
            steps: self.derivation.clone(),
            conclusion: self.value.clone().map(|v| Binding::new(self.goal.clone(), v)),
        }
    }

    /// The facts the derivation replays from: `given` with the premise
    /// applied.
    pub fn basis(&self, given: &FactSet) -> FactSet {
        let mut out = given.clone();
        for b in &self.premise {
            out.bind(b.feature.clone(), b.value.clone());
        }
        out
    }
}

/// How [`query_with`] treats goals that no frame produces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    /// A goal that is an input of some frame but the output of none is a
    /// control: something the user can act on. Asking for a control after
    /// observing binary outcomes asks what to do to reverse them, so the
    /// engine chains from the contrary outcomes. Other goals are deduced.
    #[default]
    Advise,
    /// Plain deduction from the given facts for every goal.
    Deduce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryOptions {
    pub depth: usize,
    pub max_completions: usize,
    pub mode: QueryMode,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            depth: DEFAULT_DEPTH,
            max_completions: DEFAULT_MAX_COMPLETIONS,
            mode: QueryMode::Advise,
        }
    }
}

impl QueryOptions {
    pub fn deduce() -> Self {
        QueryOptions { mode: QueryMode::Deduce, ..QueryOptions::default() }
    }
}

/// Every (frame, rule, direction) a search may fire, in a fixed order.
fn moves(kb: &KnowledgeBase) -> Vec<(&Frame, usize, Direction)> {
    let mut out = Vec::new();
    for frame in kb.frames() {
        for (i, rule) in frame.rules.iter().enumerate() {
            out.push((frame, i, Direction::Forward));
            if rule.is_reciprocal() {
                out.push((frame, i, Direction::Backward));
            }
        }
    }
    out
}

/// Whether `feature` is an input of some frame and the output of none.
pub fn is_control(kb: &KnowledgeBase, feature: &str) -> bool {
    kb.frames().any(|f| f.is_input(feature)) && !kb.frames().any(|f| f.is_output(feature))
}

/// Answers `goal` from `facts` with the default options.
pub fn query(kb: &KnowledgeBase, facts: &FactSet, goal: &str) -> Answer {
    query_with(kb, facts, goal, QueryOptions::default())
}

/// Breadth-first chaining over frames in both directions.
///
/// Exact answers carry a shortest derivation. Otherwise, if completing the
/// missing categorical features yields candidate values, the answer is
/// approximate; else unknown. See [`QueryMode`] for control goals.
pub fn query_with(kb: &KnowledgeBase, facts: &FactSet, goal: &str, options: QueryOptions) -> Answer {
    let Some(def) = kb.feature(goal) else {
        return Answer::unknown(goal.to_string(), Vec::new());
    };
    let goal = def.name.clone();
    let Ok(facts) = facts.canonicalize(kb) else {
        return Answer::unknown(goal, Vec::new());
    };
    if options.mode == QueryMode::Advise && !facts.is_given(&goal) && is_control(kb, &goal) {
        if let Some(answer) = advise(kb, &facts, &goal, options.depth) {
            return answer;
        }
    }
    if let Some((value, steps)) = shortest_derivation(kb, &facts, &goal, options.depth) {
        return Answer::exact(goal, value, steps, Vec::new());
    }
    let missing = missing_features(kb, &facts, &goal, options.depth);
    let candidates = candidate_values(kb, &facts, &goal, &missing, options);
    if candidates.is_empty() || missing.is_empty() {
        return Answer::unknown(goal, missing);
    }
    Answer {
        goal,
        status: AnswerStatus::Approximate,
        value: None,
        candidates,
        derivation: Vec::new(),
        missing,
        premise: Vec::new(),
    }
}

/// Chains from the contrary of every observed binary outcome.
fn advise(kb: &KnowledgeBase, facts: &FactSet, goal: &str, depth: usize) -> Option<Answer> {
    let mut desired = facts.clone();
    let mut premise = Vec::new();
    for b in facts.bindings() {
        if !kb.frames().any(|f| f.is_output(&b.feature)) {
            continue;
        }
        let def = kb.feature(&b.feature)?;
        let (Some(label), 2) = (b.value.as_label(), def.domain.len()) else { continue };
        let contrary = def.domain.iter().find(|v| !same_name(v, label))?;
        let flipped = Binding::label(def.name.clone(), contrary.clone());
        desired.bind(flipped.feature.clone(), flipped.value.clone());
        premise.push(flipped);
    }
    if premise.is_empty() {
        return None;
    }
    let (value, steps) = shortest_derivation(kb, &desired, goal, depth)?;
    (!steps.is_empty()).then(|| Answer::exact(goal.to_string(), value, steps, premise))
}

/// Runs a batch of independent queries, in parallel when enabled.
pub fn query_batch(kb: &KnowledgeBase, queries: &[(FactSet, String)], options: QueryOptions) -> Vec<Answer> {
    par::map(queries, |(facts, goal)| query_with(kb, facts, goal, options))
}

/// Sequential counterpart of [`query_batch`].
pub fn query_batch_seq(kb: &KnowledgeBase, queries: &[(FactSet, String)], options: QueryOptions) -> Vec<Answer> {
    par::map_seq(queries, |(facts, goal)| query_with(kb, facts, goal, options))
}

fn shortest_derivation(kb: &KnowledgeBase, facts: &FactSet, goal: &str, depth: usize) -> Option<(Value, Vec<Step>)> {
    if let Some(v) = facts.value(goal) {
        return Some((v.clone(), Vec::new()));
    }
    let moves = moves(kb);
    let mut queue = VecDeque::from([(facts.clone(), Vec::<Step>::new())]);
    let mut seen = HashSet::from([facts.signature()]);
    while let Some((known, steps)) = queue.pop_front() {
        if steps.len() >= depth {
            continue;
        }
        for &(frame, i, direction) in &moves {
            let Ok(Some((consumed, produced))) = fire(kb, frame, &frame.rules[i], direction, &known) else {
                continue;
            };
            let mut next = known.clone();
            let mut fresh = false;
            let mut consistent = true;
            for b in &produced {
                match next.merge_binding(b) {
                    Ok(new) => fresh |= new,
                    Err(_) => consistent = false,
                }
            }
            if !consistent || !fresh || !seen.insert(next.signature()) {
                continue;
            }
            let mut path = steps.clone();
            path.push(Step { frame: frame.name.clone(), rule: i, direction, consumed, produced });
            if let Some(v) = next.value(goal) {
                return Some((v.clone(), path));
            }
            queue.push_back((next, path));
        }
    }
    None
}

/// Features that could contribute to deriving `goal` within `depth`
/// chaining rounds and are not yet given.
fn missing_features(kb: &KnowledgeBase, facts: &FactSet, goal: &str, depth: usize) -> Vec<String> {
    let mut relevant: Vec<String> = vec![goal.to_string()];
    for _ in 0..depth {
        let mut grew = false;
        for frame in kb.frames() {
            for rule in &frame.rules {
                let (produces, needs, back): (Vec<String>, Vec<String>, Option<Edge>) = match rule {
                    Rule::Categorical(r) => {
                        let ant: Vec<String> = r.antecedent.iter().map(|b| b.feature.clone()).collect();
                        let cons: Vec<String> = r.consequent.iter().map(|b| b.feature.clone()).collect();
                        let back = r.reciprocal.then(|| (ant.clone(), cons.clone()));
                        (cons, ant, back)
                    }
                    Rule::Quantitative(q) => {
                        let needs = rule.referenced_features().into_iter().filter(|f| !same_name(f, &q.target)).collect();
                        (vec![q.target.clone()], needs, None)
                    }
                };
                let mut add = |fs: &[String], relevant: &mut Vec<String>| {
                    for f in fs {
                        if !relevant.iter().any(|r| same_name(r, f)) {
                            relevant.push(f.clone());
                            grew = true;
                        }
                    }
                };
                if produces.iter().any(|p| relevant.iter().any(|r| same_name(r, p))) {
                    add(&needs, &mut relevant);
                }
                if let Some((ant, cons)) = back {
                    if ant.iter().any(|a| relevant.iter().any(|r| same_name(r, a))) {
                        add(&cons, &mut relevant);
                    }
                }
            }
        }
        if !grew {
            break;
        }
    }
    let mut missing: Vec<String> = relevant
        .into_iter()
        .filter(|f| !same_name(f, goal) && !facts.is_given(f))
        .collect();
    missing.sort();
    missing
}

/// Goal values reachable from some consistent completion of the missing
/// categorical features.
fn candidate_values(kb: &KnowledgeBase, facts: &FactSet, goal: &str, missing: &[String], options: QueryOptions) -> Vec<Value> {
    let domains: Vec<(String, Vec<String>)> = missing
        .iter()
        .filter_map(|f| kb.feature(f))
        .filter(|d| !d.is_numeric())
        .map(|d| (d.name.clone(), d.domain.clone()))
        .collect();
    if domains.is_empty() {
        return Vec::new();
    }
    let joint = domains
        .iter()
        .try_fold(1usize, |acc, (_, d)| acc.checked_mul(d.len()))
        .filter(|&n| n <= options.max_completions);
    let completions: Vec<Vec<Binding>> = match joint {
        Some(n) => (0..n)
            .map(|mut idx| {
                domains
                    .iter()
                    .map(|(f, d)| {
                        let b = Binding::label(f.clone(), d[idx % d.len()].clone());
                        idx /= d.len();
                        b
                    })
                    .collect()
            })
            .collect(),
        None => domains
            .iter()
            .flat_map(|(f, d)| d.iter().map(move |v| vec![Binding::label(f.clone(), v.clone())]))
            .collect(),
    };
    let reached: Vec<Option<Value>> = par::map(&completions, |completion| {
        let mut start = facts.clone();
        for b in completion {
            start.bind(b.feature.clone(), b.value.clone());
        }
        closure(kb, &start).ok().and_then(|k| k.value(goal).cloned())
    });
    let mut out: Vec<Value> = Vec::new();
    for v in reached.into_iter().flatten() {
        if !out.iter().any(|o| o.agrees_with(&v)) {
            out.push(v);
        }
    }
    let def = kb.feature(goal);
    out.sort_by(|a, b| match (a, b) {
        (Value::Label(x), Value::Label(y)) => {
            let pos = |l: &str| def.and_then(|d| d.position(l)).unwrap_or(usize::MAX);
            pos(x).cmp(&pos(y))
        }
        (Value::Number(x), Value::Number(y)) => x.total_cmp(y),
        (Value::Number(_), Value::Label(_)) => std::cmp::Ordering::Less,
        (Value::Label(_), Value::Number(_)) => std::cmp::Ordering::Greater,
    });
    out
}

/// Every fact derivable from `facts` by firing rules in both directions
/// until nothing changes. Rules whose guards or externals fail are
/// skipped; conflicting derivations are an error.
pub fn closure(kb: &KnowledgeBase, facts: &FactSet) -> Result<FactSet> {
    let moves = moves(kb);
    let mut known = facts.clone();
    loop {
        let mut changed = false;
        for &(frame, i, direction) in &moves {
            let Ok(Some((_, produced))) = fire(kb, frame, &frame.rules[i], direction, &known) else {
                continue;
            };
            for b in &produced {
                changed |= known.merge_binding(b)?;
            }
        }
        if !changed {
            return Ok(known);
        }
    }
}

// ----- causes ---------------------------------------------------------------

/// Every backward chain (through reciprocal rules) from an observation to
/// the facts that would cause it, shortest first.
pub fn explain_cause(kb: &KnowledgeBase, observation: &Binding) -> Result<Vec<Derivation>> {
    explain_cause_with(kb, observation, DEFAULT_DEPTH)
}

pub fn explain_cause_with(kb: &KnowledgeBase, observation: &Binding, depth: usize) -> Result<Vec<Derivation>> {
    let def = kb
        .feature(&observation.feature)
        .ok_or_else(|| EngineError::UnknownFeature(observation.feature.clone()))?;
    if !kb.frames().any(|f| f.is_output(&def.name)) {
        return Err(EngineError::NoCause(def.name.clone()));
    }
    let mut start = FactSet::new();
    start.bind(observation.feature.clone(), observation.value.clone());
    let start = start.canonicalize(kb)?;
    let origin = start.bindings();
    let mut out = Vec::new();
    extend_causes(kb, &start, &origin, &mut Vec::new(), depth, &mut out);
    out.sort_by_key(Derivation::len);
    Ok(out)
}

fn extend_causes(
    kb: &KnowledgeBase,
    known: &FactSet,
    frontier: &[Binding],
    chain: &mut Vec<Step>,
    depth: usize,
    out: &mut Vec<Derivation>,
) {
    if chain.len() >= depth {
        return;
    }
    for frame in kb.frames() {
        if chain.iter().any(|s| same_name(&s.frame, &frame.name)) {
            continue;
        }
        for (i, rule) in frame.rules.iter().enumerate() {
            let Ok(Some((consumed, produced))) = fire(kb, frame, rule, Direction::Backward, known) else {
                continue;
            };
            let connected = consumed.iter().any(|c| frontier.iter().any(|f| same_name(&f.feature, &c.feature)));
            if !connected {
                continue;
            }
            let mut next = known.clone();
            let mut fresh = Vec::new();
            let mut consistent = true;
            for b in &produced {
                match next.merge_binding(b) {
                    Ok(true) => fresh.push(b.clone()),
                    Ok(false) => {}
                    Err(_) => consistent = false,
                }
            }
            if !consistent || fresh.is_empty() {
                continue;
            }
            chain.push(Step {
                frame: frame.name.clone(),
                rule: i,
                direction: Direction::Backward,
                consumed,
                produced,
            });
            out.push(Derivation { steps: chain.clone(), conclusion: fresh.first().cloned() });
            extend_causes(kb, &next, &fresh, chain, depth, out);
            chain.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureDef, FeatureScope};

    fn scope(c: &str) -> FeatureScope {
        FeatureScope::Concept(c.into())
    }

    fn vision_kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        for c in ["Humans", "See well", "Pain at eyes"] {
            kb.add_concept(c).unwrap();
        }
        kb.add_feature(scope("Humans"), FeatureDef::categorical("Owns glasses", ["Yes", "No"])).unwrap();
        kb.add_feature(scope("Humans"), FeatureDef::categorical("Quality vision", ["Good", "Bad"])).unwrap();
        kb.add_feature(scope("Humans"), FeatureDef::categorical("Pain at eyes", ["No", "Yes"])).unwrap();
        kb.add_frame("TO SEE", "Humans", "See well", &["Owns glasses"], &["Quality vision"], &[]).unwrap();
        kb.add_frame("TO USE", "See well", "Pain at eyes", &["Quality vision"], &["Pain at eyes"], &[]).unwrap();
        for (o, q) in [("Yes", "Good"), ("No", "Bad")] {
            kb.add_rule("TO SEE", Rule::reciprocal(vec![Binding::label("Owns glasses", o)], vec![Binding::label("Quality vision", q)])).unwrap();
        }
        for (q, p) in [("Good", "No"), ("Bad", "Yes")] {
            kb.add_rule("TO USE", Rule::reciprocal(vec![Binding::label("Quality vision", q)], vec![Binding::label("Pain at eyes", p)])).unwrap();
        }
        kb
    }

    #[test]
    fn forward_and_backward() {
        let kb = vision_kb();
        let out = eval_forward(&kb, "TO SEE", &FactSet::from_labels([("Owns glasses", "Yes")])).unwrap();
        assert_eq!(out.value("Quality vision"), Some(&Value::label("Good")));
        let back = eval_backward(&kb, "TO SEE", &FactSet::from_labels([("Quality vision", "Good")])).unwrap();
        assert_eq!(back.value("Owns glasses"), Some(&Value::label("Yes")));
        let back = eval_backward(&kb, "TO USE", &FactSet::from_labels([("Pain at eyes", "Yes")])).unwrap();
        assert_eq!(back.value("Quality vision"), Some(&Value::label("Bad")));
    }

    #[test]
    fn forward_reports_inconsistency() {
        let mut kb = vision_kb();
        kb.add_rule("TO SEE", Rule::implication(vec![Binding::label("Owns glasses", "Yes")], vec![Binding::label("Quality vision", "Bad")])).unwrap();
        let err = eval_forward(&kb, "TO SEE", &FactSet::from_labels([("Owns glasses", "Yes")])).unwrap_err();
        assert!(matches!(err, EngineError::Inconsistent { .. }));
    }

    #[test]
    fn query_chains_backward() {
        let kb = vision_kb();
        let facts = FactSet::from_labels([("PainAtEyes", "yes")]);
        let a = query(&kb, &facts, "QualityVision");
        assert_eq!(a.status, AnswerStatus::Exact);
        assert_eq!(a.value, Some(Value::label("Bad")));
        assert_eq!(a.derivation().frames(), vec!["TO USE"]);
        a.derivation().replay(&kb, &facts).unwrap();
        let a = query_with(&kb, &facts, "Owns glasses", QueryOptions::deduce());
        assert_eq!(a.value, Some(Value::label("No")));
        assert_eq!(a.derivation().frames(), vec!["TO USE", "TO SEE"]);
        assert!(a.derivation.iter().all(|s| s.direction == Direction::Backward));
        a.derivation().replay(&kb, &facts).unwrap();
    }

    #[test]
    fn controls_are_advised() {
        let kb = vision_kb();
        assert!(is_control(&kb, "Owns glasses"));
        assert!(!is_control(&kb, "Quality vision"));
        let facts = FactSet::from_labels([("Pain at eyes", "Yes")]);
        let a = query(&kb, &facts, "Owns glasses");
        assert_eq!(a.status, AnswerStatus::Exact);
        assert_eq!(a.value, Some(Value::label("Yes")));
        assert_eq!(a.premise, vec![Binding::label("Pain at eyes", "No")]);
        assert_eq!(a.derivation().frames(), vec!["TO USE", "TO SEE"]);
        a.derivation().replay(&kb, &a.basis(&facts)).unwrap();
        let given = FactSet::from_labels([("Owns glasses", "No")]);
        assert_eq!(query(&kb, &given, "Owns glasses").value, Some(Value::label("No")));
    }

    #[test]
    fn query_given_goal_is_exact_without_steps() {
        let kb = vision_kb();
        let a = query(&kb, &FactSet::from_labels([("Owns glasses", "No")]), "Owns glasses");
        assert_eq!(a.status, AnswerStatus::Exact);
        assert!(a.derivation.is_empty());
    }

    #[test]
    fn query_without_facts_is_approximate() {
        let kb = vision_kb();
        let a = query(&kb, &FactSet::new(), "Quality vision");
        assert_eq!(a.status, AnswerStatus::Approximate);
        assert_eq!(a.candidates, vec![Value::label("Good"), Value::label("Bad")]);
        assert_eq!(a.missing, vec!["Owns glasses".to_string(), "Pain at eyes".to_string()]);
    }

    #[test]
    fn unknown_goal_is_unknown() {
        let kb = vision_kb();
        assert_eq!(query(&kb, &FactSet::new(), "Wings").status, AnswerStatus::Unknown);
    }

    #[test]
    fn causes_are_ordered_by_length() {
        let kb = vision_kb();
        let causes = explain_cause(&kb, &Binding::label("Pain at eyes", "Yes")).unwrap();
        assert_eq!(causes.len(), 2);
        assert_eq!(causes[0].conclusion, Some(Binding::label("Quality vision", "Bad")));
        assert_eq!(causes[1].conclusion, Some(Binding::label("Owns glasses", "No")));
        let start = FactSet::from_labels([("Pain at eyes", "Yes")]);
        for d in &causes {
            d.replay(&kb, &start).unwrap();
        }
        assert!(matches!(
            explain_cause(&kb, &Binding::label("Owns glasses", "Yes")),
            Err(EngineError::NoCause(_))
        ));
    }

    #[test]
    fn expression_errors() {
        let e = Expression::quotient(Expression::var("x"), Expression::var("y"));
        let mut vars = FactSet::new();
        vars.bind("x", Value::Number(1.0));
        assert_eq!(eval_expression(&e, &vars, &BTreeMap::new()), Err(EngineError::Unbound("y".into())));
        vars.bind("y", Value::Number(0.0));
        assert!(matches!(eval_expression(&e, &vars, &BTreeMap::new()), Err(EngineError::GuardError(_))));
    }

    #[test]
    fn fact_sets_serialize_as_objects() {
        let mut f = FactSet::from_labels([("Pain at eyes", "Yes")]);
        f.mark_unknown("Owns glasses");
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, r#"{"Owns glasses":null,"Pain at eyes":"Yes"}"#);
        let back: FactSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }
}
