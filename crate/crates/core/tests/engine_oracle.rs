//! Deductive queries against a brute-force fixpoint over (feature, value)
//! atoms, on small random knowledge bases.

use std::collections::{BTreeMap, BTreeSet};

use col_core::engine::{query_batch, query_batch_seq, query_with, AnswerStatus, FactSet, QueryOptions};
use col_core::kb::KnowledgeBase;
use col_core::model::{Binding, FeatureDef, FeatureScope, Rule, Value};
use proptest::prelude::*;

const FEATURES: usize = 6;

type Atom = (usize, usize);

#[derive(Clone, Debug)]
struct RuleSpec {
    ant: Vec<Atom>,
    con: Vec<Atom>,
    reciprocal: bool,
}

#[derive(Clone, Debug)]
struct FrameSpec {
    inputs: Vec<usize>,
    output: usize,
    rules: Vec<RuleSpec>,
}

#[derive(Clone, Debug)]
struct World {
    domains: Vec<usize>,
    frames: Vec<FrameSpec>,
    facts: Vec<Option<usize>>,
    goal: usize,
}

fn feature(i: usize) -> String {
    format!("f{i}")
}

fn label(v: usize) -> String {
    format!("v{v}")
}

fn frame_name(i: usize) -> String {
    format!("TO F{i}")
}

fn frame_spec(domains: Vec<usize>) -> impl Strategy<Value = FrameSpec> {
    (prop::sample::subsequence((0..FEATURES).collect::<Vec<_>>(), 1..=2), 0..FEATURES).prop_flat_map(move |(inputs, out)| {
        let output = (0..FEATURES).filter(|f| !inputs.contains(f)).nth(out % (FEATURES - inputs.len())).unwrap();
        let d = domains.clone();
        let ins = inputs.clone();
        let rule = (
            prop::sample::subsequence(inputs.clone(), 1..=inputs.len()),
            prop::collection::vec(any::<prop::sample::Index>(), 3),
            any::<bool>(),
        )
            .prop_map(move |(used, picks, reciprocal)| RuleSpec {
                ant: used.iter().enumerate().map(|(k, &f)| (f, picks[k].index(d[f]))).collect(),
                con: vec![(output, picks[2].index(d[output]))],
                reciprocal,
            });
        prop::collection::vec(rule, 1..5).prop_map(move |rules| FrameSpec { inputs: ins.clone(), output, rules })
    })
}

fn world() -> impl Strategy<Value = World> {
    prop::collection::vec(2usize..=3, FEATURES).prop_flat_map(|domains| {
        let facts = domains.iter().map(|&d| prop::option::weighted(0.3, 0..d)).collect::<Vec<_>>();
        (prop::collection::vec(frame_spec(domains.clone()), 1..=4), facts, 0..FEATURES).prop_map(
            move |(frames, facts, goal)| World { domains: domains.clone(), frames, facts, goal },
        )
    })
}

/// Builds the knowledge base and returns the rules it accepted.
fn build(w: &World) -> (KnowledgeBase, Vec<RuleSpec>) {
    let mut kb = KnowledgeBase::new();
    kb.add_concept("A").unwrap();
    for (i, &d) in w.domains.iter().enumerate() {
        kb.add_feature(FeatureScope::Concept("A".into()), FeatureDef::categorical(feature(i), (0..d).map(label))).unwrap();
    }
    let mut accepted = Vec::new();
    for (i, f) in w.frames.iter().enumerate() {
        let ins: Vec<String> = f.inputs.iter().map(|&x| feature(x)).collect();
        let ins: Vec<&str> = ins.iter().map(String::as_str).collect();
        kb.add_frame(&frame_name(i), "A", "A", &ins, &[&feature(f.output)], &[]).unwrap();
        for r in &f.rules {
            let side = |atoms: &[Atom]| atoms.iter().map(|&(f, v)| Binding::label(feature(f), label(v))).collect::<Vec<_>>();
            let rule = if r.reciprocal {
                Rule::reciprocal(side(&r.ant), side(&r.con))
            } else {
                Rule::implication(side(&r.ant), side(&r.con))
            };
            if kb.add_rule(&frame_name(i), rule).is_ok() {
                accepted.push(r.clone());
            }
        }
    }
    (kb, accepted)
}

/// Least set of atoms closed under forward firing of every rule and
/// backward firing of the reciprocal ones.
fn fixpoint(rules: &[RuleSpec], start: &BTreeSet<Atom>) -> BTreeSet<Atom> {
    let mut atoms = start.clone();
    loop {
        let before = atoms.len();
        for r in rules {
            if r.ant.iter().all(|a| atoms.contains(a)) {
                atoms.extend(r.con.iter().copied());
            }
            if r.reciprocal && r.con.iter().all(|a| atoms.contains(a)) {
                atoms.extend(r.ant.iter().copied());
            }
        }
        if atoms.len() == before {
            return atoms;
        }
    }
}

fn values_of(atoms: &BTreeSet<Atom>) -> BTreeMap<usize, BTreeSet<usize>> {
    let mut out: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(f, v) in atoms {
        out.entry(f).or_default().insert(v);
    }
    out
}

fn consistent(atoms: &BTreeSet<Atom>) -> bool {
    values_of(atoms).values().all(|vs| vs.len() == 1)
}

/// Every extension of `start` that binds some of the free features.
fn extensions(w: &World, start: &BTreeSet<Atom>) -> Vec<BTreeSet<Atom>> {
    let mut out = vec![start.clone()];
    for f in 0..FEATURES {
        if w.facts[f].is_some() {
            continue;
        }
        out = out
            .into_iter()
            .flat_map(|s| {
                let mut next = vec![s.clone()];
                for v in 0..w.domains[f] {
                    let mut t = s.clone();
                    t.insert((f, v));
                    next.push(t);
                }
                next
            })
            .collect();
    }
    out
}

fn check(w: &World) -> Result<(), TestCaseError> {
    let (kb, rules) = build(w);
    let start: BTreeSet<Atom> = w.facts.iter().enumerate().filter_map(|(f, v)| v.map(|v| (f, v))).collect();
    let facts = FactSet::from_labels(start.iter().map(|&(f, v)| (feature(f), label(v))));
    let answer = query_with(&kb, &facts, &feature(w.goal), QueryOptions::deduce());
    let closed = fixpoint(&rules, &start);
    let goal_values = values_of(&closed).remove(&w.goal).unwrap_or_default();

    if answer.status == AnswerStatus::Exact {
        let v = answer.value.clone().unwrap();
        let v = v.as_label().unwrap().trim_start_matches('v').parse::<usize>().unwrap();
        prop_assert!(goal_values.contains(&v), "engine {} not in oracle {:?}", v, goal_values);
        let replayed = answer.derivation().replay(&kb, &facts).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(replayed.value(&feature(w.goal)), answer.value.as_ref());
    }
    if consistent(&closed) {
        match goal_values.iter().next() {
            Some(&v) => {
                prop_assert_eq!(answer.status, AnswerStatus::Exact, "oracle derives {}", v);
                prop_assert_eq!(answer.value, Some(Value::label(label(v))));
            }
            None => prop_assert_ne!(answer.status, AnswerStatus::Exact),
        }
    }
    if answer.status == AnswerStatus::Approximate {
        let reachable: BTreeSet<usize> = extensions(w, &start)
            .iter()
            .map(|e| fixpoint(&rules, e))
            .filter(consistent)
            .filter_map(|c| values_of(&c).get(&w.goal).and_then(|vs| vs.iter().next().copied()))
            .collect();
        for c in &answer.candidates {
            let c = c.as_label().unwrap().trim_start_matches('v').parse::<usize>().unwrap();
            prop_assert!(reachable.contains(&c), "candidate {} unreachable; oracle {:?}", c, reachable);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn deduction_agrees_with_the_fixpoint(w in world()) {
        check(&w)?;
    }

    #[test]
    fn parallel_and_sequential_batches_agree(w in world()) {
        let (kb, _) = build(&w);
        let queries: Vec<(FactSet, String)> = (0..FEATURES)
            .map(|g| {
                let facts = FactSet::from_labels(
                    w.facts.iter().enumerate().filter_map(|(f, v)| v.map(|v| (feature(f), label(v)))),
                );
                (facts, feature(g))
            })
            .collect();
        for options in [QueryOptions::default(), QueryOptions::deduce()] {
            prop_assert_eq!(query_batch(&kb, &queries, options), query_batch_seq(&kb, &queries, options));
        }
    }
}

#[test]
fn generator_covers_every_status() {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::TestRunner;
    let mut runner = TestRunner::deterministic();
    let mut seen = BTreeMap::<String, usize>::new();
    for _ in 0..400 {
        let w = world().new_tree(&mut runner).unwrap().current();
        let (kb, rules) = build(&w);
        let start: BTreeSet<Atom> = w.facts.iter().enumerate().filter_map(|(f, v)| v.map(|v| (f, v))).collect();
        if w.facts[w.goal].is_some() {
            continue;
        }
        let facts = FactSet::from_labels(start.iter().map(|&(f, v)| (feature(f), label(v))));
        let answer = query_with(&kb, &facts, &feature(w.goal), QueryOptions::deduce());
        *seen.entry(format!("{:?}", answer.status)).or_default() += 1;
        if !consistent(&fixpoint(&rules, &start)) {
            *seen.entry("conflict".into()).or_default() += 1;
        }
    }
    for key in ["Exact", "Approximate", "Unknown"] {
        assert!(seen.get(key).copied().unwrap_or(0) >= 10, "{seen:?}");
    }
}
