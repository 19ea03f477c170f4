//! The evaporation frame: guarded one-sided formulas with an external
//! temperature.

use col_core::engine::{eval_backward, eval_expression, eval_forward, EngineError, FactSet};
use col_core::fixtures::gas_law;
use col_core::model::{Rule, Value};
use col_core::teach::{parse_statement, Command};
use std::collections::BTreeMap;

const R: f64 = 8.314;
const REL_TOL: f64 = 1e-6;

fn facts(pairs: &[(&str, f64)]) -> FactSet {
    let mut f = FactSet::new();
    for (k, v) in pairs {
        f.bind(*k, Value::Number(*v));
    }
    f
}

fn number(f: &FactSet, feature: &str) -> f64 {
    f.value(feature).and_then(Value::as_number).unwrap_or_else(|| panic!("{feature} not derived in {f}"))
}

fn close(a: f64, b: f64) -> bool {
    ((a - b) / b).abs() <= REL_TOL
}

#[test]
fn pressure_from_moles_and_volume() {
    let kb = gas_law();
    let out = eval_forward(&kb, "Evaporation", &facts(&[("n", 1.0), ("T", 300.0), ("V", 0.0224)])).unwrap();
    let oracle = 1.0 * R * 300.0 / 0.0224;
    assert!(close(number(&out, "P"), oracle), "{} vs {oracle}", number(&out, "P"));
    assert!((oracle - 1.11348e5).abs() < 1.0);
}

#[test]
fn volume_from_moles_and_pressure() {
    let kb = gas_law();
    let out = eval_forward(&kb, "Evaporation", &facts(&[("n", 2.0), ("T", 350.0), ("P", 101_325.0)])).unwrap();
    assert!(close(number(&out, "V"), 2.0 * R * 350.0 / 101_325.0));
}

#[test]
fn moles_from_pressure_and_volume() {
    let kb = gas_law();
    let out = eval_forward(&kb, "Evaporation", &facts(&[("P", 101_325.0), ("T", 300.0), ("V", 0.0224)])).unwrap();
    let oracle = 101_325.0 * 0.0224 / (R * 300.0);
    assert!(close(number(&out, "n"), oracle));
    assert!((oracle - 0.9099).abs() < 1e-4);
}

#[test]
fn zero_volume_fails_the_guard() {
    let kb = gas_law();
    let err = eval_forward(&kb, "Evaporation", &facts(&[("n", 1.0), ("T", 300.0), ("V", 0.0)])).unwrap_err();
    assert!(matches!(err, EngineError::GuardError(_)), "{err:?}");
}

#[test]
fn zero_temperature_fails_the_guard() {
    let kb = gas_law();
    let err = eval_forward(&kb, "Evaporation", &facts(&[("P", 1.0), ("T", 0.0), ("V", 1.0)])).unwrap_err();
    assert!(matches!(err, EngineError::GuardError(_)), "{err:?}");
}

#[test]
fn absent_temperature_is_a_missing_external() {
    let kb = gas_law();
    let err = eval_forward(&kb, "Evaporation", &facts(&[("n", 1.0), ("V", 0.0224)])).unwrap_err();
    assert_eq!(err, EngineError::MissingExternal { frame: "Evaporation".into(), feature: "T".into() });
}

#[test]
fn formulas_do_not_run_backward() {
    let kb = gas_law();
    let err = eval_backward(&kb, "Evaporation", &facts(&[("P", 101_325.0)])).unwrap_err();
    assert_eq!(err, EngineError::NonInvertible("Evaporation".into()));
}

#[test]
fn all_three_rules_are_one_sided() {
    let kb = gas_law();
    let frame = kb.frame("Evaporation").unwrap();
    assert_eq!(frame.externals, vec!["T".to_string()]);
    let targets: Vec<&str> = frame
        .rules
        .iter()
        .map(|r| match r {
            Rule::Quantitative(q) => q.target.as_str(),
            Rule::Categorical(_) => panic!("unexpected categorical rule"),
        })
        .collect();
    assert_eq!(targets, ["P", "V", "n"]);
    assert!(frame.rules.iter().all(|r| !r.is_reciprocal()));
}

#[test]
fn zero_numerator() {
    let kb = gas_law();
    let out = eval_forward(&kb, "Evaporation", &facts(&[("n", 0.0), ("T", 300.0), ("V", 0.0224)])).unwrap();
    assert_eq!(number(&out, "P"), 0.0);
}

fn formula(text: &str) -> col_core::expr::Expression {
    let Command::DeclareRule { rhs, .. } = parse_statement(&format!("rule F : given(a) -> x = {text}")).unwrap().command else {
        panic!()
    };
    match &rhs[0] {
        col_core::teach::ClauseItem::Assign { value, .. } => value.clone(),
        other => panic!("{other:?}"),
    }
}

#[test]
fn expressions_match_direct_arithmetic() {
    let constants = BTreeMap::from([("R".to_string(), R)]);
    let vars = facts(&[("n", 1.5), ("T", 273.15), ("V", 0.0224), ("P", 99_000.0)]);
    let cases: [(&str, f64); 4] = [
        ("n * R * T / V", 1.5 * R * 273.15 / 0.0224),
        ("P * V / (R * T)", 99_000.0 * 0.0224 / (R * 273.15)),
        ("P - n + 2", 99_000.0 - 1.5 + 2.0),
        ("(P + V) * 2 / n", (99_000.0 + 0.0224) * 2.0 / 1.5),
    ];
    for (text, oracle) in cases {
        let e = formula(text).resolve_constants(&|c| c == "R");
        let got = eval_expression(&e, &vars, &constants).unwrap();
        assert!((got - oracle).abs() <= f64::EPSILON * oracle.abs(), "{text}: {got} vs {oracle}");
    }
    let e = formula("x / y");
    assert!(matches!(eval_expression(&e, &facts(&[("x", 1.0), ("y", 0.0)]), &constants), Err(EngineError::GuardError(_))));
    assert!(matches!(eval_expression(&e, &facts(&[("x", 1.0)]), &constants), Err(EngineError::Unbound(_))));
}
