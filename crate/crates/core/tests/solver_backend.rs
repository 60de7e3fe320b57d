//! End-to-end tests of the external-solver backend against the bundled
//! `qfbv-eval` reference solver, cross-checked with exhaustive enumeration.
//!
//! Widths are kept small: the reference solver decides by enumeration, so
//! every `unsat` answer is a full sweep of the input space.

use std::time::Duration;

use peepopt::{
    check_refinement, parse_function, parse_rules, validate_translation, verify_rule, Backend,
    Verdict, VerifyError, Width,
};

fn w(bits: u32) -> Width {
    Width::new(bits).unwrap()
}

fn reference_solver() -> Backend {
    Backend::Solver {
        cmd: vec![env!("CARGO_BIN_EXE_qfbv-eval").to_string()],
        timeout: Duration::from_secs(60),
    }
}

fn fixture(name: &str) -> String {
    let path = format!("{}/fixtures/{}", env!("CARGO_MANIFEST_DIR"), name);
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn seed_rules_verify_through_the_reference_solver() {
    let rules = parse_rules(&fixture("seed.rules")).unwrap();
    let solver = reference_solver();
    for rule in &rules {
        let verdict = verify_rule(rule, &[w(4)], &solver).unwrap();
        assert_eq!(verdict, Verdict::Valid, "rule {}", rule.name);
    }
}

#[test]
fn both_backends_agree_rule_by_rule() {
    let mut rules = parse_rules(&fixture("seed.rules")).unwrap();
    rules.extend(parse_rules(&fixture("instcombine.rules")).unwrap());
    let solver = reference_solver();
    for rule in &rules {
        let fast = verify_rule(rule, &[w(4)], &Backend::Exhaustive).unwrap();
        let slow = verify_rule(rule, &[w(4)], &solver).unwrap();
        assert_eq!(fast, slow, "rule {}", rule.name);
    }
}

#[test]
fn solver_counterexamples_replay_and_match_enumeration() {
    // Without its precondition the shift/round-trip rule is wrong, and both
    // backends sweep assignments in declaration order, so they surface the
    // identical first refutation: C1 = 0, C2 = 0, x = 1.
    let rules = parse_rules(&fixture("broken.rules")).unwrap();
    let rule = &rules[0];
    let solver = reference_solver();
    let from_solver = verify_rule(rule, &[w(4)], &solver).unwrap();
    let from_enum = verify_rule(rule, &[w(4)], &Backend::Exhaustive).unwrap();
    match (&from_solver, &from_enum) {
        (Verdict::Counterexample(a), Verdict::Counterexample(b)) => {
            assert_eq!(a, b);
            assert_eq!(a.inputs["x"], 1);
            assert_eq!(a.constants["C1"], 0);
            assert_eq!(a.constants["C2"], 0);
        }
        other => panic!("expected counterexamples from both backends, got {other:?}"),
    }
}

#[test]
fn translation_validation_works_through_the_solver() {
    let five = parse_function(
        "func @foo(%a:i4, %b:i4) {\n  %na = sub i4 0, %a\n  %nb = sub i4 0, %b\n  %c = sub i4 %na, %nb\n  %d = add i4 %na, %nb\n  %r = xor i4 %c, %d\n  ret %r\n}",
    )
    .unwrap();
    let four = parse_function(
        "func @foo(%a:i4, %b:i4) {\n  %c = sub i4 %b, %a\n  %t = add i4 %a, %b\n  %d = sub i4 0, %t\n  %r = xor i4 %c, %d\n  ret %r\n}",
    )
    .unwrap();
    let verdict = validate_translation(&five, &four, &[w(4)], &reference_solver()).unwrap();
    assert_eq!(verdict, Verdict::Valid);
}

#[test]
fn miscompiles_are_caught_through_the_solver() {
    let f = parse_function(
        "func @f(%x:i4, %y:i4) {\n  %r = and i4 %x, %y\n  ret %r\n}",
    )
    .unwrap();
    let g = parse_function(
        "func @f(%x:i4, %y:i4) {\n  %r = or i4 %x, %y\n  ret %r\n}",
    )
    .unwrap();
    let verdict = validate_translation(&f, &g, &[w(4)], &reference_solver()).unwrap();
    match verdict {
        Verdict::Counterexample(cex) => {
            let x = cex.inputs["x"];
            let y = cex.inputs["y"];
            assert_ne!(x & y, x | y);
        }
        Verdict::Valid => panic!("and/or miscompile was not caught"),
    }
}

#[test]
fn queries_past_the_enumeration_cap_come_back_unknown() {
    // Two 16-bit inputs are 32 free bits: beyond what the reference solver
    // will sweep, so it answers `unknown` and verification reports that
    // instead of guessing.
    let f = parse_function(
        "func @f(%x:i16, %y:i16) {\n  %r = add i16 %x, %y\n  ret %r\n}",
    )
    .unwrap();
    let err = check_refinement(&f, &f, None, &[w(16)], &reference_solver()).unwrap_err();
    match err {
        VerifyError::Unknown(_) => {}
        other => panic!("expected an unknown verdict, got {other}"),
    }
}

#[test]
fn a_missing_solver_program_is_a_clean_error() {
    let backend = Backend::Solver {
        cmd: vec!["/nonexistent/no-such-solver".to_string()],
        timeout: Duration::from_secs(5),
    };
    let f = parse_function("func @f(%x:i4) {\n  %r = xor i4 %x, %x\n  ret %r\n}").unwrap();
    let err = check_refinement(&f, &f, None, &[w(4)], &backend).unwrap_err();
    match err {
        VerifyError::Solver(msg) => assert!(msg.contains("failed to start"), "{msg}"),
        other => panic!("expected a solver spawn error, got {other}"),
    }
}

#[test]
fn repeated_runs_return_identical_counterexamples() {
    let rules = parse_rules(&fixture("broken.rules")).unwrap();
    let rule = &rules[0];
    let solver = reference_solver();
    let first = verify_rule(rule, &[w(4)], &solver).unwrap();
    let second = verify_rule(rule, &[w(4)], &solver).unwrap();
    assert_eq!(first, second);
    assert!(!first.is_valid());
}
