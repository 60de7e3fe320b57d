use super::*;
use crate::ir::parse_function;
use crate::rules::parse_rules;
use crate::verify::{validate_translation, Backend, Verdict};

fn w(bits: u32) -> Width {
    Width::new(bits).unwrap()
}

fn fixture(name: &str) -> String {
    let path = format!("{}/fixtures/{}", env!("CARGO_MANIFEST_DIR"), name);
    std::fs::read_to_string(path).unwrap()
}

fn rules_from(name: &str) -> Vec<Rule> {
    parse_rules(&fixture(name)).unwrap()
}

fn func(src: &str) -> Function {
    parse_function(src).unwrap()
}

fn foo() -> Function {
    func(&fixture("foo.ir"))
}

fn bar() -> Function {
    func(&fixture("bar.ir"))
}

fn exhaustive() -> Backend {
    Backend::Exhaustive
}

use crate::rules::Rule;

// ---------------------------------------------------------------------
// Candidate discovery.

#[test]
fn the_running_example_has_exactly_two_candidates() {
    let m = compile_rules(&rules_from("instcombine.rules")).unwrap();
    let f = foo();
    let cands = m.match_function(&f);
    assert_eq!(cands.len(), 2);
    // sub-of-negs at %c, add-of-negs at %d, in body order.
    assert_eq!(m.rules()[cands[0].rule_index].name, "sub-of-negs");
    assert_eq!(f.body[cands[0].root].result, "c");
    assert_eq!(m.rules()[cands[1].rule_index].name, "add-of-negs");
    assert_eq!(f.body[cands[1].root].result, "d");
}

#[test]
fn match_at_reports_only_the_requested_root() {
    let m = compile_rules(&rules_from("instcombine.rules")).unwrap();
    let f = foo();
    let at_c = m.match_at(&f, f.def_index("c").unwrap());
    assert_eq!(at_c.len(), 1);
    assert_eq!(m.rules()[at_c[0].rule_index].name, "sub-of-negs");
    let b = &at_c[0].binding;
    assert_eq!(b.values["a"], Operand::Value("a".into()));
    assert_eq!(b.values["b"], Operand::Value("b".into()));
    assert_eq!(b.width, w(32));

    let at_d = m.match_at(&f, f.def_index("d").unwrap());
    assert_eq!(at_d.len(), 1);
    assert_eq!(m.rules()[at_d[0].rule_index].name, "add-of-negs");

    assert!(m.match_at(&f, 0).is_empty());
}

#[test]
fn an_empty_rule_list_never_matches() {
    let m = compile_rules(&[]).unwrap();
    assert!(m.match_function(&foo()).is_empty());
}

#[test]
fn duplicate_rule_names_are_rejected() {
    let mut rules = rules_from("instcombine.rules");
    let dup = rules[0].clone();
    rules.push(dup);
    match compile_rules(&rules) {
        Err(MatchError::DuplicateRule(name)) => assert_eq!(name, "sub-of-negs"),
        Err(other) => panic!("expected a duplicate-name error, got {other:?}"),
        Ok(_) => panic!("expected a duplicate-name error, got a matcher"),
    }
}

#[test]
fn commutative_subjects_match_in_either_operand_order() {
    // xor-cancel's root is xor(%x, %t) with %t = xor(%x, %y); the subject
    // writes the root's operands the other way around, and the inner xor
    // backwards too, so both levels need the swapped order.
    let rules = rules_from("seed.rules");
    let m = compile_rules(&rules).unwrap();
    let f = func(
        "func @f(%a:i8, %b:i8) {\n  %t = xor i8 %b, %a\n  %r = xor i8 %t, %a\n  ret %r\n}",
    );
    let cands = m.match_at(&f, 1);
    assert_eq!(cands.len(), 1);
    assert_eq!(m.rules()[cands[0].rule_index].name, "xor-cancel");
    assert_eq!(cands[0].binding.values["x"], Operand::Value("a".into()));
    assert_eq!(cands[0].binding.values["y"], Operand::Value("b".into()));
}

#[test]
fn nonlinear_variables_must_bind_one_value() {
    let rules = rules_from("seed.rules");
    let m = compile_rules(&rules).unwrap();
    // xor(%c, xor(%a, %b)) with %c distinct from both: no consistent %x.
    let f = func(
        "func @f(%a:i8, %b:i8, %c:i8) {\n  %t = xor i8 %a, %b\n  %r = xor i8 %c, %t\n  ret %r\n}",
    );
    assert!(m.match_at(&f, 1).is_empty());
}

#[test]
fn symmetric_patterns_yield_one_candidate_not_two() {
    // add-of-negs has two erasure-identical operands; trying both orders
    // would produce the same rewrite twice with a and b exchanged.
    let m = compile_rules(&rules_from("instcombine.rules")).unwrap();
    let f = foo();
    let at_d = m.match_at(&f, f.def_index("d").unwrap());
    assert_eq!(at_d.len(), 1);
}

#[test]
fn distinguishable_constant_operands_try_both_orders() {
    // and(C1, xor(%a, -1)) has distinguishable operands, so a subject
    // holding them in the opposite order still matches.
    let rules = parse_rules(
        "name: mask-of-not\n%n = xor %a, -1\n%r = and C1, %n\n=>\n%r = and C1, %n\n",
    )
    .unwrap();
    let m = compile_rules(&rules).unwrap();
    let f = func(
        "func @f(%a:i8) {\n  %n = xor i8 %a, -1\n  %r = and i8 %n, 12\n  ret %r\n}",
    );
    let cands = m.match_at(&f, 1);
    assert_eq!(cands.len(), 1);
    assert_eq!(
        cands[0].binding.syms["C1"],
        Constant::new(12, w(8)).unwrap()
    );
}

#[test]
fn pattern_flags_require_subject_flags() {
    let rules = parse_rules("name: double\n%r = add nuw %x, %x\n=>\n%r = shl nuw %x, 1\n").unwrap();
    let m = compile_rules(&rules).unwrap();
    let plain = func("func @f(%x:i8) {\n  %r = add i8 %x, %x\n  ret %r\n}");
    assert!(m.match_function(&plain).is_empty());
    let nuw = func("func @f(%x:i8) {\n  %r = add nuw i8 %x, %x\n  ret %r\n}");
    assert_eq!(m.match_function(&nuw).len(), 1);
    // Extra flags on the subject are fine: the pattern states a minimum.
    let both = func("func @f(%x:i8) {\n  %r = add nsw nuw i8 %x, %x\n  ret %r\n}");
    assert_eq!(m.match_function(&both).len(), 1);
}

#[test]
fn literals_match_by_bit_pattern_at_the_subject_width() {
    // The pattern says -1; an i8 subject writes the same bits as 255.
    let m = compile_rules(&rules_from("seed.rules")).unwrap();
    let f = func(
        "func @f(%a:i8, %b:i8) {\n  %na = xor i8 %a, 255\n  %nb = xor i8 %b, -1\n  %r = and i8 %na, %nb\n  ret %r\n}",
    );
    let cands = m.match_at(&f, 2);
    assert_eq!(cands.len(), 1);
    assert_eq!(m.rules()[cands[0].rule_index].name, "demorgan-and");
}

#[test]
fn preconditions_filter_candidates() {
    let m = compile_rules(&rules_from("seed.rules")).unwrap();
    // Shift by width-1 satisfies the low-bit rule's precondition.
    let good = func(&fixture("lowbit8.ir"));
    let hits = m.match_at(&good, good.def_index("r").unwrap());
    assert_eq!(hits.len(), 1);
    assert_eq!(m.rules()[hits[0].rule_index].name, "low-bit-flip");
    assert_eq!(hits[0].binding.syms["C1"], Constant::new(7, w(8)).unwrap());

    // Same shape, wrong shift amount: structurally fine, filtered by pre.
    let bad = func(
        "func @f(%x:i8) {\n  %s = shl i8 %x, 5\n  %t = ashr i8 %s, 5\n  %r = add i8 %t, 1\n  ret %r\n}",
    );
    assert!(m.match_at(&bad, bad.def_index("r").unwrap()).is_empty());
}

#[test]
fn width_pinned_rules_match_only_their_width() {
    let rules =
        parse_rules("name: swap8\n%r = add %x:i8, %y\n=>\n%r = add %y, %x\n").unwrap();
    let m = compile_rules(&rules).unwrap();
    let narrow = func("func @f(%x:i4, %y:i4) {\n  %r = add i4 %x, %y\n  ret %r\n}");
    assert!(m.match_function(&narrow).is_empty());
    let exact = func("func @f(%x:i8, %y:i8) {\n  %r = add i8 %x, %y\n  ret %r\n}");
    assert_eq!(m.match_function(&exact).len(), 1);
}

#[test]
fn comparison_and_select_patterns_match_at_any_operand_width() {
    let rules = parse_rules(
        "name: min-swap\n%c = icmp ult %a, %b\n%r = select %c, %a, %b\n=>\n%d = icmp ult %b, %a\n%r = select %d, %b, %a\n",
    )
    .unwrap();
    let m = compile_rules(&rules).unwrap();
    for bits in [4u32, 13, 64] {
        let f = func(&format!(
            "func @f(%a:i{bits}, %b:i{bits}) {{\n  %c = icmp ult i{bits} %a, %b\n  %r = select i{bits} %c, %a, %b\n  ret %r\n}}"
        ));
        let cands = m.match_at(&f, 1);
        assert_eq!(cands.len(), 1, "width {bits}");
        assert_eq!(cands[0].binding.width, w(bits), "width {bits}");
    }
}

#[test]
fn variables_may_bind_constant_operands() {
    let m = compile_rules(&rules_from("seed.rules")).unwrap();
    let f = func(
        "func @f(%a:i8) {\n  %t = xor i8 %a, 5\n  %r = xor i8 %a, %t\n  ret %r\n}",
    );
    let cands = m.match_at(&f, 1);
    assert_eq!(cands.len(), 1);
    assert_eq!(
        cands[0].binding.values["y"],
        Operand::Const(Constant::new(5, w(8)).unwrap())
    );
}

// ---------------------------------------------------------------------
// Oracle agreement: the automaton and the naive matcher are twins.

#[test]
fn automaton_agrees_with_the_naive_matcher_on_fixtures() {
    let mut rules = rules_from("seed.rules");
    rules.extend(rules_from("instcombine.rules"));
    let m = compile_rules(&rules).unwrap();
    let subjects = vec![
        foo(),
        bar(),
        func(&fixture("lowbit8.ir")),
        func("func @f(%a:i8, %b:i8) {\n  %t = xor i8 %b, %a\n  %r = xor i8 %t, %a\n  ret %r\n}"),
        func("func @f(%a:i8) {\n  %t = xor i8 %a, 5\n  %r = xor i8 %a, %t\n  ret %r\n}"),
        func(
            "func @f(%a:i8, %b:i8) {\n  %na = xor i8 %a, 255\n  %nb = xor i8 %b, -1\n  %x = or i8 %na, %a\n  %r = and i8 %na, %nb\n  ret %r, %x\n}",
        ),
    ];
    for f in &subjects {
        for i in 0..f.body.len() {
            assert_eq!(
                m.match_at(f, i),
                naive_match_at(&rules, f, i),
                "function {} at {}",
                f.name,
                i
            );
        }
    }
}

// ---------------------------------------------------------------------
// Greedy rewriting.

#[test]
fn greedy_shrinks_the_running_example_to_four_instructions() {
    let m = compile_rules(&rules_from("instcombine.rules")).unwrap();
    let f = foo();
    let (g, trace) = m.rewrite_greedy(&f, None).unwrap();
    assert_eq!(g.cost(), 4);
    assert_eq!(trace.stopped, Stop::Quiesced);
    let fired: Vec<String> = trace.steps.iter().map(|s| s.to_string()).collect();
    assert_eq!(fired, vec!["fire sub-of-negs @%c", "fire add-of-negs @%d"]);
    assert_eq!(
        validate_translation(&f, &g, &[w(4), w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

#[test]
fn greedy_optimism_can_backfire() {
    // bar keeps its negations observable, so rewriting the add costs one
    // instruction net: three instructions become four.
    let m = compile_rules(&rules_from("instcombine.rules")).unwrap();
    let f = bar();
    assert_eq!(f.cost(), 3);
    let (g, trace) = m.rewrite_greedy(&f, None).unwrap();
    assert_eq!(g.cost(), 4);
    assert_eq!(trace.stopped, Stop::Quiesced);
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(trace.steps[0].rule, "add-of-negs");
    assert_eq!(
        validate_translation(&f, &g, &[w(4), w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

#[test]
fn mutually_inverse_rules_stop_at_the_cycle_guard() {
    let rules = parse_rules(
        "name: lit-right\n%r = add %x, 1\n=>\n%r = add 1, %x\n\nname: lit-left\n%r = add 1, %x\n=>\n%r = add %x, 1\n",
    )
    .unwrap();
    let m = compile_rules(&rules).unwrap();
    let f = func("func @f(%a:i8) {\n  %r = add i8 %a, 1\n  ret %r\n}");
    let (g, trace) = m.rewrite_greedy(&f, None).unwrap();
    assert_eq!(trace.stopped, Stop::Cycle);
    assert!(!trace.steps.is_empty());
    // The guard stops the loop well inside the budget.
    assert!(trace.steps.len() < 4 * f.body.len());
    assert_eq!(
        validate_translation(&f, &g, &[w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

#[test]
fn the_fire_budget_is_respected() {
    let m = compile_rules(&rules_from("instcombine.rules")).unwrap();
    let (g, trace) = m.rewrite_greedy(&foo(), Some(1)).unwrap();
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(trace.stopped, Stop::BudgetExhausted);
    assert_eq!(g.cost(), 5);

    let (_, trace0) = m.rewrite_greedy(&foo(), Some(0)).unwrap();
    assert!(trace0.steps.is_empty());
    assert_eq!(trace0.stopped, Stop::BudgetExhausted);
}

#[test]
fn a_quiet_function_quiesces_without_steps() {
    let m = compile_rules(&rules_from("instcombine.rules")).unwrap();
    let f = func("func @f(%x:i8, %y:i8) {\n  %r = mul i8 %x, %y\n  ret %r\n}");
    let (g, trace) = m.rewrite_greedy(&f, None).unwrap();
    assert_eq!(g, f);
    assert!(trace.steps.is_empty());
    assert_eq!(trace.stopped, Stop::Quiesced);
}

#[test]
fn forwarding_rewrites_erase_the_whole_chain() {
    // xor-cancel forwards the root to %y; both xors die.
    let m = compile_rules(&rules_from("seed.rules")).unwrap();
    let f = func(
        "func @f(%a:i8, %b:i8) {\n  %t = xor i8 %a, %b\n  %r = xor i8 %a, %t\n  ret %r\n}",
    );
    let (g, trace) = m.rewrite_greedy(&f, None).unwrap();
    assert_eq!(g.cost(), 0);
    assert_eq!(g.returns, vec!["b".to_string()]);
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(
        validate_translation(&f, &g, &[w(4), w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

#[test]
fn forwarded_constants_are_materialized_when_returned() {
    let rules =
        parse_rules("name: and-zero\n%r = and %x, 0\n=>\n%r = 0\n").unwrap();
    let m = compile_rules(&rules).unwrap();
    let f = func("func @f(%x:i8) {\n  %r = and i8 %x, 0\n  ret %r\n}");
    let (g, _) = m.rewrite_greedy(&f, None).unwrap();
    // Returns name values, so the constant is computed by one instruction.
    assert_eq!(g.cost(), 1);
    assert_eq!(g.body[0].opcode, Opcode::Or);
    assert_eq!(g.returns, vec!["r".to_string()]);
    assert_eq!(
        validate_translation(&f, &g, &[w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );

    // When the root is only used, not returned, the constant forwards
    // straight into the use and the chain dies.
    let used = func(
        "func @f(%x:i8, %y:i8) {\n  %t = and i8 %x, 0\n  %r = add i8 %t, %y\n  ret %r\n}",
    );
    let (h, _) = m.rewrite_greedy(&used, None).unwrap();
    assert_eq!(h.cost(), 1);
    assert_eq!(h.body[0].opcode, Opcode::Add);
    assert_eq!(
        h.body[0].operands[0],
        Operand::Const(Constant::new(0, w(8)).unwrap())
    );
}

// ---------------------------------------------------------------------
// Instrumentation: scan work is flat in the rule count.

#[test]
fn per_instruction_lookups_do_not_grow_with_the_rule_count() {
    let small = compile_rules(&rules_from("instcombine.rules")).unwrap();
    let mut all = rules_from("instcombine.rules");
    all.extend(rules_from("seed.rules"));
    let large = compile_rules(&all).unwrap();

    let f = foo();
    small.match_function(&f);
    large.match_function(&f);
    assert_eq!(small.transition_lookups(), f.body.len() as u64);
    assert_eq!(large.transition_lookups(), f.body.len() as u64);

    small.reset_transition_lookups();
    assert_eq!(small.transition_lookups(), 0);
}

#[test]
fn repeated_scans_reuse_memoized_transitions() {
    let m = compile_rules(&rules_from("seed.rules")).unwrap();
    let f = foo();
    m.match_function(&f);
    let first = m.transition_lookups();
    m.match_function(&f);
    // Lookups count probes, hits included: the work per scan is constant.
    assert_eq!(m.transition_lookups(), 2 * first);
}
