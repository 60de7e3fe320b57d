use std::collections::BTreeMap;

use super::*;
use crate::ir::{parse_function, Val};
use crate::rules::parse_rules;

fn w(bits: u32) -> Width {
    Width::new(bits).unwrap()
}

fn fixture(name: &str) -> String {
    let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {path}: {e}"))
}

fn seed_rule(name: &str) -> Rule {
    parse_rules(&fixture("seed.rules"))
        .unwrap()
        .into_iter()
        .find(|r| r.name == name)
        .unwrap_or_else(|| panic!("no rule named {name}"))
}

fn exhaustive() -> Backend {
    Backend::Exhaustive
}

// -------------------------------------------------------------------------
// Side functions.

#[test]
fn side_functions_of_alias_rule() {
    let rule = seed_rule("xor-cancel");
    let (lhs, rhs) = rule_side_functions(&rule, w(8)).unwrap();
    assert_eq!(
        lhs.params.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(),
        ["x", "y"]
    );
    assert_eq!(lhs.body.len(), 2);
    assert_eq!(lhs.returns, ["r"]);
    // The replacement side keeps the pattern body (references into it stay
    // meaningful) and returns the alias target directly.
    assert_eq!(rhs.returns, ["y"]);
    assert_eq!(rhs.params, lhs.params);
}

#[test]
fn side_functions_rename_the_replacement_root() {
    let rule = seed_rule("demorgan-and");
    let (lhs, rhs) = rule_side_functions(&rule, w(4)).unwrap();
    assert_eq!(lhs.returns, ["r"]);
    assert_eq!(rhs.returns, ["r.rhs"]);
    assert_eq!(rhs.body.len(), 5); // 3 pattern instructions + 2 replacement
    // Literal -1 materializes at the instantiated width.
    let all_ones = rhs
        .body
        .iter()
        .filter_map(|i| {
            i.operands.iter().find_map(|o| match o {
                Operand::Const(c) => Some(c.bits),
                _ => None,
            })
        })
        .collect::<Vec<_>>();
    assert!(all_ones.iter().all(|&b| b == 0xF), "{all_ones:?}");
}

#[test]
fn symbolic_constants_become_trailing_parameters() {
    let rule = seed_rule("low-bit-flip");
    let (lhs, _) = rule_side_functions(&rule, w(4)).unwrap();
    assert_eq!(
        lhs.params.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(),
        ["x", "C1", "C2"]
    );
    assert!(lhs.params.iter().all(|p| p.width == w(4)));
}

// -------------------------------------------------------------------------
// check_refinement on plain function pairs.

#[test]
fn xor_of_xor_collapses() {
    let f = parse_function(
        "func @f(%x:i8, %y:i8) {\n  %t = xor i8 %x, %y\n  %r = xor i8 %x, %t\n  ret %r\n}",
    )
    .unwrap();
    let g = parse_function("func @g(%x:i8, %y:i8) {\n  ret %y\n}").unwrap();
    let v = check_refinement(&f, &g, None, &[w(4), w(8)], &exhaustive()).unwrap();
    assert_eq!(v, Verdict::Valid);
}

#[test]
fn demorgan_pair_is_equivalent_at_width_4() {
    let f = parse_function(
        "func @f(%a:i4, %b:i4) {\n  %na = xor i4 %a, -1\n  %nb = xor i4 %b, -1\n  %r = and i4 %na, %nb\n  ret %r\n}",
    )
    .unwrap();
    let g = parse_function(
        "func @g(%a:i4, %b:i4) {\n  %o = or i4 %a, %b\n  %r = xor i4 %o, -1\n  ret %r\n}",
    )
    .unwrap();
    assert_eq!(
        check_refinement(&f, &g, None, &[w(4)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

#[test]
fn off_by_one_yields_the_smallest_counterexample() {
    let f = parse_function("func @f(%x:i4) {\n  %r = add i4 %x, 1\n  ret %r\n}").unwrap();
    let g = parse_function("func @g(%x:i4) {\n  ret %x\n}").unwrap();
    match check_refinement(&f, &g, None, &[w(4)], &exhaustive()).unwrap() {
        Verdict::Counterexample(cex) => {
            assert_eq!(cex.width, w(4));
            assert_eq!(cex.inputs.get("x"), Some(&0));
            assert!(cex.constants.is_empty());
            assert_eq!(cex.lhs, vec![Val::Bits(1)]);
            assert_eq!(cex.rhs, vec![Val::Bits(0)]);
            assert_eq!(cex.component, 0);
        }
        other => panic!("expected a counterexample, got {other:?}"),
    }
}

#[test]
fn refinement_may_drop_poison_but_never_add_it() {
    let flagged = parse_function(
        "func @f(%x:i4, %y:i4) {\n  %r = add nsw i4 %x, %y\n  ret %r\n}",
    )
    .unwrap();
    let plain =
        parse_function("func @g(%x:i4, %y:i4) {\n  %r = add i4 %x, %y\n  ret %r\n}").unwrap();
    // Dropping a flag only removes poison: valid.
    assert_eq!(
        check_refinement(&flagged, &plain, None, &[w(4)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
    // Adding one introduces poison where the original had none: invalid,
    // and the violation shows the replacement as Poison.
    match check_refinement(&plain, &flagged, None, &[w(4)], &exhaustive()).unwrap() {
        Verdict::Counterexample(cex) => {
            assert_eq!(cex.rhs, vec![Val::Poison]);
            assert!(matches!(cex.lhs[0], Val::Bits(_)));
        }
        other => panic!("expected a counterexample, got {other:?}"),
    }
}

#[test]
fn refinement_is_reflexive_on_fixtures() {
    for file in ["foo.ir", "bar.ir", "lowbit8.ir"] {
        let f = parse_function(&fixture(file)).unwrap();
        assert_eq!(
            validate_translation(&f, &f, &[w(4), w(8)], &exhaustive()).unwrap(),
            Verdict::Valid,
            "{file} should refine itself"
        );
    }
}

// -------------------------------------------------------------------------
// verify_rule.

#[test]
fn seed_rules_verify_at_small_widths() {
    for rule in parse_rules(&fixture("seed.rules")).unwrap() {
        let v = verify_rule(&rule, &[w(4), w(8)], &exhaustive()).unwrap();
        assert_eq!(v, Verdict::Valid, "rule {} should be valid", rule.name);
    }
}

#[test]
fn shift_rule_holds_at_width_16_via_forced_constants() {
    // 16-bit x plus two 16-bit constants is 48 free bits — far beyond the
    // enumeration budget. The equalities in the precondition pin both
    // constants, leaving only x to sweep.
    let rule = seed_rule("low-bit-flip");
    let v = verify_rule(&rule, &[w(16)], &exhaustive()).unwrap();
    assert_eq!(v, Verdict::Valid);
}

#[test]
fn forced_constant_discovery_reads_equality_conjuncts() {
    let rule = seed_rule("low-bit-flip");
    let (lhs, rhs) = rule_side_functions(&rule, w(16)).unwrap();
    let q = ExhaustiveQuery {
        lhs: &lhs,
        rhs: &rhs,
        pre: rule.pre.as_ref(),
        width: w(16),
    };
    let forced = q.forced_constants();
    assert_eq!(forced.get("C1"), Some(&15));
    assert_eq!(forced.get("C2"), Some(&15));
}

#[test]
fn forced_run_agrees_with_plain_run_where_both_apply() {
    // At width 8 the plain sweep is affordable, so the reduction can be
    // cross-checked against it directly.
    let rule = seed_rule("low-bit-flip");
    let (lhs, rhs) = rule_side_functions(&rule, w(8)).unwrap();
    let q = ExhaustiveQuery {
        lhs: &lhs,
        rhs: &rhs,
        pre: rule.pre.as_ref(),
        width: w(8),
    };
    let plain = q.run(&BTreeMap::new()).unwrap();
    let forced = q.run(&q.forced_constants()).unwrap();
    assert_eq!(plain, Verdict::Valid);
    assert_eq!(forced, Verdict::Valid);
}

#[test]
fn unpreconditioned_shift_rule_has_a_replaying_counterexample() {
    let rules = parse_rules(&fixture("broken.rules")).unwrap();
    let rule = &rules[0];
    let cex = match verify_rule(rule, &[w(4)], &exhaustive()).unwrap() {
        Verdict::Counterexample(c) => c,
        Verdict::Valid => panic!("rule without precondition must not verify"),
    };
    // First violation in enumeration order: C1 = 0, C2 = 0 turn the left
    // side into x + 1, which differs from ~x & 1 already at x = 1.
    assert_eq!(cex.constants.get("C1"), Some(&0));
    assert_eq!(cex.constants.get("C2"), Some(&0));
    assert_eq!(cex.inputs.get("x"), Some(&1));
    assert_eq!(cex.lhs, vec![Val::Bits(2)]);
    assert_eq!(cex.rhs, vec![Val::Bits(0)]);

    // Replay: evaluating the side functions on the stored values must
    // reproduce the recorded results exactly.
    let (lhs, rhs) = rule_side_functions(rule, cex.width).unwrap();
    let assign: Vec<u64> = lhs
        .params
        .iter()
        .map(|p| {
            *cex.inputs
                .get(&p.name)
                .or_else(|| cex.constants.get(&p.name))
                .unwrap()
        })
        .collect();
    assert_eq!(crate::ir::evaluate(&lhs, &assign).unwrap(), cex.lhs);
    assert_eq!(crate::ir::evaluate(&rhs, &assign).unwrap(), cex.rhs);
}

#[test]
fn inadmissible_widths_are_skipped_for_polymorphic_rules() {
    // The literal 4 does not fit in two bits, so a width-2 instantiation
    // does not exist; requesting {2, 4} must quietly check only width 4
    // rather than failing or bending the literal.
    let rules = parse_rules(
        "name: mul4-to-shift\n%r = mul %x, 4\n=>\n%r = shl %x, 2\n",
    )
    .unwrap();
    assert_eq!(
        verify_rule(&rules[0], &[w(4), w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
    assert_eq!(
        verify_rule(&rules[0], &[w(2), w(4)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

#[test]
fn no_admissible_width_is_an_error() {
    let rules =
        parse_rules("name: big-mask\n%r = and %x, 300\n=>\n%r = and %x, 300\n").unwrap();
    match verify_rule(&rules[0], &[w(4), w(8)], &exhaustive()) {
        Err(VerifyError::NoAdmissibleWidth) => {}
        other => panic!("expected NoAdmissibleWidth, got {other:?}"),
    }
}

#[test]
fn empty_width_set_is_an_error() {
    let rule = seed_rule("xor-cancel");
    match verify_rule(&rule, &[], &exhaustive()) {
        Err(VerifyError::EmptyWidths) => {}
        other => panic!("expected EmptyWidths, got {other:?}"),
    }
}

#[test]
fn width_pinned_rule_is_checked_once_at_its_own_width() {
    // The annotation fixes every value at i8; requesting width 4 must not
    // bend the rule to 4 bits.
    let rules = parse_rules(
        "name: swap-add-8\n%r = add %x:i8, %y\n=>\n%r = add %y, %x\n",
    )
    .unwrap();
    assert!(!rules[0].is_polymorphic());
    assert_eq!(
        verify_rule(&rules[0], &[w(4)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

#[test]
fn comparison_and_select_rules_verify() {
    let rules = parse_rules(
        "name: smax-swap\n%c = icmp slt %a, %b\n%r = select %c, %b, %a\n=>\n%c2 = icmp slt %b, %a\n%r = select %c2, %a, %b\n",
    )
    .unwrap();
    assert_eq!(
        verify_rule(&rules[0], &[w(4)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

// -------------------------------------------------------------------------
// Per-bit decomposition.

#[test]
fn bitwise_rules_verify_at_width_16_past_the_budget() {
    for name in ["xor-cancel", "demorgan-and", "or-xor-absorb"] {
        let rule = seed_rule(name);
        let v = verify_rule(&rule, &[w(16)], &exhaustive()).unwrap();
        assert_eq!(v, Verdict::Valid, "{name} at i16");
    }
}

#[test]
fn bitwise_counterexample_lifts_to_full_width_and_replays() {
    let f = parse_function(
        "func @f(%x:i16, %y:i16) {\n  %r = and i16 %x, %y\n  ret %r\n}",
    )
    .unwrap();
    let g = parse_function(
        "func @g(%x:i16, %y:i16) {\n  %r = or i16 %x, %y\n  ret %r\n}",
    )
    .unwrap();
    match check_refinement(&f, &g, None, &[w(16)], &exhaustive()).unwrap() {
        Verdict::Counterexample(cex) => {
            // The one-bit disagreement broadcasts to all-zeros / all-ones.
            assert_eq!(cex.inputs.get("x"), Some(&0));
            assert_eq!(cex.inputs.get("y"), Some(&0xFFFF));
            assert_eq!(cex.lhs, vec![Val::Bits(0)]);
            assert_eq!(cex.rhs, vec![Val::Bits(0xFFFF)]);
            let assign = [0u64, 0xFFFF];
            assert_eq!(crate::ir::evaluate(&f, &assign).unwrap(), cex.lhs);
            assert_eq!(crate::ir::evaluate(&g, &assign).unwrap(), cex.rhs);
        }
        other => panic!("expected a counterexample, got {other:?}"),
    }
}

#[test]
fn bitwise_reduction_agrees_with_plain_enumeration() {
    for name in ["xor-cancel", "demorgan-and", "or-xor-absorb"] {
        let rule = seed_rule(name);
        let (lhs, rhs) = rule_side_functions(&rule, w(6)).unwrap();
        let q = ExhaustiveQuery {
            lhs: &lhs,
            rhs: &rhs,
            pre: None,
            width: w(6),
        };
        assert!(q.bitwise_eligible(), "{name} should qualify");
        assert_eq!(
            q.run(&BTreeMap::new()).unwrap(),
            q.run_bitwise().unwrap(),
            "{name}: plain vs per-bit"
        );
    }
}

#[test]
fn non_bitwise_large_queries_refuse_rather_than_guess() {
    let f = parse_function(
        "func @f(%x:i16, %y:i16) {\n  %r = add i16 %x, %y\n  ret %r\n}",
    )
    .unwrap();
    let g = parse_function(
        "func @g(%x:i16, %y:i16) {\n  %r = add i16 %y, %x\n  ret %r\n}",
    )
    .unwrap();
    match check_refinement(&f, &g, None, &[w(16)], &exhaustive()) {
        Err(VerifyError::TooLarge { bits: 32 }) => {}
        other => panic!("expected TooLarge, got {other:?}"),
    }
}

// -------------------------------------------------------------------------
// validate_translation.

#[test]
fn foo_refines_to_its_four_instruction_form() {
    let foo = parse_function(&fixture("foo.ir")).unwrap();
    let opt = parse_function(
        "func @foo(%a:i32, %b:i32) {\n  %c = sub i32 %b, %a\n  %t = add i32 %a, %b\n  %d = sub i32 0, %t\n  %r = xor i32 %c, %d\n  ret %r\n}",
    )
    .unwrap();
    assert_eq!(
        validate_translation(&foo, &opt, &[w(4), w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

#[test]
fn miscompiled_foo_is_caught() {
    let foo = parse_function(&fixture("foo.ir")).unwrap();
    let bad = parse_function(
        "func @foo(%a:i32, %b:i32) {\n  %na = sub i32 0, %a\n  %nb = sub i32 0, %b\n  %c = sub i32 %na, %nb\n  %d = add i32 %na, %nb\n  %r = or i32 %c, %d\n  ret %r\n}",
    )
    .unwrap();
    match validate_translation(&foo, &bad, &[w(4), w(8)], &exhaustive()).unwrap() {
        Verdict::Counterexample(cex) => {
            let fw = foo.with_uniform_width(cex.width).unwrap();
            let bw = bad.with_uniform_width(cex.width).unwrap();
            let assign: Vec<u64> = fw
                .params
                .iter()
                .map(|p| *cex.inputs.get(&p.name).unwrap())
                .collect();
            assert_eq!(crate::ir::evaluate(&fw, &assign).unwrap(), cex.lhs);
            assert_eq!(crate::ir::evaluate(&bw, &assign).unwrap(), cex.rhs);
        }
        Verdict::Valid => panic!("or is not xor"),
    }
}

#[test]
fn multi_return_functions_check_componentwise() {
    let bar = parse_function(&fixture("bar.ir")).unwrap();
    // Same three values in a different internal order, same return tuple.
    let same = parse_function(
        "func @bar(%a:i32, %b:i32) {\n  %nb = sub i32 0, %b\n  %na = sub i32 0, %a\n  %d = add i32 %na, %nb\n  ret %d, %na, %nb\n}",
    )
    .unwrap();
    assert_eq!(
        validate_translation(&bar, &same, &[w(4)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
    // Swapping two returned components is a visible change.
    let swapped = parse_function(
        "func @bar(%a:i32, %b:i32) {\n  %na = sub i32 0, %a\n  %nb = sub i32 0, %b\n  %d = add i32 %na, %nb\n  ret %d, %nb, %na\n}",
    )
    .unwrap();
    match validate_translation(&bar, &swapped, &[w(4)], &exhaustive()).unwrap() {
        Verdict::Counterexample(cex) => assert_eq!(cex.component, 1),
        Verdict::Valid => panic!("component order matters"),
    }
}

#[test]
fn translation_signature_mismatches_are_errors() {
    let foo = parse_function(&fixture("foo.ir")).unwrap();
    let bar = parse_function(&fixture("bar.ir")).unwrap();
    match validate_translation(&foo, &bar, &[w(4)], &exhaustive()) {
        Err(VerifyError::SignatureMismatch(_)) => {}
        other => panic!("expected SignatureMismatch, got {other:?}"),
    }
}

#[test]
fn mixed_width_functions_validate_at_their_native_widths() {
    // Comparisons make a function width-mixed (their result is one bit),
    // so no re-widthing exists; the requested width set degrades to one
    // check of the functions as written.
    let f = parse_function(
        "func @f(%a:i4, %b:i4) {\n  %c = icmp ult i4 %a, %b\n  %r = select i4 %c, %a, %b\n  ret %r\n}",
    )
    .unwrap();
    let g = parse_function(
        "func @g(%a:i4, %b:i4) {\n  %c = icmp ult i4 %b, %a\n  %r = select i4 %c, %b, %a\n  ret %r\n}",
    )
    .unwrap();
    assert_eq!(
        validate_translation(&f, &g, &[w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

// -------------------------------------------------------------------------
// Flag inference.

#[test]
fn inference_tags_the_shift_with_nuw() {
    let rules = parse_rules(
        "name: double\n%r = add nuw %x, %x\n=>\n%r = shl %x, 1\n",
    )
    .unwrap();
    let inferred = infer_flags(&rules[0], &[w(4), w(8)], &exhaustive()).unwrap();
    assert!(inferred.rhs[0].flags.nuw, "nuw is preservable");
    assert!(!inferred.rhs[0].flags.nsw, "nsw is not");
    // Sanity: the inferred rule still verifies.
    assert_eq!(
        verify_rule(&inferred, &[w(4), w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

#[test]
fn inference_adds_nothing_when_the_original_never_poisons() {
    let rules =
        parse_rules("name: double\n%r = add %x, %x\n=>\n%r = shl %x, 1\n").unwrap();
    let inferred = infer_flags(&rules[0], &[w(4)], &exhaustive()).unwrap();
    assert!(!inferred.rhs[0].flags.nuw);
    assert!(!inferred.rhs[0].flags.nsw);
}

#[test]
fn inference_leaves_flagless_opcodes_alone() {
    let rule = seed_rule("or-xor-absorb");
    let inferred = infer_flags(&rule, &[w(4)], &exhaustive()).unwrap();
    assert_eq!(print_rule_text(&inferred), print_rule_text(&rule));
}

#[test]
fn inference_rejects_invalid_rules() {
    let rules = parse_rules(&fixture("broken.rules")).unwrap();
    assert!(infer_flags(&rules[0], &[w(4)], &exhaustive()).is_err());
}

#[test]
fn flag_validity_is_monotonic_under_rhs_subsets() {
    // A replacement that verifies with a flag set must also verify with
    // the flag removed: fewer flags mean strictly less poison.
    let rules = parse_rules(
        "name: double\n%r = add nuw %x, %x\n=>\n%r = shl nuw %x, 1\n",
    )
    .unwrap();
    assert_eq!(
        verify_rule(&rules[0], &[w(4), w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
    let mut fewer = rules[0].clone();
    fewer.rhs[0].flags.nuw = false;
    assert_eq!(
        verify_rule(&fewer, &[w(4), w(8)], &exhaustive()).unwrap(),
        Verdict::Valid
    );
}

fn print_rule_text(r: &Rule) -> String {
    crate::rules::print_rule(r)
}

// -------------------------------------------------------------------------
// Query encoding.

#[test]
fn queries_are_deterministic_and_self_contained() {
    let rule = seed_rule("xor-cancel");
    let (lhs, rhs) = rule_side_functions(&rule, w(8)).unwrap();
    let q1 = encode_query(&lhs, &rhs, None, w(8)).unwrap();
    let q2 = encode_query(&lhs, &rhs, None, w(8)).unwrap();
    assert_eq!(q1, q2);
    assert!(q1.starts_with("(set-logic QF_BV)\n"));
    assert!(q1.contains("(declare-fun in_x () (_ BitVec 8))"));
    assert!(q1.contains("(declare-fun in_y () (_ BitVec 8))"));
    assert!(q1.contains("(assert "));
    // Both sides define bits and poison for each computed value.
    assert!(q1.contains("(define-fun l_r () (_ BitVec 8)"));
    assert!(q1.contains("(define-fun lp_r () Bool"));
}

#[test]
fn precondition_encoding_folds_width_terms() {
    let rule = seed_rule("low-bit-flip");
    let (lhs, rhs) = rule_side_functions(&rule, w(8)).unwrap();
    let q = encode_query(&lhs, &rhs, rule.pre.as_ref(), w(8)).unwrap();
    // width(%x) - 1 folds to the literal 7 at width 8, compared against C1.
    assert!(q.contains("(= in_C1 (_ bv7 8))"), "{q}");
    assert!(q.contains("(= in_C1 in_C2)"), "{q}");
}

#[test]
fn icmp_and_select_encode_with_boolean_bridges() {
    let f = parse_function(
        "func @f(%a:i4, %b:i4) {\n  %c = icmp ult i4 %a, %b\n  %r = select i4 %c, %a, %b\n  ret %r\n}",
    )
    .unwrap();
    let q = encode_query(&f, &f, None, w(4)).unwrap();
    assert!(q.contains("(define-fun l_c () (_ BitVec 1) (ite (bvult in_a in_b) (_ bv1 1) (_ bv0 1)))"));
    assert!(q.contains("(ite (= l_c (_ bv1 1)) in_a in_b)"));
}

#[test]
fn flagged_arithmetic_encodes_overflow_poison() {
    let f = parse_function(
        "func @f(%x:i4, %y:i4) {\n  %r = add nsw nuw i4 %x, %y\n  ret %r\n}",
    )
    .unwrap();
    let q = encode_query(&f, &f, None, w(4)).unwrap();
    assert!(q.contains("sign_extend 1"), "{q}");
    assert!(q.contains("zero_extend 1"), "{q}");
    let g = parse_function(
        "func @g(%x:i4, %y:i4) {\n  %r = shl nsw i4 %x, %y\n  ret %r\n}",
    )
    .unwrap();
    let q = encode_query(&g, &g, None, w(4)).unwrap();
    assert!(q.contains("(bvuge in_y (_ bv4 4))"), "{q}");
    assert!(q.contains("(distinct (bvashr (bvshl in_x in_y) in_y) in_x)"), "{q}");
}

// -------------------------------------------------------------------------
// Backend plumbing.

#[test]
fn backend_strings_parse() {
    assert!(matches!(Backend::parse("exhaustive"), Ok(Backend::Exhaustive)));
    match Backend::parse("solver:/usr/bin/z3 -in -smt2") {
        Ok(Backend::Solver { cmd, timeout }) => {
            assert_eq!(cmd, ["/usr/bin/z3", "-in", "-smt2"]);
            assert_eq!(timeout, SOLVER_TIMEOUT);
        }
        other => panic!("{other:?}"),
    }
    assert!(Backend::parse("solver:").is_err());
    assert!(Backend::parse("guess").is_err());
}

#[test]
fn counterexamples_print_with_bindings_and_results() {
    let rules = parse_rules(&fixture("broken.rules")).unwrap();
    match verify_rule(&rules[0], &[w(4)], &exhaustive()).unwrap() {
        Verdict::Counterexample(cex) => {
            let text = cex.to_string();
            assert!(text.contains("i4"), "{text}");
            assert!(text.contains("C1 = 0"), "{text}");
            assert!(text.contains("x = 1"), "{text}");
            assert!(text.contains("original 2"), "{text}");
            assert!(text.contains("replacement 0"), "{text}");
        }
        Verdict::Valid => panic!("broken rule verified"),
    }
}
