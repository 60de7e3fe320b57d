use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::rules::{parse_rules, print_rule};

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

fn rule(text: &str) -> Rule {
    let mut rules = parse_rules(text).unwrap();
    assert_eq!(rules.len(), 1);
    rules.pop().unwrap()
}

/// The low-bit idiom with independent symbolic shift amounts and no
/// precondition — the raw material precondition inference works on.
fn lowbit_general() -> Rule {
    rule(
        "name: lowbit-general\n\
         %s = shl %x, C1\n\
         %t = ashr %s, C2\n\
         %r = add %t, 1\n\
         =>\n\
         %n = xor %x, -1\n\
         %r = and %n, 1\n",
    )
}

/// The fully concrete width-32 instance of the same idiom.
const LOWBIT_I32: &str = "name: lowbit\n\
     %s = shl i32 %x, 31\n\
     %t = ashr i32 %s, 31\n\
     %r = add i32 %t, 1\n\
     =>\n\
     %n = xor i32 %x, -1\n\
     %r = and i32 %n, 1\n";

/// Direct two's-complement model of the low-bit pattern at width 4,
/// written against the arithmetic definitions rather than the interpreter:
/// `None` is poison (a shift amount at or beyond the width), otherwise the
/// value of `((x << c1) ashr c2) + 1` in 4 bits.
fn lowbit_lhs_w4(x: u64, c1: u64, c2: u64) -> Option<u64> {
    if c1 >= 4 || c2 >= 4 {
        return None;
    }
    let s = (x << c1) & 0xF;
    let signed = if s & 0x8 != 0 { s as i64 - 16 } else { s as i64 };
    Some(((signed >> c2) + 1) as u64 & 0xF)
}

/// Ground truth computed independently: the replacement `(~x) & 1` is
/// never poison, so refinement holds exactly when the pattern is poison
/// (vacuous) or the values agree on every input.
fn lowbit_truth_w4() -> BTreeSet<Vec<u64>> {
    let mut t = BTreeSet::new();
    for c1 in 0..16u64 {
        for c2 in 0..16u64 {
            let ok = (0..16u64).all(|x| match lowbit_lhs_w4(x, c1, c2) {
                None => true,
                Some(lhs) => lhs == !x & 1,
            });
            if ok {
                t.insert(vec![c1, c2]);
            }
        }
    }
    t
}

fn satisfies(rule: &Rule, pre: &PredExpr, tuple: &[u64], width: Width) -> bool {
    let symbols = rule.sym_consts();
    let info = rule.width_info();
    let syms: BTreeMap<String, Constant> = symbols
        .iter()
        .zip(tuple)
        .map(|(s, &v)| {
            let sw = info.sym_width(s, width).unwrap_or(width);
            (s.clone(), Constant::from_bits(v, sw))
        })
        .collect();
    eval_precondition(pre, &syms, &rule.var_widths(width)).unwrap()
}

// -------------------------------------------------------------------------
// Ground-truth enumeration.

#[test]
fn valid_set_matches_direct_twos_complement_sweep() {
    let set = enumerate_valid_set(&lowbit_general(), w(4)).unwrap();
    assert_eq!(set.symbols, ["C1", "C2"]);
    assert_eq!(set.width, w(4));
    assert_eq!(set.tuples, lowbit_truth_w4());

    // The one fully-defined valid tuple, and the nearest invalid ones.
    assert!(set.contains(&[3, 3]));
    assert!(!set.contains(&[3, 2]));
    assert!(!set.contains(&[2, 3]));
    assert!(!set.contains(&[0, 0]));
    assert!(!set.contains(&[1, 1]));
}

#[test]
fn always_poison_tuples_are_valid() {
    // A shift amount at or beyond the width poisons the pattern for every
    // input, so refinement holds vacuously and those tuples are in the set.
    let set = enumerate_valid_set(&lowbit_general(), w(4)).unwrap();
    for c1 in 0..16u64 {
        for c2 in 0..16u64 {
            if c1 >= 4 || c2 >= 4 {
                assert!(set.contains(&[c1, c2]), "({c1}, {c2}) should be valid");
            }
        }
    }
    assert_eq!(set.tuples.len(), 241); // 256 - 16 defined + (3, 3)
}

#[test]
fn oversized_sweeps_are_rejected() {
    let err = enumerate_valid_set(&lowbit_general(), w(11)).unwrap_err();
    match err {
        GeneralizeError::Budget {
            symbols,
            width,
            bits,
        } => {
            assert_eq!(symbols, 2);
            assert_eq!(width, w(11));
            assert_eq!(bits, 22);
        }
        other => panic!("expected budget error, got {other}"),
    }
}

#[test]
fn rule_without_symbols_enumerates_the_empty_tuple() {
    let set = enumerate_valid_set(&seed_rule("xor-cancel"), w(4)).unwrap();
    assert!(set.symbols.is_empty());
    assert_eq!(set.tuples.len(), 1);
    assert!(set.contains(&[]));
}

// -------------------------------------------------------------------------
// Constant abstraction.

#[test]
fn abstracting_the_lowbit_idiom_names_distinct_literals() {
    let g = abstract_constants(&rule(LOWBIT_I32)).unwrap();
    // Both 31s share one symbol; the replacement-side -1 has no pattern
    // counterpart and stays literal, flagged for review.
    assert_eq!(
        print_rule(&g.rule),
        "name: lowbit\n\
         %s = shl %x, C1\n\
         %t = ashr %s, C1\n\
         %r = add %t, C2\n\
         =>\n\
         %n = xor %x, -1\n\
         %r = and %n, C2\n"
    );
    assert!(g.rule.pre.is_none());
    assert_eq!(
        g.binding,
        BTreeMap::from([("C1".to_string(), 31), ("C2".to_string(), 1)])
    );
    assert_eq!(g.notes.len(), 1);
    assert!(g.notes[0].contains("literal -1"), "{}", g.notes[0]);
}

#[test]
fn rules_without_pattern_literals_are_left_alone() {
    let original = seed_rule("xor-cancel");
    let g = abstract_constants(&original).unwrap();
    assert_eq!(print_rule(&g.rule), print_rule(&original));
    assert!(g.binding.is_empty());
    assert_eq!(g.notes.len(), 1);
    assert!(g.notes[0].contains("no literal constants"));
}

#[test]
fn shared_literals_get_one_symbol_and_reverify() {
    let g = abstract_constants(&seed_rule("demorgan-and")).unwrap();
    assert_eq!(g.rule.sym_consts(), ["C1"]);
    assert_eq!(g.binding, BTreeMap::from([("C1".to_string(), -1)]));
    assert!(g.notes.is_empty(), "{:?}", g.notes);

    // With the right precondition attached the abstract rule is valid.
    let mut attached = g.rule.clone();
    attached.pre = Some(cmp(PredCmp::Eq, sym("C1"), lit(-1)));
    let verdict = verify_rule(&attached, &[w(4), w(8)], &Backend::Exhaustive).unwrap();
    assert_eq!(verdict, Verdict::Valid);
}

#[test]
fn already_symbolic_rules_are_rejected() {
    let err = abstract_constants(&seed_rule("low-bit-flip")).unwrap_err();
    assert!(matches!(err, GeneralizeError::AlreadySymbolic(s) if s == "C1"));
}

// -------------------------------------------------------------------------
// Precondition inference.

#[test]
fn inferred_lowbit_precondition_is_exact_at_four_and_sound_at_five() {
    let general = lowbit_general();
    let inf = infer_precondition(&general, w(4), &[w(5)]).unwrap();
    let pre = inf.pre.as_ref().expect("a conditional rule needs a formula");

    assert!(inf.report.exact_at_train);
    assert!(inf.report.sound_at_all_tested);
    assert!(inf.report.reverified);
    assert!(!inf.report.fallback);
    assert_eq!(inf.report.train_width, w(4));
    assert_eq!(inf.report.quality.len(), 2);

    // Independent check at the training width: the satisfying set is
    // exactly the ground truth.
    let truth4 = lowbit_truth_w4();
    for c1 in 0..16u64 {
        for c2 in 0..16u64 {
            assert_eq!(
                satisfies(&general, pre, &[c1, c2], w(4)),
                truth4.contains(&vec![c1, c2]),
                "({c1}, {c2}) at width 4"
            );
        }
    }

    // Independent check at the test width: sound (never admits an invalid
    // tuple), including the tuples that were valid at 4 but are not at 5.
    let valid5 = enumerate_valid_set(&general, w(5)).unwrap();
    for c1 in 0..32u64 {
        for c2 in 0..32u64 {
            if satisfies(&general, pre, &[c1, c2], w(5)) {
                assert!(valid5.contains(&[c1, c2]), "({c1}, {c2}) at width 5");
            }
        }
    }
    assert!(!satisfies(&general, pre, &[4, 1], w(5)));
    assert!(!satisfies(&general, pre, &[3, 3], w(5)));
}

#[test]
fn constant_free_rules_need_no_precondition() {
    let inf = infer_precondition(&seed_rule("demorgan-and"), w(4), &[w(5), w(8)]).unwrap();
    assert!(inf.pre.is_none());
    assert!(inf.report.exact_at_train);
    assert!(inf.report.weakest_at_all_tested);
    assert!(inf.report.reverified);
    assert!(!inf.report.fallback);
}

#[test]
fn all_ones_prefers_the_width_portable_spelling() {
    // De Morgan abstracted: valid only when C1 is all-ones, which is 15 at
    // width 4 but 31 at width 5. Only the -1 spelling survives the
    // cross-width check, and it is weakest at every width.
    let g = abstract_constants(&seed_rule("demorgan-and")).unwrap();
    let inf = infer_precondition(&g.rule, w(4), &[w(5)]).unwrap();
    assert_eq!(inf.pre.unwrap().to_string(), "C1 == -1");
    assert!(inf.report.exact_at_train);
    assert!(inf.report.weakest_at_all_tested);
    assert!(!inf.report.fallback);
}

#[test]
fn singleton_valid_sets_become_equalities() {
    let r = rule("name: or-id\n%r = or %x, C1\n=>\n%r = %x\n");
    let inf = infer_precondition(&r, w(4), &[w(5)]).unwrap();
    assert_eq!(inf.pre.unwrap().to_string(), "C1 == 0");
    assert!(inf.report.weakest_at_all_tested);
    assert!(!inf.report.fallback);
}

#[test]
fn parity_conditions_fall_back_to_a_sound_conjunction() {
    // Valid exactly when C1 is odd — a set the grammar cannot express with
    // three disjuncts. The result must be a sound under-approximation and
    // the report must say so.
    let r = rule(
        "name: mask-low\n\
         %a = and %x, C1\n\
         %r = and %a, 1\n\
         =>\n\
         %r = and %x, 1\n",
    );
    let inf = infer_precondition(&r, w(4), &[w(5)]).unwrap();
    let pre = inf.pre.as_ref().unwrap();
    assert!(inf.report.fallback);
    assert!(!inf.report.exact_at_train);
    assert!(inf.report.sound_at_all_tested);
    assert!(inf.report.reverified);

    let mut admitted = 0;
    for c1 in 0..16u64 {
        if satisfies(&r, pre, &[c1], w(4)) {
            assert_eq!(c1 & 1, 1, "admitted even constant {c1}");
            admitted += 1;
        }
    }
    assert!(admitted >= 1);
}

#[test]
fn never_valid_rules_get_a_contradiction() {
    let r = rule("name: and-as-or\n%r = and %x, C1\n=>\n%r = or %x, C1\n");
    let inf = infer_precondition(&r, w(4), &[w(5)]).unwrap();
    assert_eq!(inf.pre.unwrap().to_string(), "C1 ult 0");
    assert!(inf.report.exact_at_train);
    assert!(inf.report.sound_at_all_tested);
    assert!(inf.report.reverified);
    assert!(!inf.report.fallback);
}

#[test]
fn width_dependent_rules_without_symbols_are_rejected() {
    // Folding shl 3 + shl 1 into shl 4 is fine at width 5 but poisons the
    // replacement at width 4; with no symbolic constants there is nothing
    // a precondition could exclude.
    let r = rule(
        "name: shl-fuse\n\
         %a = shl %x, 3\n\
         %b = shl %a, 1\n\
         =>\n\
         %b = shl %x, 4\n",
    );
    let err = infer_precondition(&r, w(5), &[w(4)]).unwrap_err();
    assert!(matches!(err, GeneralizeError::NoSymbols(x) if x == w(4)));
}

#[test]
fn budget_errors_surface_before_search() {
    let err = infer_precondition(&lowbit_general(), w(4), &[w(11)]).unwrap_err();
    assert!(matches!(err, GeneralizeError::Budget { bits: 22, .. }));
}

// -------------------------------------------------------------------------
// Specialization.

#[test]
fn specializing_the_seed_rule_at_width_32() {
    let binding = BTreeMap::from([("C1".to_string(), 31), ("C2".to_string(), 31)]);
    let concrete = specialize(&seed_rule("low-bit-flip"), &binding, w(32)).unwrap();
    assert_eq!(
        print_rule(&concrete),
        "name: low-bit-flip\n\
         %s = shl i32 %x, 31\n\
         %t = ashr i32 %s, 31\n\
         %r = add i32 %t, 1\n\
         =>\n\
         %n = xor i32 %x, -1\n\
         %r = and i32 %n, 1\n"
    );
}

#[test]
fn specialized_rules_verify_at_their_width() {
    let binding = BTreeMap::from([("C1".to_string(), 7), ("C2".to_string(), 7)]);
    let concrete = specialize(&seed_rule("low-bit-flip"), &binding, w(8)).unwrap();
    let verdict = verify_rule(&concrete, &[w(8)], &Backend::Exhaustive).unwrap();
    assert_eq!(verdict, Verdict::Valid);
}

#[test]
fn bindings_violating_the_precondition_are_refused() {
    let binding = BTreeMap::from([("C1".to_string(), 30), ("C2".to_string(), 30)]);
    let err = specialize(&seed_rule("low-bit-flip"), &binding, w(32)).unwrap_err();
    match err {
        GeneralizeError::PreconditionViolated(shown) => {
            assert_eq!(shown, "C1 = 30, C2 = 30");
        }
        other => panic!("expected precondition violation, got {other}"),
    }
}

#[test]
fn unbound_and_oversized_bindings_are_rejected() {
    let partial = BTreeMap::from([("C1".to_string(), 31)]);
    let err = specialize(&seed_rule("low-bit-flip"), &partial, w(32)).unwrap_err();
    assert!(matches!(err, GeneralizeError::UnboundSymbol(s) if s == "C2"));

    let oversized = BTreeMap::from([("C1".to_string(), 99), ("C2".to_string(), 99)]);
    let err = specialize(&seed_rule("low-bit-flip"), &oversized, w(4)).unwrap_err();
    assert!(matches!(
        err,
        GeneralizeError::OutOfRange { symbol, value: 99, .. } if symbol == "C1"
    ));
}

#[test]
fn icmp_instructions_annotate_operand_width() {
    let r = rule(
        "name: cmp-rewrite\n\
         %c = icmp ult %x, C1\n\
         =>\n\
         %c = icmp ne %x, %x\n",
    );
    let binding = BTreeMap::from([("C1".to_string(), 0)]);
    let concrete = specialize(&r, &binding, w(8)).unwrap();
    assert_eq!(
        print_rule(&concrete),
        "name: cmp-rewrite\n\
         %c = icmp ult i8 %x, 0\n\
         =>\n\
         %c = icmp ne i8 %x, %x\n"
    );
}

#[test]
fn abstract_then_specialize_round_trips() {
    let original = rule(LOWBIT_I32);
    let g = abstract_constants(&original).unwrap();
    let binding: BTreeMap<String, u64> = g
        .binding
        .iter()
        .map(|(k, &v)| (k.clone(), v as u64))
        .collect();
    let back = specialize(&g.rule, &binding, w(32)).unwrap();
    assert_eq!(print_rule(&back), print_rule(&original));
}
