//! A rule-at-a-time recursive matcher, implemented separately from the
//! automaton so the two can be checked against each other. No compiled
//! patterns, no state tables: each rule's pattern is walked directly
//! against the subject. The matching convention is identical — commutative
//! operands try both orders except when the pattern operands are
//! indistinguishable once variables and annotations are erased — so on any
//! input the two matchers must produce exactly the same candidates.

use std::collections::{BTreeMap, HashMap};

use crate::ir::{Constant, Function, Operand, Width};
use crate::rules::{eval_precondition, Binding, RInst, ROperand, Rule, WidthInfo};

use super::Candidate;

/// All candidates rooted at `f.body[index]`, in rule order then discovery
/// order — the oracle twin of `Matcher::match_at`.
pub fn naive_match_at(rules: &[Rule], f: &Function, index: usize) -> Vec<Candidate> {
    assert!(index < f.body.len(), "naive_match_at index out of range");
    let mut out = Vec::new();
    for (ri, rule) in rules.iter().enumerate() {
        let info = rule.width_info();
        let def: HashMap<&str, usize> = rule
            .lhs
            .iter()
            .enumerate()
            .map(|(k, inst)| (inst.result.as_str(), k))
            .collect();

        let mut found = Vec::new();
        try_inst(
            rule,
            &info,
            &def,
            f,
            rule.lhs.len() - 1,
            index,
            State::default(),
            &mut found,
        );

        for state in found {
            let Some(width) = decide_width(&info, &state.seen) else {
                continue;
            };
            let width = width.unwrap_or_else(|| f.body[index].result_width());
            let binding = Binding {
                width,
                values: state.values,
                syms: state.syms,
            };
            if let Some(pre) = &rule.pre {
                let widths = rule.var_widths(width);
                if !matches!(eval_precondition(pre, &binding.syms, &widths), Ok(true)) {
                    continue;
                }
            }
            let cand = Candidate {
                rule_index: ri,
                root: index,
                binding,
            };
            if !out.contains(&cand) {
                out.push(cand);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
struct State {
    values: BTreeMap<String, Operand>,
    syms: BTreeMap<String, Constant>,
    /// Width-class observations: (slot, width the subject showed there).
    seen: Vec<(u32, Width)>,
}

/// Checks the width observations against the rule's classes: pinned
/// classes must match their pin, unpinned ones must agree on one width.
/// `Some(None)` means consistent with no polymorphic class observed.
fn decide_width(info: &WidthInfo, seen: &[(u32, Width)]) -> Option<Option<Width>> {
    let mut poly = None;
    for &(slot, w) in seen {
        if let Some(pinned) = info.fixed_of(slot) {
            if pinned != w {
                return None;
            }
        } else if let Some(prev) = poly {
            if prev != w {
                return None;
            }
        } else {
            poly = Some(w);
        }
    }
    Some(poly)
}

/// Tries to match pattern instruction `pk` against subject instruction
/// `si`, appending every completed extension of `state` to `found`.
#[allow(clippy::too_many_arguments)]
fn try_inst(
    rule: &Rule,
    info: &WidthInfo,
    def: &HashMap<&str, usize>,
    f: &Function,
    pk: usize,
    si: usize,
    state: State,
    found: &mut Vec<State>,
) {
    let p = &rule.lhs[pk];
    let s = &f.body[si];
    if s.opcode != p.opcode || !s.flags.contains(p.flags) {
        return;
    }
    let mut state = state;
    match state.values.get(&p.result) {
        Some(Operand::Value(n)) if n == &s.result => {
            // This shared subpattern already matched this instruction.
            found.push(state);
            return;
        }
        Some(_) => return,
        None => {
            state
                .values
                .insert(p.result.clone(), Operand::Value(s.result.clone()));
        }
    }
    let slots = &info.inst_slots[pk];
    state.seen.push((slots.result, s.result_width()));

    let both_orders = p.opcode.is_commutative()
        && p.operands.len() == 2
        && (!erased_eq_operand(rule, def, &p.operands[0], &p.operands[1])
            || touches_binding(rule, def, &p.operands[0], &state)
            || touches_binding(rule, def, &p.operands[1], &state));

    let subject_orders: Vec<Vec<usize>> = if both_orders {
        vec![vec![0, 1], vec![1, 0]]
    } else {
        vec![(0..p.operands.len()).collect()]
    };
    for order in subject_orders {
        let slots_then_ops: Vec<(u32, &ROperand, &Operand)> = order
            .iter()
            .enumerate()
            .map(|(j, &sj)| (slots.operands[j], &p.operands[j], &s.operands[sj]))
            .collect();
        try_slots(rule, info, def, f, &slots_then_ops, state.clone(), found);
    }
}

/// Matches the remaining operand positions left to right, recursing so
/// that alternatives in later positions vary fastest.
fn try_slots(
    rule: &Rule,
    info: &WidthInfo,
    def: &HashMap<&str, usize>,
    f: &Function,
    rest: &[(u32, &ROperand, &Operand)],
    state: State,
    found: &mut Vec<State>,
) {
    let Some(&(slot, po, so)) = rest.first() else {
        found.push(state);
        return;
    };
    let mut state = state;
    state.seen.push((
        slot,
        match so {
            Operand::Const(c) => c.width,
            Operand::Value(n) => f.value_width(n).expect("subject operand is defined"),
        },
    ));
    match po {
        ROperand::Literal(l) => {
            if matches!(so, Operand::Const(c) if Constant::new(*l, c.width) == Some(*c)) {
                try_slots(rule, info, def, f, &rest[1..], state, found);
            }
        }
        ROperand::Sym(name) => {
            let Operand::Const(c) = so else { return };
            match state.syms.get(name) {
                Some(prev) if prev != c => return,
                Some(_) => {}
                None => {
                    state.syms.insert(name.clone(), *c);
                }
            }
            try_slots(rule, info, def, f, &rest[1..], state, found);
        }
        ROperand::Value(v) => {
            if let Some(&pk2) = def.get(v.as_str()) {
                let Operand::Value(n) = so else { return };
                let Some(d) = f.def_index(n) else { return };
                let mut inner = Vec::new();
                try_inst(rule, info, def, f, pk2, d, state, &mut inner);
                for st in inner {
                    try_slots(rule, info, def, f, &rest[1..], st, found);
                }
            } else {
                match state.values.get(v) {
                    Some(prev) if prev != so => return,
                    Some(_) => {}
                    None => {
                        state.values.insert(v.clone(), so.clone());
                    }
                }
                try_slots(rule, info, def, f, &rest[1..], state, found);
            }
        }
    }
}

/// Structural equality of two pattern operands after erasing variable
/// identity, symbolic-constant names, and width annotations — the
/// convention deciding whether a commutative swap could find anything new.
fn erased_eq_operand(
    rule: &Rule,
    def: &HashMap<&str, usize>,
    a: &ROperand,
    b: &ROperand,
) -> bool {
    match (a, b) {
        (ROperand::Literal(x), ROperand::Literal(y)) => x == y,
        (ROperand::Sym(_), ROperand::Sym(_)) => true,
        (ROperand::Value(x), ROperand::Value(y)) => {
            match (def.get(x.as_str()), def.get(y.as_str())) {
                (None, None) => true,
                (Some(&ix), Some(&iy)) => erased_eq_inst(rule, def, ix, iy),
                _ => false,
            }
        }
        _ => false,
    }
}

fn erased_eq_inst(rule: &Rule, def: &HashMap<&str, usize>, ix: usize, iy: usize) -> bool {
    if ix == iy {
        return true;
    }
    let a: &RInst = &rule.lhs[ix];
    let b: &RInst = &rule.lhs[iy];
    a.opcode == b.opcode
        && a.flags == b.flags
        && a.operands.len() == b.operands.len()
        && a.operands
            .iter()
            .zip(&b.operands)
            .all(|(x, y)| erased_eq_operand(rule, def, x, y))
}

/// Whether the pattern subtree at `po` mentions a variable or symbolic
/// constant that `state` has already bound. A bound variable breaks the
/// mirror symmetry of erased-equal operands, so both orders must be tried.
fn touches_binding(rule: &Rule, def: &HashMap<&str, usize>, po: &ROperand, state: &State) -> bool {
    match po {
        ROperand::Literal(_) => false,
        ROperand::Sym(name) => state.syms.contains_key(name),
        ROperand::Value(v) => {
            if state.values.contains_key(v) {
                return true;
            }
            match def.get(v.as_str()) {
                Some(&pk) => rule.lhs[pk]
                    .operands
                    .iter()
                    .any(|inner| touches_binding(rule, def, inner, state)),
                None => false,
            }
        }
    }
}
