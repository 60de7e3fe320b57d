//! The rule-application engine: a rule set is compiled once into a
//! bottom-up match-set automaton, and functions are scanned against it with
//! per-instruction work that depends on the pattern alphabet rather than on
//! how many rules are loaded.
//!
//! Matching is split into two layers with different obligations:
//!
//! * The **automaton** works on *erased* patterns — variable identities,
//!   symbolic-constant names, and width annotations are dropped, leaving
//!   opcode/flag/shape skeletons that are hash-consed across the whole rule
//!   set. Each instruction is assigned a state (the set of erased pattern
//!   nodes it completes) via one memoized transition lookup. States
//!   over-approximate: they never miss a real match but may admit shapes a
//!   full match would reject.
//! * The **binding walk** runs only where the automaton reports a completed
//!   rule root. It re-checks structure exactly, enforces repeated-variable
//!   consistency, binds symbolic constants, solves the rule's width classes
//!   against the subject, and evaluates the precondition. Everything the
//!   erasure dropped is decided here.
//!
//! Commutative opcodes are matched under both operand orders. The walk
//! skips the swapped order when the two pattern operands are
//! indistinguishable after erasure *and* no variable of either operand
//! subtree is bound yet — in that case the swapped order can only produce
//! mirror images of the original order's solutions, so symmetric patterns
//! yield one candidate instead of two. An outer binding (a repeated
//! variable reaching into one subtree) breaks that symmetry, and both
//! orders are tried. `naive` implements the same convention independently
//! and serves as the correctness oracle.

mod naive;
#[cfg(test)]
mod tests;

pub use naive::naive_match_at;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::Serialize;

use crate::ir::{
    dce, print_function, Constant, Flags, Function, Instruction, IrError, Opcode, Operand, Width,
};
use crate::rules::{eval_precondition, instantiate_rhs, Binding, ROperand, Rule, WidthInfo};

/// Index into the hash-consed pattern node table.
type PatId = u32;
/// Index into the distinct-literal table.
type LitId = u32;
/// Index into the interned state table.
type StateId = u32;

/// State id every plain value (parameter or unmatched instruction) gets.
const EMPTY_STATE: StateId = 0;

/// One operand position of an erased pattern node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum PatChild {
    /// A pattern variable: matches any operand.
    Any,
    /// A symbolic constant: matches any constant operand.
    AnyConst,
    /// A literal: matches constants whose bits equal the literal at the
    /// operand's width.
    Lit(LitId),
    /// A nested pattern instruction.
    Node(PatId),
}

/// An erased pattern instruction. Width annotations and variable names are
/// gone; flags are the *required* set (subjects may carry more).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct PatNode {
    opcode: Opcode,
    flags: Flags,
    children: Vec<PatChild>,
}

/// What a transition-table child can be: the interned content of a value
/// (pattern nodes completed) or of a constant (literals satisfied).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum StateKey {
    Value(Vec<PatId>),
    Const(Vec<LitId>),
}

#[derive(Debug)]
struct StateData {
    key: StateKey,
    /// Rules whose root pattern is completed in this state, ascending.
    rule_roots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct TransKey {
    opcode: Opcode,
    flags: Flags,
    children: Vec<StateId>,
}

/// Lazily grown tables: interned states, memoized instruction transitions,
/// and memoized constant classifications.
#[derive(Default)]
struct Tables {
    states: Vec<StateData>,
    state_ids: HashMap<StateKey, StateId>,
    trans: HashMap<TransKey, StateId>,
    consts: HashMap<(u64, Width), StateId>,
}

/// A compiled rule set. Immutable after `compile_rules` and shareable
/// across threads; the transition memo grows on demand under a lock.
pub struct Matcher {
    rules: Vec<Rule>,
    /// Width-class analysis per rule, reused by every binding walk.
    infos: Vec<WidthInfo>,
    /// Hash-consed erased pattern nodes, shared across rules.
    nodes: Vec<PatNode>,
    /// Distinct literal values appearing in any pattern.
    lits: Vec<i128>,
    /// Pattern nodes by opcode, for transition computation.
    by_opcode: HashMap<Opcode, Vec<PatId>>,
    /// Erased node of each rule's pattern instruction, parallel to its lhs.
    rule_pats: Vec<Vec<PatId>>,
    /// Rules completed by a given root pattern node, ascending.
    roots_of: HashMap<PatId, Vec<usize>>,
    tables: RwLock<Tables>,
    lookups: AtomicU64,
}

/// A rule instance ready to fire: which rule, where, and how its variables
/// and symbolic constants are bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Index into the rule list the matcher (or oracle) was built from.
    pub rule_index: usize,
    /// Body index of the instruction the rule root matched.
    pub root: usize,
    pub binding: Binding,
}

/// One fired rewrite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Step {
    pub rule: String,
    /// Name of the value that was rewritten.
    pub root: String,
}

impl std::fmt::Display for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "fire {} @%{}", self.rule, self.root)
    }
}

/// Why greedy rewriting stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stop {
    /// No rule matches anywhere.
    Quiesced,
    /// The fire budget ran out with candidates still pending.
    BudgetExhausted,
    /// The function text recurred: the rule set loops on this input.
    Cycle,
}

impl std::fmt::Display for Stop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stop::Quiesced => "quiesced",
            Stop::BudgetExhausted => "budget exhausted",
            Stop::Cycle => "cycle detected",
        })
    }
}

/// Record of a greedy rewrite run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Trace {
    pub steps: Vec<Step>,
    pub stopped: Stop,
}

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("duplicate rule name `{0}`")]
    DuplicateRule(String),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Compiles a rule list into a matcher. Rules are taken as given —
/// verification is a separate, advisory concern — but names must be unique
/// so traces and reports are unambiguous.
pub fn compile_rules(rules: &[Rule]) -> Result<Matcher, MatchError> {
    let mut names = BTreeSet::new();
    for rule in rules {
        if !names.insert(rule.name.as_str()) {
            return Err(MatchError::DuplicateRule(rule.name.clone()));
        }
    }

    let mut nodes: Vec<PatNode> = Vec::new();
    let mut node_ids: HashMap<PatNode, PatId> = HashMap::new();
    let mut lits: Vec<i128> = Vec::new();
    let mut lit_ids: HashMap<i128, LitId> = HashMap::new();
    let mut rule_pats: Vec<Vec<PatId>> = Vec::with_capacity(rules.len());

    for rule in rules {
        let mut pid_of: BTreeMap<&str, PatId> = BTreeMap::new();
        let mut pats = Vec::with_capacity(rule.lhs.len());
        for inst in &rule.lhs {
            let children = inst
                .operands
                .iter()
                .map(|op| match op {
                    ROperand::Value(v) => match pid_of.get(v.as_str()) {
                        Some(&pid) => PatChild::Node(pid),
                        None => PatChild::Any,
                    },
                    ROperand::Sym(_) => PatChild::AnyConst,
                    ROperand::Literal(l) => {
                        let lid = *lit_ids.entry(*l).or_insert_with(|| {
                            lits.push(*l);
                            (lits.len() - 1) as LitId
                        });
                        PatChild::Lit(lid)
                    }
                })
                .collect();
            let node = PatNode {
                opcode: inst.opcode,
                flags: inst.flags,
                children,
            };
            let pid = *node_ids.entry(node.clone()).or_insert_with(|| {
                nodes.push(node);
                (nodes.len() - 1) as PatId
            });
            pid_of.insert(&inst.result, pid);
            pats.push(pid);
        }
        rule_pats.push(pats);
    }

    let mut by_opcode: HashMap<Opcode, Vec<PatId>> = HashMap::new();
    for (pid, node) in nodes.iter().enumerate() {
        by_opcode.entry(node.opcode).or_default().push(pid as PatId);
    }
    let mut roots_of: HashMap<PatId, Vec<usize>> = HashMap::new();
    for (ri, pats) in rule_pats.iter().enumerate() {
        let root = *pats.last().expect("rules have a nonempty pattern");
        roots_of.entry(root).or_default().push(ri);
    }

    let mut tables = Tables::default();
    tables.states.push(StateData {
        key: StateKey::Value(Vec::new()),
        rule_roots: Vec::new(),
    });
    tables.state_ids.insert(StateKey::Value(Vec::new()), EMPTY_STATE);

    Ok(Matcher {
        infos: rules.iter().map(Rule::width_info).collect(),
        rules: rules.to_vec(),
        nodes,
        lits,
        by_opcode,
        rule_pats,
        roots_of,
        tables: RwLock::new(tables),
        lookups: AtomicU64::new(0),
    })
}

impl Matcher {
    /// The rule list this matcher was compiled from, in compile order.
    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Memoized-transition probes so far. One probe classifies one
    /// instruction during a scan, so the count tracks scan work and stays
    /// flat as the rule count grows.
    pub fn transition_lookups(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    /// Resets the probe counter (for before/after measurements).
    pub fn reset_transition_lookups(&self) {
        self.lookups.store(0, Ordering::Relaxed);
    }

    /// All candidates rooted at `index`, in rule order then binding
    /// (discovery) order. Bindings satisfy repeated-variable consistency,
    /// width discipline, and the rule's precondition.
    pub fn match_at(&self, f: &Function, index: usize) -> Vec<Candidate> {
        assert!(index < f.body.len(), "match_at index out of range");
        let states = self.scan(f, index);
        self.candidates_at(f, index, states[index])
    }

    /// Candidates at every instruction, ascending by root index then rule
    /// order — the union of `match_at` over the whole body.
    pub fn match_function(&self, f: &Function) -> Vec<Candidate> {
        let Some(last) = f.body.len().checked_sub(1) else {
            return Vec::new();
        };
        let states = self.scan(f, last);
        let mut out = Vec::new();
        for (i, &sid) in states.iter().enumerate() {
            out.extend(self.candidates_at(f, i, sid));
        }
        out
    }

    /// Fires the first candidate in ascending-index order, cleans up dead
    /// code, and repeats; stops when no rule matches, when `budget` fires
    /// have happened (default `4 × |body|`), or when a previously seen
    /// function recurs. The trace records each fire and why the loop ended.
    pub fn rewrite_greedy(
        &self,
        f: &Function,
        budget: Option<usize>,
    ) -> Result<(Function, Trace), MatchError> {
        let budget = budget.unwrap_or(4 * f.body.len());
        let mut cur = f.clone();
        let mut steps = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        seen.insert(print_function(&cur));
        // Instructions before the first index a rewrite changed are
        // byte-identical and match exactly what they matched before, so
        // each pass resumes there instead of at the top.
        let mut start = 0usize;

        let stopped = loop {
            let first = self.first_candidate(&cur, start);
            let Some(cand) = first else {
                break Stop::Quiesced;
            };
            if steps.len() >= budget {
                break Stop::BudgetExhausted;
            }
            let root_name = cur.body[cand.root].result.clone();
            let next = apply_candidate(&self.rules[cand.rule_index], &cur, &cand)?;
            steps.push(Step {
                rule: self.rules[cand.rule_index].name.clone(),
                root: root_name,
            });
            start = first_difference(&cur, &next);
            let text = print_function(&next);
            cur = next;
            if !seen.insert(text) {
                break Stop::Cycle;
            }
        };
        Ok((cur, Trace { steps, stopped }))
    }

    /// First candidate rooted at or after `start`, scanning ascending.
    fn first_candidate(&self, f: &Function, start: usize) -> Option<Candidate> {
        let Some(last) = f.body.len().checked_sub(1) else {
            return None;
        };
        if start > last {
            return None;
        }
        let states = self.scan(f, last);
        for i in start..=last {
            let mut found = self.candidates_at(f, i, states[i]);
            if !found.is_empty() {
                return Some(found.remove(0));
            }
        }
        None
    }

    fn candidates_at(&self, f: &Function, index: usize, sid: StateId) -> Vec<Candidate> {
        let rule_idxs = {
            let t = self.tables.read().expect("matcher tables poisoned");
            t.states[sid as usize].rule_roots.clone()
        };
        let mut out = Vec::new();
        for ri in rule_idxs {
            out.extend(self.walk_rule(ri, f, index));
        }
        out
    }

    // ------------------------------------------------------------------
    // Automaton: assign each instruction an interned set of completed
    // pattern nodes via one memoized transition per instruction.

    /// States of `f.body[0..=upto]`, in order.
    fn scan(&self, f: &Function, upto: usize) -> Vec<StateId> {
        let mut by_name: HashMap<&str, StateId> = HashMap::new();
        let mut states = Vec::with_capacity(upto + 1);
        for inst in &f.body[..=upto] {
            let children: Vec<StateId> = inst
                .operands
                .iter()
                .map(|op| match op {
                    Operand::Value(n) => by_name.get(n.as_str()).copied().unwrap_or(EMPTY_STATE),
                    Operand::Const(c) => self.const_state(*c),
                })
                .collect();
            let sid = self.transition(inst.opcode, inst.flags, children);
            by_name.insert(&inst.result, sid);
            states.push(sid);
        }
        states
    }

    /// The state completed by an instruction with these children. One
    /// counted probe; misses compute the completion set and intern it.
    fn transition(&self, opcode: Opcode, flags: Flags, children: Vec<StateId>) -> StateId {
        let mut key_children = children;
        if opcode.is_commutative() && key_children.len() == 2 && key_children[0] > key_children[1]
        {
            key_children.swap(0, 1);
        }
        let key = TransKey {
            opcode,
            flags,
            children: key_children,
        };
        self.lookups.fetch_add(1, Ordering::Relaxed);
        {
            let t = self.tables.read().expect("matcher tables poisoned");
            if let Some(&sid) = t.trans.get(&key) {
                return sid;
            }
        }
        let mut t = self.tables.write().expect("matcher tables poisoned");
        if let Some(&sid) = t.trans.get(&key) {
            return sid;
        }
        let mut completed: Vec<PatId> = Vec::new();
        if let Some(pids) = self.by_opcode.get(&opcode) {
            for &pid in pids {
                if self.node_completes(&t, pid, flags, &key.children) {
                    completed.push(pid);
                }
            }
        }
        completed.sort_unstable();
        let sid = intern_state(&mut t, StateKey::Value(completed), &self.roots_of);
        t.trans.insert(key, sid);
        sid
    }

    /// Whether pattern node `pid` completes at a subject with these flags
    /// and child states. Commutative opcodes accept either child order —
    /// over-approximation is fine here, the walk decides exactly.
    fn node_completes(&self, t: &Tables, pid: PatId, flags: Flags, children: &[StateId]) -> bool {
        let node = &self.nodes[pid as usize];
        if !flags.contains(node.flags) || node.children.len() != children.len() {
            return false;
        }
        let fits = |order: &[StateId]| {
            node.children
                .iter()
                .zip(order)
                .all(|(pc, &sid)| child_fits(*pc, &t.states[sid as usize].key))
        };
        if fits(children) {
            return true;
        }
        if node.opcode.is_commutative() && children.len() == 2 {
            return fits(&[children[1], children[0]]);
        }
        false
    }

    /// The classification state of a constant operand: which pattern
    /// literals it satisfies at its width.
    fn const_state(&self, c: Constant) -> StateId {
        let memo_key = (c.bits, c.width);
        {
            let t = self.tables.read().expect("matcher tables poisoned");
            if let Some(&sid) = t.consts.get(&memo_key) {
                return sid;
            }
        }
        let mut satisfied: Vec<LitId> = Vec::new();
        for (lid, &lit) in self.lits.iter().enumerate() {
            if Constant::new(lit, c.width) == Some(c) {
                satisfied.push(lid as LitId);
            }
        }
        let mut t = self.tables.write().expect("matcher tables poisoned");
        if let Some(&sid) = t.consts.get(&memo_key) {
            return sid;
        }
        let sid = intern_state(&mut t, StateKey::Const(satisfied), &self.roots_of);
        t.consts.insert(memo_key, sid);
        sid
    }

    // ------------------------------------------------------------------
    // Binding walk: exact matching where the automaton reported a root.

    /// All candidates for rule `ri` rooted at `f.body[root]`.
    fn walk_rule(&self, ri: usize, f: &Function, root: usize) -> Vec<Candidate> {
        let rule = &self.rules[ri];
        let info = &self.infos[ri];
        let def: HashMap<&str, usize> = rule
            .lhs
            .iter()
            .enumerate()
            .map(|(k, inst)| (inst.result.as_str(), k))
            .collect();
        let walker = Walker {
            rule,
            info,
            pats: &self.rule_pats[ri],
            nodes: &self.nodes,
            def,
            f,
        };
        let solutions = walker.walk_inst(rule.lhs.len() - 1, root, Partial::default());

        let mut out: Vec<Candidate> = Vec::new();
        for partial in solutions {
            let Some(width) = solve_width(info, &partial.pairs, f, root) else {
                continue;
            };
            let binding = Binding {
                width,
                values: partial.values,
                syms: partial.syms,
            };
            if let Some(pre) = &rule.pre {
                let widths = rule.var_widths(width);
                if !matches!(eval_precondition(pre, &binding.syms, &widths), Ok(true)) {
                    continue;
                }
            }
            let cand = Candidate {
                rule_index: ri,
                root,
                binding,
            };
            if !out.contains(&cand) {
                out.push(cand);
            }
        }
        out
    }
}

/// Does a child state satisfy an erased pattern operand?
fn child_fits(pc: PatChild, key: &StateKey) -> bool {
    match (pc, key) {
        (PatChild::Any, _) => true,
        (PatChild::AnyConst, StateKey::Const(_)) => true,
        (PatChild::Lit(l), StateKey::Const(ls)) => ls.binary_search(&l).is_ok(),
        (PatChild::Node(p), StateKey::Value(ps)) => ps.binary_search(&p).is_ok(),
        _ => false,
    }
}

/// Interns a state key, computing the completed-rule-roots summary on
/// first sight.
fn intern_state(
    t: &mut Tables,
    key: StateKey,
    roots_of: &HashMap<PatId, Vec<usize>>,
) -> StateId {
    if let Some(&sid) = t.state_ids.get(&key) {
        return sid;
    }
    let rule_roots = match &key {
        StateKey::Value(pids) => {
            let mut rs: BTreeSet<usize> = BTreeSet::new();
            for pid in pids {
                if let Some(rules) = roots_of.get(pid) {
                    rs.extend(rules);
                }
            }
            rs.into_iter().collect()
        }
        StateKey::Const(_) => Vec::new(),
    };
    let sid = t.states.len() as StateId;
    t.states.push(StateData {
        key: key.clone(),
        rule_roots,
    });
    t.state_ids.insert(key, sid);
    sid
}

/// In-progress bindings plus the width constraints seen so far, as
/// (width-class slot, subject width) pairs.
#[derive(Debug, Clone, Default)]
struct Partial {
    values: BTreeMap<String, Operand>,
    syms: BTreeMap<String, Constant>,
    pairs: Vec<(u32, Width)>,
}

struct Walker<'a> {
    rule: &'a Rule,
    info: &'a WidthInfo,
    /// Erased node per pattern instruction (for symmetric-operand checks).
    pats: &'a [PatId],
    nodes: &'a [PatNode],
    def: HashMap<&'a str, usize>,
    f: &'a Function,
}

impl<'a> Walker<'a> {
    /// All ways pattern instruction `pk` can match subject instruction
    /// `si`, extending `partial`. Depth-first, operand positions left to
    /// right, original operand order before swapped.
    fn walk_inst(&self, pk: usize, si: usize, partial: Partial) -> Vec<Partial> {
        let p = &self.rule.lhs[pk];
        let s = &self.f.body[si];
        if s.opcode != p.opcode || !s.flags.contains(p.flags) {
            return Vec::new();
        }
        let mut partial = partial;
        match partial.values.get(&p.result) {
            // Shared subpattern already matched here: nothing new to do.
            Some(Operand::Value(n)) if n == &s.result => return vec![partial],
            Some(_) => return Vec::new(),
            None => {
                partial
                    .values
                    .insert(p.result.clone(), Operand::Value(s.result.clone()));
            }
        }
        let slots = &self.info.inst_slots[pk];
        partial.pairs.push((slots.result, s.result_width()));

        let swap = p.opcode.is_commutative()
            && p.operands.len() == 2
            && (!self.erased_equal(pk, 0, 1)
                || self.touches(&p.operands[0], &partial)
                || self.touches(&p.operands[1], &partial));
        let orders: &[[usize; 2]] = if swap { &[[0, 1], [1, 0]] } else { &[[0, 1]] };

        let mut out = Vec::new();
        if p.operands.len() == 2 {
            for order in orders {
                let mut states = vec![partial.clone()];
                for (j, &sj) in order.iter().enumerate() {
                    let mut next = Vec::new();
                    for st in states {
                        next.extend(self.match_slot(
                            st,
                            slots.operands[j],
                            &p.operands[j],
                            &s.operands[sj],
                        ));
                    }
                    states = next;
                    if states.is_empty() {
                        break;
                    }
                }
                out.extend(states);
            }
        } else {
            let mut states = vec![partial];
            for (j, po) in p.operands.iter().enumerate() {
                let mut next = Vec::new();
                for st in states {
                    next.extend(self.match_slot(st, slots.operands[j], po, &s.operands[j]));
                }
                states = next;
                if states.is_empty() {
                    break;
                }
            }
            out.extend(states);
        }
        out
    }

    /// Matches one pattern operand against one subject operand.
    fn match_slot(
        &self,
        mut st: Partial,
        slot: u32,
        po: &ROperand,
        so: &Operand,
    ) -> Vec<Partial> {
        st.pairs.push((slot, self.operand_width(so)));
        match po {
            ROperand::Literal(l) => match so {
                Operand::Const(c) if Constant::new(*l, c.width) == Some(*c) => vec![st],
                _ => Vec::new(),
            },
            ROperand::Sym(name) => match so {
                Operand::Const(c) => match st.syms.get(name) {
                    Some(prev) if prev == c => vec![st],
                    Some(_) => Vec::new(),
                    None => {
                        st.syms.insert(name.clone(), *c);
                        vec![st]
                    }
                },
                _ => Vec::new(),
            },
            ROperand::Value(v) => {
                if let Some(&pk2) = self.def.get(v.as_str()) {
                    // Interior pattern node: the subject operand must be an
                    // instruction result, matched recursively.
                    let Operand::Value(n) = so else {
                        return Vec::new();
                    };
                    let Some(d) = self.f.def_index(n) else {
                        return Vec::new();
                    };
                    self.walk_inst(pk2, d, st)
                } else {
                    // Free variable: binds any operand, consistently.
                    match st.values.get(v) {
                        Some(prev) if prev == so => vec![st],
                        Some(_) => Vec::new(),
                        None => {
                            st.values.insert(v.clone(), so.clone());
                            vec![st]
                        }
                    }
                }
            }
        }
    }

    /// Whether two operand positions of pattern instruction `pk` are
    /// indistinguishable after erasure (hash-consing makes this an id
    /// comparison).
    fn erased_equal(&self, pk: usize, a: usize, b: usize) -> bool {
        let children = &self.nodes[self.pats[pk] as usize].children;
        children[a] == children[b]
    }

    /// Whether any variable or symbolic constant in the pattern subtree at
    /// `po` is already bound. If so, the two orders of an erased-equal
    /// operand pair are no longer interchangeable and both must be tried.
    fn touches(&self, po: &ROperand, partial: &Partial) -> bool {
        match po {
            ROperand::Literal(_) => false,
            ROperand::Sym(name) => partial.syms.contains_key(name),
            ROperand::Value(v) => {
                if partial.values.contains_key(v) {
                    return true;
                }
                match self.def.get(v.as_str()) {
                    Some(&pk2) => self.rule.lhs[pk2]
                        .operands
                        .iter()
                        .any(|inner| self.touches(inner, partial)),
                    None => false,
                }
            }
        }
    }

    /// Concrete width of a subject operand.
    fn operand_width(&self, so: &Operand) -> Width {
        match so {
            Operand::Const(c) => c.width,
            Operand::Value(n) => self
                .f
                .value_width(n)
                .expect("validated subject operands are defined"),
        }
    }
}

/// Solves the collected width constraints: annotation-pinned classes must
/// see their pinned width, and every polymorphic class must see one common
/// width, which becomes the instantiation width. Fully annotated rules
/// fall back to the subject root's width (the value is unused downstream).
fn solve_width(
    info: &WidthInfo,
    pairs: &[(u32, Width)],
    f: &Function,
    root: usize,
) -> Option<Width> {
    let mut poly: Option<Width> = None;
    for &(slot, w) in pairs {
        match info.fixed_of(slot) {
            Some(pinned) => {
                if pinned != w {
                    return None;
                }
            }
            None => match poly {
                Some(prev) if prev != w => return None,
                _ => poly = Some(w),
            },
        }
    }
    Some(poly.unwrap_or_else(|| f.body[root].result_width()))
}

/// Applies one candidate to a function: splices the instantiated
/// replacement over the root (or substitutes a forwarding operand), then
/// cleans up newly dead instructions. The result is structurally validated.
pub(crate) fn apply_candidate(
    rule: &Rule,
    f: &Function,
    cand: &Candidate,
) -> Result<Function, IrError> {
    let taken = |n: &str| f.is_param(n) || f.body.iter().any(|i| i.result == n);
    let inst = instantiate_rhs(rule, &cand.binding, &taken)?;
    debug_assert_eq!(f.body[cand.root].result, inst.root);

    let mut g = f.clone();
    if let Some(op) = &inst.root_alias {
        for bi in g.body.iter_mut() {
            for o in bi.operands.iter_mut() {
                if o.as_value() == Some(inst.root.as_str()) {
                    *o = op.clone();
                }
            }
        }
        match op {
            Operand::Value(v) => {
                for r in g.returns.iter_mut() {
                    if *r == inst.root {
                        *r = v.clone();
                    }
                }
            }
            Operand::Const(c) => {
                if g.returns.contains(&inst.root) {
                    // Returns name values, so a returned constant needs a
                    // defining instruction; `or c, 0` computes it.
                    g.body[cand.root] = Instruction {
                        result: inst.root.clone(),
                        opcode: Opcode::Or,
                        flags: Flags::NONE,
                        width: c.width,
                        operands: vec![
                            Operand::Const(*c),
                            Operand::Const(Constant::from_bits(0, c.width)),
                        ],
                    };
                }
            }
        }
    } else {
        g.body.splice(cand.root..cand.root + 1, inst.insts);
    }
    let (g, _) = dce(&g);
    g.validate()?;
    Ok(g)
}

/// Index of the first instruction where two bodies differ.
fn first_difference(a: &Function, b: &Function) -> usize {
    let shared = a.body.len().min(b.body.len());
    for i in 0..shared {
        if a.body[i] != b.body[i] {
            return i;
        }
    }
    shared
}
