//! Declarative rewrite rules: pattern DAGs over the IR with value variables,
//! symbolic constants, optional preconditions, and width polymorphism.
//!
//! A rule is written as two flat SSA instruction lists separated by `=>`.
//! The last left-hand instruction is the *root*: the value the rule promises
//! to compute more cheaply. The right-hand side redefines the root, either
//! with replacement instructions or by forwarding an existing value
//! (`%r = %y`), and may refer to anything the left side bound.
//!
//! Widths are polymorphic by default: a rule written without `iN`
//! annotations applies at every width at which its literals fit, with all
//! unannotated values instantiated at one common width. Explicit `iN`
//! annotations (on instructions, or on variables as `%x:iN`) pin widths; the
//! pinning propagates through operand/result equalities, so one annotation
//! typically constrains the whole rule.

mod parse;
mod pred;

pub use parse::parse_rules;
pub use pred::{eval_precondition, PredBinOp, PredCmp, PredExpr};
pub(crate) use pred::{eval_pv, is_sym_name, wrap_i128, Pv};


use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ir::{
    literal_bits, Constant, Flags, Instruction, IrError, Opcode, Operand, Width,
};

/// One operand position in a rule instruction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ROperand {
    /// `%x` — a pattern variable or a reference to an earlier rule value.
    Value(String),
    /// Integer literal; matches a constant with the same bits at the slot width.
    Literal(i128),
    /// Symbolic constant `C`, `C1`, ... — matches any constant, bound once.
    Sym(String),
}

impl fmt::Display for ROperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ROperand::Value(v) => write!(f, "%{v}"),
            ROperand::Literal(v) => write!(f, "{v}"),
            ROperand::Sym(s) => f.write_str(s),
        }
    }
}

/// A rule instruction: like an IR instruction but with rule operands and an
/// optional width annotation (`None` = polymorphic).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RInst {
    pub result: String,
    pub opcode: Opcode,
    pub flags: Flags,
    pub ann: Option<Width>,
    pub operands: Vec<ROperand>,
}

/// A rewrite rule. `lhs` is the pattern (root last), `rhs` the replacement.
/// Exactly one of `rhs`-nonempty / `rhs_alias`-set holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub name: String,
    pub pre: Option<PredExpr>,
    pub lhs: Vec<RInst>,
    pub rhs: Vec<RInst>,
    /// Set when the replacement is a single forwarding line `%root = X`.
    pub rhs_alias: Option<ROperand>,
    /// Width pins from `%x:iN` variable constraints.
    pub var_constraints: BTreeMap<String, Width>,
}

/// Structured well-formedness diagnostic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diag {
    pub rule: String,
    pub severity: Severity,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Diag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: rule `{}`: {}", self.rule, self.msg)
    }
}

/// A complete match of a rule's left-hand side against a function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    /// Common width of all polymorphic values in this instantiation. For a
    /// fully annotated rule the field is the root width and otherwise unused.
    pub width: Width,
    /// Pattern variable and matched-instruction bindings, by rule name.
    pub values: BTreeMap<String, Operand>,
    /// Symbolic constant bindings.
    pub syms: BTreeMap<String, Constant>,
}

impl Binding {
    /// The subject value the rule root matched.
    pub fn root_value(&self, rule: &Rule) -> Option<&str> {
        match self.values.get(rule.root_name()) {
            Some(Operand::Value(v)) => Some(v),
            _ => None,
        }
    }
}

/// Result of instantiating a rule's replacement: new instructions, or a
/// forwarding operand that should replace every use of the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instantiation {
    pub insts: Vec<Instruction>,
    pub root_alias: Option<Operand>,
    /// Subject name of the root value being replaced.
    pub root: String,
}

// ---------------------------------------------------------------------------
// Width analysis: union-find over width slots.

#[derive(Debug, Clone)]
pub(crate) struct WidthInfo {
    parent: Vec<u32>,
    /// Pinned width per class root, normalized on union.
    fixed: BTreeMap<u32, Width>,
    value_slot: BTreeMap<String, u32>,
    sym_slot: BTreeMap<String, u32>,
    /// Literal occurrences: (source value, slot).
    literals: Vec<(i128, u32)>,
    /// Cast constraints: (opcode, source slot, destination slot).
    casts: Vec<(Opcode, u32, u32)>,
    /// Result and operand slots per instruction, in the order instructions
    /// were added (pattern first, then replacement).
    pub(crate) inst_slots: Vec<InstSlots>,
    /// First width conflict discovered, as a message.
    pub(crate) conflict: Option<String>,
}

/// Width slots of one rule instruction, for callers that need to resolve
/// per-position widths (the matcher checks subjects against these).
#[derive(Debug, Clone)]
pub(crate) struct InstSlots {
    pub(crate) result: u32,
    pub(crate) operands: Vec<u32>,
}

impl WidthInfo {
    fn new() -> WidthInfo {
        WidthInfo {
            parent: Vec::new(),
            fixed: BTreeMap::new(),
            value_slot: BTreeMap::new(),
            sym_slot: BTreeMap::new(),
            literals: Vec::new(),
            casts: Vec::new(),
            inst_slots: Vec::new(),
            conflict: None,
        }
    }

    fn fresh(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            a = self.parent[a as usize];
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match (self.fixed.get(&ra).copied(), self.fixed.get(&rb).copied()) {
            (Some(wa), Some(wb)) if wa != wb => {
                if self.conflict.is_none() {
                    self.conflict =
                        Some(format!("conflicting width constraints {wa} and {wb}"));
                }
            }
            (Some(wa), None) => {
                self.fixed.insert(rb, wa);
            }
            _ => {}
        }
        self.fixed.remove(&ra);
        self.parent[ra as usize] = rb;
    }

    fn pin(&mut self, slot: u32, w: Width) {
        let r = self.find(slot);
        match self.fixed.get(&r).copied() {
            Some(old) if old != w => {
                if self.conflict.is_none() {
                    self.conflict =
                        Some(format!("conflicting width constraints {old} and {w}"));
                }
            }
            _ => {
                self.fixed.insert(r, w);
            }
        }
    }

    fn value(&mut self, name: &str) -> u32 {
        if let Some(&s) = self.value_slot.get(name) {
            return s;
        }
        let s = self.fresh();
        self.value_slot.insert(name.to_string(), s);
        s
    }

    fn sym(&mut self, name: &str) -> u32 {
        if let Some(&s) = self.sym_slot.get(name) {
            return s;
        }
        let s = self.fresh();
        self.sym_slot.insert(name.to_string(), s);
        s
    }

    fn attach(&mut self, op: &ROperand, slot: u32) {
        match op {
            ROperand::Value(v) => {
                let s = self.value(v);
                self.union(s, slot);
            }
            ROperand::Literal(l) => self.literals.push((*l, slot)),
            ROperand::Sym(c) => {
                let s = self.sym(c);
                self.union(s, slot);
            }
        }
    }

    fn add_inst(&mut self, inst: &RInst) {
        let rslot = self.value(&inst.result);
        let operand_slots = match inst.opcode {
            Opcode::Icmp(_) => {
                self.pin(rslot, Width::BOOL);
                let oslot = self.fresh();
                if let Some(w) = inst.ann {
                    self.pin(oslot, w);
                }
                for op in &inst.operands {
                    self.attach(op, oslot);
                }
                vec![oslot; inst.operands.len()]
            }
            Opcode::Select => {
                if let Some(w) = inst.ann {
                    self.pin(rslot, w);
                }
                let cslot = self.fresh();
                self.pin(cslot, Width::BOOL);
                self.attach(&inst.operands[0], cslot);
                self.attach(&inst.operands[1], rslot);
                self.attach(&inst.operands[2], rslot);
                vec![cslot, rslot, rslot]
            }
            Opcode::Zext | Opcode::Sext | Opcode::Trunc => {
                if let Some(w) = inst.ann {
                    self.pin(rslot, w);
                }
                let oslot = self.fresh();
                self.attach(&inst.operands[0], oslot);
                self.casts.push((inst.opcode, oslot, rslot));
                vec![oslot]
            }
            _ => {
                if let Some(w) = inst.ann {
                    self.pin(rslot, w);
                }
                for op in &inst.operands {
                    self.attach(op, slot_copy(rslot));
                }
                vec![rslot; inst.operands.len()]
            }
        };
        self.inst_slots.push(InstSlots {
            result: rslot,
            operands: operand_slots,
        });
    }

    /// Width of a slot under diagonal instantiation at `w`.
    fn resolve(&self, slot: u32, w: Width) -> Width {
        self.fixed.get(&self.find(slot)).copied().unwrap_or(w)
    }

    /// Pinned width of a slot, if its class is annotation-constrained.
    pub(crate) fn fixed_of(&self, slot: u32) -> Option<Width> {
        self.fixed.get(&self.find(slot)).copied()
    }

    pub(crate) fn value_width(&self, name: &str, w: Width) -> Option<Width> {
        self.value_slot.get(name).map(|&s| self.resolve(s, w))
    }

    pub(crate) fn sym_width(&self, name: &str, w: Width) -> Option<Width> {
        self.sym_slot.get(name).map(|&s| self.resolve(s, w))
    }

    /// True when some value or symbol takes its width from the
    /// instantiation rather than from an annotation.
    pub(crate) fn is_polymorphic(&self) -> bool {
        self.value_slot
            .values()
            .chain(self.sym_slot.values())
            .any(|&s| !self.fixed.contains_key(&self.find(s)))
    }

    pub(crate) fn admissible_at(&self, w: Width) -> bool {
        if self.conflict.is_some() {
            return false;
        }
        for &(lit, slot) in &self.literals {
            if literal_bits(lit, self.resolve(slot, w)).is_none() {
                return false;
            }
        }
        for &(op, src, dst) in &self.casts {
            let (ws, wd) = (self.resolve(src, w), self.resolve(dst, w));
            let ok = match op {
                Opcode::Zext | Opcode::Sext => ws < wd,
                Opcode::Trunc => ws > wd,
                _ => unreachable!("non-cast in cast constraints"),
            };
            if !ok {
                return false;
            }
        }
        true
    }
}

// Reads better than a bare copy at the call site: operand slots of a plain
// binary op all share the result's class.
fn slot_copy(s: u32) -> u32 {
    s
}

impl Rule {
    /// The value the rule rewrites — the result of the last LHS instruction.
    pub fn root_name(&self) -> &str {
        &self.lhs.last().expect("rules have a nonempty pattern").result
    }

    /// Pattern variables: operand names not defined by any LHS instruction,
    /// in first-occurrence order.
    pub fn free_vars(&self) -> Vec<String> {
        let defined: BTreeSet<&str> = self.lhs.iter().map(|i| i.result.as_str()).collect();
        let mut out = Vec::new();
        for inst in &self.lhs {
            for op in &inst.operands {
                if let ROperand::Value(v) = op {
                    if !defined.contains(v.as_str()) && !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
        }
        out
    }

    /// Symbolic constants appearing on the LHS, in first-occurrence order.
    pub fn sym_consts(&self) -> Vec<String> {
        let mut out = Vec::new();
        for inst in &self.lhs {
            for op in &inst.operands {
                if let ROperand::Sym(c) = op {
                    if !out.contains(c) {
                        out.push(c.clone());
                    }
                }
            }
        }
        out
    }

    pub(crate) fn width_info(&self) -> WidthInfo {
        let mut info = WidthInfo::new();
        for inst in self.lhs.iter().chain(&self.rhs) {
            info.add_inst(inst);
        }
        if let Some(alias) = &self.rhs_alias {
            let root = self.root_name().to_string();
            let rslot = info.value(&root);
            info.attach(alias, rslot);
        }
        for (var, w) in &self.var_constraints {
            let s = info.value(var);
            info.pin(s, *w);
        }
        info
    }

    /// Whether the rule type-checks with every unannotated value
    /// instantiated at width `w`.
    pub fn admissible_at(&self, w: Width) -> bool {
        self.width_info().admissible_at(w)
    }

    /// All admissible instantiation widths (1..=64).
    pub fn admissible_widths(&self) -> Vec<Width> {
        let info = self.width_info();
        (1..=64)
            .filter_map(|b| Width::new(b).ok())
            .filter(|&w| info.admissible_at(w))
            .collect()
    }

    /// True when some value's width is decided by the instantiation width.
    pub fn is_polymorphic(&self) -> bool {
        self.width_info().is_polymorphic()
    }

    /// Width of a named rule value under instantiation width `w`.
    pub fn value_width(&self, name: &str, w: Width) -> Option<Width> {
        self.width_info().value_width(name, w)
    }

    /// Widths of all LHS values and variables under instantiation width `w`
    /// — the map `width(%x)` reads during precondition evaluation.
    pub fn var_widths(&self, w: Width) -> BTreeMap<String, Width> {
        let info = self.width_info();
        info.value_slot
            .keys()
            .map(|name| (name.clone(), info.value_width(name, w).unwrap()))
            .collect()
    }
}

/// Checks a rule's structural invariants, returning diagnostics instead of
/// aborting. An empty result means the rule is well-formed. `parse_rules`
/// applies the same checks and turns the first error into a hard failure,
/// so programmatically constructed rules get the identical vetting.
pub fn check_wellformed(rule: &Rule) -> Vec<Diag> {
    let mut out = Vec::new();
    let error = |msg: String| Diag {
        rule: rule.name.clone(),
        severity: Severity::Error,
        msg,
    };

    if rule.lhs.is_empty() {
        return vec![error("pattern has no instructions".into())];
    }
    if rule.rhs.is_empty() && rule.rhs_alias.is_none() {
        out.push(error("replacement is empty".into()));
        return out;
    }
    if !rule.rhs.is_empty() && rule.rhs_alias.is_some() {
        out.push(error(
            "replacement cannot mix instructions with a forwarding line".into(),
        ));
        return out;
    }

    // SSA discipline on the pattern: unique results, no forward references.
    let mut lhs_defined: BTreeSet<&str> = BTreeSet::new();
    let all_lhs: BTreeSet<&str> = rule.lhs.iter().map(|i| i.result.as_str()).collect();
    for inst in &rule.lhs {
        for op in &inst.operands {
            if let ROperand::Value(v) = op {
                if all_lhs.contains(v.as_str()) && !lhs_defined.contains(v.as_str()) {
                    out.push(error(format!(
                        "%{v} is used before the pattern line that defines it"
                    )));
                }
            }
        }
        if !lhs_defined.insert(&inst.result) {
            out.push(error(format!("%{} is defined twice in the pattern", inst.result)));
        }
        if inst.operands.len() != inst.opcode.arity() {
            out.push(error(format!(
                "{} takes {} operands, found {}",
                inst.opcode,
                inst.opcode.arity(),
                inst.operands.len()
            )));
        }
        if (inst.flags.nsw || inst.flags.nuw) && !inst.opcode.accepts_flags() {
            out.push(error(format!("{} does not accept nsw/nuw flags", inst.opcode)));
        }
    }

    let root = rule.root_name().to_string();
    let free_vars: BTreeSet<String> = rule.free_vars().into_iter().collect();
    let lhs_syms: BTreeSet<String> = rule.sym_consts().into_iter().collect();

    // Replacement side: root redefined last, fresh intermediates, all
    // referenced names bound on the left (or defined earlier on the right).
    match (&rule.rhs_alias, rule.rhs.last()) {
        (Some(_), _) => {}
        (None, Some(last)) => {
            if last.result != root {
                out.push(error(format!(
                    "the last replacement line must redefine the root %{root}, found %{}",
                    last.result
                )));
            }
        }
        (None, None) => {}
    }
    let mut rhs_defined: BTreeSet<&str> = BTreeSet::new();
    for (k, inst) in rule.rhs.iter().enumerate() {
        let is_last = k + 1 == rule.rhs.len();
        if !is_last && (all_lhs.contains(inst.result.as_str()) || free_vars.contains(&inst.result))
        {
            out.push(error(format!(
                "replacement intermediate %{} shadows a pattern name",
                inst.result
            )));
        }
        for op in &inst.operands {
            match op {
                ROperand::Value(v) => {
                    let bound = free_vars.contains(v)
                        || (all_lhs.contains(v.as_str()) && *v != root)
                        || rhs_defined.contains(v.as_str());
                    if !bound {
                        out.push(error(format!("replacement uses unbound value %{v}")));
                    }
                }
                ROperand::Sym(c) => {
                    if !lhs_syms.contains(c) {
                        out.push(error(format!(
                            "replacement uses symbolic constant {c} that the pattern never binds"
                        )));
                    }
                }
                ROperand::Literal(_) => {}
            }
        }
        if !rhs_defined.insert(&inst.result) {
            out.push(error(format!(
                "%{} is defined twice in the replacement",
                inst.result
            )));
        }
        if inst.operands.len() != inst.opcode.arity() {
            out.push(error(format!(
                "{} takes {} operands, found {}",
                inst.opcode,
                inst.opcode.arity(),
                inst.operands.len()
            )));
        }
        if (inst.flags.nsw || inst.flags.nuw) && !inst.opcode.accepts_flags() {
            out.push(error(format!("{} does not accept nsw/nuw flags", inst.opcode)));
        }
    }
    if let Some(alias) = &rule.rhs_alias {
        match alias {
            ROperand::Value(v) => {
                if !free_vars.contains(v) && !(all_lhs.contains(v.as_str()) && *v != root) {
                    out.push(error(format!("replacement forwards unbound value %{v}")));
                }
            }
            ROperand::Sym(c) => {
                if !lhs_syms.contains(c) {
                    out.push(error(format!(
                        "replacement forwards symbolic constant {c} that the pattern never binds"
                    )));
                }
            }
            ROperand::Literal(_) => {}
        }
    }

    // Variable constraints must pin actual pattern variables.
    for var in rule.var_constraints.keys() {
        if !free_vars.contains(var) {
            out.push(error(format!(
                "width constraint on %{var}, which is not a pattern variable"
            )));
        }
    }

    // Precondition symbols must be pattern-bound.
    if let Some(pre) = &rule.pre {
        for s in pre.symbols() {
            if !lhs_syms.contains(&s) {
                out.push(error(format!(
                    "precondition uses symbolic constant {s} that the pattern never binds"
                )));
            }
        }
        let lhs_names: BTreeSet<String> = free_vars
            .iter()
            .cloned()
            .chain(all_lhs.iter().map(|s| s.to_string()))
            .collect();
        for v in pre.width_vars() {
            if !lhs_names.contains(&v) {
                out.push(error(format!(
                    "precondition takes width(%{v}) of an unbound name"
                )));
            }
        }
        if pre.const_value() == Some(false) {
            out.push(Diag {
                rule: rule.name.clone(),
                severity: Severity::Warning,
                msg: "vacuous rule: the precondition is literally false".into(),
            });
        }
    }

    if out.iter().any(|d| d.severity == Severity::Error) {
        return out;
    }

    // Width discipline: consistent constraints and at least one admissible
    // instantiation width.
    let info = rule.width_info();
    if let Some(conflict) = &info.conflict {
        out.push(error(conflict.clone()));
    } else if !(1..=64)
        .filter_map(|b| Width::new(b).ok())
        .any(|w| info.admissible_at(w))
    {
        out.push(error(
            "no width in i1..i64 satisfies the rule's constraints".into(),
        ));
    }
    out
}

/// Builds the replacement instructions for a matched rule. Intermediate
/// results get fresh names (`taken` reports collisions with the subject
/// function); the root keeps the name of the value it replaces, so uses and
/// returns are untouched. A forwarding replacement produces no instructions
/// and reports the operand to substitute for the root instead.
pub fn instantiate_rhs(
    rule: &Rule,
    binding: &Binding,
    taken: &dyn Fn(&str) -> bool,
) -> Result<Instantiation, IrError> {
    let info = rule.width_info();
    let root_subject = match binding.values.get(rule.root_name()) {
        Some(Operand::Value(v)) => v.clone(),
        _ => {
            return Err(IrError::Eval(format!(
                "binding does not place the root %{} on a value",
                rule.root_name()
            )))
        }
    };

    let subst_const = |c: &str, w: Width| -> Result<Operand, IrError> {
        match binding.syms.get(c) {
            Some(k) => Ok(Operand::Const(Constant {
                bits: k.bits & w.mask(),
                width: w,
            })),
            None => Err(IrError::Eval(format!("unbound symbolic constant {c}"))),
        }
    };

    if let Some(alias) = &rule.rhs_alias {
        let root_w = info
            .value_width(rule.root_name(), binding.width)
            .unwrap_or(binding.width);
        let op = match alias {
            ROperand::Value(v) => match binding.values.get(v) {
                Some(op) => op.clone(),
                None => return Err(IrError::Eval(format!("unbound value %{v}"))),
            },
            ROperand::Literal(l) => match Constant::new(*l, root_w) {
                Some(c) => Operand::Const(c),
                None => {
                    return Err(IrError::Eval(format!(
                        "literal {l} does not fit {root_w}"
                    )))
                }
            },
            ROperand::Sym(c) => subst_const(c, root_w)?,
        };
        return Ok(Instantiation {
            insts: Vec::new(),
            root_alias: Some(op),
            root: root_subject,
        });
    }

    let fresh = |hint: &str, used: &BTreeSet<String>| -> String {
        if !taken(hint) && !used.contains(hint) {
            return hint.to_string();
        }
        for k in 0u32.. {
            let cand = format!("{hint}{k}");
            if !taken(&cand) && !used.contains(&cand) {
                return cand;
            }
        }
        unreachable!()
    };

    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut renamed: BTreeMap<&str, String> = BTreeMap::new();
    let mut insts = Vec::with_capacity(rule.rhs.len());
    for (k, tmpl) in rule.rhs.iter().enumerate() {
        let is_root = k + 1 == rule.rhs.len();
        let name = if is_root {
            root_subject.clone()
        } else {
            let n = fresh(&tmpl.result, &used);
            used.insert(n.clone());
            n
        };
        renamed.insert(tmpl.result.as_str(), name.clone());

        let slot_width = |op_index: usize| -> Width {
            // Operand slot widths follow the instruction shape, mirroring
            // the IR parser: select condition is i1, casts read the source
            // class, everything else shares the instruction width.
            let iw = info
                .value_width(&tmpl.result, binding.width)
                .unwrap_or(binding.width);
            match tmpl.opcode {
                Opcode::Select if op_index == 0 => Width::BOOL,
                Opcode::Icmp(_) => {
                    // Operand class is separate from the i1 result; resolve
                    // via one of the operands when it is a named value.
                    tmpl.operands
                        .iter()
                        .find_map(|op| match op {
                            ROperand::Value(v) => info.value_width(v, binding.width),
                            _ => None,
                        })
                        .unwrap_or(binding.width)
                }
                Opcode::Zext | Opcode::Sext | Opcode::Trunc => match &tmpl.operands[0] {
                    ROperand::Value(v) => {
                        info.value_width(v, binding.width).unwrap_or(binding.width)
                    }
                    _ => binding.width,
                },
                _ => iw,
            }
        };

        let mut operands = Vec::with_capacity(tmpl.operands.len());
        for (i, op) in tmpl.operands.iter().enumerate() {
            let w = slot_width(i);
            operands.push(match op {
                ROperand::Value(v) => {
                    if let Some(n) = renamed.get(v.as_str()) {
                        Operand::Value(n.clone())
                    } else if let Some(bound) = binding.values.get(v) {
                        bound.clone()
                    } else {
                        return Err(IrError::Eval(format!("unbound value %{v}")));
                    }
                }
                ROperand::Literal(l) => match Constant::new(*l, w) {
                    Some(c) => Operand::Const(c),
                    None => {
                        return Err(IrError::Eval(format!("literal {l} does not fit {w}")))
                    }
                },
                ROperand::Sym(c) => subst_const(c, w)?,
            });
        }

        let width = match tmpl.opcode {
            // The printed width of an icmp is its operand width.
            Opcode::Icmp(_) => slot_width(1),
            _ => info
                .value_width(&tmpl.result, binding.width)
                .unwrap_or(binding.width),
        };
        insts.push(Instruction {
            result: name,
            opcode: tmpl.opcode,
            flags: tmpl.flags,
            width,
            operands,
        });
    }
    Ok(Instantiation {
        insts,
        root_alias: None,
        root: root_subject,
    })
}

// ---------------------------------------------------------------------------
// Printing.

fn write_rinst(out: &mut String, inst: &RInst, constraints: &BTreeMap<String, Width>, seen: &mut BTreeSet<String>) {
    out.push('%');
    out.push_str(&inst.result);
    out.push_str(" = ");
    out.push_str(&inst.opcode.to_string());
    if inst.flags.nsw {
        out.push_str(" nsw");
    }
    if inst.flags.nuw {
        out.push_str(" nuw");
    }
    if let Some(w) = inst.ann {
        out.push(' ');
        out.push_str(&w.to_string());
    }
    for (i, op) in inst.operands.iter().enumerate() {
        out.push_str(if i == 0 { " " } else { ", " });
        out.push_str(&op.to_string());
        if let ROperand::Value(v) = op {
            if let Some(w) = constraints.get(v) {
                if seen.insert(v.clone()) {
                    out.push(':');
                    out.push_str(&w.to_string());
                }
            }
        }
    }
    out.push('\n');
}

/// Canonical text of a rule, parseable by `parse_rules`.
pub fn print_rule(rule: &Rule) -> String {
    let mut out = String::new();
    out.push_str("name: ");
    out.push_str(&rule.name);
    out.push('\n');
    if let Some(pre) = &rule.pre {
        out.push_str("pre: ");
        out.push_str(&pre.to_string());
        out.push('\n');
    }
    let mut seen = BTreeSet::new();
    for inst in &rule.lhs {
        write_rinst(&mut out, inst, &rule.var_constraints, &mut seen);
    }
    out.push_str("=>\n");
    for inst in &rule.rhs {
        write_rinst(&mut out, inst, &BTreeMap::new(), &mut BTreeSet::new());
    }
    if let Some(alias) = &rule.rhs_alias {
        out.push('%');
        out.push_str(rule.root_name());
        out.push_str(" = ");
        out.push_str(&alias.to_string());
        out.push('\n');
    }
    out
}

/// Prints a rule list as a reparseable file (blank-line separated).
pub fn print_rules(rules: &[Rule]) -> String {
    rules
        .iter()
        .map(print_rule)
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::IcmpPred;

    fn rules(src: &str) -> Vec<Rule> {
        parse_rules(src).unwrap()
    }

    fn rule(src: &str) -> Rule {
        let mut rs = rules(src);
        assert_eq!(rs.len(), 1);
        rs.remove(0)
    }

    const XOR_CANCEL: &str = "name: xor-cancel\n%t = xor %x, %y\n%r = xor %x, %t\n=>\n%r = %y\n";
    const DEMORGAN: &str = "name: demorgan-and\n%na = xor %a, -1\n%nb = xor %b, -1\n%r = and %na, %nb\n=>\n%o = or %a, %b\n%r = xor %o, -1\n";
    const LOWBIT: &str = "name: low-bit-flip\npre: C1 == C2 && C1 == width(%x) - 1\n%s = shl %x, C1\n%t = ashr %s, C2\n%r = add %t, 1\n=>\n%n = xor %x, -1\n%r = and %n, 1\n";

    #[test]
    fn xor_cancel_parses_with_nonlinear_var() {
        let r = rule(XOR_CANCEL);
        assert_eq!(r.name, "xor-cancel");
        assert_eq!(r.lhs.len(), 2);
        assert_eq!(r.rhs_alias, Some(ROperand::Value("y".into())));
        assert_eq!(r.free_vars(), vec!["x".to_string(), "y".to_string()]);
        assert_eq!(r.root_name(), "r");
        // %x appears in both pattern instructions.
        let uses_x = r
            .lhs
            .iter()
            .flat_map(|i| &i.operands)
            .filter(|op| **op == ROperand::Value("x".into()))
            .count();
        assert_eq!(uses_x, 2);
        assert!(check_wellformed(&r).is_empty());
    }

    #[test]
    fn demorgan_parses() {
        let r = rule(DEMORGAN);
        assert_eq!(r.lhs.len(), 3);
        assert_eq!(r.rhs.len(), 2);
        assert!(r.is_polymorphic());
        assert!(check_wellformed(&r).is_empty());
    }

    #[test]
    fn unbound_rhs_value_is_an_error() {
        let err = parse_rules("name: bad\n%r = add %x, %y\n=>\n%r = add %x, %z\n")
            .unwrap_err();
        assert!(err.to_string().contains("unbound value %z"), "{err}");
    }

    #[test]
    fn unbound_rhs_sym_is_an_error() {
        let err =
            parse_rules("name: bad\n%r = add %x, C1\n=>\n%r = add %x, C2\n").unwrap_err();
        assert!(err.to_string().contains("C2"), "{err}");
    }

    #[test]
    fn vacuous_precondition_warns() {
        let r = rule("name: never\npre: 1 == 2\n%r = add %x, %y\n=>\n%r = add %y, %x\n");
        let diags = check_wellformed(&r);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
        assert!(diags[0].msg.contains("vacuous"), "{}", diags[0].msg);
    }

    #[test]
    fn select_condition_width_clash_is_an_error() {
        // %x is an i8 add result and also a select condition (i1).
        let err = parse_rules(
            "name: bad\n%x = add i8 %a, %b\n%r = select i8 %x, %p, %q\n=>\n%r = %p\n",
        )
        .unwrap_err();
        assert!(
            err.to_string().contains("conflicting width"),
            "{err}"
        );
    }

    #[test]
    fn width_polymorphism_and_annotations() {
        let poly = rule("name: p\n%r = add %x, %y\n=>\n%r = add %y, %x\n");
        assert!(poly.is_polymorphic());
        assert!(poly.admissible_at(Width::new(4).unwrap()));
        assert!(poly.admissible_at(Width::new(64).unwrap()));

        let mono = rule("name: m\n%r = add i32 %x, %y\n=>\n%r = add i32 %y, %x\n");
        assert!(!mono.is_polymorphic());
        assert_eq!(mono.value_width("r", Width::new(4).unwrap()), Some(Width::new(32).unwrap()));

        // One annotation constrains the whole rule through shared classes.
        let half = rule("name: h\n%s = add i16 %x, %y\n%r = mul %s, %x\n=>\n%r = mul i16 %x, %x\n");
        assert!(!half.is_polymorphic());
        assert_eq!(half.value_width("y", Width::new(4).unwrap()), Some(Width::new(16).unwrap()));
    }

    #[test]
    fn literals_limit_admissible_widths() {
        let r = rule("name: l\n%r = add %x, 31\n=>\n%r = add %x, 31\n");
        assert!(!r.admissible_at(Width::new(4).unwrap()));
        assert!(r.admissible_at(Width::new(5).unwrap()));
        assert!(r.admissible_at(Width::new(8).unwrap()));
        assert_eq!(r.admissible_widths().len(), 60);
    }

    #[test]
    fn polymorphic_cast_has_no_admissible_width() {
        let err = parse_rules("name: c\n%r = zext %x\n=>\n%r = zext %x\n").unwrap_err();
        assert!(
            err.to_string().contains("no width"),
            "{err}"
        );
    }

    #[test]
    fn constrained_cast_is_admissible_above_source_width() {
        let r = rule("name: c\n%r = zext %x:i8\n=>\n%r = zext %x\n");
        assert!(!r.admissible_at(Width::new(8).unwrap()));
        assert!(r.admissible_at(Width::new(9).unwrap()));
        assert!(r.admissible_at(Width::new(64).unwrap()));
    }

    #[test]
    fn var_constraint_on_non_variable_is_an_error() {
        let err = parse_rules("name: c\n%s = add %x, %y\n%r = add %s:i8, %x\n=>\n%r = %x\n")
            .unwrap_err();
        assert!(err.to_string().contains("not a pattern variable"), "{err}");
    }

    #[test]
    fn icmp_gt_spelling_normalizes_in_rules() {
        let r = rule("name: g\n%r = icmp ugt %a, %b\n=>\n%r = icmp ult %b, %a\n");
        assert_eq!(r.lhs[0].opcode, Opcode::Icmp(IcmpPred::Ult));
        assert_eq!(r.lhs[0].operands[0], ROperand::Value("b".into()));
        assert_eq!(r.lhs[0].operands[1], ROperand::Value("a".into()));
    }

    #[test]
    fn root_must_be_redefined_last() {
        let err = parse_rules("name: bad\n%r = add %x, %y\n=>\n%q = add %y, %x\n").unwrap_err();
        assert!(err.to_string().contains("root"), "{err}");
    }

    #[test]
    fn print_parse_round_trip() {
        for src in [XOR_CANCEL, DEMORGAN, LOWBIT] {
            let r = rule(src);
            let printed = print_rule(&r);
            let again = rule(&printed);
            assert_eq!(r, again, "round trip failed:\n{printed}");
        }
        // Constraints and annotations survive printing too.
        let r = rule("name: c\n%r = zext i16 %x:i8\n=>\n%r = zext i16 %x\n");
        assert_eq!(r, rule(&print_rule(&r)));
    }

    #[test]
    fn rules_file_with_multiple_blocks() {
        let rs = rules(&format!("{XOR_CANCEL}\n{DEMORGAN}"));
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[0].name, "xor-cancel");
        assert_eq!(rs[1].name, "demorgan-and");
    }

    #[test]
    fn comments_are_ignored_in_rule_files() {
        let r = rule("; a cancellation identity\nname: xc ; inline note\n%t = xor %x, %y\n%r = xor %x, %t\n=>\n%r = %y\n");
        assert_eq!(r.name, "xc");
    }

    fn bind(
        w: u32,
        values: &[(&str, Operand)],
        syms: &[(&str, i128, u32)],
    ) -> Binding {
        Binding {
            width: Width::new(w).unwrap(),
            values: values
                .iter()
                .map(|(n, op)| (n.to_string(), op.clone()))
                .collect(),
            syms: syms
                .iter()
                .map(|&(n, v, sw)| {
                    (
                        n.to_string(),
                        Constant::new(v, Width::new(sw).unwrap()).unwrap(),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn instantiate_produces_fresh_names_and_keeps_root() {
        let r = rule(LOWBIT);
        let b = bind(
            8,
            &[
                ("x", Operand::Value("x".into())),
                ("s", Operand::Value("s0".into())),
                ("t", Operand::Value("t0".into())),
                ("r", Operand::Value("root".into())),
            ],
            &[("C1", 7, 8), ("C2", 7, 8)],
        );
        let inst = instantiate_rhs(&r, &b, &|_| false).unwrap();
        assert!(inst.root_alias.is_none());
        assert_eq!(inst.root, "root");
        assert_eq!(inst.insts.len(), 2);
        let w8 = Width::new(8).unwrap();
        assert_eq!(inst.insts[0].result, "n");
        assert_eq!(inst.insts[0].opcode, Opcode::Xor);
        assert_eq!(
            inst.insts[0].operands,
            vec![
                Operand::Value("x".into()),
                Operand::Const(Constant::new(-1, w8).unwrap())
            ]
        );
        assert_eq!(inst.insts[1].result, "root");
        assert_eq!(inst.insts[1].opcode, Opcode::And);
        assert_eq!(
            inst.insts[1].operands,
            vec![
                Operand::Value("n".into()),
                Operand::Const(Constant::new(1, w8).unwrap())
            ]
        );
        // Name collisions get suffixed.
        let inst2 = instantiate_rhs(&r, &b, &|n| n == "n").unwrap();
        assert_eq!(inst2.insts[0].result, "n0");
    }

    #[test]
    fn instantiate_forwarding_produces_no_instructions() {
        let r = rule(XOR_CANCEL);
        let b = bind(
            8,
            &[
                ("x", Operand::Value("a".into())),
                ("y", Operand::Value("b".into())),
                ("t", Operand::Value("t0".into())),
                ("r", Operand::Value("r0".into())),
            ],
            &[],
        );
        let inst = instantiate_rhs(&r, &b, &|_| false).unwrap();
        assert!(inst.insts.is_empty());
        assert_eq!(inst.root_alias, Some(Operand::Value("b".into())));
        assert_eq!(inst.root, "r0");
    }

    #[test]
    fn instantiate_demorgan_at_i4() {
        let r = rule(DEMORGAN);
        let b = bind(
            4,
            &[
                ("a", Operand::Value("p".into())),
                ("b", Operand::Value("q".into())),
                ("na", Operand::Value("na0".into())),
                ("nb", Operand::Value("nb0".into())),
                ("r", Operand::Value("out".into())),
            ],
            &[],
        );
        let inst = instantiate_rhs(&r, &b, &|_| false).unwrap();
        assert_eq!(inst.insts.len(), 2);
        let w4 = Width::new(4).unwrap();
        assert_eq!(inst.insts[0].width, w4);
        // -1 reduces to the all-ones constant at i4.
        assert_eq!(
            inst.insts[1].operands[1],
            Operand::Const(Constant { bits: 0xF, width: w4 })
        );
    }

    #[test]
    fn precondition_eval_uses_rule_widths() {
        let r = rule(LOWBIT);
        let w8 = Width::new(8).unwrap();
        let syms: BTreeMap<String, Constant> = [
            ("C1".to_string(), Constant::new(7, w8).unwrap()),
            ("C2".to_string(), Constant::new(7, w8).unwrap()),
        ]
        .into_iter()
        .collect();
        let pre = r.pre.as_ref().unwrap();
        assert!(eval_precondition(pre, &syms, &r.var_widths(w8)).unwrap());
        let syms2: BTreeMap<String, Constant> = [
            ("C1".to_string(), Constant::new(6, w8).unwrap()),
            ("C2".to_string(), Constant::new(6, w8).unwrap()),
        ]
        .into_iter()
        .collect();
        assert!(!eval_precondition(pre, &syms2, &r.var_widths(w8)).unwrap());
    }
}
