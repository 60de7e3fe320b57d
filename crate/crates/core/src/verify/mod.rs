//! Refinement checking: is a replacement always safe?
//!
//! The contract checked everywhere in this module is *refinement*, not
//! equivalence: for every instantiation width, every constant binding that
//! satisfies the precondition, and every input vector, either the original
//! value is poison (in which case the replacement owes nothing), or the
//! replacement is non-poison and bitwise equal. A replacement may drop
//! poison; it may never introduce it.
//!
//! Two backends answer queries. The exhaustive backend enumerates the whole
//! input space and is the oracle of record; it refuses (rather than guesses)
//! when the space exceeds its budget, unless one of two sound reductions
//! applies — substituting constants that the precondition pins to a closed
//! form, or per-bit decomposition of purely bitwise rules. The solver
//! backend shells out to any SMT-LIB2 process over a pipe; its models are
//! replayed through the evaluator before being believed.

mod encode;
mod solver;

pub use encode::encode_query;
pub use solver::{SolverPort, SolverReply};

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::Serialize;

use crate::ir::{Constant, Function, IrError, Opcode, Operand, Param, Val, Width};
use crate::rules::{eval_precondition, PredExpr, ROperand, Rule};

/// Exhaustive enumeration budget: total free bits (sum of parameter widths,
/// constants included) a plain search will sweep. 2^24 evaluations is a few
/// seconds of work; anything larger needs a reduction or a solver.
pub const EXHAUSTIVE_BUDGET_BITS: u32 = 24;

/// Default per-query solver timeout.
pub const SOLVER_TIMEOUT: Duration = Duration::from_secs(10);

/// Outcome of a refinement check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Valid,
    Counterexample(Cex),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

/// A concrete refutation. The stored results come from re-running the
/// evaluator on the stored inputs, so a counterexample always replays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cex {
    pub width: Width,
    /// Input values by parameter name (pattern variables).
    pub inputs: BTreeMap<String, u64>,
    /// Symbolic constant values by name.
    pub constants: BTreeMap<String, u64>,
    /// Original-side results, one per returned component.
    pub lhs: Vec<Val>,
    /// Replacement-side results.
    pub rhs: Vec<Val>,
    /// Index of the first disagreeing component.
    pub component: usize,
}

impl fmt::Display for Cex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at {}: ", self.width)?;
        let mut first = true;
        for (k, v) in self.constants.iter().chain(&self.inputs) {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{k} = {v}")?;
            first = false;
        }
        let show = |vals: &[Val]| {
            vals.iter()
                .map(|v| match v {
                    Val::Bits(b) => b.to_string(),
                    Val::Poison => "poison".to_string(),
                })
                .collect::<Vec<_>>()
                .join(", ")
        };
        write!(
            f,
            " -> original {}, replacement {}",
            show(&self.lhs),
            show(&self.rhs)
        )
    }
}

/// Failures distinct from "invalid": the check could not be carried out.
#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("no widths requested")]
    EmptyWidths,
    #[error("rule admits none of the requested widths")]
    NoAdmissibleWidth,
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),
    #[error(
        "state space of {bits} bits exceeds the exhaustive budget of {EXHAUSTIVE_BUDGET_BITS}; \
         a solver backend is required"
    )]
    TooLarge { bits: u32 },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("solver timed out")]
    Timeout,
    #[error("solver returned unknown: {0}")]
    Unknown(String),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Which engine answers refinement queries.
#[derive(Debug, Clone)]
pub enum Backend {
    Exhaustive,
    Solver {
        /// Command line: program followed by arguments.
        cmd: Vec<String>,
        timeout: Duration,
    },
}

impl Backend {
    /// Parses the CLI spelling: `exhaustive` or `solver:<path and args>`.
    pub fn parse(s: &str) -> Result<Backend, String> {
        if s == "exhaustive" {
            return Ok(Backend::Exhaustive);
        }
        if let Some(rest) = s.strip_prefix("solver:") {
            let cmd: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            if cmd.is_empty() {
                return Err("solver: needs a program path".into());
            }
            return Ok(Backend::Solver {
                cmd,
                timeout: SOLVER_TIMEOUT,
            });
        }
        Err(format!(
            "unknown backend `{s}` (expected `exhaustive` or `solver:<path>`)"
        ))
    }
}

impl Default for Backend {
    fn default() -> Backend {
        Backend::Exhaustive
    }
}

// ---------------------------------------------------------------------------
// Rule sides as standalone functions.

/// Renders one side of a rule as a function at instantiation width `w`.
/// Parameters are the pattern variables in first-occurrence order, then the
/// symbolic constants (as parameters named after themselves). The
/// replacement side includes the pattern instructions so that references to
/// pattern intermediates — and their poison — mean the value the original
/// computed. Pattern-variable names that look like symbolic constants are
/// prefixed `v.` to keep the two namespaces apart.
pub(crate) fn side_function(rule: &Rule, lhs_side: bool, w: Width) -> Result<Function, IrError> {
    let info = rule.width_info();
    if let Some(c) = &info.conflict {
        return Err(IrError::Eval(c.clone()));
    }
    let var_name = |v: &str| -> String {
        if crate::rules::is_sym_name(v) {
            format!("v.{v}")
        } else {
            v.to_string()
        }
    };

    let mut params = Vec::new();
    for v in rule.free_vars() {
        let pw = info.value_width(&v, w).expect("free vars have slots");
        params.push(Param {
            name: var_name(&v),
            width: pw,
        });
    }
    for c in rule.sym_consts() {
        let cw = info.sym_width(&c, w).expect("syms have slots");
        params.push(Param { name: c, width: cw });
    }

    let lhs_results: Vec<&str> = rule.lhs.iter().map(|i| i.result.as_str()).collect();
    let conv_operand = |op: &ROperand, slot_w: Width| -> Result<Operand, IrError> {
        Ok(match op {
            ROperand::Value(v) => {
                if lhs_results.contains(&v.as_str()) {
                    Operand::Value(v.clone())
                } else {
                    Operand::Value(var_name(v))
                }
            }
            ROperand::Literal(l) => match Constant::new(*l, slot_w) {
                Some(c) => Operand::Const(c),
                None => {
                    return Err(IrError::Eval(format!(
                        "literal {l} does not fit {slot_w} at instantiation width {w}"
                    )))
                }
            },
            ROperand::Sym(c) => Operand::Value(c.clone()),
        })
    };

    let conv_inst = |tmpl: &crate::rules::RInst,
                     result: String|
     -> Result<crate::ir::Instruction, IrError> {
        // Instruction width mirrors the IR convention: icmp stores its
        // operand width, everything else its result width.
        let value_or = |op: &ROperand| -> Option<Width> {
            match op {
                ROperand::Value(v) => info.value_width(v, w),
                ROperand::Sym(c) => info.sym_width(c, w),
                ROperand::Literal(_) => None,
            }
        };
        let iw = match tmpl.opcode {
            Opcode::Icmp(_) => tmpl
                .operands
                .iter()
                .find_map(value_or)
                .or(tmpl.ann)
                .unwrap_or(w),
            _ => info.value_width(&tmpl.result, w).unwrap_or(w),
        };
        let slot = |i: usize| -> Width {
            match tmpl.opcode {
                Opcode::Select if i == 0 => Width::BOOL,
                Opcode::Zext | Opcode::Sext | Opcode::Trunc => {
                    value_or(&tmpl.operands[0]).unwrap_or(w)
                }
                _ => iw,
            }
        };
        let mut operands = Vec::with_capacity(tmpl.operands.len());
        for (i, op) in tmpl.operands.iter().enumerate() {
            operands.push(conv_operand(op, slot(i))?);
        }
        Ok(crate::ir::Instruction {
            result,
            opcode: tmpl.opcode,
            flags: tmpl.flags,
            width: iw,
            operands,
        })
    };

    let root = rule.root_name().to_string();
    let mut body = Vec::new();
    let returns;
    let name;
    if lhs_side {
        for inst in &rule.lhs {
            body.push(conv_inst(inst, inst.result.clone())?);
        }
        returns = vec![root];
        name = "lhs";
    } else {
        // Pattern instructions first (minus nothing: references may reach
        // any of them), then the replacement, root renamed to avoid the
        // collision with the pattern's root.
        for inst in &rule.lhs {
            body.push(conv_inst(inst, inst.result.clone())?);
        }
        let mut taken: std::collections::BTreeSet<&str> = lhs_results.iter().copied().collect();
        for inst in &rule.rhs {
            taken.insert(inst.result.as_str());
        }
        for p in &params {
            taken.insert(p.name.as_str());
        }
        let mut rhs_root = format!("{root}.rhs");
        let mut n = 0u32;
        while taken.contains(rhs_root.as_str()) {
            rhs_root = format!("{root}.rhs{n}");
            n += 1;
        }
        match &rule.rhs_alias {
            Some(alias) => {
                let root_w = info.value_width(&root, w).unwrap_or(w);
                match alias {
                    ROperand::Value(v) => {
                        let target = if lhs_results.contains(&v.as_str()) {
                            v.clone()
                        } else {
                            var_name(v)
                        };
                        returns = vec![target];
                    }
                    other => {
                        let op = conv_operand(other, root_w)?;
                        body.push(crate::ir::Instruction {
                            result: rhs_root.clone(),
                            opcode: Opcode::Or,
                            flags: Default::default(),
                            width: root_w,
                            operands: vec![
                                op,
                                Operand::Const(Constant { bits: 0, width: root_w }),
                            ],
                        });
                        returns = vec![rhs_root];
                    }
                }
            }
            None => {
                for (k, inst) in rule.rhs.iter().enumerate() {
                    let is_root = k + 1 == rule.rhs.len();
                    let result = if is_root {
                        rhs_root.clone()
                    } else {
                        inst.result.clone()
                    };
                    body.push(conv_inst(inst, result)?);
                }
                returns = vec![rhs_root];
            }
        }
        name = "rhs";
    }

    let f = Function {
        name: name.to_string(),
        params,
        body,
        returns,
    };
    f.validate()?;
    Ok(f)
}

// ---------------------------------------------------------------------------
// Exhaustive engine.

/// Splits parameters into enumerable groups. Symbolic constants are
/// recognized by name (`C`, `C1`, ...), matching how rule side functions are
/// built.
fn split_params(f: &Function) -> (Vec<usize>, Vec<usize>) {
    let mut vars = Vec::new();
    let mut consts = Vec::new();
    for (i, p) in f.params.iter().enumerate() {
        if crate::rules::is_sym_name(&p.name) {
            consts.push(i);
        } else {
            vars.push(i);
        }
    }
    (vars, consts)
}

/// Odometer over the given parameter indices; calls `visit` with the full
/// assignment vector (other positions untouched) until it returns false.
fn for_each_assignment(
    widths: &[Width],
    indices: &[usize],
    assign: &mut [u64],
    visit: &mut impl FnMut(&mut [u64]) -> bool,
) {
    fn rec(
        widths: &[Width],
        indices: &[usize],
        k: usize,
        assign: &mut [u64],
        visit: &mut impl FnMut(&mut [u64]) -> bool,
        alive: &mut bool,
    ) {
        if !*alive {
            return;
        }
        if k == indices.len() {
            if !visit(assign) {
                *alive = false;
            }
            return;
        }
        let i = indices[k];
        let max = widths[i].mask();
        let mut v = 0u64;
        loop {
            assign[i] = v;
            rec(widths, indices, k + 1, assign, visit, alive);
            if !*alive || v == max {
                break;
            }
            v += 1;
        }
    }
    let mut alive = true;
    rec(widths, indices, 0, assign, visit, &mut alive);
}

/// One componentwise comparison under refinement. Returns the index of the
/// first violating component.
fn refinement_violation(lhs: &[Val], rhs: &[Val]) -> Option<usize> {
    for (i, (l, r)) in lhs.iter().zip(rhs).enumerate() {
        match (l, r) {
            (Val::Poison, _) => continue,
            (Val::Bits(_), Val::Poison) => return Some(i),
            (Val::Bits(a), Val::Bits(b)) => {
                if a != b {
                    return Some(i);
                }
            }
        }
    }
    None
}

struct ExhaustiveQuery<'a> {
    lhs: &'a Function,
    rhs: &'a Function,
    pre: Option<&'a PredExpr>,
    width: Width,
}

impl ExhaustiveQuery<'_> {
    /// Plain enumeration, constants outer (filtered by the precondition),
    /// inputs inner. `forced` pins constant parameters to fixed values.
    fn run(&self, forced: &BTreeMap<String, u64>) -> Result<Verdict, VerifyError> {
        let f = self.lhs;
        let widths: Vec<Width> = f.params.iter().map(|p| p.width).collect();
        let (vars, consts) = split_params(f);
        let free_consts: Vec<usize> = consts
            .iter()
            .copied()
            .filter(|&i| !forced.contains_key(&f.params[i].name))
            .collect();

        let var_widths: BTreeMap<String, Width> = f
            .params
            .iter()
            .map(|p| (p.name.clone(), p.width))
            .collect();

        let mut assign = vec![0u64; f.params.len()];
        for (&i, p) in consts.iter().map(|i| (i, &f.params[*i])) {
            if let Some(&v) = forced.get(&p.name) {
                assign[i] = v & p.width.mask();
            }
        }

        let mut found: Option<Cex> = None;
        let mut fail: Option<VerifyError> = None;
        for_each_assignment(&widths, &free_consts, &mut assign, &mut |assign| {
            // Precondition filter at this constant binding.
            if let Some(pre) = self.pre {
                let syms: BTreeMap<String, Constant> = consts
                    .iter()
                    .map(|&i| {
                        (
                            f.params[i].name.clone(),
                            Constant {
                                bits: assign[i],
                                width: f.params[i].width,
                            },
                        )
                    })
                    .collect();
                match eval_precondition(pre, &syms, &var_widths) {
                    Ok(true) => {}
                    Ok(false) => return true,
                    Err(e) => {
                        fail = Some(VerifyError::Ir(e));
                        return false;
                    }
                }
            }
            let mut inner_fail: Option<VerifyError> = None;
            let mut inner_found = false;
            for_each_assignment(&widths, &vars, assign, &mut |assign| {
                let lv = match crate::ir::evaluate(self.lhs, assign) {
                    Ok(v) => v,
                    Err(e) => {
                        inner_fail = Some(VerifyError::Ir(e));
                        return false;
                    }
                };
                let rv = match crate::ir::evaluate(self.rhs, assign) {
                    Ok(v) => v,
                    Err(e) => {
                        inner_fail = Some(VerifyError::Ir(e));
                        return false;
                    }
                };
                if let Some(component) = refinement_violation(&lv, &rv) {
                    let (vars_ix, consts_ix) = (&vars, &consts);
                    found = Some(Cex {
                        width: self.width,
                        inputs: vars_ix
                            .iter()
                            .map(|&i| (f.params[i].name.clone(), assign[i]))
                            .collect(),
                        constants: consts_ix
                            .iter()
                            .map(|&i| (f.params[i].name.clone(), assign[i]))
                            .collect(),
                        lhs: lv,
                        rhs: rv,
                        component,
                    });
                    inner_found = true;
                    return false;
                }
                true
            });
            if let Some(e) = inner_fail {
                fail = Some(e);
                return false;
            }
            !inner_found
        });
        if let Some(e) = fail {
            return Err(e);
        }
        Ok(match found {
            Some(cex) => Verdict::Counterexample(cex),
            None => Verdict::Valid,
        })
    }

    /// Tries to pin constants to values the precondition forces. A conjunct
    /// `Ci == e` (either orientation) forces `Ci` when `e` evaluates using
    /// only widths, literals, and already-forced constants. Runs to a
    /// fixpoint. Sound because any satisfying assignment must agree with
    /// every forced value; the full precondition is still evaluated later.
    fn forced_constants(&self) -> BTreeMap<String, u64> {
        let mut forced: BTreeMap<String, u64> = BTreeMap::new();
        let pre = match self.pre {
            Some(p) => p,
            None => return forced,
        };
        let f = self.lhs;
        let var_widths: BTreeMap<String, Width> = f
            .params
            .iter()
            .map(|p| (p.name.clone(), p.width))
            .collect();
        let sym_width: BTreeMap<String, Width> = f
            .params
            .iter()
            .filter(|p| crate::rules::is_sym_name(&p.name))
            .map(|p| (p.name.clone(), p.width))
            .collect();

        let mut conjuncts = Vec::new();
        collect_conjuncts(pre, &mut conjuncts);

        loop {
            let mut progress = false;
            for c in &conjuncts {
                if let PredExpr::Cmp(crate::rules::PredCmp::Eq, a, b) = c {
                    for (sym_side, expr_side) in [(a, b), (b, a)] {
                        let name = match sym_side.as_ref() {
                            PredExpr::Sym(s) => s,
                            _ => continue,
                        };
                        if forced.contains_key(name) {
                            continue;
                        }
                        let Some(&w) = sym_width.get(name) else { continue };
                        // Evaluate the other side with forced constants bound.
                        let syms: BTreeMap<String, Constant> = forced
                            .iter()
                            .filter_map(|(n, &v)| {
                                sym_width
                                    .get(n)
                                    .map(|&sw| (n.clone(), Constant { bits: v, width: sw }))
                            })
                            .collect();
                        if expr_side
                            .symbols()
                            .iter()
                            .any(|s| !forced.contains_key(s))
                        {
                            continue;
                        }
                        if let Some(v) = eval_expr_bits(expr_side, &syms, &var_widths, w) {
                            forced.insert(name.clone(), v & w.mask());
                            progress = true;
                        }
                    }
                }
            }
            if !progress {
                return forced;
            }
        }
    }

    /// Per-bit decomposition for purely bitwise rules: no precondition,
    /// only and/or/xor at one uniform width, literals limited to 0 and
    /// all-ones. Each output bit then depends only on the same input bit,
    /// and every bit position computes the same function, so a single
    /// 1-bit check decides the rule and a violating assignment broadcasts
    /// to a full-width counterexample.
    fn bitwise_eligible(&self) -> bool {
        if self.pre.is_some() {
            return false;
        }
        for f in [self.lhs, self.rhs] {
            let uniform = match f.uniform_width() {
                Some(w) => w,
                None => return false,
            };
            if uniform != self.width && !f.body.is_empty() {
                // Uniform but at a different width can't happen for rule
                // sides; be conservative.
                return false;
            }
            for inst in &f.body {
                if !matches!(inst.opcode, Opcode::And | Opcode::Or | Opcode::Xor) {
                    return false;
                }
                for op in &inst.operands {
                    if let Operand::Const(c) = op {
                        if c.bits != 0 && c.bits != c.width.mask() {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    fn run_bitwise(&self) -> Result<Verdict, VerifyError> {
        let one = Width::BOOL;
        let narrow = |f: &Function| f.with_uniform_width(one);
        let (l1, r1) = (narrow(self.lhs)?, narrow(self.rhs)?);
        let q = ExhaustiveQuery {
            lhs: &l1,
            rhs: &r1,
            pre: None,
            width: one,
        };
        match q.run(&BTreeMap::new())? {
            Verdict::Valid => Ok(Verdict::Valid),
            Verdict::Counterexample(c1) => {
                // Broadcast each 1-bit value across the full width and
                // replay to rebuild an honest counterexample.
                let w = self.width;
                let lift = |v: u64| if v & 1 == 1 { w.mask() } else { 0 };
                let assign: Vec<u64> = self
                    .lhs
                    .params
                    .iter()
                    .map(|p| {
                        let v = c1
                            .inputs
                            .get(&p.name)
                            .or_else(|| c1.constants.get(&p.name))
                            .copied()
                            .unwrap_or(0);
                        lift(v)
                    })
                    .collect();
                let lv = crate::ir::evaluate(self.lhs, &assign)?;
                let rv = crate::ir::evaluate(self.rhs, &assign)?;
                let component = refinement_violation(&lv, &rv).ok_or_else(|| {
                    VerifyError::Solver(
                        "per-bit counterexample failed to replay at full width".into(),
                    )
                })?;
                let (vars, consts) = split_params(self.lhs);
                Ok(Verdict::Counterexample(Cex {
                    width: w,
                    inputs: vars
                        .iter()
                        .map(|&i| (self.lhs.params[i].name.clone(), assign[i]))
                        .collect(),
                    constants: consts
                        .iter()
                        .map(|&i| (self.lhs.params[i].name.clone(), assign[i]))
                        .collect(),
                    lhs: lv,
                    rhs: rv,
                    component,
                }))
            }
        }
    }

    fn dispatch(&self) -> Result<Verdict, VerifyError> {
        let total: u32 = self.lhs.params.iter().map(|p| p.width.bits()).sum();
        if total <= EXHAUSTIVE_BUDGET_BITS {
            return self.run(&BTreeMap::new());
        }
        let forced = self.forced_constants();
        if !forced.is_empty() {
            let forced_bits: u32 = self
                .lhs
                .params
                .iter()
                .filter(|p| forced.contains_key(&p.name))
                .map(|p| p.width.bits())
                .sum();
            if total - forced_bits <= EXHAUSTIVE_BUDGET_BITS {
                return self.run(&forced);
            }
        }
        if self.bitwise_eligible() {
            return self.run_bitwise();
        }
        Err(VerifyError::TooLarge { bits: total })
    }
}

fn collect_conjuncts<'a>(p: &'a PredExpr, out: &mut Vec<&'a PredExpr>) {
    match p {
        PredExpr::AndAnd(a, b) => {
            collect_conjuncts(a, out);
            collect_conjuncts(b, out);
        }
        other => out.push(other),
    }
}

/// Evaluates a closed numeric precondition subexpression to the bits the
/// constant on the other side of `==` must carry at width `w`. Mirrors how
/// the full evaluator would align the comparison: a sized result must
/// already sit at `w`; an unsized result wraps to it.
fn eval_expr_bits(
    e: &PredExpr,
    syms: &BTreeMap<String, Constant>,
    var_widths: &BTreeMap<String, Width>,
    w: Width,
) -> Option<u64> {
    match crate::rules::eval_pv(e, syms, var_widths) {
        Ok(crate::rules::Pv::Sized(v, vw)) if vw == w => Some(v),
        Ok(crate::rules::Pv::Unsized(v)) => Some(crate::rules::wrap_i128(v, w)),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Public checks.

/// Checks that `rhs` refines `lhs` at every requested width: wherever `lhs`
/// is non-poison, `rhs` must be non-poison and equal, for all parameter
/// values (parameters paired positionally) and all constant bindings
/// satisfying `pre`. Parameters named like symbolic constants (`C`, `C1`,
/// ...) are treated as constants for precondition evaluation and
/// counterexample reporting.
///
/// Width-uniform pairs are re-instantiated at each requested width.
/// Mixed-width pairs (comparisons, casts) have no meaningful re-widthing
/// and are checked once, as given.
pub fn check_refinement(
    lhs: &Function,
    rhs: &Function,
    pre: Option<&PredExpr>,
    widths: &[Width],
    backend: &Backend,
) -> Result<Verdict, VerifyError> {
    if widths.is_empty() {
        return Err(VerifyError::EmptyWidths);
    }
    for (l, r, w) in instantiations(lhs, rhs, widths)? {
        let verdict = check_refinement_mono(&l, &r, pre, w, backend)?;
        if let Verdict::Counterexample(_) = verdict {
            return Ok(verdict);
        }
    }
    Ok(Verdict::Valid)
}

/// The concrete (lhs, rhs, width) triples a width-set request expands to:
/// uniform pairs per representable requested width, everything else once at
/// its native widths (labeled with the nearest meaningful width).
fn instantiations(
    lhs: &Function,
    rhs: &Function,
    widths: &[Width],
) -> Result<Vec<(Function, Function, Width)>, VerifyError> {
    check_signatures(lhs, rhs)?;
    let mut out = Vec::new();
    if lhs.uniform_width().is_some() && rhs.uniform_width().is_some() {
        for &w in widths {
            if let (Ok(l), Ok(r)) = (lhs.with_uniform_width(w), rhs.with_uniform_width(w)) {
                check_signatures(&l, &r)?;
                out.push((l, r, w));
            }
        }
    }
    if out.is_empty() {
        let label = lhs
            .uniform_width()
            .or_else(|| rhs.uniform_width())
            .or_else(|| lhs.params.first().map(|p| p.width))
            .or_else(|| lhs.returns.first().and_then(|r| lhs.value_width(r)))
            .unwrap_or(Width::BOOL);
        out.push((lhs.clone(), rhs.clone(), label));
    }
    Ok(out)
}

fn check_signatures(lhs: &Function, rhs: &Function) -> Result<(), VerifyError> {
    if lhs.params.len() != rhs.params.len() {
        return Err(VerifyError::SignatureMismatch(format!(
            "{} vs {} parameters",
            lhs.params.len(),
            rhs.params.len()
        )));
    }
    for (i, (a, b)) in lhs.params.iter().zip(&rhs.params).enumerate() {
        if a.width != b.width {
            return Err(VerifyError::SignatureMismatch(format!(
                "parameter {i} is {} on one side and {} on the other",
                a.width, b.width
            )));
        }
    }
    if lhs.returns.len() != rhs.returns.len() {
        return Err(VerifyError::SignatureMismatch(format!(
            "{} vs {} returned values",
            lhs.returns.len(),
            rhs.returns.len()
        )));
    }
    for (i, (a, b)) in lhs.returns.iter().zip(&rhs.returns).enumerate() {
        match (lhs.value_width(a), rhs.value_width(b)) {
            (Some(wa), Some(wb)) if wa == wb => {}
            (Some(wa), Some(wb)) => {
                return Err(VerifyError::SignatureMismatch(format!(
                    "returned value {i} is {wa} on one side and {wb} on the other"
                )))
            }
            _ => {
                return Err(VerifyError::SignatureMismatch(format!(
                    "returned value {i} is undefined on one side"
                )))
            }
        }
    }
    Ok(())
}

/// Re-widths both sides to `w` when they are uniform; a function already at
/// `w` (or empty-bodied) passes through. Mixed-width functions keep their
/// native widths — the caller's width request then only makes sense if it
/// matches, which `rewidth_pair` does not enforce beyond signature checks.
fn rewidth_pair(lhs: &Function, rhs: &Function, w: Width) -> Result<(Function, Function), VerifyError> {
    let l = match lhs.uniform_width() {
        Some(u) if u != w => lhs.with_uniform_width(w)?,
        _ => lhs.clone(),
    };
    let r = match rhs.uniform_width() {
        Some(u) if u != w => rhs.with_uniform_width(w)?,
        _ => rhs.clone(),
    };
    check_signatures(&l, &r)?;
    Ok((l, r))
}

/// Single-width refinement check; `lhs`/`rhs` are taken as-is.
fn check_refinement_mono(
    lhs: &Function,
    rhs: &Function,
    pre: Option<&PredExpr>,
    width: Width,
    backend: &Backend,
) -> Result<Verdict, VerifyError> {
    let q = ExhaustiveQuery {
        lhs,
        rhs,
        pre,
        width,
    };
    match backend {
        Backend::Exhaustive => q.dispatch(),
        Backend::Solver { cmd, timeout } => solver::check_with_solver(
            lhs, rhs, pre, width, cmd, *timeout,
        ),
    }
}

/// Verifies a rule at every admissible requested width. A rule with no
/// polymorphic values is checked once (its meaning does not depend on the
/// instantiation width).
pub fn verify_rule(
    rule: &Rule,
    widths: &[Width],
    backend: &Backend,
) -> Result<Verdict, VerifyError> {
    if widths.is_empty() {
        return Err(VerifyError::EmptyWidths);
    }
    let info = rule.width_info();
    if let Some(c) = &info.conflict {
        return Err(VerifyError::Ir(IrError::Eval(c.clone())));
    }
    let check_at = |w: Width| -> Result<Verdict, VerifyError> {
        let lhs = side_function(rule, true, w)?;
        let rhs = side_function(rule, false, w)?;
        check_refinement_mono(&lhs, &rhs, rule.pre.as_ref(), w, backend)
    };
    if !info.is_polymorphic() {
        let w = widths
            .iter()
            .copied()
            .find(|&w| info.admissible_at(w))
            .or_else(|| {
                (1..=64)
                    .filter_map(|b| Width::new(b).ok())
                    .find(|&w| info.admissible_at(w))
            })
            .ok_or(VerifyError::NoAdmissibleWidth)?;
        return check_at(w);
    }
    let admissible: Vec<Width> = widths
        .iter()
        .copied()
        .filter(|&w| info.admissible_at(w))
        .collect();
    if admissible.is_empty() {
        return Err(VerifyError::NoAdmissibleWidth);
    }
    for w in admissible {
        if let v @ Verdict::Counterexample(_) = check_at(w)? {
            return Ok(v);
        }
    }
    Ok(Verdict::Valid)
}

/// Translation validation: does `after` refine `before`, componentwise over
/// each returned value, for all inputs? Parameters pair positionally.
/// Uniform-width functions are re-widthed to each requested width;
/// mixed-width functions are checked once at their native widths.
pub fn validate_translation(
    before: &Function,
    after: &Function,
    widths: &[Width],
    backend: &Backend,
) -> Result<Verdict, VerifyError> {
    if widths.is_empty() {
        return Err(VerifyError::EmptyWidths);
    }
    for (b, a, w) in instantiations(before, after, widths)? {
        if let v @ Verdict::Counterexample(_) = check_refinement_mono(&b, &a, None, w, backend)? {
            return Ok(v);
        }
    }
    Ok(Verdict::Valid)
}

/// Adds as many nsw/nuw flags to the replacement as stay valid: subsets of
/// the addable flag positions are tried largest-first, so the first success
/// is maximal (no strict superset verifies). The rule must already be valid.
pub fn infer_flags(
    rule: &Rule,
    widths: &[Width],
    backend: &Backend,
) -> Result<Rule, VerifyError> {
    match verify_rule(rule, widths, backend)? {
        Verdict::Valid => {}
        Verdict::Counterexample(c) => {
            return Err(VerifyError::Solver(format!(
                "rule is invalid before flag inference: {c}"
            )))
        }
    }
    // Flag positions: (rhs instruction index, is_nuw).
    let mut positions: Vec<(usize, bool)> = Vec::new();
    for (i, inst) in rule.rhs.iter().enumerate() {
        if inst.opcode.accepts_flags() {
            if !inst.flags.nsw {
                positions.push((i, false));
            }
            if !inst.flags.nuw {
                positions.push((i, true));
            }
        }
    }
    if positions.is_empty() {
        return Ok(rule.clone());
    }
    let n = positions.len();
    let mut subsets: Vec<u32> = (0..(1u32 << n)).collect();
    subsets.sort_by_key(|s| (std::cmp::Reverse(s.count_ones()), *s));
    for subset in subsets {
        if subset == 0 {
            break; // the empty addition is the already-verified rule
        }
        let mut cand = rule.clone();
        for (k, &(i, is_nuw)) in positions.iter().enumerate() {
            if subset & (1 << k) != 0 {
                if is_nuw {
                    cand.rhs[i].flags.nuw = true;
                } else {
                    cand.rhs[i].flags.nsw = true;
                }
            }
        }
        if verify_rule(&cand, widths, backend)?.is_valid() {
            return Ok(cand);
        }
    }
    Ok(rule.clone())
}

/// Refinement restricted to fixed constant values: used by the
/// precondition-inference oracle, which sweeps every constant tuple.
pub(crate) fn refines_with_constants(
    lhs: &Function,
    rhs: &Function,
    fixed: &BTreeMap<String, u64>,
    width: Width,
) -> Result<bool, VerifyError> {
    let free_bits: u32 = lhs
        .params
        .iter()
        .filter(|p| !fixed.contains_key(&p.name))
        .map(|p| p.width.bits())
        .sum();
    if free_bits > EXHAUSTIVE_BUDGET_BITS {
        return Err(VerifyError::TooLarge { bits: free_bits });
    }
    let q = ExhaustiveQuery {
        lhs,
        rhs,
        pre: None,
        width,
    };
    Ok(q.run(fixed)?.is_valid())
}

/// Builds the two sides of a rule as standalone functions — exposed for
/// tests and the precondition-inference oracle.
pub fn rule_side_functions(rule: &Rule, w: Width) -> Result<(Function, Function), VerifyError> {
    Ok((side_function(rule, true, w)?, side_function(rule, false, w)?))
}

#[cfg(test)]
mod tests;
