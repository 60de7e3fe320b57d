//! Turning concrete rewrites into general, width-polymorphic rules.
//!
//! A discovered rewrite is completely specific: one pattern, one choice of
//! constants, one width. This module widens it in three steps and then maps
//! it back down:
//!
//! * [`abstract_constants`] replaces the literal constants of the pattern
//!   with symbolic constants and drops the width annotations, producing a
//!   rule template that is no longer tied to one instantiation.
//! * [`enumerate_valid_set`] is the ground-truth oracle: at a small width it
//!   sweeps every constant tuple and keeps exactly those for which the
//!   replacement refines the pattern with no precondition attached. Because
//!   ground truth is defined over refinement, tuples that make the pattern
//!   poison for every input are *inside* the valid set — refinement holds
//!   vacuously — so learned preconditions legitimately admit shift amounts
//!   at or beyond the width and other always-poison bindings.
//! * [`infer_precondition`] searches a small predicate grammar for the
//!   syntactically smallest formula whose satisfying set matches the oracle
//!   at a training width, cross-checks it at test widths, and re-verifies
//!   the finished rule with [`verify_rule`] — the learner is never trusted.
//! * [`specialize`] instantiates a general rule back to a monomorphic
//!   concrete one at a chosen width and constant binding, refusing bindings
//!   that violate the rule's precondition.
//!
//! Precondition learning is template enumeration against exact set
//! matching, not a data-driven CEGIS loop; the final re-verification step
//! means the simplification cannot produce an unsound rule. Fresh symbolic
//! constants on the right-hand side (replacement constants with no
//! counterpart in the pattern) are unsupported: such literals are kept
//! verbatim and flagged for manual review.

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{Constant, IrError, Width};
use crate::rules::{eval_precondition, PredBinOp, PredCmp, PredExpr, RInst, ROperand, Rule};
use crate::verify::{
    refines_with_constants, rule_side_functions, verify_rule, Backend, Verdict, VerifyError,
};

#[cfg(test)]
mod tests;

/// Hard cap on the constant sweep: the product of symbol count and width
/// must stay within this many bits, so the tuple grid has at most 2^20
/// entries.
pub const ORACLE_BUDGET_BITS: u32 = 20;

/// Upper bound on conjunction length in learned preconditions.
pub const MAX_CONJUNCTS: usize = 3;
/// Upper bound on disjunct count in learned preconditions.
pub const MAX_DISJUNCTS: usize = 3;

// Deterministic effort caps for the formula search. They are far above
// what realistic rules need; hitting one degrades gracefully toward the
// fallback (a sound conjunction) rather than failing.
const MAX_STORED_CONJUNCTIONS: usize = 200_000;
const MAX_COVER_NODES: usize = 500_000;

/// Errors from generalization, oracle enumeration, inference, and
/// specialization.
#[derive(Debug, thiserror::Error)]
pub enum GeneralizeError {
    /// `abstract_constants` expects a concrete rule; this one already
    /// mentions a symbolic constant.
    #[error("rule already contains symbolic constant {0}; expected a concrete rule")]
    AlreadySymbolic(String),
    /// The constant sweep would exceed the oracle budget.
    #[error(
        "sweeping {symbols} symbolic constants at width {width} needs {bits} bits, \
         over the {ORACLE_BUDGET_BITS}-bit oracle budget"
    )]
    Budget {
        symbols: usize,
        width: Width,
        bits: u32,
    },
    /// A symbolic constant was left unbound by a specialization binding.
    #[error("binding leaves symbolic constant {0} unbound")]
    UnboundSymbol(String),
    /// A binding value does not fit in the instantiation width.
    #[error("binding value {value} for {symbol} does not fit in {width}")]
    OutOfRange {
        symbol: String,
        value: u64,
        width: Width,
    },
    /// The requested specialization binding fails the rule's precondition.
    #[error("binding {0} violates the rule precondition")]
    PreconditionViolated(String),
    /// The rule is not valid for every input at some checked width and has
    /// no symbolic constants, so no precondition can repair it.
    #[error("rule is not unconditionally valid at width {0} and has no symbolic constants to condition on")]
    NoSymbols(Width),
    /// The selected precondition failed the final re-verification — a bug
    /// guard, not an expected outcome.
    #[error("inferred precondition failed re-verification at width {0}; refusing to emit it")]
    ReverifyFailed(Width),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

// ---------------------------------------------------------------------------
// Constant abstraction.

/// A generalized rule together with the binding that recovers the concrete
/// one and any review notes produced along the way.
#[derive(Debug, Clone)]
pub struct Generalized {
    /// The abstracted rule: symbolic constants, no width annotations, no
    /// precondition.
    pub rule: Rule,
    /// Original literal value of each introduced symbol — specializing the
    /// rule with this binding at the original width recovers the input.
    pub binding: BTreeMap<String, i128>,
    /// Human-readable notes: literals kept verbatim, degenerate inputs.
    pub notes: Vec<String>,
}

/// Replaces each distinct literal constant on the pattern side with a fresh
/// symbolic constant (`C1`, `C2`, … in first-occurrence order), rewrites
/// replacement-side literals that textually equal a pattern literal to the
/// matching symbol, and strips all width annotations and variable width
/// pins. The result carries no precondition; pair it with
/// [`infer_precondition`] to learn one.
///
/// A rule with no pattern literals is returned unchanged with a note. A
/// replacement literal with no pattern counterpart is kept verbatim and
/// flagged for manual review — inventing fresh replacement-side symbols is
/// out of scope.
pub fn abstract_constants(concrete: &Rule) -> Result<Generalized, GeneralizeError> {
    for inst in concrete.lhs.iter().chain(&concrete.rhs) {
        for op in &inst.operands {
            if let ROperand::Sym(s) = op {
                return Err(GeneralizeError::AlreadySymbolic(s.clone()));
            }
        }
    }
    if let Some(ROperand::Sym(s)) = &concrete.rhs_alias {
        return Err(GeneralizeError::AlreadySymbolic(s.clone()));
    }

    // Distinct pattern literals, first-occurrence order.
    let mut order: Vec<i128> = Vec::new();
    for inst in &concrete.lhs {
        for op in &inst.operands {
            if let ROperand::Literal(v) = op {
                if !order.contains(v) {
                    order.push(*v);
                }
            }
        }
    }
    if order.is_empty() {
        return Ok(Generalized {
            rule: concrete.clone(),
            binding: BTreeMap::new(),
            notes: vec![
                "no literal constants on the pattern side; rule left unchanged".to_string()
            ],
        });
    }

    let symbol_of: BTreeMap<i128, String> = order
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, format!("C{}", i + 1)))
        .collect();
    let binding: BTreeMap<String, i128> =
        order.iter().map(|&v| (symbol_of[&v].clone(), v)).collect();

    let mut orphans: Vec<i128> = Vec::new();
    let mut abstract_op = |op: &ROperand, rhs: bool| match op {
        ROperand::Literal(v) => match symbol_of.get(v) {
            Some(s) => ROperand::Sym(s.clone()),
            None => {
                if rhs && !orphans.contains(v) {
                    orphans.push(*v);
                }
                op.clone()
            }
        },
        other => other.clone(),
    };

    let mut map_inst = |inst: &RInst, rhs: bool| RInst {
        result: inst.result.clone(),
        opcode: inst.opcode,
        flags: inst.flags,
        ann: None,
        operands: inst.operands.iter().map(|op| abstract_op(op, rhs)).collect(),
    };

    let lhs: Vec<RInst> = concrete.lhs.iter().map(|i| map_inst(i, false)).collect();
    let rhs: Vec<RInst> = concrete.rhs.iter().map(|i| map_inst(i, true)).collect();
    let rhs_alias = concrete.rhs_alias.as_ref().map(|a| abstract_op(a, true));

    let notes = orphans
        .into_iter()
        .map(|v| {
            format!(
                "replacement keeps literal {v}: no matching pattern constant to abstract \
                 (fresh replacement-side symbols are unsupported); review manually"
            )
        })
        .collect();

    Ok(Generalized {
        rule: Rule {
            name: concrete.name.clone(),
            pre: None,
            lhs,
            rhs,
            rhs_alias,
            var_constraints: BTreeMap::new(),
        },
        binding,
        notes,
    })
}

// ---------------------------------------------------------------------------
// Ground-truth oracle.

/// The exact set of constant tuples (in [`Rule::sym_consts`] order) for
/// which the replacement refines the pattern at one width, precondition
/// ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidSet {
    /// Symbol names, fixing the tuple component order.
    pub symbols: Vec<String>,
    pub width: Width,
    pub tuples: BTreeSet<Vec<u64>>,
}

impl ValidSet {
    pub fn contains(&self, tuple: &[u64]) -> bool {
        self.tuples.contains(tuple)
    }
}

/// Sweeps every assignment of the rule's symbolic constants at `width` and
/// collects exactly those for which refinement holds, checking each
/// assignment exhaustively over the pattern inputs. Any precondition on the
/// rule is deliberately ignored — this is the ground truth a precondition
/// is learned *from*. Tuples that make the pattern poison on every input
/// are valid (refinement is vacuous) and are included.
pub fn enumerate_valid_set(general: &Rule, width: Width) -> Result<ValidSet, GeneralizeError> {
    let (grid, bits) = oracle_bits(general, width)?;
    let tuples = (0..grid.len())
        .filter(|&i| bits.get(i))
        .map(|i| grid.tuple(i))
        .collect();
    Ok(ValidSet {
        symbols: grid.symbols,
        width,
        tuples,
    })
}

/// Tuple grid: all assignments of `symbols` at `width`, indexed row-major
/// with the first symbol most significant.
#[derive(Debug, Clone)]
struct Grid {
    symbols: Vec<String>,
    width: Width,
    len: usize,
}

impl Grid {
    fn new(symbols: Vec<String>, width: Width) -> Result<Grid, GeneralizeError> {
        let bits = symbols.len() as u32 * width.bits();
        if bits > ORACLE_BUDGET_BITS {
            return Err(GeneralizeError::Budget {
                symbols: symbols.len(),
                width,
                bits,
            });
        }
        Ok(Grid {
            symbols,
            width,
            len: 1usize << bits,
        })
    }

    fn len(&self) -> usize {
        self.len
    }

    fn tuple(&self, mut idx: usize) -> Vec<u64> {
        let b = self.width.bits();
        let mask = self.width.mask();
        let mut out = vec![0u64; self.symbols.len()];
        for slot in out.iter_mut().rev() {
            *slot = idx as u64 & mask;
            idx >>= b;
        }
        out
    }

    /// Constants map for one tuple; `widths` aligns with `symbols`.
    fn constants(&self, idx: usize, widths: &[Width]) -> BTreeMap<String, Constant> {
        self.tuple(idx)
            .into_iter()
            .zip(self.symbols.iter().zip(widths))
            .map(|(v, (name, &w))| (name.clone(), Constant::from_bits(v, w)))
            .collect()
    }
}

fn sym_widths(rule: &Rule, symbols: &[String], w: Width) -> Vec<Width> {
    let info = rule.width_info();
    symbols
        .iter()
        .map(|s| info.sym_width(s, w).unwrap_or(w))
        .collect()
}

/// Valid set as a bitset over the grid.
fn oracle_bits(general: &Rule, width: Width) -> Result<(Grid, Bits), GeneralizeError> {
    let grid = Grid::new(general.sym_consts(), width)?;
    let (lhs, rhs) = rule_side_functions(general, width)?;
    let mut bits = Bits::empty(grid.len());
    for idx in 0..grid.len() {
        let fixed: BTreeMap<String, u64> = grid
            .symbols
            .iter()
            .cloned()
            .zip(grid.tuple(idx))
            .collect();
        if refines_with_constants(&lhs, &rhs, &fixed, width)? {
            bits.set(idx);
        }
    }
    Ok((grid, bits))
}

// ---------------------------------------------------------------------------
// Bitsets over tuple grids.

#[derive(Debug, Clone, PartialEq, Eq)]
struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    fn empty(len: usize) -> Bits {
        Bits {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    fn full(len: usize) -> Bits {
        let mut b = Bits {
            words: vec![u64::MAX; len.div_ceil(64)],
            len,
        };
        let extra = b.words.len() * 64 - len;
        if extra > 0 {
            if let Some(last) = b.words.last_mut() {
                *last &= u64::MAX >> extra;
            }
        }
        b
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    fn is_full(&self) -> bool {
        self.count() == self.len
    }

    fn and(&self, o: &Bits) -> Bits {
        Bits {
            words: self.words.iter().zip(&o.words).map(|(a, b)| a & b).collect(),
            len: self.len,
        }
    }

    fn or_assign(&mut self, o: &Bits) {
        for (a, b) in self.words.iter_mut().zip(&o.words) {
            *a |= b;
        }
    }

    fn subset_of(&self, o: &Bits) -> bool {
        self.words.iter().zip(&o.words).all(|(a, b)| a & !b == 0)
    }

    /// First index set in `self` but not in `cover`.
    fn first_uncovered(&self, cover: &Bits) -> Option<usize> {
        for (i, (a, b)) in self.words.iter().zip(&cover.words).enumerate() {
            let diff = a & !b;
            if diff != 0 {
                return Some(i * 64 + diff.trailing_zeros() as usize);
            }
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Precondition inference.

/// Soundness/weakness of one candidate precondition at one checked width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidthQuality {
    pub width: Width,
    /// Every satisfying tuple is in the valid set (pre ⇒ valid).
    pub sound: bool,
    /// The satisfying set *equals* the valid set.
    pub weakest: bool,
}

/// Quality report accompanying an inferred precondition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceReport {
    pub train_width: Width,
    /// Satisfying set equals the oracle set at the training width.
    pub exact_at_train: bool,
    /// Per-width quality, training width first, then each test width.
    pub quality: Vec<WidthQuality>,
    pub sound_at_all_tested: bool,
    pub weakest_at_all_tested: bool,
    /// No grammar formula was exact at the training width *and* sound at
    /// every test width; the result is the best sound conjunction instead.
    pub fallback: bool,
    /// The rule, with this precondition attached, passed `verify_rule` at
    /// every checked width.
    pub reverified: bool,
}

/// An inferred precondition (`None` means unconditionally valid — the empty
/// precondition "true") plus its quality report.
#[derive(Debug, Clone)]
pub struct Inference {
    pub pre: Option<PredExpr>,
    pub report: InferenceReport,
}

/// Learns a precondition for `general` from exhaustive ground truth.
///
/// The search enumerates a fixed grammar — atoms `Ci == literal`,
/// `Ci == Cj`, `Ci == width(%x) - 1`, `Ci + Cj == width(%x)`, relational
/// comparisons of `Ci` against literals, `isPowerOf2(Ci)`, and
/// `Ci & Cj == 0`, in disjunctive normal form up to [`MAX_CONJUNCTS`] atoms
/// per conjunction and [`MAX_DISJUNCTS`] disjuncts — for the syntactically
/// smallest formula whose satisfying set equals the oracle set at
/// `train_width` while staying sound at every width in `test_widths`.
/// Literals are drawn from the values observed in the valid set plus a few
/// landmarks, each in both its non-negative and its negative spelling: the
/// two coincide at the training width but wrap differently at larger ones,
/// so the cross-width check can pick whichever spelling stays sound.
///
/// If no formula is exact-at-train and sound-at-all-tested, the weakest
/// sound conjunction found serves as a fallback and the report marks it
/// (`fallback: true`, and typically `weakest_at_all_tested: false`).
/// Whatever is selected, the rule is re-verified with the precondition
/// attached at every checked width before being returned — a failed
/// re-verification is an error, never a silently unsound result.
pub fn infer_precondition(
    general: &Rule,
    train_width: Width,
    test_widths: &[Width],
) -> Result<Inference, GeneralizeError> {
    let symbols = general.sym_consts();
    let mut widths = vec![train_width];
    widths.extend(test_widths.iter().copied());

    // Ground truth at every width up front (also surfaces budget errors).
    let mut grids = Vec::new();
    let mut truth = Vec::new();
    for &w in &widths {
        let (g, b) = oracle_bits(general, w)?;
        grids.push(g);
        truth.push(b);
    }
    let t_train = &truth[0];

    // Degenerate shapes first.
    if symbols.is_empty() {
        // Nothing to condition on: the rule must already hold everywhere.
        for (i, t) in truth.iter().enumerate() {
            if !t.is_full() {
                return Err(GeneralizeError::NoSymbols(widths[i]));
            }
        }
        let report = finish_report(general, &widths, &truth, &None, false)?;
        return Ok(Inference { pre: None, report });
    }
    if t_train.is_empty() {
        // Never valid at the training width: the only exact precondition is
        // a contradiction, which the grammar spells as an impossible
        // comparison. It is sound everywhere (vacuously).
        let pre = Some(cmp(PredCmp::Ult, sym(&symbols[0]), lit(0)));
        let report = finish_report(general, &widths, &truth, &pre, false)?;
        return Ok(Inference { pre, report });
    }
    if truth.iter().all(Bits::is_full) {
        // Unconditionally valid everywhere checked: "true" is exact and
        // weakest at every width.
        let report = finish_report(general, &widths, &truth, &None, false)?;
        return Ok(Inference { pre: None, report });
    }

    let pool = atom_pool(general, &symbols, &grids, t_train);
    let conjs = conjunctions(&pool, t_train, &truth);
    let best = best_cover(t_train, &conjs, &truth, &pool);

    let (pre, fallback) = match best {
        Some(cover) => (Some(cover_expr(&cover, &conjs, &pool)), false),
        None => (
            Some(fallback_conjunction(&symbols, &conjs, &pool, &truth)),
            true,
        ),
    };
    let report = finish_report(general, &widths, &truth, &pre, fallback)?;
    Ok(Inference { pre, report })
}

/// Evaluates the final formula's satisfying set at every width by direct
/// predicate evaluation (independent of the search's bitset algebra),
/// builds the quality report, and re-verifies the rule with the
/// precondition attached.
fn finish_report(
    general: &Rule,
    widths: &[Width],
    truth: &[Bits],
    pre: &Option<PredExpr>,
    fallback: bool,
) -> Result<InferenceReport, GeneralizeError> {
    let symbols = general.sym_consts();
    let mut quality = Vec::new();
    for (i, &w) in widths.iter().enumerate() {
        let grid = Grid::new(symbols.clone(), w)?;
        let sw = sym_widths(general, &grid.symbols, w);
        let var_widths = general.var_widths(w);
        let mut sat = match pre {
            None => Bits::full(grid.len()),
            Some(_) => Bits::empty(grid.len()),
        };
        if let Some(p) = pre {
            for idx in 0..grid.len() {
                let syms = grid.constants(idx, &sw);
                if eval_precondition(p, &syms, &var_widths)? {
                    sat.set(idx);
                }
            }
        }
        quality.push(WidthQuality {
            width: w,
            sound: sat.subset_of(&truth[i]),
            weakest: sat == truth[i],
        });
    }

    // Never trust the learner: check the assembled rule end to end.
    let mut attached = general.clone();
    attached.pre = pre.clone();
    match verify_rule(&attached, widths, &Backend::Exhaustive)? {
        Verdict::Valid => {}
        Verdict::Counterexample(cex) => {
            return Err(GeneralizeError::ReverifyFailed(cex.width));
        }
    }

    Ok(InferenceReport {
        train_width: widths[0],
        exact_at_train: quality[0].weakest,
        sound_at_all_tested: quality.iter().all(|q| q.sound),
        weakest_at_all_tested: quality.iter().all(|q| q.weakest),
        quality,
        fallback,
        reverified: true,
    })
}

/// One grammar atom with its satisfying bitset at every checked width.
struct Atom {
    expr: PredExpr,
    text: String,
    sats: Vec<Bits>,
}

fn sym(name: &str) -> PredExpr {
    PredExpr::Sym(name.to_string())
}

fn lit(v: i128) -> PredExpr {
    PredExpr::Lit(v)
}

fn cmp(op: PredCmp, a: PredExpr, b: PredExpr) -> PredExpr {
    PredExpr::Cmp(op, Box::new(a), Box::new(b))
}

/// Builds the deduplicated atom pool with satisfying bitsets at every
/// checked width. Atoms empty or full at the training width cannot appear
/// in an exact cover (conjunction members must narrow the satisfying set,
/// disjuncts must contribute tuples) and are dropped; atoms with identical
/// satisfying sets at *every* width are interchangeable, so only the
/// smallest spelling survives.
fn atom_pool(general: &Rule, symbols: &[String], grids: &[Grid], t_train: &Bits) -> Vec<Atom> {
    let rep_var = general.free_vars().into_iter().next();
    let train = &grids[0];
    let wt = train.width;

    // Literal pool: values each symbol takes inside the training valid set
    // plus a few landmarks (zero, one, two, the width and its neighbours,
    // the sign bit, all-ones). Each value is spelled both non-negatively
    // and as its negative alias.
    let mask = wt.mask();
    let mut base: BTreeSet<u64> = BTreeSet::new();
    for idx in 0..train.len() {
        if t_train.get(idx) {
            for v in train.tuple(idx) {
                base.insert(v);
            }
        }
    }
    base.extend([0, 1, 2]);
    base.insert(wt.bits() as u64 - 1);
    base.insert(wt.bits() as u64 & mask);
    base.insert((wt.bits() as u64 + 1) & mask);
    base.insert(1 << (wt.bits() - 1));
    base.insert(mask);
    let mut literals: BTreeSet<i128> = BTreeSet::new();
    for &v in &base {
        literals.insert(v as i128);
        literals.insert(v as i128 - (1i128 << wt.bits()));
    }

    let mut exprs: Vec<PredExpr> = Vec::new();
    for s in symbols {
        for &l in &literals {
            exprs.push(cmp(PredCmp::Eq, sym(s), lit(l)));
            exprs.push(cmp(PredCmp::Ne, sym(s), lit(l)));
            exprs.push(cmp(PredCmp::Ult, sym(s), lit(l)));
            exprs.push(cmp(PredCmp::Ult, lit(l), sym(s)));
            exprs.push(cmp(PredCmp::Slt, sym(s), lit(l)));
            exprs.push(cmp(PredCmp::Slt, lit(l), sym(s)));
        }
        exprs.push(PredExpr::IsPow2(Box::new(sym(s))));
        if let Some(v) = &rep_var {
            exprs.push(cmp(
                PredCmp::Eq,
                sym(s),
                PredExpr::Bin(
                    PredBinOp::Sub,
                    Box::new(PredExpr::WidthOf(v.clone())),
                    Box::new(lit(1)),
                ),
            ));
        }
    }
    for i in 0..symbols.len() {
        for j in i + 1..symbols.len() {
            exprs.push(cmp(PredCmp::Eq, sym(&symbols[i]), sym(&symbols[j])));
            exprs.push(cmp(
                PredCmp::Eq,
                PredExpr::Bin(
                    PredBinOp::And,
                    Box::new(sym(&symbols[i])),
                    Box::new(sym(&symbols[j])),
                ),
                lit(0),
            ));
        }
        if let Some(v) = &rep_var {
            for j in i..symbols.len() {
                exprs.push(cmp(
                    PredCmp::Eq,
                    PredExpr::Bin(
                        PredBinOp::Add,
                        Box::new(sym(&symbols[i])),
                        Box::new(sym(&symbols[j])),
                    ),
                    PredExpr::WidthOf(v.clone()),
                ));
            }
        }
    }

    // Satisfying sets. Atoms over a single symbol are evaluated once per
    // symbol *value* and broadcast over the grid through per-component
    // masks; only the handful of multi-symbol atoms pay a full grid sweep.
    let mut sats: Vec<Vec<Bits>> = exprs.iter().map(|_| Vec::new()).collect();
    let mut alive = vec![true; exprs.len()];
    let atom_syms: Vec<Vec<String>> = exprs.iter().map(|e| e.symbols()).collect();
    for grid in grids {
        let sw = sym_widths(general, &grid.symbols, grid.width);
        let var_widths = general.var_widths(grid.width);
        let b = grid.width.bits() as usize;
        let values = 1usize << b;
        let k = grid.symbols.len();

        // component_masks[i][v]: tuples whose i-th component equals v.
        let mut component_masks: Vec<Vec<Bits>> = (0..k)
            .map(|_| (0..values).map(|_| Bits::empty(grid.len())).collect())
            .collect();
        for idx in 0..grid.len() {
            let mut rest = idx;
            for i in (0..k).rev() {
                component_masks[i][rest & (values - 1)].set(idx);
                rest >>= b;
            }
        }

        for (e, expr) in exprs.iter().enumerate() {
            if !alive[e] {
                continue;
            }
            let names = &atom_syms[e];
            let mut bits = Bits::empty(grid.len());
            if let [name] = names.as_slice() {
                let i = grid.symbols.iter().position(|s| s == name).unwrap();
                for v in 0..values {
                    let mut syms = BTreeMap::new();
                    syms.insert(name.clone(), Constant::from_bits(v as u64, sw[i]));
                    match eval_precondition(expr, &syms, &var_widths) {
                        Ok(true) => bits.or_assign(&component_masks[i][v]),
                        Ok(false) => {}
                        Err(_) => {
                            alive[e] = false;
                            break;
                        }
                    }
                }
            } else {
                for idx in 0..grid.len() {
                    let syms = grid.constants(idx, &sw);
                    match eval_precondition(expr, &syms, &var_widths) {
                        Ok(true) => bits.set(idx),
                        Ok(false) => {}
                        Err(_) => {
                            alive[e] = false;
                            break;
                        }
                    }
                }
            }
            sats[e].push(bits);
        }
    }

    let mut pool: Vec<Atom> = Vec::new();
    let mut seen: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    for ((expr, sats), ok) in exprs.into_iter().zip(sats).zip(alive) {
        if !ok || sats[0].is_empty() || sats[0].is_full() {
            continue;
        }
        let key: Vec<u64> = sats.iter().flat_map(|b| b.words.iter().copied()).collect();
        let text = expr.to_string();
        match seen.get(&key) {
            Some(&i) => {
                if (text.len(), &text) < (pool[i].text.len(), &pool[i].text) {
                    pool[i] = Atom { expr, text, sats };
                }
            }
            None => {
                seen.insert(key, pool.len());
                pool.push(Atom { expr, text, sats });
            }
        }
    }
    pool.sort_by(|a, b| (a.text.len(), &a.text).cmp(&(b.text.len(), &b.text)));
    pool
}

/// A conjunction of pool atoms with its per-width satisfying sets.
struct Conj {
    atoms: Vec<usize>,
    sats: Vec<Bits>,
    /// Satisfying set inside the valid set at every checked width. Only
    /// portable conjunctions can appear in a sound formula: a union of
    /// disjuncts stays inside the valid set exactly when each disjunct
    /// does.
    portable: bool,
}

impl Conj {
    fn text(&self, pool: &[Atom]) -> String {
        self.atoms
            .iter()
            .map(|&a| pool[a].text.clone())
            .collect::<Vec<_>>()
            .join(" && ")
    }

    fn expr(&self, pool: &[Atom]) -> PredExpr {
        let mut it = self.atoms.iter().map(|&a| pool[a].expr.clone());
        let first = it.next().expect("conjunction is never empty");
        it.fold(first, |acc, e| PredExpr::AndAnd(Box::new(acc), Box::new(e)))
    }
}

/// Enumerates conjunctions of up to [`MAX_CONJUNCTS`] atoms. Each added
/// atom must strictly shrink the training satisfying set (otherwise it is
/// redundant there), conjunctions sharing no tuple with the valid set are
/// dropped (they can neither join a cover nor serve as a sound fallback),
/// and conjunctions already inside the training valid set are not extended
/// — a shrunken child can always be replaced by its parent in a union.
fn conjunctions(pool: &[Atom], t_train: &Bits, truth: &[Bits]) -> Vec<Conj> {
    let build = |atoms: Vec<usize>, sats: Vec<Bits>| {
        let portable = sats.iter().zip(truth).all(|(s, t)| s.subset_of(t));
        Conj {
            atoms,
            sats,
            portable,
        }
    };
    let mut out: Vec<Conj> = (0..pool.len())
        .map(|a| build(vec![a], pool[a].sats.clone()))
        .collect();
    let mut frontier = 0..out.len();
    for _ in 2..=MAX_CONJUNCTS {
        let mut next: Vec<Conj> = Vec::new();
        'outer: for ci in frontier.clone() {
            if out[ci].sats[0].subset_of(t_train) {
                continue;
            }
            let start = out[ci].atoms.last().copied().unwrap_or(0) + 1;
            for b in start..pool.len() {
                if out.len() + next.len() >= MAX_STORED_CONJUNCTIONS {
                    break 'outer;
                }
                let train = out[ci].sats[0].and(&pool[b].sats[0]);
                if train.count() >= out[ci].sats[0].count() || train.and(t_train).is_empty() {
                    continue;
                }
                let sats: Vec<Bits> = out[ci]
                    .sats
                    .iter()
                    .zip(&pool[b].sats)
                    .map(|(x, y)| x.and(y))
                    .collect();
                let mut atoms = out[ci].atoms.clone();
                atoms.push(b);
                next.push(build(atoms, sats));
            }
        }
        let lo = out.len();
        out.extend(next);
        frontier = lo..out.len();
    }
    out
}

/// Rank of a finished cover: weakest-everywhere first, then fewer
/// disjuncts, fewer atoms, shorter text.
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct CoverRank {
    not_weakest: bool,
    disjuncts: usize,
    atoms: usize,
    text_len: usize,
    text: String,
}

/// Finds the best union of at most [`MAX_DISJUNCTS`] portable conjunctions
/// that exactly equals the training valid set. Every disjunct is portable,
/// so any exact cover is automatically sound at every checked width; the
/// rank then prefers covers that are *weakest* everywhere, then smaller
/// ones. Canonical DFS: each chosen disjunct must cover the first currently
/// uncovered tuple, which prunes permutations of the same cover.
fn best_cover(t_train: &Bits, conjs: &[Conj], truth: &[Bits], pool: &[Atom]) -> Option<Vec<usize>> {
    let mut candidates: Vec<usize> = (0..conjs.len())
        .filter(|&c| conjs[c].portable && !conjs[c].sats[0].is_empty())
        .collect();
    candidates.sort_by_key(|&c| std::cmp::Reverse(conjs[c].sats[0].count()));

    struct Search<'s> {
        t: &'s Bits,
        conjs: &'s [Conj],
        truth: &'s [Bits],
        pool: &'s [Atom],
        candidates: Vec<usize>,
        nodes: usize,
        best: Option<(CoverRank, Vec<usize>)>,
    }

    impl Search<'_> {
        fn dfs(&mut self, covered: &Bits, stack: &mut Vec<usize>) {
            self.nodes += 1;
            if self.nodes > MAX_COVER_NODES {
                return;
            }
            let Some(u) = self.t.first_uncovered(covered) else {
                let sats = cover_sats(stack, self.conjs, self.truth);
                let weakest_all = sats.iter().zip(self.truth).all(|(s, t)| s == t);
                let text = cover_text(stack, self.conjs, self.pool);
                let rank = CoverRank {
                    not_weakest: !weakest_all,
                    disjuncts: stack.len(),
                    atoms: stack.iter().map(|&c| self.conjs[c].atoms.len()).sum(),
                    text_len: text.len(),
                    text,
                };
                let better = match &self.best {
                    None => true,
                    Some((b, _)) => rank < *b,
                };
                if better {
                    self.best = Some((rank, stack.clone()));
                }
                return;
            };
            if stack.len() == MAX_DISJUNCTS {
                return;
            }
            for i in 0..self.candidates.len() {
                let c = self.candidates[i];
                if !self.conjs[c].sats[0].get(u) || stack.contains(&c) {
                    continue;
                }
                let mut next = covered.clone();
                next.or_assign(&self.conjs[c].sats[0]);
                stack.push(c);
                self.dfs(&next, stack);
                stack.pop();
                if self.nodes > MAX_COVER_NODES {
                    return;
                }
            }
        }
    }

    let mut search = Search {
        t: t_train,
        conjs,
        truth,
        pool,
        candidates,
        nodes: 0,
        best: None,
    };
    search.dfs(&Bits::empty(t_train.len), &mut Vec::new());
    search.best.map(|(_, cover)| cover)
}

fn cover_sats(cover: &[usize], conjs: &[Conj], truth: &[Bits]) -> Vec<Bits> {
    (0..truth.len())
        .map(|w| {
            let mut acc = Bits::empty(truth[w].len);
            for &c in cover {
                acc.or_assign(&conjs[c].sats[w]);
            }
            acc
        })
        .collect()
}

fn ordered_disjuncts<'c>(cover: &[usize], conjs: &'c [Conj], pool: &[Atom]) -> Vec<&'c Conj> {
    let mut ds: Vec<&Conj> = cover.iter().map(|&c| &conjs[c]).collect();
    ds.sort_by_key(|c| {
        let t = c.text(pool);
        (c.atoms.len(), t.len(), t)
    });
    ds
}

fn cover_text(cover: &[usize], conjs: &[Conj], pool: &[Atom]) -> String {
    ordered_disjuncts(cover, conjs, pool)
        .iter()
        .map(|c| c.text(pool))
        .collect::<Vec<_>>()
        .join(" || ")
}

fn cover_expr(cover: &[usize], conjs: &[Conj], pool: &[Atom]) -> PredExpr {
    let mut it = ordered_disjuncts(cover, conjs, pool)
        .into_iter()
        .map(|c| c.expr(pool));
    let first = it.next().expect("cover is never empty");
    it.fold(first, |acc, e| PredExpr::OrOr(Box::new(acc), Box::new(e)))
}

/// Fallback when no exact cover exists: the portable conjunction covering
/// the most training tuples — the weakest sound conjunction available.
/// With nothing non-empty to offer, a contradiction is still sound.
fn fallback_conjunction(
    symbols: &[String],
    conjs: &[Conj],
    pool: &[Atom],
    truth: &[Bits],
) -> PredExpr {
    let _ = truth;
    let mut best: Option<(usize, usize, String, usize)> = None;
    for (ci, conj) in conjs.iter().enumerate() {
        if !conj.portable || conj.sats[0].is_empty() {
            continue;
        }
        let text = conj.text(pool);
        let key = (usize::MAX - conj.sats[0].count(), text.len(), text);
        let better = match &best {
            None => true,
            Some((c, l, t, _)) => (key.0, key.1, &key.2) < (*c, *l, t),
        };
        if better {
            best = Some((key.0, key.1, key.2, ci));
        }
    }
    match best {
        Some((_, _, _, ci)) => conjs[ci].expr(pool),
        None => cmp(PredCmp::Ult, sym(&symbols[0]), lit(0)),
    }
}

// ---------------------------------------------------------------------------
// Specialization.

/// Instantiates a general rule at one width and constant binding, producing
/// a monomorphic concrete rule: symbols become literals (spelled with
/// minimal magnitude, so all-ones prints as -1), every instruction gets a
/// width annotation, and the precondition — checked against the binding
/// first — is consumed.
pub fn specialize(
    general: &Rule,
    binding: &BTreeMap<String, u64>,
    width: Width,
) -> Result<Rule, GeneralizeError> {
    let symbols = general.sym_consts();
    let info = general.width_info();
    let mut syms: BTreeMap<String, Constant> = BTreeMap::new();
    for s in &symbols {
        let w = info.sym_width(s, width).unwrap_or(width);
        match binding.get(s) {
            None => return Err(GeneralizeError::UnboundSymbol(s.clone())),
            Some(&v) if v > w.mask() => {
                return Err(GeneralizeError::OutOfRange {
                    symbol: s.clone(),
                    value: v,
                    width: w,
                })
            }
            Some(&v) => {
                syms.insert(s.clone(), Constant::from_bits(v, w));
            }
        }
    }

    if let Some(pre) = &general.pre {
        if !eval_precondition(pre, &syms, &general.var_widths(width))? {
            let shown = syms
                .iter()
                .map(|(k, c)| format!("{k} = {}", c.bits))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(GeneralizeError::PreconditionViolated(shown));
        }
    }

    // Literal spelling: prefer the signed form when it is strictly smaller
    // in magnitude (all-ones at i8 prints as -1, not 255).
    let spell = |c: Constant| -> i128 {
        let unsigned = c.bits as i128;
        let signed = c.as_signed() as i128;
        if signed < 0 && signed.unsigned_abs() < unsigned.unsigned_abs() {
            signed
        } else {
            unsigned
        }
    };
    let subst_op = |op: &ROperand| match op {
        ROperand::Sym(s) => ROperand::Literal(spell(syms[s])),
        other => other.clone(),
    };
    let subst_inst = |inst: &RInst| {
        let ann = match inst.opcode {
            // An icmp's printed width is its operand width.
            crate::ir::Opcode::Icmp(_) => inst
                .operands
                .iter()
                .find_map(|op| match op {
                    ROperand::Value(v) => general.value_width(v, width),
                    _ => None,
                })
                .or(Some(width)),
            _ => general.value_width(&inst.result, width).or(Some(width)),
        };
        RInst {
            result: inst.result.clone(),
            opcode: inst.opcode,
            flags: inst.flags,
            ann,
            operands: inst.operands.iter().map(subst_op).collect(),
        }
    };

    Ok(Rule {
        name: general.name.clone(),
        pre: None,
        lhs: general.lhs.iter().map(subst_inst).collect(),
        rhs: general.rhs.iter().map(subst_inst).collect(),
        rhs_alias: general.rhs_alias.as_ref().map(subst_op),
        var_constraints: BTreeMap::new(),
    })
}
