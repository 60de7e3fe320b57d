//! Deterministic SMT-LIB2 (QF_BV) rendering of refinement queries.
//!
//! The query is satisfiable exactly when a counterexample exists: it asserts
//! the precondition together with the negation of componentwise refinement.
//! Each IR value becomes two definitions — its bits and a poison boolean —
//! so the model of a `sat` answer names concrete inputs that can be replayed
//! through the evaluator.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::ir::{Function, IcmpPred, Opcode, Operand, Width};
use crate::rules::{self, PredBinOp, PredCmp, PredExpr, Pv};

use super::{check_signatures, rewidth_pair, VerifyError};

/// Renders the refinement query "`rhs` refines `lhs` under `pre`" at the
/// given width. Output is byte-deterministic. The caller appends
/// `(check-sat)`; `unsat` means the refinement holds.
pub fn encode_query(
    lhs: &Function,
    rhs: &Function,
    pre: Option<&PredExpr>,
    width: Width,
) -> Result<String, VerifyError> {
    check_signatures(lhs, rhs)?;
    let (lhs, rhs) = rewidth_pair(lhs, rhs, width)?;

    let mut out = String::new();
    let _ = writeln!(out, "(set-logic QF_BV)");

    // Shared inputs, named after the first function's parameters; the
    // second function's parameters map onto them positionally.
    for p in &lhs.params {
        let _ = writeln!(
            out,
            "(declare-fun in_{} () (_ BitVec {}))",
            p.name,
            p.width.bits()
        );
    }

    let alias_of = |f: &Function| -> BTreeMap<String, String> {
        f.params
            .iter()
            .zip(&lhs.params)
            .map(|(own, shared)| (own.name.clone(), shared.name.clone()))
            .collect()
    };
    let (l_alias, r_alias) = (alias_of(&lhs), alias_of(&rhs));
    encode_side(&mut out, &lhs, "l", &l_alias)?;
    encode_side(&mut out, &rhs, "r", &r_alias)?;

    let mut comps = Vec::new();
    for (a, b) in lhs.returns.iter().zip(&rhs.returns) {
        let (lv, lp) = resolve_name(&lhs, "l", a, &l_alias);
        let (rv, rp) = resolve_name(&rhs, "r", b, &r_alias);
        // Refinement per component: original poison discharges it;
        // otherwise the replacement must be non-poison and equal.
        comps.push(smt_or(vec![
            lp,
            smt_and(vec![smt_not(rp), format!("(= {lv} {rv})")]),
        ]));
    }
    let negated = smt_not(smt_and(comps));
    let asserted = match pre {
        Some(p) => {
            let ctx = PreCtx::new(&lhs);
            let encoded = match ctx.encode(p)? {
                PreTerm::Bool(b) => b,
                _ => {
                    return Err(VerifyError::Solver(
                        "precondition is not boolean-valued".into(),
                    ))
                }
            };
            smt_and(vec![encoded, negated])
        }
        None => negated,
    };
    let _ = writeln!(out, "(assert {asserted})");
    Ok(out)
}

/// Bits/poison pair for a name within one side. Parameters resolve through
/// the positional alias onto the shared input declarations.
fn resolve_name(
    f: &Function,
    pfx: &str,
    name: &str,
    param_alias: &BTreeMap<String, String>,
) -> (String, String) {
    if f.is_param(name) {
        let shared = param_alias.get(name).map(String::as_str).unwrap_or(name);
        (format!("in_{shared}"), "false".into())
    } else {
        (format!("{pfx}_{name}"), format!("{pfx}p_{name}"))
    }
}

fn encode_side(
    out: &mut String,
    f: &Function,
    pfx: &str,
    param_alias: &BTreeMap<String, String>,
) -> Result<(), VerifyError> {
    let bv = |w: Width| format!("(_ BitVec {})", w.bits());
    for inst in &f.body {
        let mut args: Vec<(String, String, Width)> = Vec::new();
        for op in &inst.operands {
            args.push(match op {
                Operand::Const(c) => (
                    format!("(_ bv{} {})", c.bits, c.width.bits()),
                    "false".into(),
                    c.width,
                ),
                Operand::Value(n) => {
                    let w = f
                        .value_width(n)
                        .ok_or_else(|| VerifyError::Solver(format!("unknown value %{n}")))?;
                    let (v, p) = resolve_name(f, pfx, n, param_alias);
                    (v, p, w)
                }
            });
        }
        let w = inst.width.bits();
        let a = || args[0].0.clone();
        let b = || args[1].0.clone();
        let mut poisons: Vec<String> = args.iter().map(|t| t.1.clone()).collect();
        let value = match inst.opcode {
            Opcode::Add | Opcode::Sub | Opcode::Mul => {
                let op = match inst.opcode {
                    Opcode::Add => "bvadd",
                    Opcode::Sub => "bvsub",
                    _ => "bvmul",
                };
                let (x, y) = (a(), b());
                let plain = format!("({op} {x} {y})");
                // Overflow detection: redo the operation with one extra bit
                // (a full doubling for mul) and compare against the
                // extension of the truncated result.
                let ext = if inst.opcode == Opcode::Mul { w } else { 1 };
                if inst.flags.nsw {
                    poisons.push(format!(
                        "(distinct ((_ sign_extend {ext}) {plain}) ({op} ((_ sign_extend {ext}) {x}) ((_ sign_extend {ext}) {y})))"
                    ));
                }
                if inst.flags.nuw {
                    poisons.push(format!(
                        "(distinct ((_ zero_extend {ext}) {plain}) ({op} ((_ zero_extend {ext}) {x}) ((_ zero_extend {ext}) {y})))"
                    ));
                }
                plain
            }
            Opcode::And => format!("(bvand {} {})", a(), b()),
            Opcode::Or => format!("(bvor {} {})", a(), b()),
            Opcode::Xor => format!("(bvxor {} {})", a(), b()),
            Opcode::Shl | Opcode::Lshr | Opcode::Ashr => {
                let (x, y) = (a(), b());
                poisons.push(format!("(bvuge {y} (_ bv{w} {w}))"));
                let plain = match inst.opcode {
                    Opcode::Shl => format!("(bvshl {x} {y})"),
                    Opcode::Lshr => format!("(bvlshr {x} {y})"),
                    _ => format!("(bvashr {x} {y})"),
                };
                if inst.opcode == Opcode::Shl {
                    // A flagged shift is poison when undoing it does not
                    // recover the operand (bits were shifted out).
                    if inst.flags.nuw {
                        poisons.push(format!("(distinct (bvlshr {plain} {y}) {x})"));
                    }
                    if inst.flags.nsw {
                        poisons.push(format!("(distinct (bvashr {plain} {y}) {x})"));
                    }
                }
                plain
            }
            Opcode::Icmp(pred) => {
                let cond = match pred {
                    IcmpPred::Eq => format!("(= {} {})", a(), b()),
                    IcmpPred::Ne => format!("(distinct {} {})", a(), b()),
                    IcmpPred::Ult => format!("(bvult {} {})", a(), b()),
                    IcmpPred::Slt => format!("(bvslt {} {})", a(), b()),
                    IcmpPred::Ule => format!("(bvule {} {})", a(), b()),
                    IcmpPred::Sle => format!("(bvsle {} {})", a(), b()),
                };
                format!("(ite {cond} (_ bv1 1) (_ bv0 1))")
            }
            Opcode::Select => format!(
                "(ite (= {} (_ bv1 1)) {} {})",
                args[0].0, args[1].0, args[2].0
            ),
            Opcode::Zext | Opcode::Sext => {
                let sw = args[0].2.bits();
                let op = if inst.opcode == Opcode::Zext {
                    "zero_extend"
                } else {
                    "sign_extend"
                };
                format!("((_ {op} {}) {})", w - sw, a())
            }
            Opcode::Trunc => format!("((_ extract {} 0) {})", w - 1, a()),
        };
        let rw = inst.result_width();
        let _ = writeln!(out, "(define-fun {pfx}_{} () {} {value})", inst.result, bv(rw));
        let _ = writeln!(
            out,
            "(define-fun {pfx}p_{} () Bool {})",
            inst.result,
            smt_or(poisons)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Precondition encoding.

/// A precondition subterm: boolean, a bit-vector of known width, or a
/// still-unsized integer (closed subtrees fold to this and adapt to width on
/// contact with a sized operand, exactly as concrete evaluation does).
enum PreTerm {
    Bool(String),
    Bv(String, Width),
    Int(i128),
}

struct PreCtx {
    /// Width per parameter name — `width(%x)` folds through this, and
    /// symbolic constants take their parameter's width.
    widths: BTreeMap<String, Width>,
}

impl PreCtx {
    fn new(lhs: &Function) -> PreCtx {
        PreCtx {
            widths: lhs
                .params
                .iter()
                .map(|p| (p.name.clone(), p.width))
                .collect(),
        }
    }

    fn encode(&self, e: &PredExpr) -> Result<PreTerm, VerifyError> {
        // Closed subtrees evaluate now, with the evaluator itself, so the
        // encoding cannot drift from concrete semantics.
        if e.symbols().is_empty() {
            let empty = BTreeMap::new();
            return match rules::eval_pv(e, &empty, &self.widths) {
                Ok(Pv::Unsized(v)) => Ok(PreTerm::Int(v)),
                Ok(Pv::Bool(b)) => Ok(PreTerm::Bool(if b { "true" } else { "false" }.into())),
                Ok(Pv::Sized(v, w)) => Ok(PreTerm::Bv(bv_lit(v, w), w)),
                Err(e) => Err(VerifyError::Ir(e)),
            };
        }
        let num = |t: PreTerm, what: &str| -> Result<PreTerm, VerifyError> {
            match t {
                PreTerm::Bool(_) => Err(VerifyError::Solver(format!(
                    "precondition expects a number in {what}"
                ))),
                other => Ok(other),
            }
        };
        Ok(match e {
            PredExpr::Sym(s) => {
                let w = self.widths.get(s).copied().ok_or_else(|| {
                    VerifyError::Solver(format!("precondition names unknown constant {s}"))
                })?;
                PreTerm::Bv(format!("in_{s}"), w)
            }
            PredExpr::Lit(_) | PredExpr::WidthOf(_) => {
                unreachable!("closed subtrees are folded above")
            }
            PredExpr::Neg(a) => match num(self.encode(a)?, "unary minus")? {
                PreTerm::Bv(x, w) => PreTerm::Bv(format!("(bvneg {x})"), w),
                PreTerm::Int(v) => PreTerm::Int(-v),
                PreTerm::Bool(_) => unreachable!(),
            },
            PredExpr::BitNot(a) => match num(self.encode(a)?, "~")? {
                PreTerm::Bv(x, w) => PreTerm::Bv(format!("(bvnot {x})"), w),
                PreTerm::Int(v) => PreTerm::Int(!v),
                PreTerm::Bool(_) => unreachable!(),
            },
            PredExpr::Not(a) => match self.encode(a)? {
                PreTerm::Bool(x) => PreTerm::Bool(smt_not(x)),
                _ => {
                    return Err(VerifyError::Solver(
                        "precondition expects a boolean under !".into(),
                    ))
                }
            },
            PredExpr::Bin(op, a, b) => {
                let (x, y, w) = self.align(self.encode(a)?, self.encode(b)?)?;
                let name = match op {
                    PredBinOp::Add => "bvadd",
                    PredBinOp::Sub => "bvsub",
                    PredBinOp::Mul => "bvmul",
                    PredBinOp::And => "bvand",
                    PredBinOp::Or => "bvor",
                    PredBinOp::Xor => "bvxor",
                    PredBinOp::Shl => "bvshl",
                    PredBinOp::Shr => "bvlshr",
                };
                PreTerm::Bv(format!("({name} {x} {y})"), w)
            }
            PredExpr::Cmp(op, a, b) => {
                let (x, y, _) = self.align(self.encode(a)?, self.encode(b)?)?;
                let s = match op {
                    PredCmp::Eq => format!("(= {x} {y})"),
                    PredCmp::Ne => format!("(distinct {x} {y})"),
                    PredCmp::Ult => format!("(bvult {x} {y})"),
                    PredCmp::Slt => format!("(bvslt {x} {y})"),
                };
                PreTerm::Bool(s)
            }
            PredExpr::AndAnd(a, b) => PreTerm::Bool(smt_and(vec![
                self.boolean(a)?,
                self.boolean(b)?,
            ])),
            PredExpr::OrOr(a, b) => PreTerm::Bool(smt_or(vec![
                self.boolean(a)?,
                self.boolean(b)?,
            ])),
            PredExpr::IsPow2(a) => match num(self.encode(a)?, "isPowerOf2")? {
                PreTerm::Bv(x, w) => {
                    let zero = bv_lit(0, w);
                    let one = bv_lit(1, w);
                    PreTerm::Bool(format!(
                        "(and (distinct {x} {zero}) (= (bvand {x} (bvsub {x} {one})) {zero}))"
                    ))
                }
                _ => unreachable!("symbolic isPowerOf2 argument is sized"),
            },
        })
    }

    fn boolean(&self, e: &PredExpr) -> Result<String, VerifyError> {
        match self.encode(e)? {
            PreTerm::Bool(b) => Ok(b),
            _ => Err(VerifyError::Solver(
                "precondition expects a boolean operand of &&/||".into(),
            )),
        }
    }

    /// Puts two numeric terms on one width, wrapping unsized constants,
    /// mirroring concrete alignment. Two unsized operands cannot reach here:
    /// a subtree that is entirely unsized is closed and already folded.
    fn align(
        &self,
        a: PreTerm,
        b: PreTerm,
    ) -> Result<(String, String, Width), VerifyError> {
        match (a, b) {
            (PreTerm::Bool(_), _) | (_, PreTerm::Bool(_)) => Err(VerifyError::Solver(
                "precondition expects a number where a boolean was given".into(),
            )),
            (PreTerm::Bv(x, wx), PreTerm::Bv(y, wy)) => {
                if wx != wy {
                    return Err(VerifyError::Solver(format!(
                        "precondition mixes values of widths {wx} and {wy}"
                    )));
                }
                Ok((x, y, wx))
            }
            (PreTerm::Bv(x, w), PreTerm::Int(v)) => Ok((x, bv_lit(rules::wrap_i128(v, w), w), w)),
            (PreTerm::Int(v), PreTerm::Bv(y, w)) => Ok((bv_lit(rules::wrap_i128(v, w), w), y, w)),
            (PreTerm::Int(_), PreTerm::Int(_)) => Err(VerifyError::Solver(
                "internal: unsized precondition operands were not folded".into(),
            )),
        }
    }
}

fn bv_lit(v: u64, w: Width) -> String {
    format!("(_ bv{v} {})", w.bits())
}

// ---------------------------------------------------------------------------
// Tiny formula builders that fold constants for readable output.

pub(crate) fn smt_and(terms: Vec<String>) -> String {
    let kept: Vec<String> = terms.into_iter().filter(|t| t != "true").collect();
    if kept.iter().any(|t| t == "false") {
        return "false".into();
    }
    match kept.len() {
        0 => "true".into(),
        1 => kept.into_iter().next().unwrap(),
        _ => format!("(and {})", kept.join(" ")),
    }
}

pub(crate) fn smt_or(terms: Vec<String>) -> String {
    let kept: Vec<String> = terms.into_iter().filter(|t| t != "false").collect();
    if kept.iter().any(|t| t == "true") {
        return "true".into();
    }
    match kept.len() {
        0 => "false".into(),
        1 => kept.into_iter().next().unwrap(),
        _ => format!("(or {})", kept.join(" ")),
    }
}

pub(crate) fn smt_not(term: String) -> String {
    match term.as_str() {
        "true" => "false".into(),
        "false" => "true".into(),
        _ => format!("(not {term})"),
    }
}
