//! Precondition expressions over symbolic constants.
//!
//! A precondition is evaluated against a binding of symbolic constants to
//! concrete bit-vector values plus the widths of the pattern variables it
//! mentions. Two kinds of numeric values flow through an expression:
//!
//! * *sized* values — a symbolic constant carries the width of the
//!   instruction slot it was matched in, and all arithmetic on it is modular
//!   at that width;
//! * *unsized* values — integer literals and `width(%x)` results, computed
//!   exactly in a wide integer until they meet a sized value, at which point
//!   they adapt to that width by two's-complement wrapping.
//!
//! Combining two sized values of different widths is an error (the rule is
//! comparing apples to oranges); combining two unsized values stays exact,
//! with bit-level operations (shifts, `isPowerOf2`) treating the value as
//! 64-bit two's complement. Shifts are total: an amount at or beyond the
//! width yields 0 rather than an error, so preconditions never trap.

use std::collections::BTreeMap;
use std::fmt;

use crate::ir::lex::{Cursor, Tok};
use crate::ir::{to_signed, Constant, IrError, Width};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredBinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredCmp {
    Eq,
    Ne,
    Ult,
    Slt,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PredExpr {
    /// Integer literal, unsized.
    Lit(i128),
    /// Symbolic constant (`C`, `C1`, ...), sized at its matched slot width.
    Sym(String),
    /// `width(%x)` — the bit width of a pattern variable, as an unsized value.
    WidthOf(String),
    /// Unary two's-complement negation.
    Neg(Box<PredExpr>),
    /// Bitwise complement `~`.
    BitNot(Box<PredExpr>),
    /// Logical negation `!` (booleans only).
    Not(Box<PredExpr>),
    Bin(PredBinOp, Box<PredExpr>, Box<PredExpr>),
    Cmp(PredCmp, Box<PredExpr>, Box<PredExpr>),
    AndAnd(Box<PredExpr>, Box<PredExpr>),
    OrOr(Box<PredExpr>, Box<PredExpr>),
    /// True when exactly one bit is set. `isPowerOf2(0)` is false.
    IsPow2(Box<PredExpr>),
}

/// Evaluation-time value: numbers carry an optional width, booleans are
/// produced by comparisons and consumed by connectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Pv {
    Sized(u64, Width),
    Unsized(i128),
    Bool(bool),
}

pub(crate) fn wrap_i128(v: i128, w: Width) -> u64 {
    (v as u64) & w.mask()
}

impl Pv {
    fn as_bool(self) -> Result<bool, IrError> {
        match self {
            Pv::Bool(b) => Ok(b),
            _ => Err(IrError::Eval(
                "precondition expects a boolean where a number was given".into(),
            )),
        }
    }
}

/// Aligns two numeric values onto a common width, wrapping unsized
/// operands as needed. `None` width means both stayed unsized.
fn align(a: Pv, b: Pv) -> Result<(u64, u64, Option<Width>), IrError> {
    match (a, b) {
        (Pv::Bool(_), _) | (_, Pv::Bool(_)) => Err(IrError::Eval(
            "precondition expects a number where a boolean was given".into(),
        )),
        (Pv::Sized(x, wx), Pv::Sized(y, wy)) => {
            if wx != wy {
                return Err(IrError::Eval(format!(
                    "precondition mixes values of widths {wx} and {wy}"
                )));
            }
            Ok((x, y, Some(wx)))
        }
        (Pv::Sized(x, w), Pv::Unsized(y)) => Ok((x, wrap_i128(y, w), Some(w))),
        (Pv::Unsized(x), Pv::Sized(y, w)) => Ok((wrap_i128(x, w), y, Some(w))),
        (Pv::Unsized(x), Pv::Unsized(y)) => Ok((x as u64, y as u64, None)),
    }
}

pub(crate) fn eval_pv(
    e: &PredExpr,
    syms: &BTreeMap<String, Constant>,
    widths: &BTreeMap<String, Width>,
) -> Result<Pv, IrError> {
    Ok(match e {
        PredExpr::Lit(v) => Pv::Unsized(*v),
        PredExpr::Sym(name) => match syms.get(name) {
            Some(c) => Pv::Sized(c.bits, c.width),
            None => {
                return Err(IrError::Eval(format!(
                    "unbound symbolic constant {name} in precondition"
                )))
            }
        },
        PredExpr::WidthOf(var) => match widths.get(var) {
            Some(w) => Pv::Unsized(w.bits() as i128),
            None => {
                return Err(IrError::Eval(format!(
                    "unbound variable %{var} in width()"
                )))
            }
        },
        PredExpr::Neg(inner) => match eval_pv(inner, syms, widths)? {
            Pv::Sized(x, w) => Pv::Sized(x.wrapping_neg() & w.mask(), w),
            Pv::Unsized(x) => Pv::Unsized(-x),
            Pv::Bool(_) => {
                return Err(IrError::Eval("cannot negate a boolean".into()))
            }
        },
        PredExpr::BitNot(inner) => match eval_pv(inner, syms, widths)? {
            Pv::Sized(x, w) => Pv::Sized(!x & w.mask(), w),
            Pv::Unsized(x) => Pv::Unsized(!x),
            Pv::Bool(_) => {
                return Err(IrError::Eval("cannot complement a boolean".into()))
            }
        },
        PredExpr::Not(inner) => {
            Pv::Bool(!eval_pv(inner, syms, widths)?.as_bool()?)
        }
        PredExpr::Bin(op, a, b) => {
            let a = eval_pv(a, syms, widths)?;
            let b = eval_pv(b, syms, widths)?;
            // Exact wide arithmetic survives only while both sides are
            // unsized and the operation is width-independent.
            if let (Pv::Unsized(x), Pv::Unsized(y)) = (a, b) {
                match op {
                    PredBinOp::Add => return Ok(Pv::Unsized(x.wrapping_add(y))),
                    PredBinOp::Sub => return Ok(Pv::Unsized(x.wrapping_sub(y))),
                    PredBinOp::Mul => return Ok(Pv::Unsized(x.wrapping_mul(y))),
                    PredBinOp::And => return Ok(Pv::Unsized(x & y)),
                    PredBinOp::Or => return Ok(Pv::Unsized(x | y)),
                    PredBinOp::Xor => return Ok(Pv::Unsized(x ^ y)),
                    // Shifts need a width; unsized values act as 64-bit.
                    PredBinOp::Shl | PredBinOp::Shr => {}
                }
            }
            let (x, y, w) = align(a, b)?;
            let wbits = w.map_or(64, |w| w.bits() as u64);
            let mask = w.map_or(u64::MAX, |w| w.mask());
            let r = match op {
                PredBinOp::Add => x.wrapping_add(y) & mask,
                PredBinOp::Sub => x.wrapping_sub(y) & mask,
                PredBinOp::Mul => x.wrapping_mul(y) & mask,
                PredBinOp::And => x & y,
                PredBinOp::Or => x | y,
                PredBinOp::Xor => x ^ y,
                PredBinOp::Shl => {
                    if y >= wbits {
                        0
                    } else {
                        (x << y) & mask
                    }
                }
                PredBinOp::Shr => {
                    if y >= wbits {
                        0
                    } else {
                        x >> y
                    }
                }
            };
            match w {
                Some(w) => Pv::Sized(r, w),
                None => Pv::Unsized(r as i128),
            }
        }
        PredExpr::Cmp(op, a, b) => {
            let a = eval_pv(a, syms, widths)?;
            let b = eval_pv(b, syms, widths)?;
            // Exact comparison while both sides stay unsized.
            if let (Pv::Unsized(x), Pv::Unsized(y)) = (a, b) {
                return Ok(Pv::Bool(match op {
                    PredCmp::Eq => x == y,
                    PredCmp::Ne => x != y,
                    PredCmp::Ult => (x as u64) < (y as u64),
                    PredCmp::Slt => x < y,
                }));
            }
            let (x, y, w) = align(a, b)?;
            Pv::Bool(match op {
                PredCmp::Eq => x == y,
                PredCmp::Ne => x != y,
                PredCmp::Ult => x < y,
                PredCmp::Slt => match w {
                    Some(w) => to_signed(x, w) < to_signed(y, w),
                    None => (x as i64) < (y as i64),
                },
            })
        }
        PredExpr::AndAnd(a, b) => Pv::Bool(
            eval_pv(a, syms, widths)?.as_bool()?
                && eval_pv(b, syms, widths)?.as_bool()?,
        ),
        PredExpr::OrOr(a, b) => Pv::Bool(
            eval_pv(a, syms, widths)?.as_bool()?
                || eval_pv(b, syms, widths)?.as_bool()?,
        ),
        PredExpr::IsPow2(inner) => match eval_pv(inner, syms, widths)? {
            Pv::Sized(x, _) => Pv::Bool(x.count_ones() == 1),
            Pv::Unsized(x) => Pv::Bool((x as u64).count_ones() == 1),
            Pv::Bool(_) => {
                return Err(IrError::Eval(
                    "isPowerOf2 expects a number, found a boolean".into(),
                ))
            }
        },
    })
}

/// Evaluates a precondition to a boolean. `syms` binds the symbolic
/// constants, `widths` the pattern variables mentioned via `width(%x)`.
/// Total and pure over complete bindings; unbound names are errors.
pub fn eval_precondition(
    p: &PredExpr,
    syms: &BTreeMap<String, Constant>,
    widths: &BTreeMap<String, Width>,
) -> Result<bool, IrError> {
    eval_pv(p, syms, widths)?.as_bool()
}

impl PredExpr {
    /// Collects symbolic constant names, in first-occurrence order.
    pub fn symbols(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let PredExpr::Sym(s) = e {
                if !out.contains(s) {
                    out.push(s.clone());
                }
            }
        });
        out
    }

    /// Collects variables mentioned via `width(%x)`, in first-occurrence order.
    pub fn width_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let PredExpr::WidthOf(v) = e {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        });
        out
    }

    fn walk(&self, f: &mut impl FnMut(&PredExpr)) {
        f(self);
        match self {
            PredExpr::Lit(_) | PredExpr::Sym(_) | PredExpr::WidthOf(_) => {}
            PredExpr::Neg(a) | PredExpr::BitNot(a) | PredExpr::Not(a) | PredExpr::IsPow2(a) => {
                a.walk(f)
            }
            PredExpr::Bin(_, a, b)
            | PredExpr::Cmp(_, a, b)
            | PredExpr::AndAnd(a, b)
            | PredExpr::OrOr(a, b) => {
                a.walk(f);
                b.walk(f);
            }
        }
    }

    /// Binding-independent constant fold; `Some(b)` when the expression
    /// mentions no symbols or variables.
    pub fn const_value(&self) -> Option<bool> {
        if self.symbols().is_empty() && self.width_vars().is_empty() {
            eval_precondition(self, &BTreeMap::new(), &BTreeMap::new()).ok()
        } else {
            None
        }
    }
}

// Precedence levels for printing and parsing, loosest first.
const PREC_OROR: u8 = 1;
const PREC_ANDAND: u8 = 2;
const PREC_CMP: u8 = 3;
const PREC_OR: u8 = 4;
const PREC_XOR: u8 = 5;
const PREC_AND: u8 = 6;
const PREC_SHIFT: u8 = 7;
const PREC_ADD: u8 = 8;
const PREC_MUL: u8 = 9;
const PREC_UNARY: u8 = 10;

fn bin_prec(op: PredBinOp) -> u8 {
    match op {
        PredBinOp::Or => PREC_OR,
        PredBinOp::Xor => PREC_XOR,
        PredBinOp::And => PREC_AND,
        PredBinOp::Shl | PredBinOp::Shr => PREC_SHIFT,
        PredBinOp::Add | PredBinOp::Sub => PREC_ADD,
        PredBinOp::Mul => PREC_MUL,
    }
}

fn bin_name(op: PredBinOp) -> &'static str {
    match op {
        PredBinOp::Add => "+",
        PredBinOp::Sub => "-",
        PredBinOp::Mul => "*",
        PredBinOp::And => "&",
        PredBinOp::Or => "|",
        PredBinOp::Xor => "^",
        PredBinOp::Shl => "<<",
        PredBinOp::Shr => ">>",
    }
}

fn cmp_name(op: PredCmp) -> &'static str {
    match op {
        PredCmp::Eq => "==",
        PredCmp::Ne => "!=",
        PredCmp::Ult => "ult",
        PredCmp::Slt => "slt",
    }
}

impl PredExpr {
    fn prec(&self) -> u8 {
        match self {
            PredExpr::Lit(_)
            | PredExpr::Sym(_)
            | PredExpr::WidthOf(_)
            | PredExpr::IsPow2(_) => PREC_UNARY + 1,
            PredExpr::Neg(_) | PredExpr::BitNot(_) | PredExpr::Not(_) => PREC_UNARY,
            PredExpr::Bin(op, ..) => bin_prec(*op),
            PredExpr::Cmp(..) => PREC_CMP,
            PredExpr::AndAnd(..) => PREC_ANDAND,
            PredExpr::OrOr(..) => PREC_OROR,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let me = self.prec();
        if me < min {
            write!(f, "(")?;
        }
        match self {
            PredExpr::Lit(v) => write!(f, "{v}")?,
            PredExpr::Sym(s) => write!(f, "{s}")?,
            PredExpr::WidthOf(v) => write!(f, "width(%{v})")?,
            PredExpr::Neg(a) => {
                write!(f, "-")?;
                a.fmt_at(f, PREC_UNARY)?;
            }
            PredExpr::BitNot(a) => {
                write!(f, "~")?;
                a.fmt_at(f, PREC_UNARY)?;
            }
            PredExpr::Not(a) => {
                write!(f, "!")?;
                a.fmt_at(f, PREC_UNARY)?;
            }
            PredExpr::Bin(op, a, b) => {
                a.fmt_at(f, me)?;
                write!(f, " {} ", bin_name(*op))?;
                b.fmt_at(f, me + 1)?;
            }
            PredExpr::Cmp(op, a, b) => {
                a.fmt_at(f, me + 1)?;
                write!(f, " {} ", cmp_name(*op))?;
                b.fmt_at(f, me + 1)?;
            }
            PredExpr::AndAnd(a, b) => {
                a.fmt_at(f, me)?;
                write!(f, " && ")?;
                b.fmt_at(f, me + 1)?;
            }
            PredExpr::OrOr(a, b) => {
                a.fmt_at(f, me)?;
                write!(f, " || ")?;
                b.fmt_at(f, me + 1)?;
            }
            PredExpr::IsPow2(a) => write!(f, "isPowerOf2({a})")?,
        }
        if me < min {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for PredExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

/// A name is a symbolic constant when it is `C` followed by digits.
pub(crate) fn is_sym_name(name: &str) -> bool {
    let mut chars = name.chars();
    chars.next() == Some('C') && chars.all(|c| c.is_ascii_digit())
}

/// Recursive-descent expression parser over the shared token stream.
/// Consumes tokens up to (not including) the first newline.
pub(crate) fn parse_pred(cur: &mut Cursor) -> Result<PredExpr, IrError> {
    let e = parse_oror(cur)?;
    match cur.peek() {
        None | Some(Tok::Newline) => Ok(e),
        Some(t) => Err(cur.err(format!(
            "unexpected {} after precondition expression",
            t.describe()
        ))),
    }
}

fn parse_oror(cur: &mut Cursor) -> Result<PredExpr, IrError> {
    let mut e = parse_andand(cur)?;
    while cur.eat(&Tok::OrOr) {
        let rhs = parse_andand(cur)?;
        e = PredExpr::OrOr(Box::new(e), Box::new(rhs));
    }
    Ok(e)
}

fn parse_andand(cur: &mut Cursor) -> Result<PredExpr, IrError> {
    let mut e = parse_cmp(cur)?;
    while cur.eat(&Tok::AndAnd) {
        let rhs = parse_cmp(cur)?;
        e = PredExpr::AndAnd(Box::new(e), Box::new(rhs));
    }
    Ok(e)
}

fn parse_cmp(cur: &mut Cursor) -> Result<PredExpr, IrError> {
    let mut e = parse_bin(cur, PREC_OR)?;
    loop {
        let op = match cur.peek() {
            Some(Tok::EqEq) => PredCmp::Eq,
            Some(Tok::NotEq) => PredCmp::Ne,
            Some(Tok::Ident(name)) if name == "ult" => PredCmp::Ult,
            Some(Tok::Ident(name)) if name == "slt" => PredCmp::Slt,
            _ => return Ok(e),
        };
        cur.next();
        let rhs = parse_bin(cur, PREC_OR)?;
        e = PredExpr::Cmp(op, Box::new(e), Box::new(rhs));
    }
}

/// Precedence-climbing over the arithmetic/bitwise levels.
fn parse_bin(cur: &mut Cursor, min: u8) -> Result<PredExpr, IrError> {
    let mut lhs = parse_unary(cur)?;
    loop {
        let op = match cur.peek() {
            Some(Tok::Pipe) => PredBinOp::Or,
            Some(Tok::Caret) => PredBinOp::Xor,
            Some(Tok::Amp) => PredBinOp::And,
            Some(Tok::Shl) => PredBinOp::Shl,
            Some(Tok::Shr) => PredBinOp::Shr,
            Some(Tok::Plus) => PredBinOp::Add,
            Some(Tok::Minus) => PredBinOp::Sub,
            Some(Tok::Star) => PredBinOp::Mul,
            _ => return Ok(lhs),
        };
        let prec = bin_prec(op);
        if prec < min {
            return Ok(lhs);
        }
        cur.next();
        let rhs = parse_bin(cur, prec + 1)?;
        lhs = PredExpr::Bin(op, Box::new(lhs), Box::new(rhs));
    }
}

fn parse_unary(cur: &mut Cursor) -> Result<PredExpr, IrError> {
    match cur.peek() {
        Some(Tok::Minus) => {
            cur.next();
            // Fold negation into literals so `-1` prints back as written.
            match parse_unary(cur)? {
                PredExpr::Lit(v) => Ok(PredExpr::Lit(-v)),
                e => Ok(PredExpr::Neg(Box::new(e))),
            }
        }
        Some(Tok::Tilde) => {
            cur.next();
            Ok(PredExpr::BitNot(Box::new(parse_unary(cur)?)))
        }
        Some(Tok::Bang) => {
            cur.next();
            Ok(PredExpr::Not(Box::new(parse_unary(cur)?)))
        }
        _ => parse_atom(cur),
    }
}

fn parse_atom(cur: &mut Cursor) -> Result<PredExpr, IrError> {
    let (line, col) = cur.pos();
    match cur.next() {
        Some(sp) => match sp.tok {
            Tok::Int(v) => Ok(PredExpr::Lit(v)),
            Tok::LParen => {
                let e = parse_oror(cur)?;
                cur.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) if name == "width" => {
                cur.expect(Tok::LParen)?;
                let (vline, vcol) = cur.pos();
                let var = match cur.next() {
                    Some(sp) => match sp.tok {
                        Tok::Local(v) => v,
                        other => {
                            return Err(IrError::Syntax {
                                line: vline,
                                col: vcol,
                                msg: format!(
                                    "width() expects a pattern variable, found {}",
                                    other.describe()
                                ),
                            })
                        }
                    },
                    None => return Err(cur.err("width() expects a pattern variable")),
                };
                cur.expect(Tok::RParen)?;
                Ok(PredExpr::WidthOf(var))
            }
            Tok::Ident(name) if name == "isPowerOf2" => {
                cur.expect(Tok::LParen)?;
                let e = parse_oror(cur)?;
                cur.expect(Tok::RParen)?;
                Ok(PredExpr::IsPow2(Box::new(e)))
            }
            Tok::Ident(name) if is_sym_name(&name) => Ok(PredExpr::Sym(name)),
            Tok::Ident(name) => Err(IrError::Syntax {
                line,
                col,
                msg: format!(
                    "unknown name `{name}` in precondition (symbolic constants are C, C1, C2, ...)"
                ),
            }),
            other => Err(IrError::Syntax {
                line,
                col,
                msg: format!("expected an expression, found {}", other.describe()),
            }),
        },
        None => Err(cur.err("expected an expression")),
    }
}
