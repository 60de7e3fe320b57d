//! A tiny single-block SSA IR over bit vectors of width 1..=64.
//!
//! Functions take bit-vector parameters, run a straight-line body with no
//! memory and no control flow, and return one or more of their values.
//! Arithmetic is two's-complement modular. The only undefined behavior is
//! Poison: shifts by amounts >= the width produce it, `nsw`/`nuw` overflow
//! produces it, and it propagates through every operand position.

mod eval;
pub(crate) mod lex;
pub(crate) mod parse;
mod passes;
mod print;

pub use eval::{evaluate, evaluate_values};
pub(crate) use eval::apply_op;
pub use parse::{parse_function, parse_functions};
pub use passes::{cost, dce};
pub use print::{print_function, print_functions};


use serde::Serialize;
use std::fmt;

/// Bit width of a value. Always in 1..=64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Width(u8);

impl Width {
    pub const BOOL: Width = Width(1);

    pub fn new(bits: u32) -> Result<Width, IrError> {
        if (1..=64).contains(&bits) {
            Ok(Width(bits as u8))
        } else {
            Err(IrError::Eval(format!("width i{bits} out of range 1..=64")))
        }
    }

    pub fn bits(self) -> u32 {
        self.0 as u32
    }

    /// All-ones value at this width.
    pub fn mask(self) -> u64 {
        if self.0 == 64 {
            u64::MAX
        } else {
            (1u64 << self.0) - 1
        }
    }

    /// Sign bit as a value, e.g. 0x80 at i8.
    pub fn sign_bit(self) -> u64 {
        1u64 << (self.0 - 1)
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0)
    }
}

/// Interpret `bits` (masked at `w`) as a signed number.
pub(crate) fn to_signed(bits: u64, w: Width) -> i64 {
    let shift = 64 - w.bits();
    ((bits << shift) as i64) >> shift
}

/// Reduce a signed literal into the masked representation at `w`, if it is
/// representable there (either as signed or as unsigned).
pub(crate) fn literal_bits(value: i128, w: Width) -> Option<u64> {
    let lo = -(1i128 << (w.bits() - 1));
    let hi = (1i128 << w.bits()) - 1;
    if value < lo || value > hi {
        return None;
    }
    Some((value as u64) & w.mask())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum IcmpPred {
    Eq,
    Ne,
    Ult,
    Slt,
    Ule,
    Sle,
}

impl IcmpPred {
    pub fn name(self) -> &'static str {
        match self {
            IcmpPred::Eq => "eq",
            IcmpPred::Ne => "ne",
            IcmpPred::Ult => "ult",
            IcmpPred::Slt => "slt",
            IcmpPred::Ule => "ule",
            IcmpPred::Sle => "sle",
        }
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, IcmpPred::Eq | IcmpPred::Ne)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Opcode {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Lshr,
    Ashr,
    Select,
    Icmp(IcmpPred),
    Zext,
    Sext,
    Trunc,
}

impl Opcode {
    pub fn arity(self) -> usize {
        match self {
            Opcode::Select => 3,
            Opcode::Zext | Opcode::Sext | Opcode::Trunc => 1,
            _ => 2,
        }
    }

    /// nsw/nuw are only meaningful where overflow is.
    pub fn accepts_flags(self) -> bool {
        matches!(self, Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Shl)
    }

    pub fn is_commutative(self) -> bool {
        match self {
            Opcode::Add | Opcode::Mul | Opcode::And | Opcode::Or | Opcode::Xor => true,
            Opcode::Icmp(p) => p.is_commutative(),
            _ => false,
        }
    }

    pub fn is_cast(self) -> bool {
        matches!(self, Opcode::Zext | Opcode::Sext | Opcode::Trunc)
    }

    /// Mnemonic without the icmp predicate.
    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Xor => "xor",
            Opcode::Shl => "shl",
            Opcode::Lshr => "lshr",
            Opcode::Ashr => "ashr",
            Opcode::Select => "select",
            Opcode::Icmp(_) => "icmp",
            Opcode::Zext => "zext",
            Opcode::Sext => "sext",
            Opcode::Trunc => "trunc",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Opcode::Icmp(p) => write!(f, "icmp {}", p.name()),
            op => f.write_str(op.mnemonic()),
        }
    }
}

/// Poison flags. Printed in the fixed order "nsw nuw".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub struct Flags {
    pub nsw: bool,
    pub nuw: bool,
}

impl Flags {
    pub const NONE: Flags = Flags { nsw: false, nuw: false };

    pub fn is_empty(self) -> bool {
        !self.nsw && !self.nuw
    }

    /// True if every flag set in `other` is also set here.
    pub fn contains(self, other: Flags) -> bool {
        (self.nsw || !other.nsw) && (self.nuw || !other.nuw)
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.nsw, self.nuw) {
            (true, true) => f.write_str("nsw nuw"),
            (true, false) => f.write_str("nsw"),
            (false, true) => f.write_str("nuw"),
            (false, false) => Ok(()),
        }
    }
}

/// A constant operand. `bits` is always masked to `width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Constant {
    pub bits: u64,
    pub width: Width,
}

impl Constant {
    pub fn new(value: i128, width: Width) -> Option<Constant> {
        literal_bits(value, width).map(|bits| Constant { bits, width })
    }

    pub fn from_bits(bits: u64, width: Width) -> Constant {
        Constant { bits: bits & width.mask(), width }
    }

    pub fn as_signed(self) -> i64 {
        to_signed(self.bits, self.width)
    }
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_signed())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Operand {
    Value(String),
    Const(Constant),
}

impl Operand {
    pub fn as_value(&self) -> Option<&str> {
        match self {
            Operand::Value(n) => Some(n),
            Operand::Const(_) => None,
        }
    }

    pub fn as_const(&self) -> Option<Constant> {
        match self {
            Operand::Value(_) => None,
            Operand::Const(c) => Some(*c),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Value(n) => write!(f, "%{n}"),
            Operand::Const(c) => write!(f, "{c}"),
        }
    }
}

/// One SSA instruction. `width` is the annotated width: the result width for
/// everything except icmp, where it is the operand width (icmp results are i1).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Instruction {
    pub result: String,
    pub opcode: Opcode,
    pub flags: Flags,
    pub width: Width,
    pub operands: Vec<Operand>,
}

impl Instruction {
    pub fn result_width(&self) -> Width {
        match self.opcode {
            Opcode::Icmp(_) => Width::BOOL,
            _ => self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Param {
    pub name: String,
    pub width: Width,
}

/// A function: parameters, a topologically ordered straight-line body, and a
/// non-empty list of returned value names. Every returned name is a parameter
/// or a defined result.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Instruction>,
    pub returns: Vec<String>,
}

impl Function {
    /// Cost model: instruction count.
    pub fn cost(&self) -> usize {
        self.body.len()
    }

    pub fn value_width(&self, name: &str) -> Option<Width> {
        if let Some(p) = self.params.iter().find(|p| p.name == name) {
            return Some(p.width);
        }
        self.body
            .iter()
            .find(|i| i.result == name)
            .map(|i| i.result_width())
    }

    pub fn def_index(&self, name: &str) -> Option<usize> {
        self.body.iter().position(|i| i.result == name)
    }

    pub fn is_param(&self, name: &str) -> bool {
        self.params.iter().any(|p| p.name == name)
    }

    /// Width shared by every value, or None if the function mixes widths.
    pub fn uniform_width(&self) -> Option<Width> {
        let mut seen: Option<Width> = None;
        let mut note = |w: Width| -> bool {
            match seen {
                None => {
                    seen = Some(w);
                    true
                }
                Some(s) => s == w,
            }
        };
        for p in &self.params {
            if !note(p.width) {
                return None;
            }
        }
        for i in &self.body {
            if !note(i.width) || !note(i.result_width()) {
                return None;
            }
        }
        seen
    }

    /// Clone with every width annotation replaced by `w`. Only meaningful for
    /// width-uniform functions; constants are re-reduced at the new width.
    pub fn with_uniform_width(&self, w: Width) -> Result<Function, IrError> {
        if self.uniform_width().is_none() {
            return Err(IrError::Eval(format!(
                "function @{} mixes widths and cannot be re-widthed",
                self.name
            )));
        }
        let mut f = self.clone();
        for p in &mut f.params {
            p.width = w;
        }
        for i in &mut f.body {
            i.width = w;
            for op in &mut i.operands {
                if let Operand::Const(c) = op {
                    // Keep the signed meaning where possible, else the raw bits.
                    let signed = c.as_signed() as i128;
                    *c = Constant::new(signed, w)
                        .unwrap_or_else(|| Constant::from_bits(c.bits, w));
                }
            }
        }
        f.validate()?;
        Ok(f)
    }

    /// A value name not yet used by any parameter or instruction.
    pub fn fresh_name(&self, hint: &str) -> String {
        let taken = |n: &str| {
            self.is_param(n) || self.body.iter().any(|i| i.result == n)
        };
        if !taken(hint) {
            return hint.to_string();
        }
        for k in 0.. {
            let cand = format!("{hint}{k}");
            if !taken(&cand) {
                return cand;
            }
        }
        unreachable!()
    }

    /// Structural well-formedness: SSA, arity, and width checks. The parser
    /// establishes all of this; passes that splice instructions use it as a
    /// safety net.
    pub fn validate(&self) -> Result<(), IrError> {
        let mut widths: std::collections::HashMap<&str, Width> = Default::default();
        for p in &self.params {
            if widths.insert(&p.name, p.width).is_some() {
                return Err(IrError::Ssa {
                    line: 0,
                    msg: format!("duplicate parameter %{}", p.name),
                });
            }
        }
        for (idx, inst) in self.body.iter().enumerate() {
            let line = idx as u32 + 1;
            if inst.operands.len() != inst.opcode.arity() {
                return Err(IrError::Type {
                    line,
                    msg: format!(
                        "{} expects {} operands, got {}",
                        inst.opcode,
                        inst.opcode.arity(),
                        inst.operands.len()
                    ),
                });
            }
            if !inst.flags.is_empty() && !inst.opcode.accepts_flags() {
                return Err(IrError::Type {
                    line,
                    msg: format!("{} does not accept nsw/nuw", inst.opcode),
                });
            }
            let operand_width = |op: &Operand| -> Result<Width, IrError> {
                match op {
                    Operand::Value(n) => widths.get(n.as_str()).copied().ok_or(IrError::Ssa {
                        line,
                        msg: format!("use of undefined value %{n}"),
                    }),
                    Operand::Const(c) => Ok(c.width),
                }
            };
            let expect = |op: &Operand, want: Width| -> Result<(), IrError> {
                let got = operand_width(op)?;
                if got != want {
                    return Err(IrError::Type {
                        line,
                        msg: format!("operand {op} has width {got}, expected {want}"),
                    });
                }
                Ok(())
            };
            match inst.opcode {
                Opcode::Select => {
                    expect(&inst.operands[0], Width::BOOL)?;
                    expect(&inst.operands[1], inst.width)?;
                    expect(&inst.operands[2], inst.width)?;
                }
                Opcode::Zext | Opcode::Sext | Opcode::Trunc => {
                    let src = match &inst.operands[0] {
                        Operand::Value(_) => operand_width(&inst.operands[0])?,
                        Operand::Const(_) => {
                            return Err(IrError::Type {
                                line,
                                msg: format!(
                                    "{} operand must be a named value",
                                    inst.opcode
                                ),
                            })
                        }
                    };
                    let ok = match inst.opcode {
                        Opcode::Trunc => inst.width < src,
                        _ => inst.width > src,
                    };
                    if !ok {
                        return Err(IrError::Type {
                            line,
                            msg: format!(
                                "{} from {} to {} does not change width the right way",
                                inst.opcode, src, inst.width
                            ),
                        });
                    }
                }
                _ => {
                    for op in &inst.operands {
                        expect(op, inst.width)?;
                    }
                }
            }
            if widths.insert(&inst.result, inst.result_width()).is_some() {
                return Err(IrError::Ssa {
                    line,
                    msg: format!("redefinition of %{}", inst.result),
                });
            }
        }
        if self.returns.is_empty() {
            return Err(IrError::Type {
                line: 0,
                msg: "function must return at least one value".into(),
            });
        }
        for r in &self.returns {
            if !widths.contains_key(r.as_str()) {
                return Err(IrError::Ssa {
                    line: 0,
                    msg: format!("return of undefined value %{r}"),
                });
            }
        }
        Ok(())
    }
}

/// Result of evaluating one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Val {
    Bits(u64),
    Poison,
}

impl Val {
    pub fn is_poison(self) -> bool {
        matches!(self, Val::Poison)
    }

    pub fn bits(self) -> Option<u64> {
        match self {
            Val::Bits(b) => Some(b),
            Val::Poison => None,
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Bits(b) => write!(f, "{b}"),
            Val::Poison => f.write_str("poison"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IrError {
    #[error("syntax error at line {line}, col {col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("SSA violation at line {line}: {msg}")]
    Ssa { line: u32, msg: String },
    #[error("width error at line {line}: {msg}")]
    Type { line: u32, msg: String },
    #[error("evaluation error: {0}")]
    Eval(String),
}
