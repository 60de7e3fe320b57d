//! Parser for rule files.
//!
//! A file holds one or more rules separated by blank lines. Each rule is:
//!
//! ```text
//! name: low-bit-flip
//! pre: C1 == C2 && C1 == width(%x) - 1
//! %s = shl %x, C1
//! %t = ashr %s, C2
//! %r = add %t, 1
//! =>
//! %n = xor %x, -1
//! %r = and %n, 1
//! ```
//!
//! Instruction lines follow the IR grammar with two extensions: the width
//! annotation is optional (omitting it makes the value polymorphic), and
//! operands may be symbolic constants (`C`, `C1`, ...) or width-constrained
//! variables (`%x:i8`). The replacement may instead be a single forwarding
//! line `%root = X` where X is a variable, literal, or symbolic constant.
//! Comments run from `;` to end of line. The root — the result of the last
//! pattern line — must be the value the last replacement line defines.

use std::collections::BTreeMap;

use crate::ir::lex::{lex, Cursor, Tok};
use crate::ir::parse::parse_opcode_and_flags;
use crate::ir::{IrError, Opcode, Width};

use super::pred::{is_sym_name, parse_pred};
use super::{check_wellformed, PredExpr, RInst, ROperand, Rule, Severity};

/// Parses a rule file. Order is preserved. The first well-formedness error
/// in any rule is promoted to a hard failure; warnings are not.
pub fn parse_rules(text: &str) -> Result<Vec<Rule>, IrError> {
    let mut rules = Vec::new();
    let mut block: Option<Block> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = (idx + 1) as u32;
        let line = match raw.find(';') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = line.trim();

        if trimmed.is_empty() {
            if let Some(b) = block.take() {
                rules.push(b.finish()?);
            }
            continue;
        }

        if let Some(rest) = trimmed.strip_prefix("name:") {
            if block.is_some() {
                return Err(IrError::Syntax {
                    line: lineno,
                    col: 1,
                    msg: "expected a blank line before the next rule".into(),
                });
            }
            let name = rest.trim();
            if name.is_empty() {
                return Err(IrError::Syntax {
                    line: lineno,
                    col: 1,
                    msg: "rule name is empty".into(),
                });
            }
            block = Some(Block::new(name.to_string(), lineno));
            continue;
        }

        let b = match block.as_mut() {
            Some(b) => b,
            None => {
                return Err(IrError::Syntax {
                    line: lineno,
                    col: 1,
                    msg: "expected `name:` to start a rule".into(),
                })
            }
        };

        if let Some(rest) = trimmed.strip_prefix("pre:") {
            if b.in_rhs {
                return Err(IrError::Syntax {
                    line: lineno,
                    col: 1,
                    msg: "the precondition belongs before `=>`".into(),
                });
            }
            if b.pre.is_some() {
                return Err(IrError::Syntax {
                    line: lineno,
                    col: 1,
                    msg: "rule has two preconditions".into(),
                });
            }
            let mut cur = line_cursor(rest, lineno)?;
            b.pre = Some(parse_pred(&mut cur)?);
            continue;
        }

        if trimmed == "=>" {
            if b.in_rhs {
                return Err(IrError::Syntax {
                    line: lineno,
                    col: 1,
                    msg: "rule has two `=>` separators".into(),
                });
            }
            if b.lhs.is_empty() {
                return Err(IrError::Syntax {
                    line: lineno,
                    col: 1,
                    msg: "pattern has no instructions before `=>`".into(),
                });
            }
            b.in_rhs = true;
            continue;
        }

        let mut cur = line_cursor(trimmed, lineno)?;
        b.add_line(&mut cur, lineno)?;
    }

    if let Some(b) = block.take() {
        rules.push(b.finish()?);
    }
    if rules.is_empty() {
        return Err(IrError::Syntax {
            line: 1,
            col: 1,
            msg: "no rules in input".into(),
        });
    }
    Ok(rules)
}

/// Lexes one line, rewriting token positions to the file line number.
fn line_cursor(text: &str, lineno: u32) -> Result<Cursor, IrError> {
    let mut toks = lex(text).map_err(|e| relocate(e, lineno))?;
    for t in &mut toks {
        t.line = lineno;
    }
    Ok(Cursor::new(toks))
}

fn relocate(e: IrError, lineno: u32) -> IrError {
    match e {
        IrError::Syntax { col, msg, .. } => IrError::Syntax {
            line: lineno,
            col,
            msg,
        },
        other => other,
    }
}

struct Block {
    name: String,
    start_line: u32,
    pre: Option<PredExpr>,
    lhs: Vec<RInst>,
    rhs: Vec<RInst>,
    rhs_alias: Option<ROperand>,
    var_constraints: BTreeMap<String, Width>,
    in_rhs: bool,
}

impl Block {
    fn new(name: String, start_line: u32) -> Block {
        Block {
            name,
            start_line,
            pre: None,
            lhs: Vec::new(),
            rhs: Vec::new(),
            rhs_alias: None,
            var_constraints: BTreeMap::new(),
            in_rhs: false,
        }
    }

    fn add_line(&mut self, cur: &mut Cursor, lineno: u32) -> Result<(), IrError> {
        if self.rhs_alias.is_some() {
            return Err(IrError::Syntax {
                line: lineno,
                col: 1,
                msg: "a forwarding replacement must be the only replacement line".into(),
            });
        }
        let line = parse_line(cur, self.in_rhs, &mut self.var_constraints)?;
        match line {
            Line::Inst(inst) => {
                if self.in_rhs {
                    self.rhs.push(inst);
                } else {
                    self.lhs.push(inst);
                }
            }
            Line::Alias(result, op) => {
                if !self.rhs.is_empty() {
                    return Err(IrError::Syntax {
                        line: lineno,
                        col: 1,
                        msg: "a forwarding replacement must be the only replacement line"
                            .into(),
                    });
                }
                // finish() checks the name against the root.
                let _ = result;
                self.rhs_alias = Some(op);
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<Rule, IrError> {
        if !self.in_rhs {
            return Err(IrError::Syntax {
                line: self.start_line,
                col: 1,
                msg: format!("rule `{}` has no `=>` separator", self.name),
            });
        }
        let rule = Rule {
            name: self.name,
            pre: self.pre,
            lhs: self.lhs,
            rhs: self.rhs,
            rhs_alias: self.rhs_alias,
            var_constraints: self.var_constraints,
        };
        if rule.lhs.is_empty() {
            return Err(IrError::Syntax {
                line: self.start_line,
                col: 1,
                msg: format!("rule `{}` has an empty pattern", rule.name),
            });
        }
        if rule.rhs.is_empty() && rule.rhs_alias.is_none() {
            return Err(IrError::Syntax {
                line: self.start_line,
                col: 1,
                msg: format!("rule `{}` has an empty replacement", rule.name),
            });
        }
        for d in check_wellformed(&rule) {
            if d.severity == Severity::Error {
                return Err(IrError::Ssa {
                    line: self.start_line,
                    msg: format!("rule `{}`: {}", rule.name, d.msg),
                });
            }
        }
        Ok(rule)
    }
}

enum Line {
    Inst(RInst),
    Alias(String, ROperand),
}

/// `%res = ...` — either a rule instruction or a forwarding line.
fn parse_line(
    cur: &mut Cursor,
    in_rhs: bool,
    constraints: &mut BTreeMap<String, Width>,
) -> Result<Line, IrError> {
    let (line, col) = cur.pos();
    let result = match cur.next() {
        Some(sp) => match sp.tok {
            Tok::Local(name) => name,
            other => {
                return Err(IrError::Syntax {
                    line,
                    col,
                    msg: format!("expected `%name =`, found {}", other.describe()),
                })
            }
        },
        None => {
            return Err(IrError::Syntax {
                line,
                col,
                msg: "expected `%name =`".into(),
            })
        }
    };
    cur.expect(Tok::Assign)?;

    // Forwarding line: the right side is a single operand, no opcode.
    let is_alias = match cur.peek() {
        Some(Tok::Local(_)) | Some(Tok::Int(_)) | Some(Tok::Minus) => true,
        Some(Tok::Ident(name)) if is_sym_name(name) => true,
        _ => false,
    };
    if is_alias {
        if !in_rhs {
            return Err(cur.err("forwarding lines are only allowed in the replacement"));
        }
        let op = parse_operand(cur, in_rhs, constraints)?;
        if let Some(t) = cur.peek() {
            if *t != Tok::Newline {
                return Err(cur.err(format!(
                    "unexpected {} after forwarding line",
                    t.describe()
                )));
            }
        }
        return Ok(Line::Alias(result, op));
    }

    let (opcode, swap, flags) = parse_opcode_and_flags(cur)?;

    // Optional width annotation.
    let ann = match cur.peek() {
        Some(Tok::Ident(name)) => match parse_width_ident(name) {
            Some(w) => {
                let (wline, wcol) = cur.pos();
                cur.next();
                Some(w.map_err(|msg| IrError::Syntax {
                    line: wline,
                    col: wcol,
                    msg,
                })?)
            }
            None => None,
        },
        _ => None,
    };

    let mut operands = Vec::with_capacity(opcode.arity());
    for i in 0..opcode.arity() {
        if i > 0 {
            cur.expect(Tok::Comma)?;
        }
        operands.push(parse_operand(cur, in_rhs, constraints)?);
    }
    if swap {
        operands.swap(0, 1);
    }
    if let Some(t) = cur.peek() {
        if *t != Tok::Newline {
            return Err(cur.err(format!("unexpected {} after instruction", t.describe())));
        }
    }
    if opcode.is_cast() && ann.is_none() {
        // Without a destination width the cast direction is unconstrained;
        // insisting on progress here gives far better error messages than
        // the eventual "no admissible width".
        if let Opcode::Zext | Opcode::Sext | Opcode::Trunc = opcode {}
    }
    Ok(Line::Inst(RInst {
        result,
        opcode,
        flags,
        ann,
        operands,
    }))
}

/// `iN` spelled as an identifier; distinguishes annotations from opcodes.
fn parse_width_ident(name: &str) -> Option<Result<Width, String>> {
    let rest = name.strip_prefix('i')?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let bits: u32 = match rest.parse() {
        Ok(b) => b,
        Err(_) => return Some(Err(format!("width i{rest} is out of range"))),
    };
    Some(Width::new(bits).map_err(|e| e.to_string()))
}

fn parse_operand(
    cur: &mut Cursor,
    in_rhs: bool,
    constraints: &mut BTreeMap<String, Width>,
) -> Result<ROperand, IrError> {
    let (line, col) = cur.pos();
    match cur.next() {
        Some(sp) => match sp.tok {
            Tok::Local(name) => {
                // Optional `:iN` width constraint, pattern side only.
                if cur.eat(&Tok::Colon) {
                    let (wline, wcol) = cur.pos();
                    let w = match cur.next() {
                        Some(sp) => match sp.tok {
                            Tok::Ident(id) => match parse_width_ident(&id) {
                                Some(Ok(w)) => w,
                                Some(Err(msg)) => {
                                    return Err(IrError::Syntax {
                                        line: wline,
                                        col: wcol,
                                        msg,
                                    })
                                }
                                None => {
                                    return Err(IrError::Syntax {
                                        line: wline,
                                        col: wcol,
                                        msg: format!("expected a width after `:`, found `{id}`"),
                                    })
                                }
                            },
                            other => {
                                return Err(IrError::Syntax {
                                    line: wline,
                                    col: wcol,
                                    msg: format!(
                                        "expected a width after `:`, found {}",
                                        other.describe()
                                    ),
                                })
                            }
                        },
                        None => return Err(cur.err("expected a width after `:`")),
                    };
                    if in_rhs {
                        return Err(IrError::Syntax {
                            line,
                            col,
                            msg: "width constraints belong on the pattern side".into(),
                        });
                    }
                    if let Some(old) = constraints.insert(name.clone(), w) {
                        if old != w {
                            return Err(IrError::Type {
                                line,
                                msg: format!("%{name} is constrained to both {old} and {w}"),
                            });
                        }
                    }
                }
                Ok(ROperand::Value(name))
            }
            Tok::Int(v) => Ok(ROperand::Literal(v)),
            Tok::Minus => {
                let (nline, ncol) = cur.pos();
                match cur.next() {
                    Some(sp) => match sp.tok {
                        Tok::Int(v) => Ok(ROperand::Literal(-v)),
                        other => Err(IrError::Syntax {
                            line: nline,
                            col: ncol,
                            msg: format!("expected a number after `-`, found {}", other.describe()),
                        }),
                    },
                    None => Err(cur.err("expected a number after `-`")),
                }
            }
            Tok::Ident(name) if is_sym_name(&name) => Ok(ROperand::Sym(name)),
            Tok::Ident(name) => Err(IrError::Syntax {
                line,
                col,
                msg: format!(
                    "unknown operand `{name}` (symbolic constants are C, C1, C2, ...)"
                ),
            }),
            other => Err(IrError::Syntax {
                line,
                col,
                msg: format!("expected an operand, found {}", other.describe()),
            }),
        },
        None => Err(cur.err("expected an operand")),
    }
}
