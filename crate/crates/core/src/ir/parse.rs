//! Parser for the textual IR.
//!
//! ```text
//! func @NAME(%id:iW, ...) {
//!   %id = OPCODE [nsw] [nuw] iW OPERAND, ...
//!   ret OPERAND, ...
//! }
//! ```
//!
//! One instruction per line. An OPERAND is `%id` or a signed decimal literal;
//! literals take the width their position demands, so casts (whose source
//! width comes from the operand itself) and `ret` require named values.
//! `icmp` accepts all ten orderings; `ugt/uge/sgt/sgt` are rewritten at parse
//! time into their mirror predicate with the operands swapped.

use super::lex::{lex, Cursor, Tok};
use super::{Constant, Flags, Function, IcmpPred, Instruction, IrError, Opcode, Operand, Param, Width};
use std::collections::HashMap;

/// Parse exactly one function.
pub fn parse_function(text: &str) -> Result<Function, IrError> {
    let mut cur = Cursor::new(lex(text)?);
    let f = function(&mut cur)?;
    cur.skip_newlines();
    if !cur.at_end() {
        return Err(cur.err("trailing input after function"));
    }
    Ok(f)
}

/// Parse a file containing one or more functions.
pub fn parse_functions(text: &str) -> Result<Vec<Function>, IrError> {
    let mut cur = Cursor::new(lex(text)?);
    let mut out = Vec::new();
    loop {
        cur.skip_newlines();
        if cur.at_end() {
            break;
        }
        out.push(function(&mut cur)?);
    }
    if out.is_empty() {
        return Err(cur.err("no functions in input"));
    }
    Ok(out)
}

fn width_of_ident(s: &str) -> Option<u32> {
    let rest = s.strip_prefix('i')?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

fn parse_width(cur: &mut Cursor) -> Result<Width, IrError> {
    let (line, col) = cur.pos();
    match cur.next() {
        Some(s) => {
            if let Tok::Ident(name) = &s.tok {
                if let Some(bits) = width_of_ident(name) {
                    return Width::new(bits).map_err(|_| IrError::Syntax {
                        line,
                        col,
                        msg: format!("width i{bits} out of range 1..=64"),
                    });
                }
            }
            Err(IrError::Syntax {
                line,
                col,
                msg: format!("expected a width like `i32`, found {}", s.tok.describe()),
            })
        }
        None => Err(cur.err("expected a width like `i32`")),
    }
}

pub(crate) fn opcode_of_ident(name: &str) -> Option<Opcode> {
    Some(match name {
        "add" => Opcode::Add,
        "sub" => Opcode::Sub,
        "mul" => Opcode::Mul,
        "and" => Opcode::And,
        "or" => Opcode::Or,
        "xor" => Opcode::Xor,
        "shl" => Opcode::Shl,
        "lshr" => Opcode::Lshr,
        "ashr" => Opcode::Ashr,
        "select" => Opcode::Select,
        "zext" => Opcode::Zext,
        "sext" => Opcode::Sext,
        "trunc" => Opcode::Trunc,
        _ => return None,
    })
}

/// icmp predicate with a possible operand swap to canonicalize gt/ge forms.
fn icmp_pred(name: &str) -> Option<(IcmpPred, bool)> {
    Some(match name {
        "eq" => (IcmpPred::Eq, false),
        "ne" => (IcmpPred::Ne, false),
        "ult" => (IcmpPred::Ult, false),
        "slt" => (IcmpPred::Slt, false),
        "ule" => (IcmpPred::Ule, false),
        "sle" => (IcmpPred::Sle, false),
        "ugt" => (IcmpPred::Ult, true),
        "sgt" => (IcmpPred::Slt, true),
        "uge" => (IcmpPred::Ule, true),
        "sge" => (IcmpPred::Sle, true),
        _ => return None,
    })
}

/// Opcode plus predicate token for icmp, plus the flag list.
pub(crate) fn parse_opcode_and_flags(cur: &mut Cursor) -> Result<(Opcode, bool, Flags), IrError> {
    let (line, col) = cur.pos();
    let name = match cur.next() {
        Some(s) => match s.tok {
            Tok::Ident(n) => n,
            other => {
                return Err(IrError::Syntax {
                    line,
                    col,
                    msg: format!("expected an opcode, found {}", other.describe()),
                })
            }
        },
        None => return Err(cur.err("expected an opcode")),
    };
    let (opcode, swap) = if name == "icmp" {
        let (pline, pcol) = cur.pos();
        match cur.next() {
            Some(s) => match &s.tok {
                Tok::Ident(p) => match icmp_pred(p) {
                    Some((pred, swap)) => (Opcode::Icmp(pred), swap),
                    None => {
                        return Err(IrError::Syntax {
                            line: pline,
                            col: pcol,
                            msg: format!("unknown icmp predicate `{p}`"),
                        })
                    }
                },
                other => {
                    return Err(IrError::Syntax {
                        line: pline,
                        col: pcol,
                        msg: format!("expected an icmp predicate, found {}", other.describe()),
                    })
                }
            },
            None => return Err(cur.err("expected an icmp predicate")),
        }
    } else {
        match opcode_of_ident(&name) {
            Some(op) => (op, false),
            None => {
                return Err(IrError::Syntax {
                    line,
                    col,
                    msg: format!("unknown opcode `{name}`"),
                })
            }
        }
    };
    let mut flags = Flags::NONE;
    if let Some(Tok::Ident(s)) = cur.peek() {
        if s == "nsw" {
            flags.nsw = true;
            cur.next();
        }
    }
    if let Some(Tok::Ident(s)) = cur.peek() {
        if s == "nuw" {
            flags.nuw = true;
            cur.next();
        } else if s == "nsw" {
            return Err(cur.err("flags must appear in the order `nsw nuw`"));
        }
    }
    Ok((opcode, swap, flags))
}

enum RawOperand {
    Value(String),
    Literal(i128),
}

fn parse_raw_operand(cur: &mut Cursor) -> Result<(RawOperand, u32, u32), IrError> {
    let (line, col) = cur.pos();
    match cur.next() {
        Some(s) => match s.tok {
            Tok::Local(n) => Ok((RawOperand::Value(n), line, col)),
            Tok::Int(v) => Ok((RawOperand::Literal(v), line, col)),
            Tok::Minus => match cur.next() {
                Some(s2) => match s2.tok {
                    Tok::Int(v) => Ok((RawOperand::Literal(-v), line, col)),
                    other => Err(IrError::Syntax {
                        line,
                        col,
                        msg: format!("expected a number after `-`, found {}", other.describe()),
                    }),
                },
                None => Err(cur.err("expected a number after `-`")),
            },
            other => Err(IrError::Syntax {
                line,
                col,
                msg: format!("expected an operand, found {}", other.describe()),
            }),
        },
        None => Err(cur.err("expected an operand")),
    }
}

fn function(cur: &mut Cursor) -> Result<Function, IrError> {
    cur.skip_newlines();
    match cur.next() {
        Some(s) if s.tok == Tok::Ident("func".into()) => {}
        Some(s) => {
            return Err(IrError::Syntax {
                line: s.line,
                col: s.col,
                msg: format!("expected `func`, found {}", s.tok.describe()),
            })
        }
        None => return Err(cur.err("expected `func`")),
    }
    let name = match cur.next() {
        Some(s) => match s.tok {
            Tok::Global(n) => n,
            other => {
                return Err(IrError::Syntax {
                    line: s.line,
                    col: s.col,
                    msg: format!("expected `@name`, found {}", other.describe()),
                })
            }
        },
        None => return Err(cur.err("expected `@name`")),
    };

    cur.expect(Tok::LParen)?;
    let mut params = Vec::new();
    let mut widths: HashMap<String, Width> = HashMap::new();
    if !cur.eat(&Tok::RParen) {
        loop {
            let (line, col) = cur.pos();
            let pname = match cur.next() {
                Some(s) => match s.tok {
                    Tok::Local(n) => n,
                    other => {
                        return Err(IrError::Syntax {
                            line,
                            col,
                            msg: format!("expected a parameter like `%x:i32`, found {}", other.describe()),
                        })
                    }
                },
                None => return Err(cur.err("expected a parameter")),
            };
            cur.expect(Tok::Colon)?;
            let w = parse_width(cur)?;
            if widths.insert(pname.clone(), w).is_some() {
                return Err(IrError::Ssa {
                    line,
                    msg: format!("duplicate parameter %{pname}"),
                });
            }
            params.push(Param { name: pname, width: w });
            if cur.eat(&Tok::Comma) {
                continue;
            }
            cur.expect(Tok::RParen)?;
            break;
        }
    }
    cur.expect(Tok::LBrace)?;

    let mut body: Vec<Instruction> = Vec::new();
    let returns;
    loop {
        cur.skip_newlines();
        match cur.peek() {
            Some(Tok::Ident(s)) if s == "ret" => {
                cur.next();
                returns = parse_returns(cur, &widths)?;
                break;
            }
            Some(Tok::Local(_)) => {
                let inst = instruction(cur, &mut widths)?;
                body.push(inst);
                // One instruction per line.
                match cur.peek() {
                    Some(Tok::Newline) | None => {
                        cur.next();
                    }
                    Some(t) => {
                        return Err(cur.err(format!(
                            "expected end of line after instruction, found {}",
                            t.describe()
                        )))
                    }
                }
            }
            Some(t) => {
                let t = t.describe();
                return Err(cur.err(format!("expected an instruction or `ret`, found {t}")));
            }
            None => return Err(cur.err("expected an instruction or `ret`")),
        }
    }
    cur.skip_newlines();
    cur.expect(Tok::RBrace)?;

    Ok(Function { name, params, body, returns })
}

fn parse_returns(cur: &mut Cursor, widths: &HashMap<String, Width>) -> Result<Vec<String>, IrError> {
    let mut returns = Vec::new();
    loop {
        let (op, line, col) = parse_raw_operand(cur)?;
        match op {
            RawOperand::Value(n) => {
                if !widths.contains_key(&n) {
                    return Err(IrError::Ssa {
                        line,
                        msg: format!("return of undefined value %{n}"),
                    });
                }
                returns.push(n);
            }
            RawOperand::Literal(_) => {
                return Err(IrError::Type {
                    line,
                    msg: "return operands must be named values".into(),
                })
            }
        }
        let _ = col;
        if !cur.eat(&Tok::Comma) {
            break;
        }
    }
    Ok(returns)
}

fn instruction(cur: &mut Cursor, widths: &mut HashMap<String, Width>) -> Result<Instruction, IrError> {
    let (rline, _rcol) = cur.pos();
    let result = match cur.next() {
        Some(s) => match s.tok {
            Tok::Local(n) => n,
            _ => unreachable!("caller peeked a local"),
        },
        None => unreachable!(),
    };
    cur.expect(Tok::Assign)?;
    let (opline, _opcol) = cur.pos();
    let (opcode, swap, flags) = parse_opcode_and_flags(cur)?;
    if !flags.is_empty() && !opcode.accepts_flags() {
        return Err(IrError::Type {
            line: opline,
            msg: format!("{opcode} does not accept nsw/nuw"),
        });
    }
    let width = parse_width(cur)?;

    let mut raw = Vec::new();
    loop {
        raw.push(parse_raw_operand(cur)?);
        if !cur.eat(&Tok::Comma) {
            break;
        }
    }
    if raw.len() != opcode.arity() {
        return Err(IrError::Type {
            line: opline,
            msg: format!("{opcode} expects {} operands, got {}", opcode.arity(), raw.len()),
        });
    }
    if swap {
        raw.swap(0, 1);
    }

    // Expected width per operand position; None means "take the width of the
    // named value", which is how cast sources are typed.
    let slots: Vec<Option<Width>> = match opcode {
        Opcode::Select => vec![Some(Width::BOOL), Some(width), Some(width)],
        Opcode::Zext | Opcode::Sext | Opcode::Trunc => vec![None],
        _ => vec![Some(width); 2],
    };

    let mut operands = Vec::new();
    for ((op, line, _col), slot) in raw.into_iter().zip(slots) {
        match op {
            RawOperand::Value(n) => {
                let got = *widths.get(&n).ok_or(IrError::Ssa {
                    line,
                    msg: format!("use of undefined value %{n}"),
                })?;
                if let Some(want) = slot {
                    if got != want {
                        return Err(IrError::Type {
                            line,
                            msg: format!("operand %{n} has width {got}, expected {want}"),
                        });
                    }
                }
                operands.push(Operand::Value(n));
            }
            RawOperand::Literal(v) => {
                let want = slot.ok_or(IrError::Type {
                    line,
                    msg: format!("{opcode} operand must be a named value"),
                })?;
                let c = Constant::new(v, want).ok_or(IrError::Type {
                    line,
                    msg: format!("constant {v} out of range for {want}"),
                })?;
                operands.push(Operand::Const(c));
            }
        }
    }

    if opcode.is_cast() {
        let src = match &operands[0] {
            Operand::Value(n) => widths[n.as_str()],
            Operand::Const(_) => unreachable!("slot rejected literals"),
        };
        let ok = match opcode {
            Opcode::Trunc => width < src,
            _ => width > src,
        };
        if !ok {
            return Err(IrError::Type {
                line: opline,
                msg: format!("{opcode} from {src} to {width} does not change width the right way"),
            });
        }
    }

    let inst = Instruction { result: result.clone(), opcode, flags, width, operands };
    if widths.insert(result.clone(), inst.result_width()).is_some() {
        return Err(IrError::Ssa {
            line: rline,
            msg: format!("redefinition of %{result}"),
        });
    }
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::super::{evaluate, print_function, IrError, Opcode, Operand, Val};
    use super::*;

    const FOO: &str = include_str!("../../fixtures/foo.ir");

    #[test]
    fn identity_one_liner() {
        let f = parse_function("func @id(%x:i8) { ret %x }").unwrap();
        assert_eq!(f.name, "id");
        assert!(f.body.is_empty());
        assert_eq!(f.returns, vec!["x"]);
        assert_eq!(print_function(&f), "func @id(%x:i8) {\n  ret %x\n}\n");
    }

    #[test]
    fn foo_has_five_instructions() {
        let f = parse_function(FOO).unwrap();
        assert_eq!(f.body.len(), 5);
        assert_eq!(f.cost(), 5);
        assert_eq!(f.returns, vec!["r"]);
    }

    #[test]
    fn print_parse_round_trip() {
        let f = parse_function(FOO).unwrap();
        let printed = print_function(&f);
        let again = parse_function(&printed).unwrap();
        assert_eq!(f, again);
        assert_eq!(printed, print_function(&again));
    }

    #[test]
    fn icmp_gt_forms_are_swapped() {
        let f = parse_function(
            "func @c(%a:i8, %b:i8) {\n  %r = icmp ugt i8 %a, %b\n  ret %r\n}",
        )
        .unwrap();
        let inst = &f.body[0];
        assert_eq!(inst.opcode, Opcode::Icmp(super::super::IcmpPred::Ult));
        assert_eq!(inst.operands[0], Operand::Value("b".into()));
        assert_eq!(inst.operands[1], Operand::Value("a".into()));
        // and the swap preserves meaning: 3 ugt 1 == 1 ult 3 == true
        let g = parse_function(
            "func @c(%a:i8, %b:i8) {\n  %r = icmp ugt i8 %a, %b\n  ret %r\n}",
        )
        .unwrap();
        assert_eq!(evaluate(&g, &[3, 1]).unwrap(), vec![Val::Bits(1)]);
    }

    #[test]
    fn use_before_def_is_ssa_error() {
        let err = parse_function("func @f(%a:i8) {\n  %r = add i8 %a, %q\n  ret %r\n}")
            .unwrap_err();
        assert!(matches!(err, IrError::Ssa { line: 2, .. }), "{err}");
    }

    #[test]
    fn redefinition_is_ssa_error() {
        let err = parse_function(
            "func @f(%a:i8) {\n  %r = add i8 %a, 1\n  %r = add i8 %a, 2\n  ret %r\n}",
        )
        .unwrap_err();
        assert!(matches!(err, IrError::Ssa { line: 3, .. }), "{err}");
    }

    #[test]
    fn width_mismatch_is_type_error() {
        let err = parse_function(
            "func @f(%a:i8, %b:i16) {\n  %r = add i8 %a, %b\n  ret %r\n}",
        )
        .unwrap_err();
        assert!(matches!(err, IrError::Type { .. }), "{err}");
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_function("func @f(%a:i8) {\n  %r = bogus i8 %a, %a\n  ret %r\n}")
            .unwrap_err();
        match err {
            IrError::Syntax { line, col, .. } => {
                assert_eq!(line, 2);
                assert_eq!(col, 8);
            }
            other => panic!("wrong class: {other}"),
        }
    }

    #[test]
    fn constant_out_of_range_is_type_error() {
        let err = parse_function("func @f(%a:i4) {\n  %r = add i4 %a, 16\n  ret %r\n}")
            .unwrap_err();
        assert!(matches!(err, IrError::Type { .. }), "{err}");
        // 15 and -8 are both fine at i4
        parse_function("func @f(%a:i4) {\n  %r = add i4 %a, 15\n  ret %r\n}").unwrap();
        parse_function("func @f(%a:i4) {\n  %r = add i4 %a, -8\n  ret %r\n}").unwrap();
    }

    #[test]
    fn literal_return_is_rejected() {
        let err = parse_function("func @f(%a:i8) { ret 5 }").unwrap_err();
        assert!(matches!(err, IrError::Type { .. }), "{err}");
    }

    #[test]
    fn flags_parse_in_fixed_order() {
        let f = parse_function(
            "func @f(%a:i8) {\n  %r = add nsw nuw i8 %a, %a\n  ret %r\n}",
        )
        .unwrap();
        assert!(f.body[0].flags.nsw && f.body[0].flags.nuw);
        assert!(print_function(&f).contains("add nsw nuw i8"));
        let err = parse_function(
            "func @f(%a:i8) {\n  %r = add nuw nsw i8 %a, %a\n  ret %r\n}",
        )
        .unwrap_err();
        assert!(matches!(err, IrError::Syntax { .. }), "{err}");
        let err = parse_function(
            "func @f(%a:i8) {\n  %r = xor nsw i8 %a, %a\n  ret %r\n}",
        )
        .unwrap_err();
        assert!(matches!(err, IrError::Type { .. }), "{err}");
    }

    #[test]
    fn casts_need_named_values_and_strict_direction() {
        parse_function("func @f(%a:i8) {\n  %r = zext i16 %a\n  ret %r\n}").unwrap();
        let err = parse_function("func @f(%a:i8) {\n  %r = zext i16 3\n  ret %r\n}")
            .unwrap_err();
        assert!(matches!(err, IrError::Type { .. }), "{err}");
        let err = parse_function("func @f(%a:i8) {\n  %r = zext i8 %a\n  ret %r\n}")
            .unwrap_err();
        assert!(matches!(err, IrError::Type { .. }), "{err}");
        let err = parse_function("func @f(%a:i8) {\n  %r = trunc i16 %a\n  ret %r\n}")
            .unwrap_err();
        assert!(matches!(err, IrError::Type { .. }), "{err}");
    }

    #[test]
    fn select_condition_is_i1() {
        let err = parse_function(
            "func @f(%c:i8, %a:i8, %b:i8) {\n  %r = select i8 %c, %a, %b\n  ret %r\n}",
        )
        .unwrap_err();
        assert!(matches!(err, IrError::Type { .. }), "{err}");
        parse_function(
            "func @f(%c:i1, %a:i8, %b:i8) {\n  %r = select i8 %c, %a, %b\n  ret %r\n}",
        )
        .unwrap();
    }

    #[test]
    fn two_instructions_on_one_line_rejected() {
        let err = parse_function(
            "func @f(%a:i8) {\n  %r = add i8 %a, 1 %s = add i8 %r, 1\n  ret %s\n}",
        )
        .unwrap_err();
        assert!(matches!(err, IrError::Syntax { .. }), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let f = parse_function(
            "; header\nfunc @f(%a:i8) {\n\n  ; negate\n  %r = sub i8 0, %a ; trailing\n\n  ret %r\n}\n",
        )
        .unwrap();
        assert_eq!(f.body.len(), 1);
    }

    #[test]
    fn multiple_functions_per_file() {
        let fs = parse_functions("func @a(%x:i8) { ret %x }\n\nfunc @b(%y:i4) { ret %y }")
            .unwrap();
        assert_eq!(fs.len(), 2);
        assert_eq!(fs[1].name, "b");
    }

    #[test]
    fn validate_accepts_parsed_functions() {
        parse_function(FOO).unwrap().validate().unwrap();
    }
}
