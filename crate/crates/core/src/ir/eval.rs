//! Concrete evaluation. Everything is two's-complement modular at the value's
//! width. Poison is produced by shifts with amounts >= width and by nsw/nuw
//! overflow, and any Poison operand makes the result Poison, select included.

use super::{to_signed, Function, IrError, Opcode, Operand, Val, Width};
use std::collections::HashMap;

/// Evaluate `f` on concrete inputs, one per parameter, each already reduced
/// to its parameter's width. Returns one value per `ret` operand.
pub fn evaluate(f: &Function, inputs: &[u64]) -> Result<Vec<Val>, IrError> {
    let vals: Vec<Val> = inputs.iter().map(|&b| Val::Bits(b)).collect();
    evaluate_values(f, &vals)
}

/// Like [`evaluate`], but inputs may be Poison. Exists so poison propagation
/// is testable from the outside; ordinary callers have concrete inputs.
pub fn evaluate_values(f: &Function, inputs: &[Val]) -> Result<Vec<Val>, IrError> {
    if inputs.len() != f.params.len() {
        return Err(IrError::Eval(format!(
            "@{} takes {} inputs, got {}",
            f.name,
            f.params.len(),
            inputs.len()
        )));
    }
    let mut env: HashMap<&str, Val> = HashMap::with_capacity(f.params.len() + f.body.len());
    for (p, &v) in f.params.iter().zip(inputs) {
        if let Val::Bits(b) = v {
            if b & !p.width.mask() != 0 {
                return Err(IrError::Eval(format!(
                    "input {b} for %{} does not fit {}",
                    p.name, p.width
                )));
            }
        }
        env.insert(&p.name, v);
    }
    for inst in &f.body {
        let mut args = Vec::with_capacity(inst.operands.len());
        for op in &inst.operands {
            args.push(operand_val(&env, op)?);
        }
        let src_width = match inst.opcode {
            Opcode::Zext | Opcode::Sext | Opcode::Trunc => match &inst.operands[0] {
                Operand::Value(n) => f.value_width(n).ok_or_else(|| {
                    IrError::Eval(format!("missing width for %{n}"))
                })?,
                Operand::Const(c) => c.width,
            },
            _ => inst.width,
        };
        let v = apply_op(inst.opcode, inst.flags, inst.width, src_width, &args);
        env.insert(&inst.result, v);
    }
    let mut out = Vec::with_capacity(f.returns.len());
    for r in &f.returns {
        out.push(*env.get(r.as_str()).ok_or_else(|| {
            IrError::Eval(format!("return of undefined value %{r}"))
        })?);
    }
    Ok(out)
}

fn operand_val(env: &HashMap<&str, Val>, op: &Operand) -> Result<Val, IrError> {
    match op {
        Operand::Value(n) => env
            .get(n.as_str())
            .copied()
            .ok_or_else(|| IrError::Eval(format!("use of undefined value %{n}"))),
        Operand::Const(c) => Ok(Val::Bits(c.bits)),
    }
}

/// One instruction's semantics. `width` is the instruction annotation and
/// `src_width` the operand width for casts (equal to `width` elsewhere).
/// Any Poison argument yields Poison before the opcode is consulted.
pub(crate) fn apply_op(
    opcode: Opcode,
    flags: super::Flags,
    width: Width,
    src_width: Width,
    args: &[Val],
) -> Val {
    let mut bits = Vec::with_capacity(args.len());
    for a in args {
        match a {
            Val::Bits(b) => bits.push(*b),
            Val::Poison => return Val::Poison,
        }
    }
    let w = width;
    let m = w.mask();
    match opcode {
        Opcode::Add | Opcode::Sub | Opcode::Mul => {
            let (a, b) = (bits[0], bits[1]);
            let (sa, sb) = (to_signed(a, w) as i128, to_signed(b, w) as i128);
            let (sres, ures) = match opcode {
                Opcode::Add => (sa + sb, a as u128 + b as u128),
                Opcode::Sub => (sa - sb, (a as u128).wrapping_sub(b as u128)),
                Opcode::Mul => (sa * sb, a as u128 * b as u128),
                _ => unreachable!(),
            };
            if flags.nsw {
                let lo = -(1i128 << (w.bits() - 1));
                let hi = (1i128 << (w.bits() - 1)) - 1;
                if sres < lo || sres > hi {
                    return Val::Poison;
                }
            }
            if flags.nuw {
                let fits = match opcode {
                    Opcode::Sub => a >= b,
                    _ => ures <= m as u128,
                };
                if !fits {
                    return Val::Poison;
                }
            }
            Val::Bits((sres as u64) & m)
        }
        Opcode::And => Val::Bits(bits[0] & bits[1]),
        Opcode::Or => Val::Bits(bits[0] | bits[1]),
        Opcode::Xor => Val::Bits(bits[0] ^ bits[1]),
        Opcode::Shl => {
            let (a, amt) = (bits[0], bits[1]);
            if amt >= w.bits() as u64 {
                return Val::Poison;
            }
            let r = (a << amt) & m;
            if flags.nuw && (r >> amt) != a {
                return Val::Poison;
            }
            if flags.nsw {
                let back = (to_signed(r, w) >> amt) as u64 & m;
                if back != a {
                    return Val::Poison;
                }
            }
            Val::Bits(r)
        }
        Opcode::Lshr => {
            let (a, amt) = (bits[0], bits[1]);
            if amt >= w.bits() as u64 {
                return Val::Poison;
            }
            Val::Bits(a >> amt)
        }
        Opcode::Ashr => {
            let (a, amt) = (bits[0], bits[1]);
            if amt >= w.bits() as u64 {
                return Val::Poison;
            }
            Val::Bits(((to_signed(a, w) >> amt) as u64) & m)
        }
        Opcode::Icmp(pred) => {
            let (a, b) = (bits[0], bits[1]);
            let (sa, sb) = (to_signed(a, w), to_signed(b, w));
            let r = match pred {
                super::IcmpPred::Eq => a == b,
                super::IcmpPred::Ne => a != b,
                super::IcmpPred::Ult => a < b,
                super::IcmpPred::Slt => sa < sb,
                super::IcmpPred::Ule => a <= b,
                super::IcmpPred::Sle => sa <= sb,
            };
            Val::Bits(r as u64)
        }
        Opcode::Select => Val::Bits(if bits[0] != 0 { bits[1] } else { bits[2] }),
        Opcode::Zext => Val::Bits(bits[0]),
        Opcode::Sext => Val::Bits((to_signed(bits[0], src_width) as u64) & m),
        Opcode::Trunc => Val::Bits(bits[0] & m),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_function, Flags, IcmpPred, Opcode, Width};
    use super::*;

    fn run1(src: &str, inputs: &[u64]) -> Val {
        let f = parse_function(src).unwrap();
        evaluate(&f, inputs).unwrap()[0]
    }

    #[test]
    fn wrapping_add_at_i8() {
        assert_eq!(
            run1("func @f(%a:i8, %b:i8) {\n  %r = add i8 %a, %b\n  ret %r\n}", &[200, 100]),
            Val::Bits(44)
        );
    }

    #[test]
    fn nsw_overflow_is_poison() {
        let src = "func @f(%a:i4, %b:i4) {\n  %r = add nsw i4 %a, %b\n  ret %r\n}";
        assert_eq!(run1(src, &[7, 1]), Val::Poison); // 7 + 1 = 8 > i4 max
        let plain = "func @f(%a:i4, %b:i4) {\n  %r = add i4 %a, %b\n  ret %r\n}";
        assert_eq!(run1(plain, &[7, 1]), Val::Bits(8));
    }

    #[test]
    fn nuw_borrow_is_poison() {
        let src = "func @f(%a:i8, %b:i8) {\n  %r = sub nuw i8 %a, %b\n  ret %r\n}";
        assert_eq!(run1(src, &[3, 5]), Val::Poison);
        assert_eq!(run1(src, &[5, 3]), Val::Bits(2));
    }

    #[test]
    fn mul_nsw_nuw_boundaries() {
        let nsw = "func @f(%a:i4, %b:i4) {\n  %r = mul nsw i4 %a, %b\n  ret %r\n}";
        assert_eq!(run1(nsw, &[4, 2]), Val::Poison); // 8 overflows signed i4
        assert_eq!(run1(nsw, &[13, 2]), Val::Bits(10)); // -3 * 2 = -6 fits
        let nuw = "func @f(%a:i4, %b:i4) {\n  %r = mul nuw i4 %a, %b\n  ret %r\n}";
        assert_eq!(run1(nuw, &[8, 2]), Val::Poison);
        assert_eq!(run1(nuw, &[7, 2]), Val::Bits(14));
    }

    #[test]
    fn shift_by_width_or_more_is_poison() {
        for op in ["shl", "lshr", "ashr"] {
            let src = format!("func @f(%a:i8, %b:i8) {{\n  %r = {op} i8 %a, %b\n  ret %r\n}}");
            assert_eq!(run1(&src, &[1, 8]), Val::Poison, "{op} by 8");
            assert_eq!(run1(&src, &[1, 200]), Val::Poison, "{op} by 200");
            assert_ne!(run1(&src, &[1, 7]), Val::Poison, "{op} by 7");
        }
    }

    #[test]
    fn ashr_sign_fills() {
        assert_eq!(
            run1("func @f(%a:i8) {\n  %r = ashr i8 %a, 4\n  ret %r\n}", &[0x80]),
            Val::Bits(0xF8)
        );
        assert_eq!(
            run1("func @f(%a:i8) {\n  %r = lshr i8 %a, 4\n  ret %r\n}", &[0x80]),
            Val::Bits(0x08)
        );
    }

    #[test]
    fn shl_flag_checks() {
        let nuw = "func @f(%a:i8) {\n  %r = shl nuw i8 %a, 1\n  ret %r\n}";
        assert_eq!(run1(nuw, &[0x80]), Val::Poison);
        assert_eq!(run1(nuw, &[0x40]), Val::Bits(0x80));
        let nsw = "func @f(%a:i8) {\n  %r = shl nsw i8 %a, 1\n  ret %r\n}";
        assert_eq!(run1(nsw, &[0x40]), Val::Poison); // 64<<1 = -128, sign flip
        assert_eq!(run1(nsw, &[0x20]), Val::Bits(0x40));
    }

    #[test]
    fn icmp_all_predicates() {
        let cases: &[(&str, u64, u64, u64)] = &[
            ("eq", 5, 5, 1),
            ("ne", 5, 5, 0),
            ("ult", 1, 255, 1),
            ("ule", 255, 255, 1),
            ("slt", 255, 0, 1), // -1 < 0 signed
            ("sle", 0, 255, 0),
        ];
        for &(p, a, b, want) in cases {
            let src =
                format!("func @f(%a:i8, %b:i8) {{\n  %r = icmp {p} i8 %a, %b\n  ret %r\n}}");
            assert_eq!(run1(&src, &[a, b]), Val::Bits(want), "icmp {p} {a} {b}");
        }
    }

    #[test]
    fn select_picks_by_condition_bit() {
        let src = "func @f(%c:i1, %a:i8, %b:i8) {\n  %r = select i8 %c, %a, %b\n  ret %r\n}";
        assert_eq!(run1(src, &[1, 10, 20]), Val::Bits(10));
        assert_eq!(run1(src, &[0, 10, 20]), Val::Bits(20));
    }

    #[test]
    fn select_is_strict_in_poison() {
        // poison in the *unchosen* arm still poisons the result
        let v = apply_op(
            Opcode::Select,
            Flags::default(),
            Width::new(8).unwrap(),
            Width::new(8).unwrap(),
            &[Val::Bits(1), Val::Bits(10), Val::Poison],
        );
        assert_eq!(v, Val::Poison);
        let v = apply_op(
            Opcode::Select,
            Flags::default(),
            Width::new(8).unwrap(),
            Width::new(8).unwrap(),
            &[Val::Poison, Val::Bits(10), Val::Bits(20)],
        );
        assert_eq!(v, Val::Poison);
    }

    #[test]
    fn poison_is_sticky_through_every_opcode() {
        let w = Width::new(4).unwrap();
        let ops: &[(Opcode, usize, Width)] = &[
            (Opcode::Add, 2, w),
            (Opcode::Sub, 2, w),
            (Opcode::Mul, 2, w),
            (Opcode::And, 2, w),
            (Opcode::Or, 2, w),
            (Opcode::Xor, 2, w),
            (Opcode::Shl, 2, w),
            (Opcode::Lshr, 2, w),
            (Opcode::Ashr, 2, w),
            (Opcode::Icmp(IcmpPred::Eq), 2, w),
            (Opcode::Select, 3, w),
            (Opcode::Zext, 1, Width::new(2).unwrap()),
            (Opcode::Sext, 1, Width::new(2).unwrap()),
            (Opcode::Trunc, 1, Width::new(8).unwrap()),
        ];
        for &(op, arity, src_w) in ops {
            for slot in 0..arity {
                let mut args = vec![Val::Bits(1); arity];
                args[slot] = Val::Poison;
                let v = apply_op(op, Flags::default(), w, src_w, &args);
                assert_eq!(v, Val::Poison, "{op:?} slot {slot}");
            }
        }
    }

    #[test]
    fn casts_move_bits_correctly() {
        assert_eq!(
            run1("func @f(%a:i4) {\n  %r = zext i8 %a\n  ret %r\n}", &[0b1010]),
            Val::Bits(0b0000_1010)
        );
        assert_eq!(
            run1("func @f(%a:i4) {\n  %r = sext i8 %a\n  ret %r\n}", &[0b1010]),
            Val::Bits(0b1111_1010)
        );
        assert_eq!(
            run1("func @f(%a:i8) {\n  %r = trunc i4 %a\n  ret %r\n}", &[0xAB]),
            Val::Bits(0xB)
        );
    }

    #[test]
    fn arithmetic_matches_wide_oracle_at_small_widths() {
        // cross-check the masked u64 arithmetic against i128 arithmetic
        for wbits in 1..=6u32 {
            let w = Width::new(wbits).unwrap();
            let m = w.mask();
            for a in 0..=m {
                for b in 0..=m {
                    let sum = ((a as i128 + b as i128) as u64) & m;
                    let dif = ((a as i128 - b as i128) as u64) & m;
                    let prd = ((a as i128 * b as i128) as u64) & m;
                    let args = [Val::Bits(a), Val::Bits(b)];
                    let f = Flags::default();
                    assert_eq!(apply_op(Opcode::Add, f, w, w, &args), Val::Bits(sum));
                    assert_eq!(apply_op(Opcode::Sub, f, w, w, &args), Val::Bits(dif));
                    assert_eq!(apply_op(Opcode::Mul, f, w, w, &args), Val::Bits(prd));
                }
            }
        }
    }

    #[test]
    fn nsw_nuw_match_wide_oracle_at_small_widths() {
        for wbits in 1..=5u32 {
            let w = Width::new(wbits).unwrap();
            let m = w.mask();
            let smin = -(1i128 << (wbits - 1));
            let smax = (1i128 << (wbits - 1)) - 1;
            for a in 0..=m {
                for b in 0..=m {
                    let (sa, sb) = (to_signed(a, w) as i128, to_signed(b, w) as i128);
                    let args = [Val::Bits(a), Val::Bits(b)];
                    for (op, sres, ures) in [
                        (Opcode::Add, sa + sb, a as i128 + b as i128),
                        (Opcode::Sub, sa - sb, a as i128 - b as i128),
                        (Opcode::Mul, sa * sb, a as i128 * b as i128),
                    ] {
                        let nsw_ok = (smin..=smax).contains(&sres);
                        let nuw_ok = (0..=m as i128).contains(&ures);
                        let nsw = Flags { nsw: true, nuw: false };
                        let nuw = Flags { nsw: false, nuw: true };
                        assert_eq!(
                            apply_op(op, nsw, w, w, &args) == Val::Poison,
                            !nsw_ok,
                            "{op:?} nsw i{wbits} {a} {b}"
                        );
                        assert_eq!(
                            apply_op(op, nuw, w, w, &args) == Val::Poison,
                            !nuw_ok,
                            "{op:?} nuw i{wbits} {a} {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn evaluate_checks_inputs() {
        let f = parse_function("func @f(%a:i4) {\n  %r = add i4 %a, 1\n  ret %r\n}").unwrap();
        assert!(evaluate(&f, &[]).is_err());
        assert!(evaluate(&f, &[16]).is_err());
        assert_eq!(evaluate(&f, &[15]).unwrap(), vec![Val::Bits(0)]);
    }

    #[test]
    fn foo_fixture_evaluates() {
        let f = parse_function(include_str!("../../fixtures/foo.ir")).unwrap();
        // na = -3 = 0xFFFFFFFD, nb = -5 = 0xFFFFFFFB
        // c = na - nb = 2, d = na + nb = -8, r = 2 ^ -8 = 0xFFFFFFFA
        assert_eq!(evaluate(&f, &[3, 5]).unwrap(), vec![Val::Bits(0xFFFF_FFFA)]);
    }

    #[test]
    fn multi_return_order_is_preserved() {
        let f = parse_function(include_str!("../../fixtures/bar.ir")).unwrap();
        let out = evaluate(&f, &[3, 5]).unwrap();
        assert_eq!(
            out,
            vec![
                Val::Bits(0xFFFF_FFF8), // d = -8
                Val::Bits(0xFFFF_FFFD), // na = -3
                Val::Bits(0xFFFF_FFFB), // nb = -5
            ]
        );
    }
}
