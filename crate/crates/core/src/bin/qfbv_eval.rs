//! qfbv-eval: a tiny QF_BV solver speaking a subset of SMT-LIB2 on
//! stdin/stdout, answering `(check-sat)` by exhaustive enumeration.
//!
//! It exists as an independent cross-check for the library's exhaustive
//! verification backend and as a stand-in external solver for tests of the
//! subprocess protocol, so it deliberately shares no code with the library:
//! values are 128-bit here (queries widen intermediates up to twice the
//! word size), the parser is a fresh s-expression reader, and the search is
//! a plain odometer over all declared constants.
//!
//! Supported: set-logic/set-option/set-info (ignored), declare-fun and
//! declare-const over `Bool` and `(_ BitVec n)` with n <= 128, zero-arity
//! define-fun, assert, check-sat, get-model, echo, reset, exit. Total input
//! space is capped at 2^26 assignments; larger problems answer `unknown`.

use std::collections::HashMap;
use std::io::{Read, Write};

const MAX_WIDTH: u32 = 128;
const ENUM_CAP_BITS: u32 = 26;

fn main() {
    // Commands run as soon as their parentheses balance (and replies are
    // flushed right away): callers hold the pipe open for follow-ups like
    // (get-model), so waiting for end-of-input would deadlock them.
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut state = State::default();

    let mut buf = String::new();
    let mut depth: i64 = 0;
    let mut in_comment = false;
    let mut chunk = [0u8; 4096];
    loop {
        let n = match input.read(&mut chunk) {
            Ok(0) | Err(_) => return,
            Ok(n) => n,
        };
        for &byte in &chunk[..n] {
            let ch = byte as char;
            if in_comment {
                if ch == '\n' {
                    in_comment = false;
                }
                continue;
            }
            match ch {
                ';' => in_comment = true,
                '(' => {
                    depth += 1;
                    buf.push(ch);
                }
                ')' => {
                    depth -= 1;
                    buf.push(ch);
                    if depth == 0 {
                        run_command(&buf, &mut state, &mut out);
                        let _ = out.flush();
                        buf.clear();
                        if state.exited {
                            return;
                        }
                    }
                }
                _ => {
                    if depth > 0 {
                        buf.push(ch);
                    }
                }
            }
        }
    }
}

#[derive(Default)]
struct State {
    /// Declared unknowns in declaration order: (name, sort).
    decls: Vec<(String, Sort)>,
    /// Zero-arity definitions in order: (name, body).
    defs: Vec<(String, Sexp)>,
    asserts: Vec<Sexp>,
    model: Option<HashMap<String, Value>>,
    exited: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Sort {
    Bool,
    Bv(u32),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Value {
    B(bool),
    Bv(u128, u32),
}

#[derive(Clone, Debug)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn run_command(text: &str, st: &mut State, out: &mut impl Write) {
    let sexp = match parse_one(text) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(out, "(error \"{e}\")");
            let _ = out.flush();
            return;
        }
    };
    let items = match &sexp {
        Sexp::List(items) if !items.is_empty() => items,
        _ => {
            let _ = writeln!(out, "(error \"expected a command\")");
            let _ = out.flush();
            return;
        }
    };
    let head = match &items[0] {
        Sexp::Atom(a) => a.as_str(),
        _ => "",
    };
    let result = dispatch(head, items, st, out);
    if let Err(e) = result {
        let _ = writeln!(out, "(error \"{e}\")");
    }
    let _ = out.flush();
}

fn dispatch(
    head: &str,
    items: &[Sexp],
    st: &mut State,
    out: &mut impl Write,
) -> Result<(), String> {
    match head {
        "set-logic" | "set-option" | "set-info" => Ok(()),
        "echo" => {
            if let Some(Sexp::Atom(a)) = items.get(1) {
                let _ = writeln!(out, "{}", a.trim_matches('"'));
            }
            Ok(())
        }
        "reset" => {
            *st = State::default();
            Ok(())
        }
        "exit" => {
            st.exited = true;
            Ok(())
        }
        "declare-fun" => {
            let name = atom(items.get(1)).ok_or("declare-fun needs a name")?;
            match items.get(2) {
                Some(Sexp::List(args)) if args.is_empty() => {}
                _ => return Err("only zero-arity declare-fun is supported".into()),
            }
            let sort = parse_sort(items.get(3).ok_or("declare-fun needs a sort")?)?;
            st.decls.push((name.to_string(), sort));
            Ok(())
        }
        "declare-const" => {
            let name = atom(items.get(1)).ok_or("declare-const needs a name")?;
            let sort = parse_sort(items.get(2).ok_or("declare-const needs a sort")?)?;
            st.decls.push((name.to_string(), sort));
            Ok(())
        }
        "define-fun" => {
            let name = atom(items.get(1)).ok_or("define-fun needs a name")?;
            match items.get(2) {
                Some(Sexp::List(args)) if args.is_empty() => {}
                _ => return Err("only zero-arity define-fun is supported".into()),
            }
            let body = items.get(4).ok_or("define-fun needs a body")?;
            st.defs.push((name.to_string(), body.clone()));
            Ok(())
        }
        "assert" => {
            let body = items.get(1).ok_or("assert needs a formula")?;
            st.asserts.push(body.clone());
            Ok(())
        }
        "check-sat" => {
            let verdict = check_sat(st)?;
            let _ = writeln!(out, "{verdict}");
            Ok(())
        }
        "get-model" => {
            let model = st.model.as_ref().ok_or("no model available")?;
            let _ = writeln!(out, "(");
            for (name, sort) in &st.decls {
                if let Some(v) = model.get(name) {
                    match (v, sort) {
                        (Value::Bv(bits, w), _) => {
                            let _ = writeln!(
                                out,
                                "  (define-fun {name} () (_ BitVec {w}) (_ bv{bits} {w}))"
                            );
                        }
                        (Value::B(b), _) => {
                            let _ = writeln!(out, "  (define-fun {name} () Bool {b})");
                        }
                    }
                }
            }
            let _ = writeln!(out, ")");
            Ok(())
        }
        other => Err(format!("unsupported command {other}")),
    }
}

fn atom(e: Option<&Sexp>) -> Option<&str> {
    match e {
        Some(Sexp::Atom(a)) => Some(a.as_str()),
        _ => None,
    }
}

fn parse_sort(e: &Sexp) -> Result<Sort, String> {
    match e {
        Sexp::Atom(a) if a == "Bool" => Ok(Sort::Bool),
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(u), Sexp::Atom(bv), Sexp::Atom(n)] if u == "_" && bv == "BitVec" => {
                let w: u32 = n.parse().map_err(|_| "bad bit-vector width")?;
                if w == 0 || w > MAX_WIDTH {
                    return Err(format!("unsupported bit-vector width {w}"));
                }
                Ok(Sort::Bv(w))
            }
            _ => Err("unsupported sort".into()),
        },
        _ => Err("unsupported sort".into()),
    }
}

// ---------------------------------------------------------------------------
// Search.

fn check_sat(st: &mut State) -> Result<&'static str, String> {
    let total_bits: u32 = st
        .decls
        .iter()
        .map(|(_, s)| match s {
            Sort::Bool => 1,
            Sort::Bv(w) => *w,
        })
        .sum();
    if total_bits > ENUM_CAP_BITS {
        st.model = None;
        return Ok("unknown");
    }

    let mut env: HashMap<String, Value> = HashMap::new();
    let n = st.decls.len();
    let mut counters = vec![0u128; n];
    // The cap above bounds every width, so the shifts below cannot overflow.
    let limits: Vec<u128> = st
        .decls
        .iter()
        .map(|(_, s)| match s {
            Sort::Bool => 2u128,
            Sort::Bv(w) => 1u128 << w,
        })
        .collect();

    loop {
        env.clear();
        for (i, (name, sort)) in st.decls.iter().enumerate() {
            let v = match sort {
                Sort::Bool => Value::B(counters[i] == 1),
                Sort::Bv(w) => Value::Bv(counters[i], *w),
            };
            env.insert(name.clone(), v);
        }
        let mut ok = true;
        let mut eval_err = None;
        for (name, body) in &st.defs {
            match eval(body, &env) {
                Ok(v) => {
                    env.insert(name.clone(), v);
                }
                Err(e) => {
                    eval_err = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = eval_err {
            return Err(e);
        }
        for a in &st.asserts {
            match eval(a, &env)? {
                Value::B(true) => {}
                Value::B(false) => {
                    ok = false;
                    break;
                }
                Value::Bv(..) => return Err("assert of a non-boolean".into()),
            }
        }
        if ok {
            st.model = Some(env);
            return Ok("sat");
        }
        // Advance the odometer, least-significant declaration first.
        let mut i = 0;
        loop {
            if i == n {
                st.model = None;
                return Ok("unsat");
            }
            counters[i] += 1;
            if counters[i] < limits[i] {
                break;
            }
            counters[i] = 0;
            i += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Term evaluation.

fn mask(w: u32) -> u128 {
    if w >= 128 {
        u128::MAX
    } else {
        (1u128 << w) - 1
    }
}

fn to_signed(v: u128, w: u32) -> i128 {
    let m = mask(w);
    let v = v & m;
    if w < 128 && v >> (w - 1) != 0 {
        (v | !m) as i128
    } else {
        v as i128
    }
}

fn eval(e: &Sexp, env: &HashMap<String, Value>) -> Result<Value, String> {
    match e {
        Sexp::Atom(a) => eval_atom(a, env),
        Sexp::List(items) => eval_list(items, env),
    }
}

fn eval_atom(a: &str, env: &HashMap<String, Value>) -> Result<Value, String> {
    if a == "true" {
        return Ok(Value::B(true));
    }
    if a == "false" {
        return Ok(Value::B(false));
    }
    if let Some(b) = a.strip_prefix("#b") {
        let w = b.len() as u32;
        if w == 0 || w > MAX_WIDTH {
            return Err(format!("bad binary literal {a}"));
        }
        let v = u128::from_str_radix(b, 2).map_err(|_| format!("bad binary literal {a}"))?;
        return Ok(Value::Bv(v, w));
    }
    if let Some(h) = a.strip_prefix("#x") {
        let w = (h.len() * 4) as u32;
        if w == 0 || w > MAX_WIDTH {
            return Err(format!("bad hex literal {a}"));
        }
        let v = u128::from_str_radix(h, 16).map_err(|_| format!("bad hex literal {a}"))?;
        return Ok(Value::Bv(v, w));
    }
    env.get(a)
        .copied()
        .ok_or_else(|| format!("unbound symbol {a}"))
}

fn eval_list(items: &[Sexp], env: &HashMap<String, Value>) -> Result<Value, String> {
    if items.is_empty() {
        return Err("empty application".into());
    }
    // Indexed literal: (_ bvN w)
    if let [Sexp::Atom(u), Sexp::Atom(num), Sexp::Atom(w)] = items {
        if u == "_" {
            if let Some(digits) = num.strip_prefix("bv") {
                let v: u128 = digits.parse().map_err(|_| format!("bad literal {num}"))?;
                let w: u32 = w.parse().map_err(|_| "bad literal width")?;
                if w == 0 || w > MAX_WIDTH {
                    return Err(format!("unsupported literal width {w}"));
                }
                return Ok(Value::Bv(v & mask(w), w));
            }
        }
    }
    // Indexed operation application: ((_ op k) arg)
    if let Sexp::List(head) = &items[0] {
        if let [Sexp::Atom(u), Sexp::Atom(op), rest @ ..] = head.as_slice() {
            if u == "_" {
                return eval_indexed(op, rest, &items[1..], env);
            }
        }
        return Err("unsupported application head".into());
    }
    let op = match &items[0] {
        Sexp::Atom(a) => a.as_str(),
        _ => unreachable!(),
    };
    let args: Vec<Value> = items[1..]
        .iter()
        .map(|e| eval(e, env))
        .collect::<Result<_, _>>()?;

    let bv2 = |f: &dyn Fn(u128, u128, u32) -> u128| -> Result<Value, String> {
        let (a, wa) = as_bv(&args, 0)?;
        let (b, wb) = as_bv(&args, 1)?;
        if wa != wb {
            return Err(format!("width mismatch in {op}: {wa} vs {wb}"));
        }
        Ok(Value::Bv(f(a, b, wa) & mask(wa), wa))
    };
    let cmp = |f: &dyn Fn(u128, u128, u32) -> bool| -> Result<Value, String> {
        let (a, wa) = as_bv(&args, 0)?;
        let (b, wb) = as_bv(&args, 1)?;
        if wa != wb {
            return Err(format!("width mismatch in {op}: {wa} vs {wb}"));
        }
        Ok(Value::B(f(a, b, wa)))
    };

    match op {
        "and" => fold_bool(&args, |a, b| a && b, true),
        "or" => fold_bool(&args, |a, b| a || b, false),
        "xor" => fold_bool(&args, |a, b| a ^ b, false),
        "not" => match args.as_slice() {
            [Value::B(b)] => Ok(Value::B(!b)),
            _ => Err("not expects one boolean".into()),
        },
        "=>" => match args.as_slice() {
            [Value::B(a), Value::B(b)] => Ok(Value::B(!a || *b)),
            _ => Err("=> expects two booleans".into()),
        },
        "=" => {
            all_same(&args, "=")?;
            Ok(Value::B(args.windows(2).all(|w| w[0] == w[1])))
        }
        "distinct" => {
            all_same(&args, "distinct")?;
            let mut ok = true;
            for i in 0..args.len() {
                for j in i + 1..args.len() {
                    if args[i] == args[j] {
                        ok = false;
                    }
                }
            }
            Ok(Value::B(ok))
        }
        "ite" => match args.as_slice() {
            [Value::B(c), t, f] => Ok(if *c { *t } else { *f }),
            _ => Err("ite expects a boolean and two values".into()),
        },
        "bvadd" => bv2(&|a, b, _| a.wrapping_add(b)),
        "bvsub" => bv2(&|a, b, _| a.wrapping_sub(b)),
        "bvmul" => bv2(&|a, b, _| a.wrapping_mul(b)),
        "bvand" => bv2(&|a, b, _| a & b),
        "bvor" => bv2(&|a, b, _| a | b),
        "bvxor" => bv2(&|a, b, _| a ^ b),
        "bvnot" => {
            let (a, w) = as_bv(&args, 0)?;
            Ok(Value::Bv(!a & mask(w), w))
        }
        "bvneg" => {
            let (a, w) = as_bv(&args, 0)?;
            Ok(Value::Bv(a.wrapping_neg() & mask(w), w))
        }
        "bvshl" => bv2(&|a, b, w| if b >= w as u128 { 0 } else { a << b }),
        "bvlshr" => bv2(&|a, b, w| if b >= w as u128 { 0 } else { a >> b }),
        "bvashr" => bv2(&|a, b, w| {
            let sign = to_signed(a, w) < 0;
            if b >= w as u128 {
                if sign {
                    mask(w)
                } else {
                    0
                }
            } else {
                (to_signed(a, w) >> (b as u32)) as u128
            }
        }),
        "bvudiv" => bv2(&|a, b, w| if b == 0 { mask(w) } else { a / b }),
        "bvurem" => bv2(&|a, b, _| if b == 0 { a } else { a % b }),
        "bvult" => cmp(&|a, b, _| a < b),
        "bvule" => cmp(&|a, b, _| a <= b),
        "bvugt" => cmp(&|a, b, _| a > b),
        "bvuge" => cmp(&|a, b, _| a >= b),
        "bvslt" => cmp(&|a, b, w| to_signed(a, w) < to_signed(b, w)),
        "bvsle" => cmp(&|a, b, w| to_signed(a, w) <= to_signed(b, w)),
        "bvsgt" => cmp(&|a, b, w| to_signed(a, w) > to_signed(b, w)),
        "bvsge" => cmp(&|a, b, w| to_signed(a, w) >= to_signed(b, w)),
        "concat" => {
            let (a, wa) = as_bv(&args, 0)?;
            let (b, wb) = as_bv(&args, 1)?;
            if wa + wb > MAX_WIDTH {
                return Err("concat result too wide".into());
            }
            Ok(Value::Bv((a << wb) | b, wa + wb))
        }
        other => Err(format!("unsupported operation {other}")),
    }
}

fn eval_indexed(
    op: &str,
    index: &[Sexp],
    args: &[Sexp],
    env: &HashMap<String, Value>,
) -> Result<Value, String> {
    let idx = |k: usize| -> Result<u32, String> {
        match index.get(k) {
            Some(Sexp::Atom(a)) => a.parse().map_err(|_| format!("bad index in {op}")),
            _ => Err(format!("missing index in {op}")),
        }
    };
    let arg0 = eval(args.first().ok_or("indexed op needs an argument")?, env)?;
    let (v, w) = match arg0 {
        Value::Bv(v, w) => (v, w),
        Value::B(_) => return Err(format!("{op} expects a bit-vector")),
    };
    match op {
        "zero_extend" => {
            let k = idx(0)?;
            if w + k > MAX_WIDTH {
                return Err("zero_extend result too wide".into());
            }
            Ok(Value::Bv(v, w + k))
        }
        "sign_extend" => {
            let k = idx(0)?;
            if w + k > MAX_WIDTH {
                return Err("sign_extend result too wide".into());
            }
            let extended = (to_signed(v, w) as u128) & mask(w + k);
            Ok(Value::Bv(extended, w + k))
        }
        "extract" => {
            let hi = idx(0)?;
            let lo = idx(1)?;
            if hi < lo || hi >= w {
                return Err(format!("bad extract range {hi}..{lo} on width {w}"));
            }
            let nw = hi - lo + 1;
            Ok(Value::Bv((v >> lo) & mask(nw), nw))
        }
        other => Err(format!("unsupported indexed operation {other}")),
    }
}

fn as_bv(args: &[Value], i: usize) -> Result<(u128, u32), String> {
    match args.get(i) {
        Some(Value::Bv(v, w)) => Ok((*v, *w)),
        _ => Err("expected a bit-vector argument".into()),
    }
}

fn all_same(args: &[Value], op: &str) -> Result<(), String> {
    if args.len() < 2 {
        return Err(format!("{op} expects at least two arguments"));
    }
    let same = |a: &Value, b: &Value| -> bool {
        matches!(
            (a, b),
            (Value::B(_), Value::B(_)) | (Value::Bv(_, _), Value::Bv(_, _))
        ) && match (a, b) {
            (Value::Bv(_, wa), Value::Bv(_, wb)) => wa == wb,
            _ => true,
        }
    };
    for w in args.windows(2) {
        if !same(&w[0], &w[1]) {
            return Err(format!("sort mismatch in {op}"));
        }
    }
    Ok(())
}

fn fold_bool(args: &[Value], f: fn(bool, bool) -> bool, unit: bool) -> Result<Value, String> {
    let mut acc = unit;
    for a in args {
        match a {
            Value::B(b) => acc = f(acc, *b),
            Value::Bv(..) => return Err("boolean operation on a bit-vector".into()),
        }
    }
    Ok(Value::B(acc))
}

// ---------------------------------------------------------------------------
// Parsing.

fn parse_one(text: &str) -> Result<Sexp, String> {
    let toks = lex(text);
    let mut pos = 0usize;
    let e = parse_expr(&toks, &mut pos)?;
    if pos != toks.len() {
        return Err("trailing tokens after command".into());
    }
    Ok(e)
}

fn lex(text: &str) -> Vec<String> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '(' | ')' => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
                toks.push(c.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }
    toks
}

fn parse_expr(toks: &[String], pos: &mut usize) -> Result<Sexp, String> {
    match toks.get(*pos) {
        None => Err("unexpected end of input".into()),
        Some(t) if t == "(" => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                match toks.get(*pos) {
                    None => return Err("unclosed parenthesis".into()),
                    Some(t) if t == ")" => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    _ => items.push(parse_expr(toks, pos)?),
                }
            }
        }
        Some(t) if t == ")" => Err("unexpected closing parenthesis".into()),
        Some(t) => {
            let a = t.clone();
            *pos += 1;
            Ok(Sexp::Atom(a))
        }
    }
}
