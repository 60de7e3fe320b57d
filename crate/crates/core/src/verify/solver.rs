//! External solver subprocess: one SMT-LIB2 process per query, spoken to
//! over stdin/stdout. Any solver that reads the standard textual format and
//! prints `sat`/`unsat`/`unknown` (plus `(get-model)` support) works.
//!
//! Models are never trusted: a `sat` answer is replayed through the
//! evaluator, and only a reproducible disagreement becomes a
//! counterexample.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use crate::ir::{evaluate, Function, Width};
use crate::rules::PredExpr;

use super::{encode::encode_query, refinement_violation, split_params, Cex, Verdict, VerifyError};

/// A single-request-at-a-time pipe to a solver process. The process is
/// spawned per port and killed when the port drops.
pub struct SolverPort {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

/// What the solver said to `(check-sat)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolverReply {
    Sat,
    Unsat,
    Unknown(String),
}

impl SolverPort {
    /// Spawns `cmd[0]` with arguments `cmd[1..]`.
    pub fn spawn(cmd: &[String]) -> Result<SolverPort, VerifyError> {
        let (program, args) = cmd
            .split_first()
            .ok_or_else(|| VerifyError::Solver("empty solver command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| VerifyError::Solver(format!("failed to start {program}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout was piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        Ok(SolverPort {
            child,
            stdin,
            lines: rx,
        })
    }

    /// Writes raw text to the solver.
    pub fn send(&mut self, text: &str) -> Result<(), VerifyError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| VerifyError::Solver("solver stdin closed".into()))?;
        stdin
            .write_all(text.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| VerifyError::Solver(format!("write to solver failed: {e}")))
    }

    /// Reads one non-empty line with a deadline.
    fn read_line(&mut self, deadline: Instant) -> Result<String, VerifyError> {
        loop {
            let left = deadline
                .checked_duration_since(Instant::now())
                .unwrap_or(Duration::ZERO);
            match self.lines.recv_timeout(left) {
                Ok(Ok(line)) => {
                    let t = line.trim();
                    if !t.is_empty() {
                        return Ok(t.to_string());
                    }
                }
                Ok(Err(e)) => {
                    return Err(VerifyError::Solver(format!("read from solver failed: {e}")))
                }
                Err(RecvTimeoutError::Timeout) => {
                    let _ = self.child.kill();
                    return Err(VerifyError::Timeout);
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(VerifyError::Solver("solver exited early".into()))
                }
            }
        }
    }

    /// Submits a query (without `(check-sat)`) and reads the sat result.
    pub fn check(&mut self, query: &str, timeout: Duration) -> Result<SolverReply, VerifyError> {
        self.send(query)?;
        self.send("(check-sat)\n")?;
        let deadline = Instant::now() + timeout;
        let line = self.read_line(deadline)?;
        match line.as_str() {
            "sat" => Ok(SolverReply::Sat),
            "unsat" => Ok(SolverReply::Unsat),
            other => Ok(SolverReply::Unknown(other.to_string())),
        }
    }

    /// Requests and parses the model after a `sat` answer: a map from
    /// declared name to bit-vector value.
    pub fn model(&mut self, timeout: Duration) -> Result<BTreeMap<String, u64>, VerifyError> {
        self.send("(get-model)\n")?;
        let deadline = Instant::now() + timeout;
        let mut text = String::new();
        let mut depth: i64 = 0;
        loop {
            let line = self.read_line(deadline)?;
            for ch in line.chars() {
                match ch {
                    '(' => depth += 1,
                    ')' => depth -= 1,
                    _ => {}
                }
            }
            text.push_str(&line);
            text.push('\n');
            if depth <= 0 {
                break;
            }
        }
        parse_model(&text)
    }
}

impl Drop for SolverPort {
    fn drop(&mut self) {
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

// ---------------------------------------------------------------------------
// Model parsing: a minimal s-expression walk.

#[derive(Debug, Clone, PartialEq, Eq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(text: &str) -> Vec<String> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '(' | ')' => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
                toks.push(c.to_string());
            }
            ';' => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
                while let Some(&n) = chars.peek() {
                    chars.next();
                    if n == '\n' {
                        break;
                    }
                }
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

fn parse_sexps(toks: &[String]) -> Result<Vec<Sexp>, VerifyError> {
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    for t in toks {
        match t.as_str() {
            "(" => stack.push(Vec::new()),
            ")" => {
                let done = stack
                    .pop()
                    .ok_or_else(|| VerifyError::Solver("unbalanced model output".into()))?;
                stack
                    .last_mut()
                    .ok_or_else(|| VerifyError::Solver("unbalanced model output".into()))?
                    .push(Sexp::List(done));
            }
            a => stack
                .last_mut()
                .ok_or_else(|| VerifyError::Solver("unbalanced model output".into()))?
                .push(Sexp::Atom(a.to_string())),
        }
    }
    if stack.len() != 1 {
        return Err(VerifyError::Solver("unbalanced model output".into()));
    }
    Ok(stack.pop().unwrap())
}

fn bv_value(e: &Sexp) -> Option<u64> {
    match e {
        Sexp::Atom(a) => {
            if let Some(b) = a.strip_prefix("#b") {
                u64::from_str_radix(b, 2).ok()
            } else if let Some(h) = a.strip_prefix("#x") {
                u64::from_str_radix(h, 16).ok()
            } else if a == "true" {
                Some(1)
            } else if a == "false" {
                Some(0)
            } else {
                None
            }
        }
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(u), Sexp::Atom(bv), Sexp::Atom(_w)] if u == "_" => {
                bv.strip_prefix("bv").and_then(|d| d.parse().ok())
            }
            _ => None,
        },
    }
}

/// Extracts `name -> value` from any nesting of `(define-fun name () sort
/// value)` entries; tolerates a wrapping `(model ...)` list.
fn parse_model(text: &str) -> Result<BTreeMap<String, u64>, VerifyError> {
    let sexps = parse_sexps(&tokenize(text))?;
    let mut out = BTreeMap::new();
    fn walk(e: &Sexp, out: &mut BTreeMap<String, u64>) {
        if let Sexp::List(items) = e {
            if let [Sexp::Atom(df), Sexp::Atom(name), Sexp::List(args), _sort, value] =
                items.as_slice()
            {
                if df == "define-fun" && args.is_empty() {
                    if let Some(v) = bv_value(value) {
                        out.insert(name.clone(), v);
                        return;
                    }
                }
            }
            for item in items {
                walk(item, out);
            }
        }
    }
    for e in &sexps {
        walk(e, &mut out);
    }
    if out.is_empty() {
        return Err(VerifyError::Solver(format!(
            "could not parse any assignment from model: {}",
            text.trim()
        )));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The refinement check through a solver.

pub(crate) fn check_with_solver(
    lhs: &Function,
    rhs: &Function,
    pre: Option<&PredExpr>,
    width: Width,
    cmd: &[String],
    timeout: Duration,
) -> Result<Verdict, VerifyError> {
    let query = encode_query(lhs, rhs, pre, width)?;
    let mut port = SolverPort::spawn(cmd)?;
    match port.check(&query, timeout)? {
        SolverReply::Unsat => Ok(Verdict::Valid),
        SolverReply::Unknown(msg) => Err(VerifyError::Unknown(msg)),
        SolverReply::Sat => {
            // Parameter-less functions have a trivially empty model, and
            // some solvers print nothing for it; skip the round trip.
            let model = if lhs.params.is_empty() {
                BTreeMap::new()
            } else {
                port.model(timeout)?
            };
            // Models may omit don't-care inputs; absent names default to 0.
            let assign: Vec<u64> = lhs
                .params
                .iter()
                .map(|p| {
                    model
                        .get(&format!("in_{}", p.name))
                        .copied()
                        .unwrap_or(0)
                        & p.width.mask()
                })
                .collect();
            let lv = evaluate(lhs, &assign)?;
            let rv = evaluate(rhs, &assign)?;
            let component = refinement_violation(&lv, &rv).ok_or_else(|| {
                VerifyError::Solver(
                    "solver model did not replay to a disagreement".into(),
                )
            })?;
            let (vars, consts) = split_params(lhs);
            Ok(Verdict::Counterexample(Cex {
                width,
                inputs: vars
                    .iter()
                    .map(|&i| (lhs.params[i].name.clone(), assign[i]))
                    .collect(),
                constants: consts
                    .iter()
                    .map(|&i| (lhs.params[i].name.clone(), assign[i]))
                    .collect(),
                lhs: lv,
                rhs: rv,
                component,
            }))
        }
    }
}
