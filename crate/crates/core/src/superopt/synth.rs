//! Counterexample-guided synthesis of cheaper replacements.
//!
//! Candidates are enumerated in cost order — first the free ones (return an
//! input, return a constant), then instruction skeletons of growing length —
//! and screened against a set of concrete input vectors on which the slice's
//! outputs are known. Survivors go to the refinement checker; a refuted
//! candidate contributes its counterexample to the screen, so each wrong
//! behavior is verified at most once. The first verified candidate wins,
//! which makes the result minimal-cost within the search grammar.
//!
//! The grammar: binary bit-vector ops without flags, all at the slice root's
//! width, over the slice inputs, earlier skeleton results, a small literal
//! pool, and (at widths up to 8 bits) exhaustively solved constant holes.
//! Comparisons and selects join in when configured. Shapes whose operands
//! are all constants and shapes with unreachable instructions are pruned;
//! anything semantically equal to an already-refuted candidate dies on the
//! screen, so the pruning only drops redundant work, never solutions.

use std::collections::HashSet;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{
    apply_op, evaluate, Constant, Flags, Function, IcmpPred, Instruction, Opcode, Operand, Val,
    Width,
};
use crate::verify::{check_refinement, Backend, Verdict, VerifyError};

use super::{semantic_cost, Slice, SynthConfig};

/// Outcome of a synthesis run.
#[derive(Debug, Clone, PartialEq)]
pub enum Synth {
    /// A verified replacement. `cost` is its accounted cost: instruction
    /// count, with the materialized-constant form counting as free.
    Found { rhs: Function, cost: usize },
    /// The search space up to `cost_bound` instructions is exhausted. A
    /// bound of 0 with a warning means candidates could not be verified at
    /// all (the slice is too wide for the backend), so nothing is claimed.
    NotFound { cost_bound: usize },
}

#[derive(Debug, Clone)]
pub struct SynthResult {
    pub outcome: Synth,
    pub warnings: Vec<String>,
    /// Refinement checks issued, the feasibility probe included.
    pub queries: usize,
}

/// Searches for a strictly cheaper replacement of `slice`, up to
/// `min(cfg.max_cost, cost(slice) - 1)` instructions. Every returned
/// replacement has been verified as a refinement of the slice at its native
/// width; testing alone never decides.
pub fn synthesize(
    slice: &Slice,
    cfg: &SynthConfig,
    backend: &Backend,
) -> Result<SynthResult, VerifyError> {
    let f = &slice.function;
    let w = f
        .value_width(&f.returns[0])
        .expect("a slice returns its root");
    let budget = cfg.max_cost.min(slice.cost().saturating_sub(1));
    let mut cg = Cegis::new(f, w, cfg, backend);
    cg.seed_counterexamples()?;

    // Feasibility probe: if the backend cannot even check the slice against
    // itself, it cannot check any candidate (the state space is the same),
    // so skip the search instead of warning once per candidate.
    cg.queries += 1;
    match check_refinement(f, f, None, &cg.check_widths, backend) {
        Ok(_) => {}
        Err(
            e @ (VerifyError::TooLarge { .. } | VerifyError::Timeout | VerifyError::Unknown(_)),
        ) => {
            return Ok(SynthResult {
                outcome: Synth::NotFound { cost_bound: 0 },
                warnings: vec![format!(
                    "candidates cannot be verified at this width ({e}); synthesis skipped"
                )],
                queries: cg.queries,
            });
        }
        Err(e) => return Err(e),
    }

    if let Some(rhs) = cg.search_cost0()? {
        return Ok(cg.finish(rhs));
    }
    for c in 1..=budget {
        if let Some(rhs) = cg.search_cost(c)? {
            return Ok(cg.finish(rhs));
        }
    }
    Ok(SynthResult {
        outcome: Synth::NotFound { cost_bound: budget },
        warnings: cg.warnings,
        queries: cg.queries,
    })
}

/// Operand source inside a skeleton. The derived order (inputs, then
/// earlier results, then constants) is what commutative deduplication
/// sorts by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Src {
    Param(usize),
    Prior(usize),
    Lit(u64),
    Hole(usize),
}

impl Src {
    fn is_const(self) -> bool {
        matches!(self, Src::Lit(_) | Src::Hole(_))
    }
}

#[derive(Debug, Clone)]
struct SkInst {
    op: Opcode,
    /// Instruction width annotation: the root width everywhere, except
    /// comparisons, which run at their operands' width.
    w: Width,
    srcs: Vec<Src>,
}

const BIN_OPS: [Opcode; 9] = [
    Opcode::Add,
    Opcode::Sub,
    Opcode::Mul,
    Opcode::And,
    Opcode::Or,
    Opcode::Xor,
    Opcode::Shl,
    Opcode::Lshr,
    Opcode::Ashr,
];

const PREDS: [IcmpPred; 6] = [
    IcmpPred::Eq,
    IcmpPred::Ne,
    IcmpPred::Ult,
    IcmpPred::Slt,
    IcmpPred::Ule,
    IcmpPred::Sle,
];

struct Cegis<'a> {
    slice: &'a Function,
    /// Width of the slice root; skeleton instructions all compute at it.
    w: Width,
    cfg: &'a SynthConfig,
    backend: &'a Backend,
    /// Single width every refinement check runs at: the slice's uniform
    /// width, or (for mixed-width slices, which are checked as given) a
    /// label the checker ignores.
    check_widths: Vec<Width>,
    pool: Vec<u64>,
    ces: Vec<Vec<u64>>,
    targets: Vec<Option<u64>>,
    seen: HashSet<Vec<u64>>,
    queries: usize,
    warnings: Vec<String>,
}

impl<'a> Cegis<'a> {
    fn new(slice: &'a Function, w: Width, cfg: &'a SynthConfig, backend: &'a Backend) -> Self {
        Cegis {
            slice,
            w,
            cfg,
            backend,
            check_widths: vec![slice.uniform_width().unwrap_or(w)],
            pool: literal_pool(w),
            ces: Vec::new(),
            targets: Vec::new(),
            seen: HashSet::new(),
            queries: 0,
            warnings: Vec::new(),
        }
    }

    fn finish(self, rhs: Function) -> SynthResult {
        let cost = semantic_cost(&rhs);
        SynthResult {
            outcome: Synth::Found { rhs, cost },
            warnings: self.warnings,
            queries: self.queries,
        }
    }

    /// Boundary values broadcast across the inputs, plus a handful of
    /// seeded random vectors. Every vector is masked per parameter.
    fn seed_counterexamples(&mut self) -> Result<(), VerifyError> {
        #[derive(Clone, Copy)]
        enum Kind {
            Zero,
            One,
            AllOnes,
            MinSigned,
            MaxSigned,
        }
        let per_param = |kind: Kind, w: Width| -> u64 {
            let m = w.mask();
            match kind {
                Kind::Zero => 0,
                Kind::One => 1 & m,
                Kind::AllOnes => m,
                Kind::MinSigned => 1 << (w.bits() - 1),
                Kind::MaxSigned => m >> 1,
            }
        };
        for kind in [
            Kind::Zero,
            Kind::One,
            Kind::AllOnes,
            Kind::MinSigned,
            Kind::MaxSigned,
        ] {
            let ce: Vec<u64> = self
                .slice
                .params
                .iter()
                .map(|p| per_param(kind, p.width))
                .collect();
            self.add_ce(ce)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        for _ in 0..8 {
            let ce: Vec<u64> = self
                .slice
                .params
                .iter()
                .map(|p| rng.next_u64() & p.width.mask())
                .collect();
            self.add_ce(ce)?;
        }
        Ok(())
    }

    fn add_ce(&mut self, ce: Vec<u64>) -> Result<(), VerifyError> {
        if !self.seen.insert(ce.clone()) {
            return Ok(());
        }
        let out = evaluate(self.slice, &ce)?;
        self.targets.push(match out[0] {
            Val::Bits(b) => Some(b),
            Val::Poison => None,
        });
        self.ces.push(ce);
        Ok(())
    }

    /// True when the candidate matches the slice on every screened input:
    /// equal wherever the slice is defined, unconstrained where it is
    /// poison.
    fn passes(&self, mut eval: impl FnMut(&[u64]) -> Option<u64>) -> bool {
        self.ces
            .iter()
            .zip(&self.targets)
            .all(|(ce, t)| match *t {
                None => true,
                Some(t) => eval(ce) == Some(t),
            })
    }

    /// One refinement check. Valid means done; a counterexample joins the
    /// screen; an unverifiable candidate (too wide, timeout, unknown) is
    /// skipped with a warning rather than trusted.
    fn verify(&mut self, cand: &Function) -> Result<bool, VerifyError> {
        self.queries += 1;
        match check_refinement(self.slice, cand, None, &self.check_widths, self.backend) {
            Ok(Verdict::Valid) => Ok(true),
            Ok(Verdict::Counterexample(cex)) => {
                let ce: Vec<u64> = self
                    .slice
                    .params
                    .iter()
                    .map(|p| cex.inputs.get(&p.name).copied().unwrap_or(0) & p.width.mask())
                    .collect();
                self.add_ce(ce)?;
                Ok(false)
            }
            Err(
                e @ (VerifyError::TooLarge { .. }
                | VerifyError::Timeout
                | VerifyError::Unknown(_)),
            ) => {
                self.warnings
                    .push(format!("a candidate could not be verified and was skipped: {e}"));
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    /// Free candidates: return an input of the root's width, or a constant
    /// — the literal pool first, then (at widths up to 8 bits) every value.
    fn search_cost0(&mut self) -> Result<Option<Function>, VerifyError> {
        for (i, p) in self.slice.params.iter().enumerate() {
            if p.width != self.w {
                continue;
            }
            if self.passes(|ce| Some(ce[i])) {
                let cand = Function {
                    name: "synth".to_string(),
                    params: self.slice.params.clone(),
                    body: vec![],
                    returns: vec![p.name.clone()],
                };
                if self.verify(&cand)? {
                    return Ok(Some(cand));
                }
            }
        }
        let mut tried: HashSet<u64> = HashSet::new();
        let sweep: Vec<u64> = if self.w.bits() <= 8 {
            (0..=self.w.mask()).collect()
        } else {
            Vec::new()
        };
        for v in self.pool.clone().into_iter().chain(sweep) {
            if !tried.insert(v) {
                continue;
            }
            if self.passes(|_| Some(v)) {
                let cand = self.const_candidate(v);
                if self.verify(&cand)? {
                    return Ok(Some(cand));
                }
            }
        }
        Ok(None)
    }

    /// The materialized form of "replace with constant v": a single
    /// `or v, 0`. Splicing recognizes it and forwards the constant, so its
    /// accounted cost is zero.
    fn const_candidate(&self, v: u64) -> Function {
        let c = |bits: u64| Operand::Const(Constant::from_bits(bits, self.w));
        Function {
            name: "synth".to_string(),
            params: self.slice.params.clone(),
            body: vec![Instruction {
                result: "s0".to_string(),
                opcode: Opcode::Or,
                flags: Flags::NONE,
                width: self.w,
                operands: vec![c(v), c(0)],
            }],
            returns: vec!["s0".to_string()],
        }
    }

    /// All skeletons with exactly `c` instructions, in a deterministic
    /// order; returns the first verified one.
    fn search_cost(&mut self, c: usize) -> Result<Option<Function>, VerifyError> {
        let mut insts: Vec<SkInst> = Vec::with_capacity(c);
        let mut widths: Vec<Width> = Vec::with_capacity(c);
        self.extend_skeleton(c, &mut insts, &mut widths, 0)
    }

    fn extend_skeleton(
        &mut self,
        c: usize,
        insts: &mut Vec<SkInst>,
        widths: &mut Vec<Width>,
        holes: usize,
    ) -> Result<Option<Function>, VerifyError> {
        if insts.len() == c {
            if !all_reachable(insts) {
                return Ok(None);
            }
            return self.solve_holes(insts, holes);
        }
        let is_last = insts.len() + 1 == c;
        for (inst, h) in self.inst_choices(widths, holes, is_last) {
            let rw = match inst.op {
                Opcode::Icmp(_) => Width::BOOL,
                _ => self.w,
            };
            insts.push(inst);
            widths.push(rw);
            let found = self.extend_skeleton(c, insts, widths, holes + h)?;
            insts.pop();
            widths.pop();
            if found.is_some() {
                return Ok(found);
            }
        }
        Ok(None)
    }

    /// Values of width `want` available at the next position: inputs and
    /// earlier results.
    fn value_sources(&self, prior_widths: &[Width], want: Width) -> Vec<Src> {
        let mut out = Vec::new();
        for (i, p) in self.slice.params.iter().enumerate() {
            if p.width == want {
                out.push(Src::Param(i));
            }
        }
        for (j, &pw) in prior_widths.iter().enumerate() {
            if pw == want {
                out.push(Src::Prior(j));
            }
        }
        out
    }

    /// Instruction shapes available at the next position, each with its
    /// hole count. Commutative operand pairs are emitted in one order only,
    /// all-constant operand lists are dropped (a constant result is already
    /// a free candidate), and a comparison never sits at the root unless
    /// the root is one bit wide. Comparisons run at every operand width in
    /// scope but take no holes; everything else computes at the root
    /// width.
    fn inst_choices(
        &self,
        prior_widths: &[Width],
        hole_base: usize,
        is_last: bool,
    ) -> Vec<(SkInst, usize)> {
        let w = self.w;
        let hole_ok = hole_base < self.cfg.max_holes && w.bits() <= 8;
        let mut all = self.value_sources(prior_widths, w);
        all.extend(self.pool.iter().map(|&v| Src::Lit(v)));
        if hole_ok {
            all.push(Src::Hole(hole_base));
        }

        let mut out: Vec<(SkInst, usize)> = Vec::new();
        let pairs = |op: Opcode, w2: Width, srcs: &[Src], out: &mut Vec<(SkInst, usize)>| {
            for &x in srcs {
                for &y in srcs {
                    if x.is_const() && y.is_const() {
                        continue;
                    }
                    if op.is_commutative() && x > y {
                        continue;
                    }
                    let h = usize::from(matches!(x, Src::Hole(_)))
                        + usize::from(matches!(y, Src::Hole(_)));
                    out.push((
                        SkInst {
                            op,
                            w: w2,
                            srcs: vec![x, y],
                        },
                        h,
                    ));
                }
            }
        };
        for op in BIN_OPS {
            pairs(op, w, &all, &mut out);
        }
        if self.cfg.with_cmp_select {
            if !is_last || w == Width::BOOL {
                let mut cmp_widths: std::collections::BTreeSet<Width> = [w].into();
                cmp_widths.extend(self.slice.params.iter().map(|p| p.width));
                cmp_widths.extend(prior_widths.iter().copied());
                for w2 in cmp_widths {
                    let mut srcs = self.value_sources(prior_widths, w2);
                    srcs.extend(literal_pool(w2).into_iter().map(Src::Lit));
                    for pred in PREDS {
                        pairs(Opcode::Icmp(pred), w2, &srcs, &mut out);
                    }
                }
            }
            let conds = self.value_sources(prior_widths, Width::BOOL);
            for &cond in &conds {
                for &x in &all {
                    for &y in &all {
                        // Two constant arms are meaningful under a dynamic
                        // condition; renumber holes so each gets its own
                        // solution slot, then drop identical-arm selects.
                        let mut srcs = vec![cond, x, y];
                        let mut h = 0usize;
                        for s in srcs.iter_mut().skip(1) {
                            if let Src::Hole(k) = s {
                                *k = hole_base + h;
                                h += 1;
                            }
                        }
                        if hole_base + h > self.cfg.max_holes {
                            continue;
                        }
                        if srcs[1] == srcs[2] {
                            continue;
                        }
                        out.push((
                            SkInst {
                                op: Opcode::Select,
                                w,
                                srcs,
                            },
                            h,
                        ));
                    }
                }
            }
        }
        out
    }

    /// Screens a complete skeleton — enumerating all hole assignments when
    /// it has holes — and verifies the survivors.
    fn solve_holes(
        &mut self,
        insts: &[SkInst],
        holes: usize,
    ) -> Result<Option<Function>, VerifyError> {
        if holes == 0 {
            return self.screen_and_verify(insts, &[]);
        }
        let n = 1u64 << self.w.bits(); // holes only exist at widths <= 8
        let mut assign = vec![0u64; holes];
        loop {
            if let Some(found) = self.screen_and_verify(insts, &assign)? {
                return Ok(Some(found));
            }
            let mut i = 0;
            loop {
                assign[i] += 1;
                if assign[i] < n {
                    break;
                }
                assign[i] = 0;
                i += 1;
                if i == holes {
                    return Ok(None);
                }
            }
        }
    }

    fn screen_and_verify(
        &mut self,
        insts: &[SkInst],
        holes: &[u64],
    ) -> Result<Option<Function>, VerifyError> {
        let mut scratch: Vec<Val> = Vec::with_capacity(insts.len());
        let ok = self.passes(|ce| eval_skeleton(insts, ce, holes, &mut scratch));
        if !ok {
            return Ok(None);
        }
        let cand = self.skeleton_to_function(insts, holes);
        if self.verify(&cand)? {
            return Ok(Some(cand));
        }
        Ok(None)
    }

    fn skeleton_to_function(&self, insts: &[SkInst], holes: &[u64]) -> Function {
        let params = self.slice.params.clone();
        let body: Vec<Instruction> = insts
            .iter()
            .enumerate()
            .map(|(k, si)| Instruction {
                result: format!("s{k}"),
                opcode: si.op,
                flags: Flags::NONE,
                width: si.w,
                operands: si
                    .srcs
                    .iter()
                    .map(|s| match *s {
                        Src::Param(i) => Operand::Value(params[i].name.clone()),
                        Src::Prior(j) => Operand::Value(format!("s{j}")),
                        Src::Lit(v) => Operand::Const(Constant::from_bits(v, si.w)),
                        Src::Hole(h) => Operand::Const(Constant::from_bits(holes[h], si.w)),
                    })
                    .collect(),
            })
            .collect();
        let f = Function {
            name: "synth".to_string(),
            params,
            body,
            returns: vec![format!("s{}", insts.len() - 1)],
        };
        debug_assert!(f.validate().is_ok(), "synthesized candidates are well-formed");
        f
    }
}

/// Evaluates a skeleton on one input vector with the shared instruction
/// semantics; `None` is poison. `scratch` avoids reallocating per call.
fn eval_skeleton(
    insts: &[SkInst],
    inputs: &[u64],
    holes: &[u64],
    scratch: &mut Vec<Val>,
) -> Option<u64> {
    scratch.clear();
    for si in insts {
        let mut args = [Val::Poison; 3];
        for (k, s) in si.srcs.iter().enumerate() {
            args[k] = match *s {
                Src::Param(i) => Val::Bits(inputs[i]),
                Src::Prior(j) => scratch[j],
                Src::Lit(v) => Val::Bits(v),
                Src::Hole(h) => Val::Bits(holes[h]),
            };
        }
        scratch.push(apply_op(si.op, Flags::NONE, si.w, si.w, &args[..si.srcs.len()]));
    }
    match *scratch.last().expect("skeletons are nonempty") {
        Val::Bits(b) => Some(b),
        Val::Poison => None,
    }
}

/// Every instruction must feed the root, directly or through others.
fn all_reachable(insts: &[SkInst]) -> bool {
    let n = insts.len();
    let mut seen = vec![false; n];
    seen[n - 1] = true;
    let mut stack = vec![n - 1];
    while let Some(i) = stack.pop() {
        for s in &insts[i].srcs {
            if let Src::Prior(j) = *s {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    seen.into_iter().all(|b| b)
}

/// Constants worth trying by name: 0, 1, all-ones, width-1 (the everything
/// shift), and the sign bit.
fn literal_pool(w: Width) -> Vec<u64> {
    let m = w.mask();
    let raw = [
        0,
        1 & m,
        m,
        u64::from(w.bits() - 1) & m,
        1 << (w.bits() - 1),
    ];
    let mut pool = Vec::new();
    for v in raw {
        if !pool.contains(&v) {
            pool.push(v);
        }
    }
    pool
}
