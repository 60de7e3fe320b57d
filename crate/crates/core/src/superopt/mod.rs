//! Slice-based superoptimization: pick a root value, harvest the backward
//! dataflow slice computing it, and search for a cheaper replacement with
//! counterexample-guided synthesis. Results are verified refinements —
//! nothing is ever spliced on the strength of testing alone — and are
//! cached under a canonical slice key so repeated idioms (and repeated
//! runs) skip synthesis entirely.
//!
//! The pipeline per root: [`harvest`] cuts the slice, [`canonicalize`]
//! renames it into a stable key, the cache is consulted, [`synthesize`]
//! runs on a miss, and a found replacement is spliced in and the whole
//! function re-validated before it is kept.

mod cache;
mod synth;

pub use cache::{cache_load, cache_store, Cache, CacheEntry};
pub use synth::{synthesize, Synth, SynthResult};

use std::collections::{HashMap, HashSet, VecDeque};
use std::time::{Duration, Instant};

use crate::ir::{
    dce, print_function, Constant, Flags, Function, Instruction, IrError, Opcode, Operand, Param,
    Width,
};
use crate::verify::{validate_translation, Backend, Verdict, VerifyError};

#[derive(Debug, thiserror::Error)]
pub enum SuperoptError {
    #[error("no instruction defines %{0}")]
    RootNotFound(String),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A backward dataflow slice, packaged as a standalone function: the
/// frontier values become parameters (in first-use order), the body is the
/// harvested instruction DAG in the original topological order, and the
/// single return is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub function: Function,
    /// Backward depth actually reached; the root instruction is depth 1.
    pub depth: usize,
}

impl Slice {
    /// Instruction count of the harvested DAG.
    pub fn cost(&self) -> usize {
        self.function.cost()
    }
}

/// Synthesis and application knobs.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Cap on the replacement cost searched. The effective budget per
    /// slice is `min(max_cost, cost(slice) - 1)`: only improvements.
    pub max_cost: usize,
    /// Most constant holes per skeleton. Holes are solved by exhaustive
    /// enumeration at widths up to 8 bits and are disabled beyond that
    /// (the literal pool still applies) — a documented scalability limit.
    pub max_holes: usize,
    /// Backward harvest depth (root = 1).
    pub depth: usize,
    /// Widths at which every splice is re-validated whole-function.
    pub validation_widths: Vec<Width>,
    /// Admit icmp/select into the synthesis grammar (off by default to
    /// keep skeleton counts small).
    pub with_cmp_select: bool,
    /// Seed for the fixed random counterexample vectors.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            max_cost: 3,
            max_holes: 2,
            depth: 5,
            validation_widths: vec![Width::new(4).unwrap(), Width::new(8).unwrap()],
            with_cmp_select: false,
            seed: 0x5eed_cafe,
        }
    }
}

/// Cuts the backward slice of `root` out of `f`, following operand edges
/// until a parameter, a constant, or the depth limit blocks the walk.
/// Values at the cut become the slice's inputs.
pub fn harvest(f: &Function, root: &str, max_depth: usize) -> Result<Slice, SuperoptError> {
    assert!(max_depth >= 1, "harvest needs at least the root itself");
    let root_idx = f
        .def_index(root)
        .ok_or_else(|| SuperoptError::RootNotFound(root.to_string()))?;

    // Breadth-first from the root, so each instruction gets its minimal
    // backward depth and the limit cuts as late as possible.
    let mut depth_of: HashMap<usize, usize> = HashMap::from([(root_idx, 1)]);
    let mut queue = VecDeque::from([root_idx]);
    while let Some(i) = queue.pop_front() {
        let d = depth_of[&i];
        if d == max_depth {
            continue;
        }
        for op in &f.body[i].operands {
            if let Operand::Value(n) = op {
                if let Some(j) = f.def_index(n) {
                    depth_of.entry(j).or_insert_with(|| {
                        queue.push_back(j);
                        d + 1
                    });
                }
            }
        }
    }

    let mut idxs: Vec<usize> = depth_of.keys().copied().collect();
    idxs.sort_unstable();
    let included: HashSet<&str> = idxs.iter().map(|&i| f.body[i].result.as_str()).collect();

    let mut params: Vec<Param> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for &i in &idxs {
        for op in &f.body[i].operands {
            if let Operand::Value(n) = op {
                if !included.contains(n.as_str()) && seen.insert(n) {
                    params.push(Param {
                        name: n.clone(),
                        width: f.value_width(n).expect("operand of a valid function"),
                    });
                }
            }
        }
    }

    let function = Function {
        name: "slice".to_string(),
        params,
        body: idxs.iter().map(|&i| f.body[i].clone()).collect(),
        returns: vec![root.to_string()],
    };
    function.validate()?;
    let depth = depth_of.values().copied().max().unwrap_or(1);
    Ok(Slice { function, depth })
}

/// A slice renamed into canonical form: inputs become `%in0, %in1, …` in
/// first-traversal order, results become `%t0, %t1, …` in emission order,
/// and commutative operand pairs are put in a shape-canonical order. The
/// `inputs` vector maps each canonical parameter position back to the
/// original value name, which is what splicing needs.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonSlice {
    pub slice: Slice,
    pub key: String,
    pub inputs: Vec<String>,
}

/// The canonical cache key for a slice: its canonicalized text on one
/// line. Alpha-renamed slices and commutative operand swaps map to the
/// same key; widths and flags are part of the key.
pub fn canonical_key(s: &Slice) -> String {
    canonicalize(s).key
}

/// See [`canonical_key`]; this form also returns the renamed slice and the
/// canonical-position → original-name input mapping.
pub fn canonicalize(s: &Slice) -> CanonSlice {
    let f = &s.function;

    // Alpha-invariant shape signatures, used only to order commutative
    // operand pairs: parameter names are erased to widths, so renaming
    // inputs cannot change any ordering decision. Computed bottom-up —
    // the body is topological, so operand signatures always exist.
    let mut sigs: HashMap<String, String> = HashMap::new();
    for p in &f.params {
        sigs.insert(p.name.clone(), format!("p{}", p.width));
    }
    for inst in &f.body {
        let mut kids: Vec<String> = inst
            .operands
            .iter()
            .map(|op| match op {
                Operand::Const(c) => format!("{c}"),
                Operand::Value(n) => sigs[n.as_str()].clone(),
            })
            .collect();
        if inst.opcode.is_commutative() {
            kids.sort();
        }
        let sig = format!(
            "({} {} {} {})",
            inst.opcode,
            inst.flags,
            inst.width,
            kids.join(" ")
        );
        sigs.insert(inst.result.clone(), sig);
    }

    // Emit in canonical depth-first post-order from the root, assigning
    // names at first sight. Shared instructions emit once.
    let mut canon = Canonicalizer {
        f,
        sigs: &sigs,
        renamed: HashMap::new(),
        params: Vec::new(),
        inputs: Vec::new(),
        body: Vec::new(),
    };
    canon.emit(&f.returns[0]);

    let root = canon
        .body
        .last()
        .expect("a slice has at least one instruction")
        .result
        .clone();
    let function = Function {
        name: "slice".to_string(),
        params: canon.params,
        body: canon.body,
        returns: vec![root],
    };
    debug_assert!(function.validate().is_ok());
    let key = flatten(&print_function(&function));
    CanonSlice {
        slice: Slice {
            function,
            depth: s.depth,
        },
        key,
        inputs: canon.inputs,
    }
}

struct Canonicalizer<'a> {
    f: &'a Function,
    sigs: &'a HashMap<String, String>,
    renamed: HashMap<String, String>,
    params: Vec<Param>,
    inputs: Vec<String>,
    body: Vec<Instruction>,
}

impl Canonicalizer<'_> {
    fn emit(&mut self, name: &str) -> String {
        if let Some(n) = self.renamed.get(name) {
            return n.clone();
        }
        let Some(i) = self.f.def_index(name) else {
            // A frontier input: number it by first traversal.
            let canon = format!("in{}", self.params.len());
            self.params.push(Param {
                name: canon.clone(),
                width: self.f.value_width(name).expect("slice input"),
            });
            self.inputs.push(name.to_string());
            self.renamed.insert(name.to_string(), canon.clone());
            return canon;
        };
        let inst = &self.f.body[i];
        let mut order: Vec<usize> = (0..inst.operands.len()).collect();
        if inst.opcode.is_commutative() && inst.operands.len() == 2 {
            // Stable sort by shape: equal shapes keep their original
            // order, which first-traversal naming then makes canonical.
            order.sort_by_key(|&k| match &inst.operands[k] {
                Operand::Const(c) => format!("{c}"),
                Operand::Value(n) => self.sigs[n.as_str()].clone(),
            });
        }
        let mut new_ops = inst.operands.clone();
        for (slot, &src) in order.iter().enumerate() {
            new_ops[slot] = match &inst.operands[src] {
                Operand::Const(c) => Operand::Const(*c),
                Operand::Value(n) => {
                    let n = n.clone();
                    Operand::Value(self.emit(&n))
                }
            };
        }
        let canon = format!("t{}", self.body.len());
        self.body.push(Instruction {
            result: canon.clone(),
            opcode: inst.opcode,
            flags: inst.flags,
            width: inst.width,
            operands: new_ops,
        });
        self.renamed.insert(name.to_string(), canon.clone());
        canon
    }
}

/// One line per function: newlines become ` / ` so the text fits a
/// line-oriented cache file.
pub(crate) fn flatten(text: &str) -> String {
    text.trim_end().replace('\n', " / ")
}

/// Inverse of [`flatten`].
pub(crate) fn unflatten(line: &str) -> String {
    line.replace(" / ", "\n")
}

/// How a root attempt went.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RootOutcome {
    /// A cached or synthesized replacement was spliced in. Costs are
    /// whole-function, before and after.
    Improved { from: usize, to: usize },
    /// Nothing cheaper is known at the searched budget.
    NoImprovement,
    /// A replacement exists but did not pay off (or could not be
    /// re-validated) inside this function, and was rolled back.
    RolledBack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootAttempt {
    pub root: String,
    pub depth: usize,
    pub key: String,
    /// Whether the cache already answered for this slice (found or
    /// exhausted at a sufficient budget), making synthesis unnecessary.
    pub cache_hit: bool,
    pub outcome: RootOutcome,
}

/// What [`optimize_function`] did: per-root attempts in execution order
/// plus totals. `synth_calls` counts synthesis runs — zero on a fully
/// warm cache.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub attempts: Vec<RootAttempt>,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub synth_calls: usize,
    pub splices: usize,
    pub warnings: Vec<String>,
    pub elapsed: Duration,
}

/// Tries to compute every instruction result of `f` more cheaply, largest
/// harvested idioms first, consulting and extending `cache`. Each found
/// replacement is spliced, cleaned up, and kept only when the whole
/// function re-validates as a refinement at the configured widths and gets
/// strictly cheaper. Per-root failures are recorded, never fatal.
pub fn optimize_function(
    f: &Function,
    cfg: &SynthConfig,
    cache: &mut Cache,
    backend: &Backend,
) -> (Function, Report) {
    let start = Instant::now();
    let mut report = Report::default();
    let mut cur = f.clone();

    // Roots ordered by harvested depth, deepest first, so a big idiom is
    // replaced as a whole before its pieces are whittled individually.
    let mut roots: Vec<(usize, usize, String)> = Vec::new(); // (depth, body idx, name)
    for (i, inst) in f.body.iter().enumerate() {
        match harvest(f, &inst.result, cfg.depth) {
            Ok(s) => roots.push((s.depth, i, inst.result.clone())),
            Err(e) => report.warnings.push(format!("%{}: {e}", inst.result)),
        }
    }
    roots.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    for (_, _, root) in roots {
        if cur.def_index(&root).is_none() {
            continue; // died in an earlier splice's cleanup
        }
        let slice = match harvest(&cur, &root, cfg.depth) {
            Ok(s) => s,
            Err(e) => {
                report.warnings.push(format!("%{root}: {e}"));
                continue;
            }
        };
        let canon = canonicalize(&slice);
        let budget = cfg.max_cost.min(slice.cost().saturating_sub(1));

        let served = match cache.get(&canon.key) {
            Some(e @ CacheEntry::Found { .. }) => Some(e.clone()),
            Some(e @ CacheEntry::NotFound { cost_bound }) if *cost_bound >= budget => {
                Some(e.clone())
            }
            _ => None, // miss, or a negative entry searched too shallow
        };
        let cache_hit = served.is_some();
        if cache_hit {
            report.cache_hits += 1;
        } else {
            report.cache_misses += 1;
        }

        let entry = match served {
            Some(e) => e,
            None => {
                report.synth_calls += 1;
                match synthesize(&canon.slice, cfg, backend) {
                    Ok(res) => {
                        report
                            .warnings
                            .extend(res.warnings.iter().map(|w| format!("%{root}: {w}")));
                        let entry = match res.outcome {
                            Synth::Found { rhs, cost } => CacheEntry::Found { rhs, cost },
                            Synth::NotFound { cost_bound } => CacheEntry::NotFound { cost_bound },
                        };
                        cache.insert(canon.key.clone(), entry.clone());
                        entry
                    }
                    Err(e) => {
                        report
                            .warnings
                            .push(format!("%{root}: synthesis failed: {e}"));
                        report.attempts.push(RootAttempt {
                            root: root.clone(),
                            depth: slice.depth,
                            key: canon.key,
                            cache_hit,
                            outcome: RootOutcome::NoImprovement,
                        });
                        continue;
                    }
                }
            }
        };

        let outcome = match &entry {
            CacheEntry::NotFound { .. } => RootOutcome::NoImprovement,
            CacheEntry::Found { rhs, .. } => {
                let before = cur.cost();
                match splice(&cur, &root, rhs, &canon.inputs) {
                    Ok(next) => {
                        match validate_translation(&cur, &next, &cfg.validation_widths, backend) {
                            Ok(Verdict::Valid) if next.cost() < before => {
                                cur = next;
                                report.splices += 1;
                                RootOutcome::Improved {
                                    from: before,
                                    to: cur.cost(),
                                }
                            }
                            Ok(Verdict::Valid) => RootOutcome::RolledBack,
                            Ok(Verdict::Counterexample(cex)) => {
                                report.warnings.push(format!(
                                    "%{root}: spliced replacement failed re-validation \
                                     (width {}); rolled back",
                                    cex.width
                                ));
                                RootOutcome::RolledBack
                            }
                            Err(e) => {
                                report.warnings.push(format!(
                                    "%{root}: could not re-validate splice ({e}); rolled back"
                                ));
                                RootOutcome::RolledBack
                            }
                        }
                    }
                    Err(e) => {
                        report
                            .warnings
                            .push(format!("%{root}: splice failed ({e}); skipped"));
                        RootOutcome::RolledBack
                    }
                }
            }
        };
        report.attempts.push(RootAttempt {
            root: root.clone(),
            depth: slice.depth,
            key: canon.key,
            cache_hit,
            outcome,
        });
    }

    report.elapsed = start.elapsed();
    (cur, report)
}

/// Splices a canonical replacement over `root` in `f`. `inputs` maps each
/// replacement parameter position to the operand name it stands for.
/// Forwarding replacements (returning an input, or computing `or C, 0`)
/// substitute straight into the root's uses; anything else lands as
/// instructions in the root's position under the root's name. Dead code is
/// swept afterwards.
fn splice(
    f: &Function,
    root: &str,
    rhs: &Function,
    inputs: &[String],
) -> Result<Function, IrError> {
    let root_idx = f.def_index(root).expect("caller checked the root exists");
    let width = f.body[root_idx].result_width();

    // Forward to an input value.
    if rhs.body.is_empty() {
        let target = rhs.returns[0].as_str();
        let pos = rhs
            .params
            .iter()
            .position(|p| p.name == target)
            .expect("an empty replacement returns one of its parameters");
        let to = Operand::Value(inputs[pos].clone());
        return forward(f, root, &to);
    }
    // Forward to a constant, stored as the materialized `or C, 0` form.
    if let Some(c) = const_alias(rhs) {
        let c = Constant::from_bits(c.bits, width);
        return forward(f, root, &Operand::Const(c));
    }

    // General case: map parameters positionally, freshen intermediate
    // names, keep the root's name on the final instruction.
    let mut taken: HashSet<String> = f.params.iter().map(|p| p.name.clone()).collect();
    taken.extend(f.body.iter().map(|i| i.result.clone()));
    let mut rename: HashMap<String, String> = HashMap::new();
    for (p, orig) in rhs.params.iter().zip(inputs) {
        rename.insert(p.name.clone(), orig.clone());
    }
    let mut new_insts: Vec<Instruction> = Vec::new();
    for (k, inst) in rhs.body.iter().enumerate() {
        let last = k + 1 == rhs.body.len();
        let name = if last {
            root.to_string()
        } else {
            let mut n = format!("{root}_{k}");
            let mut bump = 0usize;
            while taken.contains(&n) {
                bump += 1;
                n = format!("{root}_{k}_{bump}");
            }
            taken.insert(n.clone());
            n
        };
        rename.insert(inst.result.clone(), name.clone());
        let operands = inst
            .operands
            .iter()
            .map(|op| match op {
                Operand::Const(c) => Operand::Const(*c),
                Operand::Value(v) => Operand::Value(
                    rename
                        .get(v.as_str())
                        .expect("replacement bodies are topological")
                        .clone(),
                ),
            })
            .collect();
        new_insts.push(Instruction {
            result: name,
            opcode: inst.opcode,
            flags: inst.flags,
            width: inst.width,
            operands,
        });
    }

    let mut g = f.clone();
    g.body.splice(root_idx..root_idx + 1, new_insts);
    g.validate()?;
    let (g, _) = dce(&g);
    Ok(g)
}

/// Replacement cost as the cache, reports, and synthesis account it:
/// instruction count, except that forwarding forms are free — an empty
/// body returning an input, or the materialized constant, both disappear
/// into their uses when spliced.
pub(crate) fn semantic_cost(rhs: &Function) -> usize {
    if rhs.body.is_empty() || const_alias(rhs).is_some() {
        0
    } else {
        rhs.body.len()
    }
}

/// Recognizes the materialized-constant replacement form: a single
/// `or C, 0` whose result is returned. Synthesis never emits an all-const
/// instruction otherwise, so the form is unambiguous.
fn const_alias(rhs: &Function) -> Option<Constant> {
    if rhs.body.len() != 1 || rhs.returns != vec![rhs.body[0].result.clone()] {
        return None;
    }
    let inst = &rhs.body[0];
    match (inst.opcode, inst.operands.as_slice()) {
        (Opcode::Or, [Operand::Const(c), Operand::Const(z)]) if z.bits == 0 => Some(*c),
        _ => None,
    }
}

/// Replaces every use of `root` with `to`, materializing a constant back
/// into an instruction if the root is returned (returns name values), then
/// sweeps the now-dead definition.
fn forward(f: &Function, root: &str, to: &Operand) -> Result<Function, IrError> {
    let mut g = f.clone();
    for inst in &mut g.body {
        for op in &mut inst.operands {
            if op.as_value() == Some(root) {
                *op = to.clone();
            }
        }
    }
    let returned = g.returns.iter().any(|r| r == root);
    if returned {
        match to {
            Operand::Value(n) => {
                for r in &mut g.returns {
                    if r == root {
                        *r = n.clone();
                    }
                }
            }
            Operand::Const(c) => {
                // Keep the name alive with a single materializing or.
                let idx = g.def_index(root).expect("root is defined");
                g.body[idx] = Instruction {
                    result: root.to_string(),
                    opcode: Opcode::Or,
                    flags: Flags::NONE,
                    width: c.width,
                    operands: vec![
                        Operand::Const(*c),
                        Operand::Const(Constant::from_bits(0, c.width)),
                    ],
                };
            }
        }
    }
    g.validate()?;
    let (g, _) = dce(&g);
    Ok(g)
}
