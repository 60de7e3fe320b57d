//! Peephole rewrite toolkit for a small single-block SSA bit-vector IR.
//!
//! * [`ir`] — the IR itself: parse, print, evaluate (with poison
//!   semantics), dead-code elimination, instruction-count cost.
//! * [`rules`] — declarative rewrite rules: width-polymorphic pattern DAGs
//!   with symbolic constants and preconditions.
//! * [`verify`] — refinement checking of rules and whole-function
//!   translations, with exhaustive and external-solver backends, plus
//!   nsw/nuw flag inference.
//! * [`matcher`] — the application engine: rule sets compile to a
//!   match-set automaton whose per-instruction work is independent of the
//!   rule count, with greedy rewriting under termination safeguards.
//! * [`profit`] — speculative application with a global-profitability
//!   commit: only candidate subsets that win on total instruction count
//!   are kept, so rewriting never makes a function more expensive.
//! * [`superopt`] — slice-based superoptimization: harvest the dataflow
//!   DAG feeding a value, canonicalize it, and search for a verified
//!   cheaper replacement with counterexample-guided synthesis, memoized
//!   in a persistent cache.
//! * [`generalize`] — rule generalization: abstract concrete constants to
//!   symbols, enumerate the exact set of constant tuples for which the
//!   rewrite is valid, infer a precondition from that ground truth with
//!   cross-width checks, and specialize back to concrete widths.

pub mod generalize;
pub mod ir;
pub mod matcher;
pub mod profit;
pub mod rules;
pub mod superopt;
pub mod verify;

pub use generalize::{
    abstract_constants, enumerate_valid_set, infer_precondition, specialize, GeneralizeError,
    Generalized, Inference, InferenceReport, ValidSet, WidthQuality, MAX_CONJUNCTS, MAX_DISJUNCTS,
    ORACLE_BUDGET_BITS,
};
pub use ir::{
    dce, evaluate, parse_function, parse_functions, print_function, Constant, Flags, Function,
    IcmpPred, Instruction, IrError, Opcode, Operand, Param, Val, Width,
};
pub use matcher::{
    compile_rules, naive_match_at, Candidate, MatchError, Matcher, Step, Stop, Trace,
};
pub use profit::{
    commit_best, enumerate_candidates, evaluate_subset, CommitLimits, CommitOutcome, SubsetEval,
};
pub use rules::{
    check_wellformed, eval_precondition, instantiate_rhs, parse_rules, print_rule, print_rules,
    Binding, Diag, Instantiation, PredExpr, RInst, ROperand, Rule, Severity,
};
pub use superopt::{
    cache_load, cache_store, canonical_key, canonicalize, harvest, optimize_function, synthesize,
    Cache, CacheEntry, CanonSlice, Report, RootAttempt, RootOutcome, Slice, SuperoptError, Synth,
    SynthConfig, SynthResult,
};
pub use verify::{
    check_refinement, encode_query, infer_flags, validate_translation, verify_rule, Backend, Cex,
    SolverPort, Verdict, VerifyError,
};
