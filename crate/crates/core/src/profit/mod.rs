//! Speculative whole-function rewriting with a global-profitability
//! commit: every applicable rewrite is enumerated up front, subsets are
//! applied speculatively, and only a subset that wins globally — measured
//! purely as instruction count after dead-code elimination — is kept. A
//! rewrite that looks useless alone (it strands instructions whose other
//! uses haven't died yet) can still be chosen when some companion rewrite
//! kills the remaining uses, and a rewrite that a greedy pass would fire
//! eagerly is rejected when no combination containing it beats the
//! original. The committed function never costs more than the input.
//!
//! Candidates are applied in ascending root order, re-checking each match
//! against the current function just before firing: a candidate whose
//! matched subgraph was changed by an earlier firing is skipped and
//! reported, not re-matched against the new instructions. Fresh matches
//! created by a firing are picked up by the next outer iteration, not
//! within the same subset evaluation.


use crate::ir::{dce, Function};
use crate::matcher::{apply_candidate, Candidate, MatchError, Matcher};

/// Knobs for [`commit_best`].
#[derive(Debug, Clone, Copy)]
pub struct CommitLimits {
    /// Largest candidate count searched exhaustively (2^n subset
    /// evaluations); larger counts fall back to greedy augmentation.
    pub exhaustive_max: usize,
}

impl Default for CommitLimits {
    fn default() -> Self {
        // 4096 subset evaluations at the cap: cheap at this scale.
        CommitLimits { exhaustive_max: 12 }
    }
}

/// Result of speculatively applying one candidate subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetEval {
    pub function: Function,
    /// Instruction count of `function` (after dead-code elimination).
    pub cost: usize,
    /// Positions (into the subset as given) of candidates that no longer
    /// matched when their turn came, in application order.
    pub skipped: Vec<usize>,
}

/// Result of [`commit_best`].
#[derive(Debug, Clone, PartialEq)]
pub struct CommitOutcome {
    pub function: Function,
    /// Indices into the candidate list, ascending: the committed subset.
    pub chosen: Vec<usize>,
    /// Candidate indices that were chosen but invalidated by an earlier
    /// firing within the winning evaluation.
    pub skipped: Vec<usize>,
    /// Whether the full subset lattice was searched (as opposed to greedy
    /// augmentation).
    pub exhaustive: bool,
}

/// Every way any rule matches anywhere in `f`: the union of `match_at`
/// over all instruction indices, deduplicated, in body order.
pub fn enumerate_candidates(m: &Matcher, f: &Function) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = Vec::new();
    for cand in m.match_function(f) {
        if !out.contains(&cand) {
            out.push(cand);
        }
    }
    out
}

/// Applies the subset's candidates to `f` in ascending root order and
/// returns the cleaned-up result. Each candidate is re-checked against
/// the current function just before firing — the root must still exist
/// (by name) and the same rule must still match there with the same
/// binding — and is skipped (and recorded) otherwise. Dead instructions
/// are eliminated at the end, so stranded feeders only count against a
/// subset while something still uses them.
///
/// Evaluations of different subsets are independent: this function is
/// pure in `f` and `subset`, so callers may fan evaluations out.
pub fn evaluate_subset(
    m: &Matcher,
    f: &Function,
    subset: &[Candidate],
) -> Result<SubsetEval, MatchError> {
    let mut order: Vec<usize> = (0..subset.len()).collect();
    order.sort_by_key(|&i| subset[i].root);

    let mut cur = f.clone();
    let mut skipped = Vec::new();
    for &i in &order {
        let cand = &subset[i];
        let root_name = &f.body[cand.root].result;
        let Some(idx) = cur.def_index(root_name) else {
            skipped.push(i);
            continue;
        };
        let still_matches = m
            .match_at(&cur, idx)
            .into_iter()
            .any(|c| c.rule_index == cand.rule_index && c.binding == cand.binding);
        if !still_matches {
            skipped.push(i);
            continue;
        }
        let here = Candidate {
            rule_index: cand.rule_index,
            root: idx,
            binding: cand.binding.clone(),
        };
        cur = apply_candidate(&m.rules()[cand.rule_index], &cur, &here)?;
    }
    let (function, _) = dce(&cur);
    let cost = function.cost();
    Ok(SubsetEval {
        function,
        cost,
        skipped,
    })
}

/// Picks the best candidate subset and returns the rewritten function.
/// With at most `limits.exhaustive_max` candidates every subset is
/// evaluated; beyond that, the subset grows greedily one candidate at a
/// time by best resulting cost. The committed function never costs more
/// than `f`: the empty subset is always in the running. Ties are broken
/// toward fewer candidates, then lexicographically smaller index sets.
pub fn commit_best(
    m: &Matcher,
    f: &Function,
    candidates: &[Candidate],
    limits: &CommitLimits,
) -> Result<CommitOutcome, MatchError> {
    let n = candidates.len();
    // The second guard keeps the subset mask in range no matter how high
    // the caller raises the exhaustive limit.
    if n <= limits.exhaustive_max && n < 63 {
        commit_exhaustive(m, f, candidates)
    } else {
        commit_greedy(m, f, candidates)
    }
}

/// Is (`cost_a`, `chosen_a`) a strictly better outcome than
/// (`cost_b`, `chosen_b`)? Lower cost wins; then fewer candidates; then
/// the lexicographically smaller index set.
fn better(cost_a: usize, chosen_a: &[usize], cost_b: usize, chosen_b: &[usize]) -> bool {
    (cost_a, chosen_a.len(), chosen_a) < (cost_b, chosen_b.len(), chosen_b)
}

fn commit_exhaustive(
    m: &Matcher,
    f: &Function,
    candidates: &[Candidate],
) -> Result<CommitOutcome, MatchError> {
    let n = candidates.len();
    let mut best: Option<(usize, Vec<usize>, SubsetEval)> = None;
    for mask in 0u64..1u64 << n {
        let chosen: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let subset: Vec<Candidate> = chosen.iter().map(|&i| candidates[i].clone()).collect();
        let eval = evaluate_subset(m, f, &subset)?;
        let replace = match &best {
            None => true,
            Some((cost, prev, _)) => better(eval.cost, &chosen, *cost, prev),
        };
        if replace {
            best = Some((eval.cost, chosen, eval));
        }
    }
    let (_, chosen, eval) = best.expect("the empty subset is always evaluated");
    Ok(outcome(chosen, eval, true))
}

fn commit_greedy(
    m: &Matcher,
    f: &Function,
    candidates: &[Candidate],
) -> Result<CommitOutcome, MatchError> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut current = evaluate_subset(m, f, &[])?;
    let mut best: (usize, Vec<usize>, SubsetEval) = (current.cost, Vec::new(), current.clone());

    loop {
        let mut round: Option<(usize, Vec<usize>, SubsetEval)> = None;
        for i in 0..candidates.len() {
            if chosen.contains(&i) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(i);
            trial.sort_unstable();
            let subset: Vec<Candidate> = trial.iter().map(|&j| candidates[j].clone()).collect();
            let eval = evaluate_subset(m, f, &subset)?;
            let replace = match &round {
                None => true,
                Some((cost, prev, _)) => better(eval.cost, &trial, *cost, prev),
            };
            if replace {
                round = Some((eval.cost, trial, eval));
            }
        }
        // Accept the round's best addition unless it makes things worse.
        // Cost-neutral additions are kept: a rewrite that strands feeders
        // on its own can still unlock a joint win with a later addition.
        match round {
            Some((cost, trial, eval)) if cost <= current.cost => {
                chosen = trial;
                current = eval;
                if better(current.cost, &chosen, best.0, &best.1) {
                    best = (current.cost, chosen.clone(), current.clone());
                }
            }
            _ => break,
        }
    }
    let (_, chosen, eval) = best;
    Ok(outcome(chosen, eval, false))
}

fn outcome(chosen: Vec<usize>, eval: SubsetEval, exhaustive: bool) -> CommitOutcome {
    // Subset positions → candidate indices, and drop skipped ones from
    // the chosen list so `chosen` names what actually fired.
    let skipped: Vec<usize> = eval.skipped.iter().map(|&p| chosen[p]).collect();
    let fired: Vec<usize> = chosen
        .iter()
        .copied()
        .filter(|i| !skipped.contains(i))
        .collect();
    CommitOutcome {
        function: eval.function,
        chosen: fired,
        skipped,
        exhaustive,
    }
}
