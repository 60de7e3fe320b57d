//! Dead code elimination and the cost model.

use super::{Function, Operand};
use std::collections::HashSet;

/// Remove every instruction whose result cannot reach a return. Returns the
/// cleaned function and how many instructions were dropped. One backward pass
/// reaches the fixpoint because the body is topologically ordered.
pub fn dce(f: &Function) -> (Function, usize) {
    let mut live: HashSet<&str> = f.returns.iter().map(|s| s.as_str()).collect();
    let mut keep = vec![false; f.body.len()];
    for (idx, inst) in f.body.iter().enumerate().rev() {
        if live.contains(inst.result.as_str()) {
            keep[idx] = true;
            for op in &inst.operands {
                if let Operand::Value(n) = op {
                    live.insert(n);
                }
            }
        }
    }
    let removed = keep.iter().filter(|&&k| !k).count();
    let body = f
        .body
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(i, _)| i.clone())
        .collect();
    (
        Function {
            name: f.name.clone(),
            params: f.params.clone(),
            body,
            returns: f.returns.clone(),
        },
        removed,
    )
}

/// Cost model: number of instructions.
pub fn cost(f: &Function) -> usize {
    f.body.len()
}
