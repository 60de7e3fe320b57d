//! The synthesis result cache: one tab-separated line per canonical slice.
//!
//! ```text
//! KEY \t FOUND \t RHS_TEXT \t COST     a verified replacement
//! KEY \t NONE  \t COST_BOUND          search exhausted up to the bound
//! ```
//!
//! `KEY` and `RHS_TEXT` are function texts with newlines folded to ` / `.
//! The file is ordinary data, not trusted: loading re-verifies every
//! replacement against its slice and drops (with a warning) anything that
//! fails or cannot be checked, skips malformed lines, and lets the last
//! occurrence of a duplicated key win. Storing writes keys in sorted
//! order, so a cache file's content is a deterministic function of its
//! entries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::ir::{parse_function, print_function, Function, Width};
use crate::verify::{check_refinement, Backend, Verdict, VerifyError};

use super::{flatten, semantic_cost, unflatten, SuperoptError};

pub type Cache = BTreeMap<String, CacheEntry>;

#[derive(Debug, Clone, PartialEq)]
pub enum CacheEntry {
    /// A replacement that re-verified against the key's slice.
    Found { rhs: Function, cost: usize },
    /// No replacement exists with at most `cost_bound` instructions.
    NotFound { cost_bound: usize },
}

/// Loads a cache file, re-verifying every replacement. A missing file is
/// an empty cache. Returns the surviving entries and one warning per
/// dropped or skipped line.
pub fn cache_load(path: &Path, backend: &Backend) -> Result<(Cache, Vec<String>), SuperoptError> {
    let mut cache = Cache::new();
    let mut warnings = Vec::new();
    if !path.exists() {
        return Ok((cache, warnings));
    }
    let text = fs::read_to_string(path)?;
    for (idx, line) in text.lines().enumerate() {
        let n = idx + 1;
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            [key, "NONE", bound] => {
                let Ok(cost_bound) = bound.parse::<usize>() else {
                    warnings.push(format!("cache line {n}: unreadable cost bound; skipped"));
                    continue;
                };
                if parse_function(&unflatten(key)).is_err() {
                    warnings.push(format!("cache line {n}: unreadable slice key; skipped"));
                    continue;
                }
                cache.insert(key.to_string(), CacheEntry::NotFound { cost_bound });
            }
            [key, "FOUND", rhs_text, cost] => {
                let Ok(slice_fn) = parse_function(&unflatten(key)) else {
                    warnings.push(format!("cache line {n}: unreadable slice key; skipped"));
                    continue;
                };
                let Ok(rhs) = parse_function(&unflatten(rhs_text)) else {
                    warnings.push(format!("cache line {n}: unreadable replacement; skipped"));
                    continue;
                };
                if cost.parse::<usize>().is_err() {
                    warnings.push(format!("cache line {n}: unreadable cost; skipped"));
                    continue;
                }
                match reverify(&slice_fn, &rhs, backend) {
                    Ok(Verdict::Valid) => {
                        let cost = semantic_cost(&rhs);
                        cache.insert(key.to_string(), CacheEntry::Found { rhs, cost });
                    }
                    Ok(Verdict::Counterexample(cex)) => {
                        warnings.push(format!(
                            "cache line {n}: replacement fails verification at width {}; dropped",
                            cex.width
                        ));
                    }
                    Err(
                        e @ (VerifyError::TooLarge { .. }
                        | VerifyError::Timeout
                        | VerifyError::Unknown(_)),
                    ) => {
                        warnings.push(format!(
                            "cache line {n}: replacement cannot be verified ({e}); dropped"
                        ));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            _ => warnings.push(format!("cache line {n}: malformed; skipped")),
        }
    }
    Ok((cache, warnings))
}

fn reverify(slice_fn: &Function, rhs: &Function, backend: &Backend) -> Result<Verdict, VerifyError> {
    // The slice is width-concrete: check at its uniform width, or as given
    // for mixed-width slices (the label is ignored then).
    let w = slice_fn.uniform_width().or_else(|| {
        slice_fn
            .returns
            .first()
            .and_then(|r| slice_fn.value_width(r))
    });
    let widths = [w.unwrap_or(Width::BOOL)];
    check_refinement(slice_fn, rhs, None, &widths, backend)
}

/// Writes the cache to `path`, sorted by key, one entry per line.
pub fn cache_store(path: &Path, cache: &Cache) -> Result<(), SuperoptError> {
    let mut out = String::new();
    for (key, entry) in cache {
        match entry {
            CacheEntry::Found { rhs, cost } => {
                out.push_str(key);
                out.push_str("\tFOUND\t");
                out.push_str(&flatten(&print_function(rhs)));
                out.push_str(&format!("\t{cost}\n"));
            }
            CacheEntry::NotFound { cost_bound } => {
                out.push_str(key);
                out.push_str(&format!("\tNONE\t{cost_bound}\n"));
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}
