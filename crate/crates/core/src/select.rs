//! Demonstration selection: seeded random draws or LLM relevance judging.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::corpus::CaseRecord;
use crate::gateway::{GatewayError, Model};
use crate::prompts::{self, Bindings, Row, TemplateId};
use crate::prtgen::{AugmentedDataset, Triple};
use crate::sampling::SeededRng;

pub const FLAG_RETRIED: &str = "rel_retried";
pub const FLAG_REPAIRED: &str = "rel_repaired";
pub const FLAG_FALLBACK: &str = "rel_fallback_random";

/// Candidates shown to the judge in one prompt.
pub const DEFAULT_WINDOW: usize = 40;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("k = {k} outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("relevance judge unreachable: {0}")]
    Judge(#[from] GatewayError),
}

/// Chosen pool indices, in selection order, with any degradation flags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub flags: BTreeSet<String>,
}

impl Selection {
    pub fn triples<'p>(&self, pool: &'p AugmentedDataset) -> Vec<&'p Triple> {
        self.indices.iter().map(|&i| &pool.triples[i]).collect()
    }
}

fn check_k(k: usize, n: usize) -> Result<(), SelectError> {
    if k == 0 || k > n {
        Err(SelectError::KOutOfRange { k, n })
    } else {
        Ok(())
    }
}

/// `k` distinct pool indices in draw order.
pub fn select_random(pool: &AugmentedDataset, k: usize, seed: u64) -> Result<Vec<usize>, SelectError> {
    check_k(k, pool.len())?;
    Ok(SeededRng::new(seed).sample_indices(pool.len(), k))
}

fn clause_list(case: &CaseRecord) -> String {
    if case.gold_clauses.is_empty() {
        "unannotated".to_string()
    } else {
        case.gold_clauses
            .iter()
            .map(|c| c.canonical())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn selection_prompt(target: &CaseRecord, candidates: &[&Triple], k: usize, policy_title: &str) -> String {
    let rows = candidates
        .iter()
        .map(|t| {
            let mut row = Row::new();
            row.insert("candidate_information".into(), t.case.case_text.clone());
            row.insert("candidate_clauses".into(), clause_list(&t.case));
            row
        })
        .collect();
    prompts::render(
        TemplateId::SelectRelevant,
        &Bindings::new()
            .set("k", k.to_string())
            .set("policy", policy_title)
            .set("max_index", (candidates.len() - 1).to_string())
            .set("case_information", target.case_text.as_str())
            .set("clauses_relevant_clauses", clause_list(target))
            .block("candidate", rows),
    )
    .expect("select_relevant bindings are complete")
}

/// Integers in a judge reply, or `None` when anything else is present.
pub fn parse_indices(reply: &str) -> Option<Vec<i64>> {
    let cleaned = reply.trim().trim_matches('`').trim();
    let tokens: Vec<&str> = cleaned
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return None;
    }
    tokens.iter().map(|t| t.parse::<i64>().ok()).collect()
}

fn is_valid(ix: &[i64], k: usize, n: usize) -> bool {
    let distinct: BTreeSet<_> = ix.iter().collect();
    ix.len() == k && distinct.len() == k && ix.iter().all(|&i| i >= 0 && (i as usize) < n)
}

/// Keeps valid distinct in-range indices in reply order, then tops up with
/// the lowest unused indices.
pub fn repair(ix: &[i64], k: usize, n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(k);
    for &i in ix {
        if i >= 0 && (i as usize) < n && !out.contains(&(i as usize)) && out.len() < k {
            out.push(i as usize);
        }
    }
    let mut next = 0;
    while out.len() < k {
        if !out.contains(&next) {
            out.push(next);
        }
        next += 1;
    }
    out
}

/// One judging round over `candidates`; indices are local to the slice.
fn judge_round(
    target: &CaseRecord,
    candidates: &[&Triple],
    k: usize,
    judge: &Model<'_>,
    policy_title: &str,
    seed: u64,
) -> Result<Selection, SelectError> {
    let n = candidates.len();
    if k == n {
        return Ok(Selection {
            indices: (0..n).collect(),
            flags: BTreeSet::new(),
        });
    }
    let prompt = selection_prompt(target, candidates, k, policy_title);
    let mut flags = BTreeSet::new();
    let first = judge.ask_attempt(&prompt, 0)?;
    if let Some(ix) = parse_indices(&first.text).filter(|ix| is_valid(ix, k, n)) {
        return Ok(Selection {
            indices: ix.into_iter().map(|i| i as usize).collect(),
            flags,
        });
    }
    flags.insert(FLAG_RETRIED.to_string());
    let second = judge.ask_attempt(&prompt, 1)?;
    let indices = match parse_indices(&second.text) {
        Some(ix) if is_valid(&ix, k, n) => ix.into_iter().map(|i| i as usize).collect(),
        Some(ix) => {
            flags.insert(FLAG_REPAIRED.to_string());
            repair(&ix, k, n)
        }
        None => {
            flags.insert(FLAG_FALLBACK.to_string());
            SeededRng::new(seed).sample_indices(n, k)
        }
    };
    tracing::debug!(case = %target.case_id, ?flags, "relevance reply needed recovery");
    Ok(Selection { indices, flags })
}

/// Picks the `k` pool triples the judge rates most similar to `target`.
/// Pools larger than `window` are judged in batches, and the batch winners
/// meet in playoff rounds until one prompt can hold them.
pub fn select_relevant(
    target: &CaseRecord,
    pool: &AugmentedDataset,
    k: usize,
    judge: &Model<'_>,
    policy_title: &str,
    seed: u64,
    window: usize,
) -> Result<Selection, SelectError> {
    check_k(k, pool.len())?;
    let window = window.max(k + 1);
    let mut survivors: Vec<usize> = (0..pool.len()).collect();
    let mut flags = BTreeSet::new();
    let mut round = 0u64;
    while survivors.len() > window {
        let mut winners = Vec::new();
        for (b, batch) in survivors.chunks(window).enumerate() {
            let cands: Vec<&Triple> = batch.iter().map(|&i| &pool.triples[i]).collect();
            let want = k.min(batch.len());
            let sel = judge_round(
                target,
                &cands,
                want,
                judge,
                policy_title,
                seed ^ (round << 32) ^ b as u64,
            )?;
            flags.extend(sel.flags);
            winners.extend(sel.indices.into_iter().map(|i| batch[i]));
        }
        survivors = winners;
        round += 1;
    }
    let cands: Vec<&Triple> = survivors.iter().map(|&i| &pool.triples[i]).collect();
    let sel = judge_round(target, &cands, k, judge, policy_title, seed ^ (round << 32))?;
    flags.extend(sel.flags);
    Ok(Selection {
        indices: sel.indices.into_iter().map(|i| survivors[i]).collect(),
        flags,
    })
}
