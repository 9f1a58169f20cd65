//! Instruction-tuning export of trace-augmented train data.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clauses::ClauseId;
use crate::corpus::{Dataset, Policy, Split};
use crate::prompts::TemplateId;
use crate::prtgen::{AugmentedDataset, Triple};
use crate::sampling::SeededRng;
use crate::{jsonl, sha256_hex};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub instruction: String,
    pub policy_context: String,
    pub case: String,
    pub target: String,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("case {case_id}: clause {clause_id} has no text in the policy")]
    UnresolvableClause { case_id: String, clause_id: String },
    #[error("case {case_id} is not a train case")]
    NotTrain { case_id: String },
    #[error("train case {case_id} duplicates test case {test_case_id}")]
    Leakage { case_id: String, test_case_id: String },
    #[error("validation fraction {0} outside [0, 1)")]
    InvalidFraction(f64),
    #[error(transparent)]
    Store(#[from] jsonl::JsonlError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub records: usize,
    /// Cases without gold clauses, exported with the full policy.
    pub full_policy_fallback: Vec<String>,
}

/// The instruction paragraph of the base assessment prompt.
pub fn instruction_text() -> &'static str {
    let src = TemplateId::Base.source();
    let body = src.strip_prefix("### INSTRUCTIONS:\n").unwrap_or(src);
    body.split("\n\n###").next().unwrap_or(body).trim()
}

/// Lowercased with whitespace runs collapsed, then hashed; catches
/// near-verbatim copies across splits.
pub fn normalized_text_hash(text: &str) -> String {
    let norm = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    sha256_hex(norm)
}

/// Text of `id`, or of its nearest ancestor when the policy has no section
/// for the sub-clause itself.
fn clause_text(policy: &Policy, id: &ClauseId) -> Option<String> {
    let mut cur = Some(id.clone());
    while let Some(c) = cur {
        if let Some(t) = policy.clause_text(&c) {
            return Some(t);
        }
        cur = c.parent();
    }
    None
}

pub fn target_text(t: &Triple) -> String {
    format!("{}\n\nFinal Judgment: {}", t.prt.prt_text.trim_end(), t.verdict())
}

/// Builds one record per triple, in pool order. Fails if any triple is not
/// a train case or matches a test case's normalized text.
pub fn build_records(
    aug: &AugmentedDataset,
    policy: &Policy,
    dataset: &Dataset,
) -> Result<(Vec<SftRecord>, ExportSummary), ExportError> {
    let test_hashes: HashMap<String, &str> = dataset
        .split(Split::Test)
        .map(|c| (normalized_text_hash(&c.case_text), c.case_id.as_str()))
        .collect();
    let instruction = instruction_text().to_string();
    let mut summary = ExportSummary::default();
    let mut records = Vec::with_capacity(aug.len());
    for t in &aug.triples {
        let case_id = &t.case.case_id;
        match dataset.get(case_id) {
            Some(c) if c.split == Split::Train => {}
            _ => {
                return Err(ExportError::NotTrain {
                    case_id: case_id.clone(),
                })
            }
        }
        if let Some(test_id) = test_hashes.get(&normalized_text_hash(&t.case.case_text)) {
            return Err(ExportError::Leakage {
                case_id: case_id.clone(),
                test_case_id: test_id.to_string(),
            });
        }
        let policy_context = if t.case.gold_clauses.is_empty() {
            summary.full_policy_fallback.push(case_id.clone());
            policy.full_text.clone()
        } else {
            let mut ordered: Vec<&ClauseId> = t.case.gold_clauses.iter().collect();
            let pos = |id: &ClauseId| policy.clause_ids.iter().position(|c| c == id).unwrap_or(usize::MAX);
            ordered.sort_by_key(|id| pos(id));
            let mut parts: Vec<String> = Vec::new();
            for id in ordered {
                let text = clause_text(policy, id).ok_or_else(|| ExportError::UnresolvableClause {
                    case_id: case_id.clone(),
                    clause_id: id.to_string(),
                })?;
                if !parts.contains(&text) {
                    parts.push(text);
                }
            }
            parts.join("\n\n")
        };
        records.push(SftRecord {
            instruction: instruction.clone(),
            policy_context,
            case: t.case.case_text.clone(),
            target: target_text(t),
        });
    }
    summary.records = records.len();
    Ok((records, summary))
}

pub fn export_sft(
    aug: &AugmentedDataset,
    policy: &Policy,
    dataset: &Dataset,
    out: &Path,
) -> Result<ExportSummary, ExportError> {
    let (records, summary) = build_records(aug, policy, dataset)?;
    jsonl::write_all(out, &records)?;
    Ok(summary)
}

/// Seeded shuffle, then the first `round(fraction * n)` records go to
/// validation. Both halves keep their original relative order.
pub fn split_train_val<T: Clone>(records: &[T], val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), ExportError> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(ExportError::InvalidFraction(val_fraction));
    }
    let n_val = (val_fraction * records.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..records.len()).collect();
    SeededRng::new(seed).shuffle(&mut idx);
    let mut val_idx: Vec<usize> = idx[..n_val].to_vec();
    val_idx.sort_unstable();
    let mut is_val = vec![false; records.len()];
    for &i in &val_idx {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, r) in records.iter().enumerate() {
        if is_val[i] {
            val.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, val))
}

/// Writes `train.jsonl` and `val.jsonl` under `dir`.
pub fn write_split(
    records: &[SftRecord],
    val_fraction: f64,
    seed: u64,
    dir: &Path,
) -> Result<(PathBuf, PathBuf), ExportError> {
    let (train, val) = split_train_val(records, val_fraction, seed)?;
    let (tp, vp) = (dir.join("train.jsonl"), dir.join("val.jsonl"));
    jsonl::write_all(&tp, &train)?;
    jsonl::write_all(&vp, &val)?;
    Ok((tp, vp))
}
