//! Accuracy, clause-citation relevance and demonstration utilization.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assess::InstanceResult;
use crate::clauses::{extract_cited_clauses, ClauseId, ClauseRegistry};
use crate::corpus::Dataset;
use crate::gateway::{GatewayError, Model};
use crate::prompts::{self, Bindings, TemplateId};
use crate::prtgen::mean_sd;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no results")]
    EmptyInput,
    #[error("no record carries gold clause annotations")]
    NoGoldAnnotations,
    #[error("result for case {0} has no raw reasoning")]
    MissingRawCot(String),
    #[error("result for unknown case {0}")]
    UnknownCase(String),
    #[error("case {case_id}: {source}")]
    Judge {
        case_id: String,
        #[source]
        source: GatewayError,
    },
}

/// Percentage correct; unparsed verdicts count as incorrect.
pub fn accuracy(results: &[InstanceResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let correct = results.iter().filter(|r| r.is_correct()).count();
    Ok(100.0 * correct as f64 / results.len() as f64)
}

/// Gold and cited clause sets of one record, as canonical strings. Cited
/// mentions the registry does not know are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citations {
    pub case_id: String,
    pub gold: BTreeSet<String>,
    pub cited: BTreeSet<String>,
    #[serde(default)]
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseRelevanceReport {
    pub mu_cited: f64,
    pub recall_pct: f64,
    pub exact_match_pct: f64,
    pub top_incorrect_clause: Option<String>,
    /// Fraction of records with gold clause annotations.
    pub coverage: f64,
    pub annotated: usize,
    pub records: usize,
    pub flagged: usize,
}

/// Recall of one record; with `parent_credit` a cited sub-clause also
/// recalls its gold parent.
fn record_recall(c: &Citations, parent_credit: bool) -> f64 {
    let hit = |g: &String| {
        c.cited.contains(g)
            || (parent_credit && {
                let gid = ClauseId::new(g);
                c.cited.iter().any(|x| ClauseId::new(x).within(&gid))
            })
    };
    c.gold.iter().filter(|g| hit(g)).count() as f64 / c.gold.len() as f64
}

/// Macro-averaged recall and exact match over annotated records; mean cited
/// count over all records.
pub fn relevance_from_citations(
    records: &[Citations],
    parent_credit: bool,
) -> Result<ClauseRelevanceReport, MetricsError> {
    let annotated: Vec<&Citations> = records.iter().filter(|c| !c.gold.is_empty()).collect();
    if annotated.is_empty() {
        return Err(MetricsError::NoGoldAnnotations);
    }
    let n = annotated.len() as f64;
    let recall = annotated.iter().map(|c| record_recall(c, parent_credit)).sum::<f64>() / n;
    let em = annotated.iter().filter(|c| c.cited == c.gold).count() as f64 / n;
    let mut wrong: BTreeMap<&str, usize> = BTreeMap::new();
    for c in records {
        for x in c.cited.difference(&c.gold) {
            *wrong.entry(x.as_str()).or_insert(0) += 1;
        }
    }
    // Highest count; ties go to the lexicographically first clause.
    let top = wrong
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(k, _)| k.to_string());
    Ok(ClauseRelevanceReport {
        mu_cited: records.iter().map(|c| c.cited.len() as f64).sum::<f64>() / records.len() as f64,
        recall_pct: 100.0 * recall,
        exact_match_pct: 100.0 * em,
        top_incorrect_clause: top,
        coverage: annotated.len() as f64 / records.len() as f64,
        annotated: annotated.len(),
        records: records.len(),
        flagged: records.iter().filter(|c| c.flagged).count(),
    })
}

/// Extracts citations from each result's final response and joins the gold
/// set from `dataset`.
pub fn citations(
    results: &[InstanceResult],
    dataset: &Dataset,
    registry: &ClauseRegistry,
    judge: Option<&Model<'_>>,
) -> Result<Vec<Citations>, MetricsError> {
    results
        .par_iter()
        .map(|r| {
            let case = dataset
                .get(&r.case_id)
                .ok_or_else(|| MetricsError::UnknownCase(r.case_id.clone()))?;
            let ex = extract_cited_clauses(&r.final_turn().response_text, registry, judge).map_err(|source| {
                MetricsError::Judge {
                    case_id: r.case_id.clone(),
                    source,
                }
            })?;
            Ok(Citations {
                case_id: r.case_id.clone(),
                gold: case.gold_clauses.iter().map(|c| c.canonical().to_string()).collect(),
                cited: ex.all_mentions(),
                flagged: ex.flagged,
            })
        })
        .collect()
}

pub fn clause_relevance(
    results: &[InstanceResult],
    dataset: &Dataset,
    registry: &ClauseRegistry,
    judge: Option<&Model<'_>>,
    parent_credit: bool,
) -> Result<(ClauseRelevanceReport, Vec<Citations>), MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let records = citations(results, dataset, registry, judge)?;
    Ok((relevance_from_citations(&records, parent_credit)?, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    pub mu_ref: f64,
    pub sigma_ref: f64,
    pub pct_util: f64,
    pub n: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceCount {
    pub case_id: String,
    pub count: u64,
    pub flagged: bool,
}

pub fn utilization_from_counts(counts: &[ReferenceCount]) -> Result<UtilizationReport, MetricsError> {
    if counts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let xs: Vec<f64> = counts.iter().map(|c| c.count as f64).collect();
    let (mu_ref, sigma_ref) = mean_sd(&xs);
    Ok(UtilizationReport {
        mu_ref,
        sigma_ref,
        pct_util: 100.0 * counts.iter().filter(|c| c.count >= 1).count() as f64 / counts.len() as f64,
        n: counts.len(),
        flagged: counts.iter().filter(|c| c.flagged).count(),
    })
}

fn count_reply_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)\s*\.?\s*$").unwrap())
}

pub fn parse_count(reply: &str) -> Option<u64> {
    count_reply_re().captures(reply).and_then(|c| c[1].parse().ok())
}

/// Asks the judge how often the raw reasoning refers back to the supplied
/// examples. A non-integer reply is retried once, then counted as 0 and
/// flagged.
pub fn reference_count(case_id: &str, raw_cot: &str, judge: &Model<'_>) -> Result<ReferenceCount, MetricsError> {
    let prompt = prompts::render(
        TemplateId::UtilizationCount,
        &Bindings::new().set("reasoning_text", raw_cot),
    )
    .expect("utilization_count bindings are complete");
    for attempt in 0..2 {
        let reply = judge
            .ask_attempt(&prompt, attempt)
            .map_err(|source| MetricsError::Judge {
                case_id: case_id.to_string(),
                source,
            })?;
        if let Some(count) = parse_count(&reply.text) {
            return Ok(ReferenceCount {
                case_id: case_id.to_string(),
                count,
                flagged: false,
            });
        }
    }
    Ok(ReferenceCount {
        case_id: case_id.to_string(),
        count: 0,
        flagged: true,
    })
}

/// Utilization over the raw reasoning of each result's final turn.
pub fn utilization(
    results: &[InstanceResult],
    judge: &Model<'_>,
) -> Result<(UtilizationReport, Vec<ReferenceCount>), MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let cots: Vec<(&str, &str)> = results
        .iter()
        .map(|r| {
            r.final_turn()
                .raw_cot
                .as_deref()
                .map(|c| (r.case_id.as_str(), c))
                .ok_or_else(|| MetricsError::MissingRawCot(r.case_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let counts: Vec<ReferenceCount> = cots
        .par_iter()
        .map(|(id, cot)| reference_count(id, cot, judge))
        .collect::<Result<_, _>>()?;
    Ok((utilization_from_counts(&counts)?, counts))
}
