//! Policy reasoning trace (PRT) generation, validation and profiling.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assess::{strip_disjunctions, verdict_tokens};
use crate::corpus::{CaseRecord, Dataset, Policy, Split, Verdict};
use crate::gateway::{Gateway, GatewayError, Model, ModelHandle, SamplingConfig};
use crate::prompts::{self, Bindings, DemoBlock, TemplateId};
use crate::sampling::derive_seed;
use crate::{jsonl, sha256_hex, Clock};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrtRecord {
    pub case_id: String,
    pub expert_model: String,
    pub prt_text: String,
    pub echoed_verdict: Verdict,
    pub word_count: usize,
    pub sentence_count: usize,
    pub prompt_hash: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrtFailure {
    /// Fewer than two enumerated lines.
    Format,
    /// The final enumerated line names no verdict.
    MissingVerdict,
    /// The final enumerated line names both verdicts.
    Ambiguous,
    VerdictMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantined {
    pub case_id: String,
    pub expert_model: String,
    pub reason: PrtFailure,
    pub attempts: u32,
    pub prt_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrtOutcome {
    Accepted(PrtRecord),
    Quarantined(Quarantined),
}

#[derive(Debug, Error)]
pub enum PrtError {
    #[error("case {0} is not in the train split")]
    NotTrain(String),
    #[error("case {case_id}: {source}")]
    Gateway {
        case_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("PRT for unknown case {0}")]
    UnknownCase(String),
    #[error("duplicate PRT for case {0}")]
    DuplicateCase(String),
    #[error("store mixes expert models {0} and {1}")]
    MixedExperts(String, String),
    #[error("PRT for case {case_id} fails validation: {reason:?}")]
    Invalid { case_id: String, reason: PrtFailure },
    #[error("no PRT records")]
    EmptyInput,
    #[error(transparent)]
    Store(#[from] jsonl::JsonlError),
}

fn enumerated_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\*\*)?\d+\.").unwrap())
}

/// Enumeration prefix removed before sentence counting.
fn enum_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\*\*)?\d+\.(?:\*\*)?").unwrap())
}

pub fn validate_prt(text: &str, gold: Verdict) -> Result<(), PrtFailure> {
    let enumerated: Vec<&str> = text.lines().filter(|l| enumerated_re().is_match(l)).collect();
    if enumerated.len() < 2 {
        return Err(PrtFailure::Format);
    }
    let last = strip_disjunctions(enumerated[enumerated.len() - 1]);
    let kinds: BTreeSet<Verdict> = verdict_tokens(&last).into_iter().map(|t| t.verdict).collect();
    match kinds.len() {
        0 => Err(PrtFailure::MissingVerdict),
        1 if kinds.contains(&gold) => Ok(()),
        1 => Err(PrtFailure::VerdictMismatch),
        _ => Err(PrtFailure::Ambiguous),
    }
}

pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Sentences end at `.`, `!` or `?` followed by whitespace or the end of the
/// text, and at the start of each enumerated line. Runs of terminators count
/// once; trailing text without a terminator is a sentence.
pub fn count_sentences(text: &str) -> usize {
    let mut count = 0;
    let mut open = false;
    for line in text.lines() {
        let body = if enum_marker_re().is_match(line) {
            if open {
                count += 1;
                open = false;
            }
            enum_marker_re().replace(line, "").into_owned()
        } else {
            line.to_string()
        };
        let chars: Vec<char> = body.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if matches!(c, '.' | '!' | '?') {
                let mut j = i;
                while j + 1 < chars.len() && matches!(chars[j + 1], '.' | '!' | '?') {
                    j += 1;
                }
                let ends = j + 1 == chars.len() || chars[j + 1].is_whitespace();
                if ends && open {
                    count += 1;
                    open = false;
                }
                i = j + 1;
                continue;
            }
            if !c.is_whitespace() {
                open = true;
            }
            i += 1;
        }
    }
    if open {
        count += 1;
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrtStats {
    pub n: usize,
    pub mu_word: f64,
    pub sigma_word: f64,
    pub mu_sent: f64,
    pub sigma_sent: f64,
}

/// Population mean and standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

pub fn prt_stats(records: &[PrtRecord]) -> Result<PrtStats, PrtError> {
    if records.is_empty() {
        return Err(PrtError::EmptyInput);
    }
    let words: Vec<f64> = records.iter().map(|r| r.word_count as f64).collect();
    let sents: Vec<f64> = records.iter().map(|r| r.sentence_count as f64).collect();
    let (mu_word, sigma_word) = mean_sd(&words);
    let (mu_sent, sigma_sent) = mean_sd(&sents);
    Ok(PrtStats {
        n: records.len(),
        mu_word,
        sigma_word,
        mu_sent,
        sigma_sent,
    })
}

pub fn generation_prompt(case: &CaseRecord, policy: &Policy) -> String {
    prompts::render(
        TemplateId::PrtGenerate,
        &Bindings::new()
            .set("policy", policy.full_text.as_str())
            .set("case", case.case_text.as_str())
            .set("verdict", case.gold_verdict.as_str()),
    )
    .expect("prt_generate bindings are complete")
}

/// Asks the expert for a trace, validates it and regenerates once on
/// failure. A second failure quarantines the case.
pub fn generate_prt(
    case: &CaseRecord,
    policy: &Policy,
    expert: &Model<'_>,
    clock: &Clock,
) -> Result<PrtOutcome, PrtError> {
    if case.split != Split::Train {
        return Err(PrtError::NotTrain(case.case_id.clone()));
    }
    let prompt = generation_prompt(case, policy);
    let mut last = (String::new(), PrtFailure::Format);
    for attempt in 0..2 {
        let reply = expert
            .ask_attempt(&prompt, attempt)
            .map_err(|source| PrtError::Gateway {
                case_id: case.case_id.clone(),
                source,
            })?;
        let text = reply.text.trim().to_string();
        match validate_prt(&text, case.gold_verdict) {
            Ok(()) => {
                return Ok(PrtOutcome::Accepted(PrtRecord {
                    case_id: case.case_id.clone(),
                    expert_model: expert.handle.label(),
                    word_count: count_words(&text),
                    sentence_count: count_sentences(&text),
                    echoed_verdict: case.gold_verdict,
                    prt_text: text,
                    prompt_hash: sha256_hex(&prompt),
                    created_at: clock.now(),
                }))
            }
            Err(reason) => {
                tracing::debug!(case = %case.case_id, attempt, ?reason, "PRT rejected");
                last = (text, reason);
            }
        }
    }
    Ok(PrtOutcome::Quarantined(Quarantined {
        case_id: case.case_id.clone(),
        expert_model: expert.handle.label(),
        reason: last.1,
        attempts: 2,
        prt_text: last.0,
    }))
}

#[derive(Debug, Clone, Default)]
pub struct GenerationRun {
    pub records: Vec<PrtRecord>,
    pub quarantined: Vec<Quarantined>,
}

/// Generates traces for every train case, in dataset order. Each case draws
/// its sampling seed from `(seed, case_id)`.
pub fn generate_all(
    dataset: &Dataset,
    policy: &Policy,
    gateway: &Gateway,
    expert: &ModelHandle,
    seed: u64,
    clock: &Clock,
) -> Result<GenerationRun, PrtError> {
    let cases: Vec<&CaseRecord> = dataset.split(Split::Train).collect();
    let outcomes: Vec<Result<PrtOutcome, PrtError>> = cases
        .par_iter()
        .map(|case| {
            let sampling = SamplingConfig::prt_gen().with_seed(Some(derive_seed(seed, &case.case_id)));
            generate_prt(case, policy, &Model::new(gateway, expert, sampling), clock)
        })
        .collect();
    let mut run = GenerationRun::default();
    for outcome in outcomes {
        match outcome? {
            PrtOutcome::Accepted(r) => run.records.push(r),
            PrtOutcome::Quarantined(q) => run.quarantined.push(q),
        }
    }
    Ok(run)
}

/// A train case with its trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub case: CaseRecord,
    pub prt: PrtRecord,
}

impl Triple {
    pub fn verdict(&self) -> Verdict {
        self.case.gold_verdict
    }

    pub fn demo(&self, with_prt: bool) -> DemoBlock {
        DemoBlock {
            case_text: self.case.case_text.clone(),
            prt_text: with_prt.then(|| self.prt.prt_text.clone()),
            verdict: self.case.gold_verdict,
        }
    }
}

/// Train cases joined with one expert's traces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedDataset {
    pub policy_id: String,
    pub expert_model: String,
    pub triples: Vec<Triple>,
}

impl AugmentedDataset {
    /// Joins PRT records onto their train cases, in dataset order, checking
    /// every invariant of the store.
    pub fn assemble(dataset: &Dataset, records: Vec<PrtRecord>) -> Result<Self, PrtError> {
        let expert_model = records.first().map(|r| r.expert_model.clone()).unwrap_or_default();
        let mut by_case: HashMap<String, PrtRecord> = HashMap::new();
        for r in records {
            if r.expert_model != expert_model {
                return Err(PrtError::MixedExperts(expert_model, r.expert_model));
            }
            let case = dataset
                .get(&r.case_id)
                .ok_or_else(|| PrtError::UnknownCase(r.case_id.clone()))?;
            if case.split != Split::Train {
                return Err(PrtError::NotTrain(r.case_id));
            }
            if let Err(reason) = validate_prt(&r.prt_text, case.gold_verdict) {
                return Err(PrtError::Invalid {
                    case_id: r.case_id,
                    reason,
                });
            }
            if by_case.contains_key(&r.case_id) {
                return Err(PrtError::DuplicateCase(r.case_id));
            }
            by_case.insert(r.case_id.clone(), r);
        }
        let triples = dataset
            .split(Split::Train)
            .filter_map(|c| by_case.remove(&c.case_id).map(|prt| Triple { case: c.clone(), prt }))
            .collect();
        Ok(AugmentedDataset {
            policy_id: dataset.policy_id.clone(),
            expert_model,
            triples,
        })
    }

    pub fn load(path: &Path, dataset: &Dataset) -> Result<Self, PrtError> {
        Self::assemble(dataset, jsonl::read(path)?)
    }

    pub fn records(&self) -> Vec<PrtRecord> {
        self.triples.iter().map(|t| t.prt.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Content hash used to key deterministic selections.
    pub fn content_hash(&self) -> String {
        let mut material = String::new();
        for t in &self.triples {
            material.push_str(&t.case.case_id);
            material.push('\0');
            material.push_str(&sha256_hex(&t.prt.prt_text));
            material.push('\n');
        }
        sha256_hex(material)
    }
}
