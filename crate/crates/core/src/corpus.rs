//! Policies, case datasets and split hygiene.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::clauses::{ClauseId, ClauseRegistry, Scheme};
use crate::sha256_hex;
use crate::tokenize::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "COMPLIANT")]
    Compliant,
    #[serde(rename = "NONCOMPLIANT")]
    NonCompliant,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Compliant => "COMPLIANT",
            Verdict::NonCompliant => "NONCOMPLIANT",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "COMPLIANT" => Ok(Verdict::Compliant),
            "NONCOMPLIANT" => Ok(Verdict::NonCompliant),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One case narrative with its gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub case_text: String,
    #[serde(rename = "verdict")]
    pub gold_verdict: Verdict,
    #[serde(rename = "clauses", default)]
    pub gold_clauses: BTreeSet<ClauseId>,
    pub split: Split,
}

impl CaseRecord {
    pub fn text_hash(&self) -> String {
        sha256_hex(self.case_text.as_bytes())
    }
}

/// A clause heading and the text that follows it up to the next heading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySection {
    pub id: ClauseId,
    pub line: usize,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub policy_id: String,
    pub title: String,
    pub full_text: String,
    pub clause_ids: Vec<ClauseId>,
    pub approx_token_count: usize,
    pub sections: Vec<PolicySection>,
}

impl Policy {
    /// Text of every section headed by `id`, concatenated in document order.
    pub fn clause_text(&self, id: &ClauseId) -> Option<String> {
        let parts: Vec<&str> = self
            .sections
            .iter()
            .filter(|s| &s.id == id)
            .map(|s| s.text.as_str())
            .collect();
        (!parts.is_empty()).then(|| parts.join("\n"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("policy file {0} is empty")]
    EmptyPolicy(String),
    #[error("{path}:{line}: clause marker {marker:?} is not in the registry")]
    UnknownClauseMarker { path: String, line: usize, marker: String },
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord { path: String, line: usize, message: String },
    #[error("{path}:{line}: unknown verdict {value:?}")]
    UnknownVerdict { path: String, line: usize, value: String },
    #[error("{path}:{line}: duplicate case_id {case_id:?}")]
    DuplicateId { path: String, line: usize, case_id: String },
    #[error("{path}:{line}: empty case_text for {case_id:?}")]
    EmptyCaseText { path: String, line: usize, case_id: String },
    #[error("train/test overlap: {0}")]
    SplitOverlap(SplitReport),
}

/// Extra label spellings accepted at ingestion, e.g. `good`/`bad` for
/// safety datasets. The mapping is recorded in the dataset provenance.
#[derive(Debug, Clone, Default)]
pub struct LabelMap {
    pub name: String,
    pub extra: BTreeMap<String, Verdict>,
}

impl LabelMap {
    /// `good` -> COMPLIANT, `bad` -> NONCOMPLIANT.
    pub fn good_bad() -> Self {
        LabelMap {
            name: "good/bad".into(),
            extra: [
                ("good".to_string(), Verdict::Compliant),
                ("bad".to_string(), Verdict::NonCompliant),
            ]
            .into_iter()
            .collect(),
        }
    }

    fn parse(&self, label: &str) -> Option<Verdict> {
        label.parse().ok().or_else(|| self.extra.get(label).copied())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub policy_id: String,
    pub records: Vec<CaseRecord>,
    pub provenance: String,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CaseRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn get(&self, case_id: &str) -> Option<&CaseRecord> {
        self.records.iter().find(|r| r.case_id == case_id)
    }
}

/// Title line of a policy file: a leading `# ` heading, else the first line.
fn policy_title(text: &str) -> String {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    first.trim().trim_start_matches('#').trim().to_string()
}

fn numbered_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^\s*(?:#{1,6}\s*)?((?:Article|Art\.)\s*\d+[a-z]?(?:\s*\([A-Za-z0-9]+\))*|(?:Section|§)\s*\d+(?:\.\d+)+(?:\s*\([A-Za-z0-9]+\))*)\s*(?:[:.\-–]|$)",
        )
        .unwrap()
    })
}

fn heading_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*#{2,6}\s+(.+?)\s*$").unwrap())
}

/// Splits policy text into clause sections.
///
/// Numbered markers are lines that open with `Article N:` or
/// `Section 164.502(b):` (an optional markdown `#` prefix is allowed). When
/// the registry has named clauses, `## Title` headings are markers too.
/// Every marker must resolve in the registry.
pub fn parse_sections(text: &str, registry: &ClauseRegistry, path: &str) -> Result<Vec<PolicySection>, CorpusError> {
    let named = registry.entries().iter().any(|e| e.id.scheme() == Scheme::Named);
    let mut sections: Vec<PolicySection> = Vec::new();
    let mut current: Option<(ClauseId, usize, Vec<&str>)> = None;
    for (i, line) in text.lines().enumerate() {
        let marker = numbered_marker_re()
            .captures(line)
            .map(|c| c[1].to_string())
            .or_else(|| {
                if named {
                    heading_re()
                        .captures(line)
                        .map(|c| c[1].trim_end_matches(':').to_string())
                } else {
                    None
                }
            });
        if let Some(marker) = marker {
            let resolved = crate::clauses::normalize(&marker, registry);
            let id = match (resolved.ids.as_slice(), resolved.unknown.is_empty()) {
                ([id], true) => id.clone(),
                _ => {
                    return Err(CorpusError::UnknownClauseMarker {
                        path: path.to_string(),
                        line: i + 1,
                        marker,
                    })
                }
            };
            if let Some((id, line, body)) = current.take() {
                sections.push(PolicySection {
                    id,
                    line,
                    text: body.join("\n").trim_end().to_string(),
                });
            }
            current = Some((id, i + 1, vec![line]));
        } else if let Some((_, _, body)) = current.as_mut() {
            body.push(line);
        }
    }
    if let Some((id, line, body)) = current {
        sections.push(PolicySection {
            id,
            line,
            text: body.join("\n").trim_end().to_string(),
        });
    }
    Ok(sections)
}

pub fn policy_from_text(
    policy_id: &str,
    text: &str,
    registry: &ClauseRegistry,
    tokenizer: &dyn Tokenizer,
    path: &str,
) -> Result<Policy, CorpusError> {
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyPolicy(path.to_string()));
    }
    let sections = parse_sections(text, registry, path)?;
    let mut seen = BTreeSet::new();
    let clause_ids = sections
        .iter()
        .filter(|s| seen.insert(s.id.clone()))
        .map(|s| s.id.clone())
        .collect();
    Ok(Policy {
        policy_id: policy_id.to_string(),
        title: policy_title(text),
        full_text: text.to_string(),
        clause_ids,
        approx_token_count: tokenizer.count(text),
        sections,
    })
}

/// Loads a UTF-8 policy file. The policy id is taken from the registry.
pub fn load_policy(path: &Path, registry: &ClauseRegistry, tokenizer: &dyn Tokenizer) -> Result<Policy, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    policy_from_text(
        registry.policy_id(),
        &text,
        registry,
        tokenizer,
        &path.display().to_string(),
    )
}

#[derive(Deserialize)]
struct RawRecord {
    case_id: String,
    case_text: String,
    verdict: String,
    #[serde(default)]
    clauses: Vec<String>,
    split: Split,
}

pub fn dataset_from_str(text: &str, policy: &Policy, labels: &LabelMap, path: &str) -> Result<Dataset, CorpusError> {
    let mut records = Vec::new();
    let mut ids: HashMap<String, Split> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            path: path.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        let verdict = labels.parse(&raw.verdict).ok_or_else(|| CorpusError::UnknownVerdict {
            path: path.to_string(),
            line: line_no,
            value: raw.verdict.clone(),
        })?;
        if raw.case_text.trim().is_empty() {
            return Err(CorpusError::EmptyCaseText {
                path: path.to_string(),
                line: line_no,
                case_id: raw.case_id,
            });
        }
        if let Some(prev) = ids.insert(raw.case_id.clone(), raw.split) {
            if prev == raw.split {
                return Err(CorpusError::DuplicateId {
                    path: path.to_string(),
                    line: line_no,
                    case_id: raw.case_id,
                });
            }
        }
        records.push(CaseRecord {
            case_id: raw.case_id,
            case_text: raw.case_text,
            gold_verdict: verdict,
            gold_clauses: raw.clauses.iter().map(|c| ClauseId::new(c)).collect(),
            split: raw.split,
        });
    }
    let mut provenance = format!("loaded from {path}");
    if !labels.extra.is_empty() {
        let mapping: Vec<String> = labels.extra.iter().map(|(k, v)| format!("{k}->{v}")).collect();
        provenance.push_str(&format!("; label map {} ({})", labels.name, mapping.join(", ")));
    }
    let dataset = Dataset {
        policy_id: policy.policy_id.clone(),
        records,
        provenance,
    };
    let report = split_disjointness_check(&dataset);
    if !report.is_clean() {
        return Err(CorpusError::SplitOverlap(report));
    }
    tracing::info!(
        path,
        train = dataset.count(Split::Train),
        test = dataset.count(Split::Test),
        "loaded dataset"
    );
    Ok(dataset)
}

pub fn load_dataset(path: &Path, policy: &Policy) -> Result<Dataset, CorpusError> {
    load_dataset_with_labels(path, policy, &LabelMap::default())
}

pub fn load_dataset_with_labels(path: &Path, policy: &Policy, labels: &LabelMap) -> Result<Dataset, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    dataset_from_str(&text, policy, labels, &path.display().to_string())
}

/// Canonical serialization: one record per line, fixed field order, clause
/// sets sorted.
pub fn dataset_to_string(d: &Dataset) -> String {
    let mut out = String::new();
    for r in &d.records {
        out.push_str(&crate::jsonl::to_line(r));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<(), crate::jsonl::JsonlError> {
    crate::jsonl::write_atomic(path, dataset_to_string(d).as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitReport {
    /// case ids present in both splits
    pub shared_ids: Vec<String>,
    /// (text hash, train ids, test ids) for identical texts across splits
    pub shared_texts: Vec<(String, Vec<String>, Vec<String>)>,
}

impl SplitReport {
    pub fn is_clean(&self) -> bool {
        self.shared_ids.is_empty() && self.shared_texts.is_empty()
    }
}

impl fmt::Display for SplitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} shared case_id(s) {:?}, {} shared text hash(es)",
            self.shared_ids.len(),
            self.shared_ids,
            self.shared_texts.len()
        )
    }
}

/// Reports ids and exact text hashes that occur in both splits.
pub fn split_disjointness_check(d: &Dataset) -> SplitReport {
    let train_ids: BTreeSet<&str> = d.split(Split::Train).map(|r| r.case_id.as_str()).collect();
    let test_ids: BTreeSet<&str> = d.split(Split::Test).map(|r| r.case_id.as_str()).collect();
    let shared_ids = train_ids.intersection(&test_ids).map(|s| s.to_string()).collect();

    let mut by_hash: BTreeMap<String, (Vec<String>, Vec<String>)> = BTreeMap::new();
    for r in &d.records {
        let slot = by_hash.entry(r.text_hash()).or_default();
        match r.split {
            Split::Train => slot.0.push(r.case_id.clone()),
            Split::Test => slot.1.push(r.case_id.clone()),
        }
    }
    let shared_texts = by_hash
        .into_iter()
        .filter(|(_, (a, b))| !a.is_empty() && !b.is_empty())
        .map(|(h, (a, b))| (h, a, b))
        .collect();
    SplitReport {
        shared_ids,
        shared_texts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clauses::EntrySpec;
    use crate::tokenize::BpeEstimator;

    fn registry() -> ClauseRegistry {
        ClauseRegistry::build(
            "toy",
            vec![
                EntrySpec::new("Article 1", Scheme::Article),
                EntrySpec::new("Article 2", Scheme::Article),
            ],
        )
        .unwrap()
    }

    fn policy() -> Policy {
        policy_from_text(
            "toy",
            "# Toy Policy\n\nArticle 1: Scope\nApplies to data.\n\nArticle 2: Consent\nConsent is required.\n",
            &registry(),
            &BpeEstimator,
            "toy.txt",
        )
        .unwrap()
    }

    fn line(id: &str, text: &str, verdict: &str, split: &str) -> String {
        format!(
            r#"{{"case_id":"{id}","case_text":"{text}","verdict":"{verdict}","clauses":["Article 1"],"split":"{split}"}}"#
        )
    }

    #[test]
    fn sections_follow_document_order() {
        let p = policy();
        assert_eq!(p.title, "Toy Policy");
        assert_eq!(
            p.clause_ids,
            vec![ClauseId::new("Article 1"), ClauseId::new("Article 2")]
        );
        assert_eq!(
            p.clause_text(&ClauseId::new("Article 2")).unwrap(),
            "Article 2: Consent\nConsent is required."
        );
        assert!(p.approx_token_count > 0);
    }

    #[test]
    fn unknown_marker_reports_line() {
        let err = policy_from_text(
            "toy",
            "Article 1: a\nx\nArticle 9: b\n",
            &registry(),
            &BpeEstimator,
            "p.txt",
        )
        .unwrap_err();
        match err {
            CorpusError::UnknownClauseMarker { line, marker, .. } => {
                assert_eq!(line, 3);
                assert_eq!(marker, "Article 9");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn empty_policy_rejected() {
        let err = policy_from_text("toy", "  \n", &registry(), &BpeEstimator, "p.txt").unwrap_err();
        assert!(matches!(err, CorpusError::EmptyPolicy(_)));
    }

    #[test]
    fn counts_per_split() {
        let text = [
            line("a", "one", "COMPLIANT", "train"),
            line("b", "two", "NONCOMPLIANT", "train"),
            line("c", "three", "COMPLIANT", "test"),
        ]
        .join("\n");
        let d = dataset_from_str(&text, &policy(), &LabelMap::default(), "d.jsonl").unwrap();
        assert_eq!((d.count(Split::Train), d.count(Split::Test)), (2, 1));
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = [
            line("a", "one", "COMPLIANT", "train"),
            line("a", "two", "COMPLIANT", "train"),
        ]
        .join("\n");
        let err = dataset_from_str(&text, &policy(), &LabelMap::default(), "d.jsonl").unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_verdict_and_label_map() {
        let text = line("a", "one", "good", "test");
        let err = dataset_from_str(&text, &policy(), &LabelMap::default(), "d.jsonl").unwrap_err();
        assert!(matches!(err, CorpusError::UnknownVerdict { .. }));
        let d = dataset_from_str(&text, &policy(), &LabelMap::good_bad(), "d.jsonl").unwrap();
        assert_eq!(d.records[0].gold_verdict, Verdict::Compliant);
        assert!(d.provenance.contains("good->COMPLIANT"));
    }

    #[test]
    fn malformed_line_number() {
        let text = format!("{}\n{{not json", line("a", "one", "COMPLIANT", "train"));
        let err = dataset_from_str(&text, &policy(), &LabelMap::default(), "d.jsonl").unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRecord { line: 2, .. }));
    }

    #[test]
    fn overlap_by_id_and_by_text() {
        let text = [
            line("a", "one", "COMPLIANT", "train"),
            line("a", "other", "COMPLIANT", "test"),
        ]
        .join("\n");
        assert!(matches!(
            dataset_from_str(&text, &policy(), &LabelMap::default(), "d").unwrap_err(),
            CorpusError::SplitOverlap(_)
        ));

        let d = Dataset {
            policy_id: "toy".into(),
            provenance: String::new(),
            records: vec![
                CaseRecord {
                    case_id: "x".into(),
                    case_text: "same words".into(),
                    gold_verdict: Verdict::Compliant,
                    gold_clauses: BTreeSet::new(),
                    split: Split::Train,
                },
                CaseRecord {
                    case_id: "y".into(),
                    case_text: "same words".into(),
                    gold_verdict: Verdict::Compliant,
                    gold_clauses: BTreeSet::new(),
                    split: Split::Test,
                },
            ],
        };
        let report = split_disjointness_check(&d);
        assert!(report.shared_ids.is_empty());
        // oracle: hash both texts independently
        let h = sha256_hex("same words");
        assert_eq!(
            report.shared_texts,
            vec![(h, vec!["x".to_string()], vec!["y".to_string()])]
        );
    }
}
