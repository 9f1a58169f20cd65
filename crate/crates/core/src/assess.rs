//! Assessment strategies, verdict parsing and resumable dataset runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CaseRecord, Dataset, Policy, Split, Verdict};
use crate::gateway::{Gateway, GatewayError, Model, ModelHandle, ModelResponse, SamplingConfig};
use crate::prompts::{self, Bindings, DemoBlock, TemplateId};
use crate::prtgen::AugmentedDataset;
use crate::sampling::derive_seed;
use crate::select::{self, SelectError, Selection};
use crate::{jsonl, sha256_hex, Clock};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerdictToken {
    pub start: usize,
    pub verdict: Verdict,
    pub uppercase: bool,
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(non[\s\-_]*)?compliant\b").unwrap())
}

fn disjunction_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:non[\s\-_]*)?compliant\s*(?:\bor\b|/|\|)\s*(?:non[\s\-_]*)?compliant\b").unwrap()
    })
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:final\s+judge?ment|final\s+verdict|verdict)\b[\s*:#\-]*((?:non[\s\-_]*)?compliant)\b")
            .unwrap()
    })
}

/// Blanks out prompt echoes such as "COMPLIANT or NONCOMPLIANT" so they are
/// not read as answers. Byte offsets are preserved.
pub fn strip_disjunctions(text: &str) -> String {
    disjunction_re()
        .replace_all(text, |c: &regex::Captures<'_>| " ".repeat(c[0].len()))
        .into_owned()
}

fn token_verdict(s: &str) -> Verdict {
    if s.len() > "compliant".len() {
        Verdict::NonCompliant
    } else {
        Verdict::Compliant
    }
}

/// Whole-token verdict mentions in order. `NON-COMPLIANT`, `non compliant`
/// and similar spellings read as NONCOMPLIANT; the bare word inside
/// `NONCOMPLIANT` never matches on its own.
pub fn verdict_tokens(text: &str) -> Vec<VerdictToken> {
    token_re()
        .find_iter(text)
        .map(|m| VerdictToken {
            start: m.start(),
            verdict: token_verdict(m.as_str()),
            uppercase: !m.as_str().chars().any(|c| c.is_lowercase()),
        })
        .collect()
}

/// The verdict a response commits to: the last labeled marker (`Final
/// Judgment:`, `Verdict:`, `FINAL VERDICT`) if any, else the last uppercase
/// verdict token, else `None`.
pub fn parse_verdict(text: &str) -> Option<Verdict> {
    let text = strip_disjunctions(text);
    if let Some(c) = label_re().captures_iter(&text).last() {
        return Some(token_verdict(&c[1]));
    }
    verdict_tokens(&text)
        .into_iter()
        .rev()
        .find(|t| t.uppercase)
        .map(|t| t.verdict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Base,
    Fewshot,
    FewshotPrt,
    Selfrefine,
    SelfrefinePrt,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Base,
        StrategyKind::Fewshot,
        StrategyKind::FewshotPrt,
        StrategyKind::Selfrefine,
        StrategyKind::SelfrefinePrt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Base => "base",
            StrategyKind::Fewshot => "fewshot",
            StrategyKind::FewshotPrt => "fewshot_prt",
            StrategyKind::Selfrefine => "selfrefine",
            StrategyKind::SelfrefinePrt => "selfrefine_prt",
        }
    }

    pub fn turns(self) -> usize {
        match self {
            StrategyKind::Base | StrategyKind::Fewshot | StrategyKind::FewshotPrt => 1,
            StrategyKind::Selfrefine => 3,
            StrategyKind::SelfrefinePrt => 2,
        }
    }

    pub fn uses_prt(self) -> bool {
        matches!(self, StrategyKind::FewshotPrt | StrategyKind::SelfrefinePrt)
    }

    pub fn needs_pool(self) -> bool {
        matches!(
            self,
            StrategyKind::Fewshot | StrategyKind::FewshotPrt | StrategyKind::SelfrefinePrt
        )
    }

    /// The no-trace strategy a trace strategy is compared against.
    pub fn baseline(self) -> Option<StrategyKind> {
        match self {
            StrategyKind::FewshotPrt => Some(StrategyKind::Fewshot),
            StrategyKind::SelfrefinePrt => Some(StrategyKind::Selfrefine),
            _ => None,
        }
    }
}

impl FromStr for StrategyKind {
    type Err = AssessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AssessError::InvalidStrategy(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Rand,
    Rel,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::Rand => "rand",
            SelectionMode::Rel => "rel",
        }
    }
}

impl FromStr for SelectionMode {
    type Err = AssessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rand" => Ok(SelectionMode::Rand),
            "rel" => Ok(SelectionMode::Rel),
            _ => Err(AssessError::InvalidStrategy(format!("unknown selection `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub selection: Option<SelectionMode>,
    pub k: usize,
}

impl Strategy {
    pub fn new(kind: StrategyKind, selection: Option<SelectionMode>, k: usize) -> Result<Self, AssessError> {
        let s = Strategy { kind, selection, k };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), AssessError> {
        if self.kind.uses_prt() != self.selection.is_some() {
            return Err(AssessError::InvalidStrategy(format!(
                "selection must be given for trace strategies and only for them ({})",
                self.kind.as_str()
            )));
        }
        if self.k == 0 {
            return Err(AssessError::InvalidStrategy("k must be at least 1".into()));
        }
        Ok(())
    }

    /// Short name such as `fewshot_prt_rel_k3`.
    pub fn label(&self) -> String {
        let mut s = self.kind.as_str().to_string();
        if let Some(sel) = self.selection {
            s.push('_');
            s.push_str(sel.as_str());
        }
        if self.kind.needs_pool() {
            s.push_str(&format!("_k{}", self.k));
        }
        s
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub template_id: TemplateId,
    pub prompt_hash: String,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_cot: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub case_id: String,
    pub strategy: Strategy,
    pub turns: Vec<Turn>,
    pub parsed_verdict: Option<Verdict>,
    pub gold_verdict: Verdict,
    pub correct: Option<bool>,
    #[serde(default)]
    pub flags: BTreeSet<String>,
    #[serde(default)]
    pub demo_case_ids: Vec<String>,
}

impl InstanceResult {
    pub fn final_turn(&self) -> &Turn {
        self.turns.last().expect("results have at least one turn")
    }

    /// Unparsed verdicts count as incorrect.
    pub fn is_correct(&self) -> bool {
        self.correct == Some(true)
    }

    pub fn tokens(&self) -> (u64, u64) {
        self.turns
            .iter()
            .fold((0, 0), |(a, b), t| (a + t.prompt_tokens, b + t.completion_tokens))
    }
}

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("strategy {0} needs a demonstration pool")]
    MissingPool(String),
    #[error("relevance selection needs a judge model")]
    MissingJudge,
    #[error("case {0} is not a test case")]
    NotTest(String),
    #[error("case {0} appears in its own demonstration pool")]
    TargetInPool(String),
    #[error("case {case_id}: {source}")]
    Gateway {
        case_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("case {case_id}: {source}")]
    Select {
        case_id: String,
        #[source]
        source: SelectError,
    },
    #[error("{0} holds a run with a different configuration")]
    ManifestMismatch(PathBuf),
    #[error(transparent)]
    Store(#[from] jsonl::JsonlError),
}

/// Everything a run shares across cases.
pub struct RunContext<'a> {
    pub policy: &'a Policy,
    pub strategy: Strategy,
    pub pool: Option<&'a AugmentedDataset>,
    pub gateway: &'a Gateway,
    pub learner: &'a ModelHandle,
    pub judge: Option<&'a ModelHandle>,
    pub sampling: SamplingConfig,
    pub seed: u64,
    pub window: usize,
}

impl<'a> RunContext<'a> {
    pub fn new(
        policy: &'a Policy,
        strategy: Strategy,
        gateway: &'a Gateway,
        learner: &'a ModelHandle,
        seed: u64,
    ) -> Self {
        RunContext {
            policy,
            strategy,
            pool: None,
            gateway,
            learner,
            judge: None,
            sampling: SamplingConfig::assess(),
            seed,
            window: select::DEFAULT_WINDOW,
        }
    }

    pub fn with_pool(mut self, pool: &'a AugmentedDataset) -> Self {
        self.pool = Some(pool);
        self
    }

    pub fn with_judge(mut self, judge: &'a ModelHandle) -> Self {
        self.judge = Some(judge);
        self
    }

    fn check(&self) -> Result<(), AssessError> {
        self.strategy.validate()?;
        if self.strategy.kind.needs_pool() && self.pool.is_none() {
            return Err(AssessError::MissingPool(self.strategy.label()));
        }
        if self.strategy.selection == Some(SelectionMode::Rel) && self.judge.is_none() {
            return Err(AssessError::MissingJudge);
        }
        Ok(())
    }
}

struct Turns<'a> {
    model: Model<'a>,
    case_id: &'a str,
    turns: Vec<Turn>,
}

impl Turns<'_> {
    fn ask(&mut self, template_id: TemplateId, prompt: String) -> Result<String, AssessError> {
        let r: ModelResponse = self.model.ask(&prompt).map_err(|source| AssessError::Gateway {
            case_id: self.case_id.to_string(),
            source,
        })?;
        self.turns.push(Turn {
            template_id,
            prompt_hash: sha256_hex(&prompt),
            response_text: r.text.clone(),
            raw_cot: r.raw_cot,
            prompt_tokens: r.prompt_tokens,
            completion_tokens: r.completion_tokens,
        });
        Ok(r.text)
    }
}

fn scalars(policy: &Policy, case: &CaseRecord) -> Bindings {
    Bindings::new()
        .set("policy", policy.full_text.as_str())
        .set("case", case.case_text.as_str())
}

fn rendered(id: TemplateId, b: Bindings, demos: Option<&[DemoBlock]>) -> String {
    match demos {
        Some(d) => prompts::render_with_demos(id, b, d),
        None => prompts::render(id, &b),
    }
    .unwrap_or_else(|e| panic!("{id} bindings are built here: {e}"))
}

fn choose_demos(ctx: &RunContext<'_>, case: &CaseRecord) -> Result<Selection, AssessError> {
    let pool = ctx.pool.ok_or_else(|| AssessError::MissingPool(ctx.strategy.label()))?;
    if pool.triples.iter().any(|t| t.case.case_id == case.case_id) {
        return Err(AssessError::TargetInPool(case.case_id.clone()));
    }
    let seed = derive_seed(ctx.seed, &format!("select:{}", case.case_id));
    let wrap = |source| AssessError::Select {
        case_id: case.case_id.clone(),
        source,
    };
    match ctx.strategy.selection {
        Some(SelectionMode::Rel) => {
            let judge_handle = ctx.judge.ok_or(AssessError::MissingJudge)?;
            let judge = Model::new(ctx.gateway, judge_handle, ctx.sampling.with_seed(Some(seed)));
            select::select_relevant(case, pool, ctx.strategy.k, &judge, &ctx.policy.title, seed, ctx.window)
                .map_err(wrap)
        }
        _ => select::select_random(pool, ctx.strategy.k, seed)
            .map(|indices| Selection {
                indices,
                flags: BTreeSet::new(),
            })
            .map_err(wrap),
    }
}

/// Runs one test case through the strategy's template sequence.
pub fn run_instance(ctx: &RunContext<'_>, case: &CaseRecord) -> Result<InstanceResult, AssessError> {
    ctx.check()?;
    if case.split != Split::Test {
        return Err(AssessError::NotTest(case.case_id.clone()));
    }
    let kind = ctx.strategy.kind;
    let (demos, demo_case_ids, mut flags) = if kind.needs_pool() {
        let sel = choose_demos(ctx, case)?;
        let pool = ctx.pool.expect("checked");
        let triples = sel.triples(pool);
        (
            triples.iter().map(|t| t.demo(kind.uses_prt())).collect::<Vec<_>>(),
            triples.iter().map(|t| t.case.case_id.clone()).collect(),
            sel.flags,
        )
    } else {
        (Vec::new(), Vec::new(), BTreeSet::new())
    };
    let sampling = ctx
        .sampling
        .with_seed(Some(derive_seed(ctx.seed, &format!("learn:{}", case.case_id))));
    let mut t = Turns {
        model: Model::new(ctx.gateway, ctx.learner, sampling),
        case_id: &case.case_id,
        turns: Vec::new(),
    };
    let base = || scalars(ctx.policy, case);
    let last = match kind {
        StrategyKind::Base => t.ask(TemplateId::Base, rendered(TemplateId::Base, base(), None))?,
        StrategyKind::Fewshot => t.ask(TemplateId::Fewshot, rendered(TemplateId::Fewshot, base(), Some(&demos)))?,
        StrategyKind::FewshotPrt => t.ask(
            TemplateId::FewshotPrt,
            rendered(TemplateId::FewshotPrt, base(), Some(&demos)),
        )?,
        StrategyKind::Selfrefine => {
            let initial = t.ask(
                TemplateId::SelfrefineInitial,
                rendered(TemplateId::SelfrefineInitial, base(), None),
            )?;
            let critique = t.ask(
                TemplateId::SelfrefineCritique,
                rendered(
                    TemplateId::SelfrefineCritique,
                    base().set("initial_reasoning", initial.as_str()),
                    None,
                ),
            )?;
            t.ask(
                TemplateId::SelfrefineJudgment,
                rendered(
                    TemplateId::SelfrefineJudgment,
                    base().set("initial_reasoning", initial).set("critique", critique),
                    None,
                ),
            )?
        }
        StrategyKind::SelfrefinePrt => {
            let initial = t.ask(
                TemplateId::SelfrefinePrtInitial,
                rendered(TemplateId::SelfrefinePrtInitial, base(), None),
            )?;
            t.ask(
                TemplateId::SelfrefinePrtCritiqueJudgment,
                rendered(
                    TemplateId::SelfrefinePrtCritiqueJudgment,
                    base().set("initial_reasoning", initial),
                    Some(&demos),
                ),
            )?
        }
    };
    let parsed_verdict = parse_verdict(&last);
    if parsed_verdict.is_none() {
        flags.insert("unparsed".to_string());
    }
    Ok(InstanceResult {
        case_id: case.case_id.clone(),
        strategy: ctx.strategy,
        turns: t.turns,
        parsed_verdict,
        gold_verdict: case.gold_verdict,
        correct: parsed_verdict.map(|v| v == case.gold_verdict),
        flags,
        demo_case_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub policy_id: String,
    pub strategy: Strategy,
    pub learner_model: String,
    pub judge_model: Option<String>,
    pub seed: u64,
    pub k: usize,
    pub pool_hash: Option<String>,
    pub template_hashes: BTreeMap<String, String>,
    pub started_at: chrono::DateTime<chrono::Utc>,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedCase {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub strategy: String,
    pub total_cases: usize,
    pub completed: usize,
    pub correct: usize,
    pub unparsed: usize,
    /// Percentage over completed cases, unparsed counted as incorrect.
    pub accuracy: Option<f64>,
    pub flagged: usize,
    pub flag_counts: BTreeMap<String, usize>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub failed: Vec<FailedCase>,
}

pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunFiles { dir: dir.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
    pub fn results(&self) -> PathBuf {
        self.dir.join("results.jsonl")
    }
    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.json")
    }
}

/// Templates a strategy renders, for the manifest.
fn templates_for(strategy: &Strategy) -> Vec<TemplateId> {
    let mut ids = match strategy.kind {
        StrategyKind::Base => vec![TemplateId::Base],
        StrategyKind::Fewshot => vec![TemplateId::Fewshot],
        StrategyKind::FewshotPrt => vec![TemplateId::FewshotPrt],
        StrategyKind::Selfrefine => vec![
            TemplateId::SelfrefineInitial,
            TemplateId::SelfrefineCritique,
            TemplateId::SelfrefineJudgment,
        ],
        StrategyKind::SelfrefinePrt => vec![
            TemplateId::SelfrefinePrtInitial,
            TemplateId::SelfrefinePrtCritiqueJudgment,
        ],
    };
    if strategy.selection == Some(SelectionMode::Rel) {
        ids.push(TemplateId::SelectRelevant);
    }
    ids
}

pub fn build_manifest(ctx: &RunContext<'_>, clock: &Clock, config: serde_json::Value) -> RunManifest {
    let template_hashes: BTreeMap<String, String> = templates_for(&ctx.strategy)
        .into_iter()
        .map(|t| (t.as_str().to_string(), prompts::template_hash(t)))
        .collect();
    let pool_hash = ctx.pool.map(|p| p.content_hash());
    let judge_model = ctx.judge.map(|j| j.label());
    let identity = serde_json::json!({
        "policy": ctx.policy.policy_id,
        "strategy": ctx.strategy,
        "learner": ctx.learner.label(),
        "judge": judge_model,
        "seed": ctx.seed,
        "sampling": ctx.sampling,
        "pool": pool_hash,
        "templates": template_hashes,
    });
    RunManifest {
        run_id: sha256_hex(identity.to_string())[..16].to_string(),
        policy_id: ctx.policy.policy_id.clone(),
        strategy: ctx.strategy,
        learner_model: ctx.learner.label(),
        judge_model,
        seed: ctx.seed,
        k: ctx.strategy.k,
        pool_hash,
        template_hashes,
        started_at: clock.now(),
        config,
    }
}

/// Runs every test case not yet in `files.results()`. The manifest is
/// written before any model call; on resume it must match. Cases run in
/// chunks of `concurrency` and are appended in dataset order, so a killed
/// run loses at most one chunk. The results file is rewritten sorted at the
/// end.
pub fn run_dataset(
    ctx: &RunContext<'_>,
    dataset: &Dataset,
    files: &RunFiles,
    concurrency: usize,
    clock: &Clock,
    config: serde_json::Value,
) -> Result<RunSummary, AssessError> {
    ctx.check()?;
    let manifest = build_manifest(ctx, clock, config);
    if files.manifest().exists() {
        let existing: RunManifest =
            jsonl::read_json(&files.manifest()).map_err(|_| AssessError::ManifestMismatch(files.manifest()))?;
        if existing.run_id != manifest.run_id {
            return Err(AssessError::ManifestMismatch(files.manifest()));
        }
    } else {
        jsonl::write_json_pretty(&files.manifest(), &manifest)?;
    }

    let (mut done, torn): (Vec<InstanceResult>, bool) = if files.results().exists() {
        jsonl::read_tolerant(&files.results())?
    } else {
        (Vec::new(), false)
    };
    if torn {
        tracing::warn!(path = %files.results().display(), "dropping torn trailing line");
        jsonl::write_all(&files.results(), &done)?;
    }
    let have: BTreeSet<String> = done.iter().map(|r| r.case_id.clone()).collect();
    let todo: Vec<&CaseRecord> = dataset
        .split(Split::Test)
        .filter(|c| !have.contains(&c.case_id))
        .collect();
    tracing::info!(run = %manifest.run_id, todo = todo.len(), skipped = have.len(), "assessing");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    let mut failed = Vec::new();
    for chunk in todo.chunks(concurrency.max(1)) {
        let outcomes: Vec<Result<InstanceResult, AssessError>> =
            pool.install(|| chunk.par_iter().map(|c| run_instance(ctx, c)).collect());
        let mut ok = Vec::new();
        for (case, outcome) in chunk.iter().zip(outcomes) {
            match outcome {
                Ok(r) => ok.push(r),
                Err(e) => {
                    tracing::error!(case = %case.case_id, error = %e, "case failed");
                    failed.push(FailedCase {
                        case_id: case.case_id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        jsonl::append(&files.results(), &ok)?;
        done.extend(ok);
    }

    let order: HashMap<&str, usize> = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.case_id.as_str(), i))
        .collect();
    done.sort_by_key(|r| order.get(r.case_id.as_str()).copied().unwrap_or(usize::MAX));
    jsonl::write_all(&files.results(), &done)?;
    let summary = summarize(
        &manifest.run_id,
        &ctx.strategy,
        dataset.count(Split::Test),
        &done,
        failed,
    );
    jsonl::write_json_pretty(&files.summary(), &summary)?;
    Ok(summary)
}

pub fn summarize(
    run_id: &str,
    strategy: &Strategy,
    total_cases: usize,
    results: &[InstanceResult],
    failed: Vec<FailedCase>,
) -> RunSummary {
    let mut flag_counts = BTreeMap::new();
    for r in results {
        for f in &r.flags {
            *flag_counts.entry(f.clone()).or_insert(0) += 1;
        }
    }
    let (prompt_tokens, completion_tokens) = results
        .iter()
        .map(InstanceResult::tokens)
        .fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
    let correct = results.iter().filter(|r| r.is_correct()).count();
    RunSummary {
        run_id: run_id.to_string(),
        strategy: strategy.label(),
        total_cases,
        completed: results.len(),
        correct,
        unparsed: results.iter().filter(|r| r.parsed_verdict.is_none()).count(),
        accuracy: (!results.is_empty()).then(|| 100.0 * correct as f64 / results.len() as f64),
        flagged: results.iter().filter(|r| !r.flags.is_empty()).count(),
        flag_counts,
        prompt_tokens,
        completion_tokens,
        failed,
    }
}

/// Loads results written by [`run_dataset`].
pub fn load_results(path: &Path) -> Result<Vec<InstanceResult>, AssessError> {
    Ok(jsonl::read(path)?)
}
