//! Prompt templates and their rendering.
//!
//! Templates live in `templates/<id>.txt`. Placeholders are `{name}`; a
//! repeated block is written `{#block}...{/block}` and `{n}` inside it is the
//! 1-based position of the row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Base,
    Fewshot,
    FewshotPrt,
    SelfrefineInitial,
    SelfrefineCritique,
    SelfrefineJudgment,
    SelfrefinePrtInitial,
    SelfrefinePrtCritiqueJudgment,
    PrtGenerate,
    SelectRelevant,
    ClauseExtract,
    UtilizationCount,
    PolicySummarize,
}

impl TemplateId {
    pub const ALL: [TemplateId; 13] = [
        TemplateId::Base,
        TemplateId::Fewshot,
        TemplateId::FewshotPrt,
        TemplateId::SelfrefineInitial,
        TemplateId::SelfrefineCritique,
        TemplateId::SelfrefineJudgment,
        TemplateId::SelfrefinePrtInitial,
        TemplateId::SelfrefinePrtCritiqueJudgment,
        TemplateId::PrtGenerate,
        TemplateId::SelectRelevant,
        TemplateId::ClauseExtract,
        TemplateId::UtilizationCount,
        TemplateId::PolicySummarize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Base => "base",
            TemplateId::Fewshot => "fewshot",
            TemplateId::FewshotPrt => "fewshot_prt",
            TemplateId::SelfrefineInitial => "selfrefine_initial",
            TemplateId::SelfrefineCritique => "selfrefine_critique",
            TemplateId::SelfrefineJudgment => "selfrefine_judgment",
            TemplateId::SelfrefinePrtInitial => "selfrefine_prt_initial",
            TemplateId::SelfrefinePrtCritiqueJudgment => "selfrefine_prt_critique_judgment",
            TemplateId::PrtGenerate => "prt_generate",
            TemplateId::SelectRelevant => "select_relevant",
            TemplateId::ClauseExtract => "clause_extract",
            TemplateId::UtilizationCount => "utilization_count",
            TemplateId::PolicySummarize => "policy_summarize",
        }
    }

    /// Raw template text, without the file's trailing newline.
    pub fn source(self) -> &'static str {
        let raw = match self {
            TemplateId::Base => include_str!("../templates/base.txt"),
            TemplateId::Fewshot => include_str!("../templates/fewshot.txt"),
            TemplateId::FewshotPrt => include_str!("../templates/fewshot_prt.txt"),
            TemplateId::SelfrefineInitial => include_str!("../templates/selfrefine_initial.txt"),
            TemplateId::SelfrefineCritique => include_str!("../templates/selfrefine_critique.txt"),
            TemplateId::SelfrefineJudgment => include_str!("../templates/selfrefine_judgment.txt"),
            TemplateId::SelfrefinePrtInitial => include_str!("../templates/selfrefine_prt_initial.txt"),
            TemplateId::SelfrefinePrtCritiqueJudgment => {
                include_str!("../templates/selfrefine_prt_critique_judgment.txt")
            }
            TemplateId::PrtGenerate => include_str!("../templates/prt_generate.txt"),
            TemplateId::SelectRelevant => include_str!("../templates/select_relevant.txt"),
            TemplateId::ClauseExtract => include_str!("../templates/clause_extract.txt"),
            TemplateId::UtilizationCount => include_str!("../templates/utilization_count.txt"),
            TemplateId::PolicySummarize => include_str!("../templates/policy_summarize.txt"),
        };
        raw.strip_suffix('\n').unwrap_or(raw)
    }

    /// Declared binding names: scalars, then the repeated block and its row
    /// fields if the template has one.
    fn declared(self) -> (&'static [&'static str], Option<(&'static str, &'static [&'static str])>) {
        const DEMO: &[&str] = &["demo_case", "demo_verdict"];
        const DEMO_PRT: &[&str] = &["demo_case", "demo_reasoning", "demo_verdict"];
        match self {
            TemplateId::Base | TemplateId::SelfrefineInitial | TemplateId::SelfrefinePrtInitial => {
                (&["policy", "case"], None)
            }
            TemplateId::Fewshot => (&["policy", "case"], Some(("demo", DEMO))),
            TemplateId::FewshotPrt => (&["policy", "case"], Some(("demo", DEMO_PRT))),
            TemplateId::SelfrefineCritique => (&["policy", "case", "initial_reasoning"], None),
            TemplateId::SelfrefineJudgment => (&["policy", "case", "initial_reasoning", "critique"], None),
            TemplateId::SelfrefinePrtCritiqueJudgment => {
                (&["policy", "case", "initial_reasoning"], Some(("demo", DEMO_PRT)))
            }
            TemplateId::PrtGenerate => (&["policy", "case", "verdict"], None),
            TemplateId::SelectRelevant => (
                &[
                    "k",
                    "policy",
                    "max_index",
                    "case_information",
                    "clauses_relevant_clauses",
                ],
                Some(("candidate", &["candidate_information", "candidate_clauses"])),
            ),
            TemplateId::ClauseExtract => (&["policy_section_masterlist", "reasoning_text"], None),
            TemplateId::UtilizationCount => (&["reasoning_text"], None),
            TemplateId::PolicySummarize => (&["policy"], None),
        }
    }

    /// Whether demo rows for this template carry a reasoning trace.
    pub fn demo_reasoning(self) -> Option<bool> {
        match self.declared().1 {
            Some(("demo", fields)) => Some(fields.contains(&"demo_reasoning")),
            _ => None,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("missing binding `{0}`")]
    MissingBinding(String),
    #[error("unexpected binding `{0}`")]
    UnexpectedBinding(String),
    #[error("block `{block}` expected {expected} rows, got {got}")]
    DemoCountMismatch { block: String, expected: usize, got: usize },
    #[error("template {0} needs a reasoning trace for every demo")]
    PrtRequired(TemplateId),
    #[error("template {0} does not take reasoning traces")]
    PrtForbidden(TemplateId),
    #[error("rendered output differs from golden:\n{diff}")]
    Mismatch { diff: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Seg {
    Text(&'static str),
    Var(&'static str),
    Block(&'static str, Vec<Seg>),
}

/// Splits a template into literal text, placeholders and blocks. Braces that
/// do not form a placeholder stay literal.
fn parse(src: &'static str) -> Vec<Seg> {
    fn tag(rest: &str) -> Option<(char, &str, usize)> {
        let body = rest.strip_prefix('{')?;
        let end = body.find('}')?;
        let inner = &body[..end];
        let (kind, name) = match inner.chars().next()? {
            c @ ('#' | '/') => (c, &inner[1..]),
            _ => (' ', inner),
        };
        let ok = !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_');
        ok.then_some((kind, name, end + 2))
    }

    let mut stack: Vec<(&'static str, Vec<Seg>)> = vec![("", Vec::new())];
    let mut pos = 0;
    let mut lit = 0;
    while let Some(off) = src[pos..].find('{') {
        let at = pos + off;
        let Some((kind, _, len)) = tag(&src[at..]) else {
            pos = at + 1;
            continue;
        };
        let name: &'static str = &src[at + 1 + usize::from(kind != ' ')..at + len - 1];
        debug_assert_eq!(name, name.trim());
        let top = &mut stack.last_mut().expect("root frame").1;
        if lit < at {
            top.push(Seg::Text(&src[lit..at]));
        }
        match kind {
            '#' => stack.push((name, Vec::new())),
            '/' => {
                let (open, body) = stack.pop().expect("block frame");
                assert_eq!(open, name, "mismatched block close `{name}`");
                stack.last_mut().expect("root frame").1.push(Seg::Block(name, body));
            }
            _ => top.push(Seg::Var(name)),
        }
        pos = at + len;
        lit = pos;
    }
    assert_eq!(stack.len(), 1, "unclosed block");
    let mut root = stack.pop().expect("root frame").1;
    if lit < src.len() {
        root.push(Seg::Text(&src[lit..]));
    }
    root
}

fn collect(
    segs: &[Seg],
    scalars: &mut BTreeSet<&'static str>,
    blocks: &mut BTreeMap<&'static str, BTreeSet<&'static str>>,
) {
    for s in segs {
        match s {
            Seg::Text(_) => {}
            Seg::Var(v) => {
                scalars.insert(v);
            }
            Seg::Block(name, body) => {
                let mut inner = BTreeSet::new();
                collect(body, &mut inner, &mut BTreeMap::new());
                inner.remove("n");
                blocks.insert(name, inner);
            }
        }
    }
}

fn parsed(id: TemplateId) -> &'static [Seg] {
    static CACHE: OnceLock<Vec<Vec<Seg>>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        TemplateId::ALL
            .iter()
            .map(|&t| {
                let segs = parse(t.source());
                let (mut scalars, mut blocks) = (BTreeSet::new(), BTreeMap::new());
                collect(&segs, &mut scalars, &mut blocks);
                let (want_scalars, want_block) = t.declared();
                assert_eq!(
                    scalars,
                    want_scalars.iter().copied().collect::<BTreeSet<_>>(),
                    "placeholders of {t} disagree with its declaration"
                );
                let want_blocks: BTreeMap<_, BTreeSet<_>> = want_block
                    .map(|(b, f)| (b, f.iter().copied().collect()))
                    .into_iter()
                    .collect();
                assert_eq!(blocks, want_blocks, "blocks of {t} disagree with its declaration");
                segs
            })
            .collect()
    });
    &all[TemplateId::ALL.iter().position(|&t| t == id).expect("listed")]
}

/// Placeholder names a template requires, blocks excluded.
pub fn required_bindings(id: TemplateId) -> BTreeSet<&'static str> {
    parsed(id);
    id.declared().0.iter().copied().collect()
}

/// SHA-256 of the template source, recorded in run manifests.
pub fn template_hash(id: TemplateId) -> String {
    crate::sha256_hex(id.source())
}

pub type Row = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings {
    scalars: BTreeMap<String, String>,
    blocks: BTreeMap<String, Vec<Row>>,
    expected: BTreeMap<String, usize>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: &str, value: impl Into<String>) -> Self {
        self.scalars.insert(name.to_string(), value.into());
        self
    }

    pub fn block(mut self, name: &str, rows: Vec<Row>) -> Self {
        self.blocks.insert(name.to_string(), rows);
        self
    }

    /// Requires `name` to have exactly `k` rows at render time.
    pub fn expect_rows(mut self, name: &str, k: usize) -> Self {
        self.expected.insert(name.to_string(), k);
        self
    }

    pub fn demos(self, demos: &[DemoBlock]) -> Self {
        self.block("demo", demos.iter().map(DemoBlock::row).collect())
    }
}

/// One demonstration: a case, its verdict and optionally its reasoning trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoBlock {
    pub case_text: String,
    pub prt_text: Option<String>,
    pub verdict: Verdict,
}

impl DemoBlock {
    fn row(&self) -> Row {
        let mut row = Row::new();
        row.insert("demo_case".into(), self.case_text.clone());
        row.insert("demo_verdict".into(), self.verdict.to_string());
        if let Some(prt) = &self.prt_text {
            row.insert("demo_reasoning".into(), prt.clone());
        }
        row
    }

    /// Checks that traces are present exactly when `id` expects them.
    pub fn check_for(id: TemplateId, demos: &[DemoBlock]) -> Result<(), PromptError> {
        match id.demo_reasoning() {
            Some(true) if demos.iter().any(|d| d.prt_text.is_none()) => Err(PromptError::PrtRequired(id)),
            Some(false) if demos.iter().any(|d| d.prt_text.is_some()) => Err(PromptError::PrtForbidden(id)),
            None if !demos.is_empty() => Err(PromptError::UnexpectedBinding("demo".into())),
            _ => Ok(()),
        }
    }
}

/// Renders a demonstration template after checking trace presence.
pub fn render_with_demos(id: TemplateId, bindings: Bindings, demos: &[DemoBlock]) -> Result<String, PromptError> {
    DemoBlock::check_for(id, demos)?;
    render(id, &bindings.demos(demos))
}

fn check_keys<'a>(
    want: impl IntoIterator<Item = &'a str>,
    have: impl IntoIterator<Item = &'a str>,
) -> Result<(), PromptError> {
    let want: BTreeSet<&str> = want.into_iter().collect();
    let have: BTreeSet<&str> = have.into_iter().collect();
    if let Some(m) = want.difference(&have).next() {
        return Err(PromptError::MissingBinding(m.to_string()));
    }
    if let Some(x) = have.difference(&want).next() {
        return Err(PromptError::UnexpectedBinding(x.to_string()));
    }
    Ok(())
}

pub fn render(id: TemplateId, bindings: &Bindings) -> Result<String, PromptError> {
    let segs = parsed(id);
    let (scalars, block) = id.declared();
    check_keys(scalars.iter().copied(), bindings.scalars.keys().map(String::as_str))?;
    check_keys(block.map(|(b, _)| b), bindings.blocks.keys().map(String::as_str))?;
    if let Some((name, fields)) = block {
        let rows = &bindings.blocks[name];
        let expected = bindings.expected.get(name).copied();
        if rows.is_empty() || expected.is_some_and(|k| k != rows.len()) {
            return Err(PromptError::DemoCountMismatch {
                block: name.to_string(),
                expected: expected.unwrap_or(1),
                got: rows.len(),
            });
        }
        for row in rows {
            check_keys(fields.iter().copied(), row.keys().map(String::as_str))?;
        }
    }
    let mut out = String::new();
    emit(segs, &bindings.scalars, &bindings.blocks, &mut out);
    Ok(out)
}

fn emit(segs: &[Seg], scalars: &BTreeMap<String, String>, blocks: &BTreeMap<String, Vec<Row>>, out: &mut String) {
    for s in segs {
        match s {
            Seg::Text(t) => out.push_str(t),
            Seg::Var(v) => out.push_str(&scalars[*v]),
            Seg::Block(name, body) => {
                for (i, row) in blocks[*name].iter().enumerate() {
                    let mut local = row.clone();
                    local.insert("n".into(), (i + 1).to_string());
                    emit(body, &local, blocks, out);
                }
            }
        }
    }
}

/// Renders `id` and compares it byte for byte with `golden`.
pub fn golden_check(id: TemplateId, bindings: &Bindings, golden: &str) -> Result<(), PromptError> {
    let rendered = render(id, bindings)?;
    match first_difference(&rendered, golden) {
        None => Ok(()),
        Some(diff) => Err(PromptError::Mismatch { diff }),
    }
}

fn first_difference(got: &str, want: &str) -> Option<String> {
    if got == want {
        return None;
    }
    let byte = got
        .bytes()
        .zip(want.bytes())
        .position(|(a, b)| a != b)
        .unwrap_or(got.len().min(want.len()));
    let line = got.as_bytes()[..byte].iter().filter(|&&b| b == b'\n').count() + 1;
    let got_lines: Vec<&str> = got.split('\n').collect();
    let want_lines: Vec<&str> = want.split('\n').collect();
    Some(format!(
        "first difference at byte {byte}, line {line}\n- golden:   {:?}\n+ rendered: {:?}",
        want_lines.get(line - 1).copied().unwrap_or("<eof>"),
        got_lines.get(line - 1).copied().unwrap_or("<eof>"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo(i: usize, prt: bool) -> DemoBlock {
        DemoBlock {
            case_text: format!("demo case {i}"),
            prt_text: prt.then(|| format!("1. step\n2. Therefore the case is COMPLIANT {i}")),
            verdict: Verdict::Compliant,
        }
    }

    #[test]
    fn every_template_parses_and_matches_declaration() {
        for id in TemplateId::ALL {
            assert!(!parsed(id).is_empty());
            assert!(!id.source().ends_with('\n'), "{id}");
            assert_eq!(id.as_str().parse::<TemplateId>().unwrap(), id);
        }
    }

    #[test]
    fn base_ends_with_verdict_header() {
        let out = render(TemplateId::Base, &Bindings::new().set("policy", "P").set("case", "C")).unwrap();
        assert!(out.ends_with("### REASONING AND FINAL VERDICT (COMPLIANT or NONCOMPLIANT):"));
        assert!(out.contains("### POLICY: P\n\n### CASE: C"));
    }

    #[test]
    fn fewshot_prt_numbers_three_blocks() {
        let demos: Vec<_> = (0..3).map(|i| demo(i, true)).collect();
        let out = render_with_demos(
            TemplateId::FewshotPrt,
            Bindings::new().set("policy", "P").set("case", "C"),
            &demos,
        )
        .unwrap();
        for n in 1..=3 {
            assert!(out.contains(&format!("CASE {n}: demo case {}", n - 1)));
        }
        assert_eq!(out.matches("REASONING: ").count(), 3);
        assert_eq!(out.matches("VERDICT: COMPLIANT").count(), 3);
        assert!(!out.contains("CASE 4:"));
    }

    #[test]
    fn prt_generate_asks_for_enumeration() {
        let b = Bindings::new()
            .set("policy", "P")
            .set("case", "C")
            .set("verdict", "COMPLIANT");
        let out = render(TemplateId::PrtGenerate, &b).unwrap();
        assert!(out.contains("Provide your reasoning trace in an enumerated format"));
    }

    #[test]
    fn missing_and_extra_bindings() {
        assert_eq!(
            render(TemplateId::Base, &Bindings::new().set("policy", "P")),
            Err(PromptError::MissingBinding("case".into()))
        );
        let b = Bindings::new().set("policy", "P").set("case", "C").set("verdict", "x");
        assert_eq!(
            render(TemplateId::Base, &b),
            Err(PromptError::UnexpectedBinding("verdict".into()))
        );
    }

    #[test]
    fn demo_count_and_trace_rules() {
        let b = Bindings::new().set("policy", "P").set("case", "C");
        let err = render(TemplateId::Fewshot, &b.clone().demos(&[])).unwrap_err();
        assert!(matches!(err, PromptError::DemoCountMismatch { got: 0, .. }));
        let two = vec![demo(0, false), demo(1, false)];
        let err = render(TemplateId::Fewshot, &b.clone().demos(&two).expect_rows("demo", 3)).unwrap_err();
        assert!(matches!(
            err,
            PromptError::DemoCountMismatch {
                expected: 3,
                got: 2,
                ..
            }
        ));
        assert_eq!(
            render_with_demos(TemplateId::Fewshot, b.clone(), &[demo(0, true)]),
            Err(PromptError::PrtForbidden(TemplateId::Fewshot))
        );
        assert_eq!(
            render_with_demos(TemplateId::FewshotPrt, b, &[demo(0, false)]),
            Err(PromptError::PrtRequired(TemplateId::FewshotPrt))
        );
    }

    #[test]
    fn values_are_not_reexpanded() {
        let out = render(
            TemplateId::Base,
            &Bindings::new().set("policy", "{case}").set("case", "C"),
        )
        .unwrap();
        assert!(out.contains("### POLICY: {case}"));
    }

    #[test]
    fn golden_check_detects_drift() {
        let b = Bindings::new().set("policy", "P").set("case", "C");
        let good = render(TemplateId::Base, &b).unwrap();
        assert!(golden_check(TemplateId::Base, &b, &good).is_ok());
        let mut flipped = good.clone().into_bytes();
        flipped[5] ^= 0x20;
        let err = golden_check(TemplateId::Base, &b, &String::from_utf8(flipped).unwrap()).unwrap_err();
        assert!(matches!(err, PromptError::Mismatch { ref diff } if diff.contains("byte 5")));
        assert!(golden_check(TemplateId::Base, &b, &format!("{good}\n")).is_err());
    }

    #[test]
    fn hashes_differ_per_template() {
        let hashes: BTreeSet<_> = TemplateId::ALL.iter().map(|&t| template_hash(t)).collect();
        assert_eq!(hashes.len(), 13);
    }
}
