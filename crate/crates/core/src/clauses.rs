//! Clause identifiers, the per-policy clause registry, and citation
//! extraction across the three citation styles (numbered articles, numbered
//! sections, named sections).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::gateway::{GatewayError, Model};
use crate::prompts::{self, Bindings, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Article,
    Section,
    Named,
}

/// Canonical clause identifier such as `Article 5`, `Section 164.512(a)` or
/// `Stay in bounds`. Serialized as its canonical string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClauseId {
    canonical: String,
    scheme: Scheme,
}

impl ClauseId {
    /// Builds an id from an already canonical string, inferring the scheme
    /// from its prefix.
    pub fn new(canonical: &str) -> Self {
        let canonical = collapse_ws(canonical);
        let scheme = if canonical.starts_with("Article ") {
            Scheme::Article
        } else if canonical.starts_with("Section ") && canonical[8..].starts_with(|c: char| c.is_ascii_digit()) {
            Scheme::Section
        } else {
            Scheme::Named
        };
        ClauseId { canonical, scheme }
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// `Section 164.502(b)` -> `Section 164.502`; `Article 6(1)(a)` -> `Article 6(1)`.
    pub fn parent(&self) -> Option<ClauseId> {
        if self.scheme == Scheme::Named || !self.canonical.ends_with(')') {
            return None;
        }
        let open = self.canonical.rfind('(')?;
        Some(ClauseId {
            canonical: self.canonical[..open].to_string(),
            scheme: self.scheme,
        })
    }

    /// True when `self` equals `other` or is one of its sub-clauses.
    pub fn within(&self, other: &ClauseId) -> bool {
        let mut cur = Some(self.clone());
        while let Some(c) = cur {
            if &c == other {
                return true;
            }
            cur = c.parent();
        }
        false
    }
}

impl fmt::Display for ClauseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

impl Serialize for ClauseId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical)
    }
}

impl<'de> Deserialize<'de> for ClauseId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(ClauseId::new(&s))
    }
}

#[derive(Debug, Clone)]
pub struct ClauseEntry {
    pub id: ClauseId,
    pub title: String,
    pub aliases: BTreeSet<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("reading registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing registry {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("registry has no clauses")]
    Empty,
    #[error("duplicate canonical clause {0}")]
    DuplicateCanonical(String),
    #[error("alias {alias:?} maps to both {first} and {second}")]
    AmbiguousAlias {
        alias: String,
        first: String,
        second: String,
    },
    #[error("clause {canonical:?} declared as {declared:?} but is not canonical for that scheme")]
    SchemeMismatch { canonical: String, declared: Scheme },
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryFile {
    policy_id: String,
    clauses: Vec<RegistryFileEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryFileEntry {
    canonical: String,
    scheme: Scheme,
    #[serde(default)]
    title: String,
    #[serde(default)]
    aliases: Vec<String>,
}

/// Immutable map from canonical clause ids to titles and aliases.
#[derive(Debug, Clone)]
pub struct ClauseRegistry {
    policy_id: String,
    entries: Vec<ClauseEntry>,
    by_canonical: BTreeMap<String, usize>,
    alias_index: HashMap<String, usize>,
}

/// Spec for one registry entry when building a registry in code.
#[derive(Debug, Clone)]
pub struct EntrySpec {
    pub canonical: String,
    pub scheme: Scheme,
    pub title: String,
    pub aliases: Vec<String>,
}

impl EntrySpec {
    pub fn new(canonical: &str, scheme: Scheme) -> Self {
        EntrySpec {
            canonical: canonical.to_string(),
            scheme,
            title: String::new(),
            aliases: Vec::new(),
        }
    }

    pub fn titled(mut self, title: &str) -> Self {
        self.title = title.to_string();
        self
    }

    pub fn alias(mut self, alias: &str) -> Self {
        self.aliases.push(alias.to_string());
        self
    }
}

impl ClauseRegistry {
    pub fn build(policy_id: &str, specs: Vec<EntrySpec>) -> Result<Self, RegistryError> {
        if specs.is_empty() {
            return Err(RegistryError::Empty);
        }
        let mut reg = ClauseRegistry {
            policy_id: policy_id.to_string(),
            entries: Vec::with_capacity(specs.len()),
            by_canonical: BTreeMap::new(),
            alias_index: HashMap::new(),
        };
        for spec in specs {
            let canonical = match spec.scheme {
                Scheme::Named => collapse_ws(&spec.canonical),
                Scheme::Article | Scheme::Section => match parse_numbered(&spec.canonical) {
                    Some((scheme, c)) if scheme == spec.scheme => c,
                    _ => {
                        return Err(RegistryError::SchemeMismatch {
                            canonical: spec.canonical,
                            declared: spec.scheme,
                        })
                    }
                },
            };
            let id = ClauseId {
                canonical: canonical.clone(),
                scheme: spec.scheme,
            };
            if reg.by_canonical.contains_key(&canonical) {
                return Err(RegistryError::DuplicateCanonical(canonical));
            }
            let idx = reg.entries.len();
            let mut aliases: BTreeSet<String> = spec.aliases.iter().map(|a| collapse_ws(a)).collect();
            aliases.insert(canonical.clone());
            for alias in &aliases {
                let key = alias_key(alias);
                if let Some(&prev) = reg.alias_index.get(&key) {
                    if prev != idx {
                        return Err(RegistryError::AmbiguousAlias {
                            alias: alias.clone(),
                            first: reg.entries[prev].id.canonical.clone(),
                            second: canonical,
                        });
                    }
                }
                reg.alias_index.insert(key, idx);
            }
            reg.by_canonical.insert(canonical, idx);
            reg.entries.push(ClauseEntry {
                id,
                title: collapse_ws(&spec.title),
                aliases,
            });
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            RegistryError::Parse { source, .. } => RegistryError::Parse {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile = serde_json::from_str(text).map_err(|source| RegistryError::Parse {
            path: "<inline>".into(),
            source,
        })?;
        let specs = file
            .clauses
            .into_iter()
            .map(|c| EntrySpec {
                canonical: c.canonical,
                scheme: c.scheme,
                title: c.title,
                aliases: c.aliases,
            })
            .collect();
        Self::build(&file.policy_id, specs)
    }

    pub fn to_json(&self) -> String {
        let file = RegistryFile {
            policy_id: self.policy_id.clone(),
            clauses: self
                .entries
                .iter()
                .map(|e| RegistryFileEntry {
                    canonical: e.id.canonical.clone(),
                    scheme: e.id.scheme,
                    title: e.title.clone(),
                    aliases: e.aliases.iter().filter(|a| **a != e.id.canonical).cloned().collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("serializable registry")
    }

    pub fn policy_id(&self) -> &str {
        &self.policy_id
    }

    pub fn entries(&self) -> &[ClauseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, canonical: &str) -> Option<&ClauseEntry> {
        self.by_canonical.get(canonical).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, id: &ClauseId) -> bool {
        self.by_canonical.contains_key(&id.canonical)
    }

    /// Resolves any alias spelling (spacing and punctuation insensitive).
    pub fn resolve(&self, mention: &str) -> Option<&ClauseId> {
        self.alias_index.get(&alias_key(mention)).map(|&i| &self.entries[i].id)
    }

    /// Comma-separated canonical list, in registry order.
    pub fn masterlist(&self) -> String {
        self.entries
            .iter()
            .map(|e| e.id.canonical.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    fn has_scheme(&self, scheme: Scheme) -> bool {
        self.entries.iter().any(|e| e.id.scheme == scheme)
    }
}

/// Output of [`normalize`]: resolved ids in mention order plus mentions the
/// registry does not know.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Normalized {
    pub ids: Vec<ClauseId>,
    pub unknown: Vec<String>,
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lookup key: lowercase alphanumerics and parentheses, plus dots that sit
/// between digits. `Article1`, `article 1` and `ARTICLE 1.` share a key.
fn alias_key(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() || c == '(' || c == ')' {
            out.extend(c.to_lowercase());
        } else if c == '.' {
            let prev = i > 0 && chars[i - 1].is_ascii_digit();
            let next = chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
            if prev && next {
                out.push('.');
            }
        }
    }
    out
}

/// Lowercase words joined by single spaces, punctuation dropped.
fn phrase_key(s: &str) -> String {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

fn prefix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(articles?|arts?\.?|sections?|secs?\.?|§§?)\s*(.*)$").unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(\d+[a-z]?(?:\.\d+)*)((?:\s*\(\s*[a-z0-9]+\s*\))*)\s*(?:(?:-|–|to)\s*(\d+))?\s*\.?$").unwrap()
    })
}

fn section_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{3}\.\d+").unwrap())
}

fn subparts(raw: &str) -> String {
    raw.chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_lowercase()
}

fn format_numbered(scheme: Scheme, number: &str, parts: &str) -> String {
    let head = if scheme == Scheme::Article {
        "Article"
    } else {
        "Section"
    };
    format!("{head} {}{}", number.to_lowercase(), subparts(parts))
}

fn scheme_of_prefix(prefix: &str) -> Scheme {
    let p = prefix.to_lowercase();
    if p.starts_with("art") {
        Scheme::Article
    } else {
        Scheme::Section
    }
}

/// Parses a single prefixed mention such as `Art. 6(1)` into canonical form.
fn parse_numbered(raw: &str) -> Option<(Scheme, String)> {
    let caps = prefix_re().captures(raw)?;
    let scheme = scheme_of_prefix(&caps[1]);
    let n = number_re().captures(caps[2].trim())?;
    if n.get(3).is_some() {
        return None;
    }
    Some((
        scheme,
        format_numbered(scheme, &n[1], n.get(2).map_or("", |m| m.as_str())),
    ))
}

/// Expands a bare numeric item under `scheme`, including `5-7` ranges.
fn expand_number(scheme: Scheme, item: &str) -> Option<Vec<String>> {
    let n = number_re().captures(item.trim())?;
    let parts = n.get(2).map_or("", |m| m.as_str());
    match n.get(3) {
        None => Some(vec![format_numbered(scheme, &n[1], parts)]),
        Some(end) => {
            let start: u32 = n[1].parse().ok()?;
            let end: u32 = end.as_str().parse().ok()?;
            if !parts.trim().is_empty() || end < start || end - start > 50 {
                return None;
            }
            Some(
                (start..=end)
                    .map(|i| format_numbered(scheme, &i.to_string(), ""))
                    .collect(),
            )
        }
    }
}

fn list_split_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[,;\n]").unwrap())
}

fn conj_split_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\s+(?:and|or|&)\s+|\s*&\s*").unwrap())
}

/// Canonicalizes a free-form clause list such as `Article 1,3,4` or
/// `Article1`. Never drops a mention: anything unresolved lands in
/// [`Normalized::unknown`].
pub fn normalize(raw: &str, registry: &ClauseRegistry) -> Normalized {
    let mut out = Normalized::default();
    let raw = raw.trim();
    if raw.is_empty() {
        return out;
    }
    if let Some(id) = registry.resolve(raw) {
        out.ids.push(id.clone());
        return out;
    }
    let mut carried: Option<Scheme> = None;
    for item in list_split_re().split(raw) {
        let item = item.trim().trim_end_matches('.').trim();
        if item.is_empty() {
            continue;
        }
        if let Some(id) = registry.resolve(item) {
            carried = match id.scheme {
                Scheme::Named => carried,
                s => Some(s),
            };
            push_unique(&mut out.ids, id.clone());
            continue;
        }
        for piece in conj_split_re().split(item) {
            let piece = piece.trim();
            if piece.is_empty() {
                continue;
            }
            normalize_piece(piece, registry, &mut carried, &mut out);
        }
    }
    out
}

fn normalize_piece(piece: &str, registry: &ClauseRegistry, carried: &mut Option<Scheme>, out: &mut Normalized) {
    if let Some(id) = registry.resolve(piece) {
        if id.scheme != Scheme::Named {
            *carried = Some(id.scheme);
        }
        push_unique(&mut out.ids, id.clone());
        return;
    }
    let candidates = if let Some(caps) = prefix_re().captures(piece) {
        let scheme = scheme_of_prefix(&caps[1]);
        *carried = Some(scheme);
        expand_number(scheme, &caps[2])
    } else if let Some(scheme) = *carried {
        expand_number(scheme, piece)
    } else if section_number_re().is_match(piece) {
        *carried = Some(Scheme::Section);
        expand_number(Scheme::Section, piece)
    } else {
        None
    };
    match candidates {
        Some(list) => {
            for c in list {
                match registry.resolve(&c) {
                    Some(id) => push_unique(&mut out.ids, id.clone()),
                    None => push_unique(&mut out.unknown, c),
                }
            }
        }
        None => push_unique(&mut out.unknown, collapse_ws(piece)),
    }
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

/// Clauses cited by a piece of reasoning.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub cited: BTreeSet<ClauseId>,
    pub unknown: BTreeSet<String>,
    /// The deterministic pattern matcher produced this result.
    pub fallback: bool,
    /// The judge answered malformed output and the fallback was engaged.
    pub flagged: bool,
}

impl Extraction {
    /// Cited canonicals plus unknown mentions, as compared against gold sets.
    pub fn all_mentions(&self) -> BTreeSet<String> {
        self.cited
            .iter()
            .map(|c| c.canonical.clone())
            .chain(self.unknown.iter().cloned())
            .collect()
    }
}

fn article_mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let num = r"\d+[a-z]?(?:\s*\(\s*[a-z0-9]+\s*\))*";
        Regex::new(&format!(
            r"(?i)\b(?:articles?|arts?\.)\s*({num}(?:\s*(?:,\s*(?:and\s+)?|\s+and\s+|\s+or\s+|\s*&\s*|\s*-\s*|\s*–\s*|\s+to\s+){num})*)"
        ))
        .unwrap()
    })
}

fn section_mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let num = r"\d+(?:\.\d+)+(?:\s*\(\s*[a-z0-9]+\s*\))*";
        Regex::new(&format!(
            r"(?i)(?:\b(?:sections?|secs?\.)|§§?)\s*({num}(?:\s*(?:,\s*(?:and\s+)?|\s+and\s+|\s+or\s+|\s*&\s*){num})*)"
        ))
        .unwrap()
    })
}

fn bare_section_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b\d{3}\.\d{2,4}(?:\([a-z0-9]+\))*").unwrap())
}

/// Deterministic citation extraction: per-scheme patterns for numbered
/// clauses, whole-phrase title matching for named ones.
pub fn extract_by_patterns(text: &str, registry: &ClauseRegistry) -> Extraction {
    let mut ex = Extraction {
        fallback: true,
        ..Default::default()
    };
    let absorb = |norm: Normalized, keep_unknown: bool, ex: &mut Extraction| {
        ex.cited.extend(norm.ids);
        if keep_unknown {
            ex.unknown.extend(norm.unknown);
        }
    };
    if registry.has_scheme(Scheme::Article) {
        for caps in article_mention_re().captures_iter(text) {
            let list = caps[1].replace('–', "-");
            absorb(normalize(&format!("Article {list}"), registry), true, &mut ex);
        }
    }
    if registry.has_scheme(Scheme::Section) {
        for caps in section_mention_re().captures_iter(text) {
            absorb(normalize(&format!("Section {}", &caps[1]), registry), true, &mut ex);
        }
        for m in bare_section_re().find_iter(text) {
            absorb(normalize(&format!("Section {}", m.as_str()), registry), false, &mut ex);
        }
    }
    // Titles and non-numeric aliases: exact normalized phrase match.
    let haystack = format!(" {} ", phrase_key(text));
    for entry in &registry.entries {
        for alias in &entry.aliases {
            if entry.id.scheme != Scheme::Named && parse_numbered(alias).is_some() {
                continue;
            }
            let key = phrase_key(alias);
            if key.is_empty() {
                continue;
            }
            if haystack.contains(&format!(" {key} ")) {
                ex.cited.insert(entry.id.clone());
            }
        }
    }
    ex
}

/// Longest plausible clause mention in a judge reply; longer items are prose.
const MAX_ITEM_WORDS: usize = 8;

fn judge_reply_is_malformed(reply: &str) -> bool {
    let reply = reply.trim();
    if reply.is_empty() {
        return false;
    }
    list_split_re()
        .split(reply)
        .any(|item| item.split_whitespace().count() > MAX_ITEM_WORDS)
}

fn is_empty_reply(reply: &str) -> bool {
    matches!(
        reply.trim().trim_end_matches('.').to_lowercase().as_str(),
        "" | "none" | "n/a" | "na" | "[]"
    )
}

/// Extracts cited clauses. With a judge model the reply is parsed as a
/// comma-separated list and normalized; a malformed reply is retried once,
/// then the pattern matcher takes over and the result is flagged. Without a
/// judge the pattern matcher is used directly.
pub fn extract_cited_clauses(
    reasoning_text: &str,
    registry: &ClauseRegistry,
    judge: Option<&Model<'_>>,
) -> Result<Extraction, GatewayError> {
    let Some(judge) = judge else {
        return Ok(extract_by_patterns(reasoning_text, registry));
    };
    let prompt = prompts::render(
        TemplateId::ClauseExtract,
        &Bindings::new()
            .set("policy_section_masterlist", registry.masterlist())
            .set("reasoning_text", reasoning_text),
    )
    .expect("clause_extract bindings are complete");
    for attempt in 0..2 {
        let reply = judge.ask_attempt(&prompt, attempt)?;
        if judge_reply_is_malformed(&reply.text) {
            continue;
        }
        let mut ex = Extraction::default();
        if !is_empty_reply(&reply.text) {
            let norm = normalize(&reply.text, registry);
            ex.cited.extend(norm.ids);
            ex.unknown.extend(norm.unknown);
        }
        return Ok(ex);
    }
    let mut ex = extract_by_patterns(reasoning_text, registry);
    ex.flagged = true;
    Ok(ex)
}
