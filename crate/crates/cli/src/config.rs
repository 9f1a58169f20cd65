//! Run configuration: one TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use prt_core::Clock;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub concurrency: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Timestamp written into every store and manifest.
    pub fixed_time: Option<DateTime<Utc>>,
    pub max_flagged_fraction: Option<f64>,
    #[serde(default)]
    pub providers: Vec<PathBuf>,
    /// `provider/model` used for relevance selection and metric extraction.
    pub judge: Option<String>,
    #[serde(default)]
    pub policies: BTreeMap<String, PolicyPaths>,
    #[serde(default)]
    pub experts: BTreeMap<String, String>,
    #[serde(default)]
    pub learners: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyPaths {
    pub text: PathBuf,
    pub registry: PathBuf,
    pub dataset: PathBuf,
}

/// Values given on the command line; each wins over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub concurrency: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub max_flagged_fraction: Option<f64>,
}

/// Effective configuration with every path resolved.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub concurrency: usize,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub clock: Clock,
    pub max_flagged_fraction: f64,
    pub file: FileConfig,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_MAX_FLAGGED: f64 = 0.1;

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

/// Parses a config file; errors name the offending key path.
pub fn parse(text: &str, origin: &str) -> Result<FileConfig> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("invalid config {origin}: at `{path}`: {}", e.into_inner())
    })
}

impl Settings {
    pub fn load(path: Option<&Path>, ov: Overrides) -> Result<Self> {
        let (mut file, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (parse(&text, &p.display().to_string())?, base)
            }
            None => (FileConfig::default(), PathBuf::from(".")),
        };
        file.providers = file.providers.iter().map(|p| rebase(&base, p)).collect();
        for pp in file.policies.values_mut() {
            pp.text = rebase(&base, &pp.text);
            pp.registry = rebase(&base, &pp.registry);
            pp.dataset = rebase(&base, &pp.dataset);
        }
        let out_dir = ov
            .out_dir
            .or_else(|| file.out_dir.as_ref().map(|p| rebase(&base, p)))
            .unwrap_or_else(|| PathBuf::from("out"));
        let cache_dir = ov
            .cache_dir
            .or_else(|| file.cache_dir.as_ref().map(|p| rebase(&base, p)))
            .unwrap_or_else(|| out_dir.join("cache"));
        let concurrency = ov.concurrency.or(file.concurrency).unwrap_or(4);
        if concurrency == 0 {
            bail!("concurrency: must be at least 1");
        }
        let max_flagged_fraction = ov
            .max_flagged_fraction
            .or(file.max_flagged_fraction)
            .unwrap_or(DEFAULT_MAX_FLAGGED);
        if !(0.0..=1.0).contains(&max_flagged_fraction) {
            bail!("max_flagged_fraction: {max_flagged_fraction} outside [0, 1]");
        }
        let clock = match file.fixed_time {
            Some(t) => Clock::Fixed(t),
            None => Clock::from_env(),
        };
        let seed = ov.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        file.seed = Some(seed);
        file.concurrency = Some(concurrency);
        file.max_flagged_fraction = Some(max_flagged_fraction);
        Ok(Settings {
            seed,
            concurrency,
            cache_dir,
            out_dir,
            clock,
            max_flagged_fraction,
            file,
        })
    }

    /// The effective config as embedded in manifests. Output locations are
    /// left out so runs into different directories stay comparable.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut f = self.file.clone();
        f.out_dir = None;
        f.cache_dir = None;
        serde_json::to_value(&f).expect("config serializes")
    }

    pub fn policy(&self, name: &str) -> Result<&PolicyPaths> {
        self.file
            .policies
            .get(name)
            .with_context(|| format!("policies.{name}: no such policy in config"))
    }

    pub fn expert(&self, name: &str) -> Result<&str> {
        self.file
            .experts
            .get(name)
            .map(String::as_str)
            .with_context(|| format!("experts.{name}: no such expert in config"))
    }

    pub fn learner(&self, name: &str) -> Result<&str> {
        self.file
            .learners
            .get(name)
            .map(String::as_str)
            .with_context(|| format!("learners.{name}: no such learner in config"))
    }

    /// The only expert in the config, when `--expert` is omitted.
    pub fn default_expert(&self) -> Result<&str> {
        let mut names = self.file.experts.keys();
        match (names.next(), names.next()) {
            (Some(n), None) => Ok(n),
            (None, _) => bail!("experts: config names no expert"),
            _ => bail!("experts: several experts configured, pass --expert"),
        }
    }
}
