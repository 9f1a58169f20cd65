//! Loading of providers, models and policy bundles named in the config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use prt_core::clauses::ClauseRegistry;
use prt_core::corpus::{load_dataset, load_policy, Dataset, Policy};
use prt_core::gateway::{
    load_provider_config, Gateway, MockProvider, MockScript, ModelHandle, OpenAiCompatProvider, ProviderConfig,
    ProviderKind, ResponseCache,
};
use prt_core::jsonl;
use prt_core::tokenize::BpeEstimator;
use serde::{Deserialize, Serialize};

use crate::config::Settings;

pub struct Workspace {
    pub settings: Settings,
    pub gateway: Gateway,
    providers: BTreeMap<String, ProviderConfig>,
}

impl Workspace {
    /// Reads every provider config. Providers are only connected when a
    /// command needs a model, so offline commands work without API keys.
    pub fn open(settings: Settings) -> Result<Self> {
        let mut providers = BTreeMap::new();
        for (i, path) in settings.file.providers.iter().enumerate() {
            let cfg = load_provider_config(path).map_err(|e| anyhow::anyhow!("providers[{i}]: {e}"))?;
            if providers.contains_key(&cfg.provider_id) {
                bail!("providers[{i}]: duplicate provider_id `{}`", cfg.provider_id);
            }
            providers.insert(cfg.provider_id.clone(), cfg);
        }
        let gateway = Gateway::new(ResponseCache::disk(&settings.cache_dir));
        Ok(Workspace {
            settings,
            gateway,
            providers,
        })
    }

    /// Resolves `provider/model` and registers its provider on first use.
    pub fn model(&mut self, spec: &str, field: &str) -> Result<ModelHandle> {
        let (pid, mid) = spec
            .split_once('/')
            .with_context(|| format!("{field}: `{spec}` is not of the form provider/model"))?;
        let cfg = self
            .providers
            .get(pid)
            .with_context(|| format!("{field}: unknown provider `{pid}`"))?;
        let handle = cfg
            .handle(mid)
            .with_context(|| format!("{field}: provider `{pid}` has no model `{mid}`"))?;
        if !self.gateway.has_provider(pid) {
            let provider: Arc<dyn prt_core::gateway::Provider> = match cfg.kind {
                ProviderKind::Mock => {
                    let path = cfg
                        .script
                        .as_ref()
                        .with_context(|| format!("provider {pid}: mock needs `script`"))?;
                    let script = MockScript::load(path).map_err(|e| anyhow::anyhow!("provider {pid}: {e}"))?;
                    Arc::new(MockProvider::new(script).with_context(|| format!("provider {pid}: bad script pattern"))?)
                }
                ProviderKind::OpenaiCompat => Arc::new(
                    OpenAiCompatProvider::new(&cfg.base_url, cfg.api_key(), Duration::from_secs(300))
                        .with_context(|| format!("provider {pid}"))?,
                ),
            };
            self.gateway.register(pid, provider, cfg.max_in_flight);
        }
        Ok(handle)
    }

    /// The model handle behind a label, for pricing. Does not connect.
    pub fn handle(&self, spec: &str) -> Option<ModelHandle> {
        let (pid, mid) = spec.split_once('/')?;
        self.providers.get(pid)?.handle(mid)
    }

    pub fn bundle(&self, name: &str) -> Result<Bundle> {
        let paths = self.settings.policy(name)?;
        let registry = ClauseRegistry::load(&paths.registry)
            .with_context(|| format!("policies.{name}.registry: {}", paths.registry.display()))?;
        if registry.policy_id() != name {
            bail!(
                "policies.{name}.registry: registry is for policy `{}`",
                registry.policy_id()
            );
        }
        let policy =
            load_policy(&paths.text, &registry, &BpeEstimator).with_context(|| format!("policies.{name}.text"))?;
        let dataset = load_dataset(&paths.dataset, &policy).with_context(|| format!("policies.{name}.dataset"))?;
        Ok(Bundle {
            registry,
            policy,
            dataset,
        })
    }

    pub fn policy_dir(&self, policy: &str) -> PathBuf {
        self.settings.out_dir.join(policy)
    }

    pub fn prt_dir(&self, policy: &str, expert: &str) -> PathBuf {
        self.policy_dir(policy).join("prts").join(expert)
    }

    pub fn runs_dir(&self, policy: &str) -> PathBuf {
        self.policy_dir(policy).join("runs")
    }
}

pub struct Bundle {
    pub registry: ClauseRegistry,
    pub policy: Policy,
    pub dataset: Dataset,
}

/// Manifest written by `gen`, `export-sft` and `report` before any output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandManifest {
    pub command: String,
    pub policy_id: String,
    pub params: serde_json::Value,
    pub started_at: DateTime<Utc>,
    pub config: serde_json::Value,
}

impl CommandManifest {
    pub fn new(ws: &Workspace, command: &str, policy_id: &str, params: serde_json::Value) -> Self {
        CommandManifest {
            command: command.to_string(),
            policy_id: policy_id.to_string(),
            params,
            started_at: ws.settings.clock.now(),
            config: ws.settings.snapshot(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        jsonl::write_json_pretty(&dir.join("manifest.json"), self)?;
        Ok(())
    }
}
