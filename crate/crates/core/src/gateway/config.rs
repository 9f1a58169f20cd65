use std::path::{Path, PathBuf};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::ModelHandle;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// OpenAI-compatible `/chat/completions` endpoint.
    #[default]
    OpenaiCompat,
    /// Offline scripted provider; `script` names the rule file.
    Mock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    #[serde(with = "super::price")]
    pub price_in_usd_per_1m: Decimal,
    #[serde(with = "super::price")]
    pub price_out_usd_per_1m: Decimal,
    #[serde(default)]
    pub supports_raw_cot: bool,
    pub context_window: usize,
}

/// Provider config file. The API key is only ever read from the
/// environment variable named by `api_key_env`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    pub models: Vec<ModelConfig>,
}

fn default_max_in_flight() -> usize {
    4
}

impl ProviderConfig {
    pub fn handle(&self, model_id: &str) -> Option<ModelHandle> {
        self.models
            .iter()
            .find(|m| m.model_id == model_id)
            .map(|m| ModelHandle {
                provider_id: self.provider_id.clone(),
                model_id: m.model_id.clone(),
                supports_raw_cot: m.supports_raw_cot,
                price_in_usd_per_1m: m.price_in_usd_per_1m,
                price_out_usd_per_1m: m.price_out_usd_per_1m,
                context_window: m.context_window,
            })
    }

    pub fn api_key(&self) -> Option<String> {
        if self.api_key_env.is_empty() {
            return None;
        }
        std::env::var(&self.api_key_env).ok()
    }
}

/// Reads a provider config; a relative `script` path is resolved against
/// the config file's directory.
pub fn load_provider_config(path: &Path) -> Result<ProviderConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg: ProviderConfig = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let (Some(script), Some(dir)) = (cfg.script.as_mut(), path.parent()) {
        if script.is_relative() {
            *script = dir.join(&*script);
        }
    }
    for m in &cfg.models {
        if m.model_id.is_empty() {
            return Err(format!("{}: empty model_id", path.display()));
        }
        if m.price_in_usd_per_1m.is_sign_negative() || m.price_out_usd_per_1m.is_sign_negative() {
            return Err(format!("{}: negative price for {}", path.display(), m.model_id));
        }
    }
    Ok(cfg)
}
