use std::path::Path;

use regex::Regex;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{ModelHandle, Provider, ProviderError, ProviderReply, SamplingConfig};

/// One scripted answer. `pattern` is a regular expression searched in the
/// prompt; `model`, when set, restricts the rule to that model id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    #[serde(default)]
    pub model: Option<String>,
    pub text: String,
    #[serde(default)]
    pub raw_cot: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn rule(mut self, pattern: &str, text: &str) -> Self {
        self.rules.push(MockRule {
            pattern: pattern.to_string(),
            model: None,
            text: text.to_string(),
            raw_cot: None,
        });
        self
    }

    pub fn rule_with_cot(mut self, pattern: &str, text: &str, raw_cot: &str) -> Self {
        self.rules.push(MockRule {
            pattern: pattern.to_string(),
            model: None,
            text: text.to_string(),
            raw_cot: Some(raw_cot.to_string()),
        });
        self
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Offline provider answering from a script; first matching rule wins, in
/// declared order. Unmatched prompts are an error, never a made-up answer.
pub struct MockProvider {
    rules: Vec<(Regex, MockRule)>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Result<Self, regex::Error> {
        let rules = script
            .rules
            .into_iter()
            .map(|r| Ok((Regex::new(&r.pattern)?, r)))
            .collect::<Result<_, regex::Error>>()?;
        Ok(MockProvider { rules })
    }

    /// A free, large-window handle for this provider.
    pub fn handle(provider_id: &str, model_id: &str, supports_raw_cot: bool) -> ModelHandle {
        ModelHandle {
            provider_id: provider_id.to_string(),
            model_id: model_id.to_string(),
            supports_raw_cot,
            price_in_usd_per_1m: Decimal::ZERO,
            price_out_usd_per_1m: Decimal::ZERO,
            context_window: 1 << 20,
        }
    }
}

impl Provider for MockProvider {
    fn call(&self, model: &ModelHandle, prompt: &str, _cfg: &SamplingConfig) -> Result<ProviderReply, ProviderError> {
        self.rules
            .iter()
            .find(|(re, rule)| rule.model.as_ref().is_none_or(|m| *m == model.model_id) && re.is_match(prompt))
            .map(|(_, rule)| ProviderReply {
                text: rule.text.clone(),
                raw_cot: rule.raw_cot.clone(),
                prompt_tokens: None,
                completion_tokens: None,
            })
            .ok_or_else(|| ProviderError::UnmatchedPrompt(prompt.chars().take(80).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GatewayError, ResponseCache};
    use std::sync::Arc;

    fn gateway(script: MockScript) -> Gateway {
        let mut g = Gateway::new(ResponseCache::memory());
        g.register("mock", Arc::new(MockProvider::new(script).unwrap()), 4);
        g
    }

    #[test]
    fn scripted_answer() {
        let g = gateway(MockScript::default().rule("ping", "pong"));
        let h = MockProvider::handle("mock", "m", false);
        let r = g.complete(&h, "ping", &SamplingConfig::assess()).unwrap();
        assert_eq!(r.text, "pong");
        assert_eq!(r.prompt_tokens, 1);
        assert!(!r.cache_hit);
    }

    #[test]
    fn first_match_wins() {
        let g = gateway(MockScript::default().rule("VERDICT", "COMPLIANT").rule(".*", "other"));
        let h = MockProvider::handle("mock", "m", false);
        let r = g
            .complete(&h, "### REASONING AND FINAL VERDICT", &SamplingConfig::assess())
            .unwrap();
        assert_eq!(r.text, "COMPLIANT");
    }

    #[test]
    fn unmatched_prompt_fails_closed() {
        let g = gateway(MockScript::default().rule("^ping$", "pong"));
        let h = MockProvider::handle("mock", "m", false);
        assert!(matches!(
            g.complete(&h, "something else", &SamplingConfig::assess()),
            Err(GatewayError::UnmatchedPrompt(_))
        ));
    }

    #[test]
    fn raw_cot_passes_through_only_when_supported() {
        let script = MockScript::default().rule_with_cot("x", "answer", "Based on the example reasoning...");
        let g = gateway(script);
        let with = MockProvider::handle("mock", "r1", true);
        let without = MockProvider::handle("mock", "plain", false);
        let cfg = SamplingConfig::assess();
        assert_eq!(
            g.complete(&with, "x", &cfg).unwrap().raw_cot.as_deref(),
            Some("Based on the example reasoning...")
        );
        assert_eq!(g.complete(&without, "x", &cfg).unwrap().raw_cot, None);
    }

    #[test]
    fn cache_prevents_second_provider_call() {
        let g = gateway(MockScript::default().rule("x", "y"));
        let h = MockProvider::handle("mock", "m", false);
        let cfg = SamplingConfig::assess();
        let first = g.complete(&h, "x", &cfg).unwrap();
        let second = g.complete(&h, "x", &cfg).unwrap();
        assert_eq!(g.provider_calls(), 1);
        assert!(second.cache_hit);
        assert_eq!(first.text, second.text);
    }

    #[test]
    fn concurrent_identical_calls_hit_provider_once() {
        let g = gateway(MockScript::default().rule("x", "y"));
        let h = MockProvider::handle("mock", "m", false);
        let cfg = SamplingConfig::assess();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| g.complete(&h, "x", &cfg).unwrap());
            }
        });
        assert_eq!(g.provider_calls(), 1);
    }

    #[test]
    fn model_filter() {
        let script = MockScript {
            rules: vec![
                MockRule {
                    pattern: "q".into(),
                    model: Some("judge".into()),
                    text: "0,1,2".into(),
                    raw_cot: None,
                },
                MockRule {
                    pattern: "q".into(),
                    model: None,
                    text: "general".into(),
                    raw_cot: None,
                },
            ],
        };
        let g = gateway(script);
        let cfg = SamplingConfig::assess();
        assert_eq!(
            g.complete(&MockProvider::handle("mock", "judge", false), "q", &cfg)
                .unwrap()
                .text,
            "0,1,2"
        );
        assert_eq!(
            g.complete(&MockProvider::handle("mock", "other", false), "q", &cfg)
                .unwrap()
                .text,
            "general"
        );
    }
}
