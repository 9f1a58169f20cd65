use std::time::Duration;

use serde_json::{json, Value};

use super::{ModelHandle, Provider, ProviderError, ProviderReply, SamplingConfig};

/// Client for OpenAI-compatible chat completion endpoints.
///
/// Reasoning text is taken from `message.reasoning_content` (or
/// `message.reasoning`) when the provider returns it.
pub struct OpenAiCompatProvider {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiCompatProvider {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Other(e.to_string()))?;
        Ok(OpenAiCompatProvider {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            client,
        })
    }

    fn body(model: &ModelHandle, prompt: &str, cfg: &SamplingConfig) -> Value {
        let mut body = json!({
            "model": model.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
            "max_tokens": cfg.max_new_tokens,
        });
        if let Some(seed) = cfg.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

fn parse_reply(v: &Value) -> Result<ProviderReply, ProviderError> {
    let message = &v["choices"][0]["message"];
    let text = message["content"]
        .as_str()
        .ok_or_else(|| ProviderError::Other(format!("response without choices[0].message.content: {v}")))?;
    let raw_cot = message["reasoning_content"]
        .as_str()
        .or_else(|| message["reasoning"].as_str())
        .map(str::to_string);
    Ok(ProviderReply {
        text: text.to_string(),
        raw_cot,
        prompt_tokens: v["usage"]["prompt_tokens"].as_u64(),
        completion_tokens: v["usage"]["completion_tokens"].as_u64(),
    })
}

impl Provider for OpenAiCompatProvider {
    fn call(&self, model: &ModelHandle, prompt: &str, cfg: &SamplingConfig) -> Result<ProviderReply, ProviderError> {
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&Self::body(model, prompt, cfg));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Other(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|h| h.to_str().ok())
                .and_then(|s| s.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(ProviderError::RateLimited { retry_after });
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ProviderError::Other(format!("HTTP {status}: {body}")));
        }
        let v: Value = resp.json().map_err(|e| ProviderError::Other(e.to_string()))?;
        parse_reply(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given raw HTTP responses, one per connection, and returns
    /// the base URL plus a handle yielding the request bodies.
    fn serve(responses: Vec<String>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for resp in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                bodies.push(String::from_utf8(body).unwrap());
                let mut stream = stream;
                stream.write_all(resp.as_bytes()).unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn ok(body: &str) -> String {
        format!(
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        )
    }

    fn handle() -> ModelHandle {
        crate::gateway::MockProvider::handle("remote", "deepseek-reasoner", true)
    }

    #[test]
    fn parses_content_reasoning_and_usage() {
        let body = r#"{"choices":[{"message":{"content":"Final Judgment: COMPLIANT","reasoning_content":"Based on the example reasoning"}}],"usage":{"prompt_tokens":12,"completion_tokens":5}}"#;
        let (url, server) = serve(vec![ok(body)]);
        let p = OpenAiCompatProvider::new(&url, Some("k".into()), Duration::from_secs(5)).unwrap();
        let r = p
            .call(&handle(), "hello", &SamplingConfig::assess().with_seed(Some(7)))
            .unwrap();
        assert_eq!(r.text, "Final Judgment: COMPLIANT");
        assert_eq!(r.raw_cot.as_deref(), Some("Based on the example reasoning"));
        assert_eq!((r.prompt_tokens, r.completion_tokens), (Some(12), Some(5)));
        let sent: Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
        assert_eq!(sent["model"], "deepseek-reasoner");
        assert_eq!(sent["max_tokens"], 8192);
        assert_eq!(sent["seed"], 7);
        assert_eq!(sent["messages"][0]["content"], "hello");
    }

    #[test]
    fn maps_429_to_rate_limited() {
        let resp = "HTTP/1.1 429 Too Many Requests\r\nretry-after: 3\r\ncontent-length: 0\r\nconnection: close\r\n\r\n";
        let (url, server) = serve(vec![resp.to_string()]);
        let p = OpenAiCompatProvider::new(&url, None, Duration::from_secs(5)).unwrap();
        let err = p.call(&handle(), "hello", &SamplingConfig::assess()).unwrap_err();
        assert!(matches!(
            err,
            ProviderError::RateLimited {
                retry_after: Some(d)
            } if d == Duration::from_secs(3)
        ));
        server.join().unwrap();
    }

    #[test]
    fn missing_content_is_provider_error() {
        assert!(parse_reply(&json!({"choices": []})).is_err());
    }
}
