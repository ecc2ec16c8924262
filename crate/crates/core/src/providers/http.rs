//! Config-driven HTTP judge adapter.
//!
//! The request body is a JSON template in which the strings `"{prompt}"`,
//! `"{model}"`, `"{temperature}"` and `"{max_tokens}"` are substituted; the
//! response is read through dotted field paths (`choices.0.logprobs.content`).

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::providers::extract::{probability_from_generated_tokens, probability_from_two_logits};
use crate::providers::{render_prompt, Judgment, JudgmentSource, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseMapping {
    /// Array of generated tokens with their log-probabilities.
    GeneratedTokens {
        tokens_path: String,
        token_field: String,
        logprob_field: String,
    },
    /// Raw logits of the `'0'` and `'1'` tokens.
    TwoLogits {
        logit_zero_path: String,
        logit_one_path: String,
    },
}

impl Default for ResponseMapping {
    fn default() -> Self {
        ResponseMapping::GeneratedTokens {
            tokens_path: "choices.0.logprobs.content".into(),
            token_field: "token".into(),
            logprob_field: "logprob".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    pub url: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_prefix")]
    pub auth_prefix: String,
    #[serde(default = "default_request")]
    pub request: Value,
    #[serde(default)]
    pub response: ResponseMapping,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_auth_prefix() -> String {
    "Bearer ".into()
}

fn default_timeout() -> u64 {
    60
}

/// Chat-completions style body asking for token log-probabilities.
pub fn default_request() -> Value {
    json!({
        "model": "{model}",
        "messages": [{"role": "user", "content": "{prompt}"}],
        "temperature": "{temperature}",
        "max_tokens": "{max_tokens}",
        "logprobs": true
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    RateLimited,
    Status { code: u16, body: String },
    Network(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::RateLimited => f.write_str("rate limited (429)"),
            TransportError::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            TransportError::Network(m) => write!(f, "network: {m}"),
        }
    }
}

pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> std::result::Result<Value, TransportError>;
}

/// Blocking `reqwest` transport.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::invalid(format!("http client: {e}")))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> std::result::Result<Value, TransportError> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        for (k, v) in headers {
            req = req.header(k, v);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(TransportError::RateLimited);
        }
        let text = resp
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Status {
                code: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Status {
            code: status.as_u16(),
            body: format!("invalid JSON ({e}): {text}"),
        })
    }
}

/// Look up a dotted path; numeric segments index arrays.
pub fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.')
        .filter(|s| !s.is_empty())
        .try_fold(v, |cur, seg| match cur {
            Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
            Value::Object(o) => o.get(seg),
            _ => None,
        })
}

fn fill(template: &Value, prompt: &str, model: &str, max_tokens: u32) -> Value {
    match template {
        Value::String(s) => match s.as_str() {
            "{prompt}" => Value::String(prompt.to_string()),
            "{model}" => Value::String(model.to_string()),
            "{temperature}" => json!(0.0),
            "{max_tokens}" => json!(max_tokens),
            other => Value::String(other.replace("{prompt}", prompt).replace("{model}", model)),
        },
        Value::Array(a) => Value::Array(a.iter().map(|x| fill(x, prompt, model, max_tokens)).collect()),
        Value::Object(o) => Value::Object(
            o.iter()
                .map(|(k, x)| (k.clone(), fill(x, prompt, model, max_tokens)))
                .collect(),
        ),
        other => other.clone(),
    }
}

pub struct HttpBackend {
    model_id: String,
    endpoint: HttpEndpoint,
    headers: Vec<(String, String)>,
    transport: Arc<dyn Transport>,
}

impl HttpBackend {
    /// Resolves the API key from the environment now, so a missing variable
    /// fails at startup rather than on the first request.
    pub fn new(
        model_id: impl Into<String>,
        endpoint: HttpEndpoint,
        transport: Arc<dyn Transport>,
    ) -> Result<Self> {
        let mut headers = Vec::new();
        if let Some(var) = &endpoint.auth_env {
            let key = std::env::var(var).map_err(|_| Error::MissingEnv(var.clone()))?;
            headers.push((
                endpoint.auth_header.clone(),
                format!("{}{}", endpoint.auth_prefix, key),
            ));
        }
        Ok(HttpBackend {
            model_id: model_id.into(),
            endpoint,
            headers,
            transport,
        })
    }

    pub fn source(&self) -> JudgmentSource {
        match self.endpoint.response {
            ResponseMapping::GeneratedTokens { .. } => JudgmentSource::ApiLogprob,
            ResponseMapping::TwoLogits { .. } => JudgmentSource::LocalLogits,
        }
    }

    /// One request, no retries.
    pub fn query(&self, t: &PromptTemplate, e: &Example) -> Result<Judgment> {
        let prompt = render_prompt(t, e)?;
        let body = fill(&self.endpoint.request, &prompt, &self.model_id, 2);
        let resp = self
            .transport
            .post_json(
                &self.endpoint.url,
                &self.headers,
                &body,
                Duration::from_secs(self.endpoint.timeout_secs),
            )
            .map_err(|err| Error::Provider {
                model_id: self.model_id.clone(),
                message: err.to_string(),
            })?;
        let unparseable = |raw: String| Error::Unparseable {
            model_id: self.model_id.clone(),
            raw,
        };
        let (p, raw_token) = match &self.endpoint.response {
            ResponseMapping::GeneratedTokens {
                tokens_path,
                token_field,
                logprob_field,
            } => {
                let arr = lookup(&resp, tokens_path)
                    .and_then(Value::as_array)
                    .ok_or_else(|| unparseable(resp.to_string()))?;
                let tokens: Vec<(String, f64)> = arr
                    .iter()
                    .take(2)
                    .filter_map(|item| {
                        let tok = item.get(token_field)?.as_str()?.to_string();
                        let lp = item.get(logprob_field)?.as_f64()?;
                        Some((tok, lp))
                    })
                    .collect();
                probability_from_generated_tokens(&tokens).map_err(|err| match err {
                    Error::Unparseable { raw, .. } => unparseable(raw),
                    other => other,
                })?
            }
            ResponseMapping::TwoLogits {
                logit_zero_path,
                logit_one_path,
            } => {
                let get = |p: &str| lookup(&resp, p).and_then(Value::as_f64);
                let (Some(z), Some(o)) = (get(logit_zero_path), get(logit_one_path)) else {
                    return Err(unparseable(resp.to_string()));
                };
                let p = probability_from_two_logits(z, o)?;
                (p, if o > z { "1" } else { "0" }.to_string())
            }
        };
        Ok(Judgment {
            example_id: e.id.clone(),
            model_id: self.model_id.clone(),
            prompt_id: t.id.clone(),
            p_consistent: p,
            raw_token,
            source: self.source(),
        })
    }
}
