//! LLM judges: prompt templates, probability extraction, a deterministic mock,
//! an HTTP adapter, and a disk cache keyed on example content.

use serde::{Deserialize, Serialize};

use crate::dataset::{Example, Label};
use crate::error::{Error, Result};

pub mod cache;
pub mod extract;
pub mod http;
pub mod mock;
pub mod runner;

pub use cache::{cache_key, CacheRecord, JudgmentCache};
pub use extract::{probability_from_generated_tokens, probability_from_two_logits};
pub use http::{HttpBackend, HttpEndpoint, ResponseMapping, Transport, TransportError};
pub use mock::{mock_judge, MockBackend};
pub use runner::{annotate, FailedJudgment, JudgmentRecord, JudgmentStore, Provider};

pub const GROUNDING: &str = "{grounding}";
pub const GENERATED_TEXT: &str = "{generated_text}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub template: String,
    pub terminology: String,
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        template: impl Into<String>,
        terminology: impl Into<String>,
    ) -> Result<Self> {
        let t = PromptTemplate {
            id: id.into(),
            template: template.into(),
            terminology: terminology.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for ph in [GROUNDING, GENERATED_TEXT] {
            if self.template.matches(ph).count() != 1 {
                return Err(Error::Template {
                    template: self.id.clone(),
                    placeholder: ph,
                });
            }
        }
        let rest = self.template.replace(GROUNDING, "").replace(GENERATED_TEXT, "");
        if !rest.contains('0') || !rest.contains('1') {
            return Err(Error::invalid(format!(
                "template {:?} must ask for a single-token answer 0 or 1",
                self.id
            )));
        }
        Ok(())
    }
}

/// Substitute both placeholders in one pass, so placeholder-like text inside
/// the example is left alone.
pub fn render_prompt(t: &PromptTemplate, e: &Example) -> Result<String> {
    t.validate()?;
    let g = t.template.find(GROUNDING).expect("validated");
    let h = t.template.find(GENERATED_TEXT).expect("validated");
    let mut spans = [
        (g, GROUNDING.len(), e.grounding.as_str()),
        (h, GENERATED_TEXT.len(), e.generated_text.as_str()),
    ];
    spans.sort_by_key(|s| s.0);
    let mut out = String::with_capacity(t.template.len() + e.grounding.len() + e.generated_text.len());
    let mut pos = 0;
    for (start, len, value) in spans {
        out.push_str(&t.template[pos..start]);
        out.push_str(value);
        pos = start + len;
    }
    out.push_str(&t.template[pos..]);
    Ok(out)
}

/// Four zero-shot templates, one per terminology.
pub fn default_templates() -> Vec<PromptTemplate> {
    let raw = [
        (
            "premise-hypothesis",
            "premise/hypothesis",
            "Premise: {grounding}\nHypothesis: {generated_text}\n\
             Is the hypothesis entailed by the premise? Answer with a single digit: \
             1 if it is entailed, 0 if it is not.\nAnswer:",
        ),
        (
            "document-statement",
            "document/statement",
            "Document: {grounding}\nStatement: {generated_text}\n\
             Is every part of the statement supported by the document? \
             Reply 1 for yes or 0 for no, and nothing else.\nReply:",
        ),
        (
            "grounding-generated",
            "grounding/generated text",
            "Grounding: {grounding}\nGenerated text: {generated_text}\n\
             Output 1 if the generated text is faithful to the grounding and 0 if it \
             contains any unsupported or contradicting information.\nOutput:",
        ),
        (
            "factual-consistency",
            "factual consistency question",
            "Source text:\n{grounding}\n\nClaim:\n{generated_text}\n\n\
             Is the claim factually consistent with the source text? \
             Answer 1 (consistent) or 0 (inconsistent).\nAnswer:",
        ),
    ];
    raw.into_iter()
        .map(|(id, term, t)| PromptTemplate::new(id, t, term).expect("built-in template"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgmentSource {
    ApiLogprob,
    LocalLogits,
    Mock,
}

/// `P(consistent)` from one (model, prompt) pair on one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub example_id: String,
    pub model_id: String,
    pub prompt_id: String,
    pub p_consistent: f64,
    pub raw_token: String,
    pub source: JudgmentSource,
}

impl Judgment {
    pub fn label(&self) -> Label {
        Label::from_bool(self.p_consistent > 0.5)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_consistent) {
            return Err(Error::invalid(format!(
                "p_consistent {} outside [0, 1]",
                self.p_consistent
            )));
        }
        if self.raw_token != "0" && self.raw_token != "1" {
            return Err(Error::invalid(format!("raw token {:?}", self.raw_token)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// First backoff; doubles on every further retry.
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    Mock {
        noise: f64,
        #[serde(default = "default_sharpness")]
        sharpness: f64,
        #[serde(default)]
        seed: u64,
    },
    Http(HttpEndpoint),
}

fn default_sharpness() -> f64 {
    mock::DEFAULT_SHARPNESS
}

fn zero() -> f64 {
    0.0
}

fn two() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub model_id: String,
    pub endpoint: Endpoint,
    #[serde(default = "zero")]
    pub temperature: f64,
    #[serde(default = "two")]
    pub max_new_tokens: u32,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Requests per second; unlimited when absent.
    #[serde(default)]
    pub rate_limit: Option<f64>,
}

impl ProviderConfig {
    pub fn mock(model_id: impl Into<String>, noise: f64, sharpness: f64, seed: u64) -> Self {
        ProviderConfig {
            model_id: model_id.into(),
            endpoint: Endpoint::Mock {
                noise,
                sharpness,
                seed,
            },
            temperature: 0.0,
            max_new_tokens: 2,
            retry: RetryPolicy::default(),
            rate_limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.is_empty() {
            return Err(Error::invalid("provider model_id is empty"));
        }
        if self.temperature != 0.0 {
            return Err(Error::invalid(format!(
                "{}: temperature must be 0.0, got {}",
                self.model_id, self.temperature
            )));
        }
        if self.max_new_tokens != 2 {
            return Err(Error::invalid(format!(
                "{}: max_new_tokens must be 2, got {}",
                self.model_id, self.max_new_tokens
            )));
        }
        if let Some(r) = self.rate_limit {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid(format!("{}: rate limit {r}", self.model_id)));
            }
        }
        if let Endpoint::Mock {
            noise, sharpness, ..
        } = &self.endpoint
        {
            mock::check_params(*noise, *sharpness)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Example {
        Example::new("e1", "d", "The cat sat.", "A cat sat down.", Label::Consistent)
    }

    #[test]
    fn renders_both_placeholders() {
        let t = PromptTemplate::new(
            "t",
            "Doc: {grounding}\nClaim: {generated_text}\nAnswer 0 or 1:",
            "doc",
        )
        .unwrap();
        let s = render_prompt(&t, &example()).unwrap();
        assert_eq!(s, "Doc: The cat sat.\nClaim: A cat sat down.\nAnswer 0 or 1:");
        assert_eq!(s, render_prompt(&t, &example()).unwrap());
    }

    #[test]
    fn missing_placeholder_rejected() {
        let err = PromptTemplate::new("t", "Claim: {generated_text} 0 or 1", "x").unwrap_err();
        assert!(matches!(err, Error::Template { placeholder: GROUNDING, .. }));
        assert!(PromptTemplate::new("t", "{grounding}{grounding}{generated_text} 0/1", "x").is_err());
    }

    #[test]
    fn placeholder_text_inside_example_is_literal() {
        let t = PromptTemplate::new("t", "{generated_text}|{grounding} 0/1", "x").unwrap();
        let mut e = example();
        e.grounding = "{generated_text}".into();
        assert_eq!(render_prompt(&t, &e).unwrap(), "A cat sat down.|{generated_text} 0/1");
    }

    #[test]
    fn defaults_are_valid_and_distinct() {
        let ts = default_templates();
        assert_eq!(ts.len(), 4);
        let mut ids: Vec<_> = ts.iter().map(|t| t.id.as_str()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn config_pins_decoding() {
        let mut c = ProviderConfig::mock("m", 0.1, 4.0, 0);
        assert!(c.validate().is_ok());
        c.temperature = 0.7;
        assert!(c.validate().is_err());
        c.temperature = 0.0;
        c.max_new_tokens = 16;
        assert!(c.validate().is_err());
    }
}
