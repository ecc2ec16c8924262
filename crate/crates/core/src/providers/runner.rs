//! Cached, retried, rate-limited judging and batch annotation.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example, Label};
use crate::error::{Error, Result};
use crate::providers::cache::{cache_key, JudgmentCache};
use crate::providers::http::{HttpBackend, Transport};
use crate::providers::mock::MockBackend;
use crate::report;
use crate::providers::{Endpoint, Judgment, JudgmentSource, PromptTemplate, ProviderConfig, RetryPolicy};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

enum Backend {
    Mock(MockBackend),
    Http(HttpBackend),
}

impl Backend {
    fn source(&self) -> JudgmentSource {
        match self {
            Backend::Mock(_) => JudgmentSource::Mock,
            Backend::Http(h) => h.source(),
        }
    }

    fn query(&self, t: &PromptTemplate, e: &Example) -> Result<Judgment> {
        match self {
            Backend::Mock(m) => m.judge(t, e),
            Backend::Http(h) => h.query(t, e),
        }
    }
}

struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(per_sec: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / per_sec),
            next: Mutex::new(Instant::now()),
        }
    }

    fn wait(&self) {
        let slot = {
            let mut next = self.next.lock();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

/// A configured judge: backend plus cache, retry policy and rate limit.
pub struct Provider {
    model_id: String,
    backend: Backend,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    cache: Option<Arc<JudgmentCache>>,
    calls: AtomicUsize,
}

impl Provider {
    /// `truth` is required for mock endpoints and ignored otherwise.
    pub fn from_config(
        cfg: &ProviderConfig,
        truth: Option<&HashMap<String, Label>>,
        transport: Arc<dyn Transport>,
        cache: Option<Arc<JudgmentCache>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let backend = match &cfg.endpoint {
            Endpoint::Mock {
                noise,
                sharpness,
                seed,
            } => {
                let truth = truth.ok_or_else(|| {
                    Error::invalid(format!("{}: mock provider needs a truth mask", cfg.model_id))
                })?;
                Backend::Mock(MockBackend::new(
                    cfg.model_id.clone(),
                    *noise,
                    *sharpness,
                    *seed,
                    truth.clone(),
                )?)
            }
            Endpoint::Http(ep) => {
                Backend::Http(HttpBackend::new(cfg.model_id.clone(), ep.clone(), transport)?)
            }
        };
        Ok(Provider {
            model_id: cfg.model_id.clone(),
            backend,
            retry: cfg.retry.clone(),
            limiter: cfg.rate_limit.map(RateLimiter::new),
            cache,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn mock(backend: MockBackend, cache: Option<Arc<JudgmentCache>>) -> Self {
        Provider {
            model_id: backend.model_id.clone(),
            backend: Backend::Mock(backend),
            retry: RetryPolicy::default(),
            limiter: None,
            cache,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Backend calls made so far (cache hits excluded).
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn judge(&self, t: &PromptTemplate, e: &Example) -> Result<Judgment> {
        let key = cache_key(&self.model_id, &t.id, e);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(Judgment {
                example_id: e.id.clone(),
                model_id: self.model_id.clone(),
                prompt_id: t.id.clone(),
                p_consistent: hit.p_consistent,
                raw_token: hit.raw_token,
                source: self.backend.source(),
            });
        }
        let mut backoff = Duration::from_millis(self.retry.initial_backoff_ms);
        let mut attempt = 0;
        loop {
            if let Some(l) = &self.limiter {
                l.wait();
            }
            self.calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.query(t, e) {
                Ok(j) => {
                    j.validate()?;
                    if let Some(c) = &self.cache {
                        c.insert(key, &j.model_id, &j.prompt_id, j.p_consistent, &j.raw_token)?;
                    }
                    return Ok(j);
                }
                Err(err @ (Error::Provider { .. } | Error::Unparseable { .. }))
                    if attempt < self.retry.max_retries =>
                {
                    tracing::debug!(model = %self.model_id, example = %e.id, %err, "retrying");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// A judgment that could not be obtained; never replaced by a made-up value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedJudgment {
    pub example_id: String,
    pub model_id: String,
    pub prompt_id: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JudgmentRecord {
    Ok(Judgment),
    Failed(FailedJudgment),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JudgmentStore {
    pub records: Vec<JudgmentRecord>,
}

impl JudgmentStore {
    pub fn judgments(&self) -> impl Iterator<Item = &Judgment> {
        self.records.iter().filter_map(|r| match r {
            JudgmentRecord::Ok(j) => Some(j),
            JudgmentRecord::Failed(_) => None,
        })
    }

    pub fn failures(&self) -> impl Iterator<Item = &FailedJudgment> {
        self.records.iter().filter_map(|r| match r {
            JudgmentRecord::Failed(f) => Some(f),
            JudgmentRecord::Ok(_) => None,
        })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        report::write_jsonl(&self.records, path)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Ok(JudgmentStore {
            records: report::read_jsonl(path)?,
        })
    }
}

/// Judge every example with every (provider, template) pair, at most
/// `max_in_flight` calls at a time. Output order is example-major, then
/// provider, then template.
pub fn annotate(
    providers: &[Provider],
    templates: &[PromptTemplate],
    dataset: &Dataset,
    max_in_flight: usize,
) -> Result<JudgmentStore> {
    let tasks: Vec<(&Example, &Provider, &PromptTemplate)> = dataset
        .iter()
        .flat_map(|e| {
            providers
                .iter()
                .flat_map(move |p| templates.iter().map(move |t| (e, p, t)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let records = pool.install(|| {
        tasks
            .par_iter()
            .map(|(e, p, t)| match p.judge(t, e) {
                Ok(j) => JudgmentRecord::Ok(j),
                Err(err) => {
                    let raw = match &err {
                        Error::Unparseable { raw, .. } => Some(raw.clone()),
                        _ => None,
                    };
                    JudgmentRecord::Failed(FailedJudgment {
                        example_id: e.id.clone(),
                        model_id: p.model_id.clone(),
                        prompt_id: t.id.clone(),
                        error: err.to_string(),
                        raw,
                    })
                }
            })
            .collect()
    });
    Ok(JudgmentStore { records })
}
