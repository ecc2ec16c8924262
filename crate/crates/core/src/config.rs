//! Run configuration, loaded from TOML.
//!
//! Relative paths are resolved against the directory of the config file.
//! The resolved config is written into every output directory together with
//! a content hash of the input files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flagging::BinSpec;
use crate::providers::mock::{check_params, DEFAULT_SHARPNESS};
use crate::providers::runner::DEFAULT_MAX_IN_FLIGHT;
use crate::providers::{default_templates, PromptTemplate, ProviderConfig};
use crate::report;
use crate::simulate::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Size of the full dataset the sample was drawn from.
    #[serde(default)]
    pub population_size: Option<u64>,
    /// Review-service export holding expert resolutions for this dataset.
    #[serde(default)]
    pub expert_labels: Option<PathBuf>,
}

/// Roster used in place of the configured providers under `--mock`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockRoster {
    pub models: usize,
    pub noise: f64,
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for MockRoster {
    fn default() -> Self {
        MockRoster {
            models: 4,
            noise: 0.15,
            sharpness: DEFAULT_SHARPNESS,
            seed: 0,
        }
    }
}

impl MockRoster {
    pub fn providers(&self) -> Vec<ProviderConfig> {
        (0..self.models)
            .map(|m| ProviderConfig::mock(format!("mock-{m}"), self.noise, self.sharpness, self.seed))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorToken {
    pub id: String,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    pub bind: String,
    /// Session logs live here; defaults to `<out>/review`.
    pub data_dir: Option<PathBuf>,
    /// Bearer token for session management (create, reconcile, close).
    pub admin_token: String,
    pub annotators: Vec<AnnotatorToken>,
    /// Show the source dataset name in task payloads.
    pub show_dataset: bool,
    /// Allow sessions with more than two annotators. Items then resolve
    /// automatically only when every annotator agrees.
    pub allow_more_annotators: bool,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        ReviewConfig {
            bind: "127.0.0.1:8787".into(),
            data_dir: None,
            admin_token: "admin-token".into(),
            annotators: vec![
                AnnotatorToken {
                    id: "expert-a".into(),
                    token: "token-a".into(),
                },
                AnnotatorToken {
                    id: "expert-b".into(),
                    token: "token-b".into(),
                },
            ],
            show_dataset: false,
            allow_more_annotators: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    /// Flag threshold for reports, review intake and repairs.
    pub tau: f64,
    pub tau_grid: Vec<f64>,
    pub alpha: f64,
    pub bootstrap_resamples: usize,
    pub bins: BinSpec,
    pub datasets: Vec<DatasetConfig>,
    pub providers: Vec<ProviderConfig>,
    /// Prompt templates; the built-in set when empty.
    pub templates: Vec<PromptTemplate>,
    pub mock: MockRoster,
    pub review: ReviewConfig,
    pub simulate: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            cache_dir: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            tau: 0.5,
            tau_grid: vec![0.75, 0.9, 0.95, 0.99],
            alpha: 0.05,
            bootstrap_resamples: 100,
            bins: BinSpec::default(),
            datasets: Vec::new(),
            providers: Vec::new(),
            templates: Vec::new(),
            mock: MockRoster::default(),
            review: ReviewConfig::default(),
            simulate: SimConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    /// Parse, resolve relative paths against the file's directory, validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::from_toml(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::invalid(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.out);
        if let Some(c) = &mut self.cache_dir {
            resolve(base, c);
        }
        if let Some(d) = &mut self.review.data_dir {
            resolve(base, d);
        }
        for d in &mut self.datasets {
            resolve(base, &mut d.path);
            if let Some(e) = &mut d.expert_labels {
                resolve(base, e);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau < 0.5 {
            return Err(Error::invalid(format!("tau {} below 0.5", self.tau)));
        }
        if let Some(t) = self.tau_grid.iter().find(|t| t.is_nan() || **t < 0.5) {
            return Err(Error::invalid(format!("tau_grid value {t} below 0.5")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::invalid("bootstrap_resamples must be positive"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::invalid("max_in_flight must be positive"));
        }
        self.bins.validate()?;
        let mut names = std::collections::HashSet::new();
        for p in &self.providers {
            p.validate()?;
            if !names.insert(p.model_id.as_str()) {
                return Err(Error::DuplicateId(format!("provider {}", p.model_id)));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for t in &self.templates {
            t.validate()?;
            if !ids.insert(t.id.as_str()) {
                return Err(Error::DuplicateId(format!("template {}", t.id)));
            }
        }
        if self.mock.models == 0 {
            return Err(Error::invalid("mock roster needs at least one model"));
        }
        check_params(self.mock.noise, self.mock.sharpness)?;
        let mut tokens = std::collections::HashSet::new();
        for a in &self.review.annotators {
            if a.token.is_empty() || a.token == self.review.admin_token || !tokens.insert(a.token.as_str()) {
                return Err(Error::invalid(format!("annotator {} needs a distinct token", a.id)));
            }
        }
        Ok(())
    }

    pub fn templates(&self) -> Vec<PromptTemplate> {
        if self.templates.is_empty() {
            default_templates()
        } else {
            self.templates.clone()
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    pub fn review_dir(&self) -> PathBuf {
        self.review.data_dir.clone().unwrap_or_else(|| self.out.join("review"))
    }

    /// Where the review service writes the export for a session.
    pub fn review_export(&self, session_id: &str) -> PathBuf {
        self.review_dir().join("exports").join(format!("{session_id}.jsonl"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(format!("config: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    /// SHA-256 over the per-file digests, in order.
    pub input_hash: String,
    pub inputs: Vec<InputDigest>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Write the resolved `config.toml` and `<stage>.manifest.json` into `dir`.
pub fn write_manifest(dir: &Path, stage: &str, cfg: &RunConfig, inputs: &[PathBuf]) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let inputs = inputs
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.clone(),
                sha256: file_digest(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut h = Sha256::new();
    for d in &inputs {
        h.update(d.sha256.as_bytes());
    }
    let manifest = RunManifest {
        stage: stage.to_string(),
        input_hash: hex::encode(h.finalize()),
        inputs,
    };
    report::write_json(&manifest, &dir.join(format!("{stage}.manifest.json")))?;
    Ok(manifest)
}
