//! Pipeline configuration: one TOML file, every field optional.
//!
//! Environment variables of the form `TUSKMARKS__SECTION__KEY=value` override
//! the file (`TUSKMARKS__SERVICE__PORT=8080`, `TUSKMARKS__SEED=7`). Values are
//! read as TOML scalars, falling back to plain strings. Relative paths resolve
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisConfig;
use crate::annotate::{BatchOptions, ProtocolOptions};
use crate::geometry::PostprocessConfig;
use crate::metrics::CerOptions;
use crate::propagation::PropagationConfig;

pub const ENV_PREFIX: &str = "TUSKMARKS__";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
    #[error("a seed is required for this command; set `seed` in the config or pass --seed")]
    MissingSeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub catalog: PathBuf,
    pub images: PathBuf,
    pub manifest: PathBuf,
    pub detections: PathBuf,
    pub embeddings: PathBuf,
    pub reports: PathBuf,
    pub models: PathBuf,
    /// Directory of prompt templates; the built-in wording is used when unset.
    pub templates: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            catalog: "catalog".into(),
            images: "images".into(),
            manifest: "manifest.tsv".into(),
            detections: "detections.tsv".into(),
            embeddings: "embeddings.jsonl".into(),
            reports: "reports".into(),
            models: "models".into(),
            templates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub coverage_threshold: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { coverage_threshold: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub fraction: f64,
    pub minimum: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            minimum: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    pub backend: BackendKind,
    /// Scripted responses for the mock backend.
    pub transcript: Option<PathBuf>,
    pub url: Option<String>,
    pub concurrency: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub call_timeout_ms: u64,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        let p = ProtocolOptions::default();
        Self {
            backend: BackendKind::Mock,
            transcript: None,
            url: None,
            concurrency: BatchOptions::default().concurrency,
            retries: p.retries,
            backoff_ms: p.backoff_ms,
            call_timeout_ms: p.call_timeout_ms,
        }
    }
}

impl AnnotationConfig {
    pub fn batch_options(&self, force: bool) -> BatchOptions {
        BatchOptions {
            concurrency: self.concurrency,
            force,
            protocol: ProtocolOptions {
                retries: self.retries,
                backoff_ms: self.backoff_ms,
                call_timeout_ms: self.call_timeout_ms,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Directory of the review UI bundle, served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8377,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub postprocess: PostprocessConfig,
    pub evaluation: EvaluationConfig,
    pub sampling: SamplingConfig,
    pub propagation: PropagationConfig,
    pub annotation: AnnotationConfig,
    pub analysis: AnalysisConfig,
    pub metrics: CerOptions,
    pub service: ServiceConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().ok_or_else(|| ConfigError::Invalid("empty override key".into()))?;
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("override {} crosses a non-table value", path.join("."))))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses config text, applies overrides, and validates.
    pub fn from_toml_with_env<I>(text: &str, base_dir: &Path, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut overrides: Vec<(Vec<String>, String)> = env
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix(ENV_PREFIX)?;
                Some((rest.split("__").map(str::to_lowercase).collect(), v))
            })
            .collect();
        overrides.sort();
        for (path, raw) in overrides {
            apply_override(&mut table, &path, env_value(&raw))?;
        }
        let mut cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults only if `None`) with process environment
    /// overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let (text, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (text, base)
            }
            None => (String::new(), PathBuf::from(".")),
        };
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Self::from_toml_with_env(&text, &base, std::env::vars())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn require_seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or(ConfigError::MissingSeed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |name: &str, v: f64, lo_open: bool| -> Result<(), ConfigError> {
            let ok = if lo_open { v > 0.0 && v <= 1.0 } else { (0.0..=1.0).contains(&v) };
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} = {v} is outside {}0, 1]", if lo_open { "(" } else { "[" })))
            }
        };
        let pp = &self.postprocess;
        unit("postprocess.dedup_iou", pp.dedup_iou, true)?;
        unit("postprocess.exterior_coverage", pp.exterior_coverage, true)?;
        let m = &pp.merge;
        if !(m.min_size_ratio > 0.0 && m.min_size_ratio <= 1.0 && m.max_size_ratio >= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "postprocess.merge size ratios [{}, {}] must bracket 1",
                m.min_size_ratio, m.max_size_ratio
            )));
        }
        if !(m.gap_factor >= 0.0 && m.collinearity_factor >= 0.0) {
            return Err(ConfigError::Invalid("postprocess.merge factors must be non-negative".into()));
        }
        unit("evaluation.coverage_threshold", self.evaluation.coverage_threshold, true)?;
        unit("sampling.fraction", self.sampling.fraction, true)?;
        self.propagation
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("propagation: {e}")))?;
        self.analysis
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("analysis: {e}")))?;
        let a = &self.annotation;
        if a.concurrency == 0 {
            return Err(ConfigError::Invalid("annotation.concurrency must be at least 1".into()));
        }
        if a.backend == BackendKind::Http && a.url.is_none() {
            return Err(ConfigError::Invalid("annotation.url is required for the http backend".into()));
        }
        Ok(())
    }
}
