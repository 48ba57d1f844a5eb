//! Run configuration (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{ChangepointParams, CiParams, Dimension};
use crate::ngram::SmoothingSpec;
use crate::scoring::Aggregation;
use crate::stimuli::ImportFormat;

pub const SCHEMA_VERSION: u32 = 1;
pub const ENV_OUT_DIR: &str = "SVA_OUT_DIR";
pub const ENV_PROVIDER_CMD: &str = "SVA_PROVIDER_CMD";
/// Reserved phase source naming the gold grammatical decision.
pub const GOLD_SOURCE: &str = "gold";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub stimuli: StimuliConfig,
    #[serde(default, rename = "oracle", skip_serializing_if = "Vec::is_empty")]
    pub oracles: Vec<OracleConfig>,
    #[serde(default, rename = "provider", skip_serializing_if = "Vec::is_empty")]
    pub providers: Vec<ProviderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade: Option<CascadeConfig>,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StimuliConfig {
    /// Template file; the bundled set when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    /// Skip templates entirely (imports only).
    pub use_templates: bool,
    pub include_simple: bool,
    /// Restrict to these verb lemmas; empty keeps all.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub verbs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub imports: Vec<ImportConfig>,
}

impl Default for StimuliConfig {
    fn default() -> Self {
        StimuliConfig {
            templates: None,
            use_templates: true,
            include_simple: true,
            verbs: Vec::new(),
            imports: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportConfig {
    pub path: PathBuf,
    pub format: ImportFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub name: String,
    pub order: usize,
    pub index: IndexSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<SmoothingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IndexSource {
    /// Unigram verb-form counts shipped with the crate.
    PileFixture,
    /// Plain-text corpus, one document per line.
    Corpus { path: PathBuf },
    /// Agreement corpus generated from the template nouns and verbs.
    Synthetic,
    /// Prebuilt index file.
    Ngix { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub model: String,
    pub size: String,
    pub seeds: Vec<i64>,
    /// Checkpoint steps; when empty the provider is asked for its list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<String>,
}

/// Pseudo checkpoints whose decisions are borrowed from heuristic sources,
/// switching source at given steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    pub model: String,
    #[serde(default = "default_cascade_size")]
    pub size: String,
    #[serde(default)]
    pub seed: i64,
    pub steps: Vec<u64>,
    #[serde(rename = "phase")]
    pub phases: Vec<CascadePhase>,
}

fn default_cascade_size() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadePhase {
    pub from_step: u64,
    /// Oracle name, or `gold`.
    pub source: String,
}

impl CascadeConfig {
    pub fn source_at(&self, step: u64) -> Option<&str> {
        self.phases
            .iter()
            .filter(|p| p.from_step <= step)
            .max_by_key(|p| p.from_step)
            .map(|p| p.source.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub aggregation: Aggregation,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    /// Provider processes alive at once.
    pub max_providers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider_cmd: Option<String>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            aggregation: Aggregation::Sum,
            jobs: 0,
            max_providers: 1,
            provider_cmd: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeSignal {
    /// Joint segmentation of heuristic alignment series.
    #[default]
    Alignment,
    /// Joint segmentation of per-condition accuracy series.
    Conditions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub dims: Vec<Dimension>,
    /// Key identifying one training trajectory. Dropping `seed` pools seeds.
    pub trajectory_dims: Vec<Dimension>,
    pub ci: CiParams,
    pub changepoint: ChangepointParams,
    pub change_signal: ChangeSignal,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            dims: vec![Dimension::Scorer, Dimension::Condition],
            trajectory_dims: vec![Dimension::Model, Dimension::Size],
            ci: CiParams::default(),
            changepoint: ChangepointParams::default(),
            change_signal: ChangeSignal::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub log_x: bool,
    /// Also emit one figure per verb class.
    pub per_class: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { log_x: true, per_class: true }
    }
}

impl RunConfig {
    /// Minimal config with default sections.
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            output_dir: output_dir.into(),
            stimuli: StimuliConfig::default(),
            oracles: Vec::new(),
            providers: Vec::new(),
            cascade: None,
            scoring: ScoringConfig::default(),
            analysis: AnalysisConfig::default(),
            report: ReportConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let value: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_integer()) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(ConfigError::Schema { found: v.max(0) as u32 }),
            None => return Err(ConfigError::Parse("missing schema_version".into())),
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load, resolve relative paths against the file's directory, validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(t) = self.stimuli.templates.as_mut() {
            fix(t);
        }
        for i in &mut self.stimuli.imports {
            fix(&mut i.path);
        }
        for o in &mut self.oracles {
            match &mut o.index {
                IndexSource::Corpus { path } | IndexSource::Ngix { path } => fix(path),
                IndexSource::PileFixture | IndexSource::Synthetic => {}
            }
        }
    }

    /// Apply `SVA_OUT_DIR` and `SVA_PROVIDER_CMD`.
    pub fn apply_env(&mut self) {
        self.apply_overrides(
            std::env::var_os(ENV_OUT_DIR).map(PathBuf::from),
            std::env::var(ENV_PROVIDER_CMD).ok(),
        );
    }

    pub fn apply_overrides(&mut self, out_dir: Option<PathBuf>, provider_cmd: Option<String>) {
        if let Some(d) = out_dir {
            self.output_dir = d;
        }
        if let Some(c) = provider_cmd {
            self.scoring.provider_cmd = Some(c);
        }
    }

    pub fn has_stepped_scorers(&self) -> bool {
        !self.providers.is_empty() || self.cascade.is_some()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema { found: self.schema_version });
        }
        if self.oracles.is_empty() && self.providers.is_empty() && self.cascade.is_none() {
            return bad("at least one scorer (oracle, provider or cascade) is required".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output_dir is empty".into());
        }
        if !self.stimuli.use_templates && self.stimuli.imports.is_empty() {
            return bad("no stimulus source: templates disabled and no imports".into());
        }
        let mut names = BTreeSet::new();
        for o in &self.oracles {
            if o.name.is_empty() || o.name == GOLD_SOURCE {
                return bad(format!("invalid oracle name {:?}", o.name));
            }
            if !names.insert(o.name.as_str()) {
                return bad(format!("duplicate oracle name {:?}", o.name));
            }
            if o.order == 0 {
                return bad(format!("oracle {}: order must be >= 1", o.name));
            }
            if o.index == IndexSource::PileFixture && o.order != 1 {
                return bad(format!("oracle {}: the Pile fixture only has unigram counts", o.name));
            }
            if let Some(s) = &o.smoothing {
                s.validate().map_err(|e| ConfigError::Invalid(format!("oracle {}: {e}", o.name)))?;
            }
        }
        for p in &self.providers {
            if p.model.is_empty() || p.seeds.is_empty() {
                return bad(format!("provider {:?}: model and at least one seed required", p.model));
            }
        }
        if let Some(c) = &self.cascade {
            if c.steps.is_empty() || c.phases.is_empty() {
                return bad("cascade needs steps and phases".into());
            }
            for p in &c.phases {
                if p.source != GOLD_SOURCE && !names.contains(p.source.as_str()) {
                    return bad(format!("cascade phase source {:?} is not an oracle", p.source));
                }
            }
            if let Some(s) = c.steps.iter().find(|s| c.source_at(**s).is_none()) {
                return bad(format!("cascade step {s} precedes the first phase"));
            }
        }
        if self.scoring.max_providers == 0 {
            return bad("scoring.max_providers must be >= 1".into());
        }
        if self.analysis.dims.is_empty() {
            return bad("analysis.dims is empty".into());
        }
        if self.analysis.trajectory_dims.iter().any(|d| matches!(d, Dimension::Step | Dimension::Condition)) {
            return bad("trajectory_dims may not contain step or condition".into());
        }
        self.analysis.ci.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.analysis.changepoint.min_segment == 0 {
            return bad("changepoint.min_segment must be >= 1".into());
        }
        Ok(())
    }
}
