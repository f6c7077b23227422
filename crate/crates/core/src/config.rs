//! Strict TOML run configuration.
//!
//! Every section is optional and falls back to the built-in defaults;
//! unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::guidance::ReplayConfig;
use crate::mmpl::{AnchorRule, ChainMode, GenerationConfig};
use crate::resources::MemoryFixture;
use crate::stream::InferenceCostModel;
use crate::train::{TrainCluster, TrainCostModel, WorkModel};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    pub total_segments: u32,
    pub frames_per_segment: u32,
    /// `shifted`, `midpoint` or `custom` (with `t_a`, `t_b`, `t_c`).
    pub anchor_rule: String,
    pub t_a: Option<u32>,
    pub t_b: Option<u32>,
    pub t_c: Option<u32>,
    /// `terminal` or `minmem`.
    pub chain_mode: String,
    pub include_loop_tasks: bool,
    pub plan_waits_for_reencode: bool,
    pub populate_b_waits_for_a: bool,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            total_segments: g.total_segments,
            frames_per_segment: g.frames_per_segment,
            anchor_rule: "shifted".into(),
            t_a: None,
            t_b: None,
            t_c: None,
            chain_mode: "terminal".into(),
            include_loop_tasks: g.include_loop_tasks,
            plan_waits_for_reencode: g.plan_waits_for_reencode,
            populate_b_waits_for_a: g.populate_b_waits_for_a,
        }
    }
}

pub fn parse_chain(name: &str) -> Option<ChainMode> {
    match name {
        "terminal" => Some(ChainMode::TerminalChain),
        "minmem" => Some(ChainMode::MinMemoryPeak),
        _ => None,
    }
}

impl GenerationSection {
    pub fn to_config(&self) -> Result<GenerationConfig, ConfigError> {
        let invalid = |field: &str, message: String| ConfigError::Validation {
            field: format!("generation.{field}"),
            message,
        };
        let anchor_rule = match self.anchor_rule.as_str() {
            "shifted" => AnchorRule::ShiftedMidpoint,
            "midpoint" => AnchorRule::Midpoint,
            "custom" => match (self.t_a, self.t_b, self.t_c) {
                (Some(t_a), Some(t_b), Some(t_c)) => AnchorRule::Custom { t_a, t_b, t_c },
                _ => return Err(invalid("anchor_rule", "custom anchors need t_a, t_b and t_c".into())),
            },
            other => return Err(invalid("anchor_rule", format!("unknown rule {other:?}"))),
        };
        let chain_mode = parse_chain(&self.chain_mode)
            .ok_or_else(|| invalid("chain_mode", format!("expected terminal or minmem, got {:?}", self.chain_mode)))?;
        if self.total_segments == 0 {
            return Err(invalid("total_segments", "must be at least 1".into()));
        }
        if self.frames_per_segment < 4 {
            return Err(invalid("frames_per_segment", format!("must be at least 4, got {}", self.frames_per_segment)));
        }
        let config = GenerationConfig {
            total_segments: self.total_segments,
            frames_per_segment: self.frames_per_segment,
            anchor_rule,
            chain_mode,
            include_loop_tasks: self.include_loop_tasks,
            plan_waits_for_reencode: self.plan_waits_for_reencode,
            populate_b_waits_for_a: self.populate_b_waits_for_a,
        };
        config.validate().map_err(|e| invalid("anchor_rule", e.to_string()))?;
        Ok(config)
    }
}

/// File layout as parsed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub name: Option<String>,
    pub generation: GenerationSection,
    pub inference: InferenceCostModel,
    pub train: TrainCostModel,
    pub cluster: TrainCluster,
    pub work: WorkModel,
    pub memory: Option<MemoryFixture>,
    pub replay: ReplayConfig,
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub generation: GenerationConfig,
    pub inference: InferenceCostModel,
    pub train: TrainCostModel,
    pub cluster: TrainCluster,
    pub work: WorkModel,
    pub memory: Option<MemoryFixture>,
    pub replay: ReplayConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        FileConfig::default().validate().expect("defaults are valid")
    }
}

fn field_error(section: &str, e: impl std::fmt::Display) -> ConfigError {
    let text = e.to_string();
    let (field, message) = match text.split_once(" must be ") {
        Some((f, rest)) => (format!("{section}.{f}"), format!("must be {rest}")),
        None => (section.to_string(), text),
    };
    ConfigError::Validation { field, message }
}

impl FileConfig {
    pub fn validate(self) -> Result<RunConfig, ConfigError> {
        let generation = self.generation.to_config()?;
        self.inference.validate().map_err(|e| field_error("inference", e))?;
        self.train.validate().map_err(|e| field_error("train", e))?;
        self.cluster.validate().map_err(|e| field_error("cluster", e))?;
        self.work.validate().map_err(|e| field_error("work", e))?;
        self.replay.speeds.validate().map_err(|e| field_error("replay.speeds", e))?;
        if self.replay.tick_ms == 0 {
            return Err(ConfigError::Validation {
                field: "replay.tick_ms".into(),
                message: "must be >= 1".into(),
            });
        }
        if let Some(m) = &self.memory {
            m.colocated().map_err(|e| field_error("memory", e))?;
            m.disaggregated().map_err(|e| field_error("memory", e))?;
        }
        Ok(RunConfig {
            name: self.name.unwrap_or_else(|| "default".into()),
            generation,
            inference: self.inference,
            train: self.train,
            cluster: self.cluster,
            work: self.work,
            memory: self.memory,
            replay: self.replay,
        })
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    file.validate()
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}
