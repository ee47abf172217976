//! Experiment configuration: TOML with every default materialized,
//! `section.key=value` overrides, and a stable content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::{KdConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::flow::{EngineSpec, FlowNormalization};
use crate::ingest::SynthConfig;
use crate::metrics::ThresholdPolicy;
use crate::models::ArchConfig;
use crate::pipeline::Preprocessing;
use crate::preprocess::{AugmentConfig, NormStats, PipelineOrder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Manifest file, dataset directory, or folder-layout root.
    pub manifest: PathBuf,
    pub delta_t: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data/synth"),
            delta_t: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    /// `exact`, `classical` or `external:<command>`.
    pub engine: String,
    /// `per-image-max` or `fixed-cap:<pixels>`.
    pub normalization: String,
    pub pipeline: PipelineOrder,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            engine: "exact".into(),
            normalization: "per-image-max".into(),
            pipeline: PipelineOrder::RawFlow,
        }
    }
}

impl FlowSection {
    pub fn engine_spec(&self) -> Result<EngineSpec> {
        self.engine.parse()
    }

    pub fn normalization(&self) -> Result<FlowNormalization> {
        self.normalization.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub side: usize,
    pub max_rotation_deg: f32,
    pub scale_min: f32,
    pub scale_max: f32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let aug = AugmentConfig::default();
        let norm = NormStats::default();
        Self {
            side: aug.side,
            max_rotation_deg: aug.max_rotation_deg,
            scale_min: aug.scale_range.0,
            scale_max: aug.scale_range.1,
            mean: norm.mean,
            std: norm.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold_policy: ThresholdPolicy,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold_policy: ThresholdPolicy::DevEer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub dataset: DatasetSection,
    pub synth: SynthConfig,
    pub flow: FlowSection,
    pub preprocess: PreprocessSection,
    pub model: ArchConfig,
    pub train: TrainConfig,
    pub kd: KdConfig,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            dataset: DatasetSection::default(),
            synth: SynthConfig::default(),
            flow: FlowSection::default(),
            preprocess: PreprocessSection::default(),
            model: ArchConfig::default(),
            train: TrainConfig::default(),
            kd: KdConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.dataset.delta_t == 0 {
            return Err(Error::Config("dataset.delta_t must be at least 1".into()));
        }
        self.synth.validate()?;
        self.flow.engine_spec()?;
        self.flow.normalization()?;
        let p = &self.preprocess;
        if p.side == 0 {
            return Err(Error::Config("preprocess.side must be positive".into()));
        }
        if !(p.scale_min > 0.0 && p.scale_min <= p.scale_max) {
            return Err(Error::Config(format!(
                "preprocess.scale_min ({}) must be positive and at most scale_max ({})",
                p.scale_min, p.scale_max
            )));
        }
        if !p.max_rotation_deg.is_finite() || p.max_rotation_deg < 0.0 {
            return Err(Error::Config("preprocess.max_rotation_deg must be a non-negative number".into()));
        }
        if p.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("preprocess.std entries must be positive".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.kd.validate()?;
        Ok(())
    }

    /// Applies `section.key=value` (or top-level `key=value`). The value is
    /// read as a TOML literal, falling back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form section.key=value")))?;
        let path: Vec<&str> = path.trim().split('.').collect();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        for (i, key) in path.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("'{}' is not a section", path[..i].join("."))))?;
            if !table.contains_key(*key) {
                return Err(Error::Config(format!("unknown config key '{}'", path[..=i].join("."))));
            }
            node = table.get_mut(*key).expect("checked above");
        }
        *node = value;
        let updated: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override '{assignment}': {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// First 12 hex digits of SHA-256 over the canonical (sorted-key) JSON
    /// form, so key order in the source file does not matter.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&serde_json::to_value(self).expect("config serializes"))
            .expect("json serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)[..12].to_string()
    }

    pub fn preprocessing(&self) -> Result<Preprocessing> {
        let p = &self.preprocess;
        Ok(Preprocessing {
            augment: AugmentConfig {
                side: p.side,
                max_rotation_deg: p.max_rotation_deg,
                scale_range: (p.scale_min, p.scale_max),
                order: self.flow.pipeline,
                flow_normalization: self.flow.normalization()?,
            },
            norm: NormStats {
                mean: p.mean,
                std: p.std,
            },
            delta_t: self.dataset.delta_t,
        })
    }

    /// Training config for one seed of the run.
    pub fn train_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}
