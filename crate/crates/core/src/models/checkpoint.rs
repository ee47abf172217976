//! Self-describing JSON checkpoints: weights (base64 of little-endian f32),
//! architecture, class-index convention, preprocessing and the experiment
//! config that produced them.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{ArchConfig, ModelKind, PadModel, StudentModel, TeacherModel};
use crate::error::{Error, Result};
use crate::nn::Segment;
use crate::preprocess::{NormStats, PipelineOrder};

pub const CHECKPOINT_FORMAT: &str = "facepad-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub arch: ArchConfig,
    pub side: usize,
    pub norm: NormStats,
    pub flow_normalization: String,
    pub pipeline: PipelineOrder,
    pub class_index: BTreeMap<String, usize>,
    pub epoch: Option<usize>,
    /// Fully resolved experiment config.
    pub config: serde_json::Value,
}

impl CheckpointMeta {
    pub fn class_index_default() -> BTreeMap<String, usize> {
        [("attack".to_string(), 0), ("bonafide".to_string(), 1)].into()
    }

    /// Refuses to pair this checkpoint with different RGB preprocessing.
    pub fn check_preprocessing(&self, side: usize, norm: &NormStats) -> Result<()> {
        if self.side != side || self.norm != *norm {
            return Err(Error::Config(format!(
                "{} checkpoint expects side {} with mean {:?} / std {:?}, but the run uses side {side} with mean {:?} / std {:?}",
                self.kind, self.side, self.norm.mean, self.norm.std, norm.mean, norm.std
            )));
        }
        if self.class_index != Self::class_index_default() {
            return Err(Error::Config(format!(
                "checkpoint uses class indices {:?}; expected attack=0, bonafide=1",
                self.class_index
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub meta: CheckpointMeta,
    pub segments: Vec<Segment>,
    pub weights: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Teacher(TeacherModel),
    Student(StudentModel),
}

impl LoadedModel {
    pub fn as_dyn(&self) -> &dyn PadModel {
        match self {
            LoadedModel::Teacher(t) => t,
            LoadedModel::Student(s) => s,
        }
    }
}

impl Checkpoint {
    pub fn from_model(model: &dyn PadModel, meta: CheckpointMeta) -> Self {
        let store = model.network().params();
        let bytes: Vec<u8> = store.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            meta,
            segments: store.segments().to_vec(),
            weights: B64.encode(bytes),
            sha256: store.digest(),
        }
    }

    pub fn into_model(self) -> Result<(LoadedModel, CheckpointMeta)> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format '{}'", self.format)));
        }
        let bytes = B64
            .decode(self.weights.as_bytes())
            .map_err(|e| Error::Format(format!("checkpoint weights are not valid base64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Format("checkpoint weight payload is not a whole number of f32".into()));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut model = match self.meta.kind {
            ModelKind::Teacher => LoadedModel::Teacher(TeacherModel::new(&self.meta.arch, 0)?),
            ModelKind::Student => LoadedModel::Student(StudentModel::new(&self.meta.arch, 0)?),
        };
        let net = match &mut model {
            LoadedModel::Teacher(t) => t.network_mut(),
            LoadedModel::Student(s) => s.network_mut(),
        };
        net.params_mut().load(&self.segments, values)?;
        if net.params().digest() != self.sha256 {
            return Err(Error::Format("checkpoint weights fail their SHA-256 check".into()));
        }
        Ok((model, self.meta))
    }
}

pub fn save_checkpoint(path: &Path, model: &dyn PadModel, meta: CheckpointMeta) -> Result<()> {
    let ckpt = Checkpoint::from_model(model, meta);
    let json = serde_json::to_vec(&ckpt).map_err(|e| Error::Format(format!("serializing checkpoint: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(LoadedModel, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("{} is not a checkpoint: {e}", path.display())))?;
    ckpt.into_model()
}
