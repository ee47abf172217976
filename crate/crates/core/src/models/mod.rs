//! Dual-branch teacher, RGB-only student, parameter/FLOP accounting and
//! checkpoints.
//!
//! Class indices are fixed crate-wide: 0 = attack, 1 = bonafide. A frozen
//! model is `Sync`, so concurrent forward calls are safe; training mutates
//! the parameter store and needs exclusive access.

mod checkpoint;
mod efficiency;
mod network;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, LoadedModel, CHECKPOINT_FORMAT};
pub use efficiency::{
    count_efficiency, mobilenet_v3_large, BackboneEncoder, Describe, EfficiencyReport, LayerDesc, ReferenceBackbone,
    ReferenceModel,
};
pub use network::{ConvEncoder, MlpHead, Network};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::softmax2;
use crate::preprocess::SamplePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Small from-scratch convolutional encoder, trainable on CPU.
    Tiny,
    /// Mobile-class reference backbone; descriptor only.
    MobilenetV3Large,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Tiny => "tiny",
            EncoderKind::MobilenetV3Large => "mobilenet-v3-large",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(EncoderKind::Tiny),
            "mobilenet-v3-large" => Ok(EncoderKind::MobilenetV3Large),
            other => Err(Error::Config(format!(
                "unknown encoder '{other}' (expected tiny or mobilenet-v3-large)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub encoder: EncoderKind,
    /// Output channels of each stride-2 stage of the tiny encoder.
    pub channels: Vec<usize>,
    pub head_hidden: usize,
    pub dropout: f32,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Tiny,
            channels: vec![16, 32, 64, 128],
            head_hidden: 256,
            dropout: 0.2,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("model.channels must be a non-empty list of positive widths".into()));
        }
        if self.head_hidden == 0 {
            return Err(Error::Config("model.head_hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Teacher,
    Student,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Teacher => "teacher",
            ModelKind::Student => "student",
        })
    }
}

/// Logits and softmax posteriors, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<[f32; 2]>,
    pub posteriors: Vec<[f32; 2]>,
}

impl Forward {
    fn from_logits(logits: Vec<[f32; 2]>) -> Self {
        let posteriors = logits.iter().map(|&l| softmax2(l)).collect();
        Self { logits, posteriors }
    }

    /// Bonafide posterior per sample.
    pub fn scores(&self) -> Vec<f32> {
        self.posteriors.iter().map(|p| p[1]).collect()
    }
}

/// Behaviour the training loop needs from either model.
pub trait PadModel: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn arch(&self) -> &ArchConfig;
    fn network(&self) -> &Network;
    fn network_mut(&mut self) -> &mut Network;
    /// The branch inputs this model consumes from a prepared sample.
    fn inputs<'a>(&self, sample: &'a SamplePair) -> Vec<&'a [f32]>;
    /// Names of the input branches, in encoder order.
    fn branch_names(&self) -> &'static [&'static str];
}

/// RGB and flow encoders whose features are concatenated for the head.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    arch: ArchConfig,
    net: Network,
}

impl TeacherModel {
    pub const BRANCHES: &'static [&'static str] = &["rgb", "flow"];

    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            arch: arch.clone(),
            net: Network::build(arch, Self::BRANCHES, seed)?,
        })
    }

    pub fn forward(&self, batch: &[SamplePair], exec: Exec) -> Result<Forward> {
        let side = batch_side(batch)?;
        let inputs: Vec<Vec<&[f32]>> = batch.iter().map(|s| self.inputs(s)).collect();
        self.net.logits(&inputs, side, exec).map(Forward::from_logits)
    }
}

/// A single RGB encoder and head. Its forward pass has no flow argument.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    arch: ArchConfig,
    net: Network,
}

impl StudentModel {
    pub const BRANCHES: &'static [&'static str] = &["rgb"];

    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            arch: arch.clone(),
            net: Network::build(arch, Self::BRANCHES, seed)?,
        })
    }

    /// `rgb` holds normalized 3×side×side planar tensors.
    pub fn forward(&self, rgb: &[&[f32]], side: usize, exec: Exec) -> Result<Forward> {
        let inputs: Vec<Vec<&[f32]>> = rgb.iter().map(|x| vec![*x]).collect();
        self.net.logits(&inputs, side, exec).map(Forward::from_logits)
    }
}

fn batch_side(batch: &[SamplePair]) -> Result<usize> {
    let side = batch.first().map_or(0, |s| s.side);
    if batch.iter().any(|s| s.side != side) {
        return Err(Error::Contract("batch mixes samples of different resolution".into()));
    }
    Ok(side)
}

macro_rules! impl_pad_model {
    ($ty:ty, $kind:expr, |$s:ident| $inputs:expr) => {
        impl PadModel for $ty {
            fn kind(&self) -> ModelKind {
                $kind
            }
            fn arch(&self) -> &ArchConfig {
                &self.arch
            }
            fn network(&self) -> &Network {
                &self.net
            }
            fn network_mut(&mut self) -> &mut Network {
                &mut self.net
            }
            fn inputs<'a>(&self, $s: &'a SamplePair) -> Vec<&'a [f32]> {
                $inputs
            }
            fn branch_names(&self) -> &'static [&'static str] {
                Self::BRANCHES
            }
        }
    };
}

impl_pad_model!(TeacherModel, ModelKind::Teacher, |s| vec![&s.rgb, &s.flow_img]);
impl_pad_model!(StudentModel, ModelKind::Student, |s| vec![&s.rgb]);

pub fn teacher_forward(model: &TeacherModel, batch: &[SamplePair], exec: Exec) -> Result<Forward> {
    model.forward(batch, exec)
}

pub fn student_forward(model: &StudentModel, rgb: &[&[f32]], side: usize, exec: Exec) -> Result<Forward> {
    model.forward(rgb, side, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Label;
    use crate::seed::stream_rng;
    use rand::Rng;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            channels: vec![4, 8, 8],
            head_hidden: 16,
            ..ArchConfig::default()
        }
    }

    fn random_sample(side: usize, seed: u64) -> SamplePair {
        let mut rng = stream_rng(&[seed]);
        let n = 3 * side * side;
        SamplePair {
            rgb: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            flow_img: (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            side,
            label: if seed.is_multiple_of(2) { Label::Attack } else { Label::Bonafide },
            clip_id: format!("c{seed}"),
        }
    }

    #[test]
    fn posteriors_are_normalized_and_fusion_concatenates() {
        let t = TeacherModel::new(&small_arch(), 1).unwrap();
        assert_eq!(t.network().fused_dim(), 2 * 8);
        let batch: Vec<_> = (0..5).map(|i| random_sample(8, i)).collect();
        let out = t.forward(&batch, Exec::Sequential).unwrap();
        assert_eq!(out.logits.len(), 5);
        for p in &out.posteriors {
            assert!(((p[0] + p[1]) as f64 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_permutation_and_duplicates() {
        let t = TeacherModel::new(&small_arch(), 2).unwrap();
        let batch: Vec<_> = (0..4).map(|i| random_sample(8, i)).collect();
        let out = t.forward(&batch, Exec::default()).unwrap();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| batch[i].clone()).collect();
        let out_p = t.forward(&permuted, Exec::default()).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(out_p.logits[k], out.logits[i]);
        }
        let dup = vec![batch[1].clone(), batch[1].clone()];
        let out_d = t.forward(&dup, Exec::Sequential).unwrap();
        assert_eq!(out_d.logits[0], out_d.logits[1]);
    }

    #[test]
    fn student_is_deterministic_and_smaller() {
        let arch = small_arch();
        let s = StudentModel::new(&arch, 3).unwrap();
        let t = TeacherModel::new(&arch, 3).unwrap();
        assert!(t.network().params().len() > s.network().params().len());
        let x = random_sample(8, 7);
        let a = s.forward(&[&x.rgb], 8, Exec::Sequential).unwrap();
        let b = s.forward(&[&x.rgb], 8, Exec::default()).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(s.inputs(&x).len(), 1);
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let t = TeacherModel::new(&small_arch(), 4).unwrap();
        let net = t.network();
        let mut seen = vec![false; net.params().len()];
        let mut rng = stream_rng(&[99]);
        for i in 0..32 {
            let s = random_sample(8, 100 + i);
            let trace = net.forward_sample(&t.inputs(&s), 8, None).unwrap();
            let y = rng.random_range(0..2usize);
            let p = softmax2(trace.logits);
            let d = [p[0] - (y == 0) as u8 as f32, p[1] - (y == 1) as u8 as f32];
            let mut g = vec![0.0; net.params().len()];
            net.backward_sample(&trace, d, &mut g, None);
            seen.iter_mut().zip(&g).for_each(|(s, g)| *s |= *g != 0.0);
        }
        let dead: Vec<&str> = net
            .params()
            .segments()
            .iter()
            .filter(|seg| !seen[seg.offset..seg.offset + seg.len].iter().any(|&s| s))
            .map(|seg| seg.name.as_str())
            .collect();
        assert!(dead.is_empty(), "parameters without gradient in {dead:?}");
    }

    #[test]
    fn reference_encoder_is_not_trainable() {
        let arch = ArchConfig {
            encoder: EncoderKind::MobilenetV3Large,
            ..ArchConfig::default()
        };
        assert!(matches!(TeacherModel::new(&arch, 0), Err(Error::Unsupported(_))));
        assert!(ArchConfig { dropout: 1.0, ..ArchConfig::default() }.validate().is_err());
    }
}
