//! Parameter and FLOP accounting from per-layer descriptors.
//!
//! One multiply-accumulate is counted as one FLOP. Convolutions and linear
//! layers contribute MACs; batch norm contributes parameters only (it folds
//! into the preceding convolution at inference); activations, pooling and
//! element-wise gating contribute neither.

use serde::{Deserialize, Serialize};

use super::network::{ConvEncoder, MlpHead, Network, IN_CHANNELS};
use super::{ModelKind, PadModel, StudentModel, TeacherModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerDesc {
    /// "Same" padding of `(kernel - 1) / 2`.
    Conv2d {
        name: String,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        in_hw: (usize, usize),
    },
    Linear {
        name: String,
        in_f: usize,
        out_f: usize,
        bias: bool,
    },
    BatchNorm {
        name: String,
        channels: usize,
    },
    /// Parameter-free layers (activation, pooling, gating).
    Elementwise { name: String },
    /// Anything the counter has no formula for.
    Unknown { name: String, params: u64 },
}

impl LayerDesc {
    pub fn conv_out_hw(in_hw: (usize, usize), kernel: usize, stride: usize) -> (usize, usize) {
        let pad = (kernel - 1) / 2;
        let f = |n: usize| (n + 2 * pad - kernel) / stride + 1;
        (f(in_hw.0), f(in_hw.1))
    }

    pub fn params(&self) -> u64 {
        match *self {
            LayerDesc::Conv2d {
                in_c,
                out_c,
                kernel,
                groups,
                bias,
                ..
            } => (out_c * (in_c / groups) * kernel * kernel + if bias { out_c } else { 0 }) as u64,
            LayerDesc::Linear { in_f, out_f, bias, .. } => (in_f * out_f + if bias { out_f } else { 0 }) as u64,
            LayerDesc::BatchNorm { channels, .. } => 2 * channels as u64,
            LayerDesc::Elementwise { .. } => 0,
            LayerDesc::Unknown { params, .. } => params,
        }
    }

    pub fn macs(&self) -> u64 {
        match *self {
            LayerDesc::Conv2d {
                in_c,
                out_c,
                kernel,
                stride,
                groups,
                in_hw,
                ..
            } => {
                let (oh, ow) = Self::conv_out_hw(in_hw, kernel, stride);
                (oh * ow * out_c * (in_c / groups) * kernel * kernel) as u64
            }
            LayerDesc::Linear { in_f, out_f, .. } => (in_f * out_f) as u64,
            _ => 0,
        }
    }
}

/// Anything that can list its layers for a square `side`×`side` input.
pub trait Describe {
    fn describe(&self, side: usize) -> Vec<LayerDesc>;
}

/// A feature extractor mapping a 3×ρ×ρ tensor to `feature_dim` values.
pub trait BackboneEncoder: Describe {
    fn name(&self) -> &str;
    fn feature_dim(&self) -> usize;
    fn pretrained(&self) -> bool;
    fn encode(&self, input: &[f32], side: usize) -> Result<Vec<f32>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub parameter_count: u64,
    pub flops_per_input: u64,
    /// Raw f32 weight payload.
    pub model_size_bytes: u64,
    pub includes_flow_engine: bool,
    pub input_side: usize,
    pub warnings: Vec<String>,
}

pub fn count_efficiency(
    model: &dyn Describe,
    side: usize,
    includes_flow_engine: bool,
    flow_engine_cost: Option<u64>,
) -> Result<EfficiencyReport> {
    if side == 0 {
        return Err(Error::Config("input side must be positive".into()));
    }
    let layers = model.describe(side);
    let mut warnings = Vec::new();
    let mut params = 0;
    let mut macs = 0;
    for layer in &layers {
        if let LayerDesc::Unknown { name, .. } = layer {
            warnings.push(format!("no FLOP formula for layer '{name}'; counted as zero"));
        }
        params += layer.params();
        macs += layer.macs();
    }
    if includes_flow_engine {
        match flow_engine_cost {
            Some(c) => macs += c,
            None => warnings.push("flow engine cost unknown; not included".into()),
        }
    }
    Ok(EfficiencyReport {
        parameter_count: params,
        flops_per_input: macs,
        model_size_bytes: params * 4,
        includes_flow_engine,
        input_side: side,
        warnings,
    })
}

impl Describe for ConvEncoder {
    fn describe(&self, side: usize) -> Vec<LayerDesc> {
        let mut hw = (side, side);
        let mut out = Vec::new();
        for conv in self.stages() {
            out.push(LayerDesc::Conv2d {
                name: conv.name.clone(),
                in_c: conv.in_c,
                out_c: conv.out_c,
                kernel: conv.kernel,
                stride: conv.stride,
                groups: 1,
                bias: true,
                in_hw: hw,
            });
            out.push(LayerDesc::Elementwise {
                name: format!("{}.relu", conv.name),
            });
            hw = conv.out_dims(hw.0, hw.1);
        }
        out.push(LayerDesc::Elementwise {
            name: format!("{}.gap", self.name),
        });
        out
    }
}

impl Describe for MlpHead {
    fn describe(&self, _side: usize) -> Vec<LayerDesc> {
        self.layers()
            .iter()
            .map(|l| LayerDesc::Linear {
                name: l.name.clone(),
                in_f: l.in_f,
                out_f: l.out_f,
                bias: true,
            })
            .collect()
    }
}

impl Describe for Network {
    fn describe(&self, side: usize) -> Vec<LayerDesc> {
        let mut out: Vec<LayerDesc> = self.encoders().iter().flat_map(|e| e.describe(side)).collect();
        out.extend(self.head().describe(side));
        out
    }
}

impl Describe for TeacherModel {
    fn describe(&self, side: usize) -> Vec<LayerDesc> {
        self.network().describe(side)
    }
}

impl Describe for StudentModel {
    fn describe(&self, side: usize) -> Vec<LayerDesc> {
        self.network().describe(side)
    }
}

/// An encoder bound to the parameter store that holds its weights.
pub struct BoundEncoder<'a> {
    net: &'a Network,
    index: usize,
}

impl Network {
    pub fn encoder(&self, index: usize) -> Option<BoundEncoder<'_>> {
        (index < self.encoders().len()).then_some(BoundEncoder { net: self, index })
    }
}

impl Describe for BoundEncoder<'_> {
    fn describe(&self, side: usize) -> Vec<LayerDesc> {
        self.net.encoders()[self.index].describe(side)
    }
}

impl BackboneEncoder for BoundEncoder<'_> {
    fn name(&self) -> &str {
        &self.net.encoders()[self.index].name
    }

    fn feature_dim(&self) -> usize {
        self.net.encoders()[self.index].feature_dim()
    }

    fn pretrained(&self) -> bool {
        false
    }

    fn encode(&self, input: &[f32], side: usize) -> Result<Vec<f32>> {
        self.net.encoders()[self.index]
            .forward(&self.net.store, input, side)
            .map(|t| t.feature)
    }
}

/// Layer descriptor of a reference backbone whose weights are not shipped.
#[derive(Debug, Clone)]
pub struct ReferenceBackbone {
    name: String,
    feature_dim: usize,
    layers: fn(usize) -> Vec<LayerDesc>,
}

impl Describe for ReferenceBackbone {
    fn describe(&self, side: usize) -> Vec<LayerDesc> {
        (self.layers)(side)
    }
}

impl BackboneEncoder for ReferenceBackbone {
    fn name(&self) -> &str {
        &self.name
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn pretrained(&self) -> bool {
        true
    }

    fn encode(&self, _input: &[f32], _side: usize) -> Result<Vec<f32>> {
        Err(Error::Unsupported(format!(
            "'{}' is a descriptor for efficiency accounting; its weights are not bundled",
            self.name
        )))
    }
}

/// Teacher or student assembled from a reference backbone and the MLP head,
/// for counting only.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    pub kind: ModelKind,
    pub backbone: ReferenceBackbone,
    pub head_hidden: usize,
}

impl Describe for ReferenceModel {
    fn describe(&self, side: usize) -> Vec<LayerDesc> {
        let branches: &[&str] = match self.kind {
            ModelKind::Teacher => TeacherModel::BRANCHES,
            ModelKind::Student => StudentModel::BRANCHES,
        };
        let mut out: Vec<LayerDesc> = branches.iter().flat_map(|_| self.backbone.describe(side)).collect();
        out.push(LayerDesc::Linear {
            name: "head.fc1".into(),
            in_f: self.backbone.feature_dim * branches.len(),
            out_f: self.head_hidden,
            bias: true,
        });
        out.push(LayerDesc::Linear {
            name: "head.fc2".into(),
            in_f: self.head_hidden,
            out_f: 2,
            bias: true,
        });
        out
    }
}

fn make_divisible(v: usize, divisor: usize) -> usize {
    let rounded = ((v + divisor / 2) / divisor * divisor).max(divisor);
    if (rounded as f64) < 0.9 * v as f64 {
        rounded + divisor
    } else {
        rounded
    }
}

/// MobileNetV3-Large feature extractor (the ImageNet classifier removed),
/// ending in global pooling over 960 channels.
pub fn mobilenet_v3_large() -> ReferenceBackbone {
    ReferenceBackbone {
        name: "mobilenet-v3-large".into(),
        feature_dim: 960,
        layers: mobilenet_v3_large_layers,
    }
}

fn mobilenet_v3_large_layers(side: usize) -> Vec<LayerDesc> {
    // (kernel, expanded, out, squeeze-excite, stride)
    const BLOCKS: [(usize, usize, usize, bool, usize); 15] = [
        (3, 16, 16, false, 1),
        (3, 64, 24, false, 2),
        (3, 72, 24, false, 1),
        (5, 72, 40, true, 2),
        (5, 120, 40, true, 1),
        (5, 120, 40, true, 1),
        (3, 240, 80, false, 2),
        (3, 200, 80, false, 1),
        (3, 184, 80, false, 1),
        (3, 184, 80, false, 1),
        (3, 480, 112, true, 1),
        (3, 672, 112, true, 1),
        (5, 672, 160, true, 2),
        (5, 960, 160, true, 1),
        (5, 960, 160, true, 1),
    ];
    let mut out = Vec::new();
    let mut hw = (side, side);
    let conv = |out: &mut Vec<LayerDesc>, name: String, in_c, out_c, kernel, stride, groups, bias, hw: &mut (usize, usize)| {
        out.push(LayerDesc::Conv2d {
            name,
            in_c,
            out_c,
            kernel,
            stride,
            groups,
            bias,
            in_hw: *hw,
        });
        *hw = LayerDesc::conv_out_hw(*hw, kernel, stride);
    };
    let bn = |out: &mut Vec<LayerDesc>, name: String, channels| out.push(LayerDesc::BatchNorm { name, channels });
    let act = |out: &mut Vec<LayerDesc>, name: String| out.push(LayerDesc::Elementwise { name });

    conv(&mut out, "stem.conv".into(), IN_CHANNELS, 16, 3, 2, 1, false, &mut hw);
    bn(&mut out, "stem.bn".into(), 16);
    act(&mut out, "stem.hardswish".into());
    let mut in_c = 16;
    for (i, &(k, exp, out_c, se, stride)) in BLOCKS.iter().enumerate() {
        let p = format!("block{}", i + 1);
        if exp != in_c {
            conv(&mut out, format!("{p}.expand"), in_c, exp, 1, 1, 1, false, &mut hw);
            bn(&mut out, format!("{p}.expand.bn"), exp);
            act(&mut out, format!("{p}.expand.act"));
        }
        conv(&mut out, format!("{p}.depthwise"), exp, exp, k, stride, exp, false, &mut hw);
        bn(&mut out, format!("{p}.depthwise.bn"), exp);
        act(&mut out, format!("{p}.depthwise.act"));
        if se {
            let sq = make_divisible(exp / 4, 8);
            act(&mut out, format!("{p}.se.pool"));
            let mut one = (1, 1);
            conv(&mut out, format!("{p}.se.fc1"), exp, sq, 1, 1, 1, true, &mut one);
            conv(&mut out, format!("{p}.se.fc2"), sq, exp, 1, 1, 1, true, &mut one);
            act(&mut out, format!("{p}.se.scale"));
        }
        conv(&mut out, format!("{p}.project"), exp, out_c, 1, 1, 1, false, &mut hw);
        bn(&mut out, format!("{p}.project.bn"), out_c);
        in_c = out_c;
    }
    conv(&mut out, "last.conv".into(), in_c, 960, 1, 1, 1, false, &mut hw);
    bn(&mut out, "last.bn".into(), 960);
    act(&mut out, "last.hardswish".into());
    act(&mut out, "gap".into());
    out
}
