use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ArchConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{Conv2d, Linear, ParamStore};
use crate::seed::stream_rng;

const INIT_STREAM: u64 = 0x1a17;
pub(crate) const IN_CHANNELS: usize = 3;

fn ensure_finite(values: &[f32], stage: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage: stage() })
    }
}

/// Stride-2 3×3 conv stages with ReLU, then global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder {
    pub name: String,
    stages: Vec<Conv2d>,
}

#[derive(Debug, Clone)]
pub(crate) struct StageTrace {
    cols: Vec<f32>,
    /// Post-ReLU activations, channel-major.
    pub(crate) act: Vec<f32>,
    in_hw: (usize, usize),
    pub(crate) out_hw: (usize, usize),
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace {
    pub(crate) stages: Vec<StageTrace>,
    pub(crate) feature: Vec<f32>,
}

impl ConvEncoder {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, channels: &[usize], rng: &mut R) -> Self {
        let mut in_c = IN_CHANNELS;
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &out_c)| {
                let conv = Conv2d::new(store, &format!("{name}.stage{}", i + 1), in_c, out_c, 3, 2, rng);
                in_c = out_c;
                conv
            })
            .collect();
        Self {
            name: name.to_string(),
            stages,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.stages.last().map_or(IN_CHANNELS, |s| s.out_c)
    }

    pub fn stages(&self) -> &[Conv2d] {
        &self.stages
    }

    pub fn stage_names(&self) -> Vec<String> {
        (1..=self.stages.len()).map(|i| format!("stage{i}")).collect()
    }

    pub(crate) fn forward(&self, store: &ParamStore, input: &[f32], side: usize) -> Result<EncoderTrace> {
        if input.len() != IN_CHANNELS * side * side {
            return Err(Error::Contract(format!(
                "encoder '{}' expects 3×{side}×{side} input, got {} values",
                self.name,
                input.len()
            )));
        }
        let mut traces: Vec<StageTrace> = Vec::with_capacity(self.stages.len());
        let mut hw = (side, side);
        for (i, conv) in self.stages.iter().enumerate() {
            let x = traces.last().map_or(input, |t| &t.act);
            let (mut act, cols) = conv.forward(store, x, hw.0, hw.1);
            ensure_finite(&act, || format!("{}.stage{}", self.name, i + 1))?;
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            let out_hw = conv.out_dims(hw.0, hw.1);
            traces.push(StageTrace {
                cols,
                act,
                in_hw: hw,
                out_hw,
            });
            hw = out_hw;
        }
        let feature = match traces.last() {
            Some(last) => {
                let n = last.out_hw.0 * last.out_hw.1;
                last.act.chunks_exact(n).map(|c| c.iter().sum::<f32>() / n as f32).collect()
            }
            None => input.chunks_exact(side * side).map(|c| c.iter().sum::<f32>() / c.len() as f32).collect(),
        };
        Ok(EncoderTrace { stages: traces, feature })
    }

    /// Backpropagates `dfeat` through pooling and every stage. If
    /// `capture` names a stage index, the gradient with respect to that
    /// stage's post-ReLU output is returned.
    pub(crate) fn backward(
        &self,
        store: &ParamStore,
        trace: &EncoderTrace,
        dfeat: &[f32],
        grads: &mut [f32],
        capture: Option<usize>,
    ) -> Option<Vec<f32>> {
        let last = trace.stages.last()?;
        let n = last.out_hw.0 * last.out_hw.1;
        let mut d_act: Vec<f32> = dfeat.iter().flat_map(|&g| std::iter::repeat_n(g / n as f32, n)).collect();
        let mut captured = None;
        for (s, (conv, st)) in self.stages.iter().zip(&trace.stages).enumerate().rev() {
            if capture == Some(s) {
                captured = Some(d_act.clone());
            }
            for (d, a) in d_act.iter_mut().zip(&st.act) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let need_input = s > 0 && capture.is_none_or(|c| c < s);
            match conv.backward(store, &st.cols, &d_act, st.in_hw.0, st.in_hw.1, grads, need_input) {
                Some(d) => d_act = d,
                None => break,
            }
        }
        captured
    }
}

/// One hidden ReLU layer with inverted dropout, then two logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    fc1: Linear,
    fc2: Linear,
    dropout: f32,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadTrace {
    input: Vec<f32>,
    hidden: Vec<f32>,
    /// d hidden / d pre-activation: ReLU gate times the dropout scale.
    gate: Vec<f32>,
}

impl MlpHead {
    fn new<R: Rng>(store: &mut ParamStore, in_f: usize, hidden: usize, dropout: f32, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(store, "head.fc1", in_f, hidden, 2.0, rng),
            fc2: Linear::new(store, "head.fc2", hidden, 2, 1.0, rng),
            dropout,
        }
    }

    pub fn in_features(&self) -> usize {
        self.fc1.in_f
    }

    pub fn hidden(&self) -> usize {
        self.fc1.out_f
    }

    pub(crate) fn layers(&self) -> [&Linear; 2] {
        [&self.fc1, &self.fc2]
    }

    fn forward(&self, store: &ParamStore, input: Vec<f32>, rng: Option<&mut ChaCha8Rng>) -> Result<(HeadTrace, [f32; 2])> {
        let pre = self.fc1.forward(store, &input);
        let mut gate: Vec<f32> = pre.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        if let Some(rng) = rng {
            if self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                for g in &mut gate {
                    *g = if rng.random::<f32>() < keep { *g / keep } else { 0.0 };
                }
            }
        }
        let hidden: Vec<f32> = pre.iter().zip(&gate).map(|(p, g)| p * g).collect();
        ensure_finite(&hidden, || "head.fc1".into())?;
        let out = self.fc2.forward(store, &hidden);
        ensure_finite(&out, || "head.fc2".into())?;
        Ok((HeadTrace { input, hidden, gate }, [out[0], out[1]]))
    }

    fn backward(&self, store: &ParamStore, trace: &HeadTrace, dlogits: [f32; 2], grads: &mut [f32]) -> Vec<f32> {
        let mut dh = self.fc2.backward(store, &trace.hidden, &dlogits, grads);
        dh.iter_mut().zip(&trace.gate).for_each(|(d, g)| *d *= g);
        self.fc1.backward(store, &trace.input, &dh, grads)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SampleTrace {
    pub(crate) encoders: Vec<EncoderTrace>,
    head: HeadTrace,
    pub(crate) logits: [f32; 2],
}

/// Shared machinery of teacher and student: one encoder per input branch,
/// late fusion by concatenation, and an MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub(crate) store: ParamStore,
    encoders: Vec<ConvEncoder>,
    head: MlpHead,
}

impl Network {
    pub(crate) fn build(arch: &ArchConfig, branches: &[&str], seed: u64) -> Result<Self> {
        arch.validate()?;
        if arch.encoder != EncoderKind::Tiny {
            return Err(Error::Unsupported(format!(
                "encoder '{}' is available for efficiency accounting only; train with 'tiny'",
                arch.encoder
            )));
        }
        let mut rng = stream_rng(&[seed, INIT_STREAM]);
        let mut store = ParamStore::new();
        let encoders: Vec<ConvEncoder> = branches
            .iter()
            .map(|b| ConvEncoder::new(&mut store, b, &arch.channels, &mut rng))
            .collect();
        let fused: usize = encoders.iter().map(ConvEncoder::feature_dim).sum();
        let head = MlpHead::new(&mut store, fused, arch.head_hidden, arch.dropout, &mut rng);
        Ok(Self { store, encoders, head })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoders(&self) -> &[ConvEncoder] {
        &self.encoders
    }

    pub fn head(&self) -> &MlpHead {
        &self.head
    }

    pub fn fused_dim(&self) -> usize {
        self.head.in_features()
    }

    pub(crate) fn forward_sample(
        &self,
        inputs: &[&[f32]],
        side: usize,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<SampleTrace> {
        if inputs.len() != self.encoders.len() {
            return Err(Error::Contract(format!(
                "network has {} branches but received {} inputs",
                self.encoders.len(),
                inputs.len()
            )));
        }
        let encoders = self
            .encoders
            .iter()
            .zip(inputs)
            .map(|(e, x)| e.forward(&self.store, x, side))
            .collect::<Result<Vec<_>>>()?;
        let fused: Vec<f32> = encoders.iter().flat_map(|t| t.feature.iter().copied()).collect();
        let (head, logits) = self.head.forward(&self.store, fused, dropout)?;
        Ok(SampleTrace { encoders, head, logits })
    }

    /// Accumulates parameter gradients for one sample. `capture` selects
    /// (branch, stage) whose activation gradient is returned.
    pub(crate) fn backward_sample(
        &self,
        trace: &SampleTrace,
        dlogits: [f32; 2],
        grads: &mut [f32],
        capture: Option<(usize, usize)>,
    ) -> Option<Vec<f32>> {
        let dfused = self.head.backward(&self.store, &trace.head, dlogits, grads);
        let mut offset = 0;
        let mut captured = None;
        for (b, (enc, et)) in self.encoders.iter().zip(&trace.encoders).enumerate() {
            let dim = enc.feature_dim();
            let cap = capture.filter(|c| c.0 == b).map(|c| c.1);
            if let Some(g) = enc.backward(&self.store, et, &dfused[offset..offset + dim], grads, cap) {
                captured = Some(g);
            }
            offset += dim;
        }
        captured
    }

    /// Eval-mode logits for a batch; each entry holds one input per branch.
    pub(crate) fn logits(&self, batch: &[Vec<&[f32]>], side: usize, exec: Exec) -> Result<Vec<[f32; 2]>> {
        exec.try_map(batch, |inputs| self.forward_sample(inputs, side, None).map(|t| t.logits))
    }
}
