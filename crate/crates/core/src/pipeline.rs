//! Clip → model-ready sample, and split-level scoring.

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flow::{estimate_flow, FlowEngine, PairContext};
use crate::image::PixelRange;
use crate::ingest::{sample_pair, ClipData, SampleMode};
use crate::metrics::ScoreSet;
use crate::models::{ModelKind, PadModel};
use crate::preprocess::{apply_to_image, normalize_rgb, sync_augment, AugmentConfig, NormStats, SamplePair, SyncAugParams};
use crate::seed::stream_rng;

/// Everything that turns frames into tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessing {
    pub augment: AugmentConfig,
    pub norm: NormStats,
    pub delta_t: usize,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            augment: AugmentConfig::default(),
            norm: NormStats::default(),
            delta_t: 1,
        }
    }
}

/// Samples a frame pair, estimates flow when an engine is given, and
/// applies synchronized geometry. Without an engine the flow tensor is
/// left empty; the random draws are identical either way, so the RGB
/// tensor does not depend on whether flow was computed.
pub fn prepare_sample<R: Rng + ?Sized>(
    clip: &ClipData,
    mode: SampleMode,
    engine: Option<&dyn FlowEngine>,
    prep: &Preprocessing,
    rng: &mut R,
) -> Result<SamplePair> {
    let pair = sample_pair(clip, mode, prep.delta_t, rng)?;
    let rec = &clip.record;
    match engine {
        Some(engine) => {
            let ctx = PairContext {
                clip_id: &rec.clip_id,
                clip_dir: Some(&rec.dir),
                t: pair.t,
                delta_t: pair.delta_t,
            };
            let flow = estimate_flow(engine, pair.reference, pair.adjacent, PixelRange::Unit, &ctx)?;
            let aligned = sync_augment(pair.reference, &flow, mode, rng, &prep.augment)?;
            Ok(SamplePair::from_aligned(&aligned, &prep.norm, rec.label, &rec.clip_id))
        }
        None => {
            let (h, w) = pair.reference.dims();
            let params = SyncAugParams::sample(mode, h, w, &prep.augment, rng);
            Ok(SamplePair {
                rgb: normalize_rgb(&apply_to_image(pair.reference, &params), &prep.norm),
                flow_img: Vec::new(),
                side: params.target_side,
                label: rec.label,
                clip_id: rec.clip_id.clone(),
            })
        }
    }
}

/// Deterministic evaluation samples for every clip.
pub fn prepare_eval(
    clips: &[ClipData],
    engine: Option<&dyn FlowEngine>,
    prep: &Preprocessing,
    exec: Exec,
) -> Result<Vec<SamplePair>> {
    exec.try_map(clips, |c| prepare_sample(c, SampleMode::Eval, engine, prep, &mut stream_rng(&[0])))
}

/// Bonafide scores of prepared samples, processed `batch` at a time.
pub fn score_samples(model: &dyn PadModel, samples: &[SamplePair], batch: usize, exec: Exec) -> Result<(ScoreSet, Vec<[f32; 2]>)> {
    let mut logits = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let side = chunk[0].side;
        let inputs: Vec<Vec<&[f32]>> = chunk.iter().map(|s| model.inputs(s)).collect();
        logits.extend(model.network().logits(&inputs, side, exec)?);
    }
    let scores = logits.iter().map(|&l| crate::nn::softmax2(l)[1] as f64).collect();
    let set = ScoreSet::new(
        scores,
        samples.iter().map(|s| s.label).collect(),
        samples.iter().map(|s| s.clip_id.clone()).collect(),
    )?;
    Ok((set, logits))
}

/// Scores clips end to end. Teachers need a flow engine; students are
/// scored from RGB alone and must not be given one.
pub fn score_clips(
    model: &dyn PadModel,
    clips: &[ClipData],
    engine: Option<&dyn FlowEngine>,
    prep: &Preprocessing,
    batch: usize,
    exec: Exec,
) -> Result<ScoreSet> {
    let engine = match (model.kind(), engine) {
        (ModelKind::Teacher, None) => {
            return Err(Error::Config("evaluating a teacher requires a flow engine".into()));
        }
        (ModelKind::Teacher, e) => e,
        (ModelKind::Student, _) => None,
    };
    let samples = prepare_eval(clips, engine, prep, exec)?;
    Ok(score_samples(model, &samples, batch, exec)?.0)
}
