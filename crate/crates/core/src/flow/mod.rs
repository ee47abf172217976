//! Optical flow: the engine interface, the resolution-adaptation protocol
//! for learned engines, and colorwheel encoding.

mod adapt;
mod classical;
mod colorwheel;
#[cfg(feature = "external-flow")]
mod external;
mod field;

use std::path::Path;

pub use adapt::{adapt_for_engine, restore_flow, AdaptRecord, ENGINE_MULTIPLE};
pub use classical::{pyramidal_lucas_kanade, ClassicalParams};
pub use colorwheel::{colorwheel_encode, flow_hue, hsv_to_rgb, FlowNormalization};
#[cfg(feature = "external-flow")]
pub use external::ExternalEngine;
pub use field::FlowField;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::{Image, PixelRange};
use crate::ingest::{flow_path, read_flo};

/// Where a frame pair came from. Engines that serve stored flow need the
/// clip directory; estimators ignore it.
#[derive(Debug, Clone, Copy)]
pub struct PairContext<'a> {
    pub clip_id: &'a str,
    pub clip_dir: Option<&'a Path>,
    pub t: usize,
    pub delta_t: usize,
}

impl<'a> PairContext<'a> {
    pub fn detached(t: usize, delta_t: usize) -> Self {
        Self {
            clip_id: "<detached>",
            clip_dir: None,
            t,
            delta_t,
        }
    }
}

/// An optical-flow estimator. Implementations must tolerate concurrent
/// `estimate` calls.
pub trait FlowEngine: Send + Sync {
    fn name(&self) -> &str;

    fn deterministic(&self) -> bool;

    /// Flow from `reference` to `adjacent`, at the reference resolution.
    fn estimate(
        &self,
        reference: &Image,
        adjacent: &Image,
        range: PixelRange,
        ctx: &PairContext<'_>,
    ) -> Result<FlowField>;
}

/// Runs `engine` with the shared pre/post-conditions: equal input sizes,
/// output at the reference resolution, finite values only.
pub fn estimate_flow(
    engine: &dyn FlowEngine,
    reference: &Image,
    adjacent: &Image,
    range: PixelRange,
    ctx: &PairContext<'_>,
) -> Result<FlowField> {
    if reference.dims() != adjacent.dims() {
        return Err(Error::Contract(format!(
            "clip '{}': reference {:?} and adjacent {:?} differ in resolution",
            ctx.clip_id,
            reference.dims(),
            adjacent.dims()
        )));
    }
    let flow = engine.estimate(reference, adjacent, range, ctx)?;
    if flow.dims() != reference.dims() {
        return Err(Error::Contract(format!(
            "engine '{}' returned {:?} flow for a {:?} frame",
            engine.name(),
            flow.dims(),
            reference.dims()
        )));
    }
    flow.ensure_finite(&format!("flow engine '{}' on clip '{}'", engine.name(), ctx.clip_id))
}

/// Engine selection string: `exact | classical | external:<command>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineSpec {
    Exact,
    Classical,
    External(String),
}

impl std::str::FromStr for EngineSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(EngineSpec::Exact),
            "classical" => Ok(EngineSpec::Classical),
            other => match other.strip_prefix("external:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(EngineSpec::External(cmd.trim().to_string())),
                _ => Err(Error::Config(format!(
                    "unknown flow engine '{other}' (expected exact, classical or external:<command>)"
                ))),
            },
        }
    }
}

impl std::fmt::Display for EngineSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EngineSpec::Exact => f.write_str("exact"),
            EngineSpec::Classical => f.write_str("classical"),
            EngineSpec::External(c) => write!(f, "external:{c}"),
        }
    }
}

pub fn build_engine(spec: &EngineSpec) -> Result<Box<dyn FlowEngine>> {
    match spec {
        EngineSpec::Exact => Ok(Box::new(ExactEngine)),
        EngineSpec::Classical => Ok(Box::new(ClassicalEngine::default())),
        #[cfg(feature = "external-flow")]
        EngineSpec::External(cmd) => Ok(Box::new(ExternalEngine::new(cmd))),
        #[cfg(not(feature = "external-flow"))]
        EngineSpec::External(cmd) => Err(Error::EngineUnavailable(format!(
            "external engine '{cmd}' requested but this build lacks the `external-flow` feature"
        ))),
    }
}

/// Serves the ground-truth `.flo` files stored next to synthetic clips.
/// Offsets above one are composed from consecutive stored fields.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactEngine;

impl FlowEngine for ExactEngine {
    fn name(&self) -> &str {
        "exact"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn estimate(
        &self,
        reference: &Image,
        _adjacent: &Image,
        _range: PixelRange,
        ctx: &PairContext<'_>,
    ) -> Result<FlowField> {
        let dir = ctx.clip_dir.ok_or_else(|| {
            Error::EngineUnavailable(format!(
                "exact engine has no stored flow for clip '{}'",
                ctx.clip_id
            ))
        })?;
        let mut total = read_flo(&flow_path(dir, ctx.t))?;
        if total.dims() != reference.dims() {
            return Err(Error::Contract(format!(
                "stored flow for clip '{}' is {:?}, frame is {:?}",
                ctx.clip_id,
                total.dims(),
                reference.dims()
            )));
        }
        for step in 1..ctx.delta_t {
            let next = read_flo(&flow_path(dir, ctx.t + step))?;
            let (h, w) = total.dims();
            total = FlowField::from_fn(h, w, |y, x| {
                let (u, v) = total.at(y, x);
                let (nu, nv) = next.sample(y as f32 + v, x as f32 + u);
                (u + nu, v + nv)
            });
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClassicalEngine {
    pub params: ClassicalParams,
    pub exec: Exec,
}

impl FlowEngine for ClassicalEngine {
    fn name(&self) -> &str {
        "classical"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn estimate(
        &self,
        reference: &Image,
        adjacent: &Image,
        range: PixelRange,
        _ctx: &PairContext<'_>,
    ) -> Result<FlowField> {
        let scale = match range {
            PixelRange::Unit => 1.0,
            PixelRange::Byte => 1.0 / 255.0,
        };
        let a: Vec<f32> = reference.to_luma().into_iter().map(|v| v * scale).collect();
        let b: Vec<f32> = adjacent.to_luma().into_iter().map(|v| v * scale).collect();
        let (h, w) = reference.dims();
        Ok(pyramidal_lucas_kanade(&a, &b, h, w, &self.params, self.exec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(h: usize, w: usize, shift: f32) -> Image {
        Image::from_fn(h, w, 3, |y, x, _| {
            let (x, y) = (x as f32 - shift, y as f32);
            0.5 + 0.2 * (0.31 * x + 0.17 * y).sin()
                + 0.15 * (0.23 * y - 0.41 * x + 1.0).sin()
                + 0.1 * (0.53 * x + 0.47 * y + 2.0).cos()
        })
    }

    fn median(mut xs: Vec<f32>) -> f32 {
        xs.sort_by(f32::total_cmp);
        xs[xs.len() / 2]
    }

    #[test]
    fn identical_frames_give_no_motion() {
        let a = texture(64, 64, 0.0);
        let f = estimate_flow(
            &ClassicalEngine::default(),
            &a,
            &a,
            PixelRange::Unit,
            &PairContext::detached(0, 1),
        )
        .unwrap();
        assert!(f.u().iter().chain(f.v()).all(|x| x.abs() < 0.1));
    }

    #[test]
    fn recovers_three_pixel_translation() {
        let a = texture(64, 64, 0.0);
        let b = texture(64, 64, 3.0);
        let f = estimate_flow(
            &ClassicalEngine::default(),
            &a,
            &b,
            PixelRange::Unit,
            &PairContext::detached(0, 1),
        )
        .unwrap();
        let mut us = Vec::new();
        let mut vs = Vec::new();
        for y in 12..52 {
            for x in 12..52 {
                let (u, v) = f.at(y, x);
                us.push(u);
                vs.push(v);
            }
        }
        let (mu, mv) = (median(us), median(vs));
        assert!((2.5..=3.5).contains(&mu), "median u {mu}");
        assert!((-0.5..=0.5).contains(&mv), "median v {mv}");
    }

    #[test]
    fn classical_is_deterministic() {
        let a = texture(40, 48, 0.0);
        let b = texture(40, 48, 1.5);
        let e = ClassicalEngine::default();
        let ctx = PairContext::detached(0, 1);
        let f1 = e.estimate(&a, &b, PixelRange::Unit, &ctx).unwrap();
        let f2 = e.estimate(&a, &b, PixelRange::Unit, &ctx).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn resolution_mismatch_is_a_contract_error() {
        let r = estimate_flow(
            &ClassicalEngine::default(),
            &texture(32, 32, 0.0),
            &texture(32, 40, 0.0),
            PixelRange::Unit,
            &PairContext::detached(0, 1),
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn exact_engine_needs_stored_flow() {
        let a = texture(8, 8, 0.0);
        let r = ExactEngine.estimate(&a, &a, PixelRange::Unit, &PairContext::detached(0, 1));
        assert!(matches!(r, Err(Error::EngineUnavailable(_))));
    }

    #[test]
    fn engine_spec_parses() {
        assert_eq!("exact".parse::<EngineSpec>().unwrap(), EngineSpec::Exact);
        assert_eq!("classical".parse::<EngineSpec>().unwrap(), EngineSpec::Classical);
        assert_eq!(
            "external:run_flow --fast".parse::<EngineSpec>().unwrap(),
            EngineSpec::External("run_flow --fast".into())
        );
        assert!("external:".parse::<EngineSpec>().is_err());
        assert!("raft".parse::<EngineSpec>().is_err());
    }

    #[cfg(not(feature = "external-flow"))]
    #[test]
    fn external_engine_is_unavailable_without_feature() {
        let r = build_engine(&EngineSpec::External("x".into()));
        assert!(matches!(r, Err(Error::EngineUnavailable(_))));
    }
}
