//! Input adaptation for learned flow networks and the inverse mapping of
//! their output back onto the caller's pixel grid.

use serde::{Deserialize, Serialize};

use super::FlowField;
use crate::error::{Error, Result};
use crate::image::{Image, PixelRange};

pub const ENGINE_MULTIPLE: usize = 32;

/// Everything needed to undo [`adapt_for_engine`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptRecord {
    /// (height, width) of the caller's images.
    pub original: (usize, usize),
    pub transposed: bool,
    /// (height, width) handed to the engine, after any transposition.
    pub engine: (usize, usize),
    pub scaled_to_byte_range: bool,
}

impl AdaptRecord {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            original: (height, width),
            transposed: false,
            engine: (height, width),
            scaled_to_byte_range: false,
        }
    }

    /// Grid size between the transposition and the resize.
    fn oriented(&self) -> (usize, usize) {
        if self.transposed {
            (self.original.1, self.original.0)
        } else {
            self.original
        }
    }

    /// (u, v) factors applied by [`restore_flow`] before any transposition
    /// is undone: oriented width / engine width, oriented height / engine
    /// height.
    pub fn scale_factors(&self) -> (f64, f64) {
        let (oh, ow) = self.oriented();
        (
            ow as f64 / self.engine.1 as f64,
            oh as f64 / self.engine.0 as f64,
        )
    }
}

fn round_up(x: usize) -> usize {
    x.div_ceil(ENGINE_MULTIPLE).max(1) * ENGINE_MULTIPLE
}

/// Scales to 0–255 if needed, transposes portrait inputs so width ≥ height,
/// and bilinearly resizes both images up to the next multiple of 32.
pub fn adapt_for_engine(
    a: &Image,
    b: &Image,
    range: PixelRange,
) -> Result<(Image, Image, AdaptRecord)> {
    if a.dims() != b.dims() {
        return Err(Error::Contract(format!(
            "frame pair resolution mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (h, w) = a.dims();
    let scaled = range == PixelRange::Unit;
    let transposed = w < h;
    let prep = |img: &Image| {
        let img = if scaled { img.map(|v| v * 255.0) } else { img.clone() };
        if transposed {
            img.transpose()
        } else {
            img
        }
    };
    let (pa, pb) = (prep(a), prep(b));
    let (th, tw) = pa.dims();
    let engine = (round_up(th), round_up(tw));
    let record = AdaptRecord {
        original: (h, w),
        transposed,
        engine,
        scaled_to_byte_range: scaled,
    };
    Ok((pa.resize(engine.0, engine.1), pb.resize(engine.0, engine.1), record))
}

/// Resizes engine output back to the original grid with magnitude
/// correction and reverses any transposition.
pub fn restore_flow(flow: &FlowField, record: &AdaptRecord) -> Result<FlowField> {
    if flow.dims() != record.engine {
        return Err(Error::Contract(format!(
            "flow is {:?} but the adapt record expects engine resolution {:?}",
            flow.dims(),
            record.engine
        )));
    }
    let (oh, ow) = record.oriented();
    let (su, sv) = record.scale_factors();
    let restored = flow.resample(oh, ow).scale_components(su, sv);
    Ok(if record.transposed {
        restored.transpose()
    } else {
        restored
    })
}
