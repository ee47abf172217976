//! Adapter for a pretrained flow network run as a separate process.
//!
//! The command is invoked as `<command...> <reference.png> <adjacent.png>
//! <output.flo>`. Inputs are prepared with [`adapt_for_engine`] (0–255
//! range, landscape, multiples of 32) and the returned field is mapped back
//! with [`restore_flow`].

use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{adapt_for_engine, restore_flow, FlowEngine, FlowField, PairContext};
use crate::error::{Error, Result};
use crate::image::{Image, PixelRange};
use crate::ingest::read_flo;

static CALLS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct ExternalEngine {
    command: Vec<String>,
    label: String,
}

impl ExternalEngine {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.split_whitespace().map(str::to_string).collect(),
            label: format!("external:{command}"),
        }
    }

    fn scratch_dir() -> Result<PathBuf> {
        let n = CALLS.fetch_add(1, Ordering::Relaxed);
        let dir = std::env::temp_dir().join(format!("facepad-flow-{}-{n}", std::process::id()));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

impl FlowEngine for ExternalEngine {
    fn name(&self) -> &str {
        &self.label
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn estimate(
        &self,
        reference: &Image,
        adjacent: &Image,
        range: PixelRange,
        ctx: &PairContext<'_>,
    ) -> Result<FlowField> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| Error::EngineUnavailable("empty external command".into()))?;
        let (a, b, record) = adapt_for_engine(reference, adjacent, range)?;
        let dir = Self::scratch_dir()?;
        let (pa, pb, out) = (dir.join("a.png"), dir.join("b.png"), dir.join("flow.flo"));
        // prepared images are in 0–255; PNG storage wants [0,1]
        a.map(|v| v / 255.0).save_png(&pa)?;
        b.map(|v| v / 255.0).save_png(&pb)?;

        let status = Command::new(program)
            .args(args)
            .arg(&pa)
            .arg(&pb)
            .arg(&out)
            .status()
            .map_err(|e| Error::EngineUnavailable(format!("{}: {e}", self.label)))?;
        let result = if status.success() {
            read_flo(&out).and_then(|f| restore_flow(&f, &record))
        } else {
            Err(Error::EngineUnavailable(format!(
                "{} exited with {status} on clip '{}'",
                self.label, ctx.clip_id
            )))
        };
        let _ = std::fs::remove_dir_all(&dir);
        result
    }
}
