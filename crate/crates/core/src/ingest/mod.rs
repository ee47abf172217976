//! Clips, frame-pair sampling, subject-disjoint manifests and the synthetic
//! spoof-video generator.

mod flo;
mod manifest;
mod synth;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::Image;

pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, ManifestSource, SplitCounts};
pub use synth::{
    generate_synthetic_dataset, AttackKind, SynthConfig, WARP_ERROR_BOUND,
};

/// Binary class. The discriminant is the class index used by the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Attack = 0,
    Bonafide = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Label::Attack),
            1 => Ok(Label::Bonafide),
            other => Err(Error::Format(format!("label index {other} is not 0 or 1"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Attack => "attack",
            Label::Bonafide => "bonafide",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "attack" | "spoof" | "0" => Ok(Label::Attack),
            "bonafide" | "real" | "live" | "1" => Ok(Label::Bonafide),
            other => Err(Error::Format(format!("unknown label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "devel" | "val" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split '{other}'"))),
        }
    }
}

/// One labelled clip as referenced by a manifest. Pixels live in
/// [`ClipData`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    /// Directory holding `frame_%04d.png` (and optionally `flow_%04d.flo`).
    pub dir: PathBuf,
    pub label: Label,
    pub subject_id: String,
    pub split: Split,
    pub n_frames: usize,
    pub fps: f32,
}

impl ClipRecord {
    pub fn frame_path(&self, t: usize) -> PathBuf {
        frame_path(&self.dir, t)
    }

    pub fn flow_path(&self, t: usize) -> PathBuf {
        flow_path(&self.dir, t)
    }

    pub fn load(&self) -> Result<ClipData> {
        if self.n_frames < 2 {
            return Err(Error::ClipTooShort {
                clip_id: self.clip_id.clone(),
                len: self.n_frames,
                needed: 2,
            });
        }
        let frames = (0..self.n_frames)
            .map(|t| Image::load_png(&self.frame_path(t)))
            .collect::<Result<Vec<_>>>()?;
        let dims = frames[0].dims();
        if let Some(t) = frames.iter().position(|f| f.dims() != dims) {
            return Err(Error::Format(format!(
                "clip '{}': frame {t} is {:?}, expected {:?}",
                self.clip_id,
                frames[t].dims(),
                dims
            )));
        }
        Ok(ClipData {
            record: self.clone(),
            frames,
        })
    }
}

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t:04}.png"))
}

pub fn flow_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("flow_{t:04}.flo"))
}

/// A clip with its decoded frames. Immutable once loaded.
#[derive(Debug, Clone)]
pub struct ClipData {
    pub record: ClipRecord,
    pub frames: Vec<Image>,
}

impl ClipData {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Decodes every clip of a split, in manifest order.
pub fn load_split(manifest: &DatasetManifest, split: Split, exec: Exec) -> Result<Vec<ClipData>> {
    let records: Vec<&ClipRecord> = manifest.clips_in(split).collect();
    exec.try_map(&records, |r| r.load())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Eval,
}

/// Reference frame at `t` and its neighbour at `t + delta_t`.
#[derive(Debug, Clone, Copy)]
pub struct FramePair<'a> {
    pub reference: &'a Image,
    pub adjacent: &'a Image,
    pub t: usize,
    pub delta_t: usize,
}

/// Picks the frame pair for one sample: uniform `t` over every valid index
/// when training, the first frame at inference.
pub fn sample_pair<'a, R: Rng + ?Sized>(
    clip: &'a ClipData,
    mode: SampleMode,
    delta_t: usize,
    rng: &mut R,
) -> Result<FramePair<'a>> {
    if delta_t == 0 {
        return Err(Error::Contract("delta_t must be at least 1".into()));
    }
    let len = clip.len();
    if len < delta_t + 1 {
        return Err(Error::ClipTooShort {
            clip_id: clip.record.clip_id.clone(),
            len,
            needed: delta_t + 1,
        });
    }
    let t = match mode {
        SampleMode::Eval => 0,
        SampleMode::Train => rng.random_range(0..len - delta_t),
    };
    Ok(FramePair {
        reference: &clip.frames[t],
        adjacent: &clip.frames[t + delta_t],
        t,
        delta_t,
    })
}
