use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{frame_path, ClipRecord, Label, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
const DEFAULT_FPS: f32 = 30.0;
const VIDEO_EXTENSIONS: [&str; 5] = ["mp4", "avi", "mov", "mkv", "webm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifestSource {
    Synthetic,
    FolderLayout,
}

impl ManifestSource {
    fn as_str(self) -> &'static str {
        match self {
            ManifestSource::Synthetic => "synthetic",
            ManifestSource::FolderLayout => "folder-layout",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub bonafide: usize,
    pub attack: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.bonafide + self.attack
    }
}

/// Validated list of clips, sorted by clip id. Holds paths, not pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub clips: Vec<ClipRecord>,
    pub source: ManifestSource,
}

impl DatasetManifest {
    pub fn new(root: PathBuf, mut clips: Vec<ClipRecord>, source: ManifestSource) -> Result<Self> {
        clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let m = Self { root, clips, source };
        m.validate()?;
        Ok(m)
    }

    pub fn clips_in(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn counts(&self) -> BTreeMap<Split, SplitCounts> {
        let mut out: BTreeMap<Split, SplitCounts> =
            Split::ALL.iter().map(|&s| (s, SplitCounts::default())).collect();
        for c in &self.clips {
            let e = out.entry(c.split).or_default();
            match c.label {
                Label::Bonafide => e.bonafide += 1,
                Label::Attack => e.attack += 1,
            }
        }
        out
    }

    pub fn subjects(&self, split: Split) -> BTreeSet<&str> {
        self.clips_in(split).map(|c| c.subject_id.as_str()).collect()
    }

    /// Re-checks every manifest invariant: unique ids, at least two frames
    /// per clip, subject-disjoint splits, both classes in train and test.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.clips {
            if !seen.insert(c.clip_id.as_str()) {
                return Err(Error::Format(format!("duplicate clip id '{}'", c.clip_id)));
            }
            if c.n_frames < 2 {
                return Err(Error::ClipTooShort {
                    clip_id: c.clip_id.clone(),
                    len: c.n_frames,
                    needed: 2,
                });
            }
        }

        let mut splits_of: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for c in &self.clips {
            splits_of.entry(&c.subject_id).or_default().insert(c.split);
        }
        let offending: Vec<String> = splits_of
            .iter()
            .filter(|(_, s)| s.len() > 1)
            .map(|(id, _)| id.to_string())
            .collect();
        if !offending.is_empty() {
            return Err(Error::ProtocolViolation {
                subjects: offending,
            });
        }

        let counts = self.counts();
        for split in [Split::Train, Split::Test] {
            let c = counts[&split];
            if c.bonafide == 0 || c.attack == 0 {
                return Err(Error::EmptySplit {
                    split: split.to_string(),
                    detail: format!(
                        "needs both classes, found {} bonafide / {} attack",
                        c.bonafide, c.attack
                    ),
                });
            }
        }
        Ok(())
    }
}

fn count_frames(dir: &Path) -> usize {
    (0..).take_while(|&t| frame_path(dir, t).is_file()).count()
}

/// Writes `manifest.csv` under `m.root` (one record per line:
/// clip_id, relative path, label, subject_id, split).
pub fn write_manifest(m: &DatasetManifest) -> Result<PathBuf> {
    let path = m.root.join(MANIFEST_FILE);
    let mut out = format!("# source={}\n", m.source.as_str());
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["clip_id", "path", "label", "subject_id", "split"])
        .map_err(io)?;
    for c in &m.clips {
        let rel = c.dir.strip_prefix(&m.root).unwrap_or(&c.dir);
        let rel = rel.to_string_lossy().replace('\\', "/");
        w.write_record([
            c.clip_id.as_str(),
            rel.as_str(),
            c.label.as_str(),
            c.subject_id.as_str(),
            c.split.as_str(),
        ])
        .map_err(io)?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    out.push_str(&String::from_utf8_lossy(&body));
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a manifest file, a directory containing `manifest.csv`, or a bare
/// `<split>/<label>/<subject_id>/<clip_id>/frame_%04d.png` tree.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if path.is_dir() {
        let file = path.join(MANIFEST_FILE);
        if file.is_file() {
            parse_manifest_file(&file)
        } else {
            scan_folder_layout(path)
        }
    } else if path.is_file() {
        parse_manifest_file(path)
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
        ))
    }
}

fn parse_manifest_file(file: &Path) -> Result<DatasetManifest> {
    let root = file
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    let mut source = ManifestSource::FolderLayout;
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("source=") {
                source = match v.trim() {
                    "synthetic" => ManifestSource::Synthetic,
                    "folder-layout" => ManifestSource::FolderLayout,
                    other => return Err(Error::Format(format!("unknown manifest source '{other}'"))),
                };
            }
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }

    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let mut clips = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", file.display())))?;
        if rec.len() != 5 {
            return Err(Error::Format(format!(
                "{} record {}: expected 5 fields, found {}",
                file.display(),
                i + 1,
                rec.len()
            )));
        }
        let dir = root.join(&rec[1]);
        if !dir.is_dir() {
            return Err(Error::io(
                &dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "clip directory missing"),
            ));
        }
        clips.push(ClipRecord {
            clip_id: rec[0].to_string(),
            n_frames: count_frames(&dir),
            dir,
            label: rec[2].parse()?,
            subject_id: rec[3].to_string(),
            split: rec[4].parse()?,
            fps: DEFAULT_FPS,
        });
    }
    DatasetManifest::new(root, clips, source)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            out.push(p);
        } else if p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| VIDEO_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            return Err(Error::Unsupported(format!(
                "{}: video containers are not decoded; extract frames to frame_%04d.png",
                p.display()
            )));
        }
    }
    out.sort();
    Ok(out)
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn scan_folder_layout(root: &Path) -> Result<DatasetManifest> {
    let mut clips = Vec::new();
    for split_dir in sorted_subdirs(root)? {
        let Ok(split) = dir_name(&split_dir).parse::<Split>() else {
            continue;
        };
        for label_dir in sorted_subdirs(&split_dir)? {
            let label: Label = dir_name(&label_dir).parse()?;
            for subject_dir in sorted_subdirs(&label_dir)? {
                let subject_id = dir_name(&subject_dir);
                for clip_dir in sorted_subdirs(&subject_dir)? {
                    clips.push(ClipRecord {
                        clip_id: dir_name(&clip_dir),
                        n_frames: count_frames(&clip_dir),
                        dir: clip_dir,
                        label,
                        subject_id: subject_id.clone(),
                        split,
                        fps: DEFAULT_FPS,
                    });
                }
            }
        }
    }
    DatasetManifest::new(root.to_path_buf(), clips, ManifestSource::FolderLayout)
}
