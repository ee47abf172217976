//! Desk-scale synthetic spoof videos.
//!
//! Every clip renders a textured face-like ellipse over a textured
//! background. Frames are produced by backward mapping: pixel `x` of frame
//! `t` shows the scene at `x - D_t(x)`, so the flow from frame `t` to `t+1`
//! is the displacement `f` solving `x + f - D_{t+1}(x + f) = x - D_t(x)`.
//!
//! * bonafide: the face region deforms non-rigidly (head sway, expansion,
//!   shear) plus small per-frame local jitter; the background is static.
//! * attack, rigid: the whole recaptured scene translates, giving exactly
//!   uniform flow.
//! * attack, static: nothing moves; flow is zero.
//!
//! Attack scenes also carry recapture artefacts (compressed contrast, a
//! colour cast and a moire grating) so that single RGB frames are
//! informative on their own.

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, DatasetManifest, ManifestSource};
use super::{flow_path, frame_path, write_flo, ClipRecord, Label, Split};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flow::FlowField;
use crate::image::Image;
use crate::seed::stream_rng;

/// Upper bound on the mean absolute photometric error (intensity in [0,1])
/// when frame `t+1` is bilinearly warped back onto frame `t` with the stored
/// ground-truth flow, over pixels whose target stays inside the frame.
pub const WARP_ERROR_BOUND: f64 = 0.03;

const FIXED_POINT_ITERS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub clips_per_subject: usize,
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 6,
            clips_per_subject: 96,
            frames_per_clip: 6,
            height: 64,
            width: 64,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 3 {
            return Err(Error::Config(format!(
                "n_subjects = {} cannot form three subject-disjoint splits (need at least 3)",
                self.n_subjects
            )));
        }
        if self.clips_per_subject < 2 {
            return Err(Error::Config(
                "clips_per_subject must be at least 2 so every subject has both classes".into(),
            ));
        }
        if self.frames_per_clip < 4 {
            return Err(Error::Config("frames_per_clip must be at least 4".into()));
        }
        if self.height < 64 || self.width < 64 {
            return Err(Error::Config("synthetic resolution must be at least 64x64".into()));
        }
        Ok(())
    }

    /// Split of the subject with the given index: the last third goes to
    /// test, the third before it to dev, the rest to train.
    pub fn split_of(&self, subject: usize) -> Split {
        let n_test = self.n_subjects / 3;
        let n_dev = self.n_subjects / 3;
        let n_train = self.n_subjects - n_test - n_dev;
        if subject < n_train {
            Split::Train
        } else if subject < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Rigid,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClipKind {
    Bonafide,
    Attack(AttackKind),
}

impl ClipKind {
    fn for_index(j: usize, clips_per_subject: usize) -> Self {
        let n_bona = clips_per_subject.div_ceil(2);
        if j < n_bona {
            ClipKind::Bonafide
        } else if (j - n_bona).is_multiple_of(2) {
            ClipKind::Attack(AttackKind::Rigid)
        } else {
            ClipKind::Attack(AttackKind::Static)
        }
    }

    fn tag(self) -> &'static str {
        match self {
            ClipKind::Bonafide => "bona",
            ClipKind::Attack(AttackKind::Rigid) => "rigid",
            ClipKind::Attack(AttackKind::Static) => "static",
        }
    }

    fn label(self) -> Label {
        match self {
            ClipKind::Bonafide => Label::Bonafide,
            ClipKind::Attack(_) => Label::Attack,
        }
    }
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    kx: f32,
    ky: f32,
    phase: f32,
    amp: [f32; 3],
}

impl Wave {
    fn random<R: Rng>(rng: &mut R, min_period: f32, max_period: f32, amp: f32) -> Self {
        let period = rng.random_range(min_period..max_period);
        let angle = rng.random_range(0.0..PI);
        let k = 2.0 * PI / period;
        let a = rng.random_range(0.3..1.0) * amp;
        Self {
            kx: k * angle.cos(),
            ky: k * angle.sin(),
            phase: rng.random_range(0.0..2.0 * PI),
            amp: [
                a * rng.random_range(0.6..1.0),
                a * rng.random_range(0.6..1.0),
                a * rng.random_range(0.6..1.0),
            ],
        }
    }

    fn eval(&self, x: f32, y: f32) -> f32 {
        (self.kx * x + self.ky * y + self.phase).sin()
    }
}

#[derive(Debug, Clone)]
struct Recapture {
    contrast: f32,
    offset: [f32; 3],
    moire: Wave,
}

#[derive(Debug, Clone)]
struct Scene {
    bg: [f32; 3],
    bg_waves: [Wave; 2],
    center: (f32, f32),
    radii: (f32, f32),
    skin: [f32; 3],
    skin_waves: [Wave; 2],
    feature_color: [f32; 3],
    gain: f32,
    recapture: Option<Recapture>,
}

impl Scene {
    fn color(&self, x: f32, y: f32) -> [f32; 3] {
        let (cx, cy) = self.center;
        let (rx, ry) = self.radii;
        let ellipse = |ex: f32, ey: f32, ax: f32, ay: f32| {
            (((x - ex) / ax).powi(2) + ((y - ey) / ay).powi(2)).sqrt()
        };
        let r = ellipse(cx, cy, rx, ry);
        let edge = 1.5 / rx.min(ry);
        let face = 1.0 - smoothstep(1.0 - edge, 1.0 + edge, r);
        let eyes = [
            ellipse(cx - 0.4 * rx, cy - 0.25 * ry, 0.2 * rx, 0.12 * ry),
            ellipse(cx + 0.4 * rx, cy - 0.25 * ry, 0.2 * rx, 0.12 * ry),
        ];
        let mouth = ellipse(cx, cy + 0.45 * ry, 0.38 * rx, 0.09 * ry);
        let features = eyes
            .iter()
            .chain(std::iter::once(&mouth))
            .map(|&d| 1.0 - smoothstep(0.7, 1.1, d))
            .fold(0.0f32, f32::max);

        let mut out = [0.0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let bg = self.bg[c] + self.bg_waves.iter().map(|w| w.amp[c] * w.eval(x, y)).sum::<f32>();
            let mut skin =
                self.skin[c] + self.skin_waves.iter().map(|w| w.amp[c] * w.eval(x, y)).sum::<f32>();
            skin += (self.feature_color[c] - skin) * features;
            let mut v = (bg + (skin - bg) * face) * self.gain;
            if let Some(rc) = &self.recapture {
                v = rc.offset[c] + rc.contrast * v + rc.moire.amp[c] * rc.moire.eval(x, y);
            }
            *o = v.clamp(0.0, 1.0);
        }
        out
    }
}

/// Per-frame coefficients of the bonafide deformation field.
#[derive(Debug, Clone, Copy, Default)]
struct Deform {
    gx: f32,
    gy: f32,
    expand: f32,
    shear: f32,
    sway_x: f32,
    sway_y: f32,
    jitter: [f32; 4],
}

#[derive(Debug, Clone)]
enum Motion {
    NonRigid {
        center: (f32, f32),
        radii: (f32, f32),
        frames: Vec<Deform>,
    },
    Rigid {
        offsets: Vec<(f32, f32)>,
    },
    Static,
}

impl Motion {
    /// Displacement `D_t` at pixel position (x, y).
    fn displacement(&self, t: usize, x: f32, y: f32) -> (f32, f32) {
        match self {
            Motion::Static => (0.0, 0.0),
            Motion::Rigid { offsets } => offsets[t],
            Motion::NonRigid {
                center,
                radii,
                frames,
            } => {
                let d = frames[t];
                let u = (x - center.0) / radii.0;
                let v = (y - center.1) / radii.1;
                let r = (u * u + v * v).sqrt();
                let w = 1.0 - smoothstep(0.85, 1.4, r);
                if w == 0.0 {
                    return (0.0, 0.0);
                }
                let j = d.jitter;
                let dx = d.gx
                    + 2.0 * d.expand * u
                    + 1.5 * d.shear * v
                    + 1.5 * d.sway_x * (PI * v).sin()
                    + 0.4 * j[0] * (2.5 * PI * u + 1.3).sin()
                    + 0.4 * j[1] * (2.5 * PI * v + 0.7).sin();
                let dy = d.gy
                    + 2.0 * d.expand * v
                    + 1.5 * d.sway_y * (PI * u).sin()
                    + 0.4 * j[2] * (2.5 * PI * u).cos()
                    + 0.4 * j[3] * (2.5 * PI * (u + v)).sin();
                (w * dx, w * dy)
            }
        }
    }

    fn flow(&self, t: usize, height: usize, width: usize) -> FlowField {
        match self {
            Motion::Static => FlowField::zeros(height, width),
            Motion::Rigid { offsets } => {
                let (a, b) = (offsets[t], offsets[t + 1]);
                FlowField::uniform(height, width, b.0 - a.0, b.1 - a.1)
            }
            Motion::NonRigid { .. } => FlowField::from_fn(height, width, |py, px| {
                let (x, y) = (px as f32, py as f32);
                let (d0x, d0y) = self.displacement(t, x, y);
                let (ax, ay) = (x - d0x, y - d0y);
                let (mut qx, mut qy) = (x, y);
                for _ in 0..FIXED_POINT_ITERS {
                    let (dx, dy) = self.displacement(t + 1, qx, qy);
                    qx = ax + dx;
                    qy = ay + dy;
                }
                (qx - x, qy - y)
            }),
        }
    }
}

fn random_walk<R: Rng>(rng: &mut R, n: usize, step: f32, limit: f32) -> Vec<f32> {
    let normal = Normal::new(0.0f32, step).expect("positive std");
    let mut x = 0.0f32;
    (0..n)
        .map(|_| {
            x = (x + normal.sample(rng)).clamp(-limit, limit);
            x
        })
        .collect()
}

struct ClipPlan {
    record: ClipRecord,
    kind: ClipKind,
    subject_index: usize,
    clip_index: usize,
}

fn subject_scene_base(cfg: &SynthConfig, subject: usize) -> Scene {
    let mut rng = stream_rng(&[cfg.seed, 1, subject as u64]);
    let (w, h) = (cfg.width as f32, cfg.height as f32);
    let tone = rng.random_range(0.35..0.85);
    Scene {
        bg: [
            rng.random_range(0.15..0.8),
            rng.random_range(0.15..0.8),
            rng.random_range(0.15..0.8),
        ],
        bg_waves: [
            Wave::random(&mut rng, 12.0, 30.0, 0.12),
            Wave::random(&mut rng, 10.0, 24.0, 0.08),
        ],
        center: (w / 2.0, h / 2.0),
        radii: (
            w * rng.random_range(0.22..0.28),
            h * rng.random_range(0.30..0.36),
        ),
        skin: [tone + 0.1, tone * 0.8, tone * 0.65],
        skin_waves: [
            Wave::random(&mut rng, 11.0, 18.0, 0.05),
            Wave::random(&mut rng, 10.0, 16.0, 0.04),
        ],
        feature_color: [0.12, 0.08, 0.08],
        gain: 1.0,
        recapture: None,
    }
}

fn clip_scene_and_motion(cfg: &SynthConfig, plan: &ClipPlan) -> (Scene, Motion) {
    let mut scene = subject_scene_base(cfg, plan.subject_index);
    let mut rng = stream_rng(&[cfg.seed, 2, plan.subject_index as u64, plan.clip_index as u64]);
    let (w, h) = (cfg.width as f32, cfg.height as f32);
    scene.center.0 += rng.random_range(-0.08..0.08) * w;
    scene.center.1 += rng.random_range(-0.06..0.06) * h;
    scene.gain = rng.random_range(0.85..1.15);
    // Each clip is its own recording session: the backdrop changes, the
    // face does not.
    scene.bg = std::array::from_fn(|_| rng.random_range(0.15..0.8));
    scene.bg_waves = [
        Wave::random(&mut rng, 12.0, 30.0, 0.12),
        Wave::random(&mut rng, 10.0, 24.0, 0.08),
    ];

    let n = cfg.frames_per_clip;
    let motion = match plan.kind {
        ClipKind::Bonafide => {
            let gx = random_walk(&mut rng, n, 0.8, 2.5);
            let gy = random_walk(&mut rng, n, 0.8, 2.5);
            let expand = random_walk(&mut rng, n, 0.4, 1.0);
            let shear = random_walk(&mut rng, n, 0.4, 1.0);
            let sway_x = random_walk(&mut rng, n, 0.4, 1.0);
            let sway_y = random_walk(&mut rng, n, 0.4, 1.0);
            let jitter = Normal::new(0.0f32, 1.0).expect("unit normal");
            let frames = (0..n)
                .map(|t| Deform {
                    gx: gx[t],
                    gy: gy[t],
                    expand: expand[t],
                    shear: shear[t],
                    sway_x: sway_x[t],
                    sway_y: sway_y[t],
                    jitter: std::array::from_fn(|_| jitter.sample(&mut rng).clamp(-2.0, 2.0)),
                })
                .collect();
            Motion::NonRigid {
                center: scene.center,
                radii: scene.radii,
                frames,
            }
        }
        ClipKind::Attack(kind) => {
            scene.recapture = Some(Recapture {
                contrast: rng.random_range(0.7..0.82),
                offset: [
                    rng.random_range(0.08..0.14),
                    rng.random_range(0.08..0.14),
                    rng.random_range(0.12..0.2),
                ],
                moire: {
                    // A display grating is strong and achromatic, unlike
                    // the faint tinted textures of real scenes.
                    let mut w = Wave::random(&mut rng, 5.0, 7.0, 1.0);
                    w.amp = [rng.random_range(0.14..0.2); 3];
                    w
                },
            });
            match kind {
                AttackKind::Static => Motion::Static,
                AttackKind::Rigid => {
                    let mut offsets = Vec::with_capacity(n);
                    let mut c = (0.0f32, 0.0f32);
                    offsets.push(c);
                    for _ in 1..n {
                        let angle = rng.random_range(0.0..2.0 * PI);
                        let mag = rng.random_range(0.7..2.0);
                        c = (c.0 + mag * angle.cos(), c.1 + mag * angle.sin());
                        offsets.push(c);
                    }
                    Motion::Rigid { offsets }
                }
            }
        }
    };
    (scene, motion)
}

fn render_frame(scene: &Scene, motion: &Motion, t: usize, height: usize, width: usize) -> Image {
    let mut img = Image::new(height, width, 3);
    for py in 0..height {
        for px in 0..width {
            let (x, y) = (px as f32, py as f32);
            let (dx, dy) = motion.displacement(t, x, y);
            let c = scene.color(x - dx, y - dy);
            for (ch, v) in c.iter().enumerate() {
                img.set(py, px, ch, *v);
            }
        }
    }
    img
}

fn write_clip(cfg: &SynthConfig, plan: &ClipPlan) -> Result<()> {
    let dir = &plan.record.dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (scene, motion) = clip_scene_and_motion(cfg, plan);
    for t in 0..cfg.frames_per_clip {
        render_frame(&scene, &motion, t, cfg.height, cfg.width).save_png(&frame_path(dir, t))?;
        if t + 1 < cfg.frames_per_clip {
            write_flo(&flow_path(dir, t), &motion.flow(t, cfg.height, cfg.width))?;
        }
    }
    Ok(())
}

/// Renders the dataset under `out_dir` in the
/// `<split>/<label>/<subject_id>/<clip_id>/` layout, writes `manifest.csv`
/// and returns the manifest. Identical configs give bit-identical files.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: &Path, exec: Exec) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let root: PathBuf = out_dir.to_path_buf();

    let mut plans = Vec::with_capacity(cfg.n_subjects * cfg.clips_per_subject);
    for s in 0..cfg.n_subjects {
        let subject_id = format!("s{s:02}");
        let split = cfg.split_of(s);
        for j in 0..cfg.clips_per_subject {
            let kind = ClipKind::for_index(j, cfg.clips_per_subject);
            let label = kind.label();
            let clip_id = format!("{subject_id}_c{j:03}_{}", kind.tag());
            let dir = root
                .join(split.as_str())
                .join(label.as_str())
                .join(&subject_id)
                .join(&clip_id);
            plans.push(ClipPlan {
                record: ClipRecord {
                    clip_id,
                    dir,
                    label,
                    subject_id: subject_id.clone(),
                    split,
                    n_frames: cfg.frames_per_clip,
                    fps: 30.0,
                },
                kind,
                subject_index: s,
                clip_index: j,
            });
        }
    }

    exec.try_map(&plans, |p| write_clip(cfg, p))?;
    let manifest = DatasetManifest::new(
        root,
        plans.into_iter().map(|p| p.record).collect(),
        ManifestSource::Synthetic,
    )?;
    write_manifest(&manifest)?;
    Ok(manifest)
}
