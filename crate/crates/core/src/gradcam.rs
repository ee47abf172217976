//! Class-activation maps for the bonafide logit, one per input branch.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::PadModel;
use crate::preprocess::{apply_to_image, denormalize_rgb, normalize_rgb, NormStats, SamplePair, SyncAugParams};

/// Which conv stage to explain. `last` is the deepest stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSelector {
    Last,
    Stage(usize),
}

impl LayerSelector {
    pub fn parse(s: &str, n_stages: usize) -> Result<Self> {
        let available = || {
            let mut v: Vec<String> = (1..=n_stages).map(|i| format!("stage{i}")).collect();
            v.push("last".into());
            v
        };
        let s = s.trim();
        if s == "last" {
            return Ok(LayerSelector::Last);
        }
        match s.strip_prefix("stage").and_then(|n| n.parse::<usize>().ok()) {
            Some(n) if (1..=n_stages).contains(&n) => Ok(LayerSelector::Stage(n)),
            _ => Err(Error::LayerNotFound {
                requested: s.to_string(),
                available: available(),
            }),
        }
    }

    fn index(self, n_stages: usize) -> usize {
        match self {
            LayerSelector::Last => n_stages - 1,
            LayerSelector::Stage(n) => n - 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CamMap {
    pub branch: String,
    pub layer: String,
    /// Heat in [0,1], ρ×ρ row-major.
    pub heat: Image,
    /// The branch input the heat refers to, in displayable [0,1] form.
    pub base: Image,
}

impl CamMap {
    pub fn overlay(&self, alpha: f32) -> Image {
        overlay(&self.base, &self.heat, alpha)
    }
}

/// Grad-CAM for every branch of `model` on one prepared sample.
pub fn grad_cam(model: &dyn PadModel, sample: &SamplePair, layer: &str, norm: &NormStats) -> Result<Vec<CamMap>> {
    let net = model.network();
    let n_stages = net.encoders().first().map_or(0, |e| e.stages().len());
    if n_stages == 0 {
        return Err(Error::LayerNotFound {
            requested: layer.to_string(),
            available: Vec::new(),
        });
    }
    let stage = LayerSelector::parse(layer, n_stages)?.index(n_stages);
    let side = sample.side;
    let inputs = model.inputs(sample);
    let trace = net.forward_sample(&inputs, side, None)?;

    let mut maps = Vec::new();
    for (b, name) in model.branch_names().iter().enumerate() {
        let mut scratch = vec![0.0f32; net.params().len()];
        let grad = net
            .backward_sample(&trace, [0.0, 1.0], &mut scratch, Some((b, stage)))
            .ok_or_else(|| Error::Contract(format!("no activation gradient for branch '{name}'")))?;
        let st = &trace.encoders[b].stages[stage];
        let (h, w) = st.out_hw;
        let n = h * w;
        let mut cam = vec![0.0f32; n];
        for (a, g) in st.act.chunks_exact(n).zip(grad.chunks_exact(n)) {
            let weight = g.iter().sum::<f32>() / n as f32;
            cam.iter_mut().zip(a).for_each(|(c, &v)| *c += weight * v);
        }
        cam.iter_mut().for_each(|c| *c = c.max(0.0));
        let peak = cam.iter().copied().fold(0.0f32, f32::max);
        if peak > 0.0 {
            cam.iter_mut().for_each(|c| *c /= peak);
        }
        let heat = Image::from_vec(h, w, 1, cam)?.resize(side, side).map(|v| v.clamp(0.0, 1.0));
        let base = match *name {
            "flow" => Image::from_chw(side, side, 3, &sample.flow_img)?,
            _ => denormalize_rgb(&sample.rgb, side, side, norm)?.map(|v| v.clamp(0.0, 1.0)),
        };
        maps.push(CamMap {
            branch: name.to_string(),
            layer: format!("{name}.stage{}", stage + 1),
            heat,
            base,
        });
    }
    Ok(maps)
}

/// Model input for a still image: centre square crop, resize, normalize.
/// Only meaningful for RGB-only models.
pub fn sample_from_image(img: &Image, side: usize, norm: &NormStats, id: &str) -> Result<SamplePair> {
    if img.channels() != 3 {
        return Err(Error::Format(format!("expected an RGB image, got {} channels", img.channels())));
    }
    let params = SyncAugParams::deterministic(img.height(), img.width(), side);
    Ok(SamplePair {
        rgb: normalize_rgb(&apply_to_image(img, &params), norm),
        flow_img: Vec::new(),
        side,
        label: crate::ingest::Label::Bonafide,
        clip_id: id.to_string(),
    })
}

/// Blue → cyan → yellow → red ramp.
fn heat_color(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b]
}

pub fn overlay(base: &Image, heat: &Image, alpha: f32) -> Image {
    Image::from_fn(base.height(), base.width(), 3, |y, x, c| {
        (1.0 - alpha) * base.get(y, x, c) + alpha * heat_color(heat.get(y, x, 0))[c]
    })
}

/// Writes `<stem>_<branch>.png` overlays next to `out`.
pub fn write_overlays(maps: &[CamMap], out: &Path, alpha: f32) -> Result<Vec<PathBuf>> {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("gradcam");
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    maps.iter()
        .map(|m| {
            let path = dir.join(format!("{stem}_{}.png", m.branch));
            m.overlay(alpha).save_png(&path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Label;
    use crate::models::{ArchConfig, StudentModel, TeacherModel};

    fn arch() -> ArchConfig {
        ArchConfig {
            channels: vec![4, 8, 8],
            head_hidden: 8,
            ..ArchConfig::default()
        }
    }

    fn sample(side: usize, rgb: f32, flow: f32) -> SamplePair {
        SamplePair {
            rgb: vec![rgb; 3 * side * side],
            flow_img: vec![flow; 3 * side * side],
            side,
            label: Label::Attack,
            clip_id: "c".into(),
        }
    }

    #[test]
    fn selector_parses_and_lists_layers() {
        assert_eq!(LayerSelector::parse("last", 3).unwrap(), LayerSelector::Last);
        assert_eq!(LayerSelector::parse("stage2", 3).unwrap(), LayerSelector::Stage(2));
        let err = LayerSelector::parse("stage9", 3).unwrap_err().to_string();
        assert!(err.contains("stage1, stage2, stage3, last"), "{err}");
    }

    #[test]
    fn branch_counts() {
        let t = TeacherModel::new(&arch(), 1).unwrap();
        let s = StudentModel::new(&arch(), 1).unwrap();
        let x = sample(16, 0.3, 0.8);
        let norm = NormStats::default();
        assert_eq!(grad_cam(&t, &x, "last", &norm).unwrap().len(), 2);
        assert_eq!(grad_cam(&s, &x, "stage1", &norm).unwrap().len(), 1);
    }

    #[test]
    fn heat_is_normalized_and_constant_input_is_flat() {
        let s = StudentModel::new(&arch(), 5).unwrap();
        for layer in ["stage1", "stage2", "last"] {
            let m = &grad_cam(&s, &sample(16, 0.4, 0.0), layer, &NormStats::default()).unwrap()[0];
            let (lo, hi) = m.heat.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            assert!(lo >= 0.0 && hi <= 1.0);
            assert!(hi - lo < 0.2, "{layer}: spread {}", hi - lo);
        }
    }

    #[test]
    fn structured_input_gives_spatial_heat() {
        let s = StudentModel::new(&arch(), 5).unwrap();
        let side = 16;
        let mut x = sample(side, 0.0, 0.0);
        for (i, v) in x.rgb.iter_mut().enumerate() {
            let p = i % (side * side);
            *v = if (p / side) < side / 2 { 2.0 } else { -2.0 };
        }
        let m = &grad_cam(&s, &x, "stage1", &NormStats::default()).unwrap()[0];
        assert_eq!(m.heat.dims(), (side, side));
        assert_eq!(m.overlay(0.4).dims(), (side, side));
    }
}
