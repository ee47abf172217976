//! Synchronized geometry for the RGB frame and its flow: centre square crop,
//! resize to ρ×ρ, and (training only) a shared in-plane rotation and
//! isotropic scale.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{colorwheel_encode, FlowField, FlowNormalization};
use crate::image::{sample_zero_padded, Image};
use crate::ingest::{Label, SampleMode};

/// Where flow gets colour-encoded relative to the geometric transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineOrder {
    /// Transform the raw vectors (rotating and scaling them too), then encode.
    RawFlow,
    /// Encode first, then transform the flow image as plain pixels.
    Encoded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for NormStats {
    /// ImageNet channel statistics.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub side: usize,
    /// Rotation is drawn uniformly from ±`max_rotation_deg`.
    pub max_rotation_deg: f32,
    pub scale_range: (f32, f32),
    pub order: PipelineOrder,
    pub flow_normalization: FlowNormalization,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            side: 224,
            max_rotation_deg: 10.0,
            scale_range: (0.9, 1.1),
            order: PipelineOrder::RawFlow,
            flow_normalization: FlowNormalization::PerImageMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    pub y0: usize,
    pub x0: usize,
    pub side: usize,
}

/// One draw of augmentation parameters, shared by both modalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncAugParams {
    pub rotation_deg: f32,
    pub scale: f32,
    pub crop: CropRecord,
    pub target_side: usize,
}

impl SyncAugParams {
    pub fn deterministic(height: usize, width: usize, side: usize) -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 1.0,
            crop: square_crop_record(height, width),
            target_side: side,
        }
    }

    pub fn is_identity_warp(&self) -> bool {
        self.rotation_deg == 0.0 && self.scale == 1.0
    }

    pub fn sample<R: Rng + ?Sized>(
        mode: SampleMode,
        height: usize,
        width: usize,
        cfg: &AugmentConfig,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::deterministic(height, width, cfg.side);
        if mode == SampleMode::Train {
            let r = cfg.max_rotation_deg.abs();
            if r > 0.0 {
                p.rotation_deg = rng.random_range(-r..=r);
            }
            let (lo, hi) = cfg.scale_range;
            if hi > lo {
                p.scale = rng.random_range(lo..=hi);
            }
        }
        p
    }
}

/// Rasters that take part in synchronized geometry.
pub trait Raster: Sized {
    fn dims(&self) -> (usize, usize);
    fn crop_to(&self, crop: &CropRecord) -> Self;
    /// Bilinear resize; flow magnitudes are rescaled with the grid.
    fn resize_corrected(&self, height: usize, width: usize) -> Self;
}

impl Raster for Image {
    fn dims(&self) -> (usize, usize) {
        Image::dims(self)
    }

    fn crop_to(&self, c: &CropRecord) -> Self {
        self.crop(c.y0, c.x0, c.side, c.side)
    }

    fn resize_corrected(&self, height: usize, width: usize) -> Self {
        self.resize(height, width)
    }
}

impl Raster for FlowField {
    fn dims(&self) -> (usize, usize) {
        FlowField::dims(self)
    }

    fn crop_to(&self, c: &CropRecord) -> Self {
        self.crop(c.y0, c.x0, c.side, c.side)
    }

    fn resize_corrected(&self, height: usize, width: usize) -> Self {
        let (h, w) = FlowField::dims(self);
        self.resample(height, width)
            .scale_components(width as f64 / w as f64, height as f64 / h as f64)
    }
}

pub fn square_crop_record(height: usize, width: usize) -> CropRecord {
    let side = height.min(width);
    CropRecord {
        y0: (height - side) / 2,
        x0: (width - side) / 2,
        side,
    }
}

/// Largest centred square. Flow vectors are carried over unchanged.
pub fn center_square_crop<T: Raster>(input: &T) -> (T, CropRecord) {
    let (h, w) = input.dims();
    let rec = square_crop_record(h, w);
    (input.crop_to(&rec), rec)
}

pub fn resize_with_flow_correction<T: Raster>(input: &T, height: usize, width: usize) -> T {
    input.resize_corrected(height, width)
}

/// Maps an output pixel to its source position under rotation by
/// `rotation_deg` and scaling by `scale` about the image centre.
fn inverse_map(p: &SyncAugParams, side: usize) -> impl Fn(f32, f32) -> (f32, f32) {
    let theta = p.rotation_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let inv = 1.0 / p.scale;
    let centre = (side as f32 - 1.0) / 2.0;
    move |y, x| {
        let (dx, dy) = (x - centre, y - centre);
        (
            centre + inv * (-s * dx + c * dy),
            centre + inv * (c * dx + s * dy),
        )
    }
}

fn warp_image(img: &Image, p: &SyncAugParams) -> Image {
    if p.is_identity_warp() {
        return img.clone();
    }
    let side = img.height();
    let map = inverse_map(p, side);
    let ch = img.channels();
    let mut out = Image::new(side, side, ch);
    let mut px = vec![0.0; ch];
    for y in 0..side {
        for x in 0..side {
            let (sy, sx) = map(y as f32, x as f32);
            img.sample_zero(sy, sx, &mut px);
            for (c, v) in px.iter().enumerate() {
                out.set(y, x, c, *v);
            }
        }
    }
    out
}

fn warp_flow(flow: &FlowField, p: &SyncAugParams) -> FlowField {
    if p.is_identity_warp() {
        return flow.clone();
    }
    let side = flow.height();
    let map = inverse_map(p, side);
    let (s, c) = p.rotation_deg.to_radians().sin_cos();
    let k = p.scale;
    FlowField::from_fn(side, side, |y, x| {
        let (sy, sx) = map(y as f32, x as f32);
        let mut u = [0.0];
        let mut v = [0.0];
        sample_zero_padded(flow.u(), side, side, 1, sy, sx, &mut u);
        sample_zero_padded(flow.v(), side, side, 1, sy, sx, &mut v);
        (k * (c * u[0] - s * v[0]), k * (s * u[0] + c * v[0]))
    })
}

/// Crop, resize and warp a plain image with the given parameters.
pub fn apply_to_image(img: &Image, p: &SyncAugParams) -> Image {
    let side = p.target_side;
    warp_image(&img.crop_to(&p.crop).resize_corrected(side, side), p)
}

/// Crop, resize and warp raw flow, transforming the vectors as well.
pub fn apply_to_flow(flow: &FlowField, p: &SyncAugParams) -> FlowField {
    let side = p.target_side;
    warp_flow(&flow.crop_to(&p.crop).resize_corrected(side, side), p)
}

/// Aligned ρ×ρ pair before tensor conversion; both images in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub rgb: Image,
    pub flow_img: Image,
    pub params: SyncAugParams,
}

pub fn sync_augment<R: Rng + ?Sized>(
    rgb: &Image,
    flow: &FlowField,
    mode: SampleMode,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<AlignedPair> {
    if rgb.dims() != flow.dims() {
        return Err(Error::Contract(format!(
            "rgb {:?} and flow {:?} differ in resolution",
            rgb.dims(),
            flow.dims()
        )));
    }
    let (h, w) = rgb.dims();
    let params = SyncAugParams::sample(mode, h, w, cfg, rng);
    Ok(match cfg.order {
        PipelineOrder::RawFlow => AlignedPair {
            rgb: apply_to_image(rgb, &params),
            flow_img: colorwheel_encode(&apply_to_flow(flow, &params), cfg.flow_normalization),
            params,
        },
        PipelineOrder::Encoded => {
            let encoded = colorwheel_encode(flow, cfg.flow_normalization);
            sync_augment_encoded_with(rgb, &encoded, params)?
        }
    })
}

/// Encoded-order path for a flow image that is already colour-encoded (or
/// any other image standing in for it).
pub fn sync_augment_encoded<R: Rng + ?Sized>(
    rgb: &Image,
    flow_img: &Image,
    mode: SampleMode,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<AlignedPair> {
    let (h, w) = rgb.dims();
    let params = SyncAugParams::sample(mode, h, w, cfg, rng);
    sync_augment_encoded_with(rgb, flow_img, params)
}

fn sync_augment_encoded_with(rgb: &Image, flow_img: &Image, params: SyncAugParams) -> Result<AlignedPair> {
    if rgb.dims() != flow_img.dims() {
        return Err(Error::Contract(format!(
            "rgb {:?} and flow image {:?} differ in resolution",
            rgb.dims(),
            flow_img.dims()
        )));
    }
    Ok(AlignedPair {
        rgb: apply_to_image(rgb, &params),
        flow_img: apply_to_image(flow_img, &params),
        params,
    })
}

/// Planar (CHW) `(x − mean) / std` per channel.
pub fn normalize_rgb(img: &Image, stats: &NormStats) -> Vec<f32> {
    let mut chw = img.to_chw();
    let n = img.height() * img.width();
    for c in 0..3 {
        let (m, s) = (stats.mean[c], stats.std[c]);
        chw[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    chw
}

pub fn denormalize_rgb(chw: &[f32], height: usize, width: usize, stats: &NormStats) -> Result<Image> {
    let n = height * width;
    let mut buf = chw.to_vec();
    for c in 0..3 {
        let (m, s) = (stats.mean[c], stats.std[c]);
        buf[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = *v * s + m);
    }
    Image::from_chw(height, width, 3, &buf)
}

/// Model-ready sample: normalized RGB and the [0,1] flow image, both 3×ρ×ρ
/// planar.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub rgb: Vec<f32>,
    pub flow_img: Vec<f32>,
    pub side: usize,
    pub label: Label,
    pub clip_id: String,
}

impl SamplePair {
    pub fn from_aligned(aligned: &AlignedPair, stats: &NormStats, label: Label, clip_id: &str) -> Self {
        Self {
            rgb: normalize_rgb(&aligned.rgb, stats),
            flow_img: aligned.flow_img.to_chw(),
            side: aligned.rgb.height(),
            label,
            clip_id: clip_id.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::flow_hue;
    use crate::seed::stream_rng;

    fn pattern(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |y, x, c| {
            ((y as f32 * 0.37 + x as f32 * 0.11 + c as f32).sin() * 0.5 + 0.5).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn square_input_crops_to_itself() {
        let img = pattern(224, 224);
        let (out, rec) = center_square_crop(&img);
        assert_eq!(rec, CropRecord { y0: 0, x0: 0, side: 224 });
        assert_eq!(out, img);
    }

    #[test]
    fn landscape_crop_offsets() {
        let (out, rec) = center_square_crop(&pattern(100, 180));
        assert_eq!(rec, CropRecord { y0: 0, x0: 40, side: 100 });
        assert_eq!(out.dims(), (100, 100));
    }

    #[test]
    fn crop_preserves_flow_vectors() {
        let f = FlowField::uniform(30, 50, 1.25, -3.5);
        let (c, _) = center_square_crop(&f);
        assert_eq!(c, FlowField::uniform(30, 30, 1.25, -3.5));
    }

    #[test]
    fn flow_resize_rescales_vectors() {
        let f = FlowField::uniform(200, 200, 10.0, 4.0);
        let r = resize_with_flow_correction(&f, 100, 100);
        assert_eq!(r, FlowField::uniform(100, 100, 5.0, 2.0));
    }

    #[test]
    fn same_size_rgb_resize_is_identity() {
        let img = pattern(31, 31);
        assert_eq!(resize_with_flow_correction(&img, 31, 31), img);
    }

    #[test]
    fn smooth_flow_survives_down_up_resize() {
        let f = FlowField::from_fn(128, 128, |y, x| {
            let (x, y) = (x as f32 / 128.0, y as f32 / 128.0);
            (3.0 * (2.0 * x + y).sin(), 2.0 * (1.5 * y - x).cos())
        });
        let back = resize_with_flow_correction(&resize_with_flow_correction(&f, 64, 64), 128, 128);
        let epe = f.mean_epe(&back);
        assert!(epe < 0.1, "mean endpoint error {epe}");
    }

    #[test]
    fn eval_path_is_deterministic_crop_resize() {
        let rgb = pattern(48, 64);
        let flow = FlowField::from_fn(48, 64, |y, x| (x as f32 * 0.05, y as f32 * -0.03));
        let cfg = AugmentConfig {
            side: 32,
            ..AugmentConfig::default()
        };
        let a = sync_augment(&rgb, &flow, SampleMode::Eval, &mut stream_rng(&[1]), &cfg).unwrap();
        let b = sync_augment(&rgb, &flow, SampleMode::Eval, &mut stream_rng(&[2]), &cfg).unwrap();
        assert_eq!(a, b);
        let (crop, _) = center_square_crop(&rgb);
        assert_eq!(a.rgb, resize_with_flow_correction(&crop, 32, 32));
    }

    #[test]
    fn forced_identity_train_equals_eval() {
        let rgb = pattern(40, 40);
        let flow = FlowField::from_fn(40, 40, |y, x| ((x as f32).sin(), (y as f32).cos()));
        let cfg = AugmentConfig {
            side: 24,
            max_rotation_deg: 0.0,
            scale_range: (1.0, 1.0),
            ..AugmentConfig::default()
        };
        let t = sync_augment(&rgb, &flow, SampleMode::Train, &mut stream_rng(&[5]), &cfg).unwrap();
        let e = sync_augment(&rgb, &flow, SampleMode::Eval, &mut stream_rng(&[5]), &cfg).unwrap();
        assert_eq!(t, e);
    }

    #[test]
    fn impulse_lands_on_the_same_pixel_in_both_modalities() {
        let (h, w) = (40, 40);
        let mut rgb = Image::new(h, w, 3);
        for c in 0..3 {
            rgb.set(14, 25, c, 1.0);
        }
        let flow = FlowField::from_fn(h, w, |y, x| if (y, x) == (14, 25) { (2.0, 0.0) } else { (0.0, 0.0) });
        let cfg = AugmentConfig {
            side: 40,
            ..AugmentConfig::default()
        };
        for seed in 0..10 {
            let mut rng = stream_rng(&[seed]);
            let params = SyncAugParams::sample(SampleMode::Train, h, w, &cfg, &mut rng);
            let r = apply_to_image(&rgb, &params);
            let f = apply_to_flow(&flow, &params);
            let argmax = |vals: Vec<f32>| {
                vals.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| (i / 40, i % 40))
                    .unwrap()
            };
            let pr = argmax(r.data().chunks(3).map(|p| p[0]).collect());
            let pf = argmax(f.u().iter().zip(f.v()).map(|(u, v)| u.hypot(*v)).collect());
            assert!(pr.0.abs_diff(pf.0) <= 1 && pr.1.abs_diff(pf.1) <= 1, "{pr:?} vs {pf:?}");
        }
    }

    #[test]
    fn raw_flow_rotation_rotates_vectors() {
        let flow = FlowField::uniform(64, 64, 1.0, 0.5);
        let params = SyncAugParams {
            rotation_deg: 30.0,
            scale: 1.0,
            crop: square_crop_record(64, 64),
            target_side: 64,
        };
        let f = apply_to_flow(&flow, &params);
        let base = flow_hue(1.0, 0.5);
        let (u, v) = f.at(32, 32);
        let hue = flow_hue(u as f64, v as f64);
        assert!((hue - (base + 30.0)).abs() < 1e-3, "{hue} vs {}", base + 30.0);
        assert!(((u.hypot(v)) - 1.0f32.hypot(0.5)).abs() < 1e-5);
    }

    #[test]
    fn normalization_round_trips() {
        let img = pattern(6, 7);
        let stats = NormStats::default();
        let back = denormalize_rgb(&normalize_rgb(&img, &stats), 6, 7, &stats).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let ident = NormStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        assert_eq!(normalize_rgb(&img, &ident), img.to_chw());
        let flat = Image::from_fn(3, 3, 3, |_, _, c| stats.mean[c]);
        assert!(normalize_rgb(&flat, &stats).iter().all(|&v| v == 0.0));
    }
}
