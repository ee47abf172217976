//! Interleaved float images and the bilinear resampling shared by frames
//! and flow fields.

use std::path::Path;

use crate::error::{Error, Result};

/// Declared intensity range of an image's samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PixelRange {
    Unit,
    Byte,
}

/// Row-major, channel-interleaved (H×W×C) float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Contract(format!(
                "image buffer of {} values does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Swaps the two spatial axes.
    pub fn transpose(&self) -> Self {
        let mut out = Image::new(self.width, self.height, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(x, y, c, self.get(y, x, c));
                }
            }
        }
        out
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "crop outside image");
        let mut data = Vec::with_capacity(h * w * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Self {
            height: h,
            width: w,
            channels: self.channels,
            data,
        }
    }

    /// Bilinear resize with half-pixel centres and edge clamping. Same-size
    /// requests return an exact copy.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels: self.channels,
            data: resize_interleaved(&self.data, self.height, self.width, self.channels, height, width),
        }
    }

    /// Bilinear sample at continuous pixel-centre coordinates; samples
    /// outside the image read as zero.
    pub fn sample_zero(&self, y: f32, x: f32, out: &mut [f32]) {
        sample_zero_padded(&self.data, self.height, self.width, self.channels, y, x, out);
    }

    /// Planar CHW copy, the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0; n * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * n + i] = v;
            }
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, channels: usize, chw: &[f32]) -> Result<Self> {
        let n = height * width;
        if chw.len() != n * channels {
            return Err(Error::Contract("planar buffer size mismatch".into()));
        }
        Ok(Self::from_fn(height, width, channels, |y, x, c| chw[c * n + y * width + x]))
    }

    pub fn to_luma(&self) -> Vec<f32> {
        match self.channels {
            1 => self.data.clone(),
            _ => self
                .data
                .chunks_exact(self.channels)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }

    /// Loads an 8-bit image as RGB in [0,1].
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Format(format!("{}: {other}", path.display())),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Image::from_vec(h as usize, w as usize, 3, data)
    }

    /// Writes a [0,1] RGB or grey image as 8-bit PNG (values are clamped
    /// and rounded).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::Unsupported(format!("saving {c}-channel images"))),
        };
        image::save_buffer(path, &bytes, self.width as u32, self.height as u32, color).map_err(
            |e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Format(format!("{}: {other}", path.display())),
            },
        )
    }
}

#[inline]
pub(crate) fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

fn axis_taps(dst: usize, src: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

pub(crate) fn resize_interleaved(
    data: &[f32],
    h: usize,
    w: usize,
    channels: usize,
    nh: usize,
    nw: usize,
) -> Vec<f32> {
    if h == nh && w == nw {
        return data.to_vec();
    }
    let ys = axis_taps(nh, h);
    let xs = axis_taps(nw, w);
    let mut out = Vec::with_capacity(nh * nw * channels);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for c in 0..channels {
                let at = |y: usize, x: usize| data[(y * w + x) * channels + c];
                let top = lerp(at(y0, x0), at(y0, x1), tx);
                let bottom = lerp(at(y1, x0), at(y1, x1), tx);
                out.push(lerp(top, bottom, ty));
            }
        }
    }
    out
}

pub(crate) fn sample_zero_padded(
    data: &[f32],
    h: usize,
    w: usize,
    channels: usize,
    y: f32,
    x: f32,
    out: &mut [f32],
) {
    let y0 = y.floor();
    let x0 = x.floor();
    let ty = y - y0;
    let tx = x - x0;
    let (y0, x0) = (y0 as i64, x0 as i64);
    let fetch = |yy: i64, xx: i64, c: usize| -> f32 {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            data[(yy as usize * w + xx as usize) * channels + c]
        }
    };
    for (c, o) in out.iter_mut().enumerate().take(channels) {
        let top = lerp(fetch(y0, x0, c), fetch(y0, x0 + 1, c), tx);
        let bottom = lerp(fetch(y0 + 1, x0, c), fetch(y0 + 1, x0 + 1, c), tx);
        *o = lerp(top, bottom, ty);
    }
}

/// Bilinear sample with coordinates clamped to the image.
pub(crate) fn sample_clamped(data: &[f32], h: usize, w: usize, y: f32, x: f32) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f32);
    let x = x.clamp(0.0, (w - 1) as f32);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ty = y - y0 as f32;
    let tx = x - x0 as f32;
    let top = lerp(data[y0 * w + x0], data[y0 * w + x1], tx);
    let bottom = lerp(data[y1 * w + x0], data[y1 * w + x1], tx);
    lerp(top, bottom, ty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_resize_is_exact() {
        let img = Image::from_fn(7, 5, 3, |y, x, c| (y * 31 + x * 7 + c) as f32 * 0.013);
        assert_eq!(img.resize(7, 5), img);
    }

    #[test]
    fn constant_survives_resize_exactly() {
        let img = Image::from_fn(10, 13, 1, |_, _, _| 0.3);
        let r = img.resize(17, 4);
        assert!(r.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn chw_round_trip() {
        let img = Image::from_fn(4, 6, 3, |y, x, c| (y * 100 + x * 10 + c) as f32);
        let back = Image::from_chw(4, 6, 3, &img.to_chw()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn transpose_twice_is_identity() {
        let img = Image::from_fn(3, 8, 2, |y, x, c| (y + 2 * x + 5 * c) as f32);
        assert_eq!(img.transpose().transpose(), img);
        assert_eq!(img.transpose().dims(), (8, 3));
    }

    #[test]
    fn png_round_trip_is_lossless_on_byte_levels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_fn(9, 11, 3, |y, x, c| ((y * 29 + x * 3 + c * 80) % 256) as f32 / 255.0);
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);
    }
}
