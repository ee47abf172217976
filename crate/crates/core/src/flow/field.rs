use crate::error::{Error, Result};
use crate::image::{resize_interleaved, sample_clamped};

/// Dense displacement field in pixel units: `u` positive rightward, `v`
/// positive downward, both expressed at `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        let n = height * width;
        if u.len() != n || v.len() != n {
            return Err(Error::Contract(format!(
                "flow components of length {}/{} do not match {height}x{width}",
                u.len(),
                v.len()
            )));
        }
        Ok(Self { height, width, u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::uniform(height, width, 0.0, 0.0)
    }

    pub fn uniform(height: usize, width: usize, u: f32, v: f32) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            u: vec![u; n],
            v: vec![v; n],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> (f32, f32)) -> Self {
        let mut u = Vec::with_capacity(height * width);
        let mut v = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                u.push(a);
                v.push(b);
            }
        }
        Self { height, width, u, v }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Flow interpolated at a continuous position, clamped to the grid.
    pub fn sample(&self, y: f32, x: f32) -> (f32, f32) {
        (
            sample_clamped(&self.u, self.height, self.width, y, x),
            sample_clamped(&self.v, self.height, self.width, y, x),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn ensure_finite(self, stage: &str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite {
                stage: stage.to_string(),
            })
        }
    }

    pub fn max_magnitude(&self) -> f32 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f32::max)
    }

    /// Mean endpoint error against another field of the same size.
    pub fn mean_epe(&self, other: &FlowField) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let n = self.u.len().max(1);
        self.u
            .iter()
            .zip(&self.v)
            .zip(other.u.iter().zip(&other.v))
            .map(|((a, b), (c, d))| ((a - c) as f64).hypot((b - d) as f64))
            .sum::<f64>()
            / n as f64
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "crop outside flow field");
        let take = |src: &[f32]| {
            let mut out = Vec::with_capacity(h * w);
            for y in y0..y0 + h {
                out.extend_from_slice(&src[y * self.width + x0..y * self.width + x0 + w]);
            }
            out
        };
        Self {
            height: h,
            width: w,
            u: take(&self.u),
            v: take(&self.v),
        }
    }

    /// Bilinear resampling of both components WITHOUT touching magnitudes.
    pub fn resample(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            u: resize_interleaved(&self.u, self.height, self.width, 1, height, width),
            v: resize_interleaved(&self.v, self.height, self.width, 1, height, width),
        }
    }

    /// Multiplies u and v by separate factors (computed in f64).
    pub fn scale_components(mut self, su: f64, sv: f64) -> Self {
        if su != 1.0 {
            self.u.iter_mut().for_each(|x| *x = (*x as f64 * su) as f32);
        }
        if sv != 1.0 {
            self.v.iter_mut().for_each(|x| *x = (*x as f64 * sv) as f32);
        }
        self
    }

    /// Transposes the grid and swaps the components, so the field keeps
    /// describing the same physical motion in the transposed frame.
    pub fn transpose(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut u = vec![0.0; h * w];
        let mut v = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let src = y * w + x;
                let dst = x * h + y;
                u[dst] = self.v[src];
                v[dst] = self.u[src];
            }
        }
        Self {
            height: w,
            width: h,
            u,
            v,
        }
    }

    /// Applies `f` to every vector.
    pub fn map_vectors(&self, f: impl Fn(f32, f32) -> (f32, f32)) -> Self {
        let (u, v) = self.u.iter().zip(&self.v).map(|(&a, &b)| f(a, b)).unzip();
        Self {
            height: self.height,
            width: self.width,
            u,
            v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_swaps_components() {
        let f = FlowField::from_fn(2, 3, |y, x| (x as f32, 10.0 + y as f32));
        let t = f.transpose();
        assert_eq!(t.dims(), (3, 2));
        // point (y=1, x=2) becomes (y=2, x=1) and (u,v) swap
        assert_eq!(t.at(2, 1), (11.0, 2.0));
        assert_eq!(t.transpose(), f);
    }

    #[test]
    fn non_finite_is_rejected() {
        let f = FlowField::uniform(2, 2, f32::NAN, 0.0);
        assert!(matches!(f.ensure_finite("x"), Err(Error::NonFinite { .. })));
    }
}
