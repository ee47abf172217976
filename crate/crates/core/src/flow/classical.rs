//! Coarse-to-fine dense Lucas–Kanade.
//!
//! Both frames are converted to luminance and reduced into a binomial
//! pyramid. Starting at the coarsest level, the current estimate is used to
//! warp the second frame onto the first; a Gaussian-weighted least-squares
//! step over each pixel's neighbourhood refines the flow, and the result is
//! upsampled (with magnitudes doubled) to seed the next finer level.

use crate::exec::Exec;
use crate::flow::FlowField;
use crate::image::{resize_interleaved, sample_clamped};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalParams {
    pub max_levels: usize,
    /// Coarsest level keeps at least this many pixels on its short side.
    pub min_side: usize,
    pub iterations: usize,
    /// Half-width of the Gaussian integration window.
    pub window_radius: usize,
    pub window_sigma: f32,
    /// Tikhonov term added to the structure tensor diagonal.
    pub regularization: f32,
    /// Largest per-iteration update, in pixels of the current level.
    pub max_step: f32,
}

impl Default for ClassicalParams {
    fn default() -> Self {
        Self {
            max_levels: 5,
            min_side: 12,
            iterations: 6,
            window_radius: 4,
            window_sigma: 2.0,
            regularization: 1e-4,
            max_step: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Plane {
    fn at(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn separable(&self, kernel: &[f32]) -> Plane {
        let r = (kernel.len() / 2) as isize;
        let mut tmp = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                tmp[y * self.w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &wk)| wk * self.at(y as isize, x as isize + k as isize - r))
                    .sum();
            }
        }
        let tmp = Plane {
            h: self.h,
            w: self.w,
            data: tmp,
        };
        let mut out = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                out[y * self.w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &wk)| wk * tmp.at(y as isize + k as isize - r, x as isize))
                    .sum();
            }
        }
        Plane {
            h: self.h,
            w: self.w,
            data: out,
        }
    }

    fn downsample(&self) -> Plane {
        let blurred = self.separable(&[1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0]);
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        Plane {
            h,
            w,
            data: resize_interleaved(&blurred.data, self.h, self.w, 1, h, w),
        }
    }
}

fn gaussian_kernel(radius: usize, sigma: f32) -> Vec<f32> {
    let k: Vec<f32> = (0..=2 * radius)
        .map(|i| {
            let d = i as f32 - radius as f32;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f32 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Dense flow from `a` to `b`, both single-channel `h × w` in a common
/// intensity scale.
pub fn pyramidal_lucas_kanade(
    a: &[f32],
    b: &[f32],
    h: usize,
    w: usize,
    params: &ClassicalParams,
    exec: Exec,
) -> FlowField {
    let mut pa = vec![Plane { h, w, data: a.to_vec() }];
    let mut pb = vec![Plane { h, w, data: b.to_vec() }];
    while pa.len() < params.max_levels {
        let last = pa.last().expect("non-empty pyramid");
        if last.h.min(last.w) / 2 < params.min_side {
            break;
        }
        let na = last.downsample();
        let nb = pb.last().expect("non-empty pyramid").downsample();
        pa.push(na);
        pb.push(nb);
    }

    let kernel = gaussian_kernel(params.window_radius, params.window_sigma);
    let top = pa.last().expect("non-empty pyramid");
    let mut flow = FlowField::zeros(top.h, top.w);

    for level in (0..pa.len()).rev() {
        let (ia, ib) = (&pa[level], &pb[level]);
        if flow.dims() != (ia.h, ia.w) {
            let (fh, fw) = flow.dims();
            flow = flow
                .resample(ia.h, ia.w)
                .scale_components(ia.w as f64 / fw as f64, ia.h as f64 / fh as f64);
        }
        for _ in 0..params.iterations {
            flow = refine(ia, ib, &flow, &kernel, params, exec);
        }
    }
    flow
}

fn refine(
    a: &Plane,
    b: &Plane,
    flow: &FlowField,
    kernel: &[f32],
    params: &ClassicalParams,
    exec: Exec,
) -> FlowField {
    let (h, w) = (a.h, a.w);
    let warped: Vec<f32> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let (u, v) = flow.at(y, x);
            sample_clamped(&b.data, h, w, y as f32 + v, x as f32 + u)
        })
        .collect();
    let warped = Plane { h, w, data: warped };

    let n = h * w;
    let mut ixx = vec![0.0; n];
    let mut ixy = vec![0.0; n];
    let mut iyy = vec![0.0; n];
    let mut ixt = vec![0.0; n];
    let mut iyt = vec![0.0; n];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = 0.25
                * (a.at(y, x + 1) - a.at(y, x - 1) + warped.at(y, x + 1) - warped.at(y, x - 1));
            let gy = 0.25
                * (a.at(y + 1, x) - a.at(y - 1, x) + warped.at(y + 1, x) - warped.at(y - 1, x));
            let i = y as usize * w + x as usize;
            let gt = warped.data[i] - a.data[i];
            ixx[i] = gx * gx;
            ixy[i] = gx * gy;
            iyy[i] = gy * gy;
            ixt[i] = gx * gt;
            iyt[i] = gy * gt;
        }
    }
    let sums: Vec<Plane> = [ixx, ixy, iyy, ixt, iyt]
        .into_iter()
        .map(|data| Plane { h, w, data }.separable(kernel))
        .collect();

    let lambda = params.regularization;
    let step = params.max_step;
    let rows = exec.map_range(h, |y| {
        (0..w)
            .map(|x| {
                let i = y * w + x;
                let (sxx, sxy, syy) = (sums[0].data[i] + lambda, sums[1].data[i], sums[2].data[i] + lambda);
                let (sxt, syt) = (sums[3].data[i], sums[4].data[i]);
                let det = sxx * syy - sxy * sxy;
                let (mut du, mut dv) = if det > 1e-12 {
                    ((-syy * sxt + sxy * syt) / det, (sxy * sxt - sxx * syt) / det)
                } else {
                    (0.0, 0.0)
                };
                if !du.is_finite() || !dv.is_finite() {
                    du = 0.0;
                    dv = 0.0;
                }
                let (u, v) = flow.at(y, x);
                (u + du.clamp(-step, step), v + dv.clamp(-step, step))
            })
            .collect::<Vec<_>>()
    });
    let (u, v): (Vec<f32>, Vec<f32>) = rows.into_iter().flatten().unzip();
    FlowField::new(h, w, u, v).expect("refined flow keeps its shape")
}
