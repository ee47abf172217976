use rand::Rng;

use super::{gemm, ParamStore, SegId};

/// Square-kernel convolution with replicate ("edge") padding of
/// `kernel / 2`, so constant inputs give spatially constant outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    weight: SegId,
    bias: SegId,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        let fan_in = in_c * kernel * kernel;
        let weight = store.push_he(format!("{name}.weight"), &[out_c, in_c, kernel, kernel], fan_in, 2.0, rng);
        let bias = store.push(format!("{name}.bias"), &[out_c], || 0.0);
        Self {
            name: name.to_string(),
            in_c,
            out_c,
            kernel,
            stride,
            weight,
            bias,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    fn taps(&self, o: usize, k: usize, len: usize) -> usize {
        let pos = (o * self.stride + k) as isize - (self.kernel / 2) as isize;
        pos.clamp(0, len as isize - 1) as usize
    }

    /// Column matrix of shape (in_c·k·k) × (oh·ow).
    pub fn im2col(&self, input: &[f32], h: usize, w: usize) -> Vec<f32> {
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let k = self.kernel;
        let mut cols = vec![0.0; self.in_c * k * k * n];
        for ci in 0..self.in_c {
            let plane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let iy = self.taps(oy, ky, h);
                        for ox in 0..ow {
                            dst[oy * ow + ox] = plane[iy * w + self.taps(ox, kx, w)];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f32], h: usize, w: usize) -> Vec<f32> {
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let k = self.kernel;
        let mut out = vec![0.0; self.in_c * h * w];
        for ci in 0..self.in_c {
            let plane = &mut out[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &dcols[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let iy = self.taps(oy, ky, h);
                        for ox in 0..ow {
                            plane[iy * w + self.taps(ox, kx, w)] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the pre-activation output (out_c × oh·ow) and the column
    /// matrix needed by [`Conv2d::backward`].
    pub fn forward(&self, store: &ParamStore, input: &[f32], h: usize, w: usize) -> (Vec<f32>, Vec<f32>) {
        let cols = self.im2col(input, h, w);
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let kk = self.in_c * self.kernel * self.kernel;
        let bias = store.get(self.bias);
        let mut out = vec![0.0; self.out_c * n];
        for (c, row) in out.chunks_exact_mut(n).enumerate() {
            row.fill(bias[c]);
        }
        gemm(self.out_c, kk, n, store.get(self.weight), false, &cols, false, 1.0, &mut out);
        (out, cols)
    }

    /// Accumulates weight/bias gradients into `grads` and, if requested,
    /// returns the gradient with respect to the input.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        store: &ParamStore,
        cols: &[f32],
        grad_out: &[f32],
        h: usize,
        w: usize,
        grads: &mut [f32],
        need_input: bool,
    ) -> Option<Vec<f32>> {
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let kk = self.in_c * self.kernel * self.kernel;
        gemm(self.out_c, n, kk, grad_out, false, cols, true, 1.0, store.grad_mut(self.weight, grads));
        let gb = store.grad_mut(self.bias, grads);
        for (c, row) in grad_out.chunks_exact(n).enumerate() {
            gb[c] += row.iter().sum::<f32>();
        }
        if !need_input {
            return None;
        }
        let mut dcols = vec![0.0; kk * n];
        gemm(kk, self.out_c, n, store.get(self.weight), true, grad_out, false, 0.0, &mut dcols);
        Some(self.col2im(&dcols, h, w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub in_f: usize,
    pub out_f: usize,
    weight: SegId,
    bias: SegId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_f: usize, out_f: usize, gain: f32, rng: &mut R) -> Self {
        let weight = store.push_he(format!("{name}.weight"), &[out_f, in_f], in_f, gain, rng);
        let bias = store.push(format!("{name}.bias"), &[out_f], || 0.0);
        Self {
            name: name.to_string(),
            in_f,
            out_f,
            weight,
            bias,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f32]) -> Vec<f32> {
        let w = store.get(self.weight);
        store
            .get(self.bias)
            .iter()
            .enumerate()
            .map(|(o, b)| b + w[o * self.in_f..(o + 1) * self.in_f].iter().zip(x).map(|(a, b)| a * b).sum::<f32>())
            .collect()
    }

    pub fn backward(&self, store: &ParamStore, x: &[f32], g: &[f32], grads: &mut [f32]) -> Vec<f32> {
        {
            let gw = store.grad_mut(self.weight, grads);
            for (o, &go) in g.iter().enumerate() {
                if go != 0.0 {
                    for (dst, xi) in gw[o * self.in_f..(o + 1) * self.in_f].iter_mut().zip(x) {
                        *dst += go * xi;
                    }
                }
            }
        }
        let gb = store.grad_mut(self.bias, grads);
        for (dst, go) in gb.iter_mut().zip(g) {
            *dst += go;
        }
        let w = store.get(self.weight);
        let mut dx = vec![0.0; self.in_f];
        for (o, &go) in g.iter().enumerate() {
            if go != 0.0 {
                for (d, wi) in dx.iter_mut().zip(&w[o * self.in_f..(o + 1) * self.in_f]) {
                    *d += go * wi;
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;

    /// Scalar objective Σ out·probe, so d/dparam is checkable numerically.
    fn conv_objective(store: &ParamStore, conv: &Conv2d, x: &[f32], h: usize, w: usize, probe: &[f32]) -> f64 {
        let (out, _) = conv.forward(store, x, h, w);
        out.iter().zip(probe).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = stream_rng(&[11]);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 2, 3, 3, 2, &mut rng);
        let (h, w) = (5, 6);
        let x: Vec<f32> = (0..2 * h * w).map(|i| ((i * 37 % 17) as f32 - 8.0) / 8.0).collect();
        let (oh, ow) = conv.out_dims(h, w);
        assert_eq!((oh, ow), (3, 3));
        let probe: Vec<f32> = (0..3 * oh * ow).map(|i| ((i * 13 % 7) as f32 - 3.0) / 3.0).collect();

        let (_, cols) = conv.forward(&store, &x, h, w);
        let mut grads = vec![0.0; store.len()];
        let dx = conv.backward(&store, &cols, &probe, h, w, &mut grads, true).unwrap();

        let eps = 1e-2f32;
        for i in (0..store.len()).step_by(7) {
            let mut plus = store.clone();
            plus.values_mut()[i] += eps;
            let mut minus = store.clone();
            minus.values_mut()[i] -= eps;
            let fd = (conv_objective(&plus, &conv, &x, h, w, &probe) - conv_objective(&minus, &conv, &x, h, w, &probe))
                / (2.0 * eps as f64);
            assert!((fd - grads[i] as f64).abs() < 1e-3, "param {i}: fd {fd} vs {}", grads[i]);
        }
        for i in (0..x.len()).step_by(5) {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (conv_objective(&store, &conv, &xp, h, w, &probe) - conv_objective(&store, &conv, &xm, h, w, &probe))
                / (2.0 * eps as f64);
            assert!((fd - dx[i] as f64).abs() < 1e-3, "input {i}: fd {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn constant_input_gives_constant_output() {
        let mut rng = stream_rng(&[3]);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 3, 4, 3, 2, &mut rng);
        let x = vec![0.7; 3 * 9 * 9];
        let (out, _) = conv.forward(&store, &x, 9, 9);
        for row in out.chunks(25) {
            assert!(row.iter().all(|&v| (v - row[0]).abs() < 1e-6));
        }
    }

    #[test]
    fn linear_backward_matches_closed_form() {
        let mut rng = stream_rng(&[5]);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "fc", 3, 2, 1.0, &mut rng);
        let x = [1.0, -2.0, 0.5];
        let g = [0.25, -1.0];
        let mut grads = vec![0.0; store.len()];
        let dx = lin.backward(&store, &x, &g, &mut grads);
        // weight grad is g ⊗ x, bias grad is g
        assert_eq!(&grads[0..6], &[0.25, -0.5, 0.125, -1.0, 2.0, -0.5]);
        assert_eq!(&grads[6..8], &g);
        let w = store.values();
        for i in 0..3 {
            assert!((dx[i] - (g[0] * w[i] + g[1] * w[3 + i])).abs() < 1e-6);
        }
    }
}
