//! Minimal CPU training primitives: a flat parameter store, convolution and
//! linear layers with explicit backward passes, and Adam.

mod adam;
mod layers;

pub use adam::{Adam, AdamConfig};
pub use layers::{Conv2d, Linear};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// A named tensor inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// All parameters of a model in one contiguous buffer, so gradients,
/// optimizer state and checkpoints share a single layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    segments: Vec<Segment>,
    values: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegId(usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: impl FnMut() -> f32) -> SegId {
        let len = shape.iter().product();
        let seg = Segment {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.values.len(),
            len,
        };
        self.values.extend(std::iter::repeat_with(init).take(len));
        self.segments.push(seg);
        SegId(self.segments.len() - 1)
    }

    /// He-normal weights for a layer feeding a ReLU (or `gain = 1` for a
    /// linear output).
    pub fn push_he<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, gain: f32, rng: &mut R) -> SegId {
        let std = (gain / fan_in as f32).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        self.push(name, shape, || normal.sample(rng))
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, id: SegId) -> &Segment {
        &self.segments[id.0]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, id: SegId) -> &[f32] {
        let s = &self.segments[id.0];
        &self.values[s.offset..s.offset + s.len]
    }

    /// The slice of a flat gradient buffer that belongs to `id`.
    #[inline]
    pub fn grad_mut<'g>(&self, id: SegId, grads: &'g mut [f32]) -> &'g mut [f32] {
        let s = &self.segments[id.0];
        &mut grads[s.offset..s.offset + s.len]
    }

    /// Replaces all values, checking that the layout matches.
    pub fn load(&mut self, segments: &[Segment], values: Vec<f32>) -> crate::Result<()> {
        if segments != self.segments.as_slice() || values.len() != self.values.len() {
            return Err(crate::Error::Format(
                "checkpoint tensor layout does not match the architecture".into(),
            ));
        }
        self.values = values;
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of every value.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// `c = a·b + beta·c` for row-major matrices; `a` is m×k (or k×m when
/// `a_t`), `b` is k×n (or n×k when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the strides reach is
    // in bounds, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn softmax2(logits: [f32; 2]) -> [f32; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_in_all_transpositions() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f32> = (0..m * k).map(|i| i as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32).sin()).collect();
        let at = |i: usize, j: usize| a[i * k + j];
        let bt = |i: usize, j: usize| b[i * n + j];
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                want[i * n + j] = (0..k).map(|p| at(i, p) * bt(p, j)).sum();
            }
        }
        let transpose = |x: &[f32], r: usize, c: usize| -> Vec<f32> {
            (0..c).flat_map(|j| (0..r).map(move |i| x[i * c + j])).collect()
        };
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { transpose(&a, m, k) } else { a.clone() };
            let bb = if tb { transpose(&b, k, n) } else { b.clone() };
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &aa, ta, &bb, tb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax2([3.0, -1.0]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-7);
        assert_eq!(softmax2([1000.0, 1000.0]), [0.5, 0.5]);
    }

    #[test]
    fn store_layout_and_digest() {
        let mut s = ParamStore::new();
        let a = s.push("a", &[2, 3], || 1.0);
        let b = s.push("b", &[4], || 2.0);
        assert_eq!(s.len(), 10);
        assert_eq!(s.get(a), &[1.0; 6]);
        assert_eq!(s.get(b), &[2.0; 4]);
        let d = s.digest();
        s.values_mut()[9] = 2.5;
        assert_ne!(d, s.digest());
    }
}
