use serde::{Deserialize, Serialize};

/// Dense NCHW tensor of `f64`. Fully connected layers use `[n, features, 1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Tensor { shape, data }
    }

    /// Stacks equally sized samples along the batch axis.
    pub fn stack(samples: &[Vec<f64>], chw: [usize; 3]) -> Self {
        let len = chw[0] * chw[1] * chw[2];
        let mut data = Vec::with_capacity(samples.len() * len);
        for s in samples {
            assert_eq!(s.len(), len, "sample length mismatch while stacking");
            data.extend_from_slice(s);
        }
        Tensor::from_vec([samples.len(), chw[0], chw[1], chw[2]], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    pub fn w(&self) -> usize {
        self.shape[3]
    }
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    /// Same data viewed as `[n, c*h*w, 1, 1]`.
    pub fn flatten(self) -> Tensor {
        let l = self.sample_len();
        Tensor {
            shape: [self.shape[0], l, 1, 1],
            data: self.data,
        }
    }

    pub fn reshape(self, shape: [usize; 4]) -> Tensor {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel-wise concatenation `[a, b]`.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.n(), b.n());
        assert_eq!((a.h(), a.w()), (b.h(), b.w()));
        let (la, lb) = (a.sample_len(), b.sample_len());
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..a.n() {
            data.extend_from_slice(&a.data[i * la..(i + 1) * la]);
            data.extend_from_slice(&b.data[i * lb..(i + 1) * lb]);
        }
        Tensor::from_vec([a.n(), a.c() + b.c(), a.h(), a.w()], data)
    }

    /// Inverse of [`Tensor::concat_channels`]: first `ca` channels, then the rest.
    pub fn split_channels(&self, ca: usize) -> (Tensor, Tensor) {
        let cb = self.c() - ca;
        let hw = self.h() * self.w();
        let (la, lb) = (ca * hw, cb * hw);
        let mut a = Vec::with_capacity(self.n() * la);
        let mut b = Vec::with_capacity(self.n() * lb);
        for i in 0..self.n() {
            let s = self.sample(i);
            a.extend_from_slice(&s[..la]);
            b.extend_from_slice(&s[la..]);
        }
        (
            Tensor::from_vec([self.n(), ca, self.h(), self.w()], a),
            Tensor::from_vec([self.n(), cb, self.h(), self.w()], b),
        )
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }
}

/// `c = a · b + beta · c` for row-major operands, optionally read transposed.
///
/// `a` is `m×k` (or `k×m` when `at`), `b` is `k×n` (or `n×k` when `bt`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    at: bool,
    b: &[f64],
    bt: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds checked above; strides describe the row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
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

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = x[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn gemm_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let want = naive(m, k, n, &a, &b);
        for (at, bt) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if at { transpose(m, k, &a) } else { a.clone() };
            let bb = if bt { transpose(k, n, &b) } else { b.clone() };
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &aa, at, &bb, bt, &mut c, 0.0);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor::from_vec([2, 1, 2, 2], (0..8).map(|v| v as f64).collect());
        let b = Tensor::from_vec([2, 2, 2, 2], (0..16).map(|v| -(v as f64)).collect());
        let cat = Tensor::concat_channels(&a, &b);
        assert_eq!(cat.shape(), [2, 3, 2, 2]);
        let (a2, b2) = cat.split_channels(1);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }
}
