//! Dense row-major f64 tensors and the handful of matrix kernels the layer
//! adjoints are written against.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Shaped f64 buffer, row-major. Shape/buffer agreement is enforced at
/// construction; the layer ops validate shapes at their own boundaries and
/// return errors, so internal constructors may assert.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Wrap an existing buffer. Panics if the element count does not match.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match buffer length {}",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Same buffer under a new shape. Panics if the element count changes.
    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {:?} -> {shape:?} changes element count",
            self.shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out[m,n] += a[m,k] . b[k,n]`, all row-major and contiguous.
pub fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] = a[m,k] . b[k,n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_acc(&mut out, a, b, m, k, n);
    out
}

/// Column-block variant used by the gated layers, where weight matrices hold
/// several gates side by side: accumulates
/// `out[i, out_off + j] += sum_kk a[i, kk] * b[kk, b_off + j]` for
/// `i < m`, `kk < k`, `j < n`, with explicit row strides for `out` and `b`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_acc_block(
    out: &mut [f64],
    out_stride: usize,
    out_off: usize,
    a: &[f64],
    b: &[f64],
    b_stride: usize,
    b_off: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let out_row = &mut out[i * out_stride + out_off..i * out_stride + out_off + n];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * b_stride + b_off..kk * b_stride + b_off + n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[i, out_off + j] += sum_kk a[kk, a_off + i] * b[kk, b_off + j]`,
/// i.e. `out += a^T . b` on column blocks, where `a` is `[k,m]` and `b` is
/// `[k,n]`. This is the weight-gradient kernel: `dW += x^T . da`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_at_b_acc_block(
    out: &mut [f64],
    out_stride: usize,
    out_off: usize,
    a: &[f64],
    a_stride: usize,
    a_off: usize,
    b: &[f64],
    b_stride: usize,
    b_off: usize,
    k: usize,
    m: usize,
    n: usize,
) {
    for kk in 0..k {
        let a_row = &a[kk * a_stride + a_off..kk * a_stride + a_off + m];
        let b_row = &b[kk * b_stride + b_off..kk * b_stride + b_off + n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * out_stride + out_off..i * out_stride + out_off + n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[i, out_off + j] += sum_kk a[i, a_off + kk] * b[j, b_off + kk]`,
/// i.e. `out += a . b^T` on column blocks. This is the input-gradient
/// kernel: `dx += da . W^T`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_a_bt_acc_block(
    out: &mut [f64],
    out_stride: usize,
    out_off: usize,
    a: &[f64],
    a_stride: usize,
    a_off: usize,
    b: &[f64],
    b_stride: usize,
    b_off: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let a_row = &a[i * a_stride + a_off..i * a_stride + a_off + k];
        let out_row = &mut out[i * out_stride + out_off..i * out_stride + out_off + n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * b_stride + b_off..j * b_stride + b_off + k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// Add a bias row vector to every row of `y[rows, cols]`.
pub fn add_row_bias(y: &mut [f64], bias: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(y.len(), rows * cols);
    debug_assert_eq!(bias.len(), cols);
    for r in 0..rows {
        for (v, &b) in y[r * cols..(r + 1) * cols].iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Column sums of `a[rows, cols]`, accumulated into `out[cols]`.
pub fn col_sum_acc(out: &mut [f64], a: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(out.len(), cols);
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [2x3] . [3x2]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = matmul(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_kernels_agree_with_naive() {
        let a = [1.0, -2.0, 0.5, 3.0, 4.0, -1.0]; // [3,2]
        let b = [2.0, 1.0, 0.0, -1.0, 1.0, 5.0]; // [3,2]
        // a^T . b -> [2,2]
        let mut out = vec![0.0; 4];
        matmul_at_b_acc_block(&mut out, 2, 0, &a, 2, 0, &b, 2, 0, 3, 2, 2);
        let mut naive = vec![0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                for kk in 0..3 {
                    naive[i * 2 + j] += a[kk * 2 + i] * b[kk * 2 + j];
                }
            }
        }
        assert_eq!(out, naive);

        // a . b^T -> [3,3]
        let mut out2 = vec![0.0; 9];
        matmul_a_bt_acc_block(&mut out2, 3, 0, &a, 2, 0, &b, 2, 0, 3, 2, 3);
        let mut naive2 = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                for kk in 0..2 {
                    naive2[i * 3 + j] += a[i * 2 + kk] * b[j * 2 + kk];
                }
            }
        }
        assert_eq!(out2, naive2);
    }

    #[test]
    #[should_panic]
    fn from_vec_rejects_bad_shape() {
        let _ = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0]);
    }
}
