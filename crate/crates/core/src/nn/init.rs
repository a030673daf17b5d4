//! Weight initializers: Glorot-uniform input kernels, orthogonal recurrent
//! kernels, zero biases (LSTM forget-gate bias set to one).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::math;
use crate::rng;
use crate::tensor::Tensor;

/// Uniform on `[-limit, limit]` with `limit = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Tensor {
    let limit = math::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * limit)
        .collect();
    Tensor::from_vec(&[rows, cols], data)
}

/// Random orthogonal matrix: orthonormal columns when `rows >= cols`,
/// orthonormal rows otherwise. Built by modified Gram-Schmidt over a
/// standard-normal draw.
pub fn orthogonal(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Tensor {
    if rows >= cols {
        Tensor::from_vec(&[rows, cols], gram_schmidt(rng, rows, cols))
    } else {
        // orthonormalize the transpose, then transpose back
        let q = gram_schmidt(rng, cols, rows);
        let mut out = vec![0.0; rows * cols];
        for r in 0..cols {
            for c in 0..rows {
                out[c * cols + r] = q[r * rows + c];
            }
        }
        Tensor::from_vec(&[rows, cols], out)
    }
}

/// Orthonormal columns of a `[rows, cols]` matrix, `rows >= cols`.
fn gram_schmidt(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Vec<f64> {
    let mut a: Vec<f64> = (0..rows * cols).map(|_| rng::next_normal(rng)).collect();
    for j in 0..cols {
        for prev in 0..j {
            let mut dot = 0.0;
            for r in 0..rows {
                dot += a[r * cols + j] * a[r * cols + prev];
            }
            for r in 0..rows {
                a[r * cols + j] -= dot * a[r * cols + prev];
            }
        }
        let mut norm = 0.0;
        for r in 0..rows {
            norm += a[r * cols + j] * a[r * cols + j];
        }
        let norm = math::sqrt(norm);
        // a zero-norm column from continuous draws has probability zero;
        // fall back to a basis vector rather than divide by zero
        if norm < 1e-12 {
            for r in 0..rows {
                a[r * cols + j] = if r == j % rows { 1.0 } else { 0.0 };
            }
        } else {
            for r in 0..rows {
                a[r * cols + j] /= norm;
            }
        }
    }
    a
}

/// Zero bias of width `n`, except the forget-gate block `[h, 2h)` is set to
/// one when `forget_block` is given (LSTM convention).
pub fn bias(n: usize, forget_block: Option<usize>) -> Tensor {
    let mut b = vec![0.0; n];
    if let Some(h) = forget_block {
        for v in &mut b[h..2 * h] {
            *v = 1.0;
        }
    }
    Tensor::from_vec(&[n], b)
}
