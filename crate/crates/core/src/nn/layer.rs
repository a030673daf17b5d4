//! Layer kernels: dense, LSTM, GRU, time-distributed dense, concatenation
//! and flattening. Each kernel comes in three parts: a validated public
//! `*_apply` entry point, a cached forward used by the graph runner, and a
//! hand-written adjoint.
//!
//! Layout conventions, fixed across the crate:
//! - sequences are `[B, T, I]` row-major;
//! - LSTM holds `W [I,4H]`, `U [H,4H]`, `b [4H]` with gate order (i, f, g, o)
//!   where `g` is the candidate cell;
//! - GRU holds `W [I,3H]`, `U [H,3H]`, `b [3H]` with gate order (z, r, h~)
//!   and the candidate uses `U_h (r (.) h_prev)` (single-bias formulation);
//! - initial hidden/cell states are zero.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::{ensure, NnError};
use crate::math;
use crate::tensor::{
    add_row_bias, col_sum_acc, matmul_a_bt_acc_block, matmul_acc, matmul_acc_block,
    matmul_at_b_acc_block, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::None => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => math::sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Named, shaped weight with a freeze flag. Frozen parameters receive no
/// gradient and are never touched by the optimizer.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Parameter {
            name: name.into(),
            value,
            trainable: true,
        }
    }
}

fn dims3(x: &Tensor, what: &str) -> Result<(usize, usize, usize), NnError> {
    ensure(x.rank() == 3, || {
        format!("{what} must be rank 3, got shape {:?}", x.shape())
    })?;
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}

fn dims2(x: &Tensor, what: &str) -> Result<(usize, usize), NnError> {
    ensure(x.rank() == 2, || {
        format!("{what} must be rank 2, got shape {:?}", x.shape())
    })?;
    Ok((x.shape()[0], x.shape()[1]))
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// `y = act(x . W + b)` for `x [B,I]`, `W [I,O]`, `b [O]`.
pub fn dense_apply(x: &Tensor, w: &Tensor, b: &Tensor, act: Activation) -> Result<Tensor, NnError> {
    let (batch, in_dim) = dims2(x, "dense input")?;
    let (w_in, out_dim) = dims2(w, "dense kernel")?;
    ensure(w_in == in_dim, || {
        format!("dense kernel expects {w_in} inputs, input has {in_dim}")
    })?;
    ensure(b.shape() == [out_dim], || {
        format!("dense bias shape {:?}, expected [{out_dim}]", b.shape())
    })?;
    Ok(dense_forward(x, w, b, act, batch, in_dim, out_dim))
}

pub(crate) fn dense_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    act: Activation,
    batch: usize,
    in_dim: usize,
    out_dim: usize,
) -> Tensor {
    let mut y = vec![0.0; batch * out_dim];
    matmul_acc(&mut y, x.data(), w.data(), batch, in_dim, out_dim);
    add_row_bias(&mut y, b.data(), batch, out_dim);
    for v in &mut y {
        *v = act.apply(*v);
    }
    Tensor::from_vec(&[batch, out_dim], y)
}

/// Adjoint of [`dense_forward`]; `y` is the cached output.
/// Returns `(dx, dw, db)`.
pub(crate) fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    act: Activation,
    y: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let batch = x.shape()[0];
    let in_dim = x.shape()[1];
    let out_dim = w.shape()[1];
    // dz = dy (.) act'(y)
    let mut dz = vec![0.0; batch * out_dim];
    for ((d, &g), &out) in dz.iter_mut().zip(dy.data()).zip(y.data()) {
        *d = g * act.grad_from_output(out);
    }
    let mut dw = vec![0.0; in_dim * out_dim];
    matmul_at_b_acc_block(
        &mut dw, out_dim, 0, x.data(), in_dim, 0, &dz, out_dim, 0, batch, in_dim, out_dim,
    );
    let mut db = vec![0.0; out_dim];
    col_sum_acc(&mut db, &dz, batch, out_dim);
    let mut dx = vec![0.0; batch * in_dim];
    matmul_a_bt_acc_block(
        &mut dx, in_dim, 0, &dz, out_dim, 0, w.data(), out_dim, 0, batch, out_dim, in_dim,
    );
    (
        Tensor::from_vec(&[batch, in_dim], dx),
        Tensor::from_vec(&[in_dim, out_dim], dw),
        Tensor::from_vec(&[out_dim], db),
    )
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// Per-timestep activations cached by the recurrent forward passes,
/// t-major: slice `t` lives at `t * batch * width`.
pub(crate) struct RecurrentCache {
    /// Post-activation gate values, `[T, B, gates*H]`.
    pub gates: Vec<f64>,
    /// Hidden states `[T, B, H]`.
    pub h: Vec<f64>,
    /// LSTM only: cell states `[T, B, H]`.
    pub c: Vec<f64>,
    /// LSTM only: `tanh(c_t)`, `[T, B, H]`.
    pub tanh_c: Vec<f64>,
}

fn check_recurrent_shapes(
    x: &Tensor,
    w: &Tensor,
    u: &Tensor,
    b: &Tensor,
    n_gates: usize,
    what: &'static str,
) -> Result<(usize, usize, usize, usize), NnError> {
    let (batch, steps, in_dim) = dims3(x, what)?;
    let (w_in, w_cols) = dims2(w, "input kernel")?;
    ensure(w_in == in_dim, || {
        format!("{what} kernel expects {w_in} inputs, input has {in_dim}")
    })?;
    ensure(w_cols % n_gates == 0 && w_cols > 0, || {
        format!("{what} kernel width {w_cols} not divisible by {n_gates}")
    })?;
    let hidden = w_cols / n_gates;
    ensure(u.shape() == [hidden, n_gates * hidden], || {
        format!(
            "{what} recurrent kernel shape {:?}, expected [{hidden}, {}]",
            u.shape(),
            n_gates * hidden
        )
    })?;
    ensure(b.shape() == [n_gates * hidden], || {
        format!(
            "{what} bias shape {:?}, expected [{}]",
            b.shape(),
            n_gates * hidden
        )
    })?;
    Ok((batch, steps, in_dim, hidden))
}

/// Standard LSTM over `x [B,T,I]` with zero initial state.
/// Returns `[B,T,H]` when `return_sequences`, else the final `[B,H]`.
pub fn lstm_apply(
    x: &Tensor,
    w: &Tensor,
    u: &Tensor,
    b: &Tensor,
    return_sequences: bool,
) -> Result<Tensor, NnError> {
    let (out, _) = lstm_forward(x, w, u, b, return_sequences)?;
    if !out.all_finite() {
        return Err(NnError::NonFiniteActivation { layer: "lstm" });
    }
    Ok(out)
}

pub(crate) fn lstm_forward(
    x: &Tensor,
    w: &Tensor,
    u: &Tensor,
    b: &Tensor,
    return_sequences: bool,
) -> Result<(Tensor, RecurrentCache), NnError> {
    let (batch, steps, in_dim, hidden) = check_recurrent_shapes(x, w, u, b, 4, "lstm input")?;
    let bh = batch * hidden;
    let mut cache = RecurrentCache {
        gates: vec![0.0; steps * batch * 4 * hidden],
        h: vec![0.0; steps * bh],
        c: vec![0.0; steps * bh],
        tanh_c: vec![0.0; steps * bh],
    };
    let mut xt = vec![0.0; batch * in_dim];
    let zeros = vec![0.0; bh];
    for t in 0..steps {
        gather_step(x.data(), &mut xt, batch, steps, in_dim, t);
        let (h_done, h_rest) = cache.h.split_at_mut(t * bh);
        let (c_done, c_rest) = cache.c.split_at_mut(t * bh);
        let h_prev: &[f64] = if t == 0 { &zeros } else { &h_done[(t - 1) * bh..] };
        let c_prev: &[f64] = if t == 0 { &zeros } else { &c_done[(t - 1) * bh..] };
        let h_t = &mut h_rest[..bh];
        let c_t = &mut c_rest[..bh];
        let tc_t = &mut cache.tanh_c[t * bh..(t + 1) * bh];
        // a = xt.W + h_prev.U + b, then gate activations in place
        let gates = &mut cache.gates[t * batch * 4 * hidden..(t + 1) * batch * 4 * hidden];
        matmul_acc(gates, &xt, w.data(), batch, in_dim, 4 * hidden);
        matmul_acc(gates, h_prev, u.data(), batch, hidden, 4 * hidden);
        add_row_bias(gates, b.data(), batch, 4 * hidden);
        for bi in 0..batch {
            let g = &mut gates[bi * 4 * hidden..(bi + 1) * 4 * hidden];
            for j in 0..hidden {
                let i_g = math::sigmoid(g[j]);
                let f_g = math::sigmoid(g[hidden + j]);
                let g_g = math::tanh(g[2 * hidden + j]);
                let o_g = math::sigmoid(g[3 * hidden + j]);
                g[j] = i_g;
                g[hidden + j] = f_g;
                g[2 * hidden + j] = g_g;
                g[3 * hidden + j] = o_g;
                let c = f_g * c_prev[bi * hidden + j] + i_g * g_g;
                let tc = math::tanh(c);
                c_t[bi * hidden + j] = c;
                tc_t[bi * hidden + j] = tc;
                h_t[bi * hidden + j] = o_g * tc;
            }
        }
    }
    let out = recurrent_output(&cache.h, batch, steps, hidden, return_sequences);
    Ok((out, cache))
}

/// Adjoint of [`lstm_forward`]. Returns `(dx, dw, du, db)`.
pub(crate) fn lstm_backward(
    x: &Tensor,
    w: &Tensor,
    u: &Tensor,
    cache: &RecurrentCache,
    return_sequences: bool,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor, Tensor) {
    let (batch, steps, in_dim) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hidden = w.shape()[1] / 4;
    let bh = batch * hidden;
    let zeros = vec![0.0; bh];

    let mut dw = vec![0.0; in_dim * 4 * hidden];
    let mut du = vec![0.0; hidden * 4 * hidden];
    let mut db = vec![0.0; 4 * hidden];
    let mut dx = vec![0.0; batch * steps * in_dim];

    let mut dh_next = vec![0.0; bh];
    let mut dc_next = vec![0.0; bh];
    let mut da = vec![0.0; batch * 4 * hidden];
    let mut xt = vec![0.0; batch * in_dim];
    let mut dxt = vec![0.0; batch * in_dim];

    for t in (0..steps).rev() {
        let gates = &cache.gates[t * batch * 4 * hidden..(t + 1) * batch * 4 * hidden];
        let tc_t = &cache.tanh_c[t * bh..(t + 1) * bh];
        let (h_prev, c_prev): (&[f64], &[f64]) = if t == 0 {
            (&zeros, &zeros)
        } else {
            (
                &cache.h[(t - 1) * bh..t * bh],
                &cache.c[(t - 1) * bh..t * bh],
            )
        };
        for bi in 0..batch {
            for j in 0..hidden {
                let idx = bi * hidden + j;
                // incoming hidden gradient: recurrent + sequence output slot
                let mut dh = dh_next[idx];
                if return_sequences {
                    dh += dout.data()[bi * steps * hidden + t * hidden + j];
                } else if t == steps - 1 {
                    dh += dout.data()[idx];
                }
                let g = &gates[bi * 4 * hidden..(bi + 1) * 4 * hidden];
                let (i_g, f_g, g_g, o_g) =
                    (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
                let tc = tc_t[idx];
                let dc = dh * o_g * (1.0 - tc * tc) + dc_next[idx];
                let da_row = &mut da[bi * 4 * hidden..(bi + 1) * 4 * hidden];
                da_row[j] = dc * g_g * i_g * (1.0 - i_g);
                da_row[hidden + j] = dc * c_prev[idx] * f_g * (1.0 - f_g);
                da_row[2 * hidden + j] = dc * i_g * (1.0 - g_g * g_g);
                da_row[3 * hidden + j] = dh * tc * o_g * (1.0 - o_g);
                dc_next[idx] = dc * f_g;
            }
        }
        gather_step(x.data(), &mut xt, batch, steps, in_dim, t);
        matmul_at_b_acc_block(
            &mut dw, 4 * hidden, 0, &xt, in_dim, 0, &da, 4 * hidden, 0, batch, in_dim,
            4 * hidden,
        );
        matmul_at_b_acc_block(
            &mut du, 4 * hidden, 0, h_prev, hidden, 0, &da, 4 * hidden, 0, batch, hidden,
            4 * hidden,
        );
        col_sum_acc(&mut db, &da, batch, 4 * hidden);
        dxt.iter_mut().for_each(|v| *v = 0.0);
        matmul_a_bt_acc_block(
            &mut dxt, in_dim, 0, &da, 4 * hidden, 0, w.data(), 4 * hidden, 0, batch,
            4 * hidden, in_dim,
        );
        scatter_step(&mut dx, &dxt, batch, steps, in_dim, t);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        matmul_a_bt_acc_block(
            &mut dh_next, hidden, 0, &da, 4 * hidden, 0, u.data(), 4 * hidden, 0, batch,
            4 * hidden, hidden,
        );
    }
    (
        Tensor::from_vec(&[batch, steps, in_dim], dx),
        Tensor::from_vec(&[in_dim, 4 * hidden], dw),
        Tensor::from_vec(&[hidden, 4 * hidden], du),
        Tensor::from_vec(&[4 * hidden], db),
    )
}

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

/// GRU over `x [B,T,I]` with zero initial state, gate order (z, r, h~):
/// `h_t = (1 - z_t) (.) h_{t-1} + z_t (.) h~_t`.
pub fn gru_apply(
    x: &Tensor,
    w: &Tensor,
    u: &Tensor,
    b: &Tensor,
    return_sequences: bool,
) -> Result<Tensor, NnError> {
    let (out, _) = gru_forward(x, w, u, b, return_sequences)?;
    if !out.all_finite() {
        return Err(NnError::NonFiniteActivation { layer: "gru" });
    }
    Ok(out)
}

pub(crate) fn gru_forward(
    x: &Tensor,
    w: &Tensor,
    u: &Tensor,
    b: &Tensor,
    return_sequences: bool,
) -> Result<(Tensor, RecurrentCache), NnError> {
    let (batch, steps, in_dim, hidden) = check_recurrent_shapes(x, w, u, b, 3, "gru input")?;
    let bh = batch * hidden;
    let mut cache = RecurrentCache {
        gates: vec![0.0; steps * batch * 3 * hidden],
        h: vec![0.0; steps * bh],
        c: Vec::new(),
        tanh_c: Vec::new(),
    };
    let mut xt = vec![0.0; batch * in_dim];
    let mut rh = vec![0.0; bh];
    let zeros = vec![0.0; bh];
    for t in 0..steps {
        gather_step(x.data(), &mut xt, batch, steps, in_dim, t);
        let (h_done, h_rest) = cache.h.split_at_mut(t * bh);
        let h_prev: &[f64] = if t == 0 { &zeros } else { &h_done[(t - 1) * bh..] };
        let h_t = &mut h_rest[..bh];
        let gates = &mut cache.gates[t * batch * 3 * hidden..(t + 1) * batch * 3 * hidden];
        // a = xt.W + b on all three blocks; U contributes h_prev on (z, r)
        // and r (.) h_prev on the candidate block.
        matmul_acc(gates, &xt, w.data(), batch, in_dim, 3 * hidden);
        add_row_bias(gates, b.data(), batch, 3 * hidden);
        matmul_acc_block(
            gates, 3 * hidden, 0, h_prev, u.data(), 3 * hidden, 0, batch, hidden, 2 * hidden,
        );
        for bi in 0..batch {
            let g = &mut gates[bi * 3 * hidden..(bi + 1) * 3 * hidden];
            for j in 0..hidden {
                g[j] = math::sigmoid(g[j]);
                let r = math::sigmoid(g[hidden + j]);
                g[hidden + j] = r;
                rh[bi * hidden + j] = r * h_prev[bi * hidden + j];
            }
        }
        matmul_acc_block(
            gates, 3 * hidden, 2 * hidden, &rh, u.data(), 3 * hidden, 2 * hidden, batch, hidden,
            hidden,
        );
        for bi in 0..batch {
            let g = &mut gates[bi * 3 * hidden..(bi + 1) * 3 * hidden];
            for j in 0..hidden {
                let z = g[j];
                let hh = math::tanh(g[2 * hidden + j]);
                g[2 * hidden + j] = hh;
                h_t[bi * hidden + j] = (1.0 - z) * h_prev[bi * hidden + j] + z * hh;
            }
        }
    }
    let out = recurrent_output(&cache.h, batch, steps, hidden, return_sequences);
    Ok((out, cache))
}

/// Adjoint of [`gru_forward`]. Returns `(dx, dw, du, db)`.
pub(crate) fn gru_backward(
    x: &Tensor,
    w: &Tensor,
    u: &Tensor,
    cache: &RecurrentCache,
    return_sequences: bool,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor, Tensor) {
    let (batch, steps, in_dim) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hidden = w.shape()[1] / 3;
    let bh = batch * hidden;
    let zeros = vec![0.0; bh];

    let mut dw = vec![0.0; in_dim * 3 * hidden];
    let mut du = vec![0.0; hidden * 3 * hidden];
    let mut db = vec![0.0; 3 * hidden];
    let mut dx = vec![0.0; batch * steps * in_dim];

    let mut dh_next = vec![0.0; bh];
    let mut dh_prev = vec![0.0; bh];
    let mut da = vec![0.0; batch * 3 * hidden];
    let mut drh = vec![0.0; bh];
    let mut rh = vec![0.0; bh];
    let mut xt = vec![0.0; batch * in_dim];
    let mut dxt = vec![0.0; batch * in_dim];

    for t in (0..steps).rev() {
        let gates = &cache.gates[t * batch * 3 * hidden..(t + 1) * batch * 3 * hidden];
        let h_prev: &[f64] = if t == 0 {
            &zeros
        } else {
            &cache.h[(t - 1) * bh..t * bh]
        };
        // dh = recurrent gradient + sequence output slot
        for bi in 0..batch {
            for j in 0..hidden {
                let idx = bi * hidden + j;
                let mut dh = dh_next[idx];
                if return_sequences {
                    dh += dout.data()[bi * steps * hidden + t * hidden + j];
                } else if t == steps - 1 {
                    dh += dout.data()[idx];
                }
                let g = &gates[bi * 3 * hidden..(bi + 1) * 3 * hidden];
                let (z, hh) = (g[j], g[2 * hidden + j]);
                let da_row = &mut da[bi * 3 * hidden..(bi + 1) * 3 * hidden];
                da_row[j] = dh * (hh - h_prev[idx]) * z * (1.0 - z);
                da_row[2 * hidden + j] = dh * z * (1.0 - hh * hh);
                dh_prev[idx] = dh * (1.0 - z);
            }
        }
        // drh = da_h . U_h^T, then the r gate and its h_prev path
        drh.iter_mut().for_each(|v| *v = 0.0);
        matmul_a_bt_acc_block(
            &mut drh, hidden, 0, &da, 3 * hidden, 2 * hidden, u.data(), 3 * hidden, 2 * hidden,
            batch, hidden, hidden,
        );
        for bi in 0..batch {
            let g = &gates[bi * 3 * hidden..(bi + 1) * 3 * hidden];
            for j in 0..hidden {
                let idx = bi * hidden + j;
                let r = g[hidden + j];
                da[bi * 3 * hidden + hidden + j] = drh[idx] * h_prev[idx] * r * (1.0 - r);
                dh_prev[idx] += drh[idx] * r;
                rh[idx] = r * h_prev[idx];
            }
        }
        gather_step(x.data(), &mut xt, batch, steps, in_dim, t);
        matmul_at_b_acc_block(
            &mut dw, 3 * hidden, 0, &xt, in_dim, 0, &da, 3 * hidden, 0, batch, in_dim,
            3 * hidden,
        );
        // z and r blocks of dU accumulate against h_prev, candidate against rh
        matmul_at_b_acc_block(
            &mut du, 3 * hidden, 0, h_prev, hidden, 0, &da, 3 * hidden, 0, batch, hidden,
            2 * hidden,
        );
        matmul_at_b_acc_block(
            &mut du, 3 * hidden, 2 * hidden, &rh, hidden, 0, &da, 3 * hidden, 2 * hidden, batch,
            hidden, hidden,
        );
        col_sum_acc(&mut db, &da, batch, 3 * hidden);
        dxt.iter_mut().for_each(|v| *v = 0.0);
        matmul_a_bt_acc_block(
            &mut dxt, in_dim, 0, &da, 3 * hidden, 0, w.data(), 3 * hidden, 0, batch, 3 * hidden,
            in_dim,
        );
        scatter_step(&mut dx, &dxt, batch, steps, in_dim, t);
        // dh_prev += (da_z | da_r) . U^T over the first two column blocks
        matmul_a_bt_acc_block(
            &mut dh_prev, hidden, 0, &da, 3 * hidden, 0, u.data(), 3 * hidden, 0, batch,
            2 * hidden, hidden,
        );
        core::mem::swap(&mut dh_next, &mut dh_prev);
    }
    (
        Tensor::from_vec(&[batch, steps, in_dim], dx),
        Tensor::from_vec(&[in_dim, 3 * hidden], dw),
        Tensor::from_vec(&[hidden, 3 * hidden], du),
        Tensor::from_vec(&[3 * hidden], db),
    )
}

// ---------------------------------------------------------------------------
// Time-distributed dense, concat, flatten
// ---------------------------------------------------------------------------

/// Dense layer applied independently at every timestep with shared weights:
/// `x [B,T,I] -> [B,T,O]`. Row-major layout makes this the plain dense
/// kernel on a `[B*T, I]` view.
pub fn time_distributed_dense(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    act: Activation,
) -> Result<Tensor, NnError> {
    let (batch, steps, in_dim) = dims3(x, "time-distributed input")?;
    let (w_in, out_dim) = dims2(w, "dense kernel")?;
    ensure(w_in == in_dim, || {
        format!("time-distributed kernel expects {w_in} inputs, input has {in_dim}")
    })?;
    ensure(b.shape() == [out_dim], || {
        format!("bias shape {:?}, expected [{out_dim}]", b.shape())
    })?;
    let flat = Tensor::from_vec(&[batch * steps, in_dim], x.data().to_vec());
    let y = dense_forward(&flat, w, b, act, batch * steps, in_dim, out_dim);
    Ok(y.reshaped(&[batch, steps, out_dim]))
}

/// Concatenate along the last axis. All inputs must share their leading
/// dimensions; rank 2 and rank 3 are both supported.
pub fn concat_features(xs: &[&Tensor]) -> Result<Tensor, NnError> {
    ensure(!xs.is_empty(), || String::from("concat of zero tensors"))?;
    let rank = xs[0].rank();
    ensure(rank >= 2, || format!("concat expects rank >= 2, got {rank}"))?;
    let lead = &xs[0].shape()[..rank - 1];
    let mut widths = Vec::with_capacity(xs.len());
    for x in xs {
        ensure(x.rank() == rank && &x.shape()[..rank - 1] == lead, || {
            format!(
                "concat leading dims differ: {:?} vs {:?}",
                xs[0].shape(),
                x.shape()
            )
        })?;
        widths.push(x.shape()[rank - 1]);
    }
    let rows: usize = lead.iter().product();
    let total: usize = widths.iter().sum();
    let mut out = vec![0.0; rows * total];
    for r in 0..rows {
        let mut off = 0;
        for (x, &w) in xs.iter().zip(&widths) {
            out[r * total + off..r * total + off + w]
                .copy_from_slice(&x.data()[r * w..(r + 1) * w]);
            off += w;
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Ok(Tensor::from_vec(&shape, out))
}

/// Split a concat gradient back into per-input gradients.
pub(crate) fn concat_backward(dy: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let rank = dy.rank();
    let lead = &dy.shape()[..rank - 1];
    let rows: usize = lead.iter().product();
    let total: usize = widths.iter().sum();
    let mut outs = Vec::with_capacity(widths.len());
    let mut off = 0;
    for &w in widths {
        let mut d = vec![0.0; rows * w];
        for r in 0..rows {
            d[r * w..(r + 1) * w]
                .copy_from_slice(&dy.data()[r * total + off..r * total + off + w]);
        }
        let mut shape = lead.to_vec();
        shape.push(w);
        outs.push(Tensor::from_vec(&shape, d));
        off += w;
    }
    outs
}

/// `[B,T,H] -> [B,T*H]` row-major reshape; the buffer is already laid out
/// that way, so this only relabels the shape.
pub fn flatten_seq(x: &Tensor) -> Result<Tensor, NnError> {
    let (batch, steps, width) = dims3(x, "flatten input")?;
    Ok(x.clone().reshaped(&[batch, steps * width]))
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

/// Copy timestep `t` of `x [B,T,I]` into contiguous `xt [B,I]`.
fn gather_step(x: &[f64], xt: &mut [f64], batch: usize, steps: usize, in_dim: usize, t: usize) {
    for bi in 0..batch {
        let src = bi * steps * in_dim + t * in_dim;
        xt[bi * in_dim..(bi + 1) * in_dim].copy_from_slice(&x[src..src + in_dim]);
    }
}

/// Accumulate `dxt [B,I]` into timestep `t` of `dx [B,T,I]`.
fn scatter_step(dx: &mut [f64], dxt: &[f64], batch: usize, steps: usize, in_dim: usize, t: usize) {
    for bi in 0..batch {
        let dst = bi * steps * in_dim + t * in_dim;
        for (o, &v) in dx[dst..dst + in_dim]
            .iter_mut()
            .zip(&dxt[bi * in_dim..(bi + 1) * in_dim])
        {
            *o += v;
        }
    }
}

fn recurrent_output(
    h: &[f64],
    batch: usize,
    steps: usize,
    hidden: usize,
    return_sequences: bool,
) -> Tensor {
    if return_sequences {
        // cache is t-major, the output tensor is batch-major
        let mut out = vec![0.0; batch * steps * hidden];
        for t in 0..steps {
            for bi in 0..batch {
                let src = t * batch * hidden + bi * hidden;
                let dst = bi * steps * hidden + t * hidden;
                out[dst..dst + hidden].copy_from_slice(&h[src..src + hidden]);
            }
        }
        Tensor::from_vec(&[batch, steps, hidden], out)
    } else {
        let last = &h[(steps - 1) * batch * hidden..steps * batch * hidden];
        Tensor::from_vec(&[batch, hidden], last.to_vec())
    }
}
