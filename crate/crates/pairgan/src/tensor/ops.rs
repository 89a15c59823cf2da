//! Dense kernels: elementwise maps, matrix multiply, bias, reductions,
//! layout ops, and fused softmax cross-entropy.
//!
//! All kernels use fixed iteration orders so results are bit-reproducible
//! run to run. Explicit reductions accumulate in f64.

use super::{Scalar, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Tanh,
    Softplus,
    Exp,
    Log,
    Recip,
}

impl UnaryKind {
    pub fn name(self) -> &'static str {
        match self {
            UnaryKind::Relu => "relu",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Recip => "recip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
}

impl BinKind {
    pub fn name(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
        }
    }
}

/// Numerically stable softplus: ln(1 + e^t) without overflow for large |t|.
pub fn softplus_stable<S: Scalar>(t: S) -> S {
    if t > S::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Numerically stable logistic sigmoid (the softplus derivative).
pub fn sigmoid_stable<S: Scalar>(t: S) -> S {
    if t >= S::zero() {
        S::one() / (S::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (S::one() + e)
    }
}

pub fn unary_fwd<S: Scalar>(kind: UnaryKind, x: &[S]) -> Result<Vec<S>, TensorError> {
    match kind {
        UnaryKind::Relu => Ok(x.iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect()),
        UnaryKind::Tanh => Ok(x.iter().map(|&v| v.tanh()).collect()),
        UnaryKind::Softplus => Ok(x.iter().map(|&v| softplus_stable(v)).collect()),
        UnaryKind::Exp => Ok(x.iter().map(|&v| v.exp()).collect()),
        UnaryKind::Log => {
            if let Some(&bad) = x.iter().find(|&&v| v <= S::zero()) {
                return Err(TensorError::Domain {
                    op: "log",
                    detail: format!("log of non-positive value {bad}"),
                });
            }
            Ok(x.iter().map(|&v| v.ln()).collect())
        }
        UnaryKind::Recip => {
            if x.iter().any(|&v| v == S::zero()) {
                return Err(TensorError::Domain {
                    op: "recip",
                    detail: "reciprocal of zero".into(),
                });
            }
            Ok(x.iter().map(|&v| S::one() / v).collect())
        }
    }
}

/// Accumulate dL/dx for a unary op. `x` is the input, `y` the saved output.
pub fn unary_bwd<S: Scalar>(kind: UnaryKind, x: &[S], y: &[S], g: &[S], dx: &mut [S]) {
    match kind {
        // Subgradient convention: relu'(0) = 0.
        UnaryKind::Relu => {
            for i in 0..x.len() {
                if x[i] > S::zero() {
                    dx[i] = dx[i] + g[i];
                }
            }
        }
        UnaryKind::Tanh => {
            for i in 0..x.len() {
                dx[i] = dx[i] + g[i] * (S::one() - y[i] * y[i]);
            }
        }
        UnaryKind::Softplus => {
            for i in 0..x.len() {
                dx[i] = dx[i] + g[i] * sigmoid_stable(x[i]);
            }
        }
        UnaryKind::Exp => {
            for i in 0..x.len() {
                dx[i] = dx[i] + g[i] * y[i];
            }
        }
        UnaryKind::Log => {
            for i in 0..x.len() {
                dx[i] = dx[i] + g[i] / x[i];
            }
        }
        UnaryKind::Recip => {
            for i in 0..x.len() {
                dx[i] = dx[i] - g[i] * y[i] * y[i];
            }
        }
    }
}

pub fn binary_fwd<S: Scalar>(kind: BinKind, a: &[S], b: &[S]) -> Vec<S> {
    match kind {
        BinKind::Add => a.iter().zip(b).map(|(&x, &y)| x + y).collect(),
        BinKind::Sub => a.iter().zip(b).map(|(&x, &y)| x - y).collect(),
        BinKind::Mul => a.iter().zip(b).map(|(&x, &y)| x * y).collect(),
    }
}

pub fn binary_bwd<S: Scalar>(
    kind: BinKind,
    a: &[S],
    b: &[S],
    g: &[S],
    da: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    match kind {
        BinKind::Add => {
            if let Some(da) = da {
                for i in 0..g.len() {
                    da[i] = da[i] + g[i];
                }
            }
            if let Some(db) = db {
                for i in 0..g.len() {
                    db[i] = db[i] + g[i];
                }
            }
        }
        BinKind::Sub => {
            if let Some(da) = da {
                for i in 0..g.len() {
                    da[i] = da[i] + g[i];
                }
            }
            if let Some(db) = db {
                for i in 0..g.len() {
                    db[i] = db[i] - g[i];
                }
            }
        }
        BinKind::Mul => {
            if let Some(da) = da {
                for i in 0..g.len() {
                    da[i] = da[i] + g[i] * b[i];
                }
            }
            if let Some(db) = db {
                for i in 0..g.len() {
                    db[i] = db[i] + g[i] * a[i];
                }
            }
        }
    }
}

/// C[m,n] = A[m,k] * B[k,n]. Inner summation runs over ascending k for every
/// output element (loop order i-k-j), so the result is order-deterministic.
pub fn matmul_fwd<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == S::zero() {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
    c
}

/// dA[m,k] += G[m,n] * B^T; each entry is a dot of two contiguous rows.
pub fn matmul_bwd_a<S: Scalar>(g: &[S], b: &[S], m: usize, k: usize, n: usize, da: &mut [S]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for l in 0..k {
            let brow = &b[l * n..(l + 1) * n];
            let mut acc = S::zero();
            for j in 0..n {
                acc = acc + grow[j] * brow[j];
            }
            da[i * k + l] = da[i * k + l] + acc;
        }
    }
}

/// dB[k,n] += A^T * G[m,n]; accumulation runs over ascending i.
pub fn matmul_bwd_b<S: Scalar>(g: &[S], a: &[S], m: usize, k: usize, n: usize, db: &mut [S]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == S::zero() {
                continue;
            }
            let drow = &mut db[l * n..(l + 1) * n];
            for j in 0..n {
                drow[j] = drow[j] + av * grow[j];
            }
        }
    }
}

/// y[i,j] = a[i,j] + bias[j] for a [rows, cols] input and [cols] bias.
pub fn add_bias_fwd<S: Scalar>(a: &[S], bias: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut y = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            y.push(a[i * cols + j] + bias[j]);
        }
    }
    y
}

/// dbias[j] += sum_i g[i,j], accumulated in f64.
pub fn add_bias_bwd_bias<S: Scalar>(g: &[S], rows: usize, cols: usize, dbias: &mut [S]) {
    for j in 0..cols {
        let mut acc = 0.0f64;
        for i in 0..rows {
            acc += g[i * cols + j].fl();
        }
        dbias[j] = dbias[j] + S::fr(acc);
    }
}

/// Full sum in f64.
pub fn sum_f64<S: Scalar>(x: &[S]) -> f64 {
    x.iter().map(|&v| v.fl()).sum()
}

/// Shapes are [outer, channels_i, inner...]; concatenation runs along axis 1.
/// Returns (outer, inner) after validating that the parts agree.
pub fn concat_layout(
    shapes: &[&[usize]],
) -> Result<(usize, usize, Vec<usize>, Vec<usize>), TensorError> {
    let first = shapes[0];
    if first.len() < 2 {
        return Err(TensorError::ShapeMismatch {
            op: "concat",
            detail: "concat requires rank >= 2 inputs".into(),
        });
    }
    let outer = first[0];
    let inner: usize = first[2..].iter().product();
    let mut channels = Vec::with_capacity(shapes.len());
    for s in shapes {
        if s.len() != first.len()
            || s[0] != outer
            || s[2..] != first[2..]
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: format!(
                    "parts must differ only along axis 1, got {} vs {}",
                    super::fmt_shape(first),
                    super::fmt_shape(s)
                ),
            });
        }
        channels.push(s[1]);
    }
    let total: usize = channels.iter().sum();
    let mut out_shape = first.to_vec();
    out_shape[1] = total;
    Ok((outer, inner, channels, out_shape))
}

/// Fused row-softmax + cross-entropy against integer labels.
/// Returns (mean loss over rows, row-softmax probabilities).
pub fn softmax_xent_fwd<S: Scalar>(
    logits: &[S],
    rows: usize,
    cols: usize,
    labels: &[usize],
) -> Result<(f64, Vec<S>), TensorError> {
    if labels.len() != rows {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_xent",
            detail: format!("{} labels for {} rows", labels.len(), rows),
        });
    }
    if rows == 0 {
        return Err(TensorError::Domain {
            op: "softmax_xent",
            detail: "empty batch".into(),
        });
    }
    let mut probs = vec![S::zero(); rows * cols];
    let mut total = 0.0f64;
    for i in 0..rows {
        let y = labels[i];
        if y >= cols {
            return Err(TensorError::Domain {
                op: "softmax_xent",
                detail: format!("label {y} out of range for {cols} classes"),
            });
        }
        let row = &logits[i * cols..(i + 1) * cols];
        let m = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v.fl()));
        let mut z = 0.0f64;
        for &v in row {
            z += (v.fl() - m).exp();
        }
        let ln_z = z.ln();
        for j in 0..cols {
            probs[i * cols + j] = S::fr(((row[j].fl() - m) - ln_z).exp());
        }
        total -= (row[y].fl() - m) - ln_z;
    }
    Ok((total / rows as f64, probs))
}

/// dlogits[i,j] += g0 * (p[i,j] - [j == label_i]) / rows.
pub fn softmax_xent_bwd<S: Scalar>(
    probs: &[S],
    rows: usize,
    cols: usize,
    labels: &[usize],
    g0: S,
    dlogits: &mut [S],
) {
    let inv_b = S::fr(1.0 / rows as f64);
    for i in 0..rows {
        for j in 0..cols {
            let ind = if labels[i] == j { S::one() } else { S::zero() };
            dlogits[i * cols + j] =
                dlogits[i * cols + j] + g0 * (probs[i * cols + j] - ind) * inv_b;
        }
    }
}
