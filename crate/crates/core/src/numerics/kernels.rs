//! Plain (untracked) numeric kernels shared by the tape and the inference paths.

use super::Tensor;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-6;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with optional mask; masked entries come out as exactly 0.
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let n = x.cols();
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_rows mask",
                lhs: x.shape().to_vec(),
                rhs: vec![m.len()],
            });
        }
    }
    let mut out = x.clone();
    for (r, row) in out.data_mut().chunks_mut(n).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[r * n + j]);
        let mx = (0..n)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            return Err(Error::FullyMaskedRow(r));
        }
        let mut sum = 0.0;
        for j in 0..n {
            if keep(j) {
                row[j] = (row[j] - mx).exp();
                sum += row[j];
            } else {
                row[j] = 0.0;
            }
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let n = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        log_softmax_in_place(row);
    }
    out
}

pub fn log_softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

/// Per-row standardization; returns (x̂, 1/σ) for the layer-norm backward.
pub fn normalize_rows(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = x.cols();
    let nf = n as f64;
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.rows());
    for row in x.data().chunks(n) {
        let mean = row.iter().sum::<f64>() / nf;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let is = 1.0 / (var + LN_EPS).sqrt();
        xhat.extend(row.iter().map(|v| (v - mean) * is));
        inv_std.push(is);
    }
    (xhat, inv_std)
}

pub fn layer_norm(x: &Tensor, gamma: &[f64], beta: &[f64]) -> Tensor {
    let n = x.cols();
    let (mut xhat, _) = normalize_rows(x);
    for row in xhat.chunks_mut(n) {
        for j in 0..n {
            row[j] = row[j] * gamma[j] + beta[j];
        }
    }
    Tensor::new(x.shape().to_vec(), xhat).expect("same shape")
}
