//! Transducer negative log-likelihood by forward–backward recursion.

use crate::corpus::{TokenId, BLANK};
use crate::error::{Error, Result};
use crate::numerics::{log_add, Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct RnntLoss {
    /// −log P(labels | audio); +∞ when no alignment exists.
    pub nll: f64,
    pub feasible: bool,
    /// d nll / d lattice, same shape as the lattice (zero when infeasible).
    pub grad: Tensor,
}

/// `lattice` is (T·(L+1))×V log-probabilities, row `t·(L+1) + u`.
pub fn rnnt_loss(lattice: &Tensor, frames: usize, labels: &[TokenId]) -> Result<RnntLoss> {
    let l1 = labels.len() + 1;
    if lattice.rows() != frames * l1 {
        return Err(Error::BadShape {
            shape: lattice.shape().to_vec(),
            len: frames * l1,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= lattice.cols() || y == BLANK) {
        return Err(Error::UnknownToken(bad));
    }
    if frames == 0 {
        return Ok(RnntLoss {
            nll: f64::INFINITY,
            feasible: false,
            grad: Tensor::zeros(lattice.shape()),
        });
    }
    let t_n = frames;
    let blank = |t: usize, u: usize| lattice.get(t * l1 + u, BLANK);
    let emit = |t: usize, u: usize| lattice.get(t * l1 + u, labels[u]);

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_n * l1];
    for t in 0..t_n {
        for u in 0..l1 {
            let a = if t == 0 && u == 0 {
                0.0
            } else {
                let from_t = if t > 0 { alpha[(t - 1) * l1 + u] + blank(t - 1, u) } else { ninf };
                let from_u = if u > 0 { alpha[t * l1 + u - 1] + emit(t, u - 1) } else { ninf };
                log_add(from_t, from_u)
            };
            alpha[t * l1 + u] = a;
        }
    }
    let mut beta = vec![ninf; t_n * l1];
    for t in (0..t_n).rev() {
        for u in (0..l1).rev() {
            let b = if t == t_n - 1 && u == l1 - 1 {
                blank(t, u)
            } else {
                let via_t = if t + 1 < t_n { beta[(t + 1) * l1 + u] + blank(t, u) } else { ninf };
                let via_u = if u + 1 < l1 { beta[t * l1 + u + 1] + emit(t, u) } else { ninf };
                log_add(via_t, via_u)
            };
            beta[t * l1 + u] = b;
        }
    }
    let log_z = beta[0];
    let fwd = alpha[(t_n - 1) * l1 + l1 - 1] + blank(t_n - 1, l1 - 1);
    debug_assert!((log_z - fwd).abs() <= 1e-8 * log_z.abs().max(1.0));
    if !log_z.is_finite() {
        return Ok(RnntLoss {
            nll: f64::INFINITY,
            feasible: false,
            grad: Tensor::zeros(lattice.shape()),
        });
    }

    let mut grad = Tensor::zeros(lattice.shape());
    for t in 0..t_n {
        for u in 0..l1 {
            let a = alpha[t * l1 + u];
            let after_blank = if t + 1 < t_n {
                beta[(t + 1) * l1 + u]
            } else if u == l1 - 1 {
                0.0
            } else {
                ninf
            };
            let r = t * l1 + u;
            grad.set(r, BLANK, -(a + blank(t, u) + after_blank - log_z).exp());
            if u + 1 < l1 {
                let y = labels[u];
                grad.set(r, y, -(a + emit(t, u) + beta[t * l1 + u + 1] - log_z).exp());
            }
        }
    }
    Ok(RnntLoss {
        nll: -fwd,
        feasible: true,
        grad,
    })
}

/// Loss node on the tape; an infeasible alignment is an error here because
/// training cannot use it.
pub fn rnnt_loss_var(g: &mut Graph, lattice: Var, frames: usize, labels: &[TokenId]) -> Result<Var> {
    let r = rnnt_loss(g.value(lattice), frames, labels)?;
    if !r.feasible {
        return Err(Error::InfeasibleAlignment { labels: labels.len() });
    }
    g.scalar_fn(lattice, r.nll, r.grad)
}
