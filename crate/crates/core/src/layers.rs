//! Building blocks shared by the audio and context encoders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    Sinusoidal,
    None,
}

/// Shape of a pre-norm transformer stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub positional: PositionalEncoding,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            positional: PositionalEncoding::Sinusoidal,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config(format!("{what}: layer count must be at least 1")));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{what}: dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

pub fn sinusoidal(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, dim]);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

pub fn init_linear(ps: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    ps.init_linear(&format!("{prefix}.w"), fan_in, fan_out, rng);
    ps.init_const(&format!("{prefix}.b"), &[1, fan_out], 0.0);
}

pub fn linear(g: &mut Graph, ps: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param_named(ps, &format!("{prefix}.w"))?;
    let b = g.param_named(ps, &format!("{prefix}.b"))?;
    g.affine(x, w, b)
}

pub fn init_layer_norm(ps: &mut ParamStore, prefix: &str, dim: usize) {
    ps.init_const(&format!("{prefix}.g"), &[1, dim], 1.0);
    ps.init_const(&format!("{prefix}.b"), &[1, dim], 0.0);
}

pub fn layer_norm(g: &mut Graph, ps: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param_named(ps, &format!("{prefix}.g"))?;
    let beta = g.param_named(ps, &format!("{prefix}.b"))?;
    g.layer_norm(x, gamma, beta)
}

pub struct Attention {
    /// Concatenated head outputs, n × heads·head_dim.
    pub out: Var,
    /// Per-head attention weights, each n×m.
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention over several heads.
///
/// `q_in` is n×·, `kv_in` is m×·; `mask` (n×m, row-major) marks the allowed
/// pairs. Projections live under `prefix.{q,k,v}` (no bias); the
/// concatenated heads are returned unprojected.
#[allow(clippy::too_many_arguments)]
pub fn multi_head(
    g: &mut Graph,
    ps: &ParamStore,
    prefix: &str,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    heads: usize,
    mask: Option<&[bool]>,
    logit_scale: f64,
) -> Result<Attention> {
    let wq = g.param_named(ps, &format!("{prefix}.q"))?;
    let wk = g.param_named(ps, &format!("{prefix}.k"))?;
    let wv = g.param_named(ps, &format!("{prefix}.v"))?;
    let q = g.matmul(q_in, wq)?;
    let k = g.matmul(k_in, wk)?;
    let v = g.matmul(v_in, wv)?;
    let hidden = g.shape(q)[1];
    let dh = hidden / heads;
    let scale = logit_scale / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let s = g.matmul_t(qh, kh)?;
        let s = g.scale(s, scale)?;
        let p = g.softmax_rows(s, mask)?;
        weights.push(p);
        outs.push(g.matmul(p, vh)?);
    }
    let out = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    Ok(Attention { out, weights })
}

pub fn init_attention(ps: &mut ParamStore, prefix: &str, q_dim: usize, kv_dim: usize, hidden: usize, rng: &mut impl Rng) {
    ps.init_linear(&format!("{prefix}.q"), q_dim, hidden, rng);
    ps.init_linear(&format!("{prefix}.k"), kv_dim, hidden, rng);
    ps.init_linear(&format!("{prefix}.v"), kv_dim, hidden, rng);
}

/// Pre-norm transformer stack with a final layer norm.
pub struct TransformerStack<'a> {
    pub prefix: &'a str,
    pub cfg: &'a EncoderConfig,
}

impl TransformerStack<'_> {
    pub fn init(&self, ps: &mut ParamStore, rng: &mut impl Rng) {
        let d = self.cfg.dim;
        for l in 0..self.cfg.layers {
            let p = format!("{}.{l}", self.prefix);
            init_layer_norm(ps, &format!("{p}.ln1"), d);
            init_attention(ps, &format!("{p}.att"), d, d, d, rng);
            init_linear(ps, &format!("{p}.att.o"), d, d, rng);
            init_layer_norm(ps, &format!("{p}.ln2"), d);
            init_linear(ps, &format!("{p}.ff1"), d, self.cfg.ff_dim, rng);
            init_linear(ps, &format!("{p}.ff2"), self.cfg.ff_dim, d, rng);
        }
        init_layer_norm(ps, &format!("{}.ln_out", self.prefix), d);
    }

    /// `x` is n×dim; `mask` (n×n) restricts self-attention.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let mut x = x;
        if self.cfg.positional == PositionalEncoding::Sinusoidal {
            let n = g.shape(x)[0];
            let pe = g.constant(sinusoidal(n, self.cfg.dim))?;
            x = g.add(x, pe)?;
        }
        for l in 0..self.cfg.layers {
            let p = format!("{}.{l}", self.prefix);
            let h = layer_norm(g, ps, &format!("{p}.ln1"), x)?;
            let a = multi_head(g, ps, &format!("{p}.att"), h, h, h, self.cfg.heads, mask, 1.0)?.out;
            let a = linear(g, ps, &format!("{p}.att.o"), a)?;
            x = g.add(x, a)?;
            let h = layer_norm(g, ps, &format!("{p}.ln2"), x)?;
            let f = linear(g, ps, &format!("{p}.ff1"), h)?;
            let f = g.relu(f)?;
            let f = linear(g, ps, &format!("{p}.ff2"), f)?;
            x = g.add(x, f)?;
        }
        layer_norm(g, ps, &format!("{}.ln_out", self.prefix), x)
    }
}
