//! Key–value associative memory over phrase embeddings, multi-head
//! retrieval queried by audio features, and the additive feature shift.
//!
//! Slot `l` for phrase `i`, position `u` stores `x_{u-1,i} → x_{u,i}`; the
//! last slot is a learned no-bias pair and is never masked. The ablation
//! variants (no left shift, one slot per phrase, additive CLAS-style
//! attention) share the same entry points.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context_encoder::PhraseEmbeddings;
use crate::error::{Error, Result};
use crate::layers::{init_attention, multi_head};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BiasVariant {
    #[serde(rename = "nam")]
    Nam,
    #[serde(rename = "nam-noshift")]
    NamNoLeftShift,
    #[serde(rename = "nam-single")]
    NamSingle,
    #[serde(rename = "clas")]
    ClasEncoder,
    #[serde(rename = "none")]
    None,
}

impl BiasVariant {
    pub const ALL: [BiasVariant; 5] = [
        BiasVariant::Nam,
        BiasVariant::NamNoLeftShift,
        BiasVariant::NamSingle,
        BiasVariant::ClasEncoder,
        BiasVariant::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BiasVariant::Nam => "nam",
            BiasVariant::NamNoLeftShift => "nam-noshift",
            BiasVariant::NamSingle => "nam-single",
            BiasVariant::ClasEncoder => "clas",
            BiasVariant::None => "none",
        }
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, BiasVariant::Nam | BiasVariant::NamNoLeftShift | BiasVariant::NamSingle)
    }

    pub fn uses_context(self) -> bool {
        self != BiasVariant::None
    }
}

impl fmt::Display for BiasVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BiasVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected nam, nam-noshift, nam-single, clas or none)")))
    }
}

/// Retrieval attention shape. Input (audio) and memory dims come from the
/// surrounding model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhaConfig {
    pub heads: usize,
    pub hidden: usize,
    /// Multiplies every attention logit on top of the 1/√d_head scaling.
    pub logit_scale: f64,
}

impl Default for MhaConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            hidden: 128,
            logit_scale: 1.0,
        }
    }
}

impl MhaConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "bias attention: hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::Config("bias attention: logit_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Memory rows on the tape. Row `N-1` is the no-bias slot.
#[derive(Clone, Debug)]
pub struct MemoryVars {
    pub keys: Var,
    pub values: Var,
    pub mask: Vec<bool>,
}

impl MemoryVars {
    pub fn slots(&self) -> usize {
        self.mask.len()
    }

    /// Memory from explicit tensors, for probing retrieval in isolation.
    pub fn from_tensors(g: &mut Graph, keys: Tensor, values: Tensor, mask: Vec<bool>) -> Result<Self> {
        if keys.shape() != values.shape() || keys.rows() != mask.len() {
            return Err(Error::ShapeMismatch {
                op: "memory",
                lhs: keys.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        }
        Ok(Self {
            keys: g.constant(keys)?,
            values: g.constant(values)?,
            mask,
        })
    }

    pub fn snapshot(&self, g: &Graph) -> AssociativeMemory {
        AssociativeMemory {
            keys: g.value(self.keys).clone(),
            values: g.value(self.values).clone(),
            mask: self.mask.clone(),
        }
    }
}

/// Detached copy of a memory's contents.
#[derive(Clone, Debug, PartialEq)]
pub struct AssociativeMemory {
    pub keys: Tensor,
    pub values: Tensor,
    pub mask: Vec<bool>,
}

pub fn init_bias_module(
    ps: &mut ParamStore,
    variant: BiasVariant,
    audio_dim: usize,
    mem_dim: usize,
    cfg: &MhaConfig,
    rng: &mut impl Rng,
) {
    match variant {
        BiasVariant::None => {}
        BiasVariant::ClasEncoder => {
            ps.init_normal("clas.nobias", &[1, mem_dim], 1.0, rng);
            ps.init_linear("clas.wh", audio_dim, cfg.hidden, rng);
            ps.init_linear("clas.wz", mem_dim, cfg.hidden, rng);
            ps.init_linear("clas.w", cfg.hidden, 1, rng);
            ps.init_const("clas.proj.w", &[mem_dim, audio_dim], 0.0);
            ps.init_const("clas.proj.b", &[1, audio_dim], 0.0);
        }
        _ => {
            ps.init_normal("nam.nobias.key", &[1, mem_dim], 1.0, rng);
            ps.init_normal("nam.nobias.value", &[1, mem_dim], 1.0, rng);
            init_attention(ps, "nam.mha", audio_dim, mem_dim, cfg.hidden, rng);
            ps.init_const("nam.proj.w", &[cfg.hidden, audio_dim], 0.0);
            ps.init_const("nam.proj.b", &[1, audio_dim], 0.0);
        }
    }
}

/// Masked mean over each phrase's unpadded positions, B×d.
fn pool_phrases(g: &mut Graph, emb: &PhraseEmbeddings) -> Result<Var> {
    let b = emb.phrases;
    let n = b * emb.positions;
    let mut pool = Tensor::zeros(&[b, n]);
    for i in 0..b {
        let len = emb.len_of(i) as f64;
        for u in 0..emb.positions {
            let r = emb.row_index(i, u);
            if emb.mask[r] {
                pool.set(i, r, 1.0 / len);
            }
        }
    }
    let pool = g.constant(pool)?;
    g.matmul(pool, emb.values)
}

/// Lays out the memory for a memory-based variant.
pub fn build_memory(g: &mut Graph, ps: &ParamStore, emb: &PhraseEmbeddings, variant: BiasVariant) -> Result<MemoryVars> {
    if !variant.uses_memory() {
        return Err(Error::Invalid(format!("variant {variant} has no associative memory")));
    }
    let nb_key = g.param_named(ps, "nam.nobias.key")?;
    let nb_value = g.param_named(ps, "nam.nobias.value")?;
    if emb.is_empty() {
        return Ok(MemoryVars {
            keys: nb_key,
            values: nb_value,
            mask: vec![true],
        });
    }
    let (keys, values, mut mask) = if variant == BiasVariant::NamSingle {
        let pooled = pool_phrases(g, emb)?;
        (pooled, pooled, vec![true; emb.phrases])
    } else {
        let shift = usize::from(variant == BiasVariant::Nam);
        let u_eff = emb.positions - 1;
        let mut kidx = Vec::with_capacity(emb.phrases * u_eff);
        let mut vidx = Vec::with_capacity(emb.phrases * u_eff);
        let mut mask = Vec::with_capacity(emb.phrases * u_eff + 1);
        for i in 0..emb.phrases {
            let len = emb.len_of(i);
            for u in 1..=u_eff {
                let real = u < len;
                let v = if real { emb.row_index(i, u) } else { 0 };
                vidx.push(v);
                kidx.push(if real { v - shift } else { 0 });
                mask.push(real);
            }
        }
        let k = g.gather_rows(emb.values, &kidx)?;
        let v = if shift == 0 { k } else { g.gather_rows(emb.values, &vidx)? };
        (k, v, mask)
    };
    mask.push(true);
    let keys = g.concat_rows(&[keys, nb_key])?;
    let values = g.concat_rows(&[values, nb_value])?;
    Ok(MemoryVars { keys, values, mask })
}

pub struct Retrieval {
    /// T × hidden, concatenated heads before the output projection.
    pub heads: Var,
    /// One T×N weight matrix per head.
    pub weights: Vec<Var>,
}

/// Multi-head attention from audio frames `h` (T×e) into the memory.
pub fn retrieve(g: &mut Graph, ps: &ParamStore, h: Var, mem: &MemoryVars, cfg: &MhaConfig) -> Result<Retrieval> {
    let t = g.shape(h)[0];
    let mask: Vec<bool> = (0..t).flat_map(|_| mem.mask.iter().copied()).collect();
    let all_valid = mem.mask.iter().all(|&m| m);
    let att = multi_head(
        g,
        ps,
        "nam.mha",
        h,
        mem.keys,
        mem.values,
        cfg.heads,
        if all_valid { None } else { Some(&mask) },
        cfg.logit_scale,
    )?;
    Ok(Retrieval {
        heads: att.out,
        weights: att.weights,
    })
}

/// `h + P(retrieve(h))`.
pub fn bias_features(g: &mut Graph, ps: &ParamStore, h: Var, mem: &MemoryVars, cfg: &MhaConfig) -> Result<Var> {
    let r = retrieve(g, ps, h, mem, cfg)?;
    let shift = crate::layers::linear(g, ps, "nam.proj", r.heads)?;
    g.add(h, shift)
}

pub struct ClasRetrieval {
    /// T × d weighted sum of phrase vectors (no-bias vector last).
    pub context: Var,
    /// T × (B+1)
    pub weights: Var,
}

/// Single-head additive attention over per-phrase vectors `z` (B×d, may be
/// empty) plus the learned no-bias vector.
pub fn retrieve_clas(g: &mut Graph, ps: &ParamStore, h: Var, z: Option<Var>) -> Result<ClasRetrieval> {
    let nb = g.param_named(ps, "clas.nobias")?;
    let zs = match z {
        Some(z) => g.concat_rows(&[z, nb])?,
        None => nb,
    };
    let t = g.shape(h)[0];
    let n = g.shape(zs)[0];
    let wh = g.param_named(ps, "clas.wh")?;
    let wz = g.param_named(ps, "clas.wz")?;
    let w = g.param_named(ps, "clas.w")?;
    let a = g.matmul(h, wh)?;
    let b = g.matmul(zs, wz)?;
    let s = g.outer_add(a, b)?;
    let s = g.tanh(s)?;
    let s = g.matmul(s, w)?;
    let s = g.reshape(s, &[t, n])?;
    let weights = g.softmax_rows(s, None)?;
    let context = g.matmul(weights, zs)?;
    Ok(ClasRetrieval { context, weights })
}

/// Shifts encoder output `h` using the context, according to `variant`.
pub fn apply_bias(
    g: &mut Graph,
    ps: &ParamStore,
    variant: BiasVariant,
    h: Var,
    emb: &PhraseEmbeddings,
    cfg: &MhaConfig,
) -> Result<Var> {
    match variant {
        BiasVariant::None => Ok(h),
        BiasVariant::ClasEncoder => {
            let z = if emb.is_empty() { None } else { Some(pool_phrases(g, emb)?) };
            let r = retrieve_clas(g, ps, h, z)?;
            let shift = crate::layers::linear(g, ps, "clas.proj", r.context)?;
            g.add(h, shift)
        }
        _ => {
            let mem = build_memory(g, ps, emb, variant)?;
            bias_features(g, ps, h, &mem, cfg)
        }
    }
}
