//! Bidirectional phrase encoder producing per-position context vectors.
//!
//! Each phrase is encoded on its own with a start-of-phrase token in front,
//! so attention never crosses phrase boundaries and padding never enters
//! the computation at all.

use rand::Rng;

use crate::corpus::{ContextSet, SOS};
use crate::error::{Error, Result};
use crate::layers::{EncoderConfig, TransformerStack};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

pub const PREFIX: &str = "ctx";

/// Encoder output for a whole context set, flattened phrase-major.
///
/// Row `i·(U+1) + u` holds position `u` of phrase `i`; position 0 is the
/// start-of-phrase token. Padded rows are exactly zero.
#[derive(Clone, Debug)]
pub struct PhraseEmbeddings {
    pub values: Var,
    pub mask: Vec<bool>,
    pub phrases: usize,
    pub positions: usize,
    pub dim: usize,
}

impl PhraseEmbeddings {
    pub fn is_empty(&self) -> bool {
        self.phrases == 0
    }

    pub fn row_index(&self, phrase: usize, pos: usize) -> usize {
        phrase * self.positions + pos
    }

    /// Unpadded length of phrase `i`, counting the start token.
    pub fn len_of(&self, i: usize) -> usize {
        self.mask[i * self.positions..(i + 1) * self.positions]
            .iter()
            .filter(|&&m| m)
            .count()
    }
}

pub fn init_context_encoder(ps: &mut ParamStore, cfg: &EncoderConfig, vocab_size: usize, rng: &mut impl Rng) {
    ps.init_normal(&format!("{PREFIX}.embed"), &[vocab_size, cfg.dim], 1.0, rng);
    TransformerStack { prefix: &format!("{PREFIX}.enc"), cfg }.init(ps, rng);
}

pub fn encode_phrases(g: &mut Graph, ps: &ParamStore, ctx: &ContextSet, cfg: &EncoderConfig) -> Result<PhraseEmbeddings> {
    let d = cfg.dim;
    let b = ctx.len();
    let positions = ctx.max_len() + 1;
    if b == 0 {
        let values = g.constant(Tensor::zeros(&[0, d]))?;
        return Ok(PhraseEmbeddings {
            values,
            mask: Vec::new(),
            phrases: 0,
            positions,
            dim: d,
        });
    }
    let embed = g.param_named(ps, &format!("{PREFIX}.embed"))?;
    let vocab_size = g.shape(embed)[0];
    let prefix = format!("{PREFIX}.enc");
    let stack = TransformerStack { prefix: &prefix, cfg };
    let mut blocks = Vec::with_capacity(2 * b);
    let mut mask = Vec::with_capacity(b * positions);
    for phrase in ctx.phrases() {
        let mut ids = Vec::with_capacity(phrase.ids.len() + 1);
        ids.push(SOS);
        ids.extend_from_slice(&phrase.ids);
        if let Some(&bad) = ids.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::UnknownToken(bad));
        }
        let x = g.gather_rows(embed, &ids)?;
        let y = stack.forward(g, ps, x, None)?;
        blocks.push(y);
        let pad = positions - ids.len();
        if pad > 0 {
            blocks.push(g.constant(Tensor::zeros(&[pad, d]))?);
        }
        mask.extend(std::iter::repeat_n(true, ids.len()));
        mask.extend(std::iter::repeat_n(false, pad));
    }
    let values = if blocks.len() == 1 { blocks[0] } else { g.concat_rows(&blocks)? };
    Ok(PhraseEmbeddings {
        values,
        mask,
        phrases: b,
        positions,
        dim: d,
    })
}
