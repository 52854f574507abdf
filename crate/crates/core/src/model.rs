//! A complete biased transducer: parameters, architecture and vocabulary,
//! plus the versioned checkpoint format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asr_core::{
    beam_decode, encode_audio, greedy_decode, init_asr, joint, predictor, rnnt_loss_var, AsrConfig, Hypothesis,
    JointParams, ModelScorer, NoFusion, PredState,
};
use crate::context_encoder::{encode_phrases, init_context_encoder};
use crate::corpus::{ContextSet, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::fst_biaser::BiasTrie;
use crate::layers::EncoderConfig;
use crate::nam_memory::{apply_bias, init_bias_module, BiasVariant, MhaConfig};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub asr: AsrConfig,
    pub context: EncoderConfig,
    pub mha: MhaConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.asr.validate()?;
        self.context.validate("context encoder")?;
        self.mha.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeOptions {
    pub beam: usize,
    pub max_symbols: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { beam: 4, max_symbols: 3 }
    }
}

/// Hex SHA-256 of a value's canonical JSON, shortened to 16 digits.
pub fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub frame_dim: usize,
    pub variant: BiasVariant,
    pub params: ParamStore,
}

impl Model {
    /// Fresh transducer without a biasing module.
    pub fn new_base(config: &ModelConfig, vocab: &Vocab, frame_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_asr(&mut params, &config.asr, frame_dim, vocab.size(), &mut rng);
        Ok(Self {
            config: config.clone(),
            vocab: vocab.clone(),
            frame_dim,
            variant: BiasVariant::None,
            params,
        })
    }

    /// Copy of this base model with a freshly initialized biasing module.
    pub fn with_bias(&self, variant: BiasVariant, seed: u64) -> Result<Self> {
        if self.variant != BiasVariant::None {
            return Err(Error::Invalid(format!("model already carries a {} module", self.variant)));
        }
        let mut out = self.clone();
        out.variant = variant;
        if variant == BiasVariant::None {
            return Ok(out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_context_encoder(&mut out.params, &self.config.context, self.vocab.size(), &mut rng);
        init_bias_module(
            &mut out.params,
            variant,
            self.config.asr.encoder.dim,
            self.config.context.dim,
            &self.config.mha,
            &mut rng,
        );
        Ok(out)
    }

    /// Identifies the architecture and vocabulary, independent of the
    /// biasing variant and of the parameter values.
    pub fn fingerprint(&self) -> String {
        architecture_fingerprint(&self.config, &self.vocab, self.frame_dim)
    }

    /// Encoder output after the context shift, T×e.
    pub fn encode(&self, g: &mut Graph, frames: &Tensor, ctx: &ContextSet) -> Result<Var> {
        let h = encode_audio(g, &self.params, &self.config.asr, frames)?;
        if self.variant == BiasVariant::None {
            return Ok(h);
        }
        let emb = encode_phrases(g, &self.params, ctx, &self.config.context)?;
        apply_bias(g, &self.params, self.variant, h, &emb, &self.config.mha)
    }

    pub fn loss(&self, g: &mut Graph, frames: &Tensor, labels: &[TokenId], ctx: &ContextSet) -> Result<Var> {
        let h = self.encode(g, frames, ctx)?;
        let t = g.shape(h)[0];
        let p = predictor(g, &self.params, labels)?;
        let lat = joint(g, &self.params, h, p)?;
        rnnt_loss_var(g, lat, t, labels)
    }

    pub fn features(&self, frames: &Tensor, ctx: &ContextSet) -> Result<Tensor> {
        let mut g = Graph::new();
        let h = self.encode(&mut g, frames, ctx)?;
        Ok(g.value(h).clone())
    }

    /// Best hypothesis; a trie, when given, is fused into beam search.
    pub fn decode(
        &self,
        frames: &Tensor,
        ctx: &ContextSet,
        opts: &DecodeOptions,
        fusion: Option<&BiasTrie>,
    ) -> Result<Hypothesis<PredState>> {
        let h = self.features(frames, ctx)?;
        let jp = JointParams::from_store(&self.params)?;
        decode_features(&jp, &h, &self.vocab, opts, fusion)
    }

    pub fn has_bias_params(&self) -> bool {
        self.params.iter().any(|(_, n, _)| is_bias_param(n))
    }
}

pub fn decode_features(
    jp: &JointParams,
    h: &Tensor,
    vocab: &Vocab,
    opts: &DecodeOptions,
    fusion: Option<&BiasTrie>,
) -> Result<Hypothesis<PredState>> {
    let scorer = ModelScorer::new(jp, h, vocab)?;
    let hyps = match fusion {
        Some(trie) => beam_decode(&scorer, opts.beam, opts.max_symbols, trie),
        None if opts.beam <= 1 => vec![greedy_decode(&scorer, opts.max_symbols)],
        None => beam_decode(&scorer, opts.beam, opts.max_symbols, &NoFusion),
    };
    hyps.into_iter().next().ok_or(Error::EmptyInput("beam search result"))
}

pub fn is_bias_param(name: &str) -> bool {
    ["ctx.", "nam.", "clas."].iter().any(|p| name.starts_with(p))
}

pub fn is_joint_param(name: &str) -> bool {
    name.starts_with("joint.")
}

pub fn architecture_fingerprint(config: &ModelConfig, vocab: &Vocab, frame_dim: usize) -> String {
    fingerprint_of(&(config, vocab.alphabet(), frame_dim))
}

const MAGIC: &[u8; 8] = b"NAMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub fingerprint: String,
    pub variant: BiasVariant,
    pub alphabet: String,
    pub frame_dim: usize,
    pub config: ModelConfig,
    /// Fingerprint of the run configuration that produced the checkpoint.
    pub run: String,
    params: Vec<ParamEntry>,
}

/// Layout: 8-byte magic, u32 version, u64 header length, JSON header,
/// then every parameter's values as little-endian f64 in header order.
pub fn save_checkpoint(path: &Path, model: &Model, run_fingerprint: &str) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        fingerprint: model.fingerprint(),
        variant: model.variant,
        alphabet: model.vocab.alphabet(),
        frame_dim: model.frame_dim,
        config: model.config.clone(),
        run: run_fingerprint.to_string(),
        params: model
            .params
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(20 + json.len() + model.params.num_values() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, _, t) in model.params.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_start = 20 + hlen;
    if bytes.len() < body_start {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[20..body_start])?;
    let mut params = ParamStore::new();
    let mut off = body_start;
    for p in &header.params {
        let n: usize = p.shape.iter().product();
        let end = off + n * 8;
        if bytes.len() < end {
            return Err(bad(&format!("truncated data for {}", p.name)));
        }
        let data = bytes[off..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(p.name.clone(), Tensor::new(p.shape.clone(), data)?);
        off = end;
    }
    if off != bytes.len() {
        return Err(bad("trailing bytes after parameter data"));
    }
    let vocab = Vocab::new(&header.alphabet)?;
    let model = Model {
        config: header.config.clone(),
        vocab,
        frame_dim: header.frame_dim,
        variant: header.variant,
        params,
    };
    if model.fingerprint() != header.fingerprint {
        return Err(bad("stored fingerprint does not match its own architecture"));
    }
    Ok((model, header))
}

/// Hash of every parameter name, shape and value, for checking that a
/// command left a model untouched.
pub fn params_digest(params: &ParamStore) -> String {
    let mut h = Sha256::new();
    for (_, name, t) in params.iter() {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
