//! Small transducer: self-attention audio encoder, recurrent prediction
//! network, additive joint network, transducer loss and decoders.

mod decode;
mod loss;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, SOS};
use crate::error::{Error, Result};
use crate::layers::{init_linear, linear, EncoderConfig, TransformerStack};
use crate::numerics::{kernels, Graph, ParamStore, Tensor, Var};

pub use decode::{
    beam_decode, greedy_decode, Fusion, Hypothesis, ModelScorer, NoFusion, PredState, TransducerScorer,
};
pub use loss::{rnnt_loss, rnnt_loss_var, RnntLoss};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsrConfig {
    pub subsample: usize,
    pub encoder: EncoderConfig,
    pub pred_dim: usize,
    pub joint_dim: usize,
}

impl Default for AsrConfig {
    fn default() -> Self {
        Self {
            subsample: 1,
            encoder: EncoderConfig::default(),
            pred_dim: 64,
            joint_dim: 64,
        }
    }
}

impl AsrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subsample == 0 {
            return Err(Error::Config("asr: subsample must be at least 1".into()));
        }
        if self.pred_dim == 0 || self.joint_dim == 0 {
            return Err(Error::Config("asr: pred_dim and joint_dim must be positive".into()));
        }
        self.encoder.validate("audio encoder")
    }

    pub fn output_frames(&self, input_frames: usize) -> usize {
        input_frames.div_ceil(self.subsample)
    }
}

pub fn init_asr(ps: &mut ParamStore, cfg: &AsrConfig, frame_dim: usize, vocab_size: usize, rng: &mut impl Rng) {
    let e = cfg.encoder.dim;
    init_linear(ps, "enc.in", frame_dim * cfg.subsample, e, rng);
    TransformerStack {
        prefix: "enc.tf",
        cfg: &cfg.encoder,
    }
    .init(ps, rng);
    let p = cfg.pred_dim;
    ps.init_normal("pred.embed", &[vocab_size, p], 1.0, rng);
    ps.init_linear("pred.wx", p, p, rng);
    ps.init_linear("pred.wh", p, p, rng);
    ps.init_const("pred.b", &[1, p], 0.0);
    init_linear(ps, "joint.enc", e, cfg.joint_dim, rng);
    ps.init_linear("joint.pred.w", p, cfg.joint_dim, rng);
    init_linear(ps, "joint.out", cfg.joint_dim, vocab_size, rng);
}

/// Concatenates each run of `factor` frames (zero-padding the tail).
pub fn stack_frames(frames: &Tensor, factor: usize) -> Tensor {
    if factor == 1 {
        return frames.clone();
    }
    let (t0, f) = (frames.rows(), frames.cols());
    let t = t0.div_ceil(factor);
    let mut out = Tensor::zeros(&[t, f * factor]);
    for r in 0..t0 {
        let (dst, slot) = (r / factor, r % factor);
        out.row_mut(dst)[slot * f..(slot + 1) * f].copy_from_slice(frames.row(r));
    }
    out
}

/// Audio encoder output `h`, T×e with T = ceil(T₀ / subsample).
pub fn encode_audio(g: &mut Graph, ps: &ParamStore, cfg: &AsrConfig, frames: &Tensor) -> Result<Var> {
    if frames.rows() == 0 {
        return Err(Error::EmptyInput("audio frames"));
    }
    let x = g.constant(stack_frames(frames, cfg.subsample))?;
    let x = linear(g, ps, "enc.in", x)?;
    TransformerStack {
        prefix: "enc.tf",
        cfg: &cfg.encoder,
    }
    .forward(g, ps, x, None)
}

/// Prediction-network outputs for the prefixes of `labels`, (L+1)×p.
/// Row `u` summarizes the start symbol followed by `labels[..u]`.
pub fn predictor(g: &mut Graph, ps: &ParamStore, labels: &[TokenId]) -> Result<Var> {
    let mut ids = Vec::with_capacity(labels.len() + 1);
    ids.push(SOS);
    ids.extend_from_slice(labels);
    let embed = g.param_named(ps, "pred.embed")?;
    let wx = g.param_named(ps, "pred.wx")?;
    let wh = g.param_named(ps, "pred.wh")?;
    let b = g.param_named(ps, "pred.b")?;
    let x = g.gather_rows(embed, &ids)?;
    let xw = g.matmul(x, wx)?;
    let xw = g.add_row(xw, b)?;
    let mut states = Vec::with_capacity(ids.len());
    let mut prev: Option<Var> = None;
    for u in 0..ids.len() {
        let row = g.gather_rows(xw, &[u])?;
        let pre = match prev {
            Some(s) => {
                let r = g.matmul(s, wh)?;
                g.add(row, r)?
            }
            None => row,
        };
        let s = g.tanh(pre)?;
        states.push(s);
        prev = Some(s);
    }
    g.concat_rows(&states)
}

/// Log-normalized lattice, row `t·(L+1) + u` over the vocabulary.
pub fn joint(g: &mut Graph, ps: &ParamStore, h: Var, pred: Var) -> Result<Var> {
    let a = linear(g, ps, "joint.enc", h)?;
    let wp = g.param_named(ps, "joint.pred.w")?;
    let b = g.matmul(pred, wp)?;
    let z = g.outer_add(a, b)?;
    let z = g.tanh(z)?;
    let logits = linear(g, ps, "joint.out", z)?;
    g.log_softmax_rows(logits)
}

/// Plain (tape-free) view of the joint and prediction parameters used by
/// the decoders.
#[derive(Clone, Debug)]
pub struct JointParams {
    pub embed: Tensor,
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
    pub enc_w: Tensor,
    pub enc_b: Tensor,
    pub pred_w: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl JointParams {
    pub fn from_store(ps: &ParamStore) -> Result<Self> {
        let get = |n: &str| ps.by_name(n).cloned();
        Ok(Self {
            embed: get("pred.embed")?,
            wx: get("pred.wx")?,
            wh: get("pred.wh")?,
            b: get("pred.b")?,
            enc_w: get("joint.enc.w")?,
            enc_b: get("joint.enc.b")?,
            pred_w: get("joint.pred.w")?,
            out_w: get("joint.out.w")?,
            out_b: get("joint.out.b")?,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.out_w.cols()
    }

    /// Encoder half of the joint, T×j.
    pub fn project_audio(&self, h: &Tensor) -> Result<Tensor> {
        let mut a = h.matmul(&self.enc_w)?;
        let bias = self.enc_b.data();
        for r in 0..a.rows() {
            a.row_mut(r).iter_mut().zip(bias).for_each(|(x, b)| *x += b);
        }
        Ok(a)
    }

    /// One recurrent step of the prediction network.
    pub fn pred_step(&self, prev: Option<&[f64]>, token: TokenId) -> PredState {
        let p = self.wx.cols();
        let x = self.embed.row(token);
        let mut s = self.b.data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            let row = self.wx.row(i);
            s.iter_mut().zip(row).for_each(|(acc, w)| *acc += xi * w);
        }
        if let Some(prev) = prev {
            for (i, &hi) in prev.iter().enumerate() {
                let row = self.wh.row(i);
                s.iter_mut().zip(row).for_each(|(acc, w)| *acc += hi * w);
            }
        }
        s.iter_mut().for_each(|v| *v = v.tanh());
        let mut proj = vec![0.0; self.pred_w.cols()];
        for (i, &si) in s.iter().enumerate().take(p) {
            proj.iter_mut().zip(self.pred_w.row(i)).for_each(|(acc, w)| *acc += si * w);
        }
        PredState { hidden: s, proj }
    }

    /// Log-distribution over the vocabulary at one lattice node.
    pub fn log_probs(&self, audio_row: &[f64], pred: &PredState) -> Vec<f64> {
        let z: Vec<f64> = audio_row.iter().zip(&pred.proj).map(|(a, b)| (a + b).tanh()).collect();
        let mut out = self.out_b.data().to_vec();
        for (i, &zi) in z.iter().enumerate() {
            out.iter_mut().zip(self.out_w.row(i)).for_each(|(acc, w)| *acc += zi * w);
        }
        kernels::log_softmax_in_place(&mut out);
        out
    }
}

#[cfg(test)]
mod tests;
