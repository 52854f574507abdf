use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticConfig {
    pub frame_dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Character groups that share one acoustic prototype, e.g. `"ck"`.
    pub confusion_groups: Vec<String>,
    /// Scale of the per-member offset inside a confusion group; 0 makes the
    /// members exact homophones.
    pub member_offset: f64,
    pub seed: u64,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self {
            frame_dim: 16,
            min_frames: 2,
            max_frames: 4,
            confusion_groups: ["ck", "sz", "mn", "dt", "bp", "iy"].map(String::from).to_vec(),
            member_offset: 0.0,
            seed: 17,
        }
    }
}

/// Per-token frame prototypes.
///
/// Every character owns a fixed sequence of 2–4 frame vectors. Characters in
/// the same confusion group share their group's prototype (plus an optional
/// small offset), so the audio alone cannot tell them apart.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    frame_dim: usize,
    prototypes: Vec<Option<Tensor>>,
}

impl Synthesizer {
    pub fn new(vocab: &Vocab, cfg: &AcousticConfig) -> Result<Self> {
        if cfg.min_frames == 0 || cfg.min_frames > cfg.max_frames || cfg.frame_dim == 0 {
            return Err(Error::Config(format!(
                "invalid frame settings: dim {}, frames {}..={}",
                cfg.frame_dim, cfg.min_frames, cfg.max_frames
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut prototypes: Vec<Option<Tensor>> = vec![None; vocab.size()];

        let mut group_of: Vec<Option<usize>> = vec![None; vocab.size()];
        for (g, chars) in cfg.confusion_groups.iter().enumerate() {
            for c in chars.chars() {
                let id = vocab.id_of(c).ok_or_else(|| {
                    Error::Config(format!("confusion group {chars:?} uses {c:?} outside the alphabet"))
                })?;
                group_of[id] = Some(g);
            }
        }
        let mut group_proto: Vec<Option<Tensor>> = vec![None; cfg.confusion_groups.len()];

        for id in vocab.char_ids() {
            let base = match group_of[id] {
                Some(g) if group_proto[g].is_some() => group_proto[g].clone().expect("checked"),
                _ => {
                    let n = rng.random_range(cfg.min_frames..=cfg.max_frames);
                    let data = (0..n * cfg.frame_dim).map(|_| normal.sample(&mut rng)).collect();
                    let t = Tensor::matrix(n, cfg.frame_dim, data)?;
                    if let Some(g) = group_of[id] {
                        group_proto[g] = Some(t.clone());
                    }
                    t
                }
            };
            let proto = if group_of[id].is_some() && cfg.member_offset > 0.0 {
                let off: Vec<f64> = (0..base.len())
                    .map(|_| cfg.member_offset * normal.sample(&mut rng))
                    .collect();
                Tensor::matrix(base.rows(), cfg.frame_dim, base.data().iter().zip(&off).map(|(a, b)| a + b).collect())?
            } else {
                base
            };
            prototypes[id] = Some(proto);
        }
        Ok(Self {
            frame_dim: cfg.frame_dim,
            prototypes,
        })
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn prototype(&self, id: TokenId) -> Option<&Tensor> {
        self.prototypes.get(id).and_then(Option::as_ref)
    }

    pub fn frame_count(&self, ids: &[TokenId]) -> usize {
        ids.iter().filter_map(|&i| self.prototype(i)).map(Tensor::rows).sum()
    }

    /// Concatenated prototypes plus i.i.d. N(0, σ²) noise. Reserved ids
    /// (e.g. bias markers) contribute no frames.
    pub fn synth_frames(&self, ids: &[TokenId], noise_sigma: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut rows = 0;
        for proto in ids.iter().filter_map(|&i| self.prototype(i)) {
            data.extend_from_slice(proto.data());
            rows += proto.rows();
        }
        if noise_sigma > 0.0 {
            let normal = Normal::new(0.0, noise_sigma).expect("positive sigma");
            for v in &mut data {
                *v += normal.sample(&mut rng);
            }
        }
        Tensor::matrix(rows, self.frame_dim, data).expect("consistent frame layout")
    }
}
