//! Repeated joint-network fine-tuning on one speaker's data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalSpec, MetricsReport};
use crate::asr_core::{joint, predictor, rnnt_loss_var};
use crate::corpus::{Phrase, SpeakerData, TokenId, Utterance};
use crate::error::{Error, Result};
use crate::model::{is_joint_param, Model};
use crate::nam_memory::BiasVariant;
use crate::numerics::{Graph, Grads, OptimizerConfig, OptimizerState, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonalizeConfig {
    pub rounds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    /// A round whose dev loss exceeds this multiple of the round-0 dev loss
    /// is flagged as diverged.
    pub divergence_factor: f64,
    /// Freeze every parameter, including the joint network.
    pub freeze_all: bool,
}

impl Default for PersonalizeConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            epochs: 2,
            batch_size: 10,
            lr: 0.005,
            clip: 0.1,
            divergence_factor: 10.0,
            freeze_all: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub dev_loss: f64,
    pub diverged: bool,
    /// Parameters whose values changed during the round.
    pub updated: Vec<String>,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationRunLog {
    pub speaker: usize,
    pub model: String,
    pub optimizer: OptimizerConfig,
    pub config: PersonalizeConfig,
    pub diverged: bool,
    pub rounds: Vec<RoundLog>,
}

/// Frozen-network inputs of the joint for one utterance.
struct Cached {
    h: Tensor,
    pred: Tensor,
    labels: Vec<TokenId>,
}

fn cache(model: &Model, utts: &[Utterance], pool: &[Phrase], spec: &EvalSpec) -> Result<Vec<Cached>> {
    utts.iter()
        .map(|u| {
            let ctx = spec.policy.context_for(u, pool, spec.seed)?;
            let labels = if model.variant == BiasVariant::None {
                u.reference.clone()
            } else {
                u.annotated.clone()
            };
            let h = model.features(&u.frames, &ctx)?;
            let mut g = Graph::new();
            let p = predictor(&mut g, &model.params, &labels)?;
            Ok(Cached {
                h,
                pred: g.value(p).clone(),
                labels,
            })
        })
        .collect()
}

fn joint_loss(ps: &ParamStore, c: &Cached, with_grads: bool) -> Result<(f64, Option<Grads>)> {
    let mut g = Graph::new();
    let h = g.constant(c.h.clone())?;
    let p = g.constant(c.pred.clone())?;
    let lat = joint(&mut g, ps, h, p)?;
    let loss = rnnt_loss_var(&mut g, lat, c.h.rows(), &c.labels)?;
    let v = g.value(loss).data()[0];
    let grads = if with_grads {
        Some(g.backward(loss)?.into_params())
    } else {
        None
    };
    Ok((v, grads))
}

fn mean_joint_loss(ps: &ParamStore, data: &[Cached]) -> Result<f64> {
    let mut s = 0.0;
    for c in data {
        s += joint_loss(ps, c, false)?.0;
    }
    Ok(s / data.len().max(1) as f64)
}

fn changed(before: &ParamStore, after: &ParamStore) -> Vec<String> {
    before
        .iter()
        .zip(after.iter())
        .filter(|((_, _, a), (_, _, b))| a != b)
        .map(|((_, n, _), _)| n.to_string())
        .collect()
}

/// Fine-tunes only the joint network on the speaker's train split for
/// `rounds` rounds of `epochs` epochs, evaluating on the test split before
/// the first round and after every round. The encoder, prediction network
/// and biasing module are frozen, so their outputs are computed once.
pub fn personalize(
    model: &Model,
    speaker: &SpeakerData,
    pool: &[Phrase],
    cfg: &PersonalizeConfig,
    spec: &EvalSpec,
) -> Result<(PersonalizationRunLog, Model)> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("personalize: batch_size must be at least 1".into()));
    }
    let mut m = model.clone();
    if cfg.freeze_all {
        m.params.train_only(|_| false);
    } else {
        m.params.train_only(is_joint_param);
    }
    let train = cache(&m, &speaker.train, pool, spec)?;
    let dev = cache(&m, &speaker.dev, pool, spec)?;
    let optimizer = OptimizerConfig::adafactor_lite(cfg.lr, cfg.clip);
    let mut opt = OptimizerState::new(optimizer);

    let dev0 = mean_joint_loss(&m.params, &dev)?;
    let mut report = evaluate(&m, &speaker.test, pool, spec)?;
    report.round = Some(0);
    let mut rounds = vec![RoundLog {
        round: 0,
        dev_loss: dev0,
        diverged: false,
        updated: Vec::new(),
        report,
    }];
    for r in 1..=cfg.rounds {
        let before = m.params.clone();
        for e in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((r * 1000 + e) as u64).wrapping_mul(0x9E37_79B9));
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let mut grads = Grads::new();
                for &i in batch {
                    let (_, g) = joint_loss(&m.params, &train[i], true)?;
                    grads.merge(&g.expect("requested"));
                }
                grads.scale(1.0 / batch.len() as f64);
                opt.step(&mut m.params, &grads)?;
            }
        }
        let dev_loss = mean_joint_loss(&m.params, &dev)?;
        let mut report = evaluate(&m, &speaker.test, pool, spec)?;
        report.round = Some(r);
        rounds.push(RoundLog {
            round: r,
            dev_loss,
            diverged: dev_loss > cfg.divergence_factor * dev0,
            updated: changed(&before, &m.params),
            report,
        });
    }
    m.params.train_all();
    let log = PersonalizationRunLog {
        speaker: speaker.id,
        model: spec.name.clone(),
        optimizer,
        config: cfg.clone(),
        diverged: rounds.iter().any(|r| r.diverged),
        rounds,
    };
    Ok((log, m))
}
