//! Staged training: transducer pretraining without any biasing module, then
//! joint training of a biasing module on top of a pretrained base.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_context_set, sample_bias, words, ContextSet, MarkerPlacement, Phrase, Role, TokenId, Utterance, Vocab};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nam_memory::BiasVariant;
use crate::numerics::{Graph, Grads, OptimizerConfig, OptimizerSnapshot, OptimizerState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    /// Epochs without a dev-loss improvement before stopping early.
    pub patience: usize,
    /// Use only the first `n` training utterances.
    pub max_utterances: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            lr: 2e-3,
            clip: Some(5.0),
            patience: 2,
            max_utterances: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{what}: batch_size must be at least 1")));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("{what}: lr must be finite and nonnegative")));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            clip: self.clip,
            ..OptimizerConfig::adam(self.lr)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasTrainConfig {
    pub train: TrainConfig,
    /// Probability that a training utterance gets a positive phrase.
    pub p: f64,
    /// Distractors per training context set.
    pub k: usize,
    pub ngram_words: (usize, usize),
    pub placement: MarkerPlacement,
    /// Number of n-grams drawn from the training text as distractors.
    pub pool_size: usize,
}

impl Default for BiasTrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 6,
                ..TrainConfig::default()
            },
            p: 0.7,
            k: 4,
            ngram_words: (1, 3),
            placement: MarkerPlacement::After,
            pool_size: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopStatus {
    Running,
    Completed,
    EarlyStopped,
}

/// JSON has no infinity; the not-yet-set best loss is stored as null.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    pub seed: u64,
    pub epochs_done: usize,
    #[serde(with = "unbounded")]
    pub best_dev: f64,
    pub bad_epochs: usize,
    pub status: StopStatus,
    pub log: Vec<EpochLog>,
    pub optimizer: OptimizerSnapshot,
}

impl TrainState {
    pub fn new(model: &Model, cfg: &TrainConfig, seed: u64) -> Self {
        Self {
            seed,
            epochs_done: 0,
            best_dev: f64::INFINITY,
            bad_epochs: 0,
            status: StopStatus::Running,
            log: Vec::new(),
            optimizer: OptimizerState::new(cfg.optimizer()).snapshot(&model.params),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write_curve(&self, path: &Path, fingerprint: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "steps", "train_loss", "dev_loss", "fingerprint"])?;
        for e in &self.log {
            w.write_record([
                e.epoch.to_string(),
                e.steps.to_string(),
                format!("{:.6}", e.train_loss),
                format!("{:.6}", e.dev_loss),
                fingerprint.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One training example: frames, target labels and the biasing context.
pub struct Example<'a> {
    pub frames: &'a Tensor,
    pub labels: Vec<TokenId>,
    pub context: ContextSet,
}

fn example_loss(model: &Model, ex: &Example) -> Result<(f64, Grads)> {
    let mut g = Graph::new();
    let loss = model.loss(&mut g, ex.frames, &ex.labels, &ex.context)?;
    let value = g.value(loss).data()[0];
    Ok((value, g.backward(loss)?.into_params()))
}

/// Mean per-utterance loss, no parameter update.
pub fn mean_loss<'a>(model: &Model, examples: impl IntoIterator<Item = Example<'a>>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ex in examples {
        let mut g = Graph::new();
        let loss = model.loss(&mut g, ex.frames, &ex.labels, &ex.context)?;
        sum += g.value(loss).data()[0];
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs the remaining epochs of a training run.
///
/// `make_train(i, rng)` builds the example for training index `i`; `dev`
/// returns the current dev loss. Shuffling and example sampling depend only
/// on `(state.seed, epoch)`, so a run resumed from a saved state reproduces
/// the uninterrupted run. `stop_after` bounds the epochs run in this call.
pub fn run_training<'a, F, D>(
    model: &mut Model,
    state: &mut TrainState,
    cfg: &TrainConfig,
    n_train: usize,
    mut make_train: F,
    mut dev: D,
    stop_after: Option<usize>,
) -> Result<()>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Result<Example<'a>>,
    D: FnMut(&Model) -> Result<f64>,
{
    cfg.validate("training")?;
    let mut opt = OptimizerState::restore(&state.optimizer, &model.params)?;
    let n_train = cfg.max_utterances.map_or(n_train, |m| m.min(n_train));
    let mut ran = 0;
    while state.status == StopStatus::Running && state.epochs_done < cfg.epochs {
        if stop_after.is_some_and(|s| ran >= s) {
            break;
        }
        let epoch = state.epochs_done;
        let mut rng = epoch_rng(state.seed, epoch);
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Grads::new();
            for &i in batch {
                let ex = make_train(i, &mut rng)?;
                let (l, gr) = example_loss(model, &ex)?;
                total += l;
                grads.merge(&gr);
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut model.params, &grads)?;
        }
        let dev_loss = dev(model)?;
        state.log.push(EpochLog {
            epoch: epoch + 1,
            steps: opt.step_count(),
            train_loss: total / n_train.max(1) as f64,
            dev_loss,
        });
        state.epochs_done += 1;
        if dev_loss < state.best_dev {
            state.best_dev = dev_loss;
            state.bad_epochs = 0;
        } else {
            state.bad_epochs += 1;
            if state.bad_epochs >= cfg.patience.max(1) {
                state.status = StopStatus::EarlyStopped;
            }
        }
        ran += 1;
    }
    if state.status == StopStatus::Running && state.epochs_done >= cfg.epochs {
        state.status = StopStatus::Completed;
    }
    state.optimizer = opt.snapshot(&model.params);
    Ok(())
}

fn plain<'a>(u: &'a Utterance) -> Example<'a> {
    Example {
        frames: &u.frames,
        labels: u.reference.clone(),
        context: ContextSet::empty(),
    }
}

/// Pretrains a base transducer (no biasing module) on reference transcripts.
pub fn pretrain(
    model: &mut Model,
    state: &mut TrainState,
    cfg: &TrainConfig,
    train: &[Utterance],
    dev: &[Utterance],
    stop_after: Option<usize>,
) -> Result<()> {
    if model.variant != BiasVariant::None {
        return Err(Error::Invalid("pretraining expects a model without a biasing module".into()));
    }
    run_training(
        model,
        state,
        cfg,
        train.len(),
        |i, _| Ok(plain(&train[i])),
        |m| mean_loss(m, dev.iter().map(plain)),
        stop_after,
    )
}

/// Word n-grams drawn uniformly from random transcripts.
pub fn ngram_pool(
    vocab: &Vocab,
    utterances: &[Utterance],
    size: usize,
    ngram_words: (usize, usize),
    seed: u64,
) -> Result<Vec<Phrase>> {
    if utterances.is_empty() {
        return Err(Error::EmptyInput("n-gram source utterances"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = vocab.space();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(size);
    let mut attempts = 0;
    while out.len() < size && attempts < size * 50 {
        attempts += 1;
        let u = utterances.choose(&mut rng).expect("nonempty");
        let ws = words(&u.reference, space);
        if ws.is_empty() {
            continue;
        }
        let hi = ngram_words.1.min(ws.len()).max(1);
        let lo = ngram_words.0.clamp(1, hi);
        let n = rng.random_range(lo..=hi);
        let start = rng.random_range(0..=ws.len() - n);
        let mut ids = Vec::new();
        for (j, w) in ws[start..start + n].iter().enumerate() {
            if j > 0 {
                ids.push(space);
            }
            ids.extend_from_slice(w);
        }
        let p = Phrase::from_ids(vocab, ids, Role::Distractor)?;
        if seen.insert(p.text.clone()) {
            out.push(p);
        }
    }
    Ok(out)
}

/// One bias-training example: sampled positive n-gram (with probability
/// `p`), marked transcript, and `k` distractors from `pool`.
pub fn bias_example<'a>(
    vocab: &Vocab,
    u: &'a Utterance,
    pool: &[Phrase],
    cfg: &BiasTrainConfig,
    rng: &mut impl Rng,
) -> Result<(Example<'a>, bool)> {
    let s = sample_bias(vocab, &u.reference, cfg.p, cfg.ngram_words, cfg.placement, rng)?;
    let context = build_context_set(s.phrase.as_ref(), pool, cfg.k, rng)?;
    Ok((
        Example {
            frames: &u.frames,
            labels: s.annotated,
            context,
        },
        s.phrase.is_some(),
    ))
}

/// Jointly trains the biasing module and the base network.
pub fn train_bias(
    model: &mut Model,
    state: &mut TrainState,
    cfg: &BiasTrainConfig,
    train: &[Utterance],
    dev: &[Utterance],
    stop_after: Option<usize>,
) -> Result<()> {
    if model.variant == BiasVariant::None {
        return Err(Error::Invalid("variant none has no biasing module to train".into()));
    }
    let pool = ngram_pool(&model.vocab, train, cfg.pool_size, cfg.ngram_words, state.seed)?;
    let vocab = model.vocab.clone();
    let mut dev_rng = ChaCha8Rng::seed_from_u64(state.seed.wrapping_add(17));
    let dev_examples: Vec<Example> = dev
        .iter()
        .map(|u| bias_example(&vocab, u, &pool, cfg, &mut dev_rng).map(|(e, _)| e))
        .collect::<Result<_>>()?;
    run_training(
        model,
        state,
        &cfg.train,
        train.len(),
        |i, rng| bias_example(&vocab, &train[i], &pool, cfg, rng).map(|(e, _)| e),
        |m| {
            mean_loss(
                m,
                dev_examples.iter().map(|e| Example {
                    frames: e.frames,
                    labels: e.labels.clone(),
                    context: e.context.clone(),
                }),
            )
        },
        stop_after,
    )
}
