//! Evaluation protocol: decode with a context policy, score WER and entity
//! recovery, sweep context sizes and fusion weights, and simulate
//! continuous personalization.

mod metrics;
mod personalize;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asr_core::JointParams;
use crate::corpus::{build_context_set, strip_bias, ContextSet, Phrase, Utterance};
use crate::error::{Error, Result};
use crate::fst_biaser::BiasTrie;
use crate::model::{decode_features, DecodeOptions, Model};

pub use metrics::{entity_counts, split_words, word_edits, EditCounts, EntityCounts, EntityMatch};
pub use personalize::{personalize, PersonalizationRunLog, PersonalizeConfig, RoundLog};

/// Which biasing phrases accompany each test utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPolicy {
    /// The utterance's entity plus `k` distractors.
    Paired { k: usize },
    Empty,
    /// Exactly `n` phrases: the entity plus `n − 1` distractors.
    Size { n: usize },
}

impl ContextPolicy {
    pub fn size(&self) -> usize {
        match *self {
            ContextPolicy::Paired { k } => k + 1,
            ContextPolicy::Empty => 0,
            ContextPolicy::Size { n } => n,
        }
    }

    pub fn context_for(&self, u: &Utterance, pool: &[Phrase], seed: u64) -> Result<ContextSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(seed, &u.id));
        match *self {
            ContextPolicy::Empty => Ok(ContextSet::empty()),
            ContextPolicy::Paired { k } => build_context_set(u.entity.as_ref(), pool, k, &mut rng),
            ContextPolicy::Size { n } => {
                let k = n.saturating_sub(usize::from(u.entity.is_some() && n > 0));
                let positive = if n > 0 { u.entity.as_ref() } else { None };
                build_context_set(positive, pool, k, &mut rng)
            }
        }
    }
}

impl fmt::Display for ContextPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextPolicy::Paired { .. } => f.write_str("paired"),
            ContextPolicy::Empty => f.write_str("empty"),
            ContextPolicy::Size { n } => write!(f, "B={n}"),
        }
    }
}

/// Parses `paired`, `empty` or `B=<n>`; `paired` uses `default_k`
/// distractors.
pub fn parse_policy(s: &str, default_k: usize) -> Result<ContextPolicy> {
    match s {
        "paired" => Ok(ContextPolicy::Paired { k: default_k }),
        "empty" => Ok(ContextPolicy::Empty),
        _ => s
            .strip_prefix("B=")
            .and_then(|n| n.parse().ok())
            .map(|n| ContextPolicy::Size { n })
            .ok_or_else(|| Error::Config(format!("unknown context policy {s:?} (expected paired, empty or B=<n>)"))),
    }
}

impl FromStr for ContextPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_policy(s, 4)
    }
}

/// Stable per-utterance seed, so every model sees the same context sets.
pub fn utterance_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    /// Label for the report's `model` column.
    pub name: String,
    pub policy: ContextPolicy,
    /// Shallow-fusion weight; `None` decodes without a boost trie.
    pub lambda: Option<f64>,
    pub seed: u64,
    pub decode: DecodeOptions,
    pub entity_match: EntityMatch,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub entity: Option<String>,
    pub context: Vec<String>,
    pub edits: EditCounts,
    pub entities: EntityCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub policy: String,
    pub context_size: usize,
    pub lambda: Option<f64>,
    pub round: Option<usize>,
    pub seed: u64,
    pub fingerprint: String,
    pub edits: EditCounts,
    pub entities: EntityCounts,
    pub wer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub utterances: Vec<UtteranceRecord>,
}

impl MetricsReport {
    pub fn from_records(spec: &EvalSpec, utterances: Vec<UtteranceRecord>) -> Self {
        let mut edits = EditCounts::default();
        let mut entities = EntityCounts::default();
        for r in &utterances {
            edits.add(&r.edits);
            entities.add(&r.entities);
        }
        Self {
            model: spec.name.clone(),
            policy: spec.policy.to_string(),
            context_size: spec.policy.size(),
            lambda: spec.lambda,
            round: None,
            seed: spec.seed,
            fingerprint: spec.fingerprint.clone(),
            wer: edits.rate(),
            precision: entities.precision(),
            recall: entities.recall(),
            f1: entities.f1(),
            edits,
            entities,
            utterances,
        }
    }
}

/// Column order of every report CSV.
pub const CSV_COLUMNS: [&str; 17] = [
    "model",
    "policy",
    "B",
    "lambda",
    "round",
    "WER",
    "P",
    "R",
    "F1",
    "seed",
    "sub",
    "del",
    "ins",
    "tp",
    "fp",
    "fn",
    "fingerprint",
];

pub fn write_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_COLUMNS)?;
    for r in reports {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            r.model.clone(),
            r.policy.clone(),
            r.context_size.to_string(),
            opt(r.lambda.map(|l| format!("{l}"))),
            opt(r.round.map(|x| x.to_string())),
            format!("{:.2}", r.wer),
            format!("{:.2}", r.precision),
            format!("{:.2}", r.recall),
            format!("{:.2}", r.f1),
            r.seed.to_string(),
            r.edits.substitutions.to_string(),
            r.edits.deletions.to_string(),
            r.edits.insertions.to_string(),
            r.entities.tp.to_string(),
            r.entities.fp.to_string(),
            r.entities.fn_.to_string(),
            r.fingerprint.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Scores one decoded utterance.
pub fn score_utterance(
    model: &Model,
    u: &Utterance,
    ctx: &ContextSet,
    hyp_ids: &[usize],
    rule: EntityMatch,
) -> Result<UtteranceRecord> {
    let hypothesis = model.vocab.detokenize(&strip_bias(hyp_ids))?;
    let reference = model.vocab.detokenize(&strip_bias(&u.reference))?;
    let edits = word_edits(&split_words(&reference), &split_words(&hypothesis));
    let entity = u.entity.as_ref().map(|e| e.text.clone());
    let context: Vec<String> = ctx.phrases().iter().map(|p| p.text.clone()).collect();
    let entities = entity_counts(
        &reference,
        &hypothesis,
        entity.as_deref(),
        context.iter().map(String::as_str),
        rule,
    );
    Ok(UtteranceRecord {
        id: u.id.clone(),
        reference,
        hypothesis,
        entity,
        context,
        edits,
        entities,
    })
}

/// Decodes every utterance with its policy context (and a boost trie over
/// the same phrases when `spec.lambda` is set) and aggregates the metrics.
pub fn evaluate(model: &Model, utterances: &[Utterance], pool: &[Phrase], spec: &EvalSpec) -> Result<MetricsReport> {
    let jp = JointParams::from_store(&model.params)?;
    let mut records = Vec::with_capacity(utterances.len());
    for u in utterances {
        let ctx = spec.policy.context_for(u, pool, spec.seed)?;
        let h = model.features(&u.frames, &ctx)?;
        let trie = spec.lambda.map(|l| BiasTrie::from_context(&ctx, l));
        let hyp = decode_features(&jp, &h, &model.vocab, &spec.decode, trie.as_ref())?;
        records.push(score_utterance(model, u, &ctx, &hyp.tokens, spec.entity_match)?);
    }
    Ok(MetricsReport::from_records(spec, records))
}

/// One report per context size.
pub fn sweep_context(
    model: &Model,
    utterances: &[Utterance],
    pool: &[Phrase],
    spec: &EvalSpec,
    sizes: &[usize],
) -> Result<Vec<MetricsReport>> {
    sizes
        .iter()
        .map(|&n| {
            evaluate(
                model,
                utterances,
                pool,
                &EvalSpec {
                    policy: ContextPolicy::Size { n },
                    ..spec.clone()
                },
            )
        })
        .collect()
}

/// One report per fusion weight.
pub fn sweep_lambda(
    model: &Model,
    utterances: &[Utterance],
    pool: &[Phrase],
    spec: &EvalSpec,
    lambdas: &[f64],
) -> Result<Vec<MetricsReport>> {
    lambdas
        .iter()
        .map(|&l| {
            evaluate(
                model,
                utterances,
                pool,
                &EvalSpec {
                    lambda: Some(l),
                    ..spec.clone()
                },
            )
        })
        .collect()
}
