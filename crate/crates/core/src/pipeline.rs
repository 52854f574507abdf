//! End-to-end experiment stages shared by the command line and the
//! acceptance harness.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{make_benchmark, Benchmark, Split, Utterance};
use crate::error::Result;
use crate::eval::{
    evaluate, personalize, sweep_context, sweep_lambda, ContextPolicy, MetricsReport, PersonalizationRunLog,
};
use crate::model::Model;
use crate::nam_memory::BiasVariant;
use crate::train::{pretrain, train_bias, TrainState};

/// Variants compared in the ablation table, best expected first.
pub const ABLATION: [BiasVariant; 4] = [
    BiasVariant::Nam,
    BiasVariant::NamNoLeftShift,
    BiasVariant::NamSingle,
    BiasVariant::ClasEncoder,
];

pub fn build_benchmark(cfg: &RunConfig) -> Result<Benchmark> {
    make_benchmark(&cfg.corpus_config())
}

pub fn pretrain_base(cfg: &RunConfig, bench: &Benchmark) -> Result<(Model, TrainState)> {
    let mut model = Model::new_base(&cfg.model, &bench.vocab, bench.synth.frame_dim(), cfg.seed)?;
    let mut state = TrainState::new(&model, &cfg.pretrain, cfg.seed);
    pretrain(&mut model, &mut state, &cfg.pretrain, &bench.pretrain, &bench.pretrain_dev, None)?;
    Ok((model, state))
}

/// Adds and trains the biasing module of `variant` on top of `base`.
/// `None` returns the base unchanged with an empty log.
pub fn train_variant(cfg: &RunConfig, base: &Model, bench: &Benchmark, variant: BiasVariant) -> Result<(Model, TrainState)> {
    let seed = cfg.seed.wrapping_add(1);
    let mut model = base.with_bias(variant, seed)?;
    let mut state = TrainState::new(&model, &cfg.bias_train.train, seed);
    if variant != BiasVariant::None {
        train_bias(
            &mut model,
            &mut state,
            &cfg.bias_train,
            &bench.pretrain,
            &bench.pretrain_dev,
            None,
        )?;
    }
    Ok((model, state))
}

/// Every speaker's test utterances in speaker order.
pub fn test_set(bench: &Benchmark) -> Vec<Utterance> {
    bench.speaker_utterances(Split::Test).cloned().collect()
}

/// Personalizes a copy of `model` per speaker and pools the per-round
/// reports over speakers.
pub fn personalize_all(
    cfg: &RunConfig,
    model: &Model,
    bench: &Benchmark,
    name: &str,
    lambda: Option<f64>,
) -> Result<(Vec<PersonalizationRunLog>, Vec<MetricsReport>)> {
    let spec = cfg.eval_spec(name, ContextPolicy::Paired { k: cfg.eval.k }, lambda);
    let mut logs = Vec::with_capacity(bench.speakers.len());
    for s in &bench.speakers {
        logs.push(personalize(model, s, &bench.distractor_pool, &cfg.personalize, &spec)?.0);
    }
    Ok((logs.clone(), pool_rounds(&spec, &logs)))
}

fn pool_rounds(spec: &crate::eval::EvalSpec, logs: &[PersonalizationRunLog]) -> Vec<MetricsReport> {
    let rounds = logs.first().map_or(0, |l| l.rounds.len());
    (0..rounds)
        .map(|r| {
            let records = logs.iter().flat_map(|l| l.rounds[r].report.utterances.iter().cloned()).collect();
            let mut rep = MetricsReport::from_records(spec, records);
            rep.round = Some(r);
            rep
        })
        .collect()
}

/// Headline numbers of one seed, one field per reproduced comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub none: MetricsReport,
    pub nam: MetricsReport,
    pub nam_empty: MetricsReport,
    pub none_empty: MetricsReport,
    pub fst_zero: MetricsReport,
    pub fst_sweep: Vec<MetricsReport>,
    pub tuned_lambda: f64,
    pub nam_sizes: Vec<MetricsReport>,
    pub fst_sizes: Vec<MetricsReport>,
    pub ablation: Vec<MetricsReport>,
    pub nam_rounds: Vec<MetricsReport>,
    pub fst_rounds: Vec<MetricsReport>,
}

/// Runs every stage for `cfg.seed`, reporting progress through `log`.
pub fn run_seed(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<SeedOutcome> {
    let bench = build_benchmark(cfg)?;
    let test = test_set(&bench);
    let pool = &bench.distractor_pool;
    let (base, _) = pretrain_base(cfg, &bench)?;
    log("pretrained base");

    let paired = ContextPolicy::Paired { k: cfg.eval.k };
    let none = evaluate(&base, &test, pool, &cfg.eval_spec("none", paired, None))?;
    let none_empty = evaluate(&base, &test, pool, &cfg.eval_spec("none", ContextPolicy::Empty, None))?;
    let fst_zero = evaluate(&base, &test, pool, &cfg.eval_spec("fst", paired, Some(0.0)))?;
    let fst_sweep = sweep_lambda(&base, &test, pool, &cfg.eval_spec("fst", paired, None), &cfg.eval.lambdas)?;
    let tuned_lambda = fst_sweep
        .iter()
        .min_by(|a, b| a.wer.total_cmp(&b.wer))
        .and_then(|r| r.lambda)
        .unwrap_or(cfg.eval.lambda);
    log("evaluated base and boost trie");

    let mut ablation = Vec::with_capacity(ABLATION.len());
    let mut nam_model = None;
    for v in ABLATION {
        let (m, _) = train_variant(cfg, &base, &bench, v)?;
        ablation.push(evaluate(&m, &test, pool, &cfg.eval_spec(v.as_str(), paired, None))?);
        log(&format!("trained {v}"));
        if v == BiasVariant::Nam {
            nam_model = Some(m);
        }
    }
    let nam_model = nam_model.expect("ablation includes nam");
    let nam = ablation[0].clone();
    let nam_empty = evaluate(&nam_model, &test, pool, &cfg.eval_spec("nam", ContextPolicy::Empty, None))?;

    let sizes = &cfg.eval.context_sizes;
    let nam_sizes = sweep_context(&nam_model, &test, pool, &cfg.eval_spec("nam", paired, None), sizes)?;
    let fst_sizes = sweep_context(&base, &test, pool, &cfg.eval_spec("fst", paired, Some(tuned_lambda)), sizes)?;
    log("swept context sizes");

    let (_, nam_rounds) = personalize_all(cfg, &nam_model, &bench, "nam", None)?;
    let (_, fst_rounds) = personalize_all(cfg, &base, &bench, "fst", Some(cfg.eval.lambda))?;
    log("personalized");

    Ok(SeedOutcome {
        seed: cfg.seed,
        none,
        nam,
        nam_empty,
        none_empty,
        fst_zero,
        fst_sweep,
        tuned_lambda,
        nam_sizes,
        fst_sizes,
        ablation,
        nam_rounds,
        fst_rounds,
    })
}
