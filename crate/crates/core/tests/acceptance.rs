//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero when any of them fails.
//!
//! Criteria 1 to 7 are exact property checks against oracles written here.
//! Criteria 8 to 13 train and evaluate the full comparison on
//! `configs/desk.toml` for three seeds and compare seed medians.
//! Set `NAM_ACCEPTANCE_SKIP_DESK=1` to run only the exact suite.

use std::collections::HashSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nam_core::asr_core::{rnnt_loss, AsrConfig};
use nam_core::config::RunConfig;
use nam_core::context_encoder::{encode_phrases, init_context_encoder, PhraseEmbeddings};
use nam_core::corpus::{
    make_benchmark, sample_bias, ContextSet, CorpusConfig, MarkerPlacement, Phrase, Role, TokenId, Vocab, BIAS,
    BLANK, DEFAULT_ALPHABET,
};
use nam_core::eval::{entity_counts, word_edits, ContextPolicy, EntityMatch, MetricsReport};
use nam_core::fst_biaser::BiasTrie;
use nam_core::layers::EncoderConfig;
use nam_core::model::{DecodeOptions, Model, ModelConfig};
use nam_core::nam_memory::{build_memory, init_bias_module, retrieve, BiasVariant, MemoryVars, MhaConfig};
use nam_core::numerics::{grad_check_params, Graph, ParamStore, Tensor};
use nam_core::pipeline::{run_seed, SeedOutcome};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rand_t(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------- 1

/// Every non-decreasing assignment of `labels` label emissions to frames.
fn emission_frames(frames: usize, labels: usize) -> Vec<Vec<usize>> {
    if labels == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in emission_frames(frames, labels - 1) {
        let lo = rest.last().copied().unwrap_or(0);
        for t in lo..frames {
            let mut a = rest.clone();
            a.push(t);
            out.push(a);
        }
    }
    out
}

/// −log of the summed probability of every alignment: at each frame the
/// labels assigned to it are emitted in order, then a blank closes it.
fn brute_force_nll(lat: &Tensor, frames: usize, labels: &[TokenId]) -> f64 {
    let l1 = labels.len() + 1;
    let paths: Vec<f64> = emission_frames(frames, labels.len())
        .iter()
        .map(|at| {
            let mut u = 0;
            let mut lp = 0.0;
            for t in 0..frames {
                while u < labels.len() && at[u] == t {
                    lp += lat.get(t * l1 + u, labels[u]);
                    u += 1;
                }
                lp += lat.get(t * l1 + u, BLANK);
            }
            lp
        })
        .collect();
    -log_sum_exp(&paths)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (mut worst_nll, mut worst_grad) = (0.0f64, 0.0f64);
    let eps = 1e-5;
    let instances = 250;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(1..=4);
        let l = rng.random_range(0..=3);
        let v = rng.random_range(2..=4);
        let labels: Vec<TokenId> = (0..l).map(|_| rng.random_range(1..v)).collect();
        let mut lat = rand_t(&mut rng, t * (l + 1), v).map(|x| 3.0 * x);
        for r in 0..lat.rows() {
            let z = log_sum_exp(lat.row(r));
            lat.row_mut(r).iter_mut().for_each(|x| *x -= z);
        }
        let got = rnnt_loss(&lat, t, &labels).unwrap();
        worst_nll = worst_nll.max((got.nll - brute_force_nll(&lat, t, &labels)).abs());
        let mut probe = lat.clone();
        for i in 0..lat.len() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let fp = brute_force_nll(&probe, t, &labels);
            probe.data_mut()[i] = orig - eps;
            let fm = brute_force_nll(&probe, t, &labels);
            probe.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = got.grad.data()[i];
            worst_grad = worst_grad.max((analytic - numeric).abs() / analytic.abs().max(1.0));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_nll < 1e-8 && worst_grad < 1e-4 && secs < 60.0,
        format!("{instances} lattices, max |dNLL| {worst_nll:.2e}, max grad rel err {worst_grad:.2e}, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- 2

fn small_model_config(dim: usize) -> ModelConfig {
    let enc = EncoderConfig {
        dim,
        layers: 1,
        heads: 2,
        ff_dim: dim + 2,
        ..EncoderConfig::default()
    };
    ModelConfig {
        asr: AsrConfig {
            subsample: 1,
            encoder: enc.clone(),
            pred_dim: dim,
            joint_dim: dim,
        },
        context: enc,
        mha: MhaConfig {
            heads: 2,
            hidden: dim,
            logit_scale: 1.0,
        },
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let vocab = Vocab::new(DEFAULT_ALPHABET).unwrap();
    let base = Model::new_base(&small_model_config(6), &vocab, 5, 7).unwrap();
    let mut model = base.with_bias(BiasVariant::Nam, 8).unwrap();
    // the output projection starts at zero, which would hide the memory path
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for name in ["nam.proj.w", "nam.proj.b"] {
        let id = model.params.id(name).unwrap();
        let shape = model.params.get(id).shape().to_vec();
        *model.params.get_mut(id) = rand_t(&mut rng, shape[0], shape[1]);
    }
    let ctx = ContextSet::new(vec![
        Phrase::new(&vocab, "ab", Role::Positive).unwrap(),
        Phrase::new(&vocab, "cd e", Role::Distractor).unwrap(),
    ]);
    let frames = rand_t(&mut rng, 6, 5);
    let labels = vocab.tokenize("ab").unwrap();
    let err = grad_check_params(
        &model.params,
        |ps| {
            let mut m = model.clone();
            m.params = ps.clone();
            let mut g = Graph::new();
            let loss = m.loss(&mut g, &frames, &labels, &ctx)?;
            let v = g.value(loss).data()[0];
            Ok((v, g.backward(loss)?.into_params()))
        },
        1e-5,
        1,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        err < 1e-4 && secs < 60.0,
        format!("2 phrases, 6 frames, {} values, max rel err {err:.2e}, {secs:.1}s", model.params.num_values()),
    )
}

// ---------------------------------------------------------------- 3

fn orthonormal(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    while out.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &out {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

fn embeddings(g: &mut Graph, rows: &[Vec<f64>], lens: &[usize], positions: usize) -> PhraseEmbeddings {
    let mut mask = Vec::new();
    for &l in lens {
        mask.extend((0..positions).map(|u| u < l));
    }
    PhraseEmbeddings {
        values: g.constant(Tensor::from_rows(rows)).unwrap(),
        mask,
        phrases: lens.len(),
        positions,
        dim: rows[0].len(),
    }
}

/// Queries each phrase token's embedding and measures the distance to the
/// embedding of the token that follows it.
fn chain_error(seed: u64) -> f64 {
    const DIM: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..4);
    let lens: Vec<usize> = (0..b).map(|_| rng.random_range(2..5)).collect();
    let positions = *lens.iter().max().unwrap();
    let basis = orthonormal(lens.iter().sum::<usize>() + 1, DIM, &mut rng);
    let mut rows = vec![vec![0.0; DIM]; b * positions];
    let mut next = basis.iter();
    for (i, &l) in lens.iter().enumerate() {
        for u in 0..l {
            rows[i * positions + u] = next.next().unwrap().clone();
        }
    }
    let mut ps = ParamStore::new();
    ps.insert("nam.nobias.key", Tensor::from_rows(&[next.next().unwrap().clone()]));
    ps.insert("nam.nobias.value", rand_t(&mut rng, 1, DIM));
    for p in ["q", "k", "v"] {
        ps.insert(format!("nam.mha.{p}"), Tensor::identity(DIM));
    }
    let cfg = MhaConfig {
        heads: 1,
        hidden: DIM,
        logit_scale: 100.0,
    };
    let mut queries = Vec::new();
    let mut expected = Vec::new();
    for (i, &l) in lens.iter().enumerate() {
        for u in 1..l {
            queries.push(rows[i * positions + u - 1].clone());
            expected.push(rows[i * positions + u].clone());
        }
    }
    let mut g = Graph::new();
    let emb = embeddings(&mut g, &rows, &lens, positions);
    let mem = build_memory(&mut g, &ps, &emb, BiasVariant::Nam).unwrap();
    let h = g.constant(Tensor::from_rows(&queries)).unwrap();
    let r = retrieve(&mut g, &ps, h, &mem, &cfg).unwrap();
    let out = g.value(r.heads);
    let mut worst: f64 = 0.0;
    for (q, want) in expected.iter().enumerate() {
        for (a, b) in out.row(q).iter().zip(want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn criterion_3() -> Outcome {
    let worst = (0..100).map(chain_error).fold(0.0, f64::max);
    outcome(worst < 1e-6, format!("100 memories, max |delta| {worst:.2e}"))
}

// ---------------------------------------------------------------- 4

const E: usize = 6;
const D: usize = 8;

fn mha() -> MhaConfig {
    MhaConfig {
        heads: 2,
        hidden: 8,
        logit_scale: 1.0,
    }
}

fn nam_store(seed: u64) -> ParamStore {
    let mut ps = ParamStore::new();
    init_bias_module(&mut ps, BiasVariant::Nam, E, D, &mha(), &mut ChaCha8Rng::seed_from_u64(seed));
    ps
}

/// Concatenated head outputs and per-head weights for one memory.
fn attend(ps: &ParamStore, keys: Tensor, values: Tensor, mask: Vec<bool>, h: &Tensor) -> (Tensor, Vec<Tensor>) {
    let mut g = Graph::new();
    let mem = MemoryVars::from_tensors(&mut g, keys, values, mask).unwrap();
    let h = g.constant(h.clone()).unwrap();
    let r = retrieve(&mut g, ps, h, &mem, &mha()).unwrap();
    (g.value(r.heads).clone(), r.weights.iter().map(|&w| g.value(w).clone()).collect())
}

fn criterion_4() -> Outcome {
    let mut perm_gap: f64 = 0.0;
    let mut masked_mass: f64 = 0.0;
    for seed in 0..200 {
        let ps = nam_store(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let n = rng.random_range(2..10);
        let keys = rand_t(&mut rng, n, D);
        let values = rand_t(&mut rng, n, D);
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        mask[n - 1] = true;
        let h = rand_t(&mut rng, 3, E);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted = |t: &Tensor| Tensor::from_rows(&perm.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>());
        let (a, wa) = attend(&ps, keys.clone(), values.clone(), mask.clone(), &h);
        let (b, _) = attend(&ps, permuted(&keys), permuted(&values), perm.iter().map(|&i| mask[i]).collect(), &h);
        perm_gap = perm_gap.max(a.max_abs_diff(&b));
        for w in &wa {
            for t in 0..3 {
                for (l, &m) in mask.iter().enumerate() {
                    if !m {
                        masked_mass = masked_mass.max(w.get(t, l).abs());
                    }
                }
            }
        }
    }

    let vocab = Vocab::new(DEFAULT_ALPHABET).unwrap();
    let enc = EncoderConfig {
        dim: D,
        layers: 1,
        heads: 2,
        ff_dim: 10,
        ..EncoderConfig::default()
    };
    let mut ps = nam_store(77);
    init_context_encoder(&mut ps, &enc, vocab.size(), &mut ChaCha8Rng::seed_from_u64(78));
    let mut g = Graph::new();
    let emb = encode_phrases(&mut g, &ps, &ContextSet::empty(), &enc).unwrap();
    let mem = build_memory(&mut g, &ps, &emb, BiasVariant::Nam).unwrap();
    let h = g.constant(rand_t(&mut ChaCha8Rng::seed_from_u64(79), 5, E)).unwrap();
    let r = retrieve(&mut g, &ps, h, &mem, &mha()).unwrap();
    let empty_ok = mem.slots() == 1 && r.weights.iter().all(|&w| g.value(w).data().iter().all(|&x| x == 1.0));

    outcome(
        perm_gap < 1e-10 && masked_mass == 0.0 && empty_ok,
        format!(
            "permutation gap {perm_gap:.2e}, max masked weight {masked_mass}, empty context on no-bias slot: {empty_ok}"
        ),
    )
}

// ---------------------------------------------------------------- 5

/// Boost of a token string: every token of a completed phrase plus the
/// length of the longest phrase prefix still being matched, each worth
/// `lambda`. Matching falls back to the longest suffix that is a prefix.
fn boost_oracle(phrases: &[Vec<TokenId>], lambda: f64, toks: &[TokenId]) -> f64 {
    let full: HashSet<Vec<TokenId>> = phrases.iter().filter(|p| !p.is_empty()).cloned().collect();
    let mut prefixes: HashSet<Vec<TokenId>> = HashSet::new();
    for p in &full {
        for i in 0..=p.len() {
            prefixes.insert(p[..i].to_vec());
        }
    }
    let suffix = |h: &[TokenId]| -> Vec<TokenId> {
        (1..=h.len())
            .map(|s| h[s..].to_vec())
            .find(|s| prefixes.contains(s))
            .unwrap_or_default()
    };
    let mut completed = 0usize;
    let mut active: Vec<TokenId> = Vec::new();
    for &k in toks {
        if k == BLANK || k == BIAS {
            continue;
        }
        let mut h = active.clone();
        h.push(k);
        active = if prefixes.contains(&h) { h } else { suffix(&h) };
        while full.contains(&active) {
            completed += active.len();
            active = suffix(&active);
        }
    }
    lambda * (completed + active.len()) as f64
}

fn random_case(seed: u64) -> (Vec<Vec<TokenId>>, Vec<TokenId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = rng.random_range(2..5);
    let n = rng.random_range(0..5);
    let phrases = (0..n)
        .map(|_| (0..rng.random_range(1..5)).map(|_| 4 + rng.random_range(0..alphabet)).collect())
        .collect();
    let seq = (0..rng.random_range(0..14))
        .map(|_| if rng.random_bool(0.1) { BIAS } else { 4 + rng.random_range(0..alphabet) })
        .collect();
    (phrases, seq)
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..500 {
        let (phrases, seq) = random_case(seed);
        let t = BiasTrie::new(phrases.iter(), 0.75);
        worst = worst.max((t.fused_score(&seq) - boost_oracle(&phrases, 0.75, &seq)).abs());
    }

    // a phrase prefix followed by a token outside every phrase, with no
    // phrase completed along the way
    let mut dead_ends = 0;
    let mut dead_nonzero = 0;
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10_000);
        let phrases: Vec<Vec<TokenId>> =
            (0..rng.random_range(1..4)).map(|_| (0..rng.random_range(2..5)).map(|_| rng.random_range(4..7)).collect()).collect();
        let p = &phrases[rng.random_range(0..phrases.len())];
        let mut seq = p[..rng.random_range(1..p.len())].to_vec();
        seq.push(9);
        if phrases.iter().any(|q| seq.windows(q.len()).any(|w| w == q.as_slice())) {
            continue;
        }
        let t = BiasTrie::new(phrases.iter(), 2.0);
        dead_ends += 1;
        if t.fused_score(&seq) != 0.0 {
            dead_nonzero += 1;
        }
    }

    let (bench, model) = tiny_benchmark_model();
    let opts = DecodeOptions::default();
    let mut identical = 0;
    let mut total = 0;
    for u in bench.speakers.iter().flat_map(|s| &s.test).take(20) {
        let ctx = ContextPolicy::Paired { k: 4 }.context_for(u, &bench.distractor_pool, 5).unwrap();
        let trie = BiasTrie::from_context(&ctx, 0.0);
        let plain = model.decode(&u.frames, &ctx, &opts, None).unwrap();
        let fused = model.decode(&u.frames, &ctx, &opts, Some(&trie)).unwrap();
        total += 1;
        if plain.tokens == fused.tokens && plain.score.to_bits() == fused.score.to_bits() {
            identical += 1;
        }
    }
    outcome(
        worst < 1e-12 && dead_nonzero == 0 && identical == total,
        format!(
            "500 sequences max |delta| {worst:.1e}, {dead_nonzero}/{dead_ends} dead ends nonzero, \
             lambda=0 decodes identical {identical}/{total}"
        ),
    )
}

fn tiny_benchmark_model() -> (nam_core::corpus::Benchmark, Model) {
    let b = make_benchmark(&CorpusConfig {
        n_speakers: 2,
        pretrain_utterances: 20,
        pretrain_dev_utterances: 4,
        extra_distractors: 60,
        ..CorpusConfig::default()
    })
    .unwrap();
    let m = Model::new_base(&small_model_config(12), &b.vocab, b.synth.frame_dim(), 1).unwrap();
    (b, m)
}

// ---------------------------------------------------------------- 6

fn levenshtein(a: &[&str], b: &[&str]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn criterion_6() -> Outcome {
    const WORDS: [&str; 6] = ["call", "kim", "lee", "now", "the", "a"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let mut draw = || -> Vec<&str> { (0..rng.random_range(0..9)).map(|_| WORDS[rng.random_range(0..6)]).collect() };
        let (r, h) = (draw(), draw());
        let c = word_edits(&r, &h);
        let want = levenshtein(&r, &h);
        let rate = 100.0 * want as f64 / r.len().max(1) as f64;
        if c.errors() != want || c.ref_words != r.len() || (c.rate() - rate).abs() > 1e-12 {
            mismatches += 1;
        }
    }

    let names = ["kim lee", "dana park", "sam", "lou bo"];
    let mut utterances = 0;
    let mut tp_fn = 0;
    for _ in 0..300 {
        let e = names[rng.random_range(0..names.len())];
        let reference = format!("call {e} now");
        let hyp = if rng.random_bool(0.5) { reference.clone() } else { format!("call {} now", names[rng.random_range(0..4)]) };
        let c = entity_counts(&reference, &hyp, Some(e), names.iter().copied(), EntityMatch::Substring);
        utterances += 1;
        tp_fn += c.tp + c.fn_;
    }
    outcome(
        mismatches == 0 && tp_fn == utterances,
        format!("{mismatches}/1000 WER mismatches, TP+FN {tp_fn} for {utterances} utterances"),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let vocab = Vocab::new(DEFAULT_ALPHABET).unwrap();
    let transcript = vocab.tokenize("please call kim lee about the report").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let draws = 10_000;
    let hits = (0..draws)
        .filter(|_| {
            sample_bias(&vocab, &transcript, 0.7, (1, 3), MarkerPlacement::After, &mut rng)
                .unwrap()
                .phrase
                .is_some()
        })
        .count();
    let rate = hits as f64 / draws as f64;
    outcome((rate - 0.7).abs() <= 0.02, format!("insertion rate {rate:.4} over {draws} draws"))
}

// ---------------------------------------------------------------- 8-13

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn med(runs: &[SeedOutcome], f: impl Fn(&SeedOutcome) -> f64) -> f64 {
    median(runs.iter().map(f).collect())
}

fn desk_runs() -> Vec<SeedOutcome> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let base = RunConfig::load(&path).unwrap();
    [1u64, 2, 3]
        .iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            let start = Instant::now();
            let out = run_seed(&cfg, |m| eprintln!("  seed {seed}: {m} ({:.0}s)", start.elapsed().as_secs_f64())).unwrap();
            eprintln!("  seed {seed} finished in {:.1} min", start.elapsed().as_secs_f64() / 60.0);
            out
        })
        .collect()
}

fn criterion_8(runs: &[SeedOutcome]) -> Outcome {
    let (wn, wb) = (med(runs, |r| r.nam.wer), med(runs, |r| r.none.wer));
    let (rn, rb) = (med(runs, |r| r.nam.recall), med(runs, |r| r.none.recall));
    outcome(
        wb - wn >= 3.0 && rn - rb >= 20.0,
        format!("WER nam {wn:.1} vs none {wb:.1}; recall nam {rn:.1} vs none {rb:.1}"),
    )
}

fn criterion_9(runs: &[SeedOutcome]) -> Outcome {
    let (we, wb) = (med(runs, |r| r.nam_empty.wer), med(runs, |r| r.none.wer));
    outcome((we - wb).abs() <= 1.0, format!("WER nam empty context {we:.1} vs none {wb:.1}"))
}

fn criterion_10(runs: &[SeedOutcome]) -> Outcome {
    let points = runs[0].fst_sweep.len();
    let wer: Vec<f64> = (0..points).map(|i| med(runs, |r| r.fst_sweep[i].wer)).collect();
    let prec: Vec<f64> = (0..points).map(|i| med(runs, |r| r.fst_sweep[i].precision)).collect();
    let zero = med(runs, |r| r.fst_zero.wer);
    let best = wer.iter().cloned().fold(zero, f64::min);
    let mid_beats_zero = wer[..points - 1].iter().any(|&w| w < zero);
    let last = points - 1;
    let curve: Vec<String> = runs[0]
        .fst_sweep
        .iter()
        .zip(&wer)
        .map(|(r, w)| format!("{}:{w:.1}", r.lambda.unwrap_or(f64::NAN)))
        .collect();
    outcome(
        mid_beats_zero && wer[last] - best >= 5.0 && prec[last] < 50.0,
        format!("WER at 0:{zero:.1} {}, precision at largest {:.1}", curve.join(" "), prec[last]),
    )
}

fn degradation(sizes: &[MetricsReport]) -> f64 {
    sizes.last().unwrap().wer - sizes[0].wer
}

fn criterion_11(runs: &[SeedOutcome]) -> Outcome {
    let dn = med(runs, |r| degradation(&r.nam_sizes));
    let df = med(runs, |r| degradation(&r.fst_sizes));
    outcome(dn < df, format!("WER change B=10 to 50: nam {dn:+.2}, tuned fst {df:+.2}"))
}

fn criterion_12(runs: &[SeedOutcome]) -> Outcome {
    let f1: Vec<f64> = (0..4).map(|i| med(runs, |r| r.ablation[i].f1)).collect();
    let names: Vec<String> = runs[0].ablation.iter().zip(&f1).map(|(r, f)| format!("{} {f:.1}", r.model)).collect();
    outcome(f1.windows(2).all(|w| w[0] > w[1]), format!("F1 {}", names.join(", ")))
}

fn criterion_13(runs: &[SeedOutcome]) -> Outcome {
    let w0 = med(runs, |r| r.nam_rounds[0].wer);
    let w5 = med(runs, |r| r.nam_rounds.last().unwrap().wer);
    let fn5 = med(runs, |r| r.nam_rounds.last().unwrap().f1);
    let ff5 = med(runs, |r| r.fst_rounds.last().unwrap().f1);
    outcome(
        w5 < w0 && fn5 > ff5,
        format!("nam WER round 0 {w0:.1} to last {w5:.1}; last-round F1 nam {fn5:.1} vs fst {ff5:.1}"),
    )
}

fn report(n: usize, o: &Outcome) {
    println!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() -> ExitCode {
    let exact: [fn() -> Outcome; 7] =
        [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7];
    let mut failed = 0;
    for (i, f) in exact.iter().enumerate() {
        let o = f();
        report(i + 1, &o);
        failed += usize::from(!o.pass);
    }
    if std::env::var_os("NAM_ACCEPTANCE_SKIP_DESK").is_some() {
        println!("criteria 8-13: skipped");
    } else {
        let runs = desk_runs();
        let desk: [fn(&[SeedOutcome]) -> Outcome; 6] =
            [criterion_8, criterion_9, criterion_10, criterion_11, criterion_12, criterion_13];
        for (i, f) in desk.iter().enumerate() {
            let o = f(&runs);
            report(i + 8, &o);
            failed += usize::from(!o.pass);
        }
    }
    println!("acceptance: {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
