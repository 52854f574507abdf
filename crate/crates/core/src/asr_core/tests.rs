use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{Vocab, BLANK, DEFAULT_ALPHABET};
use crate::numerics::{grad_check, grad_check_params, kernels, log_add};

fn random_lattice(rng: &mut impl Rng, rows: usize, v: usize) -> Tensor {
    let logits = Tensor::matrix(rows, v, (0..rows * v).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    kernels::log_softmax_rows(&logits)
}

/// Sums path probabilities by walking every alignment explicitly.
fn brute_force_nll(lattice: &Tensor, t_n: usize, labels: &[TokenId]) -> f64 {
    fn walk(lat: &Tensor, t_n: usize, labels: &[TokenId], t: usize, u: usize, acc: f64, out: &mut Vec<f64>) {
        let l1 = labels.len() + 1;
        let row = t * l1 + u;
        let b = acc + lat.get(row, BLANK);
        if t == t_n - 1 && u == labels.len() {
            out.push(b);
        } else if t + 1 < t_n {
            walk(lat, t_n, labels, t + 1, u, b, out);
        }
        if u < labels.len() {
            walk(lat, t_n, labels, t, u + 1, acc + lat.get(row, labels[u]), out);
        }
    }
    let mut paths = Vec::new();
    walk(lattice, t_n, labels, 0, 0, 0.0, &mut paths);
    -crate::numerics::log_sum_exp(&paths)
}

#[test]
fn loss_matches_alignment_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let t_n = rng.random_range(1..=4);
        let l = rng.random_range(0..=3);
        let v = rng.random_range(2..=4);
        let labels: Vec<TokenId> = (0..l).map(|_| rng.random_range(1..v)).collect();
        let lat = random_lattice(&mut rng, t_n * (l + 1), v);
        let got = rnnt_loss(&lat, t_n, &labels).unwrap();
        assert!(got.feasible);
        worst = worst.max((got.nll - brute_force_nll(&lat, t_n, &labels)).abs());
    }
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn loss_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..40 {
        let t_n = rng.random_range(1..=4);
        let l = rng.random_range(0..=3);
        let v = rng.random_range(2..=4);
        let labels: Vec<TokenId> = (0..l).map(|_| rng.random_range(1..v)).collect();
        let lat = random_lattice(&mut rng, t_n * (l + 1), v);
        let err = grad_check(
            |x| {
                let r = rnnt_loss(x, t_n, &labels)?;
                Ok((r.nll, r.grad))
            },
            &lat,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn loss_closed_forms() {
    let lat = Tensor::from_rows(&[vec![0.3f64.ln(), 0.7f64.ln()]]);
    let r = rnnt_loss(&lat, 1, &[]).unwrap();
    assert!((r.nll + 0.3f64.ln()).abs() < 1e-15);

    let half = 0.5f64.ln();
    let uniform = Tensor::full(&[4, 2], half);
    let r = rnnt_loss(&uniform, 2, &[1]).unwrap();
    assert!((r.nll - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn loss_without_frames_is_infeasible() {
    let lat = Tensor::zeros(&[0, 3]);
    let r = rnnt_loss(&lat, 0, &[1, 2]).unwrap();
    assert!(!r.feasible);
    assert_eq!(r.nll, f64::INFINITY);
}

#[test]
fn loss_rejects_wrong_shape_and_blank_labels() {
    let lat = Tensor::zeros(&[3, 3]);
    assert!(rnnt_loss(&lat, 2, &[1]).is_err());
    assert!(rnnt_loss(&Tensor::zeros(&[4, 3]), 2, &[0]).is_err());
}

fn small_cfg(subsample: usize) -> AsrConfig {
    AsrConfig {
        subsample,
        encoder: EncoderConfig {
            dim: 8,
            layers: 1,
            heads: 2,
            ff_dim: 12,
            ..EncoderConfig::default()
        },
        pred_dim: 6,
        joint_dim: 7,
    }
}

fn model(cfg: &AsrConfig, frame_dim: usize, v: usize, seed: u64) -> ParamStore {
    let mut ps = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_asr(&mut ps, cfg, frame_dim, v, &mut rng);
    ps
}

fn frames(rng: &mut impl Rng, t: usize, f: usize) -> Tensor {
    Tensor::matrix(t, f, (0..t * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn encoder_output_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (sub, t0, expect) in [(1, 6, 6), (2, 7, 4), (3, 1, 1)] {
        let cfg = small_cfg(sub);
        let ps = model(&cfg, 4, 5, 1);
        let mut g = Graph::new();
        let h = encode_audio(&mut g, &ps, &cfg, &frames(&mut rng, t0, 4)).unwrap();
        assert_eq!(g.shape(h), &[expect, 8]);
        assert_eq!(cfg.output_frames(t0), expect);
    }
    let cfg = small_cfg(1);
    let ps = model(&cfg, 4, 5, 1);
    let mut g = Graph::new();
    assert!(encode_audio(&mut g, &ps, &cfg, &Tensor::zeros(&[0, 4])).is_err());
}

#[test]
fn stacking_pads_with_zeros() {
    let f = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
    let s = stack_frames(&f, 2);
    assert_eq!(s, Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]));
}

#[test]
fn lattice_rows_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = small_cfg(1);
    let ps = model(&cfg, 4, 6, 2);
    let mut g = Graph::new();
    let h = encode_audio(&mut g, &ps, &cfg, &frames(&mut rng, 5, 4)).unwrap();
    let p = predictor(&mut g, &ps, &[3, 4, 5]).unwrap();
    let lat = joint(&mut g, &ps, h, p).unwrap();
    let lat = g.value(lat);
    assert_eq!(lat.shape(), &[20, 6]);
    for r in 0..lat.rows() {
        let s: f64 = lat.row(r).iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn plain_joint_matches_tape() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = small_cfg(1);
    let ps = model(&cfg, 4, 6, 3);
    let labels = [4, 5, 3];
    let mut g = Graph::new();
    let h = encode_audio(&mut g, &ps, &cfg, &frames(&mut rng, 3, 4)).unwrap();
    let p = predictor(&mut g, &ps, &labels).unwrap();
    let lat = joint(&mut g, &ps, h, p).unwrap();
    let jp = JointParams::from_store(&ps).unwrap();
    let audio = jp.project_audio(g.value(h)).unwrap();
    let mut st = jp.pred_step(None, SOS);
    for u in 0..=labels.len() {
        for (a, b) in st.hidden.iter().zip(g.value(p).row(u)) {
            assert!((a - b).abs() < 1e-12);
        }
        for t in 0..3 {
            let lp = jp.log_probs(audio.row(t), &st);
            for (a, b) in lp.iter().zip(g.value(lat).row(t * 4 + u)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        if u < labels.len() {
            st = jp.pred_step(Some(&st.hidden), labels[u]);
        }
    }
}

#[test]
fn full_model_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = small_cfg(2);
    let ps = model(&cfg, 3, 5, 4);
    let x = frames(&mut rng, 5, 3);
    let labels = [2, 4, 3];
    let err = grad_check_params(
        &ps,
        |ps| {
            let mut g = Graph::new();
            let h = encode_audio(&mut g, ps, &cfg, &x)?;
            let p = predictor(&mut g, ps, &labels)?;
            let lat = joint(&mut g, ps, h, p)?;
            let loss = rnnt_loss_var(&mut g, lat, 3, &labels)?;
            let v = g.value(loss).data()[0];
            Ok((v, g.backward(loss)?.into_params()))
        },
        1e-5,
        3,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

/// Pseudo-random distributions keyed by (seed, t, prefix).
struct TableScorer {
    seed: u64,
    frames: usize,
    vocab: usize,
    sharpness: f64,
}

impl TransducerScorer for TableScorer {
    type State = Vec<TokenId>;

    fn frames(&self) -> usize {
        self.frames
    }
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn start(&self) -> Vec<TokenId> {
        Vec::new()
    }
    fn extend(&self, s: &Vec<TokenId>, k: TokenId) -> Vec<TokenId> {
        let mut s = s.clone();
        s.push(k);
        s
    }
    fn log_probs(&self, t: usize, s: &Vec<TokenId>) -> Vec<f64> {
        let mut hsh = DefaultHasher::new();
        (self.seed, t, s).hash(&mut hsh);
        let mut rng = ChaCha8Rng::seed_from_u64(hsh.finish());
        let mut row: Vec<f64> = (0..self.vocab).map(|_| rng.random_range(-1.0..1.0) * self.sharpness).collect();
        kernels::log_softmax_in_place(&mut row);
        row
    }
}

/// Forces `target` then blanks.
struct ForcedScorer {
    target: Vec<TokenId>,
    frames: usize,
}

impl TransducerScorer for ForcedScorer {
    type State = usize;

    fn frames(&self) -> usize {
        self.frames
    }
    fn vocab_size(&self) -> usize {
        4
    }
    fn start(&self) -> usize {
        0
    }
    fn extend(&self, s: &usize, _: TokenId) -> usize {
        s + 1
    }
    fn log_probs(&self, _: usize, s: &usize) -> Vec<f64> {
        let mut row = vec![-50.0; 4];
        let k = self.target.get(*s).copied().unwrap_or(BLANK);
        row[k] = 0.0;
        kernels::log_softmax_in_place(&mut row);
        row
    }
}

#[test]
fn greedy_all_blank_and_forced() {
    let s = ForcedScorer {
        target: vec![],
        frames: 5,
    };
    assert!(greedy_decode(&s, 3).tokens.is_empty());
    let s = ForcedScorer {
        target: vec![1, 2],
        frames: 3,
    };
    assert_eq!(greedy_decode(&s, 3).tokens, vec![1, 2]);
    let b = beam_decode(&s, 4, 3, &NoFusion);
    assert_eq!(b[0].tokens, vec![1, 2]);
}

#[test]
fn greedy_respects_symbol_cap() {
    let s = ForcedScorer {
        target: vec![1, 2, 3, 1],
        frames: 1,
    };
    assert_eq!(greedy_decode(&s, 2).tokens, vec![1, 2]);
}

#[test]
fn greedy_equals_beam_one_on_random_models() {
    let vocab = Vocab::new(DEFAULT_ALPHABET).unwrap();
    let cfg = small_cfg(1);
    for seed in 0..100 {
        let ps = model(&cfg, 4, vocab.size(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let mut g = Graph::new();
        let h = encode_audio(&mut g, &ps, &cfg, &frames(&mut rng, 6, 4)).unwrap();
        let jp = JointParams::from_store(&ps).unwrap();
        let scorer = ModelScorer::new(&jp, g.value(h), &vocab).unwrap();
        let gr = greedy_decode(&scorer, 3);
        let b = beam_decode(&scorer, 1, 3, &NoFusion);
        assert_eq!(b.len(), 1);
        assert_eq!(gr.tokens, b[0].tokens, "seed {seed}");
        assert!((gr.score - b[0].score).abs() < 1e-9);

        let table = TableScorer {
            seed,
            frames: 5,
            vocab: 4,
            sharpness: 3.0,
        };
        assert_eq!(greedy_decode(&table, 2).tokens, beam_decode(&table, 1, 2, &NoFusion)[0].tokens);
    }
}

/// Exact sequence log-probabilities, summing over every alignment that
/// emits at most `cap` labels per frame.
fn exhaustive(s: &TableScorer, cap: usize) -> HashMap<Vec<TokenId>, f64> {
    fn go(s: &TableScorer, cap: usize, t: usize, n: usize, prefix: &mut Vec<TokenId>, acc: f64, out: &mut HashMap<Vec<TokenId>, f64>) {
        if t == s.frames {
            let e = out.entry(prefix.clone()).or_insert(f64::NEG_INFINITY);
            *e = log_add(*e, acc);
            return;
        }
        let lp = s.log_probs(t, prefix);
        go(s, cap, t + 1, 0, prefix, acc + lp[BLANK], out);
        if n < cap {
            for k in 1..s.vocab {
                prefix.push(k);
                go(s, cap, t, n + 1, prefix, acc + lp[k], out);
                prefix.pop();
            }
        }
    }
    let mut out = HashMap::new();
    go(s, cap, 0, 0, &mut Vec::new(), 0.0, &mut out);
    out
}

#[test]
fn wide_beam_finds_exact_map() {
    for seed in 0..60 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = TableScorer {
            seed,
            frames: rng.random_range(1..=3),
            vocab: rng.random_range(2..=3),
            sharpness: 2.0,
        };
        let cap = 2;
        let exact = exhaustive(&s, cap);
        let (map_seq, map_lp) = exact
            .iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then_with(|| b.0.cmp(a.0)))
            .unwrap();
        let width = 3usize.pow(s.frames as u32 + 2 * cap as u32);
        let hyps = beam_decode(&s, width, cap, &NoFusion);
        assert_eq!(&hyps[0].tokens, map_seq, "seed {seed}");
        assert!((hyps[0].score - map_lp).abs() < 1e-9);
        assert_eq!(hyps.len(), exact.len());
        for h in &hyps {
            assert!((h.score - exact[&h.tokens]).abs() < 1e-9);
        }
    }
}

struct ZeroFusion;

impl Fusion for ZeroFusion {
    type State = u8;
    fn start(&self) -> u8 {
        0
    }
    fn step(&self, s: &u8, _: TokenId) -> (u8, f64) {
        (s.wrapping_add(1), 0.0)
    }
}

proptest! {
    #[test]
    fn null_fusion_keeps_ranking(seed in 0u64..5000, beam in 1usize..6) {
        let s = TableScorer { seed, frames: 4, vocab: 4, sharpness: 2.0 };
        let a = beam_decode(&s, beam, 2, &NoFusion);
        let b = beam_decode(&s, beam, 2, &ZeroFusion);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.tokens, &y.tokens);
            prop_assert_eq!(x.score, y.score);
            prop_assert_eq!(y.fusion_score, 0.0);
        }
    }

    #[test]
    fn score_is_sum_of_parts(seed in 0u64..5000) {
        struct Bonus;
        impl Fusion for Bonus {
            type State = ();
            fn start(&self) {}
            fn step(&self, _: &(), k: TokenId) -> ((), f64) { ((), 0.3 * k as f64) }
        }
        let s = TableScorer { seed, frames: 3, vocab: 4, sharpness: 2.0 };
        for h in beam_decode(&s, 4, 2, &Bonus) {
            prop_assert!((h.score - h.model_score - h.fusion_score).abs() < 1e-9);
        }
    }

    #[test]
    fn decoding_is_deterministic(seed in 0u64..5000) {
        let s = TableScorer { seed, frames: 4, vocab: 4, sharpness: 2.0 };
        let a = beam_decode(&s, 3, 2, &NoFusion);
        let b = beam_decode(&s, 3, 2, &NoFusion);
        prop_assert_eq!(a.iter().map(|h| h.tokens.clone()).collect::<Vec<_>>(), b.iter().map(|h| h.tokens.clone()).collect::<Vec<_>>());
    }
}
