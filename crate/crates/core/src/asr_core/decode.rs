//! Greedy and beam decoding over any per-frame transducer scorer.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::JointParams;
use crate::corpus::{TokenId, Vocab, BLANK, SOS};
use crate::error::Result;
use crate::numerics::{log_add, Tensor};

/// Source of output distributions for frame `t` given a decoder state.
pub trait TransducerScorer {
    type State: Clone;

    fn frames(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn start(&self) -> Self::State;
    fn extend(&self, state: &Self::State, token: TokenId) -> Self::State;
    fn log_probs(&self, t: usize, state: &Self::State) -> Vec<f64>;

    /// Whether `token` may be emitted as a label (blank never is).
    fn emittable(&self, token: TokenId) -> bool {
        token != BLANK
    }
}

/// External score added on every emission during beam search.
pub trait Fusion {
    type State: Clone + PartialEq;

    fn start(&self) -> Self::State;
    fn step(&self, state: &Self::State, token: TokenId) -> (Self::State, f64);
}

pub struct NoFusion;

impl Fusion for NoFusion {
    type State = ();

    fn start(&self) {}

    fn step(&self, _: &(), _: TokenId) -> ((), f64) {
        ((), 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredState {
    pub hidden: Vec<f64>,
    /// Prediction half of the joint input.
    pub proj: Vec<f64>,
}

/// Decoding view of a trained model for one utterance.
pub struct ModelScorer<'a> {
    params: &'a JointParams,
    audio: Tensor,
    emittable: Vec<bool>,
}

impl<'a> ModelScorer<'a> {
    /// `h` is the (possibly shifted) encoder output, T×e.
    pub fn new(params: &'a JointParams, h: &Tensor, vocab: &Vocab) -> Result<Self> {
        let emittable = (0..params.vocab_size()).map(|i| vocab.is_emittable(i)).collect();
        Ok(Self {
            params,
            audio: params.project_audio(h)?,
            emittable,
        })
    }
}

impl TransducerScorer for ModelScorer<'_> {
    type State = PredState;

    fn frames(&self) -> usize {
        self.audio.rows()
    }

    fn vocab_size(&self) -> usize {
        self.params.vocab_size()
    }

    fn start(&self) -> PredState {
        self.params.pred_step(None, SOS)
    }

    fn extend(&self, state: &PredState, token: TokenId) -> PredState {
        self.params.pred_step(Some(&state.hidden), token)
    }

    fn log_probs(&self, t: usize, state: &PredState) -> Vec<f64> {
        self.params.log_probs(self.audio.row(t), state)
    }

    fn emittable(&self, token: TokenId) -> bool {
        self.emittable[token]
    }
}

/// A decoded label sequence. `score == model_score + fusion_score`.
#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub model_score: f64,
    pub fusion_score: f64,
    pub state: S,
}

/// Lowest id wins ties.
fn best_token<S: TransducerScorer>(scorer: &S, lp: &[f64]) -> TokenId {
    let mut best = BLANK;
    for (k, &v) in lp.iter().enumerate() {
        if k != BLANK && scorer.emittable(k) && v > lp[best] {
            best = k;
        }
    }
    best
}

pub fn greedy_decode<S: TransducerScorer>(scorer: &S, max_symbols: usize) -> Hypothesis<S::State> {
    let max_symbols = max_symbols.max(1);
    let mut state = scorer.start();
    let mut tokens = Vec::new();
    let mut model = 0.0;
    for t in 0..scorer.frames() {
        for n in 0..=max_symbols {
            let lp = scorer.log_probs(t, &state);
            let k = if n == max_symbols { BLANK } else { best_token(scorer, &lp) };
            model += lp[k];
            if k == BLANK {
                break;
            }
            tokens.push(k);
            state = scorer.extend(&state, k);
        }
    }
    Hypothesis {
        tokens,
        score: model,
        model_score: model,
        fusion_score: 0.0,
        state,
    }
}

struct Node<S, F> {
    tokens: Vec<TokenId>,
    model: f64,
    fusion: f64,
    state: Option<S>,
    fstate: F,
    /// Parent in the previous level, while `state` is still pending.
    parent: usize,
}

impl<S, F> Node<S, F> {
    fn score(&self) -> f64 {
        self.model + self.fusion
    }
}

fn rank<S, F>(a: &Node<S, F>, b: &Node<S, F>) -> Ordering {
    b.score()
        .partial_cmp(&a.score())
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn merge<S, F>(pool: &mut Vec<Node<S, F>>, index: &mut HashMap<Vec<TokenId>, usize>, node: Node<S, F>) {
    match index.get(&node.tokens) {
        Some(&i) => pool[i].model = log_add(pool[i].model, node.model),
        None => {
            index.insert(node.tokens.clone(), pool.len());
            pool.push(node);
        }
    }
}

/// Frame-synchronous beam search with prefix merging.
///
/// Within a frame, every hypothesis may emit up to `max_symbols` labels. At
/// each emission level the finished (blank-terminated) and continuing
/// candidates compete for the same `beam` slots; finished hypotheses that
/// reach the same label prefix are merged by log-sum-exp. Returns the
/// surviving hypotheses best first.
pub fn beam_decode<S, F>(scorer: &S, beam: usize, max_symbols: usize, fusion: &F) -> Vec<Hypothesis<S::State>>
where
    S: TransducerScorer,
    F: Fusion,
{
    let beam = beam.max(1);
    let max_symbols = max_symbols.max(1);
    let vocab = scorer.vocab_size();
    let mut hyps: Vec<Node<S::State, F::State>> = vec![Node {
        tokens: Vec::new(),
        model: 0.0,
        fusion: 0.0,
        state: Some(scorer.start()),
        fstate: fusion.start(),
        parent: 0,
    }];
    for t in 0..scorer.frames() {
        let mut finished: Vec<Node<S::State, F::State>> = Vec::new();
        let mut finished_index = HashMap::new();
        let mut active = std::mem::take(&mut hyps);
        for level in 0..=max_symbols {
            if active.is_empty() {
                break;
            }
            let mut next = Vec::new();
            let mut next_index = HashMap::new();
            for (pi, h) in active.iter().enumerate() {
                let state = h.state.as_ref().expect("state resolved before scoring");
                let lp = scorer.log_probs(t, state);
                merge(
                    &mut finished,
                    &mut finished_index,
                    Node {
                        tokens: h.tokens.clone(),
                        model: h.model + lp[BLANK],
                        fusion: h.fusion,
                        state: h.state.clone(),
                        fstate: h.fstate.clone(),
                        parent: 0,
                    },
                );
                if level == max_symbols {
                    continue;
                }
                for (k, &lpk) in lp.iter().enumerate().take(vocab) {
                    if k == BLANK || !scorer.emittable(k) {
                        continue;
                    }
                    let (fstate, delta) = fusion.step(&h.fstate, k);
                    let mut tokens = h.tokens.clone();
                    tokens.push(k);
                    merge(
                        &mut next,
                        &mut next_index,
                        Node {
                            tokens,
                            model: h.model + lpk,
                            fusion: h.fusion + delta,
                            state: None,
                            fstate,
                            parent: pi,
                        },
                    );
                }
            }
            // Joint pruning of finished and continuing candidates.
            let mut all: Vec<(bool, Node<S::State, F::State>)> = finished
                .drain(..)
                .map(|n| (true, n))
                .chain(next.drain(..).map(|n| (false, n)))
                .collect();
            all.sort_by(|a, b| rank(&a.1, &b.1));
            all.truncate(beam);
            finished_index.clear();
            let mut survivors = Vec::new();
            for (done, mut n) in all {
                if done {
                    finished_index.insert(n.tokens.clone(), finished.len());
                    finished.push(n);
                } else {
                    let parent = active[n.parent].state.as_ref().expect("resolved parent");
                    n.state = Some(scorer.extend(parent, *n.tokens.last().expect("emitted token")));
                    survivors.push(n);
                }
            }
            active = survivors;
        }
        finished.sort_by(rank);
        hyps = finished;
    }
    hyps.sort_by(rank);
    hyps.into_iter()
        .map(|n| Hypothesis {
            score: n.score(),
            tokens: n.tokens,
            model_score: n.model,
            fusion_score: n.fusion,
            state: n.state.expect("finished hypotheses carry state"),
        })
        .collect()
}
