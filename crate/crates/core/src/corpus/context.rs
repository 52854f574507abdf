use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{words, TokenId, Vocab, BIAS, PAD};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Positive,
    Distractor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrase {
    pub ids: Vec<TokenId>,
    pub text: String,
    pub role: Role,
}

impl Phrase {
    pub fn new(vocab: &Vocab, text: &str, role: Role) -> Result<Self> {
        let ids = vocab.tokenize(text)?;
        if ids.is_empty() {
            return Err(Error::Invalid("empty phrase".into()));
        }
        Ok(Self {
            ids,
            text: text.to_string(),
            role,
        })
    }

    pub fn from_ids(vocab: &Vocab, ids: Vec<TokenId>, role: Role) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Invalid("empty phrase".into()));
        }
        let text = vocab.detokenize(&ids)?;
        if ids.iter().any(|&i| Vocab::is_reserved(i)) {
            return Err(Error::Invalid(format!("phrase {text:?} contains reserved ids")));
        }
        Ok(Self { ids, text, role })
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }
}

/// A batch of biasing phrases padded to a common length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    phrases: Vec<Phrase>,
    max_len: usize,
    /// B×U ids, row-major, padded with [`PAD`].
    ids: Vec<TokenId>,
    /// B×U validity, row-major.
    mask: Vec<bool>,
}

impl ContextSet {
    pub fn new(phrases: Vec<Phrase>) -> Self {
        let max_len = phrases.iter().map(|p| p.ids.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(phrases.len() * max_len);
        let mut mask = Vec::with_capacity(phrases.len() * max_len);
        for p in &phrases {
            for u in 0..max_len {
                match p.ids.get(u) {
                    Some(&t) => {
                        ids.push(t);
                        mask.push(true);
                    }
                    None => {
                        ids.push(PAD);
                        mask.push(false);
                    }
                }
            }
        }
        Self {
            phrases,
            max_len,
            ids,
            mask,
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    /// B
    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// U, the longest phrase length.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn phrases(&self) -> &[Phrase] {
        &self.phrases
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn row(&self, i: usize) -> (&[TokenId], &[bool]) {
        let u = self.max_len;
        (&self.ids[i * u..(i + 1) * u], &self.mask[i * u..(i + 1) * u])
    }

    pub fn positives(&self) -> impl Iterator<Item = &Phrase> {
        self.phrases.iter().filter(|p| p.role == Role::Positive)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerPlacement {
    After,
    Before,
}

/// Outcome of bias-phrase sampling for one training transcript.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasSample {
    pub phrase: Option<Phrase>,
    pub annotated: Vec<TokenId>,
}

/// With probability `p`, picks a uniformly random word n-gram (n drawn
/// uniformly from `ngram_len`, capped by the word count) as the positive
/// phrase and marks every occurrence of it in the transcript.
pub fn sample_bias(
    vocab: &Vocab,
    transcript: &[TokenId],
    p: f64,
    ngram_len: (usize, usize),
    placement: MarkerPlacement,
    rng: &mut impl Rng,
) -> Result<BiasSample> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("insertion probability {p} outside [0, 1]")));
    }
    if transcript.is_empty() {
        return Err(Error::EmptyInput("transcript"));
    }
    let unchanged = BiasSample {
        phrase: None,
        annotated: transcript.to_vec(),
    };
    if !rng.random_bool(p) {
        return Ok(unchanged);
    }
    let space = vocab.space();
    let ws = words(transcript, space);
    if ws.is_empty() {
        return Ok(unchanged);
    }
    let (lo, hi) = ngram_len;
    let hi = hi.min(ws.len());
    let lo = lo.clamp(1, hi);
    let n = rng.random_range(lo..=hi);
    let start = rng.random_range(0..=ws.len() - n);
    let gram: Vec<&[TokenId]> = ws[start..start + n].to_vec();

    let mut ids = Vec::new();
    for (i, w) in gram.iter().enumerate() {
        if i > 0 {
            ids.push(space);
        }
        ids.extend_from_slice(w);
    }
    let phrase = Phrase::from_ids(vocab, ids, Role::Positive)?;
    let annotated = mark_occurrences(transcript, &gram, space, placement);
    Ok(BiasSample {
        phrase: Some(phrase),
        annotated,
    })
}

/// Inserts [`BIAS`] around every word-aligned, non-overlapping occurrence of
/// the word sequence `gram`.
pub fn mark_occurrences(
    transcript: &[TokenId],
    gram: &[&[TokenId]],
    space: TokenId,
    placement: MarkerPlacement,
) -> Vec<TokenId> {
    // word spans as (start, end) token offsets
    let mut spans = Vec::new();
    let mut s = None;
    for (i, &t) in transcript.iter().enumerate() {
        match (t == space, s) {
            (false, None) => s = Some(i),
            (true, Some(st)) => {
                spans.push((st, i));
                s = None;
            }
            _ => {}
        }
    }
    if let Some(st) = s {
        spans.push((st, transcript.len()));
    }

    let n = gram.len();
    let mut inserts: Vec<usize> = Vec::new();
    let mut w = 0;
    while n > 0 && w + n <= spans.len() {
        let hit = (0..n).all(|j| {
            let (a, b) = spans[w + j];
            &transcript[a..b] == gram[j]
        });
        if hit {
            inserts.push(match placement {
                MarkerPlacement::After => spans[w + n - 1].1,
                MarkerPlacement::Before => spans[w].0,
            });
            w += n;
        } else {
            w += 1;
        }
    }

    let mut out = Vec::with_capacity(transcript.len() + inserts.len());
    let mut next = inserts.iter().peekable();
    for (i, &t) in transcript.iter().enumerate() {
        while next.peek() == Some(&&i) {
            out.push(BIAS);
            next.next();
        }
        out.push(t);
    }
    out.extend(next.map(|_| BIAS));
    out
}

/// Positive (if any) plus `k` distractors sampled without replacement from
/// `pool`, skipping pool entries textually equal to the positive; shuffled.
pub fn build_context_set(
    positive: Option<&Phrase>,
    pool: &[Phrase],
    k: usize,
    rng: &mut impl Rng,
) -> Result<ContextSet> {
    let eligible: Vec<&Phrase> = pool
        .iter()
        .filter(|p| positive.is_none_or(|pos| pos.text != p.text))
        .collect();
    if eligible.len() < k {
        return Err(Error::PoolTooSmall {
            available: eligible.len(),
            requested: k,
        });
    }
    let mut phrases: Vec<Phrase> = eligible
        .choose_multiple(rng, k)
        .map(|p| (*p).clone().with_role(Role::Distractor))
        .collect();
    if let Some(pos) = positive {
        phrases.push(pos.clone().with_role(Role::Positive));
    }
    phrases.shuffle(rng);
    Ok(ContextSet::new(phrases))
}
