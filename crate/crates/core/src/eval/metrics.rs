//! Word error rate and entity precision/recall.

use serde::{Deserialize, Serialize};

/// Edit counts of one alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Set when the reference is empty but the hypothesis is not; the rate
    /// then counts insertions over a denominator of one.
    pub fn empty_reference(&self) -> bool {
        self.ref_words == 0 && self.insertions > 0
    }

    /// Percent.
    pub fn rate(&self) -> f64 {
        100.0 * self.errors() as f64 / self.ref_words.max(1) as f64
    }

    pub fn add(&mut self, o: &EditCounts) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.ref_words += o.ref_words;
    }
}

/// Minimum unit-cost alignment. Among optimal alignments the backtrace
/// prefers substitution, then deletion, then insertion.
pub fn word_edits<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut c = EditCounts {
        ref_words: n,
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(!same) == here {
                if !same {
                    c.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

pub fn split_words(text: &str) -> Vec<&str> {
    text.split(' ').filter(|w| !w.is_empty()).collect()
}

/// How a phrase is found in a transcript.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityMatch {
    /// Plain substring of the transcript text.
    #[default]
    Substring,
    /// The phrase's words appear as a contiguous run of whole words.
    WordBoundary,
}

impl EntityMatch {
    pub fn contains(self, text: &str, phrase: &str) -> bool {
        match self {
            EntityMatch::Substring => text.contains(phrase),
            EntityMatch::WordBoundary => {
                let t = split_words(text);
                let p = split_words(phrase);
                !p.is_empty() && t.windows(p.len()).any(|win| win == p.as_slice())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl EntityCounts {
    /// Percent; zero when undefined.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn add(&mut self, o: &EntityCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        100.0 * a as f64 / b as f64
    }
}

/// Counts for one utterance: a hit or miss on the true entity, plus one
/// false positive per context phrase that the hypothesis contains but the
/// reference does not.
pub fn entity_counts<'a>(
    reference: &str,
    hypothesis: &str,
    entity: Option<&str>,
    context: impl IntoIterator<Item = &'a str>,
    rule: EntityMatch,
) -> EntityCounts {
    let mut c = EntityCounts::default();
    if let Some(e) = entity {
        if rule.contains(hypothesis, e) {
            c.tp = 1;
        } else {
            c.fn_ = 1;
        }
    }
    for p in context {
        if rule.contains(hypothesis, p) && !rule.contains(reference, p) {
            c.fp += 1;
        }
    }
    c
}
