use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::acoustics::{AcousticConfig, Synthesizer};
use super::context::{mark_occurrences, MarkerPlacement, Phrase, Role};
use super::vocab::{TokenId, Vocab, DEFAULT_ALPHABET};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub alphabet: String,
    pub acoustic: AcousticConfig,
    pub noise_sigma: f64,
    pub lexicon_size: usize,
    pub lexicon_word_len: (usize, usize),
    /// Keep confusion-group characters out of the everyday lexicon so that
    /// only names carry acoustically ambiguous spellings.
    pub lexicon_avoids_confusable: bool,
    pub name_len: (usize, usize),
    pub entity_words: (usize, usize),
    pub sentence_words: (usize, usize),
    pub names_per_utterance: (usize, usize),
    pub n_speakers: usize,
    pub entities_per_speaker: usize,
    pub split: (usize, usize, usize),
    pub extra_distractors: usize,
    pub pretrain_utterances: usize,
    pub pretrain_dev_utterances: usize,
    /// Fraction of benchmark entity words kept out of the pretraining text.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            alphabet: DEFAULT_ALPHABET.to_string(),
            acoustic: AcousticConfig::default(),
            noise_sigma: 0.4,
            lexicon_size: 60,
            lexicon_word_len: (2, 5),
            lexicon_avoids_confusable: true,
            name_len: (4, 6),
            entity_words: (1, 2),
            sentence_words: (2, 4),
            names_per_utterance: (1, 2),
            n_speakers: 10,
            entities_per_speaker: 5,
            split: (50, 10, 10),
            extra_distractors: 100,
            pretrain_utterances: 2000,
            pretrain_dev_utterances: 100,
            holdout_fraction: 1.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Pretrain,
    PretrainDev,
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: Option<usize>,
    pub split: Split,
    pub text: String,
    pub reference: Vec<TokenId>,
    /// Reference with the entity (when present) marked.
    pub annotated: Vec<TokenId>,
    pub frames: Tensor,
    pub entity: Option<Phrase>,
}

#[derive(Clone, Debug)]
pub struct SpeakerData {
    pub id: usize,
    pub entities: Vec<Phrase>,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub config: CorpusConfig,
    pub vocab: Vocab,
    pub synth: Synthesizer,
    pub lexicon: Vec<String>,
    pub speakers: Vec<SpeakerData>,
    /// Every benchmark entity plus extra held-out names; the source of
    /// evaluation distractors.
    pub distractor_pool: Vec<Phrase>,
    pub pretrain: Vec<Utterance>,
    pub pretrain_dev: Vec<Utterance>,
}

impl Benchmark {
    pub fn all_entities(&self) -> impl Iterator<Item = &Phrase> {
        self.speakers.iter().flat_map(|s| s.entities.iter())
    }

    pub fn speaker_utterances(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.speakers.iter().flat_map(move |s| match split {
            Split::Train => s.train.iter(),
            Split::Dev => s.dev.iter(),
            Split::Test => s.test.iter(),
            Split::Pretrain | Split::PretrainDev => [].iter(),
        })
    }
}

struct TextWorld<'a> {
    cfg: &'a CorpusConfig,
    letters: Vec<char>,
    plain_letters: Vec<char>,
    lexicon: Vec<String>,
}

impl TextWorld<'_> {
    fn random_word(&self, letters: &[char], len: (usize, usize), rng: &mut impl Rng) -> String {
        let n = rng.random_range(len.0..=len.1);
        (0..n).map(|_| *letters.choose(rng).expect("nonempty letters")).collect()
    }

    fn name(&self, banned: &BTreeSet<String>, rng: &mut impl Rng) -> String {
        loop {
            let w = self.random_word(&self.letters, self.cfg.name_len, rng);
            if !banned.contains(&w) && !self.lexicon.contains(&w) {
                return w;
            }
        }
    }

    fn lexicon_words(&self, rng: &mut impl Rng) -> Vec<String> {
        let (lo, hi) = self.cfg.sentence_words;
        let n = rng.random_range(lo..=hi);
        (0..n)
            .map(|_| self.lexicon.choose(rng).expect("nonempty lexicon").clone())
            .collect()
    }

    /// Lexicon words with `insert` placed at a random word boundary.
    fn sentence_with(&self, insert: &[String], rng: &mut impl Rng) -> String {
        let mut ws = self.lexicon_words(rng);
        let at = rng.random_range(0..=ws.len());
        for (j, w) in insert.iter().enumerate() {
            ws.insert(at + j, w.clone());
        }
        ws.join(" ")
    }
}

fn confusable_chars(cfg: &CorpusConfig) -> BTreeSet<char> {
    cfg.acoustic.confusion_groups.iter().flat_map(|g| g.chars()).collect()
}

/// Builds the synthetic entity benchmark plus the pretraining corpus.
///
/// Per speaker: a disjoint set of entity phrases and train/dev/test
/// utterances that each mention exactly one of them, cycling through the
/// speaker's entities. Entity words are excluded from the pretraining text
/// according to `holdout_fraction`.
pub fn make_benchmark(cfg: &CorpusConfig) -> Result<Benchmark> {
    let vocab = Vocab::new(&cfg.alphabet)?;
    let synth = Synthesizer::new(&vocab, &cfg.acoustic)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let letters: Vec<char> = cfg.alphabet.chars().filter(|c| c.is_alphabetic()).collect();
    let confusable = confusable_chars(cfg);
    let plain_letters: Vec<char> = letters.iter().copied().filter(|c| !confusable.contains(c)).collect();
    if letters.is_empty() || plain_letters.is_empty() {
        return Err(Error::Config("alphabet needs letters outside the confusion groups".into()));
    }
    if cfg.name_len.0 == 0 || cfg.name_len.0 > cfg.name_len.1 || cfg.entity_words.0 == 0 {
        return Err(Error::Config("name_len and entity_words must be nonempty ranges".into()));
    }

    let mut world = TextWorld {
        cfg,
        letters,
        plain_letters,
        lexicon: Vec::new(),
    };
    let lex_letters = if cfg.lexicon_avoids_confusable {
        world.plain_letters.clone()
    } else {
        world.letters.clone()
    };
    let mut lex = BTreeSet::new();
    let mut attempts = 0;
    while lex.len() < cfg.lexicon_size {
        lex.insert(world.random_word(&lex_letters, cfg.lexicon_word_len, &mut rng));
        attempts += 1;
        if attempts > 100 * cfg.lexicon_size + 1000 {
            return Err(Error::Config("cannot draw enough distinct lexicon words".into()));
        }
    }
    world.lexicon = lex.into_iter().collect();
    world.lexicon.shuffle(&mut rng);

    // entities: disjoint words across the whole benchmark
    let mut used = BTreeSet::new();
    let draw_phrase = |world: &TextWorld, used: &mut BTreeSet<String>, rng: &mut ChaCha8Rng| {
        let n = rng.random_range(cfg.entity_words.0..=cfg.entity_words.1);
        let ws: Vec<String> = (0..n)
            .map(|_| {
                let w = world.name(used, rng);
                used.insert(w.clone());
                w
            })
            .collect();
        ws
    };
    let mut speaker_entities: Vec<Vec<Vec<String>>> = Vec::new();
    for _ in 0..cfg.n_speakers {
        let ents = (0..cfg.entities_per_speaker)
            .map(|_| draw_phrase(&world, &mut used, &mut rng))
            .collect();
        speaker_entities.push(ents);
    }
    let extra: Vec<Vec<String>> = (0..cfg.extra_distractors)
        .map(|_| draw_phrase(&world, &mut used, &mut rng))
        .collect();

    let entity_words: Vec<String> = speaker_entities.iter().flatten().flatten().cloned().collect();
    let n_leak = ((1.0 - cfg.holdout_fraction.clamp(0.0, 1.0)) * entity_words.len() as f64).round() as usize;
    let leaked: Vec<String> = entity_words.iter().take(n_leak).cloned().collect();
    let banned: BTreeSet<String> = used.clone();

    let utter = |id: String,
                 speaker: Option<usize>,
                 split: Split,
                 text: String,
                 entity: Option<Phrase>,
                 noise_seed: u64|
     -> Result<Utterance> {
        let reference = vocab.tokenize(&text)?;
        let annotated = match &entity {
            Some(e) => {
                let gram: Vec<Vec<TokenId>> = e.text.split(' ').map(|w| vocab.tokenize(w)).collect::<Result<_>>()?;
                let refs: Vec<&[TokenId]> = gram.iter().map(Vec::as_slice).collect();
                mark_occurrences(&reference, &refs, vocab.space(), MarkerPlacement::After)
            }
            None => reference.clone(),
        };
        let frames = synth.synth_frames(&reference, cfg.noise_sigma, noise_seed);
        Ok(Utterance {
            id,
            speaker,
            split,
            text,
            reference,
            annotated,
            frames,
            entity,
        })
    };

    let mut pretrain_sets = [Vec::new(), Vec::new()];
    for (k, (split, count)) in [
        (Split::Pretrain, cfg.pretrain_utterances),
        (Split::PretrainDev, cfg.pretrain_dev_utterances),
    ]
    .into_iter()
    .enumerate()
    {
        for i in 0..count {
            let (lo, hi) = cfg.names_per_utterance;
            let n_names = rng.random_range(lo..=hi);
            let names: Vec<String> = (0..n_names)
                .map(|_| {
                    if !leaked.is_empty() && rng.random_bool(0.1) {
                        leaked.choose(&mut rng).expect("nonempty").clone()
                    } else {
                        world.name(&banned, &mut rng)
                    }
                })
                .collect();
            let mut ws = world.lexicon_words(&mut rng);
            for name in names {
                let at = rng.random_range(0..=ws.len());
                ws.insert(at, name);
            }
            let seed = rng.random();
            let prefix = if split == Split::Pretrain { "pre" } else { "predev" };
            pretrain_sets[k].push(utter(format!("{prefix}-{i:05}"), None, split, ws.join(" "), None, seed)?);
        }
    }
    let [pretrain, pretrain_dev] = pretrain_sets;

    let mut speakers = Vec::new();
    for (s, ents) in speaker_entities.iter().enumerate() {
        let phrases: Vec<Phrase> = ents
            .iter()
            .map(|ws| Phrase::new(&vocab, &ws.join(" "), Role::Positive))
            .collect::<Result<_>>()?;
        let (n_train, n_dev, n_test) = cfg.split;
        let make = |split: Split, n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Utterance>> {
            (0..n)
                .map(|i| {
                    let e = i % phrases.len();
                    let text = world.sentence_with(&ents[e], rng);
                    let tag = match split {
                        Split::Train => "train",
                        Split::Dev => "dev",
                        _ => "test",
                    };
                    let seed = rng.random();
                    utter(format!("spk{s:03}-{tag}-{i:03}"), Some(s), split, text, Some(phrases[e].clone()), seed)
                })
                .collect()
        };
        let train = make(Split::Train, n_train, &mut rng)?;
        let dev = make(Split::Dev, n_dev, &mut rng)?;
        let test = make(Split::Test, n_test, &mut rng)?;
        speakers.push(SpeakerData {
            id: s,
            entities: phrases,
            train,
            dev,
            test,
        });
    }

    let mut distractor_pool: Vec<Phrase> = speakers
        .iter()
        .flat_map(|s| s.entities.iter().cloned())
        .map(|p| p.with_role(Role::Distractor))
        .collect();
    for ws in &extra {
        distractor_pool.push(Phrase::new(&vocab, &ws.join(" "), Role::Distractor)?);
    }

    Ok(Benchmark {
        config: cfg.clone(),
        vocab,
        synth,
        lexicon: world.lexicon,
        speakers,
        distractor_pool,
        pretrain,
        pretrain_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            n_speakers: 3,
            pretrain_utterances: 200,
            pretrain_dev_utterances: 20,
            extra_distractors: 10,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn split_counts_match() {
        let cfg = CorpusConfig {
            n_speakers: 1,
            ..small()
        };
        let b = make_benchmark(&cfg).unwrap();
        let s = &b.speakers[0];
        assert_eq!(s.entities.len(), 5);
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (50, 10, 10));
    }

    fn word_set(u: &Utterance) -> BTreeSet<&str> {
        u.text.split(' ').collect()
    }

    #[test]
    fn entities_held_out_of_pretraining() {
        let b = make_benchmark(&small()).unwrap();
        let entity_words: BTreeSet<&str> = b.all_entities().flat_map(|e| e.text.split(' ')).collect();
        for u in b.pretrain.iter().chain(&b.pretrain_dev) {
            assert!(word_set(u).is_disjoint(&entity_words), "{}", u.text);
        }
    }

    #[test]
    fn leaked_entities_appear_when_holdout_below_one() {
        let cfg = CorpusConfig {
            holdout_fraction: 0.0,
            ..small()
        };
        let b = make_benchmark(&cfg).unwrap();
        let entity_words: BTreeSet<&str> = b.all_entities().flat_map(|e| e.text.split(' ')).collect();
        assert!(b.pretrain.iter().any(|u| !word_set(u).is_disjoint(&entity_words)));
    }

    #[test]
    fn test_utterances_mention_exactly_one_entity() {
        let b = make_benchmark(&small()).unwrap();
        for s in &b.speakers {
            for u in &s.test {
                let hits = s
                    .entities
                    .iter()
                    .filter(|e| format!(" {} ", u.text).contains(&format!(" {} ", e.text)))
                    .count();
                assert_eq!(hits, 1, "{}", u.text);
                assert_eq!(crate::corpus::strip_bias(&u.annotated), u.reference);
                assert_eq!(u.frames.rows(), b.synth.frame_count(&u.reference));
            }
        }
    }

    #[test]
    fn speakers_have_disjoint_entities() {
        let b = make_benchmark(&small()).unwrap();
        let mut seen = BTreeSet::new();
        for e in b.all_entities() {
            for w in e.text.split(' ') {
                assert!(seen.insert(w.to_string()), "{w} reused");
            }
        }
    }

    #[test]
    fn same_seed_same_benchmark() {
        let a = make_benchmark(&small()).unwrap();
        let b = make_benchmark(&small()).unwrap();
        assert_eq!(a.lexicon, b.lexicon);
        assert_eq!(a.pretrain, b.pretrain);
        for (x, y) in a.speakers.iter().zip(&b.speakers) {
            assert_eq!(x.test, y.test);
            assert_eq!(x.entities, y.entities);
        }
    }
}
