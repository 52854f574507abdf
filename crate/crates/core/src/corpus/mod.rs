//! Token inventory, synthetic audio, bias-phrase sampling and the entity
//! benchmark.

mod acoustics;
mod benchmark;
mod context;
pub mod storage;
mod vocab;

pub use acoustics::{AcousticConfig, Synthesizer};
pub use benchmark::{make_benchmark, Benchmark, CorpusConfig, SpeakerData, Split, Utterance};
pub use context::{
    build_context_set, mark_occurrences, sample_bias, BiasSample, ContextSet, MarkerPlacement, Phrase, Role,
};
pub use vocab::{
    strip_bias, words, TokenId, Vocab, BIAS, BIAS_SYMBOL, BLANK, DEFAULT_ALPHABET, PAD, SOS,
};
