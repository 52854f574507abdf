//! Contextual biasing for transducer speech recognition with a neural
//! associative memory, plus the boost-trie shallow-fusion baseline and the
//! evaluation harness around both.

pub mod error;
pub mod eval;
pub mod fst_biaser;
pub mod config;
pub mod corpus;
pub mod asr_core;
pub mod context_encoder;
pub mod layers;
pub mod model;
pub mod nam_memory;
pub mod numerics;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};
