//! Run configuration: every hyperparameter of a reproduction run, loaded
//! from TOML with documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::eval::{ContextPolicy, EntityMatch, EvalSpec, PersonalizeConfig};
use crate::model::{fingerprint_of, DecodeOptions, ModelConfig};
use crate::nam_memory::BiasVariant;
use crate::train::{BiasTrainConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Distractors added to each test utterance's entity.
    pub k: usize,
    pub context_sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Fusion weight of the fixed-weight boost-trie baseline.
    pub lambda: f64,
    pub entity_match: EntityMatch,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 4,
            context_sizes: vec![10, 20, 30, 40, 50],
            lambdas: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            lambda: 2.0,
            entity_match: EntityMatch::Substring,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Relative paths resolve against the output root.
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: "data".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: BiasVariant,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub bias_train: BiasTrainConfig,
    pub decode: DecodeOptions,
    pub eval: EvalConfig,
    pub personalize: PersonalizeConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            variant: BiasVariant::Nam,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            bias_train: BiasTrainConfig::default(),
            decode: DecodeOptions::default(),
            eval: EvalConfig::default(),
            personalize: PersonalizeConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML. Unknown keys are rejected; `corpus.alphabet` must be
    /// given explicitly because every artifact depends on it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let has_alphabet = raw
            .get("corpus")
            .and_then(|c| c.as_table())
            .is_some_and(|c| c.contains_key("alphabet"));
        if !has_alphabet {
            return Err(Error::Config("missing field `corpus.alphabet`".into()));
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain.validate("pretrain")?;
        self.bias_train.train.validate("bias_train")?;
        if !(0.0..=1.0).contains(&self.bias_train.p) {
            return Err(Error::Config("bias_train.p must lie in [0, 1]".into()));
        }
        if self.eval.lambdas.iter().any(|l| !l.is_finite()) || !self.eval.lambda.is_finite() {
            return Err(Error::Config("eval: fusion weights must be finite".into()));
        }
        Ok(())
    }

    /// Stable hash of the full resolved configuration.
    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }

    /// Hash of the corpus settings with the run seed applied, stored in
    /// benchmark manifests.
    pub fn corpus_fingerprint(&self) -> String {
        fingerprint_of(&self.corpus_config())
    }

    /// Corpus settings with the run seed applied.
    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            seed: self.seed,
            ..self.corpus.clone()
        }
    }

    pub fn eval_spec(&self, name: &str, policy: ContextPolicy, lambda: Option<f64>) -> EvalSpec {
        EvalSpec {
            name: name.to_string(),
            policy,
            lambda,
            seed: self.seed,
            decode: self.decode.clone(),
            entity_match: self.eval.entity_match,
            fingerprint: self.fingerprint(),
        }
    }
}
