//! Python bindings: configuration, benchmark generation, training,
//! transcription with a biasing context, and the scoring utilities.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use nam_core::config::RunConfig as CoreConfig;
use nam_core::corpus::storage::{read_benchmark, write_benchmark};
use nam_core::corpus::{Benchmark as CoreBenchmark, ContextSet, Phrase, Role, Vocab as CoreVocab, DEFAULT_ALPHABET};
use nam_core::eval::{evaluate as core_evaluate, parse_policy, split_words, word_edits, MetricsReport};
use nam_core::fst_biaser::BiasTrie as CoreTrie;
use nam_core::model::{load_checkpoint, save_checkpoint, Model as CoreModel};
use nam_core::nam_memory::BiasVariant;
use nam_core::numerics::Tensor;
use nam_core::pipeline::{build_benchmark, test_set};
use nam_core::train::{pretrain, train_bias, EpochLog, TrainState};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Vocab", module = "nam", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Vocab(CoreVocab);

#[pymethods]
impl Vocab {
    #[new]
    #[pyo3(signature = (alphabet = DEFAULT_ALPHABET))]
    fn new(alphabet: &str) -> PyResult<Self> {
        CoreVocab::new(alphabet).map(Self).map_err(err)
    }

    fn tokenize(&self, text: &str) -> PyResult<Vec<usize>> {
        self.0.tokenize(text).map_err(err)
    }

    fn detokenize(&self, ids: Vec<usize>) -> PyResult<String> {
        self.0.detokenize(&ids).map_err(err)
    }

    #[getter]
    fn size(&self) -> usize {
        self.0.size()
    }

    #[getter]
    fn alphabet(&self) -> String {
        self.0.alphabet()
    }
}

#[pyclass(name = "RunConfig", module = "nam", skip_from_py_object)]
#[derive(Clone)]
struct RunConfig(CoreConfig);

#[pymethods]
impl RunConfig {
    #[new]
    fn new() -> Self {
        Self(CoreConfig::default())
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CoreConfig::from_toml(text).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreConfig::load(&path).map(Self).map_err(err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.0.variant.as_str()
    }

    #[setter]
    fn set_variant(&mut self, v: &str) -> PyResult<()> {
        self.0.variant = v.parse().map_err(err)?;
        Ok(())
    }
}

#[pyclass(name = "Benchmark", module = "nam", frozen)]
struct Benchmark(CoreBenchmark);

#[pymethods]
impl Benchmark {
    #[staticmethod]
    fn generate(config: &RunConfig) -> PyResult<Self> {
        build_benchmark(&config.0).map(Self).map_err(err)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        read_benchmark(&path).map(|(b, _)| Self(b)).map_err(err)
    }

    fn write(&self, path: PathBuf, fingerprint: &str) -> PyResult<()> {
        std::fs::create_dir_all(&path).map_err(err)?;
        write_benchmark(&path, &self.0, fingerprint).map(|_| ()).map_err(err)
    }

    #[getter]
    fn vocab(&self) -> Vocab {
        Vocab(self.0.vocab.clone())
    }

    #[getter]
    fn n_speakers(&self) -> usize {
        self.0.speakers.len()
    }

    #[getter]
    fn frame_dim(&self) -> usize {
        self.0.synth.frame_dim()
    }

    /// Entity phrases per speaker.
    fn entities(&self) -> Vec<Vec<String>> {
        self.0
            .speakers
            .iter()
            .map(|s| s.entities.iter().map(|e| e.text.clone()).collect())
            .collect()
    }

    /// `(text, entity, frames)` for every test utterance.
    fn test_utterances(&self) -> Vec<(String, Option<String>, Vec<Vec<f64>>)> {
        test_set(&self.0)
            .into_iter()
            .map(|u| {
                let frames = (0..u.frames.rows()).map(|r| u.frames.row(r).to_vec()).collect();
                (u.text, u.entity.map(|e| e.text), frames)
            })
            .collect()
    }

    /// Synthesizes frames for arbitrary text.
    #[pyo3(signature = (text, noise = 0.0, seed = 0))]
    fn synthesize(&self, text: &str, noise: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let ids = self.0.vocab.tokenize(text).map_err(err)?;
        let t = self.0.synth.synth_frames(&ids, noise, seed);
        Ok((0..t.rows()).map(|r| t.row(r).to_vec()).collect())
    }
}

fn curve(log: &[EpochLog]) -> Vec<(usize, f64, f64)> {
    log.iter().map(|e| (e.epoch, e.train_loss, e.dev_loss)).collect()
}

fn report_dict(r: &MetricsReport) -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("wer", r.wer),
        ("precision", r.precision),
        ("recall", r.recall),
        ("f1", r.f1),
        ("context_size", r.context_size as f64),
    ])
}

#[pyclass(name = "Model", module = "nam", skip_from_py_object)]
#[derive(Clone)]
struct Model(CoreModel);

#[pymethods]
impl Model {
    /// Untrained base transducer for the benchmark's vocabulary.
    #[staticmethod]
    #[pyo3(signature = (config, benchmark, seed = 1))]
    fn base(config: &RunConfig, benchmark: &Benchmark, seed: u64) -> PyResult<Self> {
        CoreModel::new_base(&config.0.model, &benchmark.0.vocab, benchmark.0.synth.frame_dim(), seed)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_checkpoint(&path).map(|(m, _)| Self(m)).map_err(err)
    }

    #[pyo3(signature = (path, run_fingerprint = ""))]
    fn save(&self, path: PathBuf, run_fingerprint: &str) -> PyResult<()> {
        save_checkpoint(&path, &self.0, run_fingerprint).map_err(err)
    }

    /// Copy with a freshly initialized biasing module.
    #[pyo3(signature = (variant, seed = 2))]
    fn with_bias(&self, variant: &str, seed: u64) -> PyResult<Self> {
        let v: BiasVariant = variant.parse().map_err(err)?;
        self.0.with_bias(v, seed).map(Self).map_err(err)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.0.variant.as_str()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    /// Pretrains in place; returns `(epoch, train_loss, dev_loss)` rows.
    fn pretrain(&mut self, config: &RunConfig, benchmark: &Benchmark) -> PyResult<Vec<(usize, f64, f64)>> {
        let c = &config.0;
        let b = &benchmark.0;
        let mut st = TrainState::new(&self.0, &c.pretrain, c.seed);
        pretrain(&mut self.0, &mut st, &c.pretrain, &b.pretrain, &b.pretrain_dev, None).map_err(err)?;
        Ok(curve(&st.log))
    }

    /// Trains the biasing module jointly, in place.
    fn train_bias(&mut self, config: &RunConfig, benchmark: &Benchmark) -> PyResult<Vec<(usize, f64, f64)>> {
        let c = &config.0;
        let b = &benchmark.0;
        let mut st = TrainState::new(&self.0, &c.bias_train.train, c.seed.wrapping_add(1));
        train_bias(&mut self.0, &mut st, &c.bias_train, &b.pretrain, &b.pretrain_dev, None).map_err(err)?;
        Ok(curve(&st.log))
    }

    /// Decodes frames with the given biasing phrases; `lambda` adds
    /// boost-trie shallow fusion over the same phrases.
    #[pyo3(signature = (frames, context = Vec::new(), lambda = None, beam = 4))]
    fn transcribe(&self, frames: Vec<Vec<f64>>, context: Vec<String>, lambda: Option<f64>, beam: usize) -> PyResult<String> {
        let dim = self.0.frame_dim;
        if frames.iter().any(|r| r.len() != dim) {
            return Err(PyValueError::new_err(format!("every frame must have {dim} values")));
        }
        let t = Tensor::from_rows(&frames);
        let phrases = context
            .iter()
            .map(|p| Phrase::new(&self.0.vocab, p, Role::Distractor))
            .collect::<nam_core::Result<Vec<_>>>()
            .map_err(err)?;
        let ctx = ContextSet::new(phrases);
        let trie = lambda.map(|l| CoreTrie::from_context(&ctx, l));
        let opts = nam_core::model::DecodeOptions {
            beam,
            ..Default::default()
        };
        let hyp = self.0.decode(&t, &ctx, &opts, trie.as_ref()).map_err(err)?;
        self.0.vocab.detokenize(&nam_core::corpus::strip_bias(&hyp.tokens)).map_err(err)
    }

    /// Scores the benchmark test set under a context policy.
    #[pyo3(signature = (config, benchmark, context = "paired", lambda = None))]
    fn evaluate(
        &self,
        config: &RunConfig,
        benchmark: &Benchmark,
        context: &str,
        lambda: Option<f64>,
    ) -> PyResult<BTreeMap<&'static str, f64>> {
        let policy = parse_policy(context, config.0.eval.k).map_err(err)?;
        let spec = config.0.eval_spec(self.0.variant.as_str(), policy, lambda);
        let r = core_evaluate(&self.0, &test_set(&benchmark.0), &benchmark.0.distractor_pool, &spec).map_err(err)?;
        Ok(report_dict(&r))
    }
}

#[pyclass(name = "BiasTrie", module = "nam", frozen)]
struct BiasTrie {
    trie: CoreTrie,
    vocab: CoreVocab,
}

#[pymethods]
impl BiasTrie {
    #[new]
    #[pyo3(signature = (phrases, weight, alphabet = DEFAULT_ALPHABET))]
    fn new(phrases: Vec<String>, weight: f64, alphabet: &str) -> PyResult<Self> {
        let vocab = CoreVocab::new(alphabet).map_err(err)?;
        let ids = phrases
            .iter()
            .map(|p| vocab.tokenize(p))
            .collect::<nam_core::Result<Vec<_>>>()
            .map_err(err)?;
        Ok(Self {
            trie: CoreTrie::new(ids, weight),
            vocab,
        })
    }

    /// Total boost accumulated while emitting `text`.
    fn score(&self, text: &str) -> PyResult<f64> {
        Ok(self.trie.fused_score(&self.vocab.tokenize(text).map_err(err)?))
    }

    fn __len__(&self) -> usize {
        self.trie.len()
    }
}

/// `(wer_percent, substitutions, deletions, insertions)` over words.
#[pyfunction]
fn word_error_rate(reference: &str, hypothesis: &str) -> (f64, usize, usize, usize) {
    let c = word_edits(&split_words(reference), &split_words(hypothesis));
    (c.rate(), c.substitutions, c.deletions, c.insertions)
}

/// Transducer negative log-likelihood of `labels` given a lattice of
/// log-probabilities indexed `[t][u][v]`.
#[pyfunction]
fn rnnt_loss(lattice: Vec<Vec<Vec<f64>>>, labels: Vec<usize>) -> PyResult<f64> {
    let frames = lattice.len();
    let rows: Vec<Vec<f64>> = lattice.into_iter().flatten().collect();
    let t = Tensor::from_rows(&rows);
    nam_core::asr_core::rnnt_loss(&t, frames, &labels).map(|l| l.nll).map_err(err)
}

#[pymodule]
fn nam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocab>()?;
    m.add_class::<RunConfig>()?;
    m.add_class::<Benchmark>()?;
    m.add_class::<Model>()?;
    m.add_class::<BiasTrie>()?;
    m.add_function(wrap_pyfunction!(word_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(rnnt_loss, m)?)?;
    Ok(())
}
