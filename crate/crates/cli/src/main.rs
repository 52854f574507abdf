//! `nam`: build the synthetic benchmark, train base and biased transducers,
//! and write evaluation reports.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use nam_core::config::RunConfig;
use nam_core::corpus::storage::{read_benchmark, read_manifest, write_benchmark};
use nam_core::corpus::Benchmark;
use nam_core::eval::{
    evaluate, parse_policy, personalize, sweep_context, sweep_lambda, write_csv, write_json, ContextPolicy,
    MetricsReport, PersonalizationRunLog,
};
use nam_core::model::{architecture_fingerprint, load_checkpoint, save_checkpoint, Model};
use nam_core::nam_memory::BiasVariant;
use nam_core::pipeline::{build_benchmark, test_set, ABLATION};
use nam_core::train::{pretrain, train_bias, StopStatus, TrainState};
use nam_core::Error;

#[derive(Parser)]
#[command(name = "nam", version, about = "Contextual biasing experiments for transducer ASR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// nam, nam-noshift, nam-single, clas or none.
    #[arg(long, global = true)]
    variant: Option<BiasVariant>,
    /// paired, empty or B=<n>.
    #[arg(long, global = true)]
    context: Option<String>,
    /// Boost-trie fusion weight.
    #[arg(long, global = true, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Output root for data, checkpoints and reports.
    #[arg(long, global = true, env = "NAM_OUT", default_value = "runs")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate the synthetic benchmark.
    MakeData,
    /// Train the base transducer without a biasing module.
    Pretrain,
    /// Attach a biasing module to the base and train jointly.
    TrainBias,
    /// Evaluate one model under one context policy.
    Eval,
    /// Evaluate over the configured context sizes.
    SweepContext,
    /// Evaluate the base model with the boost trie over the configured weights.
    SweepLambda,
    /// Joint-network fine-tuning rounds per speaker.
    Personalize,
    /// Compare every biasing variant against the base.
    Ablate,
}

struct Run {
    cfg: RunConfig,
    root: PathBuf,
    force: bool,
    variant: BiasVariant,
    policy: ContextPolicy,
    lambda: Option<f64>,
}

#[derive(Serialize)]
struct ReportFile<'a, T: Serialize> {
    fingerprint: String,
    config: &'a RunConfig,
    reports: T,
}

impl Run {
    fn from_cli(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(v) = cli.variant {
            cfg.variant = v;
        }
        cfg.validate()?;
        let policy = match &cli.context {
            Some(s) => parse_policy(s, cfg.eval.k)?,
            None => ContextPolicy::Paired { k: cfg.eval.k },
        };
        if cli.lambda.is_some_and(|l| !l.is_finite()) {
            bail!("--lambda must be finite");
        }
        Ok(Self {
            variant: cfg.variant,
            root: cli.out.clone(),
            force: cli.force,
            policy,
            lambda: cli.lambda,
            cfg,
        })
    }

    fn data_dir(&self) -> PathBuf {
        self.root.join(&self.cfg.paths.data)
    }

    fn ckpt_dir(&self) -> PathBuf {
        self.root.join(&self.cfg.paths.checkpoints)
    }

    fn reports_dir(&self) -> Result<PathBuf> {
        let d = self.root.join(&self.cfg.paths.reports);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn stem(variant: BiasVariant) -> &'static str {
        match variant {
            BiasVariant::None => "base",
            v => v.as_str(),
        }
    }

    fn ckpt(&self, variant: BiasVariant) -> PathBuf {
        self.ckpt_dir().join(format!("{}.ckpt", Self::stem(variant)))
    }

    fn state_path(&self, variant: BiasVariant) -> PathBuf {
        self.ckpt_dir().join(format!("{}.state.json", Self::stem(variant)))
    }

    fn bench(&self) -> Result<Benchmark> {
        let dir = self.data_dir();
        let manifest = read_manifest(&dir).with_context(|| format!("no benchmark in {}; run make-data", dir.display()))?;
        let want = self.cfg.corpus_fingerprint();
        if manifest.fingerprint != want {
            return Err(Error::FingerprintMismatch {
                checkpoint: manifest.fingerprint,
                config: want,
            }
            .into());
        }
        Ok(read_benchmark(&dir)?.0)
    }

    fn model(&self, variant: BiasVariant, bench: &Benchmark) -> Result<Model> {
        let path = self.ckpt(variant);
        if !path.exists() {
            let verb = if variant == BiasVariant::None { "pretrain" } else { "train-bias" };
            bail!("missing checkpoint {}; run {verb} --variant {variant}", path.display());
        }
        let (model, header) = load_checkpoint(&path)?;
        let want = architecture_fingerprint(&self.cfg.model, &bench.vocab, bench.synth.frame_dim());
        if header.fingerprint != want {
            return Err(Error::FingerprintMismatch {
                checkpoint: header.fingerprint,
                config: want,
            }
            .into());
        }
        if header.variant != variant {
            bail!("{} holds variant {}, expected {variant}", path.display(), header.variant);
        }
        Ok(model)
    }

    fn name(&self, variant: BiasVariant, lambda: Option<f64>) -> String {
        match (variant, lambda) {
            (BiasVariant::None, Some(_)) => "fst".into(),
            (v, Some(_)) => format!("{v}+fst"),
            (v, None) => v.as_str().into(),
        }
    }

    fn write_reports<T: Serialize>(&self, stem: &str, rows: &[MetricsReport], json: T) -> Result<()> {
        let dir = self.reports_dir()?;
        let csv = dir.join(format!("{stem}.csv"));
        write_csv(&csv, rows)?;
        let file = ReportFile {
            fingerprint: self.cfg.fingerprint(),
            config: &self.cfg,
            reports: json,
        };
        write_json(&dir.join(format!("{stem}.json")), &file)?;
        for r in rows {
            println!(
                "{:<14} {:<7} B={:<3} lambda={:<5} round={:<2} WER {:6.2}  P {:6.2}  R {:6.2}  F1 {:6.2}",
                r.model,
                r.policy,
                r.context_size,
                r.lambda.map_or("-".into(), |l| l.to_string()),
                r.round.map_or("-".into(), |x| x.to_string()),
                r.wer,
                r.precision,
                r.recall,
                r.f1
            );
        }
        eprintln!("wrote {}", csv.display());
        Ok(())
    }
}

fn policy_tag(p: ContextPolicy) -> String {
    p.to_string().replace('=', "")
}

fn lambda_tag(l: Option<f64>) -> String {
    l.map_or(String::new(), |l| format!("-l{l}"))
}

fn make_data(run: &Run) -> Result<()> {
    let dir = run.data_dir();
    if dir.exists() && fs::read_dir(&dir)?.next().is_some() {
        if !run.force {
            bail!("{} is not empty (use --force to overwrite)", dir.display());
        }
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let bench = build_benchmark(&run.cfg)?;
    let m = write_benchmark(&dir, &bench, &run.cfg.corpus_fingerprint())?;
    eprintln!(
        "wrote {} speakers, {} pretraining utterances to {} (fingerprint {})",
        m.speakers.len(),
        bench.pretrain.len(),
        dir.display(),
        m.fingerprint
    );
    Ok(())
}

/// Trains one epoch at a time, saving model and state after each so an
/// interrupted run resumes where it stopped.
fn staged_training(
    run: &Run,
    variant: BiasVariant,
    start: impl FnOnce() -> Result<Model>,
    mut epoch: impl FnMut(&mut Model, &mut TrainState) -> nam_core::Result<()>,
    seed: u64,
    cfg: &nam_core::train::TrainConfig,
) -> Result<()> {
    let ckpt = run.ckpt(variant);
    let state_path = run.state_path(variant);
    fs::create_dir_all(run.ckpt_dir())?;
    let resume = if ckpt.exists() && state_path.exists() && !run.force {
        let state = TrainState::load(&state_path)?;
        if state.status != StopStatus::Running {
            bail!("{} already trained (use --force to retrain)", ckpt.display());
        }
        let (model, _) = load_checkpoint(&ckpt)?;
        eprintln!("resuming {} after epoch {}", ckpt.display(), state.epochs_done);
        Some((model, state))
    } else {
        None
    };
    let (mut model, mut state) = match resume {
        Some(x) => x,
        None => {
            let m = start()?;
            let s = TrainState::new(&m, cfg, seed);
            (m, s)
        }
    };
    let fp = run.cfg.fingerprint();
    while state.status == StopStatus::Running {
        epoch(&mut model, &mut state)?;
        if let Some(e) = state.log.last() {
            eprintln!("{variant} epoch {}: train {:.4} dev {:.4}", e.epoch, e.train_loss, e.dev_loss);
        }
        save_checkpoint(&ckpt, &model, &fp)?;
        state.save(&state_path)?;
    }
    state.write_curve(&run.ckpt_dir().join(format!("{}.curve.csv", Run::stem(variant))), &fp)?;
    eprintln!("{:?} after {} epochs; wrote {}", state.status, state.epochs_done, ckpt.display());
    Ok(())
}

fn cmd_pretrain(run: &Run) -> Result<()> {
    let bench = run.bench()?;
    let cfg = &run.cfg;
    staged_training(
        run,
        BiasVariant::None,
        || Ok(Model::new_base(&cfg.model, &bench.vocab, bench.synth.frame_dim(), cfg.seed)?),
        |m, s| pretrain(m, s, &cfg.pretrain, &bench.pretrain, &bench.pretrain_dev, Some(1)),
        cfg.seed,
        &cfg.pretrain,
    )
}

fn cmd_train_bias(run: &Run) -> Result<()> {
    if run.variant == BiasVariant::None {
        bail!("variant none has no biasing module to train");
    }
    let bench = run.bench()?;
    let cfg = &run.cfg;
    let seed = cfg.seed.wrapping_add(1);
    staged_training(
        run,
        run.variant,
        || Ok(run.model(BiasVariant::None, &bench)?.with_bias(run.variant, seed)?),
        |m, s| train_bias(m, s, &cfg.bias_train, &bench.pretrain, &bench.pretrain_dev, Some(1)),
        seed,
        &cfg.bias_train.train,
    )
}

fn cmd_eval(run: &Run) -> Result<()> {
    let bench = run.bench()?;
    let test = test_set(&bench);
    let pool = &bench.distractor_pool;
    let mut variants = vec![run.variant];
    if run.variant != BiasVariant::None {
        variants.push(BiasVariant::None);
    }
    let mut rows = Vec::new();
    for v in variants {
        let model = run.model(v, &bench)?;
        let spec = run.cfg.eval_spec(&run.name(v, run.lambda), run.policy, run.lambda);
        rows.push(evaluate(&model, &test, pool, &spec)?);
    }
    let stem = format!("eval-{}-{}{}", run.variant, policy_tag(run.policy), lambda_tag(run.lambda));
    run.write_reports(&stem, &rows, &rows)
}

fn cmd_sweep_context(run: &Run) -> Result<()> {
    let bench = run.bench()?;
    let model = run.model(run.variant, &bench)?;
    let spec = run.cfg.eval_spec(&run.name(run.variant, run.lambda), run.policy, run.lambda);
    let rows = sweep_context(&model, &test_set(&bench), &bench.distractor_pool, &spec, &run.cfg.eval.context_sizes)?;
    let stem = format!("sweep-context-{}{}", run.variant, lambda_tag(run.lambda));
    run.write_reports(&stem, &rows, &rows)
}

fn cmd_sweep_lambda(run: &Run) -> Result<()> {
    let bench = run.bench()?;
    let model = run.model(BiasVariant::None, &bench)?;
    let spec = run.cfg.eval_spec("fst", run.policy, None);
    let rows = sweep_lambda(&model, &test_set(&bench), &bench.distractor_pool, &spec, &run.cfg.eval.lambdas)?;
    let stem = format!("sweep-lambda-{}", policy_tag(run.policy));
    run.write_reports(&stem, &rows, &rows)
}

#[derive(Serialize)]
struct PersonalizeOut<'a> {
    pooled: &'a [MetricsReport],
    speakers: &'a [PersonalizationRunLog],
}

fn cmd_personalize(run: &Run) -> Result<()> {
    let bench = run.bench()?;
    let model = run.model(run.variant, &bench)?;
    let spec = run.cfg.eval_spec(&run.name(run.variant, run.lambda), run.policy, run.lambda);
    let mut logs = Vec::new();
    for s in &bench.speakers {
        let (log, _) = personalize(&model, s, &bench.distractor_pool, &run.cfg.personalize, &spec)?;
        if log.diverged {
            eprintln!("speaker {}: dev loss diverged", s.id);
        }
        logs.push(log);
    }
    let rounds = logs.first().map_or(0, |l| l.rounds.len());
    let pooled: Vec<MetricsReport> = (0..rounds)
        .map(|r| {
            let records = logs.iter().flat_map(|l| l.rounds[r].report.utterances.iter().cloned()).collect();
            let mut rep = MetricsReport::from_records(&spec, records);
            rep.round = Some(r);
            rep
        })
        .collect();
    let stem = format!("personalize-{}{}", run.variant, lambda_tag(run.lambda));
    run.write_reports(
        &stem,
        &pooled,
        PersonalizeOut {
            pooled: &pooled,
            speakers: &logs,
        },
    )
}

fn cmd_ablate(run: &Run) -> Result<()> {
    let bench = run.bench()?;
    let missing: Vec<String> = ABLATION
        .iter()
        .chain([&BiasVariant::None])
        .filter(|v| !run.ckpt(**v).exists())
        .map(|v| v.to_string())
        .collect();
    if !missing.is_empty() {
        bail!("missing checkpoints for {}; train them first", missing.join(", "));
    }
    let test = test_set(&bench);
    let mut rows = Vec::new();
    for v in ABLATION.into_iter().chain([BiasVariant::None]) {
        let model = run.model(v, &bench)?;
        let spec = run.cfg.eval_spec(v.as_str(), run.policy, None);
        rows.push(evaluate(&model, &test, &bench.distractor_pool, &spec)?);
    }
    let stem = format!("ablate-{}", policy_tag(run.policy));
    run.write_reports(&stem, &rows, &rows)
}

fn dispatch(command: Command, run: &Run) -> Result<()> {
    match command {
        Command::MakeData => make_data(run),
        Command::Pretrain => cmd_pretrain(run),
        Command::TrainBias => cmd_train_bias(run),
        Command::Eval => cmd_eval(run),
        Command::SweepContext => cmd_sweep_context(run),
        Command::SweepLambda => cmd_sweep_lambda(run),
        Command::Personalize => cmd_personalize(run),
        Command::Ablate => cmd_ablate(run),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let run = Run::from_cli(&cli)?;
    dispatch(cli.command, &run)
}
