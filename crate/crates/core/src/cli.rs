//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::encoder::{PrecomputedEncoder, Vocabulary};
use crate::episodes::{
    generate_synthetic, load_label_vocab, save_label_vocab, Corpus, Episode, EpisodeSentence,
    SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::labelspace::{labels_to_spans, LabelSet, TaggedSentence, TriggerSpan, OUTSIDE};
use crate::trainer::{
    evaluate, train, Checkpoint, DecodeMode, EncoderMode, EvalPlan, EvalReport, Model,
    TrainingConfig, Variant,
};
use crate::ChaRng;

#[derive(Parser, Debug)]
#[command(name = "pacrf", version, about = "Few-shot event detection with a prototypical amortized CRF")]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Shared {
    /// Random seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key=value` configuration file applied before flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for evaluation; 0 picks automatically.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic train and test corpora.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on sampled test episodes.
    Eval(EvalArgs),
    /// Tag sentences given a labelled support file.
    Predict(PredictArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Number of training event types.
    #[arg(long, visible_alias = "types")]
    pub train_types: Option<usize>,
    #[arg(long)]
    pub test_types: Option<usize>,
    #[arg(long)]
    pub lexicon_size: Option<usize>,
    #[arg(long)]
    pub p_multi: Option<f64>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub sentences_per_type: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub query: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub encoder: Option<EncoderMode>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub mix_weight: Option<f64>,
    #[arg(long)]
    pub decode: Option<DecodeMode>,
    #[arg(long)]
    pub constrained: Option<bool>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training corpus (JSON Lines).
    #[arg(long)]
    pub train: PathBuf,
    /// Event type list; defaults to the corpus path with a `.labels` extension.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Further corpora whose words join the toy encoder vocabulary.
    #[arg(long = "vocab-corpus")]
    pub vocab_corpora: Vec<PathBuf>,
    /// Precomputed embeddings for the training corpus.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub way: Option<usize>,
    #[arg(long)]
    pub shot: Option<usize>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Trained checkpoint; not needed with `--ablate`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Test corpus (JSON Lines).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Precomputed embeddings for the test corpus.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Number of evaluation episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Episode ways to evaluate; defaults to the trained way. With
    /// `--ablate` the first entry is also the training way.
    #[arg(long = "way", value_delimiter = ',')]
    pub ways: Vec<usize>,
    /// Episode shots to evaluate, as for `--way`.
    #[arg(long = "shot", value_delimiter = ',')]
    pub shots: Vec<usize>,
    /// `all` for the full model and its ablations, or a comma list of
    /// variants. Each is trained from `--train` with a shared initialisation.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
    /// Training corpus for `--ablate`.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub train_embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled support sentences (JSON Lines).
    #[arg(long)]
    pub support: PathBuf,
    /// Event types of the support file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Sentences to tag: JSON Lines objects with a `tokens` array.
    #[arg(long)]
    pub input: PathBuf,
    /// Precomputed embeddings; support sentences take ids `0..S`, inputs
    /// continue from `S`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub decode: Option<DecodeMode>,
    #[arg(long)]
    pub constrained: Option<bool>,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::InvalidConfig(_) => 2,
            _ => 1,
        };
        Self { code, error }
    }
}

fn usage(error: Error) -> Failure {
    Failure { code: 2, error }
}

/// Summary of one command invocation, written as `manifest.json`.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub corpus_digests: BTreeMap<String, String>,
    pub checkpoint_digest: Option<String>,
    pub metrics: serde_json::Value,
    pub wall_clock_seconds: f64,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

pub fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let started = Instant::now();
    fs::create_dir_all(&cli.shared.out_dir).map_err(Error::from)?;
    let mut manifest = match &cli.command {
        Command::Gen(a) => cmd_gen(&cli.shared, a)?,
        Command::Train(a) => cmd_train(&cli.shared, a)?,
        Command::Eval(a) => cmd_eval(&cli.shared, a)?,
        Command::Predict(a) => cmd_predict(&cli.shared, a)?,
    };
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::from).map_err(Error::from)?;
    fs::write(cli.shared.out_dir.join("manifest.json"), text + "\n").map_err(Error::from)?;
    Ok(())
}

fn read_config_file(shared: &Shared) -> Result<Option<String>> {
    match &shared.config {
        Some(p) => Ok(Some(fs::read_to_string(p)?)),
        None => Ok(None),
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn labels_path(corpus: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| corpus.with_extension("labels"))
}

fn load_corpus(path: &Path, labels: &Option<PathBuf>) -> Result<Corpus> {
    let labels = load_label_vocab(labels_path(path, labels))?;
    Corpus::load(path, labels)
}

fn kv_map(config: &TrainingConfig) -> BTreeMap<String, String> {
    config
        .to_kv()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
}

fn set_synthetic(config: &mut SyntheticConfig, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for {key}")))
    }
    match key {
        "vocab_size" => config.vocab_size = num(key, value)?,
        "train_types" | "types" => config.train_types = num(key, value)?,
        "test_types" => config.test_types = num(key, value)?,
        "lexicon_size" => config.lexicon_size = num(key, value)?,
        "p_multi" => config.p_multi = num(key, value)?,
        "overlap" => config.overlap = num(key, value)?,
        "min_len" => config.min_len = num(key, value)?,
        "max_len" => config.max_len = num(key, value)?,
        "sentences_per_type" => config.sentences_per_type = num(key, value)?,
        "seed" => config.seed = num(key, value)?,
        _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
    }
    Ok(())
}

fn cmd_gen(shared: &Shared, a: &GenArgs) -> std::result::Result<RunManifest, Failure> {
    let mut config = SyntheticConfig::default();
    if let Some(text) = read_config_file(shared)? {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig("expected key=value".into()))
                .and_then(|(k, v)| set_synthetic(&mut config, k.trim(), v.trim()));
            parsed.map_err(|e| {
                usage(Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })?;
        }
    }
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field { config.$field = v; }
        )*};
    }
    apply!(vocab_size, train_types, test_types, lexicon_size, p_multi, overlap, min_len, max_len, sentences_per_type);
    if let Some(seed) = shared.seed {
        config.seed = seed;
    }
    config.validate().map_err(usage)?;
    let corpora = generate_synthetic(&config)?;
    let out = &shared.out_dir;
    let mut digests = BTreeMap::new();
    for (name, corpus) in [("train", &corpora.train), ("test", &corpora.test)] {
        let path = out.join(format!("{name}.jsonl"));
        corpus.save(&path)?;
        save_label_vocab(corpus.labels(), out.join(format!("{name}.labels")))?;
        digests.insert(name.to_owned(), file_digest(&path)?);
    }
    let mut resolved = BTreeMap::new();
    let value = serde_json::to_value(&config).map_err(std::io::Error::from).map_err(Error::from)?;
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            resolved.insert(k, v.to_string());
        }
    }
    Ok(RunManifest {
        command: "gen".into(),
        config: resolved,
        seed: config.seed,
        corpus_digests: digests,
        checkpoint_digest: None,
        metrics: json!({
            "train_sentences": corpora.train.len(),
            "test_sentences": corpora.test.len(),
        }),
        wall_clock_seconds: 0.0,
    })
}

/// Defaults, then the config file, then explicit flags.
fn resolve_config(
    shared: &Shared,
    way: Option<usize>,
    shot: Option<usize>,
    flags: &ModelFlags,
) -> std::result::Result<TrainingConfig, Failure> {
    let mut config = TrainingConfig::default();
    if let Some(text) = read_config_file(shared)? {
        config.apply_kv(&text).map_err(usage)?;
    }
    if let Some(v) = way {
        config.way = v;
    }
    if let Some(v) = shot {
        config.shot = v;
    }
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = flags.$field { config.$field = v; }
        )*};
    }
    apply!(
        query,
        iterations,
        eval_episodes,
        samples,
        learning_rate,
        weight_decay,
        variant,
        encoder,
        hidden_dim,
        mix_weight,
        decode,
        constrained
    );
    if let Some(seed) = shared.seed {
        config.seed = seed;
    }
    config.validate().map_err(usage)?;
    Ok(config)
}

fn load_embeddings(path: &Option<PathBuf>, config: &TrainingConfig) -> Result<Option<PrecomputedEncoder>> {
    match (config.encoder, path) {
        (EncoderMode::Precomputed, Some(p)) => Ok(Some(PrecomputedEncoder::load(p, config.hidden_dim)?)),
        (EncoderMode::Precomputed, None) => Err(Error::InvalidConfig(
            "--embeddings is required with the precomputed encoder".into(),
        )),
        (EncoderMode::Toy, _) => Ok(None),
    }
}

fn toy_vocab(config: &TrainingConfig, corpora: &[&Corpus]) -> Option<Vocabulary> {
    (config.encoder == EncoderMode::Toy)
        .then(|| Vocabulary::build(corpora.iter().flat_map(|c| c.words())))
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut text = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(text, "{i},{l}");
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_train(shared: &Shared, a: &TrainArgs) -> std::result::Result<RunManifest, Failure> {
    let config = resolve_config(shared, a.way, a.shot, &a.model)?;
    let corpus = load_corpus(&a.train, &a.labels)?;
    let mut digests = BTreeMap::new();
    digests.insert("train".to_owned(), file_digest(&a.train)?);
    let mut extra = Vec::new();
    for (i, p) in a.vocab_corpora.iter().enumerate() {
        extra.push(load_corpus(p, &None)?);
        digests.insert(format!("vocab_{i}"), file_digest(p)?);
    }
    let embeddings = load_embeddings(&a.embeddings, &config)?;
    let mut all: Vec<&Corpus> = vec![&corpus];
    all.extend(extra.iter());
    let mut model = Model::init(&config, toy_vocab(&config, &all))?;
    log::info!(
        "training {} for {} iterations ({} parameters)",
        config.variant,
        config.iterations,
        model.params.num_values()
    );
    let outcome = train(&mut model, &corpus, embeddings.as_ref())?;
    let out = &shared.out_dir;
    write_loss_csv(&out.join("loss.csv"), &outcome.losses)?;
    let ck_path = out.join("checkpoint.bin");
    Checkpoint::new(model, outcome.rng).save(&ck_path)?;
    let n = outcome.losses.len();
    let tail = &outcome.losses[n.saturating_sub(50)..];
    let final_loss = if tail.is_empty() {
        serde_json::Value::Null
    } else {
        json!(tail.iter().sum::<f64>() / tail.len() as f64)
    };
    Ok(RunManifest {
        command: "train".into(),
        config: kv_map(&config),
        seed: config.seed,
        corpus_digests: digests,
        checkpoint_digest: Some(file_digest(&ck_path)?),
        metrics: json!({ "iterations": n, "final_mean_loss": final_loss }),
        wall_clock_seconds: 0.0,
    })
}

/// One evaluated row of the metrics table.
struct Row {
    variant: Variant,
    report: EvalReport,
}

fn metrics_csv(rows: &[Row]) -> String {
    let mut s = String::from(
        "variant,way,shot,episodes,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std\n",
    );
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            m.way,
            m.shot,
            m.episodes.len(),
            m.precision.mean,
            m.precision.std,
            m.recall.mean,
            m.recall.std,
            m.f1.mean,
            m.f1.std
        );
    }
    s
}

fn metrics_table(rows: &[Row]) -> String {
    let mut s = format!(
        "{:<16} {:>4} {:>5} {:>8}  {:>15}  {:>15}  {:>15}\n",
        "variant", "way", "shot", "episodes", "precision", "recall", "f1"
    );
    let cell = |m: crate::trainer::Summary| format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std);
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            s,
            "{:<16} {:>4} {:>5} {:>8}  {:>15}  {:>15}  {:>15}",
            r.variant.name(),
            m.way,
            m.shot,
            m.episodes.len(),
            cell(m.precision),
            cell(m.recall),
            cell(m.f1)
        );
    }
    s
}

fn cmd_eval(shared: &Shared, a: &EvalArgs) -> std::result::Result<RunManifest, Failure> {
    let mut digests = BTreeMap::new();
    let test = load_corpus(&a.test, &a.labels)?;
    digests.insert("test".to_owned(), file_digest(&a.test)?);

    // models to evaluate, each with its training-side configuration
    let mut models: Vec<Model> = Vec::new();
    let mut checkpoint_digest = None;
    let config;
    if a.ablate.is_empty() {
        let path = a.checkpoint.as_ref().ok_or_else(|| {
            usage(Error::InvalidConfig("--checkpoint is required unless --ablate is given".into()))
        })?;
        let ck = Checkpoint::load(path)?;
        checkpoint_digest = Some(file_digest(path)?);
        if let Some(d) = a.model.hidden_dim {
            ck.expect_hidden_dim(d)?;
        }
        // evaluation may only change decoding and episode settings
        let mut base = ck.model.config.clone();
        let text = read_config_file(shared)?;
        if let Some(text) = &text {
            base.apply_kv(text).map_err(usage)?;
        }
        let f = &a.model;
        if let Some(v) = f.query {
            base.query = v;
        }
        if let Some(v) = f.eval_episodes {
            base.eval_episodes = v;
        }
        if let Some(v) = f.samples {
            base.samples = v;
        }
        if let Some(v) = f.decode {
            base.decode = v;
        }
        if let Some(v) = f.constrained {
            base.constrained = v;
        }
        if let Some(seed) = shared.seed {
            base.seed = seed;
        }
        base.validate().map_err(usage)?;
        let trained = &ck.model.config;
        if (base.variant, base.encoder, base.hidden_dim, base.mix_weight)
            != (trained.variant, trained.encoder, trained.hidden_dim, trained.mix_weight)
        {
            return Err(usage(Error::InvalidConfig(
                "variant, encoder, hidden_dim and mix_weight are fixed by the checkpoint".into(),
            )));
        }
        let mut model = ck.model;
        model.config = base.clone();
        models.push(model);
        config = base;
    } else {
        let variants: Vec<Variant> = if a.ablate.iter().any(|s| s == "all") {
            Variant::ABLATIONS.to_vec()
        } else {
            a.ablate
                .iter()
                .map(|s| s.parse())
                .collect::<Result<_>>()
                .map_err(usage)?
        };
        let train_path = a.train.as_ref().ok_or_else(|| {
            usage(Error::InvalidConfig("--ablate needs a --train corpus".into()))
        })?;
        let base = resolve_config(shared, a.ways.first().copied(), a.shots.first().copied(), &a.model)?;
        let train_corpus = load_corpus(train_path, &a.train_labels)?;
        digests.insert("train".to_owned(), file_digest(train_path)?);
        let train_embeddings = load_embeddings(&a.train_embeddings, &base)?;
        let vocab = toy_vocab(&base, &[&train_corpus, &test]);
        for v in variants {
            let config = TrainingConfig {
                variant: v,
                ..base.clone()
            };
            let mut model = Model::init(&config, vocab.clone())?;
            log::info!("training {v} for {} iterations", config.iterations);
            train(&mut model, &train_corpus, train_embeddings.as_ref())?;
            models.push(model);
        }
        config = base;
    }
    if let Some(n) = a.episodes {
        if n == 0 {
            return Err(usage(Error::InvalidConfig("--episodes must be positive".into())));
        }
    }
    let embeddings = load_embeddings(&a.embeddings, &config)?;
    let ways = if a.ways.is_empty() { vec![config.way] } else { a.ways.clone() };
    let shots = if a.shots.is_empty() { vec![config.shot] } else { a.shots.clone() };

    let mut rows = Vec::new();
    for model in &models {
        for &way in &ways {
            for &shot in &shots {
                let plan = EvalPlan {
                    way,
                    shot,
                    query: model.config.query,
                    episodes: a.episodes.unwrap_or(model.config.eval_episodes),
                    seed: model.config.seed,
                    threads: shared.threads,
                };
                let report = evaluate(model, &test, embeddings.as_ref(), &plan)?;
                log::info!(
                    "{} {way}-way {shot}-shot: f1 {:.4}",
                    model.config.variant,
                    report.f1.mean
                );
                rows.push(Row {
                    variant: model.config.variant,
                    report,
                });
            }
        }
    }
    let out = &shared.out_dir;
    let table = metrics_table(&rows);
    print!("{table}");
    fs::write(out.join("metrics.txt"), &table).map_err(Error::from)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&rows)).map_err(Error::from)?;
    let metrics: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            json!({
                "variant": r.variant.name(),
                "way": r.report.way,
                "shot": r.report.shot,
                "episodes": r.report.episodes.len(),
                "precision": [r.report.precision.mean, r.report.precision.std],
                "recall": [r.report.recall.mean, r.report.recall.std],
                "f1": [r.report.f1.mean, r.report.f1.std],
            })
        })
        .collect();
    Ok(RunManifest {
        command: "eval".into(),
        config: kv_map(&config),
        seed: config.seed,
        corpus_digests: digests,
        checkpoint_digest,
        metrics: json!(metrics),
        wall_clock_seconds: 0.0,
    })
}

#[derive(Deserialize)]
struct InputLine {
    tokens: Vec<String>,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct Prediction {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    pub spans: Vec<TriggerSpan>,
}

fn read_inputs(path: &Path) -> Result<Vec<Vec<String>>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: InputLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if parsed.tokens.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty sentence".into(),
            });
        }
        out.push(parsed.tokens);
    }
    Ok(out)
}

/// An episode holding every support sentence and unlabelled queries.
fn prediction_episode(labels: LabelSet, support: &Corpus, inputs: &[Vec<String>]) -> Episode {
    let way = labels.num_types();
    let support_items: Vec<EpisodeSentence> = support
        .sentences()
        .iter()
        .enumerate()
        .map(|(i, s)| EpisodeSentence {
            corpus_index: i,
            drawn_for: 0,
            sentence: s.clone(),
        })
        .collect();
    let query = inputs
        .iter()
        .enumerate()
        .map(|(i, tokens)| EpisodeSentence {
            corpus_index: support.len() + i,
            drawn_for: 0,
            sentence: TaggedSentence {
                tokens: tokens.clone(),
                labels: vec![OUTSIDE; tokens.len()],
            },
        })
        .collect();
    Episode {
        way,
        shot: support.len(),
        labels,
        support: support_items,
        query,
    }
}

fn cmd_predict(shared: &Shared, a: &PredictArgs) -> std::result::Result<RunManifest, Failure> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut model = ck.model;
    if let Some(text) = read_config_file(shared)? {
        model.config.apply_kv(&text).map_err(usage)?;
    }
    if let Some(v) = a.decode {
        model.config.decode = v;
    }
    if let Some(v) = a.constrained {
        model.config.constrained = v;
    }
    if let Some(seed) = shared.seed {
        model.config.seed = seed;
    }
    model.config.validate().map_err(usage)?;
    model.check()?;
    let support = load_corpus(&a.support, &a.labels)?;
    let inputs = read_inputs(&a.input)?;
    let mut digests = BTreeMap::new();
    digests.insert("support".to_owned(), file_digest(&a.support)?);
    digests.insert("input".to_owned(), file_digest(&a.input)?);

    let labels = support.labels().clone();
    let mut counts = vec![0usize; labels.len()];
    for s in support.sentences() {
        for &l in &s.labels {
            counts[l] += 1;
        }
    }
    let missing: Vec<&str> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(l, _)| labels.labels()[l].as_str())
        .collect();
    if !missing.is_empty() {
        eprintln!(
            "warning: no support tokens for {}; their prototypes are zero",
            missing.join(", ")
        );
    }

    let mut lines = String::new();
    let mut spans_total = 0;
    if !inputs.is_empty() {
        let embeddings = load_embeddings(&a.embeddings, &model.config)?;
        let episode = prediction_episode(labels.clone(), &support, &inputs);
        let encoder = model.encoder(embeddings.as_ref())?;
        let mut rng = <ChaRng as rand::SeedableRng>::seed_from_u64(model.config.seed);
        let decoded = model.decode(&episode, encoder, &mut rng)?;
        for (tokens, path) in inputs.iter().zip(decoded) {
            let spans = labels_to_spans(&path, &labels);
            spans_total += spans.len();
            let p = Prediction {
                tokens: tokens.clone(),
                labels: path.iter().map(|&l| labels.labels()[l].clone()).collect(),
                spans,
            };
            lines.push_str(&serde_json::to_string(&p).map_err(std::io::Error::from).map_err(Error::from)?);
            lines.push('\n');
        }
    }
    fs::write(shared.out_dir.join("predictions.jsonl"), lines).map_err(Error::from)?;
    Ok(RunManifest {
        command: "predict".into(),
        config: kv_map(&model.config),
        seed: model.config.seed,
        corpus_digests: digests,
        checkpoint_digest: Some(file_digest(&a.checkpoint)?),
        metrics: json!({ "sentences": inputs.len(), "spans": spans_total, "zero_prototype_labels": missing }),
        wall_clock_seconds: 0.0,
    })
}
