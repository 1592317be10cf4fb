//! Episodic training, evaluation and checkpoints.

mod checkpoint;
mod config;
mod model;
mod optim;

use rand::SeedableRng;
use rayon::prelude::*;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DecodeMode, EncoderMode, TrainingConfig, Variant};
pub use model::{EpisodeGraph, Model, Transitions, VANILLA_TRANSITIONS};
pub use optim::AdamW;

use crate::encoder::PrecomputedEncoder;
use crate::episodes::{sample_episode, Corpus, Episode};
use crate::error::{Error, Result};
use crate::labelspace::{micro_f1, Prf};
use crate::numeric::{Gradients, Tape};
use crate::ChaRng;

/// Stream offset for evaluation episodes, far from the training streams.
const EVAL_STREAM_BASE: u64 = 1 << 32;

/// Losses recorded during training and the rng state at the end.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub losses: Vec<f64>,
    pub rng: ChaRng,
}

pub fn train(
    model: &mut Model,
    corpus: &Corpus,
    external: Option<&PrecomputedEncoder>,
) -> Result<TrainOutcome> {
    train_with(model, corpus, external, |_, _, _| {})
}

/// Runs `model.config.iterations` episodes of AdamW training. `observe` is
/// called after each backward pass with the iteration, loss and gradients.
pub fn train_with<F>(
    model: &mut Model,
    corpus: &Corpus,
    external: Option<&PrecomputedEncoder>,
    mut observe: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, f64, &Gradients),
{
    let config = model.config.clone();
    config.validate()?;
    model.check()?;
    if config.iterations > 0 {
        corpus.check_feasible(config.way, config.shot, config.query)?;
    }
    let mut rng = model::stream(config.seed, model::STREAM_TRAIN);
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut losses = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let episode = sample_episode(corpus, config.way, config.shot, config.query, &mut rng)?;
        let encoder = model::select_encoder(&model.toy, external, config.hidden_dim)?;
        let mut tape = Tape::new();
        let loss = model.episode_loss(&mut tape, &episode, encoder, &mut rng)?;
        let value = tape.value(loss).item().expect("scalar loss");
        if !value.is_finite() {
            return Err(Error::Diverged {
                iteration,
                loss: value,
            });
        }
        let grads = tape.backward(loss)?;
        observe(iteration, value, &grads);
        opt.step(&mut model.params, &grads);
        losses.push(value);
        if iteration % 100 == 0 {
            log::debug!("iteration {iteration}: loss {value:.6}");
        }
    }
    Ok(TrainOutcome { losses, rng })
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Per-episode scores and their aggregate.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub way: usize,
    pub shot: usize,
    pub episodes: Vec<Prf>,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

impl EvalReport {
    fn from_episodes(way: usize, shot: usize, episodes: Vec<Prf>) -> Self {
        let pick = |f: fn(&Prf) -> f64| Summary::of(&episodes.iter().map(f).collect::<Vec<_>>());
        Self {
            way,
            shot,
            precision: pick(|p| p.precision),
            recall: pick(|p| p.recall),
            f1: pick(|p| p.f1),
            episodes,
        }
    }
}

/// Episode sampling parameters for an evaluation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalPlan {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub episodes: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
}

impl EvalPlan {
    pub fn from_config(config: &TrainingConfig) -> Self {
        Self {
            way: config.way,
            shot: config.shot,
            query: config.query,
            episodes: config.eval_episodes,
            seed: config.seed,
            threads: 0,
        }
    }
}

/// Decodes episodes with the model and scores them.
pub fn evaluate(
    model: &Model,
    corpus: &Corpus,
    external: Option<&PrecomputedEncoder>,
    plan: &EvalPlan,
) -> Result<EvalReport> {
    model.check()?;
    model.encoder(external)?;
    evaluate_with(corpus, plan, |episode, rng| {
        let encoder = model.encoder(external)?;
        model.decode(episode, encoder, rng)
    })
}

/// Scores `plan.episodes` episodes decoded by `decode`. Episode `e` is
/// sampled from its own rng stream, so results do not depend on the
/// number of threads.
pub fn evaluate_with<F>(corpus: &Corpus, plan: &EvalPlan, decode: F) -> Result<EvalReport>
where
    F: Fn(&Episode, &mut ChaRng) -> Result<Vec<Vec<usize>>> + Sync,
{
    if plan.episodes == 0 {
        return Err(Error::InvalidConfig("at least one evaluation episode is required".into()));
    }
    corpus.check_feasible(plan.way, plan.shot, plan.query)?;
    let run_one = |e: usize| -> Result<Prf> {
        let mut rng = ChaRng::seed_from_u64(plan.seed);
        rng.set_stream(EVAL_STREAM_BASE + e as u64);
        let episode = sample_episode(corpus, plan.way, plan.shot, plan.query, &mut rng)?;
        let predicted = decode(&episode, &mut rng)?;
        if predicted.len() != episode.query.len() {
            return Err(Error::CorpusMismatch {
                predicted: predicted.len(),
                gold: episode.query.len(),
            });
        }
        let mut pred_spans = Vec::with_capacity(predicted.len());
        let mut gold_spans = Vec::with_capacity(predicted.len());
        for (p, q) in predicted.iter().zip(&episode.query) {
            if p.len() != q.sentence.len() {
                return Err(Error::shape(
                    "decode",
                    format!("{} labels for {} tokens", p.len(), q.sentence.len()),
                ));
            }
            pred_spans.push(crate::labelspace::labels_to_spans(p, &episode.labels));
            gold_spans.push(q.sentence.spans(&episode.labels));
        }
        micro_f1(&pred_spans, &gold_spans)
    };
    let run_all = || -> Result<Vec<Prf>> { (0..plan.episodes).into_par_iter().map(run_one).collect() };
    let scores = if plan.threads == 0 {
        run_all()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(plan.threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run_all)?
    };
    Ok(EvalReport::from_episodes(plan.way, plan.shot, scores))
}
