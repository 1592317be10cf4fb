use rand::{Rng, SeedableRng};

use super::config::{DecodeMode, EncoderMode, TrainingConfig, Variant};
use crate::crf::{self, argmax_rows, constrain_bio, marginals, viterbi};
use crate::emission::{compute_prototypes, emission_scores, PrototypeSet};
use crate::encoder::{Encoder, PrecomputedEncoder, ToyEncoder, Vocabulary};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape, Tensor, Var};
use crate::transition::{
    self, approximate_distribution, interact, sample_transitions, NoiseSource,
    TransitionDistribution,
};
use crate::ChaRng;

pub const VANILLA_TRANSITIONS: &str = "vanilla.transitions";

/// Random stream ids derived from the run seed. Encoder initialisation has
/// its own stream so every variant trained from one seed starts from the
/// same encoder.
pub(crate) const STREAM_ENCODER_INIT: u64 = 0;
pub(crate) const STREAM_HEAD_INIT: u64 = 1;
pub(crate) const STREAM_TRAIN: u64 = 2;

pub(crate) fn stream(seed: u64, id: u64) -> ChaRng {
    let mut rng = ChaRng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Encoder and scoring parameters for one variant.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainingConfig,
    pub toy: Option<ToyEncoder>,
    pub params: ParamStore,
}

/// Everything computed for one episode on a tape.
pub struct EpisodeGraph {
    pub prototypes: PrototypeSet,
    /// Query emission nodes in episode order.
    pub emissions: Vec<Var>,
    /// Transition distribution (amortized variants) or fixed matrix.
    pub transitions: Transitions,
}

pub enum Transitions {
    None,
    Fixed(Var),
    Distribution(TransitionDistribution),
}

impl Model {
    /// Fresh parameters. `vocab` is required for the toy encoder and
    /// ignored for precomputed embeddings.
    pub fn init(config: &TrainingConfig, vocab: Option<Vocabulary>) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let toy = match config.encoder {
            EncoderMode::Toy => {
                let vocab = vocab.ok_or_else(|| {
                    Error::InvalidConfig("the toy encoder needs a vocabulary".into())
                })?;
                let enc = ToyEncoder::new(vocab, config.hidden_dim, config.mix_weight)?;
                enc.init_params(&mut params, &mut stream(config.seed, STREAM_ENCODER_INIT));
                Some(enc)
            }
            EncoderMode::Precomputed => None,
        };
        let mut rng = stream(config.seed, STREAM_HEAD_INIT);
        let d = config.hidden_dim;
        let v = config.variant;
        if v.amortized() {
            let mut all = ParamStore::new();
            transition::init_params(&mut all, d, &mut rng);
            for (name, t) in all.iter() {
                let wanted = match name {
                    transition::SIGMA2_W | transition::SIGMA2_B => v.samples_transitions(),
                    n if transition::INTERACTION_PARAMS.contains(&n) => v.uses_interaction(),
                    _ => true,
                };
                if wanted {
                    params.insert(name, t.clone());
                }
            }
        }
        if v == Variant::VanillaCrf {
            let l = 2 * config.way + 1;
            params.init_zeros(VANILLA_TRANSITIONS, l, l);
        }
        Ok(Self {
            config: config.clone(),
            toy,
            params,
        })
    }

    /// Verifies that stored parameters have the shapes this configuration
    /// implies.
    pub fn check(&self) -> Result<()> {
        let d = self.config.hidden_dim;
        if let Some(toy) = &self.toy {
            toy.check_params(&self.params)?;
        }
        let mut expected: Vec<(&str, [usize; 2])> = Vec::new();
        let v = self.config.variant;
        if v.uses_interaction() {
            for (w, b) in [
                (transition::ATTN_WQ, transition::ATTN_BQ),
                (transition::ATTN_WK, transition::ATTN_BK),
                (transition::ATTN_WV, transition::ATTN_BV),
            ] {
                expected.push((w, [d, d]));
                expected.push((b, [1, d]));
            }
        }
        if v.amortized() {
            expected.push((transition::MU_W, [2 * d, 1]));
            expected.push((transition::MU_B, [1, 1]));
        }
        if v.samples_transitions() {
            expected.push((transition::SIGMA2_W, [2 * d, 1]));
            expected.push((transition::SIGMA2_B, [1, 1]));
        }
        if v == Variant::VanillaCrf {
            let l = 2 * self.config.way + 1;
            expected.push((VANILLA_TRANSITIONS, [l, l]));
        }
        for (name, shape) in expected {
            let t = self.params.require(name)?;
            if t.shape() != shape {
                return Err(Error::shape(
                    "model",
                    format!("{name} is {:?}, expected {:?}", t.shape(), shape),
                ));
            }
        }
        Ok(())
    }

    /// The toy encoder, or `external` for precomputed embeddings.
    pub fn encoder<'a>(
        &'a self,
        external: Option<&'a PrecomputedEncoder>,
    ) -> Result<&'a dyn Encoder> {
        select_encoder(&self.toy, external, self.config.hidden_dim)
    }

    /// Builds prototypes, query emissions and transitions for an episode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        episode: &Episode,
        encoder: &dyn Encoder,
    ) -> Result<EpisodeGraph> {
        let labels = episode.labels.len();
        let mut support = Vec::with_capacity(episode.support.len());
        for s in &episode.support {
            let h = encoder.encode(tape, &self.params, s.corpus_index, &s.sentence.tokens)?;
            support.push((h, s.sentence.labels.as_slice()));
        }
        let prototypes = compute_prototypes(tape, &support, labels)?;
        let similarity = self.config.variant.similarity();
        let mut emissions = Vec::with_capacity(episode.query.len());
        for q in &episode.query {
            let h = encoder.encode(tape, &self.params, q.corpus_index, &q.sentence.tokens)?;
            emissions.push(emission_scores(tape, h, prototypes.values, similarity)?);
        }
        let transitions = self.transitions(tape, &prototypes, labels)?;
        Ok(EpisodeGraph {
            prototypes,
            emissions,
            transitions,
        })
    }

    fn transitions(
        &self,
        tape: &mut Tape,
        prototypes: &PrototypeSet,
        labels: usize,
    ) -> Result<Transitions> {
        let v = self.config.variant;
        if v.amortized() {
            let source = if v.uses_interaction() {
                interact(tape, &self.params, prototypes.values)?.output
            } else {
                prototypes.values
            };
            let dist =
                approximate_distribution(tape, &self.params, source, v.samples_transitions())?;
            return Ok(Transitions::Distribution(dist));
        }
        if v == Variant::VanillaCrf {
            let t = tape.param(&self.params, VANILLA_TRANSITIONS)?;
            if tape.value(t).rows() != labels {
                return Err(Error::shape(
                    "vanilla-crf",
                    format!(
                        "transition matrix is for {} labels, episode has {labels}",
                        tape.value(t).rows()
                    ),
                ));
            }
            return Ok(Transitions::Fixed(t));
        }
        Ok(Transitions::None)
    }

    /// Training loss for one episode, averaged over query sentences.
    pub fn episode_loss<N: NoiseSource + ?Sized>(
        &self,
        tape: &mut Tape,
        episode: &Episode,
        encoder: &dyn Encoder,
        noise: &mut N,
    ) -> Result<Var> {
        let graph = self.forward(tape, episode, encoder)?;
        let queries: Vec<(Var, &[usize])> = graph
            .emissions
            .iter()
            .zip(&episode.query)
            .map(|(&e, q)| (e, q.sentence.labels.as_slice()))
            .collect();
        match graph.transitions {
            Transitions::None => crf::token_softmax_nll(tape, &queries),
            Transitions::Fixed(t) => crf::nll(tape, &queries, t),
            Transitions::Distribution(dist) => {
                let samples = if dist.sigma2.is_some() {
                    self.config.samples
                } else {
                    1
                };
                crf::mc_nll(tape, &queries, &dist, samples, noise)
            }
        }
    }

    /// Decoded label sequences for every query sentence of the episode.
    /// `rng` is consumed only by sampled-marginal decoding.
    pub fn decode<R: Rng>(
        &self,
        episode: &Episode,
        encoder: &dyn Encoder,
        rng: &mut R,
    ) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::new();
        let graph = self.forward(&mut tape, episode, encoder)?;
        let labels = episode.labels.len();
        let mut sampled = Vec::new();
        let fixed: Tensor = match &graph.transitions {
            Transitions::None => Tensor::zeros(labels, labels),
            Transitions::Fixed(t) => tape.value(*t).clone(),
            Transitions::Distribution(dist) => {
                if dist.sigma2.is_some() && self.config.decode == DecodeMode::SampledMarginals {
                    for _ in 0..self.config.samples {
                        let t = sample_transitions(&mut tape, dist, rng)?;
                        sampled.push(tape.value(t).clone());
                    }
                }
                tape.value(dist.mu).clone()
            }
        };
        let mut out = Vec::with_capacity(graph.emissions.len());
        for &e in &graph.emissions {
            let e = tape.value(e);
            let path = if self.config.variant.emission_only() {
                argmax_rows(e)
            } else if !sampled.is_empty() {
                let mut avg = Tensor::zeros(e.rows(), e.cols());
                for t in &sampled {
                    let (e, t) = self.maybe_constrain(e, t, episode);
                    avg.add_assign(&marginals(&e, &t)?);
                }
                argmax_rows(&avg)
            } else {
                let (e, t) = self.maybe_constrain(e, &fixed, episode);
                viterbi(&e, &t)?
            };
            out.push(path);
        }
        Ok(out)
    }

    fn maybe_constrain(&self, e: &Tensor, t: &Tensor, episode: &Episode) -> (Tensor, Tensor) {
        if self.config.constrained {
            constrain_bio(e, t, &episode.labels)
        } else {
            (e.clone(), t.clone())
        }
    }
}

pub(crate) fn select_encoder<'a>(
    toy: &'a Option<ToyEncoder>,
    external: Option<&'a PrecomputedEncoder>,
    hidden_dim: usize,
) -> Result<&'a dyn Encoder> {
    match (toy, external) {
        (Some(toy), _) => Ok(toy),
        (None, Some(pre)) => {
            if pre.hidden_dim() != hidden_dim {
                return Err(Error::shape(
                    "encoder",
                    format!(
                        "embeddings have d_h {}, model expects {hidden_dim}",
                        pre.hidden_dim()
                    ),
                ));
            }
            Ok(pre)
        }
        (None, None) => Err(Error::InvalidConfig(
            "precomputed encoder selected but no embeddings supplied".into(),
        )),
    }
}
