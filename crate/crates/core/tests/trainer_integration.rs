use std::collections::BTreeSet;

use pacrf::crf::viterbi;
use pacrf::encoder::Vocabulary;
use pacrf::episodes::{generate_synthetic, sample_episode, SyntheticConfig, SyntheticCorpora};
use pacrf::numeric::{Tape, Tensor};
use pacrf::trainer::{
    evaluate, evaluate_with, train, train_with, Checkpoint, EvalPlan, Model, TrainingConfig,
    Transitions, Variant,
};
use pacrf::transition::FixedNoise;
use pacrf::{ChaRng, Error};
use rand::SeedableRng;

fn corpora(p_multi: f64) -> SyntheticCorpora {
    generate_synthetic(&SyntheticConfig {
        train_types: 8,
        test_types: 4,
        sentences_per_type: 20,
        p_multi,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

fn config(variant: Variant, iterations: usize) -> TrainingConfig {
    TrainingConfig {
        way: 4,
        shot: 3,
        query: 3,
        iterations,
        eval_episodes: 20,
        samples: 3,
        hidden_dim: 12,
        variant,
        ..Default::default()
    }
}

fn model(c: &SyntheticCorpora, config: &TrainingConfig) -> Model {
    let vocab = Vocabulary::build(c.train.words().chain(c.test.words()));
    Model::init(config, Some(vocab)).unwrap()
}

#[test]
fn training_reduces_loss() {
    let c = corpora(0.8);
    let cfg = config(Variant::PaCrf, 500);
    let mut m = model(&c, &cfg);
    let losses = train(&mut m, &c.train, None).unwrap().losses;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (head, tail) = (mean(&losses[..50]), mean(&losses[450..]));
    assert!(tail < head, "initial {head}, final {tail}");
}

#[test]
fn no_parameter_is_dead() {
    let c = corpora(0.8);
    let cfg = config(Variant::PaCrf, 100);
    let mut m = model(&c, &cfg);
    let mut touched = BTreeSet::new();
    train_with(&mut m, &c.train, None, |_, _, grads| {
        for (name, g) in grads {
            if g.values().iter().any(|&v| v != 0.0) {
                touched.insert(name.clone());
            }
        }
    })
    .unwrap();
    let all: BTreeSet<String> = m.params.names().map(str::to_owned).collect();
    assert_eq!(touched, all);
}

#[test]
fn point_estimate_ignores_noise() {
    let c = corpora(1.0);
    let cfg = config(Variant::PointEstimate, 0);
    let m = model(&c, &cfg);
    let mut rng = ChaRng::seed_from_u64(4);
    let episode = sample_episode(&c.train, 4, 3, 3, &mut rng).unwrap();
    let encoder = m.encoder(None).unwrap();
    let loss = |noise: f64| {
        let mut tape = Tape::new();
        let l = m.episode_loss(&mut tape, &episode, encoder, &mut FixedNoise(noise)).unwrap();
        tape.value(l).item().unwrap()
    };
    assert_eq!(loss(0.0).to_bits(), loss(3.0).to_bits());

    // the full model does respond to the noise
    let full = model(&c, &config(Variant::PaCrf, 0));
    let enc = full.encoder(None).unwrap();
    let mut values = Vec::new();
    for noise in [0.0, 3.0] {
        let mut tape = Tape::new();
        let l = full.episode_loss(&mut tape, &episode, enc, &mut FixedNoise(noise)).unwrap();
        values.push(tape.value(l).item().unwrap());
    }
    assert_ne!(values[0], values[1]);
}

#[test]
fn crf_and_proto_dot_share_emissions() {
    let c = corpora(0.8);
    let a = model(&c, &config(Variant::PaCrf, 0));
    let b = model(&c, &config(Variant::ProtoDot, 0));
    let mut rng = ChaRng::seed_from_u64(5);
    let episode = sample_episode(&c.test, 4, 3, 3, &mut rng).unwrap();
    let emissions = |m: &Model| {
        let mut tape = Tape::new();
        let g = m.forward(&mut tape, &episode, m.encoder(None).unwrap()).unwrap();
        g.emissions.iter().map(|&e| tape.value(e).clone()).collect::<Vec<_>>()
    };
    assert_eq!(emissions(&a), emissions(&b));
}

#[test]
fn vanilla_transitions_are_episode_independent() {
    let c = corpora(0.8);
    let m = model(&c, &config(Variant::VanillaCrf, 0));
    let mut rng = ChaRng::seed_from_u64(6);
    let mut seen = Vec::new();
    for _ in 0..3 {
        let episode = sample_episode(&c.train, 4, 3, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let g = m.forward(&mut tape, &episode, m.encoder(None).unwrap()).unwrap();
        let Transitions::Fixed(t) = g.transitions else {
            panic!("vanilla-crf must use a fixed matrix");
        };
        assert_eq!(tape.value(t).shape(), [9, 9]);
        seen.push(tape.value(t).clone());
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn checkpoint_round_trip_preserves_metrics() {
    let c = corpora(0.8);
    let cfg = config(Variant::PaCrf, 30);
    let mut m = model(&c, &cfg);
    let outcome = train(&mut m, &c.train, None).unwrap();
    let plan = EvalPlan::from_config(&cfg);
    let before = evaluate(&m, &c.test, None, &plan).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    Checkpoint::new(m, outcome.rng.clone()).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let after = evaluate(&loaded.model, &c.test, None, &plan).unwrap();
    assert_eq!(before.episodes, after.episodes);
    assert_eq!(loaded.rng, outcome.rng);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::CorruptCheckpoint(_))));
}

#[test]
fn gold_emissions_decode_perfectly() {
    let c = corpora(0.8);
    let cfg = config(Variant::PaCrf, 0);
    let m = model(&c, &cfg);
    let report = evaluate_with(&c.test, &EvalPlan::from_config(&cfg), |episode, _| {
        let mut tape = Tape::new();
        let g = m.forward(&mut tape, episode, m.encoder(None).unwrap())?;
        let Transitions::Distribution(dist) = g.transitions else {
            unreachable!()
        };
        let mu = tape.value(dist.mu).clone();
        episode
            .query
            .iter()
            .map(|q| {
                let labels = &q.sentence.labels;
                let mut e = Tensor::zeros(labels.len(), episode.labels.len());
                for (t, &y) in labels.iter().enumerate() {
                    e.set(t, y, 1e9);
                }
                viterbi(&e, &mu)
            })
            .collect()
    })
    .unwrap();
    assert_eq!(report.f1.mean, 1.0);
    assert_eq!(report.f1.std, 0.0);
}

#[test]
fn divergence_names_the_iteration() {
    let c = corpora(0.8);
    let mut m = model(&c, &config(Variant::PaCrf, 5));
    m.params.get_mut("transition.b_mu").unwrap().values_mut()[0] = f64::NAN;
    assert!(matches!(
        train(&mut m, &c.train, None),
        Err(Error::Diverged { iteration: 0, .. })
    ));
}

#[test]
fn infeasible_episodes_are_reported() {
    let c = corpora(0.8);
    let mut cfg = config(Variant::PaCrf, 5);
    cfg.way = 9;
    let mut m = model(&c, &cfg);
    assert!(matches!(train(&mut m, &c.train, None), Err(Error::EpisodeInfeasible(_))));
    cfg.way = 4;
    cfg.shot = 30;
    let m = model(&c, &cfg);
    assert!(matches!(
        evaluate(&m, &c.test, None, &EvalPlan::from_config(&cfg)),
        Err(Error::EpisodeInfeasible(_))
    ));
}
