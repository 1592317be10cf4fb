use std::collections::HashSet;

use pacrf::encoder::{self, Encoder, PrecomputedEncoder, ToyEncoder, Vocabulary};
use pacrf::episodes::{generate_synthetic, Corpus, SyntheticConfig, DEFAULT_MAX_LEN};
use pacrf::labelspace::{labels_to_spans, micro_f1, spans_to_labels, LabelSet, Tag, TriggerSpan};
use pacrf::numeric::{grad_check, ParamStore, Tape, Tensor};
use pacrf::{ChaRng, Error};
use proptest::prelude::*;
use rand::SeedableRng;

fn label_set() -> LabelSet {
    LabelSet::new(&["Attack", "Meet", "Die"]).unwrap()
}

/// Non-overlapping spans over a sentence of `n` tokens.
fn spans_strategy() -> impl Strategy<Value = (usize, Vec<TriggerSpan>)> {
    (1usize..20).prop_flat_map(|n| {
        prop::collection::vec((0..n, 1usize..4, 0usize..3), 0..6).prop_map(move |raw| {
            let mut taken = vec![false; n];
            let mut spans = Vec::new();
            for (start, width, t) in raw {
                let end = (start + width).min(n);
                if taken[start..end].iter().any(|&x| x) {
                    continue;
                }
                taken[start..end].iter_mut().for_each(|x| *x = true);
                spans.push(TriggerSpan {
                    start,
                    end,
                    event_type: ["Attack", "Meet", "Die"][t].to_owned(),
                });
            }
            spans.sort();
            (n, spans)
        })
    })
}

proptest! {
    #[test]
    fn spans_round_trip_through_labels((n, spans) in spans_strategy()) {
        let set = label_set();
        let labels = spans_to_labels(n, &spans, &set).unwrap();
        prop_assert_eq!(labels_to_spans(&labels, &set), spans.clone());
        let again = spans_to_labels(n, &labels_to_spans(&labels, &set), &set).unwrap();
        prop_assert_eq!(again, labels);
    }

    #[test]
    fn any_label_sequence_yields_disjoint_spans(labels in prop::collection::vec(0usize..7, 0..20)) {
        let set = label_set();
        let spans = labels_to_spans(&labels, &set);
        let mut covered = 0;
        for w in spans.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        for s in &spans {
            prop_assert!(s.start < s.end && s.end <= labels.len());
            prop_assert!(!matches!(set.tag(labels[s.start]), Tag::Outside));
            covered += s.end - s.start;
        }
        let non_o = labels.iter().filter(|&&l| l != 0).count();
        prop_assert_eq!(covered, non_o);
    }

    #[test]
    fn f1_is_bounded_and_perfect_on_gold(sents in prop::collection::vec(spans_strategy(), 1..5)) {
        let gold: Vec<Vec<TriggerSpan>> = sents.iter().map(|(_, s)| s.clone()).collect();
        let prf = micro_f1(&gold, &gold).unwrap();
        let total: usize = gold.iter().map(Vec::len).sum();
        if total > 0 {
            prop_assert_eq!(prf.f1, 1.0);
        }
        let empty = vec![Vec::new(); gold.len()];
        let none = micro_f1(&empty, &gold).unwrap();
        prop_assert_eq!(none.f1, 0.0);
        prop_assert_eq!(none.precision, 0.0);
        let spurious = micro_f1(&gold, &empty).unwrap();
        prop_assert_eq!(spurious.recall, 0.0);
        prop_assert_eq!(spurious.f1, 0.0);
    }
}

#[test]
fn f1_rejects_mismatched_corpora() {
    assert!(matches!(
        micro_f1(&[vec![]], &[]),
        Err(Error::CorpusMismatch { predicted: 1, gold: 0 })
    ));
}

#[test]
fn generator_is_deterministic_and_honours_p_multi() {
    let config = SyntheticConfig {
        train_types: 10,
        test_types: 3,
        sentences_per_type: 10,
        seed: 7,
        ..Default::default()
    };
    let a = generate_synthetic(&config).unwrap();
    let b = generate_synthetic(&config).unwrap();
    assert_eq!(a.train.sentences(), b.train.sentences());
    assert_eq!(a.test.sentences(), b.test.sentences());

    for (p, want_inside) in [(0.0, false), (1.0, true)] {
        let c = generate_synthetic(&SyntheticConfig { p_multi: p, ..config.clone() }).unwrap();
        for corpus in [&c.train, &c.test] {
            for s in corpus.sentences() {
                let has_inside = s.labels.iter().any(|&l| matches!(corpus.labels().tag(l), Tag::Inside(_)));
                assert_eq!(has_inside, want_inside);
                assert_eq!(s.spans(corpus.labels()).len(), 1);
            }
        }
    }
}

fn trigger_words(corpus: &Corpus) -> HashSet<String> {
    corpus
        .sentences()
        .iter()
        .flat_map(|s| s.tokens.iter().zip(&s.labels).filter(|(_, &l)| l != 0).map(|(w, _)| w.clone()))
        .collect()
}

#[test]
fn zero_overlap_gives_disjoint_trigger_vocabularies() {
    let c = generate_synthetic(&SyntheticConfig { overlap: 0.0, ..Default::default() }).unwrap();
    for (i, a) in c.lexicons.iter().enumerate() {
        for b in &c.lexicons[i + 1..] {
            assert!(a.iter().all(|w| !b.contains(w)));
        }
    }
    assert!(trigger_words(&c.train).is_disjoint(&trigger_words(&c.test)));
    let train_types: HashSet<_> = c.train.labels().event_types().iter().collect();
    assert!(c.test.labels().event_types().iter().all(|t| !train_types.contains(t)));

    let shared = generate_synthetic(&SyntheticConfig { overlap: 1.0, ..Default::default() }).unwrap();
    assert!(!trigger_words(&shared.train).is_disjoint(&trigger_words(&shared.test)));
}

#[test]
fn corpus_files_round_trip() {
    let c = generate_synthetic(&SyntheticConfig { sentences_per_type: 5, ..Default::default() }).unwrap();
    let mut buf = Vec::new();
    c.test.write_jsonl(&mut buf).unwrap();
    let back = Corpus::from_reader(buf.as_slice(), c.test.labels().clone(), DEFAULT_MAX_LEN).unwrap();
    assert_eq!(back.sentences(), c.test.sentences());
}

fn tokens(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

fn toy(lambda: f64, dim: usize) -> (ToyEncoder, ParamStore) {
    let vocab = Vocabulary::build(["the", "army", "attacked", "city", "met"]);
    let enc = ToyEncoder::new(vocab, dim, lambda).unwrap();
    let mut params = ParamStore::new();
    enc.init_params(&mut params, &mut ChaRng::seed_from_u64(1));
    (enc, params)
}

#[test]
fn encoder_gradients_match_finite_differences() {
    for lambda in [0.0, 0.3, 1.0] {
        let (enc, params) = toy(lambda, 4);
        let sentence = tokens(&["the", "army", "attacked", "unseen", "the"]);
        let mut rng = ChaRng::seed_from_u64(2);
        let probe = Tensor::uniform(5, 4, 1.0, &mut rng);
        let report = grad_check(
            |tape, p| {
                let h = enc.encode(tape, p, 0, &sentence)?;
                let w = tape.constant(probe.clone());
                let t = tape.tanh(h)?;
                let m = tape.mul(t, w)?;
                tape.sum(m)
            },
            &params,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "lambda {lambda}: {:?}", report.failing().collect::<Vec<_>>());
    }
}

#[test]
fn encoder_edge_cases() {
    let (enc, params) = toy(0.0, 3);
    let mut tape = Tape::new();
    let h = enc.encode(&mut tape, &params, 0, &tokens(&["met", "city", "met"])).unwrap();
    let h = tape.value(h);
    let table = params.get(encoder::EMBEDDING).unwrap();
    assert_eq!(h.row_slice(0), table.row_slice(enc.vocab.id("met")));
    assert_eq!(h.row_slice(0), h.row_slice(2));
    assert!(matches!(
        enc.encode(&mut tape, &params, 0, &[]),
        Err(Error::EmptyInput(_))
    ));

    // a single token attends only to itself
    let (enc, params) = toy(0.4, 3);
    let mut tape = Tape::new();
    let h = enc.encode(&mut tape, &params, 0, &tokens(&["army"])).unwrap();
    let e = Tensor::row(params.get(encoder::EMBEDDING).unwrap().row_slice(enc.vocab.id("army")).to_vec());
    let v = e.matmul(params.get(encoder::MIX_WV).unwrap()).unwrap();
    let v = v.zip_map(params.get(encoder::MIX_BV).unwrap(), |a, b| a + b);
    let want = e.zip_map(&v, |a, b| 0.6 * a + 0.4 * b);
    for (x, y) in tape.value(h).values().iter().zip(want.values()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn precomputed_blocks_are_constants() {
    let mut pre = PrecomputedEncoder::new(2);
    let block = Tensor::from_rows(&[vec![0.1, -0.2], vec![1.5, 3.25]]).unwrap();
    pre.insert(4, block.clone()).unwrap();
    let mut buf = Vec::new();
    pre.write(&mut buf).unwrap();
    let loaded = PrecomputedEncoder::from_reader(buf.as_slice(), 2).unwrap();
    assert_eq!(loaded.get(4), Some(&block));
    assert!(matches!(
        PrecomputedEncoder::from_reader(buf.as_slice(), 3),
        Err(Error::InvalidShape { .. })
    ));

    let mut params = ParamStore::new();
    params.insert("w", Tensor::row(vec![1.0, 1.0]));
    let mut tape = Tape::new();
    let h = loaded.encode(&mut tape, &params, 4, &tokens(&["a", "b"])).unwrap();
    assert_eq!(tape.value(h), &block);
    let w = tape.param(&params, "w").unwrap();
    let m = tape.add(h, w).unwrap();
    let s = tape.sum(m).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.keys().collect::<Vec<_>>(), vec!["w"]);
    assert!(matches!(
        loaded.encode(&mut tape, &params, 5, &tokens(&["a"])),
        Err(Error::MissingEmbedding(5))
    ));
}
