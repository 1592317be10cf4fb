//! Corpora, N-way-K-shot episode sampling and the synthetic corpus generator.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{LabelSet, Tag, TaggedSentence, OUTSIDE};
use crate::ChaRng;

pub const DEFAULT_MAX_LEN: usize = 128;
pub const DEFAULT_QUERY_SIZE: usize = 5;

/// Tagged sentences over a fixed label set, indexed by event type.
#[derive(Clone, Debug)]
pub struct Corpus {
    labels: LabelSet,
    sentences: Vec<TaggedSentence>,
    by_type: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct JsonLine {
    tokens: Vec<String>,
    labels: Vec<String>,
}

impl Corpus {
    pub fn new(labels: LabelSet, sentences: Vec<TaggedSentence>) -> Result<Self> {
        let mut by_type = vec![Vec::new(); labels.num_types()];
        for (i, s) in sentences.iter().enumerate() {
            if s.len() != s.labels.len() {
                return Err(Error::shape("corpus", format!("sentence {i}: token/label count")));
            }
            let mut seen = vec![false; labels.num_types()];
            for &l in &s.labels {
                labels.check(l)?;
                if let Tag::Begin(t) | Tag::Inside(t) = labels.tag(l) {
                    if !seen[t] {
                        seen[t] = true;
                        by_type[t].push(i);
                    }
                }
            }
        }
        Ok(Self {
            labels,
            sentences,
            by_type,
        })
    }

    /// Reads JSON Lines of `{"tokens": [...], "labels": [...]}`. Blank lines
    /// are skipped; sentences longer than `max_len` are truncated.
    pub fn from_reader<R: Read>(reader: R, labels: LabelSet, max_len: usize) -> Result<Self> {
        let mut sentences = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: JsonLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            if parsed.tokens.len() != parsed.labels.len() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!(
                        "{} tokens but {} labels",
                        parsed.tokens.len(),
                        parsed.labels.len()
                    ),
                });
            }
            let mut ids = Vec::with_capacity(parsed.labels.len());
            for name in &parsed.labels {
                let id = labels.index_of(name).ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: Error::UnknownLabel(name.clone()).to_string(),
                })?;
                ids.push(id);
            }
            let mut tokens = parsed.tokens;
            if tokens.len() > max_len {
                log::warn!("line {lineno}: truncating {} tokens to {max_len}", tokens.len());
                tokens.truncate(max_len);
                ids.truncate(max_len);
            }
            sentences.push(TaggedSentence { tokens, labels: ids });
        }
        Self::new(labels, sentences)
    }

    pub fn load(path: impl AsRef<Path>, labels: LabelSet) -> Result<Self> {
        Self::from_reader(fs::File::open(path)?, labels, DEFAULT_MAX_LEN)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.sentences {
            let line = JsonLine {
                tokens: s.tokens.clone(),
                labels: s
                    .labels
                    .iter()
                    .map(|&l| self.labels.labels()[l].clone())
                    .collect(),
            };
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn sentences(&self) -> &[TaggedSentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentence indices containing at least one trigger of the given type.
    pub fn sentences_with_type(&self, type_index: usize) -> &[usize] {
        &self.by_type[type_index]
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
    }

    /// Checks that every type can supply `shot + query` sentences.
    pub fn check_feasible(&self, way: usize, shot: usize, query: usize) -> Result<()> {
        if self.labels.num_types() < way {
            return Err(Error::EpisodeInfeasible(format!(
                "corpus has {} event types, {way} requested",
                self.labels.num_types()
            )));
        }
        for (t, list) in self.by_type.iter().enumerate() {
            if list.len() < shot + query {
                return Err(Error::EpisodeInfeasible(format!(
                    "event type `{}` has {} sentences, {} needed",
                    self.labels.event_types()[t],
                    list.len(),
                    shot + query
                )));
            }
        }
        Ok(())
    }
}

/// Reads newline-separated event type names.
pub fn load_label_vocab(path: impl AsRef<Path>) -> Result<LabelSet> {
    let text = fs::read_to_string(path)?;
    let types: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    LabelSet::new(&types)
}

pub fn save_label_vocab(labels: &LabelSet, path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::new();
    for t in labels.event_types() {
        text.push_str(t);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// A sentence drawn into an episode, relabeled into the episode label set.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSentence {
    pub corpus_index: usize,
    /// Episode type index this sentence was drawn for.
    pub drawn_for: usize,
    pub sentence: TaggedSentence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub labels: LabelSet,
    /// `way × shot` sentences, type-major.
    pub support: Vec<EpisodeSentence>,
    /// `way × query` sentences, type-major.
    pub query: Vec<EpisodeSentence>,
}

/// Samples an N-way-K-shot episode with `query` query sentences per type.
///
/// Types are drawn without replacement, then for each type `shot + query`
/// sentences not already used by this episode. Spans of types outside the
/// episode become `O`.
pub fn sample_episode<R: Rng + ?Sized>(
    corpus: &Corpus,
    way: usize,
    shot: usize,
    query: usize,
    rng: &mut R,
) -> Result<Episode> {
    let total_types = corpus.labels.num_types();
    if way == 0 || shot == 0 {
        return Err(Error::InvalidConfig("way and shot must be positive".into()));
    }
    if total_types < way {
        return Err(Error::EpisodeInfeasible(format!(
            "corpus has {total_types} event types, {way} requested"
        )));
    }
    let types: Vec<usize> = index::sample(rng, total_types, way).into_vec();
    let names: Vec<&str> = types
        .iter()
        .map(|&t| corpus.labels.event_types()[t].as_str())
        .collect();
    let labels = LabelSet::new(&names)?;

    // corpus label -> episode label
    let mut remap = vec![OUTSIDE; corpus.labels.len()];
    for (k, &t) in types.iter().enumerate() {
        remap[corpus.labels.begin(t)] = labels.begin(k);
        remap[corpus.labels.inside(t)] = labels.inside(k);
    }

    let mut used = HashSet::new();
    let mut support = Vec::with_capacity(way * shot);
    let mut queries = Vec::with_capacity(way * query);
    for (k, &t) in types.iter().enumerate() {
        let candidates: Vec<usize> = corpus.by_type[t]
            .iter()
            .copied()
            .filter(|i| !used.contains(i))
            .collect();
        if candidates.len() < shot + query {
            return Err(Error::EpisodeInfeasible(format!(
                "event type `{}` has {} unused sentences, {} needed",
                names[k],
                candidates.len(),
                shot + query
            )));
        }
        let picked = index::sample(rng, candidates.len(), shot + query);
        for (j, p) in picked.iter().enumerate() {
            let corpus_index = candidates[p];
            used.insert(corpus_index);
            let src = &corpus.sentences[corpus_index];
            let item = EpisodeSentence {
                corpus_index,
                drawn_for: k,
                sentence: TaggedSentence {
                    tokens: src.tokens.clone(),
                    labels: src.labels.iter().map(|&l| remap[l]).collect(),
                },
            };
            if j < shot {
                support.push(item);
            } else {
                queries.push(item);
            }
        }
    }
    Ok(Episode {
        way,
        shot,
        labels,
        support,
        query: queries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Background (non-trigger) vocabulary size.
    pub vocab_size: usize,
    pub train_types: usize,
    pub test_types: usize,
    /// Trigger words per event type.
    pub lexicon_size: usize,
    /// Probability that a trigger spans 2-3 tokens instead of one.
    pub p_multi: f64,
    /// Fraction of each lexicon drawn from a pool shared by all types.
    pub overlap: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub sentences_per_type: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            train_types: 20,
            test_types: 5,
            lexicon_size: 6,
            p_multi: 0.8,
            overlap: 0.0,
            min_len: 6,
            max_len: 14,
            sentences_per_type: 40,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.lexicon_size == 0 {
            return bad("lexicon size must be positive");
        }
        if self.vocab_size == 0 || self.sentences_per_type == 0 {
            return bad("vocabulary size and sentences per type must be positive");
        }
        if self.train_types + self.test_types == 0 {
            return bad("at least one event type is required");
        }
        if !(0.0..=1.0).contains(&self.p_multi) || !(0.0..=1.0).contains(&self.overlap) {
            return bad("p_multi and overlap must lie in [0, 1]");
        }
        if self.min_len < 3 || self.min_len > self.max_len || self.max_len > DEFAULT_MAX_LEN {
            return bad("sentence length range must satisfy 3 <= min <= max <= 128");
        }
        Ok(())
    }
}

/// Lexicon words of every generated type, train types first.
#[derive(Clone, Debug)]
pub struct SyntheticCorpora {
    pub train: Corpus,
    pub test: Corpus,
    pub lexicons: Vec<Vec<String>>,
}

pub fn type_name(i: usize) -> String {
    format!("ev{i:02}")
}

/// Generates train and test corpora over disjoint event types. Each
/// sentence carries exactly one trigger whose tokens come from its type's
/// lexicon; every other token is background vocabulary.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpora> {
    config.validate()?;
    let mut rng = ChaRng::seed_from_u64(config.seed);
    let total = config.train_types + config.test_types;
    let shared_count = (config.overlap * config.lexicon_size as f64).round() as usize;
    let shared: Vec<String> = (0..config.lexicon_size).map(|j| format!("s{j}")).collect();
    let lexicons: Vec<Vec<String>> = (0..total)
        .map(|t| {
            let mut lex: Vec<String> = index::sample(&mut rng, shared.len(), shared_count)
                .iter()
                .map(|j| shared[j].clone())
                .collect();
            lex.extend((shared_count..config.lexicon_size).map(|j| format!("t{t:02}_{j}")));
            lex
        })
        .collect();

    let mut build = |range: std::ops::Range<usize>| -> Result<Corpus> {
        let names: Vec<String> = range.clone().map(type_name).collect();
        let labels = LabelSet::new(&names)?;
        let mut sentences = Vec::new();
        for (k, t) in range.enumerate() {
            for _ in 0..config.sentences_per_type {
                let n = rng.random_range(config.min_len..=config.max_len);
                let width = if rng.random_bool(config.p_multi) {
                    rng.random_range(2..=3)
                } else {
                    1
                };
                let start = rng.random_range(0..=n - width);
                let mut tokens = Vec::with_capacity(n);
                let mut tags = Vec::with_capacity(n);
                for pos in 0..n {
                    if (start..start + width).contains(&pos) {
                        let w = &lexicons[t][rng.random_range(0..config.lexicon_size)];
                        tokens.push(w.clone());
                        tags.push(if pos == start {
                            labels.begin(k)
                        } else {
                            labels.inside(k)
                        });
                    } else {
                        tokens.push(format!("w{}", rng.random_range(0..config.vocab_size)));
                        tags.push(OUTSIDE);
                    }
                }
                sentences.push(TaggedSentence {
                    tokens,
                    labels: tags,
                });
            }
        }
        Corpus::new(labels, sentences)
    };
    let train = build(0..config.train_types)?;
    let test = build(config.train_types..total)?;
    Ok(SyntheticCorpora {
        train,
        test,
        lexicons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_single_line() {
        let labels = LabelSet::new(&["Marry"]).unwrap();
        let text = r#"{"tokens":["He","married","her"],"labels":["O","B-Marry","O"]}"#;
        let corpus = Corpus::from_reader(text.as_bytes(), labels, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.sentences_with_type(0), &[0]);
    }

    #[test]
    fn load_empty() {
        let labels = LabelSet::new(&["Marry"]).unwrap();
        let corpus = Corpus::from_reader("".as_bytes(), labels, DEFAULT_MAX_LEN).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn load_errors_name_the_line() {
        let labels = LabelSet::new(&["Marry"]).unwrap();
        let text = r#"{"tokens":["a","b","c"],"labels":["O","O"]}"#;
        let err = Corpus::from_reader(text.as_bytes(), labels.clone(), 128).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");

        let text = "{\"tokens\":[\"a\"],\"labels\":[\"O\"]}\n{\"tokens\":[\"a\"],\"labels\":[\"B-Jail\"]}";
        let err = Corpus::from_reader(text.as_bytes(), labels.clone(), 128).unwrap_err();
        assert!(matches!(&err, Error::Parse { line: 2, message } if message.contains("B-Jail")));

        let err = Corpus::from_reader("{not json".as_bytes(), labels, 128).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn long_sentences_truncated() {
        let labels = LabelSet::new(&["X"]).unwrap();
        let line = serde_json::json!({
            "tokens": vec!["w"; 10],
            "labels": vec!["O"; 10],
        })
        .to_string();
        let corpus = Corpus::from_reader(line.as_bytes(), labels, 4).unwrap();
        assert_eq!(corpus.sentences()[0].len(), 4);
    }

    #[test]
    fn minimal_episode() {
        let labels = LabelSet::new(&["X"]).unwrap();
        let s = |w: &str| TaggedSentence {
            tokens: vec![w.into()],
            labels: vec![1],
        };
        let corpus = Corpus::new(labels, vec![s("a"), s("b")]).unwrap();
        let mut rng = ChaRng::seed_from_u64(3);
        let ep = sample_episode(&corpus, 1, 1, 1, &mut rng).unwrap();
        assert_eq!(ep.support.len(), 1);
        assert_eq!(ep.query.len(), 1);
        assert_ne!(ep.support[0].corpus_index, ep.query[0].corpus_index);
        assert!(matches!(
            sample_episode(&corpus, 1, 2, 1, &mut rng),
            Err(Error::EpisodeInfeasible(m)) if m.contains("`X`")
        ));
        assert!(matches!(
            sample_episode(&corpus, 2, 1, 1, &mut rng),
            Err(Error::EpisodeInfeasible(_))
        ));
    }

    #[test]
    fn non_episode_spans_become_outside() {
        let labels = LabelSet::new(&["A", "B"]).unwrap();
        // every sentence holds an A and a B trigger
        let sentences = (0..4)
            .map(|i| TaggedSentence {
                tokens: vec![format!("x{i}"), "y".into(), "z".into()],
                labels: vec![1, 3, 4],
            })
            .collect();
        let corpus = Corpus::new(labels, sentences).unwrap();
        let mut rng = ChaRng::seed_from_u64(11);
        let ep = sample_episode(&corpus, 1, 1, 1, &mut rng).unwrap();
        let kept = ep.labels.event_types()[0].clone();
        for s in ep.support.iter().chain(&ep.query) {
            let spans = s.sentence.spans(&ep.labels);
            assert_eq!(spans.len(), 1);
            assert_eq!(spans[0].event_type, kept);
        }
    }

    #[test]
    fn synthetic_construction() {
        let mut cfg = SyntheticConfig {
            p_multi: 0.0,
            sentences_per_type: 10,
            ..Default::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let has_inside = |c: &Corpus| {
            c.sentences()
                .iter()
                .map(|s| s.labels.iter().any(|&l| matches!(c.labels().tag(l), Tag::Inside(_))))
                .collect::<Vec<_>>()
        };
        assert!(has_inside(&data.train).iter().all(|&b| !b));
        cfg.p_multi = 1.0;
        let data = generate_synthetic(&cfg).unwrap();
        assert!(has_inside(&data.train).iter().all(|&b| b));
        assert!(has_inside(&data.test).iter().all(|&b| b));

        cfg.lexicon_size = 0;
        assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
    }
}
