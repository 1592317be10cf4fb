//! Token encoders producing one hidden row per token.
//!
//! [`ToyEncoder`] is a trainable embedding table followed by one
//! single-head self-attention mixer. [`PrecomputedEncoder`] serves fixed
//! vectors computed elsewhere, keyed by sentence id.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape, Tensor, Var};

pub const UNKNOWN: &str = "<unk>";
pub const EMBEDDING_MAGIC: &[u8; 8] = b"PACRFEMB";

pub const EMBEDDING: &str = "encoder.embedding";
pub const MIX_WQ: &str = "encoder.w_q";
pub const MIX_BQ: &str = "encoder.b_q";
pub const MIX_WK: &str = "encoder.w_k";
pub const MIX_BK: &str = "encoder.b_k";
pub const MIX_WV: &str = "encoder.w_v";
pub const MIX_BV: &str = "encoder.b_v";

/// Maps hidden rows for one sentence onto the tape.
pub trait Encoder {
    fn hidden_dim(&self) -> usize;

    /// Returns an `n × d_h` node. `sentence_id` identifies the sentence
    /// within its corpus; encoders that read tokens directly ignore it.
    fn encode(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        sentence_id: usize,
        tokens: &[String],
    ) -> Result<Var>;
}

/// Word to row index; id 0 is the shared unknown word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Sorted, de-duplicated vocabulary behind the unknown word.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let sorted: BTreeSet<&str> = words.into_iter().filter(|w| *w != UNKNOWN).collect();
        let words = std::iter::once(UNKNOWN.to_owned())
            .chain(sorted.into_iter().map(str::to_owned))
            .collect();
        Self::from_words(words)
    }

    /// Takes the word list verbatim; the first entry must be [`UNKNOWN`].
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, index }
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Embedding lookup mixed with single-head scaled dot-product
/// self-attention: `h_i = (1 - λ) e_i + λ attn_i`.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    pub vocab: Vocabulary,
    pub dim: usize,
    pub lambda: f64,
}

impl ToyEncoder {
    pub fn new(vocab: Vocabulary, dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("hidden dimension must be positive".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!(
                "mixing weight {lambda} outside [0, 1]"
            )));
        }
        Ok(Self { vocab, dim, lambda })
    }

    /// Embedding rows are uniform in `[-1, 1]` (each output reads one row);
    /// mixer projections use the usual `1/sqrt(fan_in)` bound.
    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let d = self.dim;
        store.insert(EMBEDDING, Tensor::uniform(self.vocab.len(), d, 1.0, rng));
        for (w, b) in [(MIX_WQ, MIX_BQ), (MIX_WK, MIX_BK), (MIX_WV, MIX_BV)] {
            store.init_weight(w, d, d, rng);
            store.init_zeros(b, 1, d);
        }
    }

    /// Checks that `store` holds parameters shaped for this encoder.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        let d = self.dim;
        let mut expected = vec![(EMBEDDING, [self.vocab.len(), d])];
        for (w, b) in [(MIX_WQ, MIX_BQ), (MIX_WK, MIX_BK), (MIX_WV, MIX_BV)] {
            expected.push((w, [d, d]));
            expected.push((b, [1, d]));
        }
        for (name, shape) in expected {
            let t = store.require(name)?;
            if t.shape() != shape {
                return Err(Error::shape(
                    "encoder",
                    format!("{name} is {:?}, expected {:?}", t.shape(), shape),
                ));
            }
        }
        Ok(())
    }
}

impl Encoder for ToyEncoder {
    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn encode(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        _sentence_id: usize,
        tokens: &[String],
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("sentence has no tokens"));
        }
        let ids = tokens.iter().map(|t| self.vocab.id(t)).collect();
        let table = tape.param(params, EMBEDDING)?;
        let x = tape.select_rows(table, ids)?;
        if self.lambda == 0.0 {
            return Ok(x);
        }
        let mut project = |w: &str, b: &str| -> Result<Var> {
            let w = tape.param(params, w)?;
            let b = tape.param(params, b)?;
            tape.linear(x, w, b)
        };
        let q = project(MIX_WQ, MIX_BQ)?;
        let k = project(MIX_WK, MIX_BK)?;
        let v = project(MIX_WV, MIX_BV)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (self.dim as f64).sqrt())?;
        let weights = tape.softmax_rows(scores)?;
        let attended = tape.matmul(weights, v)?;
        let kept = tape.scale(x, 1.0 - self.lambda)?;
        let mixed = tape.scale(attended, self.lambda)?;
        tape.add(kept, mixed)
    }
}

/// Fixed per-sentence hidden blocks loaded from a `PACRFEMB` file.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedEncoder {
    dim: usize,
    blocks: HashMap<usize, Tensor>,
}

impl PrecomputedEncoder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            blocks: HashMap::new(),
        }
    }

    pub fn insert(&mut self, sentence_id: usize, block: Tensor) -> Result<()> {
        if block.cols() != self.dim {
            return Err(Error::shape(
                "precomputed",
                format!("block has d_h {}, configured {}", block.cols(), self.dim),
            ));
        }
        self.blocks.insert(sentence_id, block);
        Ok(())
    }

    pub fn get(&self, sentence_id: usize) -> Option<&Tensor> {
        self.blocks.get(&sentence_id)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Parses the binary container: magic, then records of
    /// `(id: u64, n: u64, d_h: u64, n·d_h f64)`, all little-endian.
    pub fn from_reader<R: Read>(mut reader: R, dim: usize) -> Result<Self> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let corrupt = |m: &str| Error::Parse {
            line: 0,
            message: format!("embedding file: {m}"),
        };
        if bytes.len() < 8 || &bytes[..8] != EMBEDDING_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut out = Self::new(dim);
        let mut pos = 8;
        let take_u64 = |pos: &mut usize| -> Result<u64> {
            let end = *pos + 8;
            let chunk = bytes.get(*pos..end).ok_or_else(|| corrupt("truncated record"))?;
            *pos = end;
            Ok(u64::from_le_bytes(chunk.try_into().expect("8 bytes")))
        };
        while pos < bytes.len() {
            let id = take_u64(&mut pos)? as usize;
            let n = take_u64(&mut pos)? as usize;
            let d = take_u64(&mut pos)? as usize;
            if d != dim {
                return Err(Error::shape(
                    "precomputed",
                    format!("sentence {id} has d_h {d}, configured {dim}"),
                ));
            }
            let count = n.checked_mul(d).ok_or_else(|| corrupt("block too large"))?;
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                values.push(f64::from_bits(take_u64(&mut pos)?));
            }
            out.insert(id, Tensor::new([n, d], values)?)?;
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        Self::from_reader(fs::File::open(path)?, dim)
    }

    /// Writes blocks in ascending id order.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(EMBEDDING_MAGIC)?;
        let mut ids: Vec<_> = self.blocks.keys().copied().collect();
        ids.sort_unstable();
        for id in ids {
            let b = &self.blocks[&id];
            for v in [id as u64, b.rows() as u64, b.cols() as u64] {
                out.write_all(&v.to_le_bytes())?;
            }
            for v in b.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

impl Encoder for PrecomputedEncoder {
    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn encode(
        &self,
        tape: &mut Tape,
        _params: &ParamStore,
        sentence_id: usize,
        tokens: &[String],
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("sentence has no tokens"));
        }
        let block = self
            .blocks
            .get(&sentence_id)
            .ok_or(Error::MissingEmbedding(sentence_id))?;
        if block.rows() != tokens.len() {
            return Err(Error::shape(
                "precomputed",
                format!(
                    "sentence {sentence_id}: {} stored rows for {} tokens",
                    block.rows(),
                    tokens.len()
                ),
            ));
        }
        Ok(tape.constant(block.clone()))
    }
}
