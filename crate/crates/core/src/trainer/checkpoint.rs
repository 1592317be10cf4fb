use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use sha2::{Digest, Sha256};

use super::config::{EncoderMode, TrainingConfig};
use super::model::Model;
use crate::encoder::{ToyEncoder, Vocabulary, UNKNOWN};
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tensor};
use crate::ChaRng;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PACRFCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model together with the training rng state.
///
/// Layout, all integers little-endian:
///
/// ```text
/// magic[8] version:u32 config_digest[32]
/// config_len:u64 config (key=value text)
/// vocab_len:u64 { len:u64 utf8 }*
/// rng_seed[32] rng_stream:u64 rng_word_pos:u128
/// tensor_count:u64 { name_len:u64 name rows:u64 cols:u64 f64* }*
/// ```
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub rng: ChaRng,
}

impl Checkpoint {
    pub fn new(model: Model, rng: ChaRng) -> Self {
        Self { model, rng }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let config = self.model.config.to_kv();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(config.as_bytes()));
        put_bytes(&mut out, config.as_bytes());
        let words: &[String] = self.model.toy.as_ref().map_or(&[], |t| t.vocab.words());
        put_u64(&mut out, words.len() as u64);
        for w in words {
            put_bytes(&mut out, w.as_bytes());
        }
        out.extend_from_slice(&self.rng.get_seed());
        put_u64(&mut out, self.rng.get_stream());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        put_u64(&mut out, self.model.params.len() as u64);
        for (name, t) in self.model.params.iter() {
            put_bytes(&mut out, name.as_bytes());
            put_u64(&mut out, t.rows() as u64);
            put_u64(&mut out, t.cols() as u64);
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let digest: [u8; 32] = r.array()?;
        let config_text = r.string()?;
        if Sha256::digest(config_text.as_bytes()).as_slice() != digest {
            return Err(Error::CorruptCheckpoint("config digest mismatch".into()));
        }
        let config = TrainingConfig::from_kv(&config_text)
            .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
        let n_words = r.count()?;
        let mut words = Vec::with_capacity(n_words.min(1 << 20));
        for _ in 0..n_words {
            words.push(r.string()?);
        }
        let seed: [u8; 32] = r.array()?;
        let stream = u64::from_le_bytes(r.array()?);
        let word_pos = u128::from_le_bytes(r.array()?);
        let mut rng = ChaRng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        let n_tensors = r.count()?;
        let mut params = ParamStore::new();
        for _ in 0..n_tensors {
            let name = r.string()?;
            let rows = r.count()?;
            let cols = r.count()?;
            let len = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {name} overruns file")))?;
            let values = (0..len)
                .map(|_| r.array().map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            if params.contains(&name) {
                return Err(Error::CorruptCheckpoint(format!("duplicate tensor {name}")));
            }
            params.insert(name, Tensor::new([rows, cols], values)?);
        }
        if r.remaining() != 0 {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }

        let toy = match config.encoder {
            EncoderMode::Toy => {
                if words.first().map(String::as_str) != Some(UNKNOWN) {
                    return Err(Error::CorruptCheckpoint(
                        "vocabulary does not start with the unknown word".into(),
                    ));
                }
                Some(ToyEncoder::new(
                    Vocabulary::from_words(words),
                    config.hidden_dim,
                    config.mix_weight,
                )?)
            }
            EncoderMode::Precomputed => None,
        };
        let model = Model {
            config,
            toy,
            params,
        };
        model.check()?;
        Ok(Self { model, rng })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Rejects a checkpoint whose hidden size differs from `hidden_dim`.
    pub fn expect_hidden_dim(&self, hidden_dim: usize) -> Result<()> {
        let found = self.model.config.hidden_dim;
        if found != hidden_dim {
            return Err(Error::shape(
                "checkpoint",
                format!("checkpoint has d_h {found}, configured {hidden_dim}"),
            ));
        }
        Ok(())
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u64(out, b.len() as u64);
    out.extend_from_slice(b);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn count(&mut self) -> Result<usize> {
        let n = u64::from_le_bytes(self.array()?);
        usize::try_from(n).map_err(|_| Error::CorruptCheckpoint(format!("length {n} too large")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.count()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::CorruptCheckpoint("invalid UTF-8".into()))
    }
}
