use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::emission::Similarity;
use crate::error::{Error, Result};

/// Model assembly selected for training and decoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Interaction layer, Gaussian transitions, Monte-Carlo likelihood.
    PaCrf,
    /// Transitions are the approximator mean only; no sampling.
    PointEstimate,
    /// Approximator fed with raw prototypes.
    NoInteraction,
    /// Per-token softmax over dot-product emissions.
    EmissionOnly,
    /// One transition matrix learned across all episodes.
    VanillaCrf,
    /// Emission-only with cosine similarity.
    Match,
    /// Emission-only with negative squared Euclidean distance.
    Proto,
    /// Emission-only with dot product.
    ProtoDot,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::PaCrf,
        Variant::PointEstimate,
        Variant::NoInteraction,
        Variant::EmissionOnly,
        Variant::VanillaCrf,
        Variant::Match,
        Variant::Proto,
        Variant::ProtoDot,
    ];

    /// The full model followed by its three ablations.
    pub const ABLATIONS: [Variant; 4] = [
        Variant::PaCrf,
        Variant::PointEstimate,
        Variant::NoInteraction,
        Variant::EmissionOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PaCrf => "pa-crf",
            Variant::PointEstimate => "point-estimate",
            Variant::NoInteraction => "no-interaction",
            Variant::EmissionOnly => "emission-only",
            Variant::VanillaCrf => "vanilla-crf",
            Variant::Match => "match",
            Variant::Proto => "proto",
            Variant::ProtoDot => "proto-dot",
        }
    }

    pub fn similarity(self) -> Similarity {
        match self {
            Variant::Match => Similarity::Cosine,
            Variant::Proto => Similarity::NegSqEuclidean,
            _ => Similarity::Dot,
        }
    }

    /// Whether transitions come from the prototype-conditioned approximator.
    pub fn amortized(self) -> bool {
        matches!(
            self,
            Variant::PaCrf | Variant::PointEstimate | Variant::NoInteraction
        )
    }

    pub fn uses_interaction(self) -> bool {
        matches!(self, Variant::PaCrf | Variant::PointEstimate)
    }

    pub fn samples_transitions(self) -> bool {
        matches!(self, Variant::PaCrf | Variant::NoInteraction)
    }

    pub fn emission_only(self) -> bool {
        matches!(
            self,
            Variant::EmissionOnly | Variant::Match | Variant::Proto | Variant::ProtoDot
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EncoderMode {
    #[default]
    Toy,
    Precomputed,
}

impl EncoderMode {
    pub fn name(self) -> &'static str {
        match self {
            EncoderMode::Toy => "toy",
            EncoderMode::Precomputed => "precomputed",
        }
    }
}

impl FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(EncoderMode::Toy),
            "precomputed" => Ok(EncoderMode::Precomputed),
            _ => Err(Error::InvalidConfig(format!("unknown encoder `{s}`"))),
        }
    }
}

/// How sampled-transition variants pick transitions at decode time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecodeMode {
    /// Viterbi with `T = μ`.
    #[default]
    Mean,
    /// Per-token argmax of posterior marginals averaged over sampled `T`.
    SampledMarginals,
}

impl DecodeMode {
    pub fn name(self) -> &'static str {
        match self {
            DecodeMode::Mean => "mean",
            DecodeMode::SampledMarginals => "sampled-marginals",
        }
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(DecodeMode::Mean),
            "sampled-marginals" => Ok(DecodeMode::SampledMarginals),
            _ => Err(Error::InvalidConfig(format!("unknown decode mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub iterations: usize,
    pub eval_episodes: usize,
    pub samples: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub variant: Variant,
    pub encoder: EncoderMode,
    pub hidden_dim: usize,
    pub mix_weight: f64,
    pub decode: DecodeMode,
    pub constrained: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            way: 5,
            shot: 5,
            query: crate::episodes::DEFAULT_QUERY_SIZE,
            iterations: 2000,
            eval_episodes: 200,
            samples: 5,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            seed: 0,
            variant: Variant::PaCrf,
            encoder: EncoderMode::Toy,
            hidden_dim: 32,
            mix_weight: 0.1,
            decode: DecodeMode::Mean,
            constrained: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.way == 0 || self.shot == 0 || self.query == 0 {
            return bad("way, shot and query must be positive".into());
        }
        if self.samples == 0 || self.eval_episodes == 0 || self.hidden_dim == 0 {
            return bad("samples, eval_episodes and hidden_dim must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be non-negative", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.mix_weight) {
            return bad(format!("mix_weight {} outside [0, 1]", self.mix_weight));
        }
        Ok(())
    }

    /// Canonical `key=value` lines, one per field, in fixed order.
    pub fn to_kv(&self) -> String {
        let fields: [(&str, String); 15] = [
            ("way", self.way.to_string()),
            ("shot", self.shot.to_string()),
            ("query", self.query.to_string()),
            ("iterations", self.iterations.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("samples", self.samples.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("seed", self.seed.to_string()),
            ("variant", self.variant.name().to_owned()),
            ("encoder", self.encoder.name().to_owned()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("mix_weight", format!("{:?}", self.mix_weight)),
            ("decode", self.decode.name().to_owned()),
            ("constrained", self.constrained.to_string()),
        ];
        fields
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_kv(text)?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for {key}")))
        }
        match key {
            "way" => self.way = num(key, value)?,
            "shot" => self.shot = num(key, value)?,
            "query" => self.query = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "samples" => self.samples = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "encoder" => self.encoder = value.parse()?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "mix_weight" => self.mix_weight = num(key, value)?,
            "decode" => self.decode = value.parse()?,
            "constrained" => self.constrained = num(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_kv().as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("bogus".parse::<Variant>(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn kv_round_trip() {
        let config = TrainingConfig {
            way: 3,
            learning_rate: 0.1 + 0.2,
            variant: Variant::VanillaCrf,
            decode: DecodeMode::SampledMarginals,
            constrained: true,
            ..Default::default()
        };
        assert_eq!(TrainingConfig::from_kv(&config.to_kv()).unwrap(), config);
    }

    #[test]
    fn kv_errors() {
        let mut c = TrainingConfig::default();
        assert!(matches!(c.apply_kv("# comment\n\nway=4"), Ok(())));
        assert_eq!(c.way, 4);
        assert!(matches!(c.apply_kv("way"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(c.apply_kv("x=1\nnope=2"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(c.apply_kv("way=-1"), Err(Error::Parse { .. })));
    }
}
