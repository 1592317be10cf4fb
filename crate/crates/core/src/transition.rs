//! Amortized Gaussian transition scores generated from label prototypes.
//!
//! Prototypes first exchange information through one unscaled single-head
//! self-attention layer. For every ordered label pair `(i, j)` the
//! concatenation `[c̃_i ‖ c̃_j]` is fed to two linear heads giving the mean
//! and the log-variance of the transition score `T[i, j]`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape, Tensor, Var};

pub const ATTN_WQ: &str = "transition.w_q";
pub const ATTN_BQ: &str = "transition.b_q";
pub const ATTN_WK: &str = "transition.w_k";
pub const ATTN_BK: &str = "transition.b_k";
pub const ATTN_WV: &str = "transition.w_v";
pub const ATTN_BV: &str = "transition.b_v";
pub const MU_W: &str = "transition.w_mu";
pub const MU_B: &str = "transition.b_mu";
pub const SIGMA2_W: &str = "transition.w_sigma2";
pub const SIGMA2_B: &str = "transition.b_sigma2";

/// Bounds on the argument of `exp` in the variance head.
pub const LOG_VARIANCE_BOUND: f64 = 30.0;

pub const INTERACTION_PARAMS: [&str; 6] = [ATTN_WQ, ATTN_BQ, ATTN_WK, ATTN_BK, ATTN_WV, ATTN_BV];
pub const APPROXIMATOR_PARAMS: [&str; 4] = [MU_W, MU_B, SIGMA2_W, SIGMA2_B];

/// Adds interaction and approximator parameters for hidden size `dim`.
/// Linear maps act on row vectors, so `W_q` is stored as `d_h × d_h`
/// applied as `c · W_q + b_q`, and `W_mu` as a `2d_h × 1` column.
pub fn init_params<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, rng: &mut R) {
    for (w, b) in [(ATTN_WQ, ATTN_BQ), (ATTN_WK, ATTN_BK), (ATTN_WV, ATTN_BV)] {
        store.init_weight(w, dim, dim, rng);
        store.init_zeros(b, 1, dim);
    }
    for (w, b) in [(MU_W, MU_B), (SIGMA2_W, SIGMA2_B)] {
        store.init_weight(w, 2 * dim, 1, rng);
        store.init_zeros(b, 1, 1);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Interaction {
    /// `L × L` attention weights, rows summing to one.
    pub attention: Var,
    /// `L × d_h` interacted prototypes.
    pub output: Var,
}

/// Self-attention among prototypes without a `1/sqrt(d)` factor.
pub fn interact(tape: &mut Tape, params: &ParamStore, prototypes: Var) -> Result<Interaction> {
    let d = tape.value(prototypes).cols();
    let wq = tape.param(params, ATTN_WQ)?;
    if tape.value(wq).shape() != [d, d] {
        return Err(Error::shape(
            "interact",
            format!("W_q is {:?}, prototypes have d_h {d}", tape.value(wq).shape()),
        ));
    }
    let bq = tape.param(params, ATTN_BQ)?;
    let wk = tape.param(params, ATTN_WK)?;
    let bk = tape.param(params, ATTN_BK)?;
    let wv = tape.param(params, ATTN_WV)?;
    let bv = tape.param(params, ATTN_BV)?;
    let q = tape.linear(prototypes, wq, bq)?;
    let k = tape.linear(prototypes, wk, bk)?;
    let v = tape.linear(prototypes, wv, bv)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let attention = tape.softmax_rows(scores)?;
    let output = tape.matmul(attention, v)?;
    Ok(Interaction { attention, output })
}

/// Per-pair Gaussian over transition scores. `sigma2` is absent in
/// point-estimate mode.
#[derive(Clone, Copy, Debug)]
pub struct TransitionDistribution {
    pub mu: Var,
    pub sigma2: Option<Var>,
}

/// Fills all `L²` ordered pairs with `μ_ij = W_mu·[c̃_i ‖ c̃_j] + b_mu` and,
/// when `with_variance`, `σ²_ij = exp(W_σ²·[c̃_i ‖ c̃_j] + b_σ²)` with the
/// exponent clamped to `±LOG_VARIANCE_BOUND`.
pub fn approximate_distribution(
    tape: &mut Tape,
    params: &ParamStore,
    interacted: Var,
    with_variance: bool,
) -> Result<TransitionDistribution> {
    let [labels, d] = tape.value(interacted).shape();
    let w_mu = tape.param(params, MU_W)?;
    if tape.value(w_mu).shape() != [2 * d, 1] {
        return Err(Error::shape(
            "approximate_distribution",
            format!("W_mu is {:?}, prototypes have d_h {d}", tape.value(w_mu).shape()),
        ));
    }
    let left: Vec<usize> = (0..labels * labels).map(|p| p / labels).collect();
    let right: Vec<usize> = (0..labels * labels).map(|p| p % labels).collect();
    let left = tape.select_rows(interacted, left)?;
    let right = tape.select_rows(interacted, right)?;
    let pairs = tape.concat_cols(left, right)?;

    let b_mu = tape.param(params, MU_B)?;
    let mu = tape.linear(pairs, w_mu, b_mu)?;
    let mu = tape.reshape(mu, [labels, labels])?;

    let sigma2 = if with_variance {
        let w = tape.param(params, SIGMA2_W)?;
        let b = tape.param(params, SIGMA2_B)?;
        let raw = tape.linear(pairs, w, b)?;
        let raw = tape.reshape(raw, [labels, labels])?;
        let worst = tape.value(raw).max_abs();
        if worst > LOG_VARIANCE_BOUND {
            log::warn!("log-variance {worst:.3e} clamped to ±{LOG_VARIANCE_BOUND}");
        }
        let clamped = tape.clamp(raw, -LOG_VARIANCE_BOUND, LOG_VARIANCE_BOUND)?;
        Some(tape.exp(clamped)?)
    } else {
        None
    };
    Ok(TransitionDistribution { mu, sigma2 })
}

/// Source of standard normal draws for the reparameterization.
pub trait NoiseSource {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Tensor;
}

impl<R: Rng> NoiseSource for R {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Tensor {
        let values = (0..rows * cols).map(|_| self.sample(StandardNormal)).collect();
        Tensor::new([rows, cols], values).expect("sized")
    }
}

/// Returns the same value for every draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedNoise(pub f64);

impl NoiseSource for FixedNoise {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::filled(rows, cols, self.0)
    }
}

/// `T = μ + ε ⊙ σ` with `ε` recorded as a constant, so gradients reach `μ`
/// and `σ²` only. A distribution without variance yields `μ` unchanged.
pub fn sample_transitions<N: NoiseSource + ?Sized>(
    tape: &mut Tape,
    dist: &TransitionDistribution,
    noise: &mut N,
) -> Result<Var> {
    let Some(sigma2) = dist.sigma2 else {
        return Ok(dist.mu);
    };
    let [r, c] = tape.value(dist.mu).shape();
    let eps = tape.constant(noise.standard_normal(r, c));
    let log_var = tape.log(sigma2)?;
    let half = tape.scale(log_var, 0.5)?;
    let sigma = tape.exp(half)?;
    let spread = tape.mul(eps, sigma)?;
    tape.add(dist.mu, spread)
}

/// `L × L` matrix counting each transition `y_t → y_{t+1}`.
pub fn transition_counts(labels: &[usize], num_labels: usize) -> Result<Tensor> {
    let mut counts = Tensor::zeros(num_labels, num_labels);
    for &l in labels {
        if l >= num_labels {
            return Err(Error::InvalidLabel {
                index: l,
                count: num_labels,
            });
        }
    }
    for w in labels.windows(2) {
        counts.set(w[0], w[1], counts.get(w[0], w[1]) + 1.0);
    }
    Ok(counts)
}

/// `Σ_{t<n} T[y_t, y_{t+1}]`, with no start or end terms.
pub fn sequence_transition(tape: &mut Tape, labels: &[usize], transitions: Var) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("label sequence is empty"));
    }
    let [r, c] = tape.value(transitions).shape();
    if r != c {
        return Err(Error::shape("sequence_transition", format!("{r}x{c} is not square")));
    }
    let counts = tape.constant(transition_counts(labels, r)?);
    let picked = tape.mul(transitions, counts)?;
    tape.sum(picked)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::ChaRng;

    fn store(dim: usize, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        init_params(&mut s, dim, &mut ChaRng::seed_from_u64(seed));
        s
    }

    #[test]
    fn identical_prototypes_attend_uniformly() {
        let params = store(3, 1);
        let mut tape = Tape::new();
        let row = vec![0.3, -1.2, 0.8];
        let c = tape.constant(Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap());
        let out = interact(&mut tape, &params, c).unwrap();
        let a = tape.value(out.attention);
        for v in a.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let o = tape.value(out.output);
        assert_eq!(o.row_slice(0), o.row_slice(1));
        assert_eq!(o.row_slice(1), o.row_slice(2));
    }

    #[test]
    fn single_label_passes_value_projection() {
        let params = store(2, 2);
        let mut tape = Tape::new();
        let c = Tensor::row(vec![0.5, -2.0]);
        let cv = tape.constant(c.clone());
        let out = interact(&mut tape, &params, cv).unwrap();
        assert_eq!(tape.value(out.attention).values(), &[1.0]);
        let want = c.matmul(params.get(ATTN_WV).unwrap()).unwrap();
        for (a, b) in tape.value(out.output).values().iter().zip(want.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_heads() {
        let mut params = store(2, 3);
        params.insert(MU_W, Tensor::zeros(4, 1));
        params.insert(MU_B, Tensor::scalar(0.3));
        params.insert(SIGMA2_W, Tensor::zeros(4, 1));
        params.insert(SIGMA2_B, Tensor::scalar(0.0));
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::uniform(3, 2, 1.0, &mut ChaRng::seed_from_u64(9)));
        let dist = approximate_distribution(&mut tape, &params, c, true).unwrap();
        assert!(tape.value(dist.mu).values().iter().all(|&m| m == 0.3));
        assert!(tape.value(dist.sigma2.unwrap()).values().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn variance_exponent_is_clamped() {
        let mut params = store(1, 3);
        params.insert(SIGMA2_W, Tensor::zeros(2, 1));
        params.insert(SIGMA2_B, Tensor::scalar(800.0));
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::row(vec![1.0]));
        let dist = approximate_distribution(&mut tape, &params, c, true).unwrap();
        let s = tape.value(dist.sigma2.unwrap()).get(0, 0);
        assert_eq!(s, LOG_VARIANCE_BOUND.exp());
    }

    #[test]
    fn degenerate_and_fixed_noise_samples() {
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::from_rows(&[vec![0.2, -1.0], vec![3.0, 0.0]]).unwrap());
        let tiny = tape.constant(Tensor::filled(2, 2, 1e-30));
        let dist = TransitionDistribution {
            mu,
            sigma2: Some(tiny),
        };
        let t = sample_transitions(&mut tape, &dist, &mut ChaRng::seed_from_u64(0)).unwrap();
        for (a, b) in tape.value(t).values().iter().zip(tape.value(mu).values()) {
            assert!((a - b).abs() < 1e-10);
        }

        let var = tape.constant(Tensor::from_rows(&[vec![4.0, 0.25], vec![1.0, 9.0]]).unwrap());
        let dist = TransitionDistribution {
            mu,
            sigma2: Some(var),
        };
        let t = sample_transitions(&mut tape, &dist, &mut FixedNoise(1.0)).unwrap();
        let want = [2.2, -0.5, 4.0, 3.0];
        for (a, b) in tape.value(t).values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_transition_cases() {
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let s = sequence_transition(&mut tape, &[1], t).unwrap();
        assert_eq!(tape.value(s).item(), Some(0.0));
        let s = sequence_transition(&mut tape, &[0, 1], t).unwrap();
        assert_eq!(tape.value(s).item(), Some(2.0));
        let s = sequence_transition(&mut tape, &[1, 1, 0, 0], t).unwrap();
        assert_eq!(tape.value(s).item(), Some(4.0 + 3.0 + 1.0));
        assert!(matches!(
            sequence_transition(&mut tape, &[0, 2], t),
            Err(Error::InvalidLabel { index: 2, .. })
        ));
        assert!(matches!(
            sequence_transition(&mut tape, &[], t),
            Err(Error::EmptyInput(_))
        ));
    }
}
