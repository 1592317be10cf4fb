//! Linear-chain CRF: partition function, sequence likelihood, Monte-Carlo
//! training loss and Viterbi decoding.
//!
//! A label sequence `y` of length `n` scores
//! `Σ_t E[t, y_t] + Σ_{t<n} T[y_t, y_{t+1}]`; there are no start or end
//! transitions.

use crate::emission::sequence_emission;
use crate::error::{Error, Result};
use crate::labelspace::{LabelSet, Tag};
use crate::numeric::{logsumexp, Tape, Tensor, Var};
use crate::transition::{sample_transitions, sequence_transition, NoiseSource, TransitionDistribution};

/// Emission (`n × L`) and transition (`L × L`) nodes for one sentence.
#[derive(Clone, Copy, Debug)]
pub struct CrfScore {
    pub emissions: Var,
    pub transitions: Var,
}

impl CrfScore {
    pub fn new(tape: &Tape, emissions: Var, transitions: Var) -> Result<Self> {
        let e = tape.value(emissions);
        let t = tape.value(transitions);
        if e.rows() == 0 {
            return Err(Error::EmptyInput("sentence has no tokens"));
        }
        if t.rows() != t.cols() || t.rows() != e.cols() {
            return Err(Error::shape(
                "crf",
                format!(
                    "emissions {}x{} with transitions {}x{}",
                    e.rows(),
                    e.cols(),
                    t.rows(),
                    t.cols()
                ),
            ));
        }
        Ok(Self {
            emissions,
            transitions,
        })
    }
}

/// `log Z` by the forward recursion in log space.
pub fn log_partition(tape: &mut Tape, score: &CrfScore) -> Result<Var> {
    let tt = tape.transpose(score.transitions)?;
    log_partition_transposed(tape, score.emissions, tt)
}

/// Forward recursion given `Tᵀ`, so callers sharing one transition matrix
/// across sentences transpose it once.
fn log_partition_transposed(tape: &mut Tape, emissions: Var, transitions_t: Var) -> Result<Var> {
    let [n, labels] = tape.value(emissions).shape();
    if n == 0 {
        return Err(Error::EmptyInput("sentence has no tokens"));
    }
    let ones = tape.constant(Tensor::filled(labels, 1, 1.0));
    let mut alpha = tape.select_rows(emissions, vec![0])?;
    for t in 1..n {
        // m[j, i] = alpha[i] + T[i, j]
        let spread = tape.matmul(ones, alpha)?;
        let m = tape.add(spread, transitions_t)?;
        let reduced = tape.logsumexp_rows(m)?;
        let reduced = tape.transpose(reduced)?;
        let e_t = tape.select_rows(emissions, vec![t])?;
        alpha = tape.add(reduced, e_t)?;
    }
    let z = tape.logsumexp_rows(alpha)?;
    Ok(z)
}

/// `EMIT(y) + TRANS(y)`.
pub fn sequence_score(tape: &mut Tape, score: &CrfScore, labels: &[usize]) -> Result<Var> {
    check_labels(tape, score, labels)?;
    let emit = sequence_emission(tape, score.emissions, labels)?;
    let trans = sequence_transition(tape, labels, score.transitions)?;
    tape.add(emit, trans)
}

fn check_labels(tape: &Tape, score: &CrfScore, labels: &[usize]) -> Result<()> {
    let [n, l] = tape.value(score.emissions).shape();
    if labels.len() != n {
        return Err(Error::InvalidLabel {
            index: labels.len(),
            count: n,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= l) {
        return Err(Error::InvalidLabel {
            index: bad,
            count: l,
        });
    }
    Ok(())
}

/// `log P(y | x)` for fixed transitions.
pub fn sequence_log_prob(tape: &mut Tape, score: &CrfScore, labels: &[usize]) -> Result<Var> {
    let s = sequence_score(tape, score, labels)?;
    let z = log_partition(tape, score)?;
    tape.sub(s, z)
}

/// Monte-Carlo negative log-likelihood over a set of query sentences.
///
/// Draws `samples` transition matrices from `dist`, each shared by every
/// query, and returns `-(1 / (|Q|·S)) Σ_s Σ_q log P(y_q | x_q, T_s)`: the
/// average is taken over log-probabilities, not inside the log.
pub fn mc_nll<N: NoiseSource + ?Sized>(
    tape: &mut Tape,
    queries: &[(Var, &[usize])],
    dist: &TransitionDistribution,
    samples: usize,
    noise: &mut N,
) -> Result<Var> {
    if samples == 0 {
        return Err(Error::InvalidConfig("at least one Monte-Carlo sample is required".into()));
    }
    if queries.is_empty() {
        return Err(Error::EmptyInput("no query sentences"));
    }
    let mut total: Option<Var> = None;
    for _ in 0..samples {
        let t = sample_transitions(tape, dist, noise)?;
        let tt = tape.transpose(t)?;
        for &(emissions, gold) in queries {
            let score = CrfScore::new(tape, emissions, t)?;
            let s = sequence_score(tape, &score, gold)?;
            let z = log_partition_transposed(tape, emissions, tt)?;
            let lp = tape.sub(s, z)?;
            total = Some(match total {
                None => lp,
                Some(acc) => tape.add(acc, lp)?,
            });
        }
    }
    let total = total.expect("non-empty");
    tape.scale(total, -1.0 / (queries.len() * samples) as f64)
}

/// Deterministic CRF negative log-likelihood averaged over sentences.
pub fn nll(tape: &mut Tape, queries: &[(Var, &[usize])], transitions: Var) -> Result<Var> {
    let dist = TransitionDistribution {
        mu: transitions,
        sigma2: None,
    };
    mc_nll(tape, queries, &dist, 1, &mut crate::transition::FixedNoise(0.0))
}

/// Per-token softmax loss, i.e. the CRF likelihood without transitions,
/// averaged over sentences.
pub fn token_softmax_nll(tape: &mut Tape, queries: &[(Var, &[usize])]) -> Result<Var> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no query sentences"));
    }
    let mut total: Option<Var> = None;
    for &(emissions, gold) in queries {
        let emit = sequence_emission(tape, emissions, gold)?;
        let norm = tape.logsumexp_rows(emissions)?;
        let norm = tape.sum(norm)?;
        let lp = tape.sub(emit, norm)?;
        total = Some(match total {
            None => lp,
            Some(acc) => tape.add(acc, lp)?,
        });
    }
    let total = total.expect("non-empty");
    tape.scale(total, -1.0 / queries.len() as f64)
}

fn check_values(emissions: &Tensor, transitions: &Tensor) -> Result<()> {
    if emissions.rows() == 0 {
        return Err(Error::EmptyInput("sentence has no tokens"));
    }
    let l = emissions.cols();
    if transitions.shape() != [l, l] {
        return Err(Error::shape(
            "crf",
            format!(
                "emissions {}x{l} with transitions {:?}",
                emissions.rows(),
                transitions.shape()
            ),
        ));
    }
    Ok(())
}

/// Highest-scoring label sequence. Ties go to the lowest label index, both
/// for back-pointers and for the final label.
pub fn viterbi(emissions: &Tensor, transitions: &Tensor) -> Result<Vec<usize>> {
    check_values(emissions, transitions)?;
    let [n, l] = emissions.shape();
    let mut delta = emissions.row_slice(0).to_vec();
    let mut back = vec![vec![0usize; l]; n];
    for t in 1..n {
        let mut next = vec![0.0; l];
        for j in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, &d) in delta.iter().enumerate() {
                let cand = d + transitions.get(i, j);
                if cand > best {
                    best = cand;
                    arg = i;
                }
            }
            next[j] = best + emissions.get(t, j);
            back[t][j] = arg;
        }
        delta = next;
    }
    let mut last = 0;
    for j in 1..l {
        if delta[j] > delta[last] {
            last = j;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok(path)
}

/// Score of a fixed path, computed directly from values.
pub fn path_score(emissions: &Tensor, transitions: &Tensor, labels: &[usize]) -> f64 {
    let emit: f64 = labels
        .iter()
        .enumerate()
        .map(|(t, &y)| emissions.get(t, y))
        .sum();
    let trans: f64 = labels.windows(2).map(|w| transitions.get(w[0], w[1])).sum();
    emit + trans
}

/// Posterior label marginals `P(y_t = l | x)` by forward-backward.
pub fn marginals(emissions: &Tensor, transitions: &Tensor) -> Result<Tensor> {
    check_values(emissions, transitions)?;
    let [n, l] = emissions.shape();
    let mut alpha = Tensor::zeros(n, l);
    let mut beta = Tensor::zeros(n, l);
    for j in 0..l {
        alpha.set(0, j, emissions.get(0, j));
    }
    let mut buf = vec![0.0; l];
    for t in 1..n {
        for j in 0..l {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = alpha.get(t - 1, i) + transitions.get(i, j);
            }
            alpha.set(t, j, logsumexp(&buf) + emissions.get(t, j));
        }
    }
    for t in (0..n - 1).rev() {
        for i in 0..l {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = transitions.get(i, j) + emissions.get(t + 1, j) + beta.get(t + 1, j);
            }
            beta.set(t, i, logsumexp(&buf));
        }
    }
    let log_z = logsumexp(alpha.row_slice(n - 1));
    let mut out = Tensor::zeros(n, l);
    for t in 0..n {
        for j in 0..l {
            out.set(t, j, (alpha.get(t, j) + beta.get(t, j) - log_z).exp());
        }
    }
    Ok(out)
}

/// Per-position argmax with lowest-index ties.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    (0..scores.rows())
        .map(|r| {
            let row = scores.row_slice(r);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Forbids ill-formed BIO paths by pushing their scores to `-inf`: `I-t`
/// may only follow `B-t` or `I-t`, and may not start a sentence.
pub fn constrain_bio(emissions: &Tensor, transitions: &Tensor, labels: &LabelSet) -> (Tensor, Tensor) {
    let mut e = emissions.clone();
    let mut t = transitions.clone();
    let l = labels.len();
    for j in 0..l {
        let Tag::Inside(ty) = labels.tag(j) else {
            continue;
        };
        if e.rows() > 0 {
            e.set(0, j, f64::NEG_INFINITY);
        }
        for i in 0..l {
            let ok = matches!(labels.tag(i), Tag::Begin(u) | Tag::Inside(u) if u == ty);
            if !ok {
                t.set(i, j, f64::NEG_INFINITY);
            }
        }
    }
    (e, t)
}
