//! Brute-force oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use pacrf::numeric::Tensor;
use pacrf::ChaRng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rows: usize, cols: usize, rng: &mut ChaRng) -> Tensor {
    let v = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new([rows, cols], v).unwrap()
}

/// Every label sequence of length `n` over `l` labels, in lexicographic
/// order, so the first maximum found is the lowest-index tie.
pub fn all_paths(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..l).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

/// Unnormalised log score summed directly from the definition.
pub fn score(e: &Tensor, t: &Tensor, path: &[usize]) -> f64 {
    let mut s = 0.0;
    for (i, &y) in path.iter().enumerate() {
        s += e.get(i, y);
        if i > 0 {
            s += t.get(path[i - 1], y);
        }
    }
    s
}

/// `log Σ_y exp(score(y))`, accumulated with a running maximum.
pub fn brute_log_z(e: &Tensor, t: &Tensor) -> f64 {
    let scores: Vec<f64> = all_paths(e.rows(), e.cols())
        .iter()
        .map(|p| score(e, t, p))
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Best path and score. Among equal scores the path whose reversed label
/// sequence is lexicographically smallest wins: lowest final label first,
/// then lowest predecessor, and so on backwards.
pub fn brute_best(e: &Tensor, t: &Tensor) -> (Vec<usize>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for p in all_paths(e.rows(), e.cols()) {
        let s = score(e, t, &p);
        if s > best.1 || (s == best.1 && p.iter().rev().lt(best.0.iter().rev())) {
            best = (p, s);
        }
    }
    best
}

/// `P(y_t = l)` by summing path probabilities.
pub fn brute_marginals(e: &Tensor, t: &Tensor) -> Tensor {
    let (n, l) = (e.rows(), e.cols());
    let z = brute_log_z(e, t);
    let mut m = Tensor::zeros(n, l);
    for p in all_paths(n, l) {
        let w = (score(e, t, &p) - z).exp();
        for (i, &y) in p.iter().enumerate() {
            m.set(i, y, m.get(i, y) + w);
        }
    }
    m
}
