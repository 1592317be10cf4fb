//! Label prototypes and prototype-similarity emission scores.

use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};

/// `L × d_h` prototype node plus the number of support tokens behind each row.
#[derive(Clone, Debug)]
pub struct PrototypeSet {
    pub values: Var,
    pub counts: Vec<usize>,
}

impl PrototypeSet {
    /// Labels without any support token; their prototype is the zero vector.
    pub fn missing(&self) -> Vec<usize> {
        (0..self.counts.len())
            .filter(|&l| self.counts[l] == 0)
            .collect()
    }
}

/// Averages support hidden rows per label.
///
/// Each support sentence contributes `M_s · H_s`, where `M_s[l, t]` is
/// `1 / count(l)` when token `t` carries label `l`, so gradients reach every
/// support encoding. Labels with no support token get a zero row.
pub fn compute_prototypes(
    tape: &mut Tape,
    support: &[(Var, &[usize])],
    num_labels: usize,
) -> Result<PrototypeSet> {
    let mut counts = vec![0usize; num_labels];
    let mut dim = None;
    for (h, labels) in support {
        let value = tape.value(*h);
        if value.rows() != labels.len() {
            return Err(Error::shape(
                "compute_prototypes",
                format!("{} hidden rows for {} labels", value.rows(), labels.len()),
            ));
        }
        match dim {
            None => dim = Some(value.cols()),
            Some(d) if d != value.cols() => {
                return Err(Error::shape(
                    "compute_prototypes",
                    format!("hidden dimension {} vs {d}", value.cols()),
                ))
            }
            _ => {}
        }
        for &l in labels.iter() {
            if l >= num_labels {
                return Err(Error::InvalidLabel {
                    index: l,
                    count: num_labels,
                });
            }
            counts[l] += 1;
        }
    }
    let dim = dim.ok_or(Error::EmptyInput("support set is empty"))?;

    let mut acc: Option<Var> = None;
    for (h, labels) in support {
        let mut avg = Tensor::zeros(num_labels, labels.len());
        for (t, &l) in labels.iter().enumerate() {
            avg.set(l, t, 1.0 / counts[l] as f64);
        }
        let avg = tape.constant(avg);
        let part = tape.matmul(avg, *h)?;
        acc = Some(match acc {
            None => part,
            Some(a) => tape.add(a, part)?,
        });
    }
    let values = acc.expect("non-empty support");
    debug_assert_eq!(tape.value(values).shape(), [num_labels, dim]);
    for l in (0..num_labels).filter(|&l| counts[l] == 0) {
        log::debug!("label {l} has no support tokens; using a zero prototype");
    }
    Ok(PrototypeSet { values, counts })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Similarity {
    #[default]
    Dot,
    Cosine,
    /// Negative squared Euclidean distance.
    NegSqEuclidean,
}

const COSINE_EPS: f64 = 1e-12;

/// `n × L` scores between query rows and prototype rows.
pub fn emission_scores(
    tape: &mut Tape,
    query: Var,
    prototypes: Var,
    similarity: Similarity,
) -> Result<Var> {
    let (q, c) = (tape.value(query), tape.value(prototypes));
    if q.cols() != c.cols() {
        return Err(Error::shape(
            "emission_scores",
            format!("query d_h {} vs prototype d_h {}", q.cols(), c.cols()),
        ));
    }
    let (n, labels, d) = (q.rows(), c.rows(), q.cols());
    match similarity {
        Similarity::Dot => {
            let ct = tape.transpose(prototypes)?;
            tape.matmul(query, ct)
        }
        Similarity::Cosine => {
            let qn = unit_rows(tape, query, d)?;
            let cn = unit_rows(tape, prototypes, d)?;
            let ct = tape.transpose(cn)?;
            tape.matmul(qn, ct)
        }
        Similarity::NegSqEuclidean => {
            let qq = row_sq_norms(tape, query, d)?; // n × 1
            let cc = row_sq_norms(tape, prototypes, d)?; // L × 1
            let ones_l = tape.constant(Tensor::filled(1, labels, 1.0));
            let ones_n = tape.constant(Tensor::filled(n, 1, 1.0));
            let qq = tape.matmul(qq, ones_l)?;
            let cct = tape.transpose(cc)?;
            let cc = tape.matmul(ones_n, cct)?;
            let ct = tape.transpose(prototypes)?;
            let cross = tape.matmul(query, ct)?;
            let cross = tape.scale(cross, 2.0)?;
            let sq = tape.add(qq, cc)?;
            tape.sub(cross, sq)
        }
    }
}

fn row_sq_norms(tape: &mut Tape, x: Var, d: usize) -> Result<Var> {
    let sq = tape.mul(x, x)?;
    let ones = tape.constant(Tensor::filled(d, 1, 1.0));
    tape.matmul(sq, ones)
}

fn unit_rows(tape: &mut Tape, x: Var, d: usize) -> Result<Var> {
    let rows = tape.value(x).rows();
    let norms = row_sq_norms(tape, x, d)?;
    let eps = tape.constant(Tensor::filled(rows, 1, COSINE_EPS));
    let norms = tape.add(norms, eps)?;
    let log = tape.log(norms)?;
    let inv = tape.scale(log, -0.5)?;
    let inv = tape.exp(inv)?;
    let ones = tape.constant(Tensor::filled(1, d, 1.0));
    let inv = tape.matmul(inv, ones)?;
    tape.mul(x, inv)
}

/// One-hot `n × L` mask selecting `labels`.
pub fn label_mask(labels: &[usize], num_labels: usize) -> Result<Tensor> {
    let mut mask = Tensor::zeros(labels.len(), num_labels);
    for (t, &l) in labels.iter().enumerate() {
        if l >= num_labels {
            return Err(Error::InvalidLabel {
                index: l,
                count: num_labels,
            });
        }
        mask.set(t, l, 1.0);
    }
    Ok(mask)
}

/// Sum over positions of the emission entry of each position's label.
pub fn sequence_emission(tape: &mut Tape, emissions: Var, labels: &[usize]) -> Result<Var> {
    let e = tape.value(emissions);
    if e.rows() != labels.len() {
        return Err(Error::InvalidLabel {
            index: labels.len(),
            count: e.rows(),
        });
    }
    let mask = label_mask(labels, e.cols())?;
    let mask = tape.constant(mask);
    let picked = tape.mul(emissions, mask)?;
    tape.sum(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, rows: &[Vec<f64>]) -> Var {
        tape.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn prototype_means_and_zero_rows() {
        let mut tape = Tape::new();
        let h1 = leaf(&mut tape, &[vec![1.0, 0.0], vec![4.0, 4.0]]);
        let h2 = leaf(&mut tape, &[vec![0.0, 1.0]]);
        let l1 = [1usize, 0];
        let l2 = [1usize];
        let p = compute_prototypes(&mut tape, &[(h1, &l1), (h2, &l2)], 3).unwrap();
        let v = tape.value(p.values);
        assert_eq!(v.row_slice(0), &[4.0, 4.0]);
        assert_eq!(v.row_slice(1), &[0.5, 0.5]);
        assert_eq!(v.row_slice(2), &[0.0, 0.0]);
        assert_eq!(p.counts, vec![1, 2, 0]);
        assert_eq!(p.missing(), vec![2]);
    }

    #[test]
    fn prototype_dimension_mismatch() {
        let mut tape = Tape::new();
        let h1 = leaf(&mut tape, &[vec![1.0, 0.0]]);
        let h2 = leaf(&mut tape, &[vec![0.0, 1.0, 2.0]]);
        let l = [0usize];
        assert!(matches!(
            compute_prototypes(&mut tape, &[(h1, &l), (h2, &l)], 1),
            Err(Error::InvalidShape { .. })
        ));
    }

    #[test]
    fn dot_emission_cases() {
        let mut tape = Tape::new();
        let q = leaf(&mut tape, &[vec![1.0, 0.0], vec![3.0, 4.0]]);
        let c = leaf(&mut tape, &[vec![0.0, 2.0], vec![3.0, 4.0], vec![0.0, 0.0]]);
        let e = emission_scores(&mut tape, q, c, Similarity::Dot).unwrap();
        let e = tape.value(e);
        assert_eq!(e.get(0, 0), 0.0); // orthogonal
        assert_eq!(e.get(1, 1), 25.0); // h = c
        assert_eq!((e.get(0, 2), e.get(1, 2)), (0.0, 0.0)); // zero prototype
    }

    #[test]
    fn cosine_and_euclidean() {
        let mut tape = Tape::new();
        let q = leaf(&mut tape, &[vec![3.0, 4.0]]);
        let c = leaf(&mut tape, &[vec![6.0, 8.0], vec![0.0, 1.0]]);
        let cos = emission_scores(&mut tape, q, c, Similarity::Cosine).unwrap();
        let cos = tape.value(cos).clone();
        assert!((cos.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((cos.get(0, 1) - 0.8).abs() < 1e-12);
        let euc = emission_scores(&mut tape, q, c, Similarity::NegSqEuclidean).unwrap();
        let euc = tape.value(euc);
        assert!((euc.get(0, 0) + 25.0).abs() < 1e-12);
        assert!((euc.get(0, 1) + 18.0).abs() < 1e-12);
    }

    #[test]
    fn sequence_emission_cases() {
        let mut tape = Tape::new();
        let e = leaf(&mut tape, &[vec![0.5, -1.0, 2.0]]);
        let s = sequence_emission(&mut tape, e, &[2]).unwrap();
        assert_eq!(tape.value(s).item(), Some(2.0));

        let e = leaf(&mut tape, &[vec![1.0, 9.0], vec![2.0, 9.0], vec![-4.0, 9.0]]);
        let s = sequence_emission(&mut tape, e, &[0, 0, 0]).unwrap();
        assert_eq!(tape.value(s).item(), Some(-1.0));

        assert!(matches!(
            sequence_emission(&mut tape, e, &[0, 2, 0]),
            Err(Error::InvalidLabel { index: 2, count: 2 })
        ));
    }
}
