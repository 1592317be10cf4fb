//! Double-part BIO labels, span extraction and exact-match micro F1.
//!
//! For `N` event types the label set is `O, B-t1, I-t1, ..., B-tN, I-tN`,
//! so `O` is always index 0 and type `k` owns indices `2k+1` (begin) and
//! `2k+2` (inside).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OUTSIDE: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    event_types: Vec<String>,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

/// Position part of a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

impl LabelSet {
    pub fn new<S: AsRef<str>>(event_types: &[S]) -> Result<Self> {
        let mut labels = Vec::with_capacity(2 * event_types.len() + 1);
        let mut index = HashMap::new();
        labels.push("O".to_owned());
        index.insert("O".to_owned(), OUTSIDE);
        let mut types = Vec::with_capacity(event_types.len());
        for t in event_types {
            let t = t.as_ref();
            if t.trim().is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidName(t.to_owned()));
            }
            if types.iter().any(|u: &String| u == t) {
                return Err(Error::DuplicateType(t.to_owned()));
            }
            types.push(t.to_owned());
            for prefix in ["B", "I"] {
                let name = format!("{prefix}-{t}");
                index.insert(name.clone(), labels.len());
                labels.push(name);
            }
        }
        Ok(Self {
            event_types: types,
            labels,
            index,
        })
    }

    pub fn event_types(&self) -> &[String] {
        &self.event_types
    }

    pub fn num_types(&self) -> usize {
        self.event_types.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn type_index(&self, event_type: &str) -> Option<usize> {
        self.event_types.iter().position(|t| t == event_type)
    }

    pub fn begin(&self, type_index: usize) -> usize {
        2 * type_index + 1
    }

    pub fn inside(&self, type_index: usize) -> usize {
        2 * type_index + 2
    }

    pub fn tag(&self, index: usize) -> Tag {
        match index {
            OUTSIDE => Tag::Outside,
            i if i % 2 == 1 => Tag::Begin((i - 1) / 2),
            i => Tag::Inside((i - 2) / 2),
        }
    }

    pub fn check(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(Error::InvalidLabel {
                index,
                count: self.len(),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<usize>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, labels: Vec<usize>, set: &LabelSet) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(Error::shape(
                "tagged_sentence",
                format!("{} tokens vs {} labels", tokens.len(), labels.len()),
            ));
        }
        for &l in &labels {
            set.check(l)?;
        }
        Ok(Self { tokens, labels })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn spans(&self, set: &LabelSet) -> Vec<TriggerSpan> {
        labels_to_spans(&self.labels, set)
    }
}

/// Trigger occupying tokens `start..end`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TriggerSpan {
    pub start: usize,
    pub end: usize,
    pub event_type: String,
}

/// Reads spans off a label sequence.
///
/// `B-t` opens a span, following `I-t` extend it. An `I-t` that does not
/// continue a span of type `t` opens a new one.
pub fn labels_to_spans(labels: &[usize], set: &LabelSet) -> Vec<TriggerSpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (pos, &label) in labels.iter().enumerate() {
        let tag = set.tag(label);
        let continues = matches!((tag, open), (Tag::Inside(t), Some((_, u))) if t == u);
        if continues {
            continue;
        }
        if let Some((start, t)) = open.take() {
            spans.push(span(set, start, pos, t));
        }
        match tag {
            Tag::Outside => {}
            Tag::Begin(t) | Tag::Inside(t) => open = Some((pos, t)),
        }
    }
    if let Some((start, t)) = open {
        spans.push(span(set, start, labels.len(), t));
    }
    spans
}

fn span(set: &LabelSet, start: usize, end: usize, t: usize) -> TriggerSpan {
    TriggerSpan {
        start,
        end,
        event_type: set.event_types()[t].clone(),
    }
}

/// Inverse of [`labels_to_spans`] for non-overlapping spans.
pub fn spans_to_labels(n: usize, spans: &[TriggerSpan], set: &LabelSet) -> Result<Vec<usize>> {
    let mut labels = vec![OUTSIDE; n];
    for s in spans {
        if !(s.start < s.end && s.end <= n) {
            return Err(Error::shape(
                "spans_to_labels",
                format!("span {}..{} outside sentence of {n} tokens", s.start, s.end),
            ));
        }
        let t = set
            .type_index(&s.event_type)
            .ok_or_else(|| Error::UnknownLabel(s.event_type.clone()))?;
        labels[s.start] = set.begin(t);
        for l in &mut labels[s.start + 1..s.end] {
            *l = set.inside(t);
        }
    }
    Ok(labels)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            true_positives,
            predicted,
            gold,
        }
    }
}

/// Micro-averaged exact-match scores: a prediction is correct only when
/// start, end and event type all equal a not-yet-matched gold span of the
/// same sentence.
pub fn micro_f1(predicted: &[Vec<TriggerSpan>], gold: &[Vec<TriggerSpan>]) -> Result<Prf> {
    if predicted.len() != gold.len() {
        return Err(Error::CorpusMismatch {
            predicted: predicted.len(),
            gold: gold.len(),
        });
    }
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (pred, gold) in predicted.iter().zip(gold) {
        n_pred += pred.len();
        n_gold += gold.len();
        let mut used = vec![false; gold.len()];
        for p in pred {
            if let Some(i) = (0..gold.len()).find(|&i| !used[i] && gold[i] == *p) {
                used[i] = true;
                tp += 1;
            }
        }
    }
    Ok(Prf::from_counts(tp, n_pred, n_gold))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> LabelSet {
        LabelSet::new(&["Marry", "Jail", "Trans"]).unwrap()
    }

    fn seq(set: &LabelSet, names: &[&str]) -> Vec<usize> {
        names.iter().map(|n| set.index_of(n).unwrap()).collect()
    }

    fn sp(start: usize, end: usize, t: &str) -> TriggerSpan {
        TriggerSpan {
            start,
            end,
            event_type: t.into(),
        }
    }

    #[test]
    fn label_counts() {
        let names = |n: usize| (0..n).map(|i| format!("T{i}")).collect::<Vec<_>>();
        assert_eq!(LabelSet::new(&names(5)).unwrap().len(), 11);
        assert_eq!(LabelSet::new(&names(10)).unwrap().len(), 21);
        let empty = LabelSet::new::<&str>(&[]).unwrap();
        assert_eq!(empty.labels(), &["O".to_owned()]);
    }

    #[test]
    fn label_order_and_lookup() {
        let s = set();
        assert_eq!(
            s.labels(),
            &["O", "B-Marry", "I-Marry", "B-Jail", "I-Jail", "B-Trans", "I-Trans"]
        );
        for (i, l) in s.labels().iter().enumerate() {
            assert_eq!(s.index_of(l), Some(i));
        }
        assert_eq!(s.tag(3), Tag::Begin(1));
        assert_eq!(s.tag(6), Tag::Inside(2));
    }

    #[test]
    fn bad_type_names() {
        assert!(matches!(
            LabelSet::new(&["A", "A"]),
            Err(Error::DuplicateType(t)) if t == "A"
        ));
        assert!(matches!(LabelSet::new(&["A", ""]), Err(Error::InvalidName(_))));
    }

    #[test]
    fn spans_from_labels() {
        let s = set();
        assert_eq!(
            labels_to_spans(&seq(&s, &["O", "B-Marry", "O"]), &s),
            vec![sp(1, 2, "Marry")]
        );
        assert_eq!(
            labels_to_spans(&seq(&s, &["B-Jail", "I-Jail", "O"]), &s),
            vec![sp(0, 2, "Jail")]
        );
        assert_eq!(
            labels_to_spans(&seq(&s, &["O", "I-Trans", "O"]), &s),
            vec![sp(1, 2, "Trans")]
        );
        // I of another type closes the running span
        assert_eq!(
            labels_to_spans(&seq(&s, &["B-Jail", "I-Trans", "I-Trans"]), &s),
            vec![sp(0, 1, "Jail"), sp(1, 3, "Trans")]
        );
        // consecutive B's are separate triggers
        assert_eq!(
            labels_to_spans(&seq(&s, &["B-Jail", "B-Jail", "I-Jail"]), &s),
            vec![sp(0, 1, "Jail"), sp(1, 3, "Jail")]
        );
    }

    #[test]
    fn f1_cases() {
        let gold = vec![vec![sp(0, 1, "A"), sp(3, 5, "B")]];
        let one = micro_f1(&[vec![sp(0, 1, "A")]], &gold).unwrap();
        assert_eq!((one.precision, one.recall), (1.0, 0.5));
        assert!((one.f1 - 2.0 / 3.0).abs() < 1e-15);

        let perfect = micro_f1(&gold, &gold).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));

        let none = micro_f1(&[vec![]], &gold).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));

        // duplicated predictions match a gold span only once
        let dup = micro_f1(&[vec![sp(0, 1, "A"), sp(0, 1, "A")]], &gold).unwrap();
        assert_eq!((dup.true_positives, dup.predicted), (1, 2));

        assert!(matches!(
            micro_f1(&[vec![], vec![]], &gold),
            Err(Error::CorpusMismatch { predicted: 2, gold: 1 })
        ));
    }
}
