//! Balanced accuracy, ROUGE-1 and the easiness family.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::text::unigram_tokens;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("predictions ({predictions}) and golds ({golds}) differ in length")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("balanced accuracy is undefined: gold labels contain a single class")]
    SingleClass,
    #[error("easiness is undefined for an empty claim set")]
    EmptyClaimSet,
}

/// Binary confusion counts with `true` as the positive (factual) class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl Confusion {
    pub fn from_pairs(predictions: &[bool], golds: &[bool]) -> Result<Self, MetricError> {
        if predictions.len() != golds.len() {
            return Err(MetricError::LengthMismatch {
                predictions: predictions.len(),
                golds: golds.len(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &g) in predictions.iter().zip(golds) {
            c.record(p, g);
        }
        Ok(c)
    }

    pub fn record(&mut self, predicted: bool, gold: bool) {
        match (gold, predicted) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
        self.fp += other.fp;
    }

    pub fn recall_true(&self) -> Option<f64> {
        let support = self.tp + self.fn_;
        (support > 0).then(|| self.tp as f64 / support as f64)
    }

    pub fn recall_false(&self) -> Option<f64> {
        let support = self.tn + self.fp;
        (support > 0).then(|| self.tn as f64 / support as f64)
    }

    pub fn balanced_accuracy(&self) -> Result<f64, MetricError> {
        match (self.recall_true(), self.recall_false()) {
            (Some(t), Some(f)) => Ok((t + f) / 2.0),
            _ => Err(MetricError::SingleClass),
        }
    }
}

/// Mean of the per-class recalls.
pub fn balanced_accuracy(predictions: &[bool], golds: &[bool]) -> Result<f64, MetricError> {
    Confusion::from_pairs(predictions, golds)?.balanced_accuracy()
}

/// Unigram-overlap F1 over lowercased, punctuation-stripped tokens (clipped
/// multiset counts). Two empty inputs score 1, one empty input scores 0.
pub fn rouge1_f1(candidate: &str, reference: &str) -> f64 {
    let cand = unigram_tokens(candidate);
    let refs = unigram_tokens(reference);
    match (cand.is_empty(), refs.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &refs {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &cand {
        if let Some(n) = counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    // 2PR/(P+R) reduced to a single division, so simple ratios come out exact.
    (2 * overlap) as f64 / (cand.len() + refs.len()) as f64
}

fn mean_best_match<A: AsRef<str>, B: AsRef<str>>(
    queries: &[A],
    targets: &[B],
    score: impl Fn(&str, &str) -> f64,
) -> Result<f64, MetricError> {
    if queries.is_empty() || targets.is_empty() {
        return Err(MetricError::EmptyClaimSet);
    }
    let total: f64 = queries
        .iter()
        .map(|q| {
            targets
                .iter()
                .map(|t| score(q.as_ref(), t.as_ref()))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / queries.len() as f64)
}

/// Average, over generated claims, of the best ROUGE-1 against any gold claim.
pub fn easiness_p<A: AsRef<str>, B: AsRef<str>>(
    generated: &[A],
    gold: &[B],
) -> Result<f64, MetricError> {
    mean_best_match(generated, gold, rouge1_f1)
}

/// Average, over gold claims, of the best ROUGE-1 against any generated claim.
pub fn easiness_r<A: AsRef<str>, B: AsRef<str>>(
    generated: &[A],
    gold: &[B],
) -> Result<f64, MetricError> {
    mean_best_match(gold, generated, |g, c| rouge1_f1(c, g))
}

pub fn easiness_f1<A: AsRef<str>, B: AsRef<str>>(
    generated: &[A],
    gold: &[B],
) -> Result<f64, MetricError> {
    let p = easiness_p(generated, gold)?;
    let r = easiness_r(generated, gold)?;
    Ok(if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    })
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_accuracy_cases() {
        let golds = [true, false, true, false];
        assert_eq!(balanced_accuracy(&golds, &golds).unwrap(), 1.0);

        let mut imbalanced = vec![true; 90];
        imbalanced.extend([false; 10]);
        assert_eq!(balanced_accuracy(&[true; 100], &imbalanced).unwrap(), 0.5);

        let c = Confusion {
            tp: 8,
            fn_: 2,
            tn: 6,
            fp: 4,
        };
        assert!((c.balanced_accuracy().unwrap() - 0.7).abs() < 1e-15);

        assert_eq!(
            balanced_accuracy(&[true, true], &[true, true]),
            Err(MetricError::SingleClass)
        );
        assert!(matches!(
            balanced_accuracy(&[true], &[true, false]),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn rouge_cases() {
        assert_eq!(rouge1_f1("a b c", "a b c"), 1.0);
        assert!((rouge1_f1("a b c", "a b d") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rouge1_f1("", "x"), 0.0);
        assert_eq!(rouge1_f1("x", ""), 0.0);
        assert_eq!(rouge1_f1("", ""), 1.0);
        assert_eq!(rouge1_f1("The CAT.", "the cat"), 1.0);
    }

    #[test]
    fn easiness_cases() {
        let c = ["a b"];
        let gold = ["a b", "zz"];
        assert_eq!(easiness_p(&c, &gold).unwrap(), 1.0);
        assert_eq!(easiness_r(&c, &gold).unwrap(), 0.5);
        assert!((easiness_f1(&c, &gold).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(easiness_f1(&gold, &gold).unwrap(), 1.0);
        assert_eq!(easiness_f1(&["x"], &["y"]).unwrap(), 0.0);
        assert_eq!(
            easiness_p::<&str, &str>(&[], &["a"]),
            Err(MetricError::EmptyClaimSet)
        );
    }

    #[test]
    fn mean_std_sample() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn claim() -> impl Strategy<Value = String> {
            proptest::collection::vec("[a-e]{1,2}", 0..6).prop_map(|w| w.join(" "))
        }

        proptest! {
            #[test]
            fn balanced_accuracy_permutation_invariant(
                pairs in proptest::collection::vec(any::<(bool, bool)>(), 2..50),
                rot in 0usize..50,
            ) {
                let (p, g): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
                prop_assume!(g.contains(&true) && g.contains(&false));
                let mut rotated = pairs.clone();
                rotated.rotate_left(rot % pairs.len());
                rotated.reverse();
                let (p2, g2): (Vec<bool>, Vec<bool>) = rotated.into_iter().unzip();
                prop_assert_eq!(balanced_accuracy(&p, &g).unwrap(), balanced_accuracy(&p2, &g2).unwrap());
            }

            #[test]
            fn easiness_symmetry_and_range(
                c in proptest::collection::vec(claim(), 1..5),
                g in proptest::collection::vec(claim(), 1..5),
            ) {
                prop_assert_eq!(easiness_p(&c, &g).unwrap(), easiness_r(&g, &c).unwrap());
                let f1 = easiness_f1(&c, &g).unwrap();
                prop_assert!((0.0..=1.0).contains(&f1));
            }

            #[test]
            fn rouge_symmetric_and_bounded(a in claim(), b in claim()) {
                let ab = rouge1_f1(&a, &b);
                prop_assert_eq!(ab, rouge1_f1(&b, &a));
                prop_assert!((0.0..=1.0).contains(&ab));
            }
        }
    }
}
