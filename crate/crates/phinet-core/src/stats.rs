//! Evaluation statistics: accuracy, confusion counts, and McNemar's paired
//! test with both the continuity-corrected chi-square p-value and the exact
//! binomial p-value.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub fraction: f64,
    pub correct: usize,
    pub total: usize,
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<Accuracy, CoreError> {
    if predictions.is_empty() {
        return Err(CoreError::InvalidData("empty evaluation set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(Accuracy {
        fraction: correct as f64 / predictions.len() as f64,
        correct,
        total: predictions.len(),
    })
}

/// Two-decimal percent rendering used in every report.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    /// counts[i * classes + j] = items of true class i predicted as j
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(
        predictions: &[usize],
        labels: &[usize],
        classes: usize,
    ) -> Result<Self, CoreError> {
        if predictions.len() != labels.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} predictions vs {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut counts = vec![0usize; classes * classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= classes || l >= classes {
                return Err(CoreError::InvalidData(format!(
                    "class index out of range: predicted {p}, true {l}, K={classes}"
                )));
            }
            counts[l * classes + p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> usize {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes).map(|i| self.count(i, i)).sum()
    }

    /// Per-class recall; None for classes with no items.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|i| {
                let row: usize = (0..self.classes).map(|j| self.count(i, j)).sum();
                (row > 0).then(|| self.count(i, i) as f64 / row as f64)
            })
            .collect()
    }

    pub fn rows(&self) -> &[usize] {
        &self.counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McNemarResult {
    /// Items method A got wrong and method B got right.
    pub b: usize,
    /// Items method A got right and method B got wrong.
    pub c: usize,
    pub statistic: f64,
    pub chi2_p: f64,
    pub exact_p: f64,
}

/// Survival function of the 1-degree chi-square distribution,
/// P(X > x) = erfc(sqrt(x/2)).
pub fn chi2_sf_1df(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc(libm::sqrt(x / 2.0))
}

fn binomial_u128(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Two-sided exact binomial tail, 2 * P(X <= min(b,c)) for X ~ B(b+c, 1/2),
/// clamped to 1. Integer binomials keep the small-n case bit-exact; the
/// log-space path covers n past u128 range.
pub fn mcnemar_exact_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let m = b.min(c);
    if n <= 120 {
        let mut tail: u128 = 0;
        for k in 0..=m {
            tail += binomial_u128(n, k);
        }
        let p = 2.0 * (tail as f64) / libm::pow(2.0, n as f64);
        p.min(1.0)
    } else {
        // term_0 = 2^-n, term_{k+1} = term_k * (n-k)/(k+1)
        let mut term = libm::exp(-(n as f64) * core::f64::consts::LN_2);
        let mut tail = term;
        for k in 0..m {
            term *= (n - k) as f64 / (k + 1) as f64;
            tail += term;
        }
        (2.0 * tail).min(1.0)
    }
}

/// Paired comparison of two classifiers over the same items. Inputs are
/// per-item correctness flags in identical order.
pub fn mcnemar_test(a_correct: &[bool], b_correct: &[bool]) -> Result<McNemarResult, CoreError> {
    if a_correct.len() != b_correct.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "paired test needs equal lengths, got {} vs {}",
            a_correct.len(),
            b_correct.len()
        )));
    }
    if a_correct.is_empty() {
        return Err(CoreError::InvalidData("empty evaluation set".into()));
    }
    let mut b = 0usize;
    let mut c = 0usize;
    for (&a_ok, &b_ok) in a_correct.iter().zip(b_correct) {
        match (a_ok, b_ok) {
            (false, true) => b += 1,
            (true, false) => c += 1,
            _ => {}
        }
    }
    let statistic = if b + c > 0 {
        let d = (b as f64 - c as f64).abs() - 1.0;
        d * d / (b + c) as f64
    } else {
        0.0
    };
    Ok(McNemarResult {
        b,
        c,
        statistic,
        chi2_p: chi2_sf_1df(statistic),
        exact_p: mcnemar_exact_p(b as u64, c as u64),
    })
}
