use serde::{Deserialize, Serialize};

use crate::error::{GlenError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub weighted: f64,
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_: f64,
}

impl F1Scores {
    /// Component-wise arithmetic mean.
    pub fn mean(scores: &[F1Scores]) -> F1Scores {
        if scores.is_empty() {
            return F1Scores::default();
        }
        let n = scores.len() as f64;
        F1Scores {
            weighted: scores.iter().map(|s| s.weighted).sum::<f64>() / n,
            micro: scores.iter().map(|s| s.micro).sum::<f64>() / n,
            macro_: scores.iter().map(|s| s.macro_).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn f1(&self) -> f64 {
        f1(self.tp, self.fp, self.fn_)
    }
}

/// `2tp / (2tp + fp + fn)`, which equals the harmonic mean of precision and
/// recall whenever both are defined; 0 when nothing was predicted or present.
fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

pub fn class_counts(predictions: &[Vec<u8>], truths: &[Vec<u8>], classes: usize) -> Result<Vec<ClassCounts>> {
    if predictions.is_empty() {
        return Err(GlenError::Invalid("F1 of an empty prediction set".into()));
    }
    if predictions.len() != truths.len() {
        return Err(GlenError::shape("f1_suite", &[predictions.len()], &[truths.len()]));
    }
    let mut counts = vec![ClassCounts::default(); classes];
    for (p, t) in predictions.iter().zip(truths) {
        if p.len() != classes || t.len() != classes {
            return Err(GlenError::shape("f1_suite", &[p.len(), t.len()], &[classes]));
        }
        for (c, (&pc, &tc)) in counts.iter_mut().zip(p.iter().zip(t)) {
            match (pc != 0, tc != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(counts)
}

/// Weighted, micro and macro F1 over 0/1 label vectors.
pub fn f1_suite(predictions: &[Vec<u8>], truths: &[Vec<u8>], classes: usize) -> Result<F1Scores> {
    let counts = class_counts(predictions, truths, classes)?;
    let per_class: Vec<f64> = counts.iter().map(ClassCounts::f1).collect();
    let support: u64 = counts.iter().map(ClassCounts::support).sum();
    let weighted = if support == 0 {
        0.0
    } else {
        counts.iter().zip(&per_class).map(|(c, f)| c.support() as f64 * f).sum::<f64>() / support as f64
    };
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |(a, b, c), k| (a + k.tp, b + k.fp, c + k.fn_));
    Ok(F1Scores {
        weighted,
        micro: f1(tp, fp, fn_),
        macro_: per_class.iter().sum::<f64>() / classes.max(1) as f64,
    })
}

/// [`f1_suite`] for single-label class indices.
pub fn f1_from_indices(predictions: &[usize], truths: &[usize], classes: usize) -> Result<F1Scores> {
    let hot = |xs: &[usize]| -> Result<Vec<Vec<u8>>> {
        xs.iter()
            .map(|&c| {
                if c >= classes {
                    return Err(GlenError::TargetOutOfRange { target: c, classes });
                }
                let mut v = vec![0; classes];
                v[c] = 1;
                Ok(v)
            })
            .collect()
    };
    f1_suite(&hot(predictions)?, &hot(truths)?, classes)
}
