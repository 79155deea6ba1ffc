//! Partial binary cross-entropy and the combined training objective.

use crate::labels::LabelMatrix;
use crate::numerics::{NumericsError, Tape, Tensor, Var};
use crate::Result;

/// Scores are clamped into `[SCORE_CLAMP, 1 - SCORE_CLAMP]` before the log.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Default weight of the contrastive term.
pub const DEFAULT_LAMBDA: f64 = 0.05;

/// Per-sample cross-entropy over weighted entries, normalized by each
/// sample's weight count, then averaged over the batch.
///
/// `targets` and `scores` are `B x C`; `weights` is flat `B x C` with 1 at
/// known or soft entries and 0 at unknown ones. A sample without weighted
/// entries contributes 0.
pub fn partial_bce_batch(tape: &mut Tape, scores: Var, targets: Var, weights: &[f64]) -> Result<Var, NumericsError> {
    let shape = tape.shape(scores).to_vec();
    if shape.len() != 2 || tape.shape(targets) != shape.as_slice() || weights.len() != shape[0] * shape[1] {
        return Err(NumericsError::Shape {
            op: "partial_bce",
            left: shape,
            right: tape.shape(targets).to_vec(),
        });
    }
    let (batch, c) = (shape[0], shape[1]);
    let clamped = tape.clamp(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)?;
    let log_s = tape.log(clamped)?;
    let rest = tape.one_minus(clamped)?;
    let log_rest = tape.log(rest)?;
    let pos = tape.mul(targets, log_s)?;
    let target_rest = tape.one_minus(targets)?;
    let neg = tape.mul(target_rest, log_rest)?;
    let likelihood = tape.add(pos, neg)?;
    let w = tape.constant(Tensor::new(vec![batch, c], weights.to_vec())?);
    let masked = tape.mul(likelihood, w)?;
    let per_sample = tape.sum_last(masked)?;
    let inv_counts: Vec<f64> = weights
        .chunks(c.max(1))
        .map(|row| {
            let count: f64 = row.iter().sum();
            if count > 0.0 {
                1.0 / count
            } else {
                0.0
            }
        })
        .collect();
    let inv = tape.constant(Tensor::new(vec![batch], inv_counts)?);
    let normalized = tape.mul(per_sample, inv)?;
    let mean = tape.mean(normalized)?;
    tape.scale(mean, -1.0)
}

/// Batch loss against fixed encoded labels.
pub fn partial_bce_labels(tape: &mut Tape, scores: Var, labels: &LabelMatrix) -> Result<Var> {
    let targets = tape.constant(Tensor::new(vec![labels.rows(), labels.cols()], labels.targets())?);
    Ok(partial_bce_batch(tape, scores, targets, &labels.weights())?)
}

/// Loss of a single label vector `y` against scores `s`.
pub fn partial_bce(y: &[f64], s: &[f64]) -> Result<f64> {
    let labels = LabelMatrix::new(1, y.len(), y.to_vec())?;
    let mut tape = Tape::no_grad();
    let scores = tape.constant(Tensor::new(vec![1, s.len()], s.to_vec())?);
    let loss = partial_bce_labels(&mut tape, scores, &labels)?;
    Ok(tape.value(loss).data()[0])
}

/// Sum of the active branch losses (each already a batch mean).
pub fn classification_loss(tape: &mut Tape, branches: &[Var]) -> Result<Var, NumericsError> {
    let mut iter = branches.iter();
    let Some(&first) = iter.next() else {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    };
    iter.try_fold(first, |acc, &b| tape.add(acc, b))
}

pub fn total_loss(tape: &mut Tape, cls: Var, cst: Option<Var>, lambda: f64) -> Result<Var, NumericsError> {
    match cst {
        Some(cst) => {
            let weighted = tape.scale(cst, lambda)?;
            tape.add(cls, weighted)
        }
        None => Ok(cls),
    }
}

/// Scalar losses of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub main: f64,
    pub ilrb: f64,
    pub plrb: f64,
    pub cls: f64,
    pub cst: f64,
    pub total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_entries_only() {
        let loss = partial_bce(&[1.0, -1.0, 0.0], &[0.5, 0.5, 0.9]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_approaches_zero() {
        let loss = partial_bce(&[1.0], &[1.0 - 1e-9]).unwrap();
        assert!(loss < 1e-6 + 1e-9);
    }

    #[test]
    fn soft_target_minimized_at_target() {
        let at = partial_bce(&[0.5], &[0.5]).unwrap();
        assert!((at - std::f64::consts::LN_2).abs() < 1e-12);
        for s in [0.1, 0.3, 0.49, 0.51, 0.7, 0.9] {
            assert!(partial_bce(&[0.5], &[s]).unwrap() > at);
        }
    }

    #[test]
    fn combined_objective() {
        let mut tape = Tape::new();
        let cls = tape.constant(Tensor::scalar(1.0));
        let cst = tape.constant(Tensor::scalar(2.0));
        let total = total_loss(&mut tape, cls, Some(cst), DEFAULT_LAMBDA).unwrap();
        assert!((tape.value(total).item().unwrap() - 1.1).abs() < 1e-15);
        let zero = tape.constant(Tensor::scalar(0.0));
        let total = total_loss(&mut tape, cls, Some(zero), DEFAULT_LAMBDA).unwrap();
        assert_eq!(tape.value(total).item(), Some(1.0));
    }

    #[test]
    fn identical_branches_triple_the_loss() {
        let mut tape = Tape::new();
        let labels = LabelMatrix::from_rows(&[vec![1.0, 0.0, -1.0]]).unwrap();
        let s = tape.constant(Tensor::new(vec![1, 3], vec![0.3, 0.6, 0.2]).unwrap());
        let one = partial_bce_labels(&mut tape, s, &labels).unwrap();
        let three = classification_loss(&mut tape, &[one, one, one]).unwrap();
        let single = tape.value(one).item().unwrap();
        assert!((tape.value(three).item().unwrap() - 3.0 * single).abs() < 1e-15);
        let only = classification_loss(&mut tape, &[one]).unwrap();
        assert_eq!(tape.value(only).item(), Some(single));
    }
}
