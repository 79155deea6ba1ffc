//! Cosine contrastive loss between same-category representations.
//!
//! Pairs where both images are known positive for the category are pulled
//! together (`1 - cos`); every other admitted pair is pushed apart
//! (`1 + cos`).

use crate::labels::LabelMatrix;
use crate::numerics::{NumericsError, Tape, Tensor, Var, COSINE_EPS};
use crate::Result;

/// Which `(n, m, c)` terms enter the batch loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PairPolicy {
    /// Only pairs where both labels are known.
    #[default]
    KnownOnly,
    /// Every pair; unknown labels fall into the repelling branch.
    Literal,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / ((na + COSINE_EPS) * (nb + COSINE_EPS))).clamp(-1.0, 1.0)
}

/// Loss for one pair of same-category representations, in `[0, 2]`.
pub fn contrastive_pair(f_n: &[f64], f_m: &[f64], y_n: f64, y_m: f64) -> f64 {
    let cos = cosine(f_n, f_m);
    if y_n == 1.0 && y_m == 1.0 {
        1.0 - cos
    } else {
        1.0 + cos
    }
}

pub fn admits(policy: PairPolicy, y_n: f64, y_m: f64) -> bool {
    match policy {
        PairPolicy::KnownOnly => y_n != 0.0 && y_m != 0.0,
        PairPolicy::Literal => true,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ContrastiveLoss {
    /// Mean over admitted terms; a zero constant when none are admitted.
    pub loss: Var,
    pub terms: usize,
}

/// Mean of [`contrastive_pair`] over ordered pairs `n != m` and the
/// categories admitted by `policy`.
pub fn contrastive_batch(
    tape: &mut Tape,
    reps: Var,
    labels: &LabelMatrix,
    policy: PairPolicy,
) -> Result<ContrastiveLoss> {
    let shape = tape.shape(reps).to_vec();
    if shape.len() != 3 || shape[0] != labels.rows() || shape[1] != labels.cols() {
        return Err(NumericsError::Shape {
            op: "contrastive_batch",
            left: shape,
            right: vec![labels.rows(), labels.cols()],
        }
        .into());
    }
    let (batch, c) = (shape[0], shape[1]);
    let mut sign = vec![0.0; c * batch * batch];
    let mut weight = vec![0.0; c * batch * batch];
    let mut terms = 0;
    for cat in 0..c {
        for n in 0..batch {
            for m in 0..batch {
                let (y_n, y_m) = (labels.get(n, cat), labels.get(m, cat));
                if n == m || !admits(policy, y_n, y_m) {
                    continue;
                }
                let idx = (cat * batch + n) * batch + m;
                weight[idx] = 1.0;
                sign[idx] = if y_n == 1.0 && y_m == 1.0 { -1.0 } else { 1.0 };
                terms += 1;
            }
        }
    }
    if terms == 0 {
        return Ok(ContrastiveLoss {
            loss: tape.constant(Tensor::scalar(0.0)),
            terms,
        });
    }

    let squares = tape.mul(reps, reps)?;
    let sum_sq = tape.sum_last(squares)?;
    let norms = tape.sqrt(sum_sq)?;
    let norms = tape.add_scalar(norms, COSINE_EPS)?;
    let norms = tape.reshape(norms, &[batch, c, 1])?;
    let unit = tape.div(reps, norms)?;
    let by_category = tape.permute(unit, &[1, 0, 2])?;
    let transposed = tape.permute(unit, &[1, 2, 0])?;
    let gram = tape.bmm(by_category, transposed)?;
    let gram = tape.clamp(gram, -1.0, 1.0)?;
    let sign = tape.constant(Tensor::new(vec![c, batch, batch], sign)?);
    let signed = tape.mul(gram, sign)?;
    let pair_losses = tape.add_scalar(signed, 1.0)?;
    let weight = tape.constant(Tensor::new(vec![c, batch, batch], weight)?);
    let admitted = tape.mul(pair_losses, weight)?;
    let total = tape.sum(admitted)?;
    let loss = tape.scale(total, 1.0 / terms as f64)?;
    Ok(ContrastiveLoss { loss, terms })
}
