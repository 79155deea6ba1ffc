//! Input-level mixup baseline.

use rand::Rng;
use rand_distr::Beta;

use crate::labels::{target_of, LabelMatrix};
use crate::numerics::Tensor;
use crate::rng::{self, purpose};
use crate::{Error, Result};

/// Label of `w * n + (1 - w) * m`. Known-known entries mix their targets
/// and are re-encoded; any unknown side leaves the entry unknown unless its
/// weight is zero.
pub fn mix_label(y_n: f64, y_m: f64, w: f64) -> f64 {
    if w == 1.0 {
        return y_n;
    }
    if w == 0.0 {
        return y_m;
    }
    if y_n == 0.0 || y_m == 0.0 {
        return 0.0;
    }
    let t = w * target_of(y_n) + (1.0 - w) * target_of(y_m);
    if t == 1.0 {
        1.0
    } else if t == 0.0 {
        -1.0
    } else {
        t
    }
}

/// Blends sample `n` with `perm[n]` using weight `weights[n]`.
/// `features` is `B x ...`.
pub fn mix_batch(
    features: &Tensor,
    labels: &LabelMatrix,
    perm: &[usize],
    weights: &[f64],
) -> Result<(Tensor, LabelMatrix)> {
    let batch = labels.rows();
    if features.shape().first() != Some(&batch) || perm.len() != batch || weights.len() != batch {
        return Err(Error::Data("mixup inputs disagree on the batch size".into()));
    }
    let row = features.len() / batch.max(1);
    let src = features.data();
    let mut data = Vec::with_capacity(src.len());
    let mut values = Vec::with_capacity(labels.values().len());
    for n in 0..batch {
        let (w, m) = (weights[n], perm[n]);
        let a = &src[n * row..(n + 1) * row];
        let b = &src[m * row..(m + 1) * row];
        data.extend(a.iter().zip(b).map(|(&x, &y)| w * x + (1.0 - w) * y));
        values.extend(
            labels
                .row(n)
                .iter()
                .zip(labels.row(m))
                .map(|(&y_n, &y_m)| mix_label(y_n, y_m, w)),
        );
    }
    Ok((
        Tensor::new(features.shape().to_vec(), data)?,
        LabelMatrix::new(batch, labels.cols(), values)?,
    ))
}

/// One `Beta(a, a)` weight per sample, determined by `(seed, step)`.
pub fn mixup_weights(batch: usize, alpha_mix: f64, seed: u64, step: u64) -> Result<Vec<f64>> {
    let beta = Beta::new(alpha_mix, alpha_mix).map_err(|e| Error::Config(format!("mixup alpha {alpha_mix}: {e}")))?;
    let mut rng = rng::stream(seed, &[purpose::MIXUP, step]);
    Ok((0..batch).map(|_| rng.sample(beta)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_rules() {
        assert_eq!(mix_label(1.0, -1.0, 0.5), 0.5);
        assert_eq!(mix_label(1.0, 1.0, 0.3), 1.0);
        assert_eq!(mix_label(-1.0, -1.0, 0.3), -1.0);
        assert_eq!(mix_label(1.0, 0.0, 0.7), 0.0);
        assert_eq!(mix_label(0.0, 1.0, 1.0), 0.0);
        assert_eq!(mix_label(-1.0, 0.0, 1.0), -1.0);
    }

    #[test]
    fn half_weight_averages_maps() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let y = LabelMatrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let (mixed, labels) = mix_batch(&x, &y, &[1, 0], &[0.5, 0.5]).unwrap();
        assert_eq!(mixed.data(), &[2.0, 4.0, 2.0, 4.0]);
        assert_eq!(labels.values(), &[0.5, 0.5]);
    }

    #[test]
    fn unit_weight_is_identity() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = LabelMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let (mixed, labels) = mix_batch(&x, &y, &[1, 0], &[1.0, 1.0]).unwrap();
        assert_eq!(mixed, x);
        assert_eq!(labels, y);
    }

    #[test]
    fn weights_are_deterministic_and_in_range() {
        let a = mixup_weights(64, 1.0, 3, 9).unwrap();
        assert_eq!(a, mixup_weights(64, 1.0, 3, 9).unwrap());
        assert!(a.iter().all(|w| (0.0..=1.0).contains(w)));
        assert!(mixup_weights(4, 0.0, 0, 0).is_err());
    }
}
