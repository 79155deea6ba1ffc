//! Instance-level representation blending.
//!
//! Sample `n` is paired with `m = perm(n)` from the same minibatch. Wherever
//! `n`'s label for category `c` is unknown and `m`'s is known positive, the
//! representation becomes `a f_n + (1 - a) f_m` and the label the soft target
//! `1 - a`. Every other entry passes through untouched.

use rand::seq::SliceRandom;

use crate::labels::LabelMatrix;
use crate::numerics::{NumericsError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::{self, purpose};
use crate::{Error, Result};

/// Per-category blend coefficients kept in `(0, 1)` through a sigmoid, or a
/// fixed value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlendCoefficients {
    /// `raw` has length `C`, or length 1 when one coefficient is shared.
    Learnable {
        raw: ParamId,
    },
    Fixed(f64),
}

impl BlendCoefficients {
    /// Registers a raw vector initialized to zero (every coefficient 0.5)
    /// and exempt from weight decay.
    pub fn learnable(store: &mut ParamStore, name: &str, categories: usize, shared: bool) -> Self {
        let len = if shared { 1 } else { categories };
        let raw = store.add(name, Tensor::zeros(&[len]));
        store.get_mut(raw).decay = false;
        Self::Learnable { raw }
    }

    pub fn fixed(value: f64) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::Config(format!("fixed blend coefficient {value} outside (0, 1]")));
        }
        Ok(Self::Fixed(value))
    }

    /// Effective coefficients as a rank-1 node of length `C` or 1.
    pub fn effective(&self, tape: &mut Tape, store: &ParamStore) -> Result<Var, NumericsError> {
        match *self {
            Self::Learnable { raw } => {
                let raw = tape.param(store, raw);
                tape.sigmoid(raw)
            }
            Self::Fixed(v) => Ok(tape.constant(Tensor::full(&[1], v))),
        }
    }

    /// Effective coefficient for each of `categories` categories.
    pub fn values(&self, store: &ParamStore, categories: usize) -> Vec<f64> {
        let mut tape = Tape::no_grad();
        let v = self.effective(&mut tape, store).expect("sigmoid of finite values");
        let data = tape.value(v).data();
        (0..categories).map(|c| data[c % data.len()]).collect()
    }
}

/// Output of a blending module for one minibatch.
#[derive(Clone, Debug)]
pub struct BlendedBatch {
    /// `B x C x D` blended representations.
    pub reps: Var,
    /// `B x C` cross-entropy targets; soft entries depend on the coefficients.
    pub targets: Var,
    /// Encoded labels after blending.
    pub labels: LabelMatrix,
    /// `B x C`, true where blending fired.
    pub mask: Vec<bool>,
}

impl BlendedBatch {
    pub fn blended_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// A uniformly random fixed-point-free permutation of `0..batch_size`,
/// determined by `(seed, step)`.
pub fn pair_assignment(batch_size: usize, seed: u64, step: u64) -> Result<Vec<usize>> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "pairing needs a batch of at least 2, got {batch_size}"
        )));
    }
    let mut rng = rng::stream(seed, &[purpose::PAIRS, step]);
    let mut perm: Vec<usize> = (0..batch_size).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

/// Single-entry blend: `(a f_n + (1 - a) f_m, 1 - a)` when `y_n` is unknown
/// and `y_m` positive, `(f_n, y_n)` otherwise.
pub fn blend_pair(f_n: &[f64], f_m: &[f64], y_n: f64, y_m: f64, alpha: f64) -> (Vec<f64>, f64) {
    if y_n == 0.0 && y_m == 1.0 {
        let rep = f_n
            .iter()
            .zip(f_m)
            .map(|(&a, &b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        (rep, 1.0 - alpha)
    } else {
        (f_n.to_vec(), y_n)
    }
}

pub(crate) fn blend_with_mask(
    tape: &mut Tape,
    reps: Var,
    other: Var,
    labels: &LabelMatrix,
    coeff: Var,
    mask: Vec<bool>,
) -> Result<BlendedBatch> {
    let shape = tape.shape(reps).to_vec();
    let (batch, c, d) = (shape[0], shape[1], shape[2]);
    let k = tape.shape(coeff)[0];
    if k != 1 && k != c {
        return Err(NumericsError::Shape {
            op: "blend",
            left: vec![k],
            right: vec![c],
        }
        .into());
    }
    let coeff3 = tape.reshape(coeff, &[1, k, 1])?;
    let rest3 = tape.one_minus(coeff3)?;
    let own = tape.mul(coeff3, reps)?;
    let theirs = tape.mul(rest3, other)?;
    let mixed = tape.add(own, theirs)?;
    let wide: Vec<bool> = mask.iter().flat_map(|&m| std::iter::repeat_n(m, d)).collect();
    let out = tape.select(&wide, mixed, reps)?;

    let coeff2 = tape.reshape(coeff, &[1, k])?;
    let soft = tape.one_minus(coeff2)?;
    let zeros = tape.constant(Tensor::zeros(&[batch, c]));
    let soft = tape.add(soft, zeros)?;
    let base = tape.constant(Tensor::new(vec![batch, c], labels.targets())?);
    let targets = tape.select(&mask, soft, base)?;

    let soft_values = tape.value(soft).data();
    let values = labels
        .values()
        .iter()
        .zip(&mask)
        .zip(soft_values)
        .map(|((&y, &m), &s)| if m { s } else { y })
        .collect();
    let labels = LabelMatrix::new(batch, c, values)?;
    Ok(BlendedBatch {
        reps: out,
        targets,
        labels,
        mask,
    })
}

/// Matrix form of [`blend_pair`] over a whole batch.
pub fn blend_batch(
    tape: &mut Tape,
    reps: Var,
    labels: &LabelMatrix,
    coeff: Var,
    perm: &[usize],
) -> Result<BlendedBatch> {
    let shape = tape.shape(reps).to_vec();
    if shape.len() != 3 || shape[0] != labels.rows() || shape[1] != labels.cols() {
        return Err(NumericsError::Shape {
            op: "blend_batch",
            left: shape,
            right: vec![labels.rows(), labels.cols()],
        }
        .into());
    }
    if perm.len() != labels.rows() || perm.iter().enumerate().any(|(i, &p)| p == i || p >= perm.len()) {
        return Err(Error::Config("pairing must be a derangement of the batch".into()));
    }
    let c = labels.cols();
    let mask = (0..labels.rows())
        .flat_map(|n| (0..c).map(move |j| (n, j)))
        .map(|(n, j)| labels.get(n, j) == 0.0 && labels.get(perm[n], j) == 1.0)
        .collect();
    let partner = tape.gather_rows(reps, perm)?;
    blend_with_mask(tape, reps, partner, labels, coeff, mask)
}
