//! Prototype-level representation blending.
//!
//! Between refreshes, each category keeps `K` prototypes: K-means centroids
//! of the representations of its known-positive training samples. During a
//! step, every sample picks one unknown category with valid prototypes and
//! one prototype uniformly at random, and that entry becomes
//! `b f + (1 - b) p` with soft label `1 - b`.

mod contrastive;
pub mod kmeans;

use std::path::Path;

use rand::Rng;

pub use contrastive::{admits, contrastive_batch, contrastive_pair, cosine, ContrastiveLoss, PairPolicy};
pub use kmeans::{kmeans, KMeans, KMeansOptions};

use crate::csrl::Model;
use crate::data::Dataset;
use crate::ilrb::{blend_with_mask, BlendedBatch};
use crate::labels::LabelMatrix;
use crate::numerics::{NumericsError, ParamStore, Tape, Tensor, Var};
use crate::rng::{self, purpose};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    pub categories: usize,
    pub k: usize,
    pub dim: usize,
    /// `C x K x D`; rows of invalid categories are zero.
    pub prototypes: Tensor,
    pub valid: Vec<bool>,
    pub built_at_epoch: usize,
}

impl PrototypeBank {
    pub fn prototype(&self, category: usize, k: usize) -> &[f64] {
        let start = (category * self.k + k) * self.dim;
        &self.prototypes.data()[start..start + self.dim]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Clusters the known-positive representations of every category.
    /// `reps` is `N x C x D`, aligned with the rows of `labels`.
    pub fn from_reps(reps: &Tensor, labels: &LabelMatrix, k: usize, seed: u64, epoch: usize) -> Result<Self> {
        let shape = reps.shape();
        if shape.len() != 3 || shape[0] != labels.rows() || shape[1] != labels.cols() {
            return Err(NumericsError::Shape {
                op: "prototype_bank",
                left: shape.to_vec(),
                right: vec![labels.rows(), labels.cols()],
            }
            .into());
        }
        if k == 0 {
            return Err(Error::Config("prototype count K must be >= 1".into()));
        }
        let (c, d) = (shape[1], shape[2]);
        let mut data = vec![0.0; c * k * d];
        let mut valid = vec![false; c];
        for (cat, ok) in valid.iter_mut().enumerate() {
            let vectors = collect_category_reps(reps, labels, cat);
            let options = KMeansOptions::new(k, rng::derive(seed, &[purpose::KMEANS, cat as u64]));
            match kmeans(&vectors, options) {
                Ok(km) => {
                    *ok = true;
                    for (j, centroid) in km.centroids.iter().enumerate() {
                        let start = (cat * k + j) * d;
                        data[start..start + d].copy_from_slice(centroid);
                    }
                }
                Err(Error::TooFewPoints { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(Self {
            categories: c,
            k,
            dim: d,
            prototypes: Tensor::new(vec![c, k, d], data)?,
            valid,
            built_at_epoch: epoch,
        })
    }

    /// Runs the model over the whole partial dataset without recording
    /// gradients and clusters the result.
    pub fn build(
        model: &Model,
        store: &ParamStore,
        dataset: &Dataset,
        k: usize,
        seed: u64,
        epoch: usize,
    ) -> Result<Self> {
        let all: Vec<usize> = (0..dataset.len()).collect();
        let reps = model.represent(store, dataset, &all)?;
        Self::from_reps(&reps, &dataset.labels(), k, seed, epoch)
    }

    /// One row per prototype: `category,k,v0,...,v{D-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["category".to_string(), "k".to_string()];
        header.extend((0..self.dim).map(|i| format!("v{i}")));
        writer.write_record(&header)?;
        for cat in (0..self.categories).filter(|&c| self.valid[c]) {
            for j in 0..self.k {
                let mut row = vec![cat.to_string(), j.to_string()];
                row.extend(self.prototype(cat, j).iter().map(|v| v.to_string()));
                writer.write_record(&row)?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Representations of `category` for the samples labeled known-positive.
pub fn collect_category_reps(reps: &Tensor, labels: &LabelMatrix, category: usize) -> Vec<Vec<f64>> {
    let (c, d) = (reps.shape()[1], reps.shape()[2]);
    (0..labels.rows())
        .filter(|&i| labels.get(i, category) == 1.0)
        .map(|i| reps.data()[(i * c + category) * d..(i * c + category + 1) * d].to_vec())
        .collect()
}

/// Per sample, the `(category, prototype)` chosen for blending, if any.
pub fn select_prototypes(
    labels: &LabelMatrix,
    bank: &PrototypeBank,
    seed: u64,
    step: u64,
) -> Vec<Option<(usize, usize)>> {
    let mut rng = rng::stream(seed, &[purpose::PROTO_SELECT, step]);
    (0..labels.rows())
        .map(|n| {
            let eligible: Vec<usize> = (0..labels.cols())
                .filter(|&c| labels.get(n, c) == 0.0 && bank.valid[c])
                .collect();
            if eligible.is_empty() {
                return None;
            }
            let c = eligible[rng.random_range(0..eligible.len())];
            Some((c, rng.random_range(0..bank.k)))
        })
        .collect()
}

/// Blends each sample's selected entry with its prototype.
pub fn blend_with_prototypes(
    tape: &mut Tape,
    reps: Var,
    labels: &LabelMatrix,
    coeff: Var,
    bank: &PrototypeBank,
    seed: u64,
    step: u64,
) -> Result<BlendedBatch> {
    let selection = select_prototypes(labels, bank, seed, step);
    blend_selected(tape, reps, labels, coeff, bank, &selection)
}

/// [`blend_with_prototypes`] with an explicit selection.
pub fn blend_selected(
    tape: &mut Tape,
    reps: Var,
    labels: &LabelMatrix,
    coeff: Var,
    bank: &PrototypeBank,
    selection: &[Option<(usize, usize)>],
) -> Result<BlendedBatch> {
    let shape = tape.shape(reps).to_vec();
    if shape.len() != 3
        || shape[0] != labels.rows()
        || shape[1] != bank.categories
        || shape[2] != bank.dim
        || selection.len() != labels.rows()
    {
        return Err(NumericsError::Shape {
            op: "blend_with_prototypes",
            left: shape,
            right: vec![labels.rows(), bank.categories, bank.dim],
        }
        .into());
    }
    let (batch, c, d) = (shape[0], shape[1], shape[2]);
    let mut mask = vec![false; batch * c];
    let mut protos = vec![0.0; batch * c * d];
    for (n, sel) in selection.iter().enumerate() {
        if let Some((cat, k)) = *sel {
            mask[n * c + cat] = true;
            protos[(n * c + cat) * d..(n * c + cat + 1) * d].copy_from_slice(bank.prototype(cat, k));
        }
    }
    let protos = tape.constant(Tensor::new(vec![batch, c, d], protos)?);
    blend_with_mask(tape, reps, protos, labels, coeff, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_from(protos: Vec<f64>, c: usize, k: usize, d: usize, valid: Vec<bool>) -> PrototypeBank {
        PrototypeBank {
            categories: c,
            k,
            dim: d,
            prototypes: Tensor::new(vec![c, k, d], protos).unwrap(),
            valid,
            built_at_epoch: 0,
        }
    }

    #[test]
    fn blend_at_initial_coefficient() {
        let bank = bank_from(vec![0.0, 1.0], 1, 1, 2, vec![true]);
        let labels = LabelMatrix::from_rows(&[vec![0.0]]).unwrap();
        let mut tape = Tape::new();
        let reps = tape.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap());
        let beta = tape.constant(Tensor::full(&[1], 0.5));
        let out = blend_with_prototypes(&mut tape, reps, &labels, beta, &bank, 0, 0).unwrap();
        assert_eq!(tape.value(out.reps).data(), &[0.5, 0.5]);
        assert_eq!(out.labels.values(), &[0.5]);
    }

    #[test]
    fn fully_known_sample_passes_through() {
        let bank = bank_from(vec![0.0; 4], 2, 1, 2, vec![true, true]);
        let labels = LabelMatrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]).unwrap();
        let reps_t = Tensor::new(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let mut tape = Tape::new();
        let reps = tape.constant(reps_t.clone());
        let beta = tape.constant(Tensor::full(&[1], 0.5));
        let out = blend_with_prototypes(&mut tape, reps, &labels, beta, &bank, 1, 2).unwrap();
        assert_eq!(&tape.value(out.reps).data()[..4], &reps_t.data()[..4]);
        assert_eq!(out.labels.row(0), labels.row(0));
        assert_eq!(out.mask.iter().filter(|&&m| m).count(), 1);
    }

    #[test]
    fn invalid_categories_are_never_selected() {
        let bank = bank_from(vec![0.0; 6], 3, 1, 2, vec![false, true, false]);
        let labels = LabelMatrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        for step in 0..50 {
            let sel = select_prototypes(&labels, &bank, 4, step);
            assert_eq!(sel[0], Some((1, 0)));
            assert_eq!(sel[1], None);
        }
    }

    #[test]
    fn collects_known_positive_rows_only() {
        let labels = LabelMatrix::from_rows(&[vec![1.0], vec![0.0], vec![-1.0], vec![1.0]]).unwrap();
        let reps = Tensor::new(vec![4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(collect_category_reps(&reps, &labels, 0), vec![vec![1.0], vec![4.0]]);
        let bank = PrototypeBank::from_reps(&reps, &labels, 3, 0, 5).unwrap();
        assert!(!bank.valid[0]);
        assert_eq!(bank.built_at_epoch, 5);
        let bank = PrototypeBank::from_reps(&reps, &labels, 2, 0, 5).unwrap();
        assert!(bank.valid[0]);
    }
}
