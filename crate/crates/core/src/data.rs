//! Synthetic multi-label feature maps and partial-label simulation.
//!
//! Each sample is a `H x W x D` map of standard Gaussian noise. For every
//! category present in the sample, that category's fixed unit direction is
//! added at one random cell, scaled by the signal-to-noise ratio. Directions
//! derive from the dataset seed alone, so train and test splits share them.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::labels::LabelMatrix;
use crate::numerics::Tensor;
use crate::rng::{self, purpose};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub samples: usize,
    pub categories: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    /// Positives per sample are drawn uniformly from `min..=max`.
    pub min_positives: usize,
    pub max_positives: usize,
    pub snr: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            samples: 2000,
            categories: 10,
            height: 4,
            width: 4,
            dim: 16,
            min_positives: 1,
            max_positives: 3,
            snr: 8.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.samples < 2 {
            return fail(format!("need at least 2 samples, got {}", self.samples));
        }
        if self.categories < 2 {
            return fail(format!("need at least 2 categories, got {}", self.categories));
        }
        if self.height == 0 || self.width == 0 || self.dim == 0 {
            return fail("feature-map geometry must be non-empty".into());
        }
        if self.min_positives == 0 || self.min_positives > self.max_positives || self.max_positives > self.categories {
            return fail(format!(
                "positives per sample {}..={} invalid for {} categories",
                self.min_positives, self.max_positives, self.categories
            ));
        }
        if !self.snr.is_finite() || self.snr < 0.0 {
            return fail(format!("snr must be finite and >= 0, got {}", self.snr));
        }
        // Expected positives per category must reach at least one.
        let mean_pos = (self.min_positives + self.max_positives) as f64 / 2.0;
        if self.samples as f64 * mean_pos / (self.categories as f64) < 1.0 {
            return fail("too few samples for every category to have a positive".into());
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `H x W x D` feature map.
    pub features: Tensor,
    /// Length-`C` encoded labels.
    pub labels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub categories: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn labels(&self) -> LabelMatrix {
        let values = self.samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
        LabelMatrix::new(self.len(), self.categories, values).expect("dataset labels are valid")
    }

    pub fn label_batch(&self, indices: &[usize]) -> LabelMatrix {
        let values = indices
            .iter()
            .flat_map(|&i| self.samples[i].labels.iter().copied())
            .collect();
        LabelMatrix::new(indices.len(), self.categories, values).expect("dataset labels are valid")
    }

    /// Stacks feature maps into a `B x (H*W) x D` tensor.
    pub fn feature_batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.cells() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.samples[i].features.data());
        }
        Tensor::new(vec![indices.len(), self.cells(), self.dim], data).expect("stacked features are finite")
    }

    /// Fraction of entries whose label is known.
    pub fn known_proportion(&self) -> f64 {
        let labels = self.labels();
        labels.known_count() as f64 / labels.values().len() as f64
    }
}

/// Per-category unit directions, `C` vectors of length `D`.
pub fn category_directions(spec: &DatasetSpec) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(spec.seed, &[purpose::DIRECTIONS]);
    (0..spec.categories)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Training split with `spec.samples` samples.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    generate_split(spec, Split::Train, spec.samples)
}

pub fn generate_split(spec: &DatasetSpec, split: Split, samples: usize) -> Result<Dataset> {
    spec.validate()?;
    let directions = category_directions(spec);
    let split_tag = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let (cells, dim) = (spec.cells(), spec.dim);
    let samples = (0..samples)
        .map(|i| {
            let mut rng = rng::stream(spec.seed, &[purpose::SAMPLES, split_tag, i as u64]);
            let mut data: Vec<f64> = (0..cells * dim).map(|_| rng.sample(StandardNormal)).collect();
            let count = rng.random_range(spec.min_positives..=spec.max_positives);
            let mut labels = vec![-1.0; spec.categories];
            for c in index::sample(&mut rng, spec.categories, count) {
                labels[c] = 1.0;
                let cell = rng.random_range(0..cells);
                for (x, u) in data[cell * dim..(cell + 1) * dim].iter_mut().zip(&directions[c]) {
                    *x += spec.snr * u;
                }
            }
            let features = Tensor::new(vec![spec.height, spec.width, dim], data)?;
            Ok(Sample { features, labels })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        height: spec.height,
        width: spec.width,
        dim,
        categories: spec.categories,
        samples,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DropStrategy {
    /// Every entry is kept independently with probability `p`.
    #[default]
    Independent,
    /// Per category, exactly `round(p * count)` positives and negatives are kept.
    Stratified,
}

/// Hides labels so that roughly a proportion `known` of entries stays known.
///
/// Every sample keeps at least one known label. Returns the partial dataset
/// and the achieved known proportion.
pub fn drop_labels(dataset: &Dataset, known: f64, seed: u64, strategy: DropStrategy) -> Result<(Dataset, f64)> {
    if !(known > 0.0 && known <= 1.0) {
        return Err(Error::Config(format!("known proportion {known} outside (0, 1]")));
    }
    if dataset
        .samples
        .iter()
        .any(|s| s.labels.iter().any(|&v| v != 1.0 && v != -1.0))
    {
        return Err(Error::Data("drop_labels needs a fully labeled dataset".into()));
    }
    let (n, c) = (dataset.len(), dataset.categories);
    let keep = match strategy {
        DropStrategy::Independent => (0..n)
            .flat_map(|i| {
                let mut rng = rng::stream(seed, &[purpose::DROP, i as u64]);
                let mut mask: Vec<bool> = (0..c).map(|_| rng.random_bool(known)).collect();
                if !mask.iter().any(|&k| k) {
                    mask[rng.random_range(0..c)] = true;
                }
                mask
            })
            .collect::<Vec<bool>>(),
        DropStrategy::Stratified => stratified_mask(dataset, known, seed),
    };
    let mut out = dataset.clone();
    for (i, sample) in out.samples.iter_mut().enumerate() {
        for (j, v) in sample.labels.iter_mut().enumerate() {
            if !keep[i * c + j] {
                *v = 0.0;
            }
        }
    }
    let achieved = out.known_proportion();
    Ok((out, achieved))
}

fn stratified_mask(dataset: &Dataset, known: f64, seed: u64) -> Vec<bool> {
    let (n, c) = (dataset.len(), dataset.categories);
    let mut keep = vec![false; n * c];
    for cat in 0..c {
        for sign in [1.0, -1.0] {
            let mut rows: Vec<usize> = (0..n).filter(|&i| dataset.samples[i].labels[cat] == sign).collect();
            let mut rng = rng::stream(seed, &[purpose::DROP, cat as u64, (sign > 0.0) as u64, 1]);
            rows.shuffle(&mut rng);
            let take = (known * rows.len() as f64).round() as usize;
            for &i in &rows[..take] {
                keep[i * c + cat] = true;
            }
        }
    }
    for i in 0..n {
        if !keep[i * c..(i + 1) * c].iter().any(|&k| k) {
            let mut rng = rng::stream(seed, &[purpose::DROP, i as u64, 2]);
            keep[i * c + rng.random_range(0..c)] = true;
        }
    }
    keep
}

/// Index batches for one epoch. The shuffle depends only on `(seed, epoch)`;
/// the final short batch is kept.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch size must be >= 2, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, &[purpose::SHUFFLE, epoch as u64]));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Writes `labels.csv` (no header, one row per sample) and `features.bin`
/// (`u32` N, H, W, D little-endian header followed by `f64` values).
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.join("labels.csv"))?;
    for sample in &dataset.samples {
        if let Some(bad) = sample.labels.iter().find(|&&v| v != 1.0 && v != -1.0 && v != 0.0) {
            return Err(Error::Data(format!("soft label {bad} cannot be exported")));
        }
        writer.write_record(sample.labels.iter().map(|&v| format!("{}", v as i32)))?;
    }
    writer.flush()?;

    let mut out = BufWriter::new(File::create(dir.join("features.bin"))?);
    for v in [dataset.len(), dataset.height, dataset.width, dataset.dim] {
        let v = u32::try_from(v).map_err(|_| Error::Data(format!("{v} exceeds u32")))?;
        out.write_all(&v.to_le_bytes())?;
    }
    for sample in &dataset.samples {
        for v in sample.features.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(dir.join("labels.csv"))?;
    let mut label_rows = Vec::new();
    for record in reader.records() {
        let row = record?
            .iter()
            .map(|field| match field.trim() {
                "1" => Ok(1.0),
                "-1" => Ok(-1.0),
                "0" => Ok(0.0),
                other => Err(Error::Data(format!("label {other:?} not in {{1,-1,0}}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        label_rows.push(row);
    }
    let categories = label_rows.first().map_or(0, Vec::len);
    if label_rows.iter().any(|r| r.len() != categories) {
        return Err(Error::Data("labels.csv rows differ in length".into()));
    }

    let mut bytes = Vec::new();
    BufReader::new(File::open(dir.join("features.bin"))?).read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::Data("features.bin header truncated".into()));
    }
    let header: Vec<usize> = bytes[..16]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let (n, height, width, dim) = (header[0], header[1], header[2], header[3]);
    if n != label_rows.len() {
        return Err(Error::Data(format!(
            "features.bin has {n} samples but labels.csv has {}",
            label_rows.len()
        )));
    }
    let per = height * width * dim;
    if bytes.len() != 16 + n * per * 8 {
        return Err(Error::Data("features.bin payload size mismatch".into()));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let samples = label_rows
        .into_iter()
        .enumerate()
        .map(|(i, labels)| {
            let features = Tensor::new(vec![height, width, dim], values[i * per..(i + 1) * per].to_vec())?;
            Ok(Sample { features, labels })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        height,
        width,
        dim,
        categories,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            samples: 100,
            categories: 20,
            height: 2,
            width: 2,
            dim: 4,
            min_positives: 1,
            max_positives: 4,
            snr: 2.0,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = DatasetSpec {
            seed: 12,
            ..spec.clone()
        };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn every_sample_has_a_positive() {
        let ds = generate(&small_spec()).unwrap();
        assert!(ds.samples.iter().all(|s| s.labels.contains(&1.0)));
        assert!(ds
            .samples
            .iter()
            .all(|s| s.labels.iter().all(|&v| v == 1.0 || v == -1.0)));
    }

    #[test]
    fn zero_snr_is_pure_noise() {
        let spec = DatasetSpec {
            snr: 0.0,
            ..small_spec()
        };
        let ds = generate(&spec).unwrap();
        let values: Vec<f64> = ds.samples.iter().flat_map(|s| s.features.data().to_vec()).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            DatasetSpec {
                samples: 1,
                ..small_spec()
            },
            DatasetSpec {
                categories: 1,
                max_positives: 1,
                ..small_spec()
            },
            DatasetSpec {
                min_positives: 0,
                ..small_spec()
            },
            DatasetSpec {
                max_positives: 21,
                ..small_spec()
            },
            DatasetSpec {
                snr: f64::NAN,
                ..small_spec()
            },
        ] {
            assert!(generate(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn full_proportion_keeps_everything() {
        let ds = generate(&small_spec()).unwrap();
        let (partial, achieved) = drop_labels(&ds, 1.0, 3, DropStrategy::Independent).unwrap();
        assert_eq!(partial, ds);
        assert_eq!(achieved, 1.0);
    }

    #[test]
    fn low_proportion_concentrates() {
        let ds = generate(&small_spec()).unwrap();
        for seed in 0..20 {
            let (partial, achieved) = drop_labels(&ds, 0.1, seed, DropStrategy::Independent).unwrap();
            assert!((achieved - 0.1).abs() <= 0.02, "seed {seed}: {achieved}");
            for (orig, part) in ds.samples.iter().zip(&partial.samples) {
                assert!(part.labels.iter().any(|&v| v != 0.0));
                for (&o, &p) in orig.labels.iter().zip(&part.labels) {
                    assert!(p == 0.0 || p == o, "sign flipped");
                }
            }
        }
    }

    #[test]
    fn stratified_drop_keeps_per_category_counts() {
        let ds = generate(&small_spec()).unwrap();
        let (partial, achieved) = drop_labels(&ds, 0.5, 1, DropStrategy::Stratified).unwrap();
        assert!((achieved - 0.5).abs() < 0.05);
        for c in 0..ds.categories {
            let pos = ds.samples.iter().filter(|s| s.labels[c] == 1.0).count();
            let kept = partial.samples.iter().filter(|s| s.labels[c] == 1.0).count();
            assert!(kept >= (0.5 * pos as f64).round() as usize);
        }
    }

    #[test]
    fn drop_rejects_bad_proportion() {
        let ds = generate(&small_spec()).unwrap();
        for p in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(drop_labels(&ds, p, 0, DropStrategy::Independent).is_err());
        }
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let b = batches(5, 2, 9, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(b, batches(5, 2, 9, 0).unwrap());
        assert!(batches(5, 1, 9, 0).is_err());
    }

    #[test]
    fn epochs_give_distinct_permutations() {
        let orders: Vec<Vec<usize>> = (0..100).map(|e| batches(50, 16, 4, e).unwrap().concat()).collect();
        for i in 0..orders.len() {
            for j in i + 1..orders.len() {
                assert_ne!(orders[i], orders[j], "epochs {i} and {j} collide");
            }
        }
    }

    #[test]
    fn dataset_files_round_trip() {
        let ds = generate(&small_spec()).unwrap();
        let (partial, _) = drop_labels(&ds, 0.5, 2, DropStrategy::Independent).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &partial).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), partial);
        let header = fs::read(dir.path().join("features.bin")).unwrap();
        assert_eq!(&header[..4], &100u32.to_le_bytes());
    }
}
