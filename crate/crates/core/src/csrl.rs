//! Category-specific representations and the shared gated classifier.
//!
//! Each category owns a learnable query. Attention logits are the dot
//! products of the query with every spatial cell; the softmax over cells
//! pools the map into one vector, which a shared `D x D` projection maps
//! to the category representation. The classifier gates each
//! representation with a per-category sigmoid layer and scores it with a
//! per-category linear head followed by a sigmoid.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::numerics::{NumericsError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::{self, purpose};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsrlParams {
    pub queries: ParamId,
    pub proj: ParamId,
    pub proj_bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierParams {
    pub gate: ParamId,
    pub gate_bias: ParamId,
    pub linear: ParamId,
    pub linear_bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Model {
    pub categories: usize,
    pub dim: usize,
    pub csrl: CsrlParams,
    pub classifier: ClassifierParams,
}

fn gaussian(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

impl Model {
    /// Registers freshly initialized parameters in `store`.
    pub fn init(store: &mut ParamStore, categories: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[purpose::INIT]);
        let scale = 1.0 / (dim as f64).sqrt();
        let queries = store.add("csrl.queries", gaussian(&[categories, dim], scale, &mut rng));
        let mut proj = gaussian(&[dim, dim], 0.1 * scale, &mut rng).into_data();
        for i in 0..dim {
            proj[i * dim + i] += 1.0;
        }
        let proj = store.add("csrl.proj", Tensor::new(vec![dim, dim], proj).expect("finite"));
        let proj_bias = store.add("csrl.proj.bias", Tensor::zeros(&[dim]));
        let gate = store.add("clf.gate", gaussian(&[categories, dim, dim], scale, &mut rng));
        let gate_bias = store.add("clf.gate.bias", Tensor::zeros(&[categories, dim]));
        let linear = store.add("clf.linear", gaussian(&[categories, dim], scale, &mut rng));
        let linear_bias = store.add("clf.linear.bias", Tensor::zeros(&[categories]));
        Self {
            categories,
            dim,
            csrl: CsrlParams {
                queries,
                proj,
                proj_bias,
            },
            classifier: ClassifierParams {
                gate,
                gate_bias,
                linear,
                linear_bias,
            },
        }
    }

    /// Looks the parameters up by name in a store built by [`Model::init`].
    pub fn attach(store: &ParamStore) -> Option<Self> {
        let queries = store.find("csrl.queries")?;
        let shape = store.value(queries).shape();
        let (categories, dim) = (shape[0], shape[1]);
        Some(Self {
            categories,
            dim,
            csrl: CsrlParams {
                queries,
                proj: store.find("csrl.proj")?,
                proj_bias: store.find("csrl.proj.bias")?,
            },
            classifier: ClassifierParams {
                gate: store.find("clf.gate")?,
                gate_bias: store.find("clf.gate.bias")?,
                linear: store.find("clf.linear")?,
                linear_bias: store.find("clf.linear.bias")?,
            },
        })
    }

    /// `B x (H*W) x D` feature maps to `B x C x D` representations, plus the
    /// `B x C x (H*W)` attention weights.
    pub fn decouple(&self, tape: &mut Tape, store: &ParamStore, features: Var) -> Result<(Var, Var), NumericsError> {
        let shape = tape.shape(features).to_vec();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(NumericsError::Shape {
                op: "decouple",
                left: shape,
                right: vec![self.categories, self.dim],
            });
        }
        let (batch, cells, dim) = (shape[0], shape[1], shape[2]);
        let c = self.categories;
        let queries = tape.param(store, self.csrl.queries);
        let queries_t = tape.permute(queries, &[1, 0])?;
        let flat = tape.reshape(features, &[batch * cells, dim])?;
        let logits = tape.matmul(flat, queries_t)?;
        let logits = tape.reshape(logits, &[batch, cells, c])?;
        let logits = tape.permute(logits, &[0, 2, 1])?;
        let attention = tape.softmax(logits)?;
        let pooled = tape.bmm(attention, features)?;
        let pooled = tape.reshape(pooled, &[batch * c, dim])?;
        let proj = tape.param(store, self.csrl.proj);
        let projected = tape.matmul(pooled, proj)?;
        let bias = tape.param(store, self.csrl.proj_bias);
        let bias = tape.reshape(bias, &[1, dim])?;
        let reps = tape.add(projected, bias)?;
        let reps = tape.reshape(reps, &[batch, c, dim])?;
        Ok((reps, attention))
    }

    /// `B x C x D` representations to `B x C` scores in `(0, 1)`.
    pub fn classify(&self, tape: &mut Tape, store: &ParamStore, reps: Var) -> Result<Var, NumericsError> {
        let shape = tape.shape(reps).to_vec();
        if shape.len() != 3 || shape[1] != self.categories || shape[2] != self.dim {
            return Err(NumericsError::Shape {
                op: "classify",
                left: shape,
                right: vec![self.categories, self.dim],
            });
        }
        let (c, d) = (self.categories, self.dim);
        let by_category = tape.permute(reps, &[1, 0, 2])?;
        let gate = tape.param(store, self.classifier.gate);
        let gated = tape.bmm(by_category, gate)?;
        let gated = tape.permute(gated, &[1, 0, 2])?;
        let gate_bias = tape.param(store, self.classifier.gate_bias);
        let gate_bias = tape.reshape(gate_bias, &[1, c, d])?;
        let gated = tape.add(gated, gate_bias)?;
        let gated = tape.sigmoid(gated)?;
        let hidden = tape.mul(reps, gated)?;
        let weights = tape.param(store, self.classifier.linear);
        let weights = tape.reshape(weights, &[1, c, d])?;
        let weighted = tape.mul(hidden, weights)?;
        let logits = tape.sum_last(weighted)?;
        let bias = tape.param(store, self.classifier.linear_bias);
        let bias = tape.reshape(bias, &[1, c])?;
        let logits = tape.add(logits, bias)?;
        tape.sigmoid(logits)
    }

    /// Representations of the given samples without gradient recording.
    pub fn represent(&self, store: &ParamStore, dataset: &Dataset, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.categories * self.dim);
        for chunk in indices.chunks(256) {
            let mut tape = Tape::no_grad();
            let x = tape.constant(dataset.feature_batch(chunk));
            let (reps, _) = self.decouple(&mut tape, store, x)?;
            data.extend_from_slice(tape.value(reps).data());
        }
        Ok(Tensor::new(vec![indices.len(), self.categories, self.dim], data)?)
    }

    /// Main-branch scores for every sample, `N x C`.
    pub fn predict(&self, store: &ParamStore, dataset: &Dataset) -> Result<Tensor> {
        let mut data = Vec::with_capacity(dataset.len() * self.categories);
        let all: Vec<usize> = (0..dataset.len()).collect();
        for chunk in all.chunks(256) {
            let mut tape = Tape::no_grad();
            let x = tape.constant(dataset.feature_batch(chunk));
            let (reps, _) = self.decouple(&mut tape, store, x)?;
            let scores = self.classify(&mut tape, store, reps)?;
            data.extend_from_slice(tape.value(scores).data());
        }
        Ok(Tensor::new(vec![dataset.len(), self.categories], data)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(c: usize, d: usize) -> (ParamStore, Model) {
        let mut store = ParamStore::new();
        let model = Model::init(&mut store, c, d, 5);
        (store, model)
    }

    #[test]
    fn identical_cells_pool_to_projection_of_the_cell() {
        let (store, model) = setup(3, 4);
        let cell = [0.5, -1.0, 2.0, 0.25];
        let features = Tensor::new(vec![1, 6, 4], cell.repeat(6)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(features);
        let (reps, attention) = model.decouple(&mut tape, &store, x).unwrap();
        for &a in tape.value(attention).data() {
            assert!((a - 1.0 / 6.0).abs() < 1e-15);
        }
        let proj = store.value(model.csrl.proj).data();
        for c in 0..3 {
            for j in 0..4 {
                let expected: f64 = (0..4).map(|i| cell[i] * proj[i * 4 + j]).sum();
                let got = tape.value(reps).data()[c * 4 + j];
                assert!((got - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_reps_and_zero_params_score_one_half() {
        let (mut store, model) = setup(3, 4);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let mut tape = Tape::new();
        let reps = tape.constant(Tensor::zeros(&[2, 3, 4]));
        let scores = model.classify(&mut tape, &store, reps).unwrap();
        assert!(tape.value(scores).data().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn shape_errors_are_reported() {
        let (store, model) = setup(3, 4);
        let mut tape = Tape::new();
        let bad = tape.constant(Tensor::zeros(&[2, 6, 5]));
        assert!(model.decouple(&mut tape, &store, bad).is_err());
        let bad = tape.constant(Tensor::zeros(&[2, 2, 4]));
        assert!(model.classify(&mut tape, &store, bad).is_err());
    }

    #[test]
    fn attach_finds_the_same_parameters() {
        let (store, model) = setup(3, 4);
        assert_eq!(Model::attach(&store), Some(model));
    }
}
