//! Experiment orchestration: the training schedule, sweeps over known-label
//! proportions, the ablation grid, checkpoints and reports.
//!
//! One run is single-threaded and fully determined by its configuration and
//! seed. Every stochastic choice draws from its own seeded stream, so turning
//! a module off does not perturb the draws of the others.

mod checkpoint;
mod config;
pub mod mixup;
pub mod report;
pub mod sweep;

use std::time::{Duration, Instant};

pub use checkpoint::load_model;
pub use config::{BaselineMode, CoeffMode, TrainConfig};
pub use sweep::{ablate, ablation_grid, prepare, run, sweep, Ablation, Prepared, SweepResult};

use crate::csrl::Model;
use crate::data::{batches, Dataset};
use crate::ilrb::{self, BlendCoefficients};
use crate::losses::{self, LossReport};
use crate::metrics::{self, MetricReport};
use crate::numerics::{AdamState, ParamStore, Tape, Var};
use crate::plrb::{self, PrototypeBank};
use crate::{Error, Result};

pub const ALPHA_PARAM: &str = "ilrb.alpha";
pub const BETA_PARAM: &str = "plrb.beta";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub losses: LossReport,
}

/// Loss nodes of one step; branches that did not run are `None`.
#[derive(Clone, Copy, Debug)]
pub struct StepGraph {
    pub main: Var,
    pub ilrb: Option<Var>,
    pub plrb: Option<Var>,
    pub cst: Option<Var>,
    pub cls: Var,
    pub total: Var,
}

impl StepGraph {
    pub fn report(&self, tape: &Tape) -> LossReport {
        let value = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).data()[0]);
        LossReport {
            main: value(Some(self.main)),
            ilrb: value(self.ilrb),
            plrb: value(self.plrb),
            cls: value(Some(self.cls)),
            cst: value(self.cst),
            total: value(Some(self.total)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Per-step means.
    pub mean: LossReport,
    /// Population variance of the total loss over the epoch's steps.
    pub total_variance: f64,
    pub prototypes_rebuilt: bool,
    pub alpha_mean: Option<f64>,
    pub beta_mean: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rebuild {
    pub epoch: usize,
    pub step: u64,
    pub valid_categories: usize,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub proportion: f64,
    pub achieved_proportion: f64,
    pub epochs: Vec<EpochReport>,
    pub log: Vec<StepLog>,
    pub rebuilds: Vec<Rebuild>,
    pub metrics: MetricReport,
    pub wall_time: Duration,
    pub warnings: Vec<String>,
}

/// Training state for one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub seed: u64,
    pub model: Model,
    pub store: ParamStore,
    pub alpha: Option<BlendCoefficients>,
    pub beta: Option<BlendCoefficients>,
    pub adam: AdamState,
    pub bank: Option<PrototypeBank>,
    epoch: usize,
    batch_index: usize,
    step: u64,
    order: Option<(usize, Vec<Vec<usize>>)>,
    log: Vec<StepLog>,
    rebuilds: Vec<Rebuild>,
    epochs: Vec<EpochReport>,
    warnings: Vec<String>,
}

fn coefficients(
    store: &mut ParamStore,
    mode: CoeffMode,
    name: &str,
    categories: usize,
    shared: bool,
) -> Result<BlendCoefficients> {
    match mode {
        CoeffMode::Learnable => Ok(BlendCoefficients::learnable(store, name, categories, shared)),
        CoeffMode::Fixed(v) => BlendCoefficients::fixed(v),
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

impl Trainer {
    /// Fresh parameters for a dataset with `categories` categories and
    /// feature dimension `dim`.
    pub fn new(config: TrainConfig, seed: u64, categories: usize, dim: usize) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = Model::init(&mut store, categories, dim, seed);
        let alpha = config
            .ilrb
            .then(|| coefficients(&mut store, config.alpha, ALPHA_PARAM, categories, config.alpha_shared))
            .transpose()?;
        let beta = config
            .plrb
            .then(|| coefficients(&mut store, config.beta, BETA_PARAM, categories, config.beta_shared))
            .transpose()?;
        let adam = AdamState::new(config.adam, &store);
        Ok(Self {
            config,
            seed,
            model,
            store,
            alpha,
            beta,
            adam,
            bank: None,
            epoch: 0,
            batch_index: 0,
            step: 0,
            order: None,
            log: Vec::new(),
            rebuilds: Vec::new(),
            epochs: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &[StepLog] {
        &self.log
    }

    pub fn rebuilds(&self) -> &[Rebuild] {
        &self.rebuilds
    }

    pub fn epoch_reports(&self) -> &[EpochReport] {
        &self.epochs
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn coefficient_mean(&self, coeff: Option<BlendCoefficients>) -> Option<f64> {
        coeff.map(|c| mean(&c.values(&self.store, self.model.categories)))
    }

    fn rebuild_bank(&mut self, train: &Dataset) -> Result<()> {
        let bank = PrototypeBank::build(&self.model, &self.store, train, self.config.k, self.seed, self.epoch)?;
        let invalid: Vec<usize> = (0..bank.categories).filter(|&c| !bank.valid[c]).collect();
        if !invalid.is_empty() {
            self.warnings.push(format!(
                "epoch {}: categories {invalid:?} have fewer than K={} known positives; PLRB skips them",
                self.epoch, self.config.k
            ));
        }
        self.rebuilds.push(Rebuild {
            epoch: self.epoch,
            step: self.step,
            valid_categories: bank.valid_count(),
        });
        self.bank = Some(bank);
        Ok(())
    }

    /// Forward pass, backward pass and Adam update on one minibatch.
    /// Builds the loss graph of one batch at the current epoch and step,
    /// reading parameters from `store`. Does not touch the optimizer.
    pub fn build_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        train: &Dataset,
        indices: &[usize],
    ) -> Result<StepGraph> {
        let cfg = &self.config;
        let batch = indices.len();
        let labels = train.label_batch(indices);
        let mut features = train.feature_batch(indices);
        let mut main_labels = labels.clone();
        if cfg.baseline != BaselineMode::None && batch >= 2 {
            let perm = ilrb::pair_assignment(batch, self.seed, self.step)?;
            let weights = mixup::mixup_weights(batch, cfg.mixup_alpha, self.seed, self.step)?;
            (features, main_labels) = mixup::mix_batch(&features, &labels, &perm, &weights)?;
        }

        let x = tape.constant(features);
        let (reps, _) = self.model.decouple(tape, store, x)?;
        let scores = self.model.classify(tape, store, reps)?;
        let main = losses::partial_bce_labels(tape, scores, &main_labels)?;
        let mut branches = vec![main];
        let (mut ilrb_loss, mut plrb_loss, mut cst_loss) = (None, None, None);

        let blending = self.epoch >= cfg.blend_start;
        if let Some(alpha) = self.alpha.filter(|_| blending && batch >= 2) {
            let perm = ilrb::pair_assignment(batch, self.seed, self.step)?;
            let coeff = alpha.effective(tape, store)?;
            let blended = ilrb::blend_batch(tape, reps, &labels, coeff, &perm)?;
            let s = self.model.classify(tape, store, blended.reps)?;
            let l = losses::partial_bce_batch(tape, s, blended.targets, &blended.labels.weights())?;
            branches.push(l);
            ilrb_loss = Some(l);
        }
        let bank = self.bank.as_ref().filter(|b| blending && b.valid_count() > 0);
        if let (Some(beta), Some(bank)) = (self.beta, bank) {
            let coeff = beta.effective(tape, store)?;
            let blended = plrb::blend_with_prototypes(tape, reps, &labels, coeff, bank, self.seed, self.step)?;
            let s = self.model.classify(tape, store, blended.reps)?;
            let l = losses::partial_bce_batch(tape, s, blended.targets, &blended.labels.weights())?;
            branches.push(l);
            plrb_loss = Some(l);
            cst_loss = Some(plrb::contrastive_batch(tape, reps, &labels, cfg.pair_policy)?.loss);
        }
        let cls = losses::classification_loss(tape, &branches)?;
        let total = losses::total_loss(tape, cls, cst_loss, cfg.lambda)?;
        Ok(StepGraph {
            main,
            ilrb: ilrb_loss,
            plrb: plrb_loss,
            cst: cst_loss,
            cls,
            total,
        })
    }

    /// One optimizer step on the given batch.
    pub fn step_batch(&mut self, train: &Dataset, indices: &[usize]) -> Result<LossReport> {
        let mut tape = Tape::new();
        let graph = self.build_step(&mut tape, &self.store, train, indices)?;
        let report = graph.report(&tape);
        self.store.zero_grad();
        tape.backward(graph.total, &mut self.store)?;
        self.adam.set_lr(self.config.lr_at(self.epoch));
        self.adam.step(&mut self.store)?;
        self.log.push(StepLog {
            epoch: self.epoch,
            step: self.step,
            losses: report,
        });
        self.step += 1;
        Ok(report)
    }

    fn epoch_order(&mut self, train: &Dataset) -> Result<&[Vec<usize>]> {
        if self.order.as_ref().is_none_or(|(e, _)| *e != self.epoch) {
            let order = batches(train.len(), self.config.batch_size, self.seed, self.epoch)?;
            self.order = Some((self.epoch, order));
        }
        Ok(&self.order.as_ref().expect("just set").1)
    }

    /// Takes the next scheduled step, rebuilding prototypes first when an
    /// epoch that calls for it begins.
    pub fn next_step(&mut self, train: &Dataset) -> Result<LossReport> {
        if self.is_finished() {
            return Err(Error::Config("training already finished".into()));
        }
        if train.categories != self.model.categories || train.dim != self.model.dim {
            return Err(Error::Data("dataset does not match the model geometry".into()));
        }
        let stale = self.bank.as_ref().is_none_or(|b| b.built_at_epoch != self.epoch);
        if self.batch_index == 0 && self.config.is_refresh_epoch(self.epoch) && stale {
            self.rebuild_bank(train)?;
        }
        let at = self.batch_index;
        let indices = self.epoch_order(train)?[at].clone();
        let report = self.step_batch(train, &indices)?;
        self.batch_index += 1;
        if self.batch_index == self.epoch_order(train)?.len() {
            self.finish_epoch();
        }
        Ok(report)
    }

    fn finish_epoch(&mut self) {
        let losses: Vec<LossReport> = self
            .log
            .iter()
            .filter(|l| l.epoch == self.epoch)
            .map(|l| l.losses)
            .collect();
        let col = |f: fn(&LossReport) -> f64| mean(&losses.iter().map(f).collect::<Vec<_>>());
        let totals: Vec<f64> = losses.iter().map(|l| l.total).collect();
        let m = mean(&totals);
        self.epochs.push(EpochReport {
            epoch: self.epoch,
            lr: self.config.lr_at(self.epoch),
            steps: losses.len(),
            mean: LossReport {
                main: col(|l| l.main),
                ilrb: col(|l| l.ilrb),
                plrb: col(|l| l.plrb),
                cls: col(|l| l.cls),
                cst: col(|l| l.cst),
                total: m,
            },
            total_variance: mean(&totals.iter().map(|t| (t - m) * (t - m)).collect::<Vec<_>>()),
            prototypes_rebuilt: self.rebuilds.iter().any(|r| r.epoch == self.epoch),
            alpha_mean: self.coefficient_mean(self.alpha),
            beta_mean: self.coefficient_mean(self.beta),
        });
        self.epoch += 1;
        self.batch_index = 0;
    }

    /// Continues the current epoch to its end.
    pub fn run_epoch(&mut self, train: &Dataset) -> Result<()> {
        let epoch = self.epoch;
        while self.epoch == epoch {
            self.next_step(train)?;
        }
        Ok(())
    }

    /// Trains until the configured number of epochs is reached.
    pub fn train(&mut self, train: &Dataset) -> Result<()> {
        while !self.is_finished() {
            self.next_step(train)?;
        }
        Ok(())
    }

    /// Main-branch metrics; the blending modules play no part at inference.
    pub fn evaluate(&self, test: &Dataset, known_proportion: f64) -> Result<MetricReport> {
        let scores = self.model.predict(&self.store, test)?;
        metrics::evaluate(&scores, &test.labels(), self.config.threshold, known_proportion)
    }

    pub fn into_record(
        self,
        metrics: MetricReport,
        proportion: f64,
        achieved_proportion: f64,
        started: Instant,
    ) -> RunRecord {
        RunRecord {
            config_hash: self.config.hash(),
            seed: self.seed,
            proportion,
            achieved_proportion,
            epochs: self.epochs,
            log: self.log,
            rebuilds: self.rebuilds,
            metrics,
            wall_time: started.elapsed(),
            warnings: self.warnings,
        }
    }
}
