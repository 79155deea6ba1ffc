use std::time::Instant;

use rayon::prelude::*;

use super::{BaselineMode, CoeffMode, RunRecord, TrainConfig, Trainer};
use crate::data::{drop_labels, generate, generate_split, Dataset, Split};
use crate::metrics::MetricReport;
use crate::Result;

/// Fully labeled training set and held-out test set of a configuration.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn prepare(config: &TrainConfig) -> Result<Prepared> {
    config.validate()?;
    Ok(Prepared {
        train: generate(&config.dataset)?,
        test: generate_split(&config.dataset, Split::Test, config.test_samples)?,
    })
}

/// Hides labels down to `proportion`, trains, and evaluates on the test set.
pub fn run(config: &TrainConfig, data: &Prepared, proportion: f64, seed: u64) -> Result<RunRecord> {
    let started = Instant::now();
    let (partial, achieved) = drop_labels(&data.train, proportion, seed, config.strategy)?;
    let mut trainer = Trainer::new(config.clone(), seed, partial.categories, partial.dim)?;
    trainer.train(&partial)?;
    let metrics = trainer.evaluate(&data.test, achieved)?;
    Ok(trainer.into_record(metrics, proportion, achieved, started))
}

/// Seed-averaged metrics at one proportion.
#[derive(Clone, Debug, PartialEq)]
pub struct ProportionSummary {
    pub proportion: f64,
    pub map: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub per_category_ap: Vec<Option<f64>>,
}

impl ProportionSummary {
    fn from_runs(proportion: f64, reports: &[&MetricReport]) -> Self {
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / reports.len() as f64;
        let c = reports[0].per_category_ap.len();
        let per_category_ap = (0..c)
            .map(|j| {
                let aps: Vec<f64> = reports.iter().filter_map(|r| r.per_category_ap[j]).collect();
                (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
            })
            .collect();
        Self {
            proportion,
            map: avg(|r| r.map),
            op: avg(|r| r.op),
            or: avg(|r| r.or),
            of1: avg(|r| r.of1),
            cp: avg(|r| r.cp),
            cr: avg(|r| r.cr),
            cf1: avg(|r| r.cf1),
            per_category_ap,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    /// Ordered by proportion, then seed, as configured.
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<ProportionSummary>,
    /// Mean over proportions of the seed-averaged mAP.
    pub average_map: f64,
}

impl SweepResult {
    pub fn summary(&self, proportion: f64) -> Option<&ProportionSummary> {
        self.summaries.iter().find(|s| s.proportion == proportion)
    }

    pub fn from_runs(runs: Vec<RunRecord>, proportions: &[f64]) -> Self {
        let summaries: Vec<ProportionSummary> = proportions
            .iter()
            .map(|&p| {
                let reports: Vec<&MetricReport> =
                    runs.iter().filter(|r| r.proportion == p).map(|r| &r.metrics).collect();
                ProportionSummary::from_runs(p, &reports)
            })
            .collect();
        let average_map = summaries.iter().map(|s| s.map).sum::<f64>() / summaries.len() as f64;
        Self {
            runs,
            summaries,
            average_map,
        }
    }
}

/// Every configured `(proportion, seed)` pair. Runs execute in parallel
/// and are merged in configuration order.
pub fn sweep(config: &TrainConfig, data: &Prepared) -> Result<SweepResult> {
    config.validate()?;
    let tasks: Vec<(f64, u64)> = config
        .proportions
        .iter()
        .flat_map(|&p| config.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let runs = tasks
        .par_iter()
        .map(|&(p, s)| run(config, data, p, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult::from_runs(runs, &config.proportions))
}

#[derive(Clone, Debug)]
pub struct Ablation {
    pub name: &'static str,
    pub config: TrainConfig,
}

/// Baseline, each module alone, each module alone with its coefficient
/// fixed at 0.5, the full model, and the two mixup baselines.
pub fn ablation_grid(base: &TrainConfig) -> Vec<Ablation> {
    let variant = |name, ilrb, plrb, alpha, beta, baseline| Ablation {
        name,
        config: TrainConfig {
            ilrb,
            plrb,
            alpha,
            beta,
            baseline,
            ..base.clone()
        },
    };
    let (l, half) = (CoeffMode::Learnable, CoeffMode::Fixed(0.5));
    vec![
        variant("baseline", false, false, l, l, BaselineMode::None),
        variant("ilrb-only", true, false, l, l, BaselineMode::None),
        variant("plrb-only", false, true, l, l, BaselineMode::None),
        variant("fixed-alpha", true, false, half, l, BaselineMode::None),
        variant("fixed-beta", false, true, l, half, BaselineMode::None),
        variant("full", true, true, base.alpha, base.beta, BaselineMode::None),
        variant("ip-mixup", false, false, l, l, BaselineMode::IpMixup),
        variant("fm-mixup", false, false, l, l, BaselineMode::FmMixup),
    ]
}

pub fn ablate(base: &TrainConfig, data: &Prepared) -> Result<Vec<(&'static str, SweepResult)>> {
    ablation_grid(base)
        .into_iter()
        .map(|a| Ok((a.name, sweep(&a.config, data)?)))
        .collect()
}
