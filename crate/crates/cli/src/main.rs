//! `sarb`: synthetic partial-label experiments from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sarb::data::{drop_labels, load_dataset, save_dataset};
use sarb::metrics::{self, MetricReport};
use sarb::trainer::report::{self, write_ap_per_category, write_metrics};
use sarb::trainer::{self, load_model, Prepared, SweepResult, TrainConfig, Trainer};

#[derive(Parser)]
#[command(
    name = "sarb",
    version,
    about = "Partial-label multi-label experiments with representation blending on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/test dataset
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Train one run at one known-label proportion
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Known-label proportion; defaults to the first configured one
        #[arg(long)]
        proportion: Option<f64>,
        /// Continue from a checkpoint written by an earlier run
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Train every (proportion, seed) pair and summarize
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Score a checkpoint on the test split
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Value written to the proportion column
        #[arg(long, default_value_t = 1.0)]
        proportion: f64,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Sweep the ablation grid: baseline, each module alone, fixed
    /// coefficients, the full model and the mixup baselines
    Ablate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Dataset written by `generate`, used instead of generating one
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    /// Single run seed; falls back to SARB_SEED
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    proportions: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    ilrb: Option<Switch>,
    #[arg(long)]
    alpha_fixed: Option<f64>,
    #[arg(long)]
    alpha_shared: bool,
    #[arg(long)]
    blend_start_epoch: Option<usize>,
    #[arg(long)]
    plrb: Option<Switch>,
    #[arg(long)]
    beta_fixed: Option<f64>,
    #[arg(long)]
    beta_shared: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    proto_refresh: Option<usize>,
    /// Repel every pair outside known positives, unknown labels included
    #[arg(long)]
    contrastive_literal: bool,
    #[arg(long)]
    threshold: Option<f64>,
    /// Keep a fixed share of each category's positives and negatives
    #[arg(long)]
    stratified: bool,
    /// none, ip-mixup or fm-mixup
    #[arg(long)]
    baseline: Option<String>,
    /// Also write SVG plots
    #[arg(long)]
    plots: bool,
}

fn config_error(msg: String) -> anyhow::Error {
    sarb::Error::Config(msg).into()
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        let mut seeds_given = false;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            config.apply_text(&text)?;
            seeds_given = text
                .lines()
                .any(|l| l.split('=').next().is_some_and(|k| k.trim() == "seeds"));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| config_error(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            config.set(k, v)?;
            seeds_given |= k.trim() == "seeds";
        }
        let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| config.set(k, &v));
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("lr", self.lr.map(|v| v.to_string()))?;
        set("lambda", self.lambda.map(|v| v.to_string()))?;
        set("samples", self.samples.map(|v| v.to_string()))?;
        set("snr", self.snr.map(|v| v.to_string()))?;
        set("alpha", self.alpha_fixed.map(|v| v.to_string()))?;
        set("beta", self.beta_fixed.map(|v| v.to_string()))?;
        set("blend_start", self.blend_start_epoch.map(|v| v.to_string()))?;
        set("k", self.k.map(|v| v.to_string()))?;
        set("proto_refresh", self.proto_refresh.map(|v| v.to_string()))?;
        set("threshold", self.threshold.map(|v| v.to_string()))?;
        set("baseline", self.baseline.clone())?;
        let switch = |s: Option<Switch>| s.map(|s| matches!(s, Switch::On).to_string());
        set("ilrb", switch(self.ilrb))?;
        set("plrb", switch(self.plrb))?;
        if self.alpha_shared {
            config.alpha_shared = true;
        }
        if self.beta_shared {
            config.beta_shared = true;
        }
        if self.contrastive_literal {
            config.pair_policy = sarb::plrb::PairPolicy::Literal;
        }
        if self.stratified {
            config.strategy = sarb::data::DropStrategy::Stratified;
        }
        if let Some(p) = &self.proportions {
            config.proportions = p.clone();
        }
        let env_seed = match std::env::var("SARB_SEED") {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| config_error(format!("SARB_SEED='{v}' is not a seed")))?,
            ),
            Err(_) => None,
        };
        if let Some(seeds) = &self.seeds {
            config.seeds = seeds.clone();
        } else if let Some(seed) = self.seed {
            config.seeds = vec![seed];
        } else if let (false, Some(seed)) = (seeds_given, env_seed) {
            config.seeds = vec![seed];
        }
        config.validate()?;
        Ok(config)
    }

    fn prepare(&self, config: &TrainConfig) -> Result<Prepared> {
        match &self.dataset_dir {
            Some(dir) => Ok(Prepared {
                train: load_dataset(&dir.join("train")).with_context(|| format!("loading {}/train", dir.display()))?,
                test: load_dataset(&dir.join("test")).with_context(|| format!("loading {}/test", dir.display()))?,
            }),
            None => Ok(trainer::prepare(config)?),
        }
    }
}

fn print_metrics(label: &str, m: &MetricReport) {
    println!(
        "{label}: mAP {:.4}  OP {:.4} OR {:.4} OF1 {:.4}  CP {:.4} CR {:.4} CF1 {:.4}",
        m.map, m.op, m.or, m.of1, m.cp, m.cr, m.cf1
    );
    if m.flags.no_predictions {
        println!("{label}: no score exceeded the threshold {}", m.threshold);
    }
}

fn write_sweep(out: &Path, sweep: &SweepResult, plots: bool) -> Result<()> {
    fs::create_dir_all(out)?;
    report::write_sweep_summary(&out.join("sweep_summary.csv"), sweep)?;
    report::write_sweep_metrics(&out.join("metrics.csv"), sweep)?;
    let aps: Vec<(f64, &[Option<f64>])> = sweep
        .summaries
        .iter()
        .map(|s| (s.proportion, s.per_category_ap.as_slice()))
        .collect();
    write_ap_per_category(&out.join("ap_per_category.csv"), &aps)?;
    for run in &sweep.runs {
        let dir = out.join("runs").join(format!("p{}_s{}", run.proportion, run.seed));
        fs::create_dir_all(&dir)?;
        report::write_train_log(&dir.join("train_log.csv"), &run.log)?;
        report::write_epochs(&dir.join("epochs.csv"), &run.epochs)?;
        report::write_rebuilds(&dir.join("rebuilds.csv"), &run.rebuilds)?;
    }
    if plots {
        fs::write(
            out.join("map_vs_proportion.svg"),
            report::map_vs_proportion_svg(&[("mAP".into(), sweep)]),
        )?;
        let curves: Vec<(String, &[trainer::EpochReport])> = sweep
            .runs
            .iter()
            .map(|r| (format!("p={} seed={}", r.proportion, r.seed), r.epochs.as_slice()))
            .collect();
        fs::write(out.join("loss_curve.svg"), report::loss_curve_svg(&curves))?;
    }
    Ok(())
}

fn train(out: &Path, proportion: Option<f64>, resume: Option<&Path>, opts: &ConfigArgs) -> Result<()> {
    let config = opts.resolve()?;
    let data = opts.prepare(&config)?;
    let proportion = proportion.unwrap_or(config.proportions[0]);
    let seed = config.seeds[0];
    let started = Instant::now();
    let (partial, achieved) = drop_labels(&data.train, proportion, seed, config.strategy)?;
    let mut t = Trainer::new(config.clone(), seed, partial.categories, partial.dim)?;
    if let Some(path) = resume {
        t.load_checkpoint(path)
            .with_context(|| format!("resuming from {}", path.display()))?;
    }
    t.train(&partial)?;
    fs::create_dir_all(out)?;
    t.save_checkpoint(&out.join("checkpoint.bin"))?;
    if let Some(bank) = &t.bank {
        bank.write_csv(&out.join("prototypes.csv"))?;
    }
    let metrics = t.evaluate(&data.test, achieved)?;
    let record = t.into_record(metrics, proportion, achieved, started);
    fs::write(out.join("config.txt"), config.normalized())?;
    report::write_train_log(&out.join("train_log.csv"), &record.log)?;
    report::write_epochs(&out.join("epochs.csv"), &record.epochs)?;
    report::write_rebuilds(&out.join("rebuilds.csv"), &record.rebuilds)?;
    write_metrics(&out.join("metrics.csv"), &[(proportion, &record.metrics)])?;
    write_ap_per_category(
        &out.join("ap_per_category.csv"),
        &[(proportion, &record.metrics.per_category_ap)],
    )?;
    if opts.plots {
        let svg = report::loss_curve_svg(&[(format!("p={proportion}"), record.epochs.as_slice())]);
        fs::write(out.join("loss_curve.svg"), svg)?;
    }
    for w in &record.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "config {} seed {seed} known {achieved:.4} ({} steps, {:.1}s)",
        record.config_hash,
        record.log.len(),
        record.wall_time.as_secs_f64()
    );
    print_metrics("test", &record.metrics);
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { out, opts } => {
            let config = opts.resolve()?;
            let data = trainer::prepare(&config)?;
            save_dataset(&out.join("train"), &data.train)?;
            save_dataset(&out.join("test"), &data.test)?;
            fs::write(out.join("config.txt"), config.normalized())?;
            println!(
                "wrote {} train and {} test samples to {}",
                data.train.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::Train {
            out,
            proportion,
            resume,
            opts,
        } => train(&out, proportion, resume.as_deref(), &opts)?,
        Command::Sweep { out, opts } => {
            let config = opts.resolve()?;
            let data = opts.prepare(&config)?;
            let sweep = trainer::sweep(&config, &data)?;
            write_sweep(&out, &sweep, opts.plots)?;
            fs::write(out.join("config.txt"), config.normalized())?;
            for s in &sweep.summaries {
                println!("p={}: mAP {:.4} CF1 {:.4} OF1 {:.4}", s.proportion, s.map, s.cf1, s.of1);
            }
            println!("average mAP {:.4}", sweep.average_map);
        }
        Command::Evaluate {
            checkpoint,
            out,
            proportion,
            opts,
        } => {
            let config = opts.resolve()?;
            let data = opts.prepare(&config)?;
            let (model, store) = load_model(&checkpoint)?;
            let scores = model.predict(&store, &data.test)?;
            let m = metrics::evaluate(&scores, &data.test.labels(), config.threshold, proportion)?;
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                write_metrics(&out.join("metrics.csv"), &[(proportion, &m)])?;
                write_ap_per_category(&out.join("ap_per_category.csv"), &[(proportion, &m.per_category_ap)])?;
            }
            print_metrics("test", &m);
        }
        Command::Ablate { out, opts } => {
            let config = opts.resolve()?;
            let data = opts.prepare(&config)?;
            let results = trainer::ablate(&config, &data)?;
            fs::create_dir_all(&out)?;
            let mut w = csv::Writer::from_path(out.join("ablation.csv"))?;
            let mut header = vec!["variant".to_string(), "average_mAP".to_string()];
            header.extend(config.proportions.iter().map(|p| format!("mAP@{p}")));
            w.write_record(&header)?;
            for (name, sweep) in &results {
                write_sweep(&out.join(name), sweep, false)?;
                let mut row = vec![name.to_string(), sweep.average_map.to_string()];
                row.extend(sweep.summaries.iter().map(|s| s.map.to_string()));
                w.write_record(&row)?;
                println!("{name:12} average mAP {:.4}", sweep.average_map);
            }
            w.flush()?;
            fs::write(out.join("config.txt"), config.normalized())?;
            if opts.plots {
                let named: Vec<(String, &SweepResult)> = results.iter().map(|(n, s)| (n.to_string(), s)).collect();
                fs::write(out.join("map_vs_proportion.svg"), report::map_vs_proportion_svg(&named))?;
            }
        }
    }
    Ok(())
}

/// 2 for configuration errors, 3 when a NaN or infinity surfaced.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<sarb::Error>() {
        Some(e) if e.is_numeric_failure() => 3,
        Some(sarb::Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
