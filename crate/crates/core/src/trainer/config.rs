//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{DatasetSpec, DropStrategy};
use crate::losses::DEFAULT_LAMBDA;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::numerics::AdamConfig;
use crate::plrb::PairPolicy;
use crate::{Error, Result};

/// How a blend coefficient is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoeffMode {
    Learnable,
    Fixed(f64),
}

impl FromStr for CoeffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "learnable" {
            return Ok(Self::Learnable);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("expected 'learnable' or a number, got '{s}'")))?;
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::Config(format!("fixed coefficient {v} outside (0, 1]")));
        }
        Ok(Self::Fixed(v))
    }
}

impl std::fmt::Display for CoeffMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Learnable => f.write_str("learnable"),
            Self::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BaselineMode {
    #[default]
    None,
    /// Mixup of the raw input maps.
    IpMixup,
    /// Mixup of the backbone maps. The inputs already are backbone maps,
    /// so this coincides with [`BaselineMode::IpMixup`].
    FmMixup,
}

impl FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "ip-mixup" => Ok(Self::IpMixup),
            "fm-mixup" => Ok(Self::FmMixup),
            _ => Err(Error::Config(format!("unknown baseline '{s}'"))),
        }
    }
}

impl std::fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::IpMixup => "ip-mixup",
            Self::FmMixup => "fm-mixup",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub test_samples: usize,
    pub proportions: Vec<f64>,
    pub strategy: DropStrategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// The learning rate is divided by `lr_decay_factor` every
    /// `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub blend_start: usize,
    pub proto_refresh: usize,
    pub k: usize,
    pub lambda: f64,
    pub ilrb: bool,
    pub plrb: bool,
    pub alpha: CoeffMode,
    pub beta: CoeffMode,
    pub alpha_shared: bool,
    pub beta_shared: bool,
    pub pair_policy: PairPolicy,
    pub seeds: Vec<u64>,
    pub baseline: BaselineMode,
    pub mixup_alpha: f64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            test_samples: 1000,
            proportions: (1..=9).map(|i| i as f64 / 10.0).collect(),
            strategy: DropStrategy::Independent,
            epochs: 20,
            batch_size: 16,
            adam: AdamConfig::default(),
            lr_decay_every: 10,
            lr_decay_factor: 10.0,
            blend_start: 5,
            proto_refresh: 5,
            k: 4,
            lambda: DEFAULT_LAMBDA,
            ilrb: true,
            plrb: true,
            alpha: CoeffMode::Learnable,
            beta: CoeffMode::Learnable,
            alpha_shared: false,
            beta_shared: false,
            pair_policy: PairPolicy::KnownOnly,
            seeds: vec![0, 1, 2],
            baseline: BaselineMode::None,
            mixup_alpha: 1.0,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("'{key}' expects on/off, got '{value}'"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn switch(on: bool) -> &'static str {
    if on {
        "on"
    } else {
        "off"
    }
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let d = &mut self.dataset;
        match key.trim().replace('-', "_").as_str() {
            "samples" => d.samples = parse(key, value)?,
            "categories" => d.categories = parse(key, value)?,
            "height" => d.height = parse(key, value)?,
            "width" => d.width = parse(key, value)?,
            "dim" => d.dim = parse(key, value)?,
            "min_positives" => d.min_positives = parse(key, value)?,
            "max_positives" => d.max_positives = parse(key, value)?,
            "snr" => d.snr = parse(key, value)?,
            "dataset_seed" => d.seed = parse(key, value)?,
            "test_samples" => self.test_samples = parse(key, value)?,
            "proportions" => self.proportions = parse_list(key, value)?,
            "stratified" => {
                self.strategy = if parse_switch(key, value)? {
                    DropStrategy::Stratified
                } else {
                    DropStrategy::Independent
                }
            }
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.adam.lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "eps" => self.adam.eps = parse(key, value)?,
            "weight_decay" => self.adam.weight_decay = parse(key, value)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "blend_start" | "blend_start_epoch" => self.blend_start = parse(key, value)?,
            "proto_refresh" => self.proto_refresh = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "ilrb" => self.ilrb = parse_switch(key, value)?,
            "plrb" => self.plrb = parse_switch(key, value)?,
            "alpha" => self.alpha = value.parse()?,
            "beta" => self.beta = value.parse()?,
            "alpha_shared" => self.alpha_shared = parse_switch(key, value)?,
            "beta_shared" => self.beta_shared = parse_switch(key, value)?,
            "contrastive" => {
                self.pair_policy = match value {
                    "known-only" => PairPolicy::KnownOnly,
                    "literal" => PairPolicy::Literal,
                    _ => return Err(Error::Config(format!("unknown contrastive policy '{value}'"))),
                }
            }
            "seeds" => self.seeds = parse_list(key, value)?,
            "baseline" => self.baseline = value.parse()?,
            "mixup_alpha" => self.mixup_alpha = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.proportions.is_empty() {
            return fail("at least one known proportion is required".into());
        }
        if let Some(p) = self.proportions.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return fail(format!("known proportion {p} outside (0, 1]"));
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.batch_size < 2 {
            return fail(format!("batch size must be >= 2, got {}", self.batch_size));
        }
        if self.test_samples == 0 {
            return fail("test_samples must be positive".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return fail("Adam lr must be positive and betas in [0, 1)".into());
        }
        if !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return fail("Adam eps must be positive and weight decay non-negative".into());
        }
        if self.lr_decay_every == 0 || !(self.lr_decay_factor >= 1.0) {
            return fail("lr decay needs a positive interval and a factor >= 1".into());
        }
        if self.proto_refresh == 0 {
            return fail("proto_refresh must be positive".into());
        }
        if self.k == 0 {
            return fail("K must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.mixup_alpha > 0.0 && self.mixup_alpha.is_finite()) {
            return fail(format!("mixup_alpha must be positive, got {}", self.mixup_alpha));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return fail(format!("threshold {} outside [0, 1)", self.threshold));
        }
        if self.baseline != BaselineMode::None && (self.ilrb || self.plrb) {
            return fail("mixup baselines run with ilrb and plrb off".into());
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.adam.lr / self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }

    /// Epochs at whose start the prototype bank is rebuilt.
    pub fn is_refresh_epoch(&self, epoch: usize) -> bool {
        self.plrb && epoch >= self.blend_start && (epoch - self.blend_start).is_multiple_of(self.proto_refresh)
    }

    /// Every setting, one `key = value` per line in a fixed order;
    /// [`TrainConfig::parse_text`] reads it back unchanged.
    pub fn normalized(&self) -> String {
        let d = &self.dataset;
        let a = &self.adam;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("samples", d.samples.to_string());
        put("categories", d.categories.to_string());
        put("height", d.height.to_string());
        put("width", d.width.to_string());
        put("dim", d.dim.to_string());
        put("min_positives", d.min_positives.to_string());
        put("max_positives", d.max_positives.to_string());
        put("snr", d.snr.to_string());
        put("dataset_seed", d.seed.to_string());
        put("test_samples", self.test_samples.to_string());
        put("proportions", join(&self.proportions));
        put("stratified", switch(self.strategy == DropStrategy::Stratified).into());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", a.lr.to_string());
        put("beta1", a.beta1.to_string());
        put("beta2", a.beta2.to_string());
        put("eps", a.eps.to_string());
        put("weight_decay", a.weight_decay.to_string());
        put("lr_decay_every", self.lr_decay_every.to_string());
        put("lr_decay_factor", self.lr_decay_factor.to_string());
        put("blend_start", self.blend_start.to_string());
        put("proto_refresh", self.proto_refresh.to_string());
        put("k", self.k.to_string());
        put("lambda", self.lambda.to_string());
        put("ilrb", switch(self.ilrb).into());
        put("plrb", switch(self.plrb).into());
        put("alpha", self.alpha.to_string());
        put("beta", self.beta.to_string());
        put("alpha_shared", switch(self.alpha_shared).into());
        put("beta_shared", switch(self.beta_shared).into());
        put(
            "contrastive",
            match self.pair_policy {
                PairPolicy::KnownOnly => "known-only",
                PairPolicy::Literal => "literal",
            }
            .into(),
        );
        put("seeds", join(&self.seeds));
        put("baseline", self.baseline.to_string());
        put("mixup_alpha", self.mixup_alpha.to_string());
        put("threshold", self.threshold.to_string());
        out
    }

    /// First 16 hex digits of the SHA-256 of [`TrainConfig::normalized`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.normalized().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_schedule() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.epochs, c.batch_size, c.blend_start, c.proto_refresh), (20, 16, 5, 5));
        assert_eq!(c.adam.lr, 1e-5);
        assert_eq!(c.lambda, 0.05);
        assert_eq!(c.proportions.len(), 9);
        for (epoch, lr) in [(0, 1e-5), (9, 1e-5), (10, 1e-6), (19, 1e-6), (20, 1e-7)] {
            assert!((c.lr_at(epoch) - lr).abs() <= 1e-15 * lr, "epoch {epoch}");
        }
        let refresh: Vec<usize> = (0..20).filter(|&e| c.is_refresh_epoch(e)).collect();
        assert_eq!(refresh, vec![5, 10, 15]);
    }

    #[test]
    fn normalized_text_round_trips() {
        let mut c = TrainConfig::default();
        c.apply_text("alpha = 0.5\n# note\nplrb=off\nproportions = 0.1, 0.5\nseeds=7\ncontrastive=literal\n")
            .unwrap();
        assert_eq!(c.alpha, CoeffMode::Fixed(0.5));
        assert!(!c.plrb);
        let back = TrainConfig::parse_text(&c.normalized()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(TrainConfig::default().hash(), c.hash());
    }

    #[test]
    fn bad_settings_are_config_errors() {
        let mut c = TrainConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("alpha", "1.5").is_err());
        assert!(c.set("ilrb", "maybe").is_err());
        assert!(TrainConfig::parse_text("epochs").is_err());
        c.proportions = vec![0.0];
        assert!(c.validate().is_err());
        let c = TrainConfig {
            baseline: BaselineMode::IpMixup,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
