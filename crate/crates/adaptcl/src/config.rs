//! Experiment configuration: a flat key-value text file plus programmatic
//! overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::aggregate::AggregationKind;
use crate::error::{Error, Result};
use crate::prune::PruneMethod;
use crate::rate::RatePolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    AdaptCl,
    FedAvg,
    FedAvgS,
    FedAsyncS,
    SspS,
}

impl Policy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::AdaptCl => "adaptcl",
            Policy::FedAvg => "fedavg",
            Policy::FedAvgS => "fedavg-s",
            Policy::FedAsyncS => "fedasync-s",
            Policy::SspS => "ssp-s",
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptcl" => Ok(Policy::AdaptCl),
            "fedavg" => Ok(Policy::FedAvg),
            "fedavg-s" => Ok(Policy::FedAvgS),
            "fedasync-s" => Ok(Policy::FedAsyncS),
            "ssp-s" => Ok(Policy::SspS),
            other => Err(Error::InvalidConfig(format!("unknown policy '{other}'"))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All knobs of one simulated run. Field names double as config-file keys.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub policy: Policy,
    /// W: number of workers.
    pub workers: usize,
    /// T: communication rounds (per worker, for the asynchronous policies).
    pub rounds: usize,
    /// E: local training epochs per round.
    pub epochs: f64,
    /// PI: rounds between pruning events.
    pub prune_interval: usize,
    /// Fraction of the local epochs run before the in-round pruning step.
    pub beta: f64,

    pub alpha: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub gamma_min: f64,
    pub prune_method: PruneMethod,
    pub aggregation: AggregationKind,
    /// Weight workers by shard size instead of uniformly.
    pub weight_by_data: bool,

    /// Ratio of slowest to fastest full-model update time.
    pub sigma: f64,
    /// Bandwidth of the fastest worker, MB/s.
    pub b_max: f64,
    /// Simulated seconds per unit of training work (same for all workers).
    pub compute_coeff: f64,
    /// Multiplicative update-time jitter magnitude; 0 disables noise.
    pub jitter: f64,

    pub num_classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub feature_dim: usize,
    /// Blob class-mean separation.
    pub blob_sep: f64,
    /// Percentage of the data sorted by label before sharding.
    pub noniid_s: f64,

    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,

    /// s: staleness bound for the ssp-s policy.
    pub ssp_threshold: usize,
    /// Base mixing weight of the fedasync-s policy.
    pub async_mu0: f64,
    /// Staleness exponent of the fedasync-s mixing weight.
    pub async_mix_exp: f64,

    /// Policy whose total time anchors the summary speedup, if any.
    pub baseline_policy: Option<Policy>,
    /// Fixed per-event, per-worker pruned rates overriding the learned ones
    /// (used by the pruning-order ablation); set programmatically.
    pub rate_schedule: Option<Vec<Vec<f64>>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            policy: Policy::AdaptCl,
            workers: 10,
            rounds: 60,
            epochs: 2.0,
            prune_interval: 10,
            beta: 1.0,
            alpha: 2.0,
            rho_min: 0.05,
            rho_max: 0.5,
            gamma_min: 0.1,
            prune_method: PruneMethod::CigBnScalor,
            aggregation: AggregationKind::ByWorker,
            weight_by_data: false,
            sigma: 2.0,
            b_max: 5.0,
            compute_coeff: 0.0,
            jitter: 0.0,
            num_classes: 4,
            train_samples: 2000,
            test_samples: 500,
            feature_dim: 16,
            blob_sep: 3.0,
            noniid_s: 0.0,
            lambda: 1e-3,
            lr: 0.05,
            batch_size: 32,
            hidden: vec![64, 32],
            seed: 42,
            ssp_threshold: 2,
            async_mu0: 0.5,
            async_mix_exp: 0.5,
            baseline_policy: Some(Policy::FedAvgS),
            rate_schedule: None,
        }
    }
}

impl ExperimentConfig {
    pub fn rate_policy(&self) -> RatePolicy {
        RatePolicy {
            alpha: self.alpha,
            rho_min: self.rho_min,
            rho_max: self.rho_max,
            gamma_min: self.gamma_min,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        if self.prune_interval == 0 {
            return Err(Error::InvalidConfig("prune_interval must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!(
                "beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        if !(0.0..=100.0).contains(&self.noniid_s) {
            return Err(Error::InvalidConfig(format!(
                "noniid_s must be in [0, 100], got {}",
                self.noniid_s
            )));
        }
        if self.epochs < 0.0 {
            return Err(Error::InvalidConfig("epochs must be nonnegative".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidConfig("at least one hidden layer".into()));
        }
        if let Some(schedule) = &self.rate_schedule {
            for rates in schedule {
                if rates.len() != self.workers {
                    return Err(Error::InvalidConfig(format!(
                        "rate schedule row has {} entries for {} workers",
                        rates.len(),
                        self.workers
                    )));
                }
            }
        }
        self.rate_policy().validate()?;
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_str_contents(contents: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (lineno, raw) in contents.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let contents = std::fs::read_to_string(path)?;
        Self::from_str_contents(&contents)
    }

    /// Sets one field by its config key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::InvalidConfig(format!("bad value '{value}' for key '{key}'"))
            })
        }
        match key {
            "policy" => self.policy = value.parse()?,
            "workers" => self.workers = num(key, value)?,
            "rounds" => self.rounds = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "prune_interval" => self.prune_interval = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "rho_min" => self.rho_min = num(key, value)?,
            "rho_max" => self.rho_max = num(key, value)?,
            "gamma_min" => self.gamma_min = num(key, value)?,
            "prune_method" => self.prune_method = value.parse()?,
            "aggregation" => self.aggregation = value.parse()?,
            "weight_by_data" => self.weight_by_data = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "b_max" => self.b_max = num(key, value)?,
            "compute_coeff" => self.compute_coeff = num(key, value)?,
            "jitter" => self.jitter = num(key, value)?,
            "num_classes" => self.num_classes = num(key, value)?,
            "train_samples" => self.train_samples = num(key, value)?,
            "test_samples" => self.test_samples = num(key, value)?,
            "feature_dim" => self.feature_dim = num(key, value)?,
            "blob_sep" => self.blob_sep = num(key, value)?,
            "noniid_s" => self.noniid_s = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|v| num::<usize>(key, v.trim()))
                    .collect::<Result<_>>()?;
            }
            "seed" => self.seed = num(key, value)?,
            "ssp_threshold" => self.ssp_threshold = num(key, value)?,
            "async_mu0" => self.async_mu0 = num(key, value)?,
            "async_mix_exp" => self.async_mix_exp = num(key, value)?,
            "baseline_policy" => {
                self.baseline_policy = if value == "none" {
                    None
                } else {
                    Some(value.parse()?)
                };
            }
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }
}
