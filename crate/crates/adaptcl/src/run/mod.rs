//! The experiment driver: server/worker loops under the simulated clock for
//! the adaptive policy and the BSP/ASP/SSP baselines.

mod bsp;
mod event;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Policy};
use crate::data::{partition_noniid, BlobTask, Dataset};
use crate::env::{Jitter, JitterSpec, WorkerProfile};
use crate::error::Result;
use crate::metrics::{RoundMetrics, RunSummary};
use crate::nn::{BaseModel, Mat, ModelShape, Network};
use crate::prune::full_params;
use crate::seeds;

pub use bsp::run_bsp;
pub use event::{run_fedasync, run_ssp};

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rounds: Vec<RoundMetrics>,
    pub summary: RunSummary,
    pub final_global: BaseModel,
}

/// Runs the configured policy, then the configured baseline (when it is a
/// different policy) to fill in the summary speedup.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut out = run_policy(config, config.policy)?;
    if let Some(baseline) = config.baseline_policy {
        let baseline_time = if baseline == config.policy {
            out.summary.total_time_s
        } else {
            run_policy(config, baseline)?.summary.total_time_s
        };
        out.summary.baseline_policy = Some(baseline.as_str().to_string());
        out.summary.baseline_time_s = Some(baseline_time);
        out.summary.speedup = Some(baseline_time / out.summary.total_time_s);
    }
    Ok(out)
}

/// Runs exactly one policy, ignoring the baseline configuration.
pub fn run_policy(config: &ExperimentConfig, policy: Policy) -> Result<RunOutput> {
    config.validate()?;
    match policy {
        Policy::AdaptCl => run_bsp(config, policy),
        Policy::FedAvg | Policy::FedAvgS => run_bsp(config, policy),
        Policy::FedAsyncS => run_fedasync(config),
        Policy::SspS => run_ssp(config),
    }
}

/// Deterministic shared state every policy starts from.
pub(crate) struct Setup {
    pub shape: ModelShape,
    pub global: BaseModel,
    pub shards: Vec<Dataset>,
    pub test: Dataset,
    pub profiles: Vec<WorkerProfile>,
    pub worker_rngs: Vec<ChaCha8Rng>,
    pub jitters: Vec<Option<Jitter>>,
    /// Wire bytes of the full dense model.
    pub full_bytes: usize,
}

pub(crate) fn setup(config: &ExperimentConfig) -> Result<Setup> {
    let shape = ModelShape::new(
        config.feature_dim,
        config.hidden.clone(),
        config.num_classes,
    );
    shape.validate()?;

    let task = BlobTask::new(
        config.num_classes,
        config.feature_dim,
        config.blob_sep,
        seeds::mix(config.seed, seeds::TAG_DATA_MEANS),
    );
    let train = task.sample(
        config.train_samples,
        seeds::mix(config.seed, seeds::TAG_DATA_TRAIN),
    );
    let test = task.sample(
        config.test_samples,
        seeds::mix(config.seed, seeds::TAG_DATA_TEST),
    );
    let shard_indexes = partition_noniid(
        &train,
        config.workers,
        config.noniid_s,
        seeds::mix(config.seed, seeds::TAG_PARTITION),
    )?;
    let shards: Vec<Dataset> = shard_indexes.iter().map(|idx| train.subset(idx)).collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds::mix(config.seed, seeds::TAG_MODEL_INIT));
    let global = BaseModel::init(shape.clone(), &mut init_rng)?;

    let full_bytes = crate::prune::PARAM_WIRE_BYTES * full_params(&shape);
    // full-model training seconds per round, used to invert the target
    // update-time spread into bandwidths
    let mean_shard = config.train_samples as f64 / config.workers as f64;
    let work_full =
        2.0 * global.net.macs_per_sample() as f64 * mean_shard * config.epochs;
    let t_train = config.compute_coeff * work_full;
    let bandwidths = if config.workers == 1 {
        vec![config.b_max]
    } else {
        crate::env::make_bandwidths(
            config.b_max,
            config.sigma,
            config.workers,
            full_bytes as f64,
            t_train,
        )?
    };

    let mut profiles = Vec::with_capacity(config.workers);
    let mut jitters = Vec::with_capacity(config.workers);
    let mut worker_rngs = Vec::with_capacity(config.workers);
    for (w, &bandwidth) in bandwidths.iter().enumerate() {
        let noise = (config.jitter > 0.0).then(|| JitterSpec {
            magnitude: config.jitter,
            seed: seeds::mix(seeds::mix(config.seed, seeds::TAG_JITTER), w as u64),
        });
        let profile = WorkerProfile {
            worker_id: w,
            bandwidth_mb_s: bandwidth,
            compute_coeff: config.compute_coeff,
            noise,
        };
        profile.validate()?;
        jitters.push(profile.noise.as_ref().map(JitterSpec::stream));
        profiles.push(profile);
        worker_rngs.push(ChaCha8Rng::seed_from_u64(seeds::worker_seed(
            config.seed,
            w,
        )));
    }

    Ok(Setup {
        shape,
        global,
        shards,
        test,
        profiles,
        worker_rngs,
        jitters,
        full_bytes,
    })
}

/// Argmax accuracy of the global model on the held-out set.
pub(crate) fn evaluate(global: &BaseModel, test: &Dataset) -> Result<f64> {
    let logits = global.net.forward_eval(&test.inputs)?;
    Ok(accuracy(&logits, &test.labels))
}

pub(crate) fn accuracy(logits: &Mat, labels: &[usize]) -> f64 {
    let correct = (0..logits.rows())
        .filter(|&r| {
            let row = logits.row(r);
            let pred = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            pred == labels[r]
        })
        .count();
    correct as f64 / logits.rows().max(1) as f64
}

/// `global <- (1 - mu) * global + mu * local` over every tensor. Both
/// networks must be full-width.
pub(crate) fn mix_into(global: &mut Network, local: &Network, mu: f64) {
    let keep = 1.0 - mu;
    for (gb, lb) in global.hidden.iter_mut().zip(&local.hidden) {
        for (g, l) in gb
            .dense
            .weight
            .data_mut()
            .iter_mut()
            .zip(lb.dense.weight.data())
        {
            *g = keep * *g + mu * l;
        }
        if let (Some(gbn), Some(lbn)) = (gb.bn.as_mut(), &lb.bn) {
            for (g, l) in gbn.scale.iter_mut().zip(&lbn.scale) {
                *g = keep * *g + mu * l;
            }
            for (g, l) in gbn.shift.iter_mut().zip(&lbn.shift) {
                *g = keep * *g + mu * l;
            }
            for (g, l) in gbn.running_mean.iter_mut().zip(&lbn.running_mean) {
                *g = keep * *g + mu * l;
            }
            for (g, l) in gbn.running_var.iter_mut().zip(&lbn.running_var) {
                *g = keep * *g + mu * l;
            }
        }
    }
    for (g, l) in global
        .output
        .weight
        .data_mut()
        .iter_mut()
        .zip(local.output.weight.data())
    {
        *g = keep * *g + mu * l;
    }
    if let (Some(gb), Some(lb)) = (global.output.bias.as_mut(), &local.output.bias) {
        for (g, l) in gb.iter_mut().zip(lb) {
            *g = keep * *g + mu * l;
        }
    }
}

pub(crate) fn heterogeneity_or_zero(phis: &[f64]) -> f64 {
    if phis.len() < 2 {
        0.0
    } else {
        crate::env::heterogeneity(phis).unwrap_or(0.0)
    }
}
