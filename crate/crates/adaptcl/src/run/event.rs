//! Event-driven loops for the asynchronous baselines: FedAsync commits on
//! every arrival with a staleness-discounted mixing weight; SSP does the
//! same with a fixed `1/W` coefficient and a bounded-staleness barrier.

use crate::config::{ExperimentConfig, Policy};
use crate::error::Result;
use crate::metrics::{RoundMetrics, RunSummary};
use crate::nn::{sparse_train, Network};
use crate::run::{accuracy, heterogeneity_or_zero, mix_into, setup, RunOutput, Setup};

struct AsyncWorker {
    rng: rand_chacha::ChaCha8Rng,
    /// Model trained since the last fetch, waiting to commit.
    in_flight: Option<Network>,
    commit_at: f64,
    fetched_version: u64,
    rounds_done: usize,
    /// Waiting for the SSP barrier to open.
    parked: bool,
    last_phi: f64,
}

pub fn run_fedasync(config: &ExperimentConfig) -> Result<RunOutput> {
    run_event_driven(config, Policy::FedAsyncS)
}

pub fn run_ssp(config: &ExperimentConfig) -> Result<RunOutput> {
    run_event_driven(config, Policy::SspS)
}

fn run_event_driven(config: &ExperimentConfig, policy: Policy) -> Result<RunOutput> {
    let ssp = policy == Policy::SspS;
    if ssp && config.ssp_threshold == 0 {
        return Err(crate::error::Error::InvalidConfig(
            "ssp_threshold must be >= 1".into(),
        ));
    }
    let Setup {
        shape: _,
        mut global,
        shards,
        test,
        profiles,
        worker_rngs,
        mut jitters,
        full_bytes,
    } = setup(config)?;

    let workers = config.workers;
    let mut states: Vec<AsyncWorker> = worker_rngs
        .into_iter()
        .map(|rng| AsyncWorker {
            rng,
            in_flight: None,
            commit_at: 0.0,
            fetched_version: 0,
            rounds_done: 0,
            parked: false,
            last_phi: 0.0,
        })
        .collect();

    let mut version = 0u64;
    let mut now = 0.0f64;
    let mut rounds: Vec<RoundMetrics> = Vec::with_capacity(workers * config.rounds);

    // initial fetches at t = 0, in worker order
    for w in 0..workers {
        start_round(
            &mut states[w],
            &global.net,
            &shards[w],
            &profiles[w],
            &mut jitters[w],
            config,
            full_bytes,
            version,
            now,
        )?;
    }

    while let Some(w) = next_commit(&states) {
        now = states[w].commit_at;
        let local = states[w]
            .in_flight
            .take()
            .expect("scheduled worker has a model");
        let staleness = version - states[w].fetched_version;
        let mu = if ssp {
            1.0 / workers as f64
        } else {
            config.async_mu0 * ((staleness + 1) as f64).powf(-config.async_mix_exp)
        };
        mix_into(&mut global.net, &local, mu);
        version += 1;
        states[w].rounds_done += 1;

        let logits = global.net.forward_eval(&test.inputs)?;
        let phis: Vec<f64> = states.iter().map(|s| s.last_phi).collect();
        rounds.push(RoundMetrics {
            round: rounds.len() + 1,
            sim_time_s: now,
            h: heterogeneity_or_zero(&phis),
            acc: accuracy(&logits, &test.labels),
            phi: phis,
            gamma: vec![1.0; workers],
            rate: vec![0.0; workers],
            equal_rate_similarity: None,
            payload_bytes: 2 * full_bytes,
            overhead_bytes: 0,
            staleness: Some(staleness),
        });

        // the committing worker refetches immediately unless done or barred
        if states[w].rounds_done < config.rounds {
            if ssp && barred(&states, w, config.ssp_threshold) {
                states[w].parked = true;
            } else {
                start_round(
                    &mut states[w],
                    &global.net,
                    &shards[w],
                    &profiles[w],
                    &mut jitters[w],
                    config,
                    full_bytes,
                    version,
                    now,
                )?;
            }
        }
        // a finished round may open the barrier for parked workers
        if ssp {
            for v in 0..workers {
                if states[v].parked && !barred(&states, v, config.ssp_threshold) {
                    states[v].parked = false;
                    start_round(
                        &mut states[v],
                        &global.net,
                        &shards[v],
                        &profiles[v],
                        &mut jitters[v],
                        config,
                        full_bytes,
                        version,
                        now,
                    )?;
                }
            }
        }
    }

    let final_acc = rounds.last().map_or(0.0, |m| m.acc);
    let best = rounds
        .iter()
        .max_by(|a, b| a.acc.total_cmp(&b.acc).then(b.round.cmp(&a.round)))
        .expect("at least one aggregation");
    let summary = RunSummary {
        policy: policy.as_str().to_string(),
        seed: config.seed,
        final_acc,
        best_acc: best.acc,
        best_acc_time_s: best.sim_time_s,
        total_time_s: now,
        mean_param_reduction: 0.0,
        baseline_policy: None,
        baseline_time_s: None,
        speedup: None,
    };
    Ok(RunOutput {
        rounds,
        summary,
        final_global: global,
    })
}

/// Earliest scheduled commit; ties break toward the smaller worker id.
fn next_commit(states: &[AsyncWorker]) -> Option<usize> {
    states
        .iter()
        .enumerate()
        .filter(|(_, s)| s.in_flight.is_some())
        .min_by(|a, b| a.1.commit_at.total_cmp(&b.1.commit_at).then(a.0.cmp(&b.0)))
        .map(|(w, _)| w)
}

/// SSP barrier: starting the next round would put the worker more than
/// `threshold` rounds ahead of the slowest.
fn barred(states: &[AsyncWorker], w: usize, threshold: usize) -> bool {
    let min_done = states.iter().map(|s| s.rounds_done).min().unwrap_or(0);
    states[w].rounds_done + 1 > min_done + threshold
}

#[allow(clippy::too_many_arguments)]
fn start_round(
    state: &mut AsyncWorker,
    global: &Network,
    shard: &crate::data::Dataset,
    profile: &crate::env::WorkerProfile,
    jitter: &mut Option<crate::env::Jitter>,
    config: &ExperimentConfig,
    full_bytes: usize,
    version: u64,
    now: f64,
) -> Result<()> {
    let mut local = global.clone();
    let stats = sparse_train(
        &mut local,
        &shard.inputs,
        &shard.labels,
        config.epochs,
        config.lambda,
        config.lr,
        config.batch_size,
        &mut state.rng,
    )?;
    let work_units = 2.0 * local.macs_per_sample() as f64 * stats.samples as f64;
    let mut phi =
        profile.train_seconds(work_units) + 2.0 * profile.transfer_seconds(full_bytes as f64);
    if let Some(j) = jitter.as_mut() {
        phi *= j.draw();
    }
    state.in_flight = Some(local);
    state.commit_at = now + phi;
    state.fetched_version = version;
    state.last_phi = phi;
    Ok(())
}
