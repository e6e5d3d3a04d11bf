//! Bulk-synchronous loops: the adaptive pruning policy and the FedAVG
//! baselines share one round structure.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::aggregate::{aggregate, AggregationRule};
use crate::config::{ExperimentConfig, Policy};
use crate::env::{SimClock, WorkerProfile};
use crate::error::Result;
use crate::metrics::{RoundMetrics, RunSummary};
use crate::nn::sparse_train;
use crate::prune::{
    build_order, compute_mask, extract_submodel, reconfigure, similarity, GlobalIndex,
    PruneMethod, PruneOrder, SubModel, RATE_WIRE_BYTES,
};
use crate::rate::{compute_pruned_rates, RateHistory};
use crate::run::{evaluate, heterogeneity_or_zero, setup, RunOutput, Setup};
use crate::seeds;

struct Worker {
    sub: SubModel,
    rng: ChaCha8Rng,
    history: RateHistory,
    /// Rates issued at each pruning event, for equal-rate pair detection.
    rate_trail: Vec<f64>,
    pending_rate: f64,
    order: Option<PruneOrder>,
}

/// One synchronous run. `policy` selects adaptive pruning (`adaptcl`),
/// sparse training without pruning (`fedavg-s`) or plain FedAVG (`fedavg`).
pub fn run_bsp(config: &ExperimentConfig, policy: Policy) -> Result<RunOutput> {
    let adaptive = policy == Policy::AdaptCl;
    let lambda = if policy == Policy::FedAvg {
        0.0
    } else {
        config.lambda
    };
    let Setup {
        shape,
        mut global,
        shards,
        test,
        profiles,
        worker_rngs,
        mut jitters,
        full_bytes: _,
    } = setup(config)?;

    let rule = aggregation_rule(config, &shards);
    let mut workers: Vec<Worker> = worker_rngs
        .into_iter()
        .map(|rng| {
            Ok(Worker {
                sub: extract_submodel(&global, &GlobalIndex::full(&shape))?,
                rng,
                history: RateHistory::new(),
                rate_trail: Vec::new(),
                pending_rate: 0.0,
                order: None,
            })
        })
        .collect::<Result<_>>()?;

    let rate_policy = config.rate_policy();
    let mut clock = SimClock::new();
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut prune_events = 0usize;

    for round in 1..=config.rounds {
        let mut phis = Vec::with_capacity(config.workers);
        let mut payload_bytes = 0usize;
        let mut overhead_bytes = 0usize;

        for (w, worker) in workers.iter_mut().enumerate() {
            // server sends the global parameters at the worker's index
            worker.sub = extract_submodel(&global, &worker.sub.index)?;
            let shard = &shards[w];
            let down_bytes = worker.sub.param_wire_bytes();
            let macs_before = worker.sub.net.macs_per_sample();

            let stats_a = sparse_train(
                &mut worker.sub.net,
                &shard.inputs,
                &shard.labels,
                config.beta * config.epochs,
                lambda,
                config.lr,
                config.batch_size,
                &mut worker.rng,
            )?;
            let mut reconfigured = false;
            if adaptive && worker.pending_rate > 0.0 {
                let order = worker.order.as_ref().expect("order built when rate issued");
                let mask = compute_mask(
                    order,
                    &worker.sub.index,
                    worker.pending_rate,
                    config.gamma_min,
                    &shape,
                )?;
                if !mask.remove.is_empty() {
                    worker.sub = reconfigure(&worker.sub, &mask.remove)?;
                    reconfigured = true;
                }
            }
            worker.pending_rate = 0.0;
            let macs_after = worker.sub.net.macs_per_sample();
            let stats_b = sparse_train(
                &mut worker.sub.net,
                &shard.inputs,
                &shard.labels,
                (1.0 - config.beta) * config.epochs,
                lambda,
                config.lr,
                config.batch_size,
                &mut worker.rng,
            )?;
            let up_bytes = worker.sub.param_wire_bytes();

            let work_units = 2.0
                * (macs_before as f64 * stats_a.samples as f64
                    + macs_after as f64 * stats_b.samples as f64);
            let profile: &WorkerProfile = &profiles[w];
            let mut phi = profile.train_seconds(work_units)
                + profile.transfer_seconds(down_bytes as f64)
                + profile.transfer_seconds(up_bytes as f64);
            if let Some(jitter) = jitters[w].as_mut() {
                phi *= jitter.draw();
            }
            // the reconfiguration round still carries the outgoing model's
            // download leg; its time belongs to neither retention level, so
            // the rate estimator skips it (the clock does not)
            if !(reconfigured && config.prune_interval > 1) {
                worker.history.record_update_time(phi)?;
            }
            phis.push(phi);
            payload_bytes += down_bytes + up_bytes;
            if adaptive {
                overhead_bytes += worker.sub.index.wire_bytes() + RATE_WIRE_BYTES;
            }
        }

        let subs: Vec<SubModel> = workers.iter().map(|w| w.sub.clone()).collect();
        global = aggregate(&global, &subs, &rule)?;
        debug_assert_eq!(global.net.param_count(), crate::prune::full_params(&shape));
        let acc = evaluate(&global, &test)?;

        let slowest = phis.iter().cloned().fold(0.0f64, f64::max);
        clock.advance_by(slowest);
        clock.log_round(round);

        // pruning rounds: fold the interval's times into one observation and
        // issue next-round rates
        let mut issued = vec![0.0; config.workers];
        if adaptive && round % config.prune_interval == 0 {
            for worker in workers.iter_mut() {
                let gamma_now = worker.sub.retention();
                worker.history.flush_observation(gamma_now)?;
            }
            build_orders(config, &global, &mut workers, prune_events)?;
            let rates: Vec<f64> = match config.rate_schedule.as_ref() {
                Some(schedule) => schedule
                    .get(prune_events)
                    .cloned()
                    .unwrap_or_else(|| vec![0.0; config.workers]),
                None => {
                    let histories: Vec<RateHistory> =
                        workers.iter().map(|w| w.history.clone()).collect();
                    let pruned: Vec<bool> = workers
                        .iter()
                        .map(|w| w.sub.retention() < 1.0 - 1e-12)
                        .collect();
                    compute_pruned_rates(&histories, &rate_policy, &pruned)?
                        .iter()
                        .map(|d| d.rate)
                        .collect()
                }
            };
            for (worker, &rate) in workers.iter_mut().zip(&rates) {
                worker.pending_rate = rate;
                worker.rate_trail.push(rate);
            }
            issued = rates;
            prune_events += 1;
        }

        rounds.push(RoundMetrics {
            round,
            sim_time_s: clock.now(),
            h: heterogeneity_or_zero(&phis),
            acc,
            phi: phis,
            gamma: workers.iter().map(|w| w.sub.retention()).collect(),
            rate: issued,
            equal_rate_similarity: equal_rate_similarity(&workers),
            payload_bytes,
            overhead_bytes,
            staleness: None,
        });
    }

    let final_acc = rounds.last().map_or(0.0, |m| m.acc);
    let best = rounds
        .iter()
        .max_by(|a, b| a.acc.total_cmp(&b.acc).then(b.round.cmp(&a.round)))
        .expect("at least one round");
    let mean_reduction = workers
        .iter()
        .map(|w| 1.0 - w.sub.retention())
        .sum::<f64>()
        / config.workers as f64;
    let summary = RunSummary {
        policy: policy.as_str().to_string(),
        seed: config.seed,
        final_acc,
        best_acc: best.acc,
        best_acc_time_s: best.sim_time_s,
        total_time_s: clock.now(),
        mean_param_reduction: mean_reduction,
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

fn aggregation_rule(config: &ExperimentConfig, shards: &[crate::data::Dataset]) -> AggregationRule {
    let data_weights = config.weight_by_data.then(|| {
        let total: usize = shards.iter().map(|s| s.len()).sum();
        shards
            .iter()
            .map(|s| s.len() as f64 / total as f64)
            .collect()
    });
    AggregationRule {
        kind: config.aggregation,
        data_weights,
    }
}

/// Builds (or rebuilds) each worker's pruning order. CIG-style orders are
/// frozen after the first pruning event; `no-constant` re-draws its shared
/// start offset every event.
fn build_orders(
    config: &ExperimentConfig,
    global: &crate::nn::BaseModel,
    workers: &mut [Worker],
    prune_event: usize,
) -> Result<()> {
    let rebuild = workers[0].order.is_none()
        || config.prune_method == PruneMethod::NoConstant;
    if !rebuild {
        return Ok(());
    }
    let seed = if config.prune_method == PruneMethod::NoConstant {
        seeds::mix(
            seeds::mix(config.seed, seeds::TAG_PRUNE_ROUND),
            prune_event as u64,
        )
    } else {
        config.seed
    };
    for (w, worker) in workers.iter_mut().enumerate() {
        worker.order = Some(build_order(config.prune_method, global, seed, w)?);
    }
    Ok(())
}

/// Mean remaining-network similarity over worker pairs whose issued-rate
/// histories are identical.
fn equal_rate_similarity(workers: &[Worker]) -> Option<f64> {
    let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for (w, worker) in workers.iter().enumerate() {
        let key: Vec<u64> = worker.rate_trail.iter().map(|r| r.to_bits()).collect();
        groups.entry(key).or_default().push(w);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for members in groups.values().filter(|m| m.len() >= 2) {
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                let s = similarity(
                    &workers[members[i]].sub.index,
                    &workers[members[j]].sub.index,
                )
                .expect("same parent shape");
                total += s;
                pairs += 1;
            }
        }
    }
    (pairs > 0).then(|| total / pairs as f64)
}
