//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (run with `--nocapture` to see them).

use adaptcl::config::{ExperimentConfig, Policy};
use adaptcl::env::predicted_heterogeneity;
use adaptcl::nn::{loss_and_grad, loss_with_group_lasso, BaseModel, Mat, ModelShape, Network};
use adaptcl::prune::{
    build_order, compute_mask, extract_submodel, full_params, reconfigure, similarity,
    GlobalIndex, PruneMethod, RATE_WIRE_BYTES,
};
use adaptcl::rate::{
    compute_pruned_rates, newton_inverse_interpolate, RateBranch, RateHistory, RatePolicy,
};
use adaptcl::run::run_policy;
use adaptcl::aggregate::AggregationKind;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent Lagrange-form oracle for the inverse interpolation.
fn lagrange(points: &[(f64, f64)], target: f64) -> f64 {
    let mut total = 0.0;
    for (i, &(xi, yi)) in points.iter().enumerate() {
        let mut basis = 1.0;
        for (j, &(xj, _)) in points.iter().enumerate() {
            if i != j {
                basis *= (target - xj) / (xi - xj);
            }
        }
        total += yi * basis;
    }
    total
}

#[test]
fn criterion_01_heterogeneity_table_reproduction() {
    let table = [(2.0, 0.32), (5.0, 0.62), (10.0, 0.76), (20.0, 0.87)];
    for (sigma, reported) in table {
        let h = predicted_heterogeneity(sigma, 10).unwrap();
        let tolerance = if sigma == 20.0 { 0.01 } else { 0.03 };
        assert!(
            (h - reported).abs() <= tolerance,
            "sigma={sigma}: predicted {h} vs reported {reported} (tol {tolerance})"
        );
    }
    println!("acceptance 1 PASS: predicted heterogeneity matches the reported H(sigma) table");
}

#[test]
fn criterion_02_interpolation_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let n = rng.gen_range(2..=4);
        // abscissas pairwise at least 0.5 apart
        let mut phi = rng.gen_range(1.0..4.0);
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            points.push((phi, rng.gen_range(0.05..1.0)));
            phi += rng.gen_range(0.5..3.0);
        }
        for &(node, gamma) in &points {
            let got = newton_inverse_interpolate(&points, node).unwrap();
            assert!(
                (got - gamma).abs() < 1e-12,
                "case {case}: node {node} gave {got}, expected {gamma}"
            );
        }
        let lo = points[0].0;
        let hi = points[n - 1].0;
        for _ in 0..4 {
            let target = rng.gen_range(lo - 1.0..hi + 1.0);
            let newton = newton_inverse_interpolate(&points, target).unwrap();
            let oracle = lagrange(&points, target);
            let rel = (newton - oracle).abs() / newton.abs().max(oracle.abs()).max(1e-12);
            assert!(
                rel < 1e-9,
                "case {case}: newton {newton} vs lagrange {oracle} at {target}"
            );
        }
    }
    println!("acceptance 2 PASS: node reproduction < 1e-12 and Lagrange agreement < 1e-9 over 1000 instances");
}

#[test]
fn criterion_03_update_time_convergence() {
    let mut config = ExperimentConfig::default();
    config.workers = 10;
    config.sigma = 5.0;
    config.jitter = 0.0;
    config.compute_coeff = 0.0;
    config.rho_max = 0.5;
    config.gamma_min = 0.1;
    config.rho_min = 0.05;
    config.alpha = 2.0;
    config.prune_interval = 10;
    config.rounds = 50; // pruning events at 10, 20, 30, 40
    config.train_samples = 500;
    config.epochs = 1.0;
    config.baseline_policy = None;
    let out = run_policy(&config, Policy::AdaptCl).unwrap();

    // steady rounds after the 4th pruning event took effect
    for m in out.rounds.iter().filter(|m| m.round >= 42) {
        let max = m.phi.iter().cloned().fold(f64::MIN, f64::max);
        let min = m.phi.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            max / min <= 1.10,
            "round {}: max/min update time {} > 1.10",
            m.round,
            max / min
        );
        assert!(
            m.h <= 0.05,
            "round {}: heterogeneity {} > 0.05 after convergence",
            m.round,
            m.h
        );
    }
    let last = out.rounds.last().unwrap();
    println!(
        "acceptance 3 PASS: after 4 pruning events max/min phi = {:.4}, H = {:.4}",
        last.phi.iter().cloned().fold(f64::MIN, f64::max)
            / last.phi.iter().cloned().fold(f64::MAX, f64::min),
        last.h
    );
}

/// Prunes one synthetic worker through a sequence of rates and returns the
/// index trail.
fn prune_trail(
    global: &BaseModel,
    method: PruneMethod,
    seed: u64,
    worker: usize,
    rates: &[f64],
) -> Vec<GlobalIndex> {
    let order = build_order(method, global, seed, worker).unwrap();
    let mut sub = extract_submodel(global, &GlobalIndex::full(&global.shape)).unwrap();
    let mut trail = Vec::new();
    for &rate in rates {
        let mask = compute_mask(&order, &sub.index, rate, 0.05, &global.shape).unwrap();
        sub = reconfigure(&sub, &mask.remove).unwrap();
        trail.push(sub.index.clone());
    }
    trail
}

#[test]
fn criterion_04_nesting_and_similarity() {
    let shape = ModelShape::new(6, vec![20, 12], 3);
    let global = BaseModel::init(shape, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    for method in [PruneMethod::CigBnScalor, PruneMethod::Index] {
        for _ in 0..20 {
            let rates: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..0.45)).collect();
            let a = prune_trail(&global, method, 3, 0, &rates);
            let b = prune_trail(&global, method, 3, 9, &rates);
            for (ia, ib) in a.iter().zip(&b) {
                assert_eq!(
                    similarity(ia, ib).unwrap(),
                    1.0,
                    "{method:?}: equal cumulative rates must give identical networks"
                );
            }
        }
    }

    // fixed seed chosen so the per-worker start offsets differ
    let dense = ModelShape {
        feature_dim: 4,
        hidden: vec![20],
        num_classes: 3,
        batchnorm: false,
        output_bias: false,
    };
    let global = BaseModel::init(dense, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let first_prune: Vec<GlobalIndex> = (0..4)
        .map(|w| prune_trail(&global, PruneMethod::NoIdentical, 1, w, &[0.4]).pop().unwrap())
        .collect();
    let mut diverged = false;
    for i in 0..first_prune.len() {
        for j in i + 1..first_prune.len() {
            if similarity(&first_prune[i], &first_prune[j]).unwrap() < 1.0 {
                diverged = true;
            }
        }
    }
    assert!(diverged, "no-identical must break similarity at the first pruning");
    println!("acceptance 4 PASS: CIG orders keep equal-rate similarity at 1.0; no-identical diverges");
}

#[test]
fn criterion_05_degenerate_equivalence() {
    let mut config = ExperimentConfig::default();
    config.sigma = 1.0;
    config.rounds = 30;
    config.train_samples = 1000;
    let adapt = run_policy(&config, Policy::AdaptCl).unwrap();
    let fedavg = run_policy(&config, Policy::FedAvgS).unwrap();
    assert!(
        adapt.final_global.net.bit_eq(&fedavg.final_global.net),
        "final weights must be bit-identical when sigma = 1"
    );
    assert_eq!(adapt.summary.final_acc, fedavg.summary.final_acc);

    let with_baseline = adaptcl::run(&config).unwrap();
    let speedup = with_baseline.summary.speedup.unwrap();
    assert!(
        (speedup - 1.0).abs() <= 0.01,
        "speedup {speedup} should be 1.00 +/- 0.01"
    );
    println!("acceptance 5 PASS: sigma=1 run is bit-identical to fedavg-s, speedup {speedup}");
}

#[test]
fn criterion_06_toy_scale_efficiency() {
    let seeds = [42u64, 43, 44, 45, 46];
    let mut adapt_time = 0.0;
    let mut fedavg_time = 0.0;
    let mut adapt_acc = 0.0;
    let mut fedavg_acc = 0.0;
    for &seed in &seeds {
        let mut config = ExperimentConfig::default();
        config.seed = seed;
        config.sigma = 2.0;
        config.compute_coeff = 0.0; // transfer-dominated
        config.rounds = 60;
        config.baseline_policy = None;
        let a = run_policy(&config, Policy::AdaptCl).unwrap();
        let f = run_policy(&config, Policy::FedAvgS).unwrap();
        adapt_time += a.summary.total_time_s;
        fedavg_time += f.summary.total_time_s;
        adapt_acc += a.summary.final_acc;
        fedavg_acc += f.summary.final_acc;
    }
    let n = seeds.len() as f64;
    adapt_time /= n;
    fedavg_time /= n;
    adapt_acc /= n;
    fedavg_acc /= n;
    assert!(
        adapt_time <= 0.65 * fedavg_time,
        "mean simulated time {adapt_time} > 0.65 x {fedavg_time}"
    );
    assert!(
        adapt_acc >= fedavg_acc - 0.03,
        "mean accuracy {adapt_acc} more than 3 points under fedavg-s {fedavg_acc}"
    );
    println!(
        "acceptance 6 PASS: time ratio {:.3} <= 0.65, accuracy {:.3} vs {:.3}",
        adapt_time / fedavg_time,
        adapt_acc,
        fedavg_acc
    );
}

#[test]
fn criterion_07_aggregation_rule_pathology() {
    let seeds = [42u64, 43, 44, 45, 46];
    let mut by_worker = 0.0;
    let mut by_unit = 0.0;
    for &seed in &seeds {
        let mut config = ExperimentConfig::default();
        config.seed = seed;
        config.sigma = 5.0;
        config.noniid_s = 80.0;
        config.rounds = 60;
        config.baseline_policy = None;
        config.aggregation = AggregationKind::ByWorker;
        by_worker += run_policy(&config, Policy::AdaptCl).unwrap().summary.final_acc;
        config.aggregation = AggregationKind::ByUnit;
        by_unit += run_policy(&config, Policy::AdaptCl).unwrap().summary.final_acc;
    }
    let n = seeds.len() as f64;
    by_worker /= n;
    by_unit /= n;
    assert!(
        by_worker >= by_unit,
        "by-worker mean accuracy {by_worker} below by-unit {by_unit} on the non-IID task"
    );
    println!("acceptance 7 PASS: non-IID by-worker {by_worker:.3} >= by-unit {by_unit:.3}");
}

#[test]
fn criterion_08_clamp_invariants_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for case in 0..10_000 {
        let rho_max: f64 = rng.gen_range(0.15..0.9);
        let rho_min = rng.gen_range(0.01..rho_max.min(0.3));
        // a retention floor above 1 - rho_max could not survive even the
        // first pruning; realistic configurations keep it below
        let gamma_min = rng.gen_range(0.01..(1.0 - rho_max).min(0.5));
        let policy = RatePolicy {
            alpha: rng.gen_range(0.5..4.0),
            rho_min,
            rho_max,
            gamma_min,
        };
        policy.validate().unwrap();

        let workers = rng.gen_range(2..6);
        let mut histories = Vec::with_capacity(workers);
        let mut pruned = Vec::with_capacity(workers);
        for _ in 0..workers {
            let events = rng.gen_range(1..=5);
            let mut history = RateHistory::new();
            let mut gamma: f64 = 1.0;
            let mut phi = rng.gen_range(5.0..50.0);
            for e in 0..events {
                for _ in 0..rng.gen_range(1..4) {
                    history.record_update_time(phi * rng.gen_range(0.9..1.1)).unwrap();
                }
                history.flush_observation(gamma).unwrap();
                if e + 1 < events {
                    // histories reachable under the policy never go below
                    // the retention floor
                    gamma = (gamma * rng.gen_range(0.55..0.95)).max(gamma_min);
                    phi *= rng.gen_range(0.5..0.95);
                }
            }
            pruned.push(gamma < 1.0);
            histories.push(history);
        }

        let decisions = compute_pruned_rates(&histories, &policy, &pruned).unwrap();
        let phi_min = histories
            .iter()
            .map(|h| h.latest().unwrap().1)
            .fold(f64::INFINITY, f64::min);
        for (w, d) in decisions.iter().enumerate() {
            assert!(
                (0.0..=policy.rho_max).contains(&d.rate),
                "case {case} worker {w}: rate {} outside [0, {}]",
                d.rate,
                policy.rho_max
            );
            let (gamma_now, _) = histories[w].latest().unwrap();
            let gamma_next = gamma_now * (1.0 - d.rate);
            assert!(
                gamma_next >= policy.gamma_min - 1e-12,
                "case {case} worker {w}: post-prune retention {gamma_next} below {} \
                 (branch {:?}, gamma_now {gamma_now}, obs {}, pruned {})",
                policy.gamma_min,
                d.branch,
                histories[w].observations().len(),
                pruned[w]
            );
            // the no-prune rule: interpolated gap below rho_min issues P=0
            if pruned[w] && histories[w].observations().len() >= 2 {
                let nodes: Vec<(f64, f64)> = histories[w]
                    .observations()
                    .iter()
                    .map(|&(g, p)| (p, g))
                    .collect();
                let raw = lagrange(&nodes, phi_min);
                if gamma_now - raw.max(policy.gamma_min) < policy.rho_min {
                    assert_eq!(
                        d.rate, 0.0,
                        "case {case} worker {w}: small gap must not prune"
                    );
                    assert_eq!(d.branch, RateBranch::SkippedSmallGap);
                }
            }
        }
    }
    println!("acceptance 8 PASS: 10000 fuzzed rate computations respect every clamp");
}

#[test]
fn criterion_09_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let feature_dim = rng.gen_range(2..5);
        let classes = rng.gen_range(2..4);
        let hidden: Vec<usize> = (0..rng.gen_range(1..3))
            .map(|_| rng.gen_range(2..5))
            .collect();
        let shape = ModelShape {
            feature_dim,
            hidden,
            num_classes: classes,
            batchnorm: rng.gen_bool(0.8),
            output_bias: rng.gen_bool(0.8),
        };
        let lambda = if case % 2 == 0 { 0.0 } else { 0.1 };
        let mut net = BaseModel::init(shape, &mut rng).unwrap().net;
        for block in &mut net.hidden {
            if let Some(bn) = block.bn.as_mut() {
                for v in bn.scale.iter_mut().chain(bn.shift.iter_mut()) {
                    *v += rng.gen_range(-0.3..0.3);
                }
            }
        }
        let batch = rng.gen_range(2..6);
        let mut x = Mat::zeros(batch, feature_dim);
        for v in x.data_mut() {
            *v = rng.gen_range(-1.5..1.5);
        }
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();

        let (_, grads, _) = loss_and_grad(&net, &x, &labels, lambda).unwrap();
        let loss_of = |net: &Network| {
            let (logits, _) = net.forward_train_cached(&x).unwrap();
            loss_with_group_lasso(&logits, &labels, net, lambda).unwrap()
        };
        let h = 1e-5;
        let mut check = |net: &mut Network,
                         get: &dyn for<'a> Fn(&'a mut Network) -> &'a mut f64,
                         analytic: f64| {
            let orig = *get(net);
            *get(net) = orig + h;
            let up = loss_of(net);
            *get(net) = orig - h;
            let down = loss_of(net);
            *get(net) = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
            }
            assert!(rel < 1e-4, "case {case}: relative error {rel}");
        };
        // sample a handful of coordinates from every tensor
        let mut probe = net.clone();
        for k in 0..net.hidden.len() {
            for _ in 0..4 {
                let r = rng.gen_range(0..net.hidden[k].dense.weight.rows());
                let c = rng.gen_range(0..net.hidden[k].dense.weight.cols());
                let analytic = grads.hidden[k].dense.weight[(r, c)];
                check(&mut probe, &move |n| &mut n.hidden[k].dense.weight[(r, c)], analytic);
            }
            if net.hidden[k].bn.is_some() {
                let u = rng.gen_range(0..net.hidden[k].bn.as_ref().unwrap().units());
                let analytic = grads.hidden[k].bn.as_ref().unwrap().scale[u];
                check(
                    &mut probe,
                    &move |n| &mut n.hidden[k].bn.as_mut().unwrap().scale[u],
                    analytic,
                );
                let analytic = grads.hidden[k].bn.as_ref().unwrap().shift[u];
                check(
                    &mut probe,
                    &move |n| &mut n.hidden[k].bn.as_mut().unwrap().shift[u],
                    analytic,
                );
            }
        }
        for _ in 0..4 {
            let r = rng.gen_range(0..net.output.weight.rows());
            let c = rng.gen_range(0..net.output.weight.cols());
            let analytic = grads.output.weight[(r, c)];
            check(&mut probe, &move |n| &mut n.output.weight[(r, c)], analytic);
        }
    }
    println!("acceptance 9 PASS: 200 gradient configurations, worst relative error {worst:.2e}");
}

#[test]
fn criterion_10_communication_overhead() {
    let shape = ModelShape::new(16, vec![64, 32], 4);
    let full_bytes = 4 * full_params(&shape);
    let index = GlobalIndex::full(&shape);
    let overhead = index.wire_bytes() + RATE_WIRE_BYTES;
    let fraction = overhead as f64 / full_bytes as f64;
    assert!(
        fraction < 0.02,
        "index+rate bytes {overhead} are {fraction:.4} of the {full_bytes}-byte dense model"
    );

    // and from a live run's accounting
    let mut config = ExperimentConfig::default();
    config.rounds = 12;
    config.train_samples = 400;
    config.baseline_policy = None;
    let out = run_policy(&config, Policy::AdaptCl).unwrap();
    for m in &out.rounds {
        let per_round_budget = 0.02 * (config.workers * full_bytes) as f64;
        assert!(
            (m.overhead_bytes as f64) < per_round_budget,
            "round {}: overhead {} exceeds 2% of full-model bytes",
            m.round,
            m.overhead_bytes
        );
    }
    println!(
        "acceptance 10 PASS: index+rate overhead is {:.2}% of the dense model",
        fraction * 100.0
    );
}
