//! Property tests over the aggregation and pruning primitives.

use adaptcl::aggregate::{aggregate, AggregationRule};
use adaptcl::nn::{BaseModel, ModelShape};
use adaptcl::prune::{
    build_order, compute_mask, extract_submodel, reconfigure, retention_ratio, similarity,
    GlobalIndex, PruneMethod, SubModel,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn shape() -> ModelShape {
    ModelShape::new(3, vec![6, 4], 2)
}

fn base(seed: u64) -> BaseModel {
    BaseModel::init(shape(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// A sub-model holding an arbitrary subset of units with arbitrary weights.
fn arb_submodel(seed: u64) -> impl Strategy<Value = SubModel> {
    (
        proptest::collection::vec(any::<bool>(), 6),
        proptest::collection::vec(any::<bool>(), 4),
        -10.0f64..10.0,
    )
        .prop_map(move |(keep0, keep1, scale)| {
            let global = base(seed);
            let pick = |flags: &[bool]| -> Vec<usize> {
                let mut units: Vec<usize> = flags
                    .iter()
                    .enumerate()
                    .filter_map(|(u, &k)| k.then_some(u))
                    .collect();
                if units.is_empty() {
                    units.push(0);
                }
                units
            };
            let index =
                GlobalIndex::from_layers(vec![pick(&keep0), pick(&keep1)], &shape()).unwrap();
            let mut sub = extract_submodel(&global, &index).unwrap();
            for block in &mut sub.net.hidden {
                block.dense.weight.map_inplace(|v| v * scale);
            }
            sub.net.output.weight.map_inplace(|v| v * scale);
            sub
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_is_permutation_invariant(
        a in arb_submodel(1),
        b in arb_submodel(2),
        c in arb_submodel(3),
    ) {
        let global = base(0);
        for rule in [AggregationRule::by_worker(), AggregationRule::by_unit()] {
            let fwd = aggregate(&global, &[a.clone(), b.clone(), c.clone()], &rule).unwrap();
            let rev = aggregate(&global, &[c.clone(), b.clone(), a.clone()], &rule).unwrap();
            // float sums reassociate under permutation, so compare to
            // rounding error rather than bitwise
            for (x, y) in fwd
                .net
                .hidden
                .iter()
                .flat_map(|h| h.dense.weight.data())
                .chain(fwd.net.output.weight.data())
                .zip(
                    rev.net
                        .hidden
                        .iter()
                        .flat_map(|h| h.dense.weight.data())
                        .chain(rev.net.output.weight.data()),
                )
            {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn by_unit_values_lie_within_contributor_range(
        a in arb_submodel(4),
        b in arb_submodel(5),
    ) {
        let global = base(0);
        let agg = aggregate(&global, &[a.clone(), b.clone()], &AggregationRule::by_unit()).unwrap();
        // check the first hidden layer entry by entry
        for unit in 0..6 {
            for col in 0..3 {
                let mut contributions = Vec::new();
                for sub in [&a, &b] {
                    if let Ok(pos) = sub.index.layer(0).binary_search(&unit) {
                        contributions.push(sub.net.hidden[0].dense.weight[(pos, col)]);
                    }
                }
                let got = agg.net.hidden[0].dense.weight[(unit, col)];
                if contributions.is_empty() {
                    prop_assert_eq!(got, global.net.hidden[0].dense.weight[(unit, col)]);
                } else {
                    let lo = contributions.iter().cloned().fold(f64::MAX, f64::min);
                    let hi = contributions.iter().cloned().fold(f64::MIN, f64::max);
                    prop_assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn by_worker_values_lie_within_zero_imputed_range(
        a in arb_submodel(6),
        b in arb_submodel(7),
    ) {
        let global = base(0);
        let agg = aggregate(&global, &[a.clone(), b.clone()], &AggregationRule::by_worker()).unwrap();
        for unit in 0..6 {
            for col in 0..3 {
                let mut contributions = Vec::new();
                for sub in [&a, &b] {
                    if let Ok(pos) = sub.index.layer(0).binary_search(&unit) {
                        contributions.push(sub.net.hidden[0].dense.weight[(pos, col)]);
                    }
                }
                let got = agg.net.hidden[0].dense.weight[(unit, col)];
                let lo = contributions.iter().cloned().fold(0.0f64, f64::min);
                let hi = contributions.iter().cloned().fold(0.0f64, f64::max);
                prop_assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn aggregation_is_linear_in_worker_weights(
        a in arb_submodel(8),
        b in arb_submodel(9),
        alpha in -3.0f64..3.0,
    ) {
        let global = base(0);
        let rule = AggregationRule::by_worker();
        let mut scaled = a.clone();
        for block in &mut scaled.net.hidden {
            block.dense.weight.map_inplace(|v| alpha * v);
        }
        let plain = aggregate(&global, &[a.clone(), b.clone()], &rule).unwrap();
        let with_scaled = aggregate(&global, &[scaled, b.clone()], &rule).unwrap();
        // contribution of worker a scales by alpha: agg' - agg = (alpha-1)/W * a
        for unit in 0..6 {
            for col in 0..3 {
                let diff = with_scaled.net.hidden[0].dense.weight[(unit, col)]
                    - plain.net.hidden[0].dense.weight[(unit, col)];
                let expected = match a.index.layer(0).binary_search(&unit) {
                    Ok(pos) => (alpha - 1.0) / 2.0 * a.net.hidden[0].dense.weight[(pos, col)],
                    Err(_) => 0.0,
                };
                prop_assert!((diff - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn similarity_is_a_bounded_symmetric_overlap(
        a in arb_submodel(10),
        b in arb_submodel(11),
    ) {
        let ab = similarity(&a.index, &b.index).unwrap();
        let ba = similarity(&b.index, &a.index).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(similarity(&a.index, &a.index).unwrap(), 1.0);
    }

    #[test]
    fn masks_nest_across_rates_and_reconfigure_keeps_survivors(
        rate_small in 0.05f64..0.4,
        extra in 0.05f64..0.4,
        seed in 0u64..50,
    ) {
        let global = base(seed);
        let order = build_order(PruneMethod::Index, &global, seed, 0).unwrap();
        let full = GlobalIndex::full(&shape());
        let rate_large = (rate_small + extra).min(0.85);

        let small = compute_mask(&order, &full, rate_small, 0.05, &shape()).unwrap();
        let large = compute_mask(&order, &full, rate_large, 0.05, &shape()).unwrap();
        for unit in &small.remove {
            prop_assert!(large.remove.contains(unit), "larger mask must cover smaller");
        }

        let sub = extract_submodel(&global, &full).unwrap();
        let smaller = reconfigure(&sub, &large.remove).unwrap();
        // every surviving weight bit-equal, with columns remapped through
        // the previous layer's retained units
        for (k, units) in smaller.index.layers().iter().enumerate() {
            let old_cols: Vec<usize> = if k == 0 {
                (0..shape().feature_dim).collect()
            } else {
                smaller
                    .index
                    .layer(k - 1)
                    .iter()
                    .map(|u| sub.index.layer(k - 1).binary_search(u).unwrap())
                    .collect()
            };
            for (pos, &u) in units.iter().enumerate() {
                let old_pos = sub.index.layer(k).binary_search(&u).unwrap();
                for (new_col, &old_col) in old_cols.iter().enumerate() {
                    prop_assert_eq!(
                        smaller.net.hidden[k].dense.weight[(pos, new_col)],
                        sub.net.hidden[k].dense.weight[(old_pos, old_col)]
                    );
                }
            }
        }
        let r_small = retention_ratio(&smaller.index, &shape()).unwrap();
        prop_assert!(r_small <= 1.0 && r_small > 0.0);
    }
}
