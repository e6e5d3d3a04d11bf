//! Server-side aggregation of heterogeneous sub-models into the global
//! model, with the by-worker and by-unit coefficient rules.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{BaseModel, Network};
use crate::prune::SubModel;

/// Floor applied to aggregated running variances to keep them positive.
const RUNNING_VAR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationKind {
    /// Coefficient `1/W`; a worker that pruned a parameter contributes zero.
    ByWorker,
    /// Coefficient `1/w'` over only the `w'` workers retaining the
    /// parameter; parameters retained by nobody keep their previous value.
    ByUnit,
}

impl FromStr for AggregationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by-worker" => Ok(AggregationKind::ByWorker),
            "by-unit" => Ok(AggregationKind::ByUnit),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregation rule '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AggregationRule {
    pub kind: AggregationKind,
    /// Per-worker weights summing to 1; `None` means uniform `1/W`.
    pub data_weights: Option<Vec<f64>>,
}

impl AggregationRule {
    pub fn by_worker() -> Self {
        AggregationRule {
            kind: AggregationKind::ByWorker,
            data_weights: None,
        }
    }

    pub fn by_unit() -> Self {
        AggregationRule {
            kind: AggregationKind::ByUnit,
            data_weights: None,
        }
    }

    fn weights(&self, workers: usize) -> Result<Vec<f64>> {
        match &self.data_weights {
            None => Ok(vec![1.0 / workers as f64; workers]),
            Some(w) => {
                if w.len() != workers {
                    return Err(Error::ShapeMismatch(format!(
                        "{} data weights for {workers} workers",
                        w.len()
                    )));
                }
                if w.iter().any(|&v| v < 0.0) {
                    return Err(Error::InvalidConfig("negative data weight".into()));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "data weights sum to {sum}, expected 1"
                    )));
                }
                Ok(w.clone())
            }
        }
    }
}

/// Weighted sums and total contributing weight per scalar slot.
struct Acc {
    sum: Vec<f64>,
    wsum: Vec<f64>,
}

impl Acc {
    fn new(len: usize) -> Self {
        Acc {
            sum: vec![0.0; len],
            wsum: vec![0.0; len],
        }
    }

    fn add(&mut self, slot: usize, value: f64, weight: f64) {
        self.sum[slot] += weight * value;
        self.wsum[slot] += weight;
    }

    fn finalize(&self, kind: AggregationKind, prev: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = match kind {
                AggregationKind::ByWorker => self.sum[i],
                AggregationKind::ByUnit => {
                    if self.wsum[i] > 0.0 {
                        self.sum[i] / self.wsum[i]
                    } else {
                        prev[i]
                    }
                }
            };
        }
    }
}

/// Aggregates committed sub-models into new global weights. `prev` supplies
/// the layout and the fallback values for parameters no worker retains.
pub fn aggregate(
    prev: &BaseModel,
    submodels: &[SubModel],
    rule: &AggregationRule,
) -> Result<BaseModel> {
    if submodels.is_empty() {
        return Err(Error::InvalidConfig("aggregate needs at least 1 worker".into()));
    }
    for sub in submodels {
        if sub.parent != prev.shape || !sub.index.matches_shape(&prev.shape) {
            return Err(Error::MismatchedParents);
        }
    }
    let weights = rule.weights(submodels.len())?;
    let shape = &prev.shape;
    let kind = rule.kind;

    // one accumulator per tensor of the base layout
    let mut dense_acc: Vec<Acc> = Vec::new();
    let mut bn_acc: Vec<Option<[Acc; 4]>> = Vec::new();
    let mut prev_width = shape.feature_dim;
    for &width in &shape.hidden {
        dense_acc.push(Acc::new(width * prev_width));
        bn_acc.push(
            shape
                .batchnorm
                .then(|| std::array::from_fn(|_| Acc::new(width))),
        );
        prev_width = width;
    }
    let mut out_acc = Acc::new(shape.num_classes * prev_width);
    let mut bias_acc = shape.output_bias.then(|| Acc::new(shape.num_classes));

    for (sub, &dw) in submodels.iter().zip(&weights) {
        let index = &sub.index;
        for (k, block) in sub.net.hidden.iter().enumerate() {
            let rows = index.layer(k);
            let last_width = shape.hidden[k];
            let _ = last_width;
            let w = &block.dense.weight;
            if k == 0 {
                for (i, &bu) in rows.iter().enumerate() {
                    for j in 0..w.cols() {
                        dense_acc[k].add(bu * shape.feature_dim + j, w[(i, j)], dw);
                    }
                }
            } else {
                let cols = index.layer(k - 1);
                let in_width = shape.hidden[k - 1];
                for (i, &bu) in rows.iter().enumerate() {
                    for (j, &bv) in cols.iter().enumerate() {
                        dense_acc[k].add(bu * in_width + bv, w[(i, j)], dw);
                    }
                }
            }
            if let (Some(bn), Some(acc)) = (&block.bn, bn_acc[k].as_mut()) {
                for (i, &bu) in rows.iter().enumerate() {
                    acc[0].add(bu, bn.scale[i], dw);
                    acc[1].add(bu, bn.shift[i], dw);
                    acc[2].add(bu, bn.running_mean[i], dw);
                    acc[3].add(bu, bn.running_var[i], dw);
                }
            }
        }
        let cols = index.layer(shape.hidden.len() - 1);
        let in_width = *shape.hidden.last().unwrap();
        for c in 0..shape.num_classes {
            for (j, &bv) in cols.iter().enumerate() {
                out_acc.add(c * in_width + bv, sub.net.output.weight[(c, j)], dw);
            }
        }
        if let (Some(bias), Some(acc)) = (&sub.net.output.bias, bias_acc.as_mut()) {
            for (c, &b) in bias.iter().enumerate() {
                acc.add(c, b, dw);
            }
        }
    }

    let mut net: Network = prev.net.clone();
    for (k, block) in net.hidden.iter_mut().enumerate() {
        let prev_block = &prev.net.hidden[k];
        dense_acc[k].finalize(
            kind,
            prev_block.dense.weight.data(),
            block.dense.weight.data_mut(),
        );
        if let (Some(bn), Some(acc)) = (block.bn.as_mut(), bn_acc[k].as_ref()) {
            let pbn = prev_block.bn.as_ref().expect("layouts match");
            acc[0].finalize(kind, &pbn.scale, &mut bn.scale);
            acc[1].finalize(kind, &pbn.shift, &mut bn.shift);
            acc[2].finalize(kind, &pbn.running_mean, &mut bn.running_mean);
            acc[3].finalize(kind, &pbn.running_var, &mut bn.running_var);
            for v in &mut bn.running_var {
                *v = v.max(RUNNING_VAR_FLOOR);
            }
        }
    }
    out_acc.finalize(kind, prev.net.output.weight.data(), net.output.weight.data_mut());
    if let (Some(bias), Some(acc)) = (net.output.bias.as_mut(), bias_acc.as_ref()) {
        acc.finalize(kind, prev.net.output.bias.as_ref().unwrap(), bias);
    }
    Ok(BaseModel {
        shape: shape.clone(),
        net,
    })
}
