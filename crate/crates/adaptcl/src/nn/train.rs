//! Local sparse training: plain SGD on the group-lasso loss with a fixed L2
//! weight decay on dense weight matrices.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::grad::{loss_and_grad, NetGrads};
use super::mat::Mat;
use super::model::Network;
use crate::error::{Error, Result};

pub const WEIGHT_DECAY: f64 = 5e-4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainStats {
    /// Mini-batch steps performed.
    pub steps: usize,
    /// Samples consumed across all steps (drives the simulated compute cost).
    pub samples: usize,
}

/// Runs `epochs` passes of mini-batch SGD over the shard. Fractional epochs
/// round down to whole mini-batches, with a minimum of one step whenever
/// `epochs > 0`. Deterministic given the generator state and shard order.
#[allow(clippy::too_many_arguments)]
pub fn sparse_train(
    net: &mut Network,
    inputs: &Mat,
    labels: &[usize],
    epochs: f64,
    lambda: f64,
    lr: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainStats> {
    if inputs.rows() == 0 {
        return Err(Error::EmptyShard);
    }
    if inputs.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} shard rows vs {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    if epochs.is_nan() || epochs < 0.0 {
        return Err(Error::InvalidConfig(format!("negative epochs {epochs}")));
    }
    if lr <= 0.0 {
        return Err(Error::NonPositive {
            what: "learning rate",
            value: lr,
        });
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let mut stats = TrainStats::default();
    if epochs == 0.0 {
        return Ok(stats);
    }

    let n = inputs.rows();
    let steps_per_pass = n.div_ceil(batch_size);
    let total_steps = ((epochs * steps_per_pass as f64).floor() as usize).max(1);

    let mut order: Vec<usize> = (0..n).collect();
    while stats.steps < total_steps {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            if stats.steps == total_steps {
                break;
            }
            let (bx, by) = gather(inputs, labels, chunk);
            let (_, grads, cache) = loss_and_grad(net, &bx, &by, lambda)?;
            apply_sgd(net, &grads, lr);
            net.commit_running_stats(&cache);
            stats.steps += 1;
            stats.samples += chunk.len();
        }
    }
    Ok(stats)
}

fn gather(inputs: &Mat, labels: &[usize], idx: &[usize]) -> (Mat, Vec<usize>) {
    let mut bx = Mat::zeros(idx.len(), inputs.cols());
    let mut by = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        bx.row_mut(r).copy_from_slice(inputs.row(i));
        by.push(labels[i]);
    }
    (bx, by)
}

fn apply_sgd(net: &mut Network, grads: &NetGrads, lr: f64) {
    for (block, g) in net.hidden.iter_mut().zip(&grads.hidden) {
        sgd_dense(&mut block.dense.weight, &g.dense.weight, lr);
        if let (Some(bn), Some(bng)) = (block.bn.as_mut(), &g.bn) {
            for (v, gv) in bn.scale.iter_mut().zip(&bng.scale) {
                *v -= lr * gv;
            }
            for (v, gv) in bn.shift.iter_mut().zip(&bng.shift) {
                *v -= lr * gv;
            }
        }
    }
    sgd_dense(&mut net.output.weight, &grads.output.weight, lr);
    if let (Some(b), Some(gb)) = (net.output.bias.as_mut(), &grads.output.bias) {
        for (v, gv) in b.iter_mut().zip(gb) {
            *v -= lr * gv;
        }
    }
}

fn sgd_dense(weight: &mut Mat, grad: &Mat, lr: f64) {
    for (w, g) in weight.data_mut().iter_mut().zip(grad.data()) {
        *w -= lr * (g + WEIGHT_DECAY * *w);
    }
}
