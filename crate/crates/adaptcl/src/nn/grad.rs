//! Backpropagation through dense, batch-norm (batch statistics) and ReLU
//! layers, with the group-lasso subgradient folded in.

use super::mat::Mat;
use super::model::{ForwardCache, Network, BN_EPS};
use crate::error::Result;
use crate::nn::loss::{group_lasso_penalty, softmax_cross_entropy, DEAD_GROUP_NORM};

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weight: Mat,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub dense: DenseGrads,
    pub bn: Option<BnGrads>,
}

#[derive(Debug, Clone)]
pub struct NetGrads {
    pub hidden: Vec<BlockGrads>,
    pub output: DenseGrads,
}

/// Loss value and full parameter gradient of
/// `mean cross-entropy + lambda * group-lasso` at the given batch, in
/// training mode. Running statistics are not touched; the returned cache
/// holds the batch statistics for the caller to commit.
pub fn loss_and_grad(
    net: &Network,
    inputs: &Mat,
    labels: &[usize],
    lambda: f64,
) -> Result<(f64, NetGrads, ForwardCache)> {
    let (logits, cache) = net.forward_train_cached(inputs)?;
    let (ce, dlogits) = softmax_cross_entropy(&logits, labels)?;

    // classifier head
    let output = DenseGrads {
        weight: dlogits.transpose_mul(&cache.head_input),
        bias: net.output.bias.as_ref().map(|_| col_sums(&dlogits)),
    };
    let mut dcur = dlogits.mul(&net.output.weight);

    let mut hidden_grads: Vec<BlockGrads> = Vec::with_capacity(net.hidden.len());
    for k in (0..net.hidden.len()).rev() {
        let block = &net.hidden[k];
        // ReLU: activation > 0 iff the pre-activation was positive
        let act = &cache.activations[k];
        for r in 0..dcur.rows() {
            let a = act.row(r);
            let d = dcur.row_mut(r);
            for j in 0..d.len() {
                if a[j] <= 0.0 {
                    d[j] = 0.0;
                }
            }
        }

        let (bn_grads, dz) = if let Some(bn) = &block.bn {
            let xhat = cache.normalized[k].as_ref().expect("bn cache");
            let stats = cache.bn_stats[k].as_ref().expect("bn stats");
            let units = bn.units();
            let batch = dcur.rows() as f64;

            let mut dscale = vec![0.0; units];
            let mut dshift = vec![0.0; units];
            let mut sum_dxhat = vec![0.0; units];
            let mut sum_dxhat_xhat = vec![0.0; units];
            for r in 0..dcur.rows() {
                let dy = dcur.row(r);
                let xh = xhat.row(r);
                for j in 0..units {
                    dscale[j] += dy[j] * xh[j];
                    dshift[j] += dy[j];
                    let dxh = dy[j] * bn.scale[j];
                    sum_dxhat[j] += dxh;
                    sum_dxhat_xhat[j] += dxh * xh[j];
                }
            }
            let mut dz = Mat::zeros(dcur.rows(), units);
            for r in 0..dcur.rows() {
                let dy = dcur.row(r);
                let xh = xhat.row(r);
                for j in 0..units {
                    let istd = 1.0 / (stats.var[j] + BN_EPS).sqrt();
                    let dxh = dy[j] * bn.scale[j];
                    dz[(r, j)] = istd / batch
                        * (batch * dxh - sum_dxhat[j] - xh[j] * sum_dxhat_xhat[j]);
                }
            }
            (
                Some(BnGrads {
                    scale: dscale,
                    shift: dshift,
                }),
                dz,
            )
        } else {
            (None, dcur.clone())
        };

        let dense = DenseGrads {
            weight: dz.transpose_mul(&cache.block_inputs[k]),
            bias: block.dense.bias.as_ref().map(|_| col_sums(&dz)),
        };
        dcur = dz.mul(&block.dense.weight);
        hidden_grads.push(BlockGrads {
            dense,
            bn: bn_grads,
        });
    }
    hidden_grads.reverse();

    let mut grads = NetGrads {
        hidden: hidden_grads,
        output,
    };
    if lambda > 0.0 {
        add_group_lasso_grad(net, &mut grads, lambda);
    }
    let loss = ce + lambda * group_lasso_penalty(net);
    Ok((loss, grads, cache))
}

/// Subgradient of `lambda * sum sqrt(|g|) * ||theta_g||`: zero for dead
/// groups, `lambda * sqrt(|g|) * theta / ||theta_g||` otherwise.
fn add_group_lasso_grad(net: &Network, grads: &mut NetGrads, lambda: f64) {
    for g in net.unit_groups() {
        let norm = net.group_norm(g.layer_id, g.unit_id);
        if norm < DEAD_GROUP_NORM {
            continue;
        }
        let coeff = lambda * (g.size as f64).sqrt() / norm;
        let k = g.layer_id;
        let u = g.unit_id;
        // incoming row
        {
            let w = net.hidden[k].dense.weight.row(u);
            let gw = grads.hidden[k].dense.weight.row_mut(u);
            for (gi, wi) in gw.iter_mut().zip(w) {
                *gi += coeff * wi;
            }
        }
        // outgoing column
        if k + 1 < net.hidden.len() {
            let w = &net.hidden[k + 1].dense.weight;
            let gw = &mut grads.hidden[k + 1].dense.weight;
            for r in 0..w.rows() {
                gw[(r, u)] += coeff * w[(r, u)];
            }
        } else {
            let w = &net.output.weight;
            let gw = &mut grads.output.weight;
            for r in 0..w.rows() {
                gw[(r, u)] += coeff * w[(r, u)];
            }
        }
        // batch-norm scale and shift
        if let (Some(bn), Some(bng)) = (&net.hidden[k].bn, grads.hidden[k].bn.as_mut()) {
            bng.scale[u] += coeff * bn.scale[u];
            bng.shift[u] += coeff * bn.shift[u];
        }
    }
}

fn col_sums(m: &Mat) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (s, v) in sums.iter_mut().zip(m.row(r)) {
            *s += v;
        }
    }
    sums
}
