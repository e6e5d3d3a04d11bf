//! Cross-entropy with group-lasso regularization over per-unit groups.

use super::mat::Mat;
use super::model::Network;
use crate::error::{Error, Result};

/// Below this L2 norm a group is treated as dead: its subgradient is zero.
pub const DEAD_GROUP_NORM: f64 = 1e-12;

/// A prunable unit and the number of parameters tied to it (incoming row,
/// outgoing column, batch-norm scale and shift).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitGroup {
    pub layer_id: usize,
    pub unit_id: usize,
    pub size: usize,
}

impl Network {
    /// Enumerates the groups of every prunable (hidden-layer) unit.
    pub fn unit_groups(&self) -> Vec<UnitGroup> {
        let mut groups = Vec::new();
        for (layer_id, block) in self.hidden.iter().enumerate() {
            let in_len = block.dense.in_units();
            let out_len = self.outgoing_rows(layer_id);
            let bn_len = if block.bn.is_some() { 2 } else { 0 };
            for unit_id in 0..block.dense.out_units() {
                groups.push(UnitGroup {
                    layer_id,
                    unit_id,
                    size: in_len + out_len + bn_len,
                });
            }
        }
        groups
    }

    /// Number of units receiving layer `layer_id`'s outputs.
    pub(crate) fn outgoing_rows(&self, layer_id: usize) -> usize {
        if layer_id + 1 < self.hidden.len() {
            self.hidden[layer_id + 1].dense.out_units()
        } else {
            self.output.out_units()
        }
    }

    /// L2 norm over all parameters in the unit's group.
    pub fn group_norm(&self, layer_id: usize, unit_id: usize) -> f64 {
        let mut sq = 0.0;
        let block = &self.hidden[layer_id];
        for &w in block.dense.weight.row(unit_id) {
            sq += w * w;
        }
        let next = if layer_id + 1 < self.hidden.len() {
            &self.hidden[layer_id + 1].dense.weight
        } else {
            &self.output.weight
        };
        for r in 0..next.rows() {
            let w = next[(r, unit_id)];
            sq += w * w;
        }
        if let Some(bn) = &block.bn {
            sq += bn.scale[unit_id] * bn.scale[unit_id];
            sq += bn.shift[unit_id] * bn.shift[unit_id];
        }
        sq.sqrt()
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    if logits.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::ShapeMismatch(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let batch = logits.rows() as f64;
    let mut grad = Mat::zeros(logits.rows(), classes);
    let mut loss = 0.0;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - row[labels[r]];
        let g = grad.row_mut(r);
        for c in 0..classes {
            let p = (row[c] - log_z).exp();
            g[c] = (p - if c == labels[r] { 1.0 } else { 0.0 }) / batch;
        }
    }
    Ok((loss / batch, grad))
}

/// `sum over groups of sqrt(|g|) * ||theta_g||_2`, unscaled.
pub fn group_lasso_penalty(net: &Network) -> f64 {
    net.unit_groups()
        .iter()
        .map(|g| (g.size as f64).sqrt() * net.group_norm(g.layer_id, g.unit_id))
        .sum()
}

/// Mean cross-entropy plus `lambda` times the group-lasso penalty of the
/// model's prunable unit groups.
pub fn loss_with_group_lasso(
    logits: &Mat,
    labels: &[usize],
    net: &Network,
    lambda: f64,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let (ce, _) = softmax_cross_entropy(logits, labels)?;
    Ok(ce + lambda * group_lasso_penalty(net))
}
