//! Structural pruning: importance orderings, mask computation against a
//! parameter retention budget, physical model reconfiguration, global-index
//! bookkeeping and the remaining-network similarity metric.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{BaseModel, BatchNorm, Dense, HiddenBlock, Mat, ModelShape, Network};
use crate::seeds;

/// Wire size of one parameter (32-bit values).
pub const PARAM_WIRE_BYTES: usize = 4;
/// Wire size of one pruned-rate scalar.
pub const RATE_WIRE_BYTES: usize = 8;

/// Per-prunable-layer sorted sets of retained unit ids in base-model
/// coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalIndex {
    layers: Vec<Vec<usize>>,
    parent_widths: Vec<usize>,
}

impl GlobalIndex {
    /// The full index: every unit of every prunable layer retained.
    pub fn full(shape: &ModelShape) -> Self {
        GlobalIndex {
            layers: shape.hidden.iter().map(|&w| (0..w).collect()).collect(),
            parent_widths: shape.hidden.clone(),
        }
    }

    pub fn from_layers(layers: Vec<Vec<usize>>, shape: &ModelShape) -> Result<Self> {
        let index = GlobalIndex {
            layers,
            parent_widths: shape.hidden.clone(),
        };
        index.validate()?;
        Ok(index)
    }

    pub fn layers(&self) -> &[Vec<usize>] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &[usize] {
        &self.layers[k]
    }

    pub fn parent_widths(&self) -> &[usize] {
        &self.parent_widths
    }

    fn validate(&self) -> Result<()> {
        if self.layers.len() != self.parent_widths.len() {
            return Err(Error::MismatchedParents);
        }
        for (k, units) in self.layers.iter().enumerate() {
            if units.is_empty() {
                return Err(Error::EmptyLayer { layer: k });
            }
            for pair in units.windows(2) {
                if pair[0] >= pair[1] {
                    return Err(Error::InvalidUnit {
                        layer: k,
                        unit: pair[1],
                    });
                }
            }
            if *units.last().unwrap() >= self.parent_widths[k] {
                return Err(Error::InvalidUnit {
                    layer: k,
                    unit: *units.last().unwrap(),
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, layer: usize, unit: usize) -> bool {
        self.layers
            .get(layer)
            .is_some_and(|units| units.binary_search(&unit).is_ok())
    }

    pub fn matches_shape(&self, shape: &ModelShape) -> bool {
        self.parent_widths == shape.hidden
    }

    /// Per-layer retained unit counts.
    pub fn counts(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    /// Serialized size when committed alongside the model: a u16 length plus
    /// a u16 unit id per retained unit, per layer.
    pub fn wire_bytes(&self) -> usize {
        self.layers.iter().map(|units| 2 + 2 * units.len()).sum()
    }
}

/// A worker's pruned network plus the bookkeeping to place it back into the
/// base model.
#[derive(Debug, Clone, PartialEq)]
pub struct SubModel {
    pub parent: ModelShape,
    pub index: GlobalIndex,
    pub net: Network,
}

impl SubModel {
    pub fn retention(&self) -> f64 {
        retention_ratio(&self.index, &self.parent).expect("index validated at construction")
    }

    pub fn param_count(&self) -> usize {
        retained_params(&self.parent, &self.index.counts())
    }

    pub fn param_wire_bytes(&self) -> usize {
        PARAM_WIRE_BYTES * self.param_count()
    }

    pub fn forward(&mut self, x: &Mat, training: bool) -> Result<Mat> {
        if training {
            self.net.forward_train(x)
        } else {
            self.net.forward_eval(x)
        }
    }
}

/// Learnable parameter count reachable from the given per-layer retained
/// counts: dense weights, batch-norm scale/shift, classifier bias.
pub fn retained_params(shape: &ModelShape, counts: &[usize]) -> usize {
    let mut n = 0;
    let mut prev = shape.feature_dim;
    for &cnt in counts {
        n += prev * cnt;
        if shape.batchnorm {
            n += 2 * cnt;
        }
        prev = cnt;
    }
    n += prev * shape.num_classes;
    if shape.output_bias {
        n += shape.num_classes;
    }
    n
}

pub fn full_params(shape: &ModelShape) -> usize {
    retained_params(shape, &shape.hidden)
}

/// Retained parameter fraction of the base model.
pub fn retention_ratio(index: &GlobalIndex, shape: &ModelShape) -> Result<f64> {
    if !index.matches_shape(shape) {
        return Err(Error::MismatchedParents);
    }
    index.validate()?;
    Ok(retained_params(shape, &index.counts()) as f64 / full_params(shape) as f64)
}

/// Mean per-prunable-layer Jaccard similarity of two retained-unit indexes.
pub fn similarity(a: &GlobalIndex, b: &GlobalIndex) -> Result<f64> {
    if a.parent_widths != b.parent_widths {
        return Err(Error::MismatchedParents);
    }
    let mut total = 0.0;
    for (ua, ub) in a.layers.iter().zip(&b.layers) {
        let inter = ua.iter().filter(|u| ub.binary_search(u).is_ok()).count();
        let union = ua.len() + ub.len() - inter;
        total += inter as f64 / union as f64;
    }
    Ok(total / a.layers.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneMethod {
    /// Constant, identical, global order by frozen |bn scale|, least first.
    CigBnScalor,
    /// Ascending (layer, unit) order.
    Index,
    /// Seeded shuffle shared by all workers, frozen across rounds.
    NoAdjacent,
    /// Index order entered at a per-worker cyclic start offset.
    NoIdentical,
    /// Index order entered at a shared offset re-drawn every pruning round.
    NoConstant,
}

impl PruneMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PruneMethod::CigBnScalor => "cig-bnscalor",
            PruneMethod::Index => "index",
            PruneMethod::NoAdjacent => "no-adjacent",
            PruneMethod::NoIdentical => "no-identical",
            PruneMethod::NoConstant => "no-constant",
        }
    }

    /// The order is shared by all workers and frozen once built.
    pub fn is_cig(&self) -> bool {
        matches!(
            self,
            PruneMethod::CigBnScalor | PruneMethod::Index | PruneMethod::NoAdjacent
        )
    }
}

impl FromStr for PruneMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cig-bnscalor" => Ok(PruneMethod::CigBnScalor),
            "index" => Ok(PruneMethod::Index),
            "no-adjacent" => Ok(PruneMethod::NoAdjacent),
            "no-identical" => Ok(PruneMethod::NoIdentical),
            "no-constant" => Ok(PruneMethod::NoConstant),
            other => Err(Error::InvalidConfig(format!(
                "unknown prune method '{other}'"
            ))),
        }
    }
}

/// A frozen total order over all prunable units, walked cyclically from
/// `offset` when masks are computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneOrder {
    pub method: PruneMethod,
    order: Vec<(usize, usize)>,
    offset: usize,
}

impl PruneOrder {
    pub fn walk(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.order.len();
        (0..n).map(move |i| self.order[(self.offset + i) % n])
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Builds the pruning order for one worker.
///
/// `cig-bnscalor` must be given the aggregated global model of the first
/// pruning round; the caller freezes the result. For `no-constant` the
/// caller mixes the pruning-round counter into `seed` so the shared offset
/// is re-drawn each round.
pub fn build_order(
    method: PruneMethod,
    global: &BaseModel,
    seed: u64,
    worker_id: usize,
) -> Result<PruneOrder> {
    let index_order: Vec<(usize, usize)> = global
        .shape
        .hidden
        .iter()
        .enumerate()
        .flat_map(|(k, &w)| (0..w).map(move |u| (k, u)))
        .collect();
    let total = index_order.len();
    let (order, offset) = match method {
        PruneMethod::Index => (index_order, 0),
        PruneMethod::CigBnScalor => {
            let mut imp = global.bn_scaling_importance()?;
            imp.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            (imp.into_iter().map(|(k, u, _)| (k, u)).collect(), 0)
        }
        PruneMethod::NoAdjacent => {
            let mut order = index_order;
            let mut rng =
                ChaCha8Rng::seed_from_u64(seeds::mix(seed, seeds::TAG_PRUNE_ORDER));
            order.shuffle(&mut rng);
            (order, 0)
        }
        PruneMethod::NoIdentical => {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(
                seeds::mix(seed, seeds::TAG_PRUNE_ORDER),
                worker_id as u64,
            ));
            (index_order, rng.gen_range(0..total))
        }
        PruneMethod::NoConstant => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seeds::mix(seed, seeds::TAG_PRUNE_ORDER));
            (index_order, rng.gen_range(0..total))
        }
    };
    Ok(PruneOrder {
        method,
        order,
        offset,
    })
}

/// The units `compute_mask` chose to remove.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    pub remove: Vec<(usize, usize)>,
    /// Set when the requested rate could not be met without violating the
    /// minimum retention ratio.
    pub clamped: bool,
}

/// Walks the order over still-retained units, removing whole units until the
/// parameter retention ratio drops from its current value to
/// `gamma_now * (1 - pruned_rate)`, as close as the unit granularity allows.
/// Never drops retention below `gamma_min` and never empties a layer.
pub fn compute_mask(
    order: &PruneOrder,
    current: &GlobalIndex,
    pruned_rate: f64,
    gamma_min: f64,
    shape: &ModelShape,
) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&pruned_rate) {
        return Err(Error::InvalidConfig(format!(
            "pruned rate must be in [0, 1), got {pruned_rate}"
        )));
    }
    let gamma_now = retention_ratio(current, shape)?;
    let full = full_params(shape) as f64;
    let target = gamma_now * (1.0 - pruned_rate);
    let effective = target.max(gamma_min);
    let mut clamped = target < gamma_min;

    let mut counts = current.counts();
    let mut retained: Vec<Vec<bool>> = shape
        .hidden
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let mut flags = vec![false; w];
            for &u in current.layer(k) {
                flags[u] = true;
            }
            flags
        })
        .collect();

    let mut remove = Vec::new();
    let mut ratio = retained_params(shape, &counts) as f64 / full;
    for (k, u) in order.walk() {
        if ratio <= effective + 1e-12 {
            break;
        }
        if !retained[k][u] {
            continue;
        }
        if counts[k] == 1 {
            // a prunable layer always keeps at least one unit
            continue;
        }
        counts[k] -= 1;
        let next = retained_params(shape, &counts) as f64 / full;
        counts[k] += 1;
        if next < gamma_min - 1e-12 {
            clamped = true;
            break;
        }
        if (next - effective).abs() >= (ratio - effective).abs() {
            break;
        }
        retained[k][u] = false;
        counts[k] -= 1;
        remove.push((k, u));
        ratio = next;
    }
    Ok(PruneMask { remove, clamped })
}

/// Physically deletes the given units from a sub-model: their rows, columns
/// and batch-norm entries disappear and the surviving weights are copied
/// verbatim. `units_to_remove` are base-model unit ids.
pub fn reconfigure(sub: &SubModel, units_to_remove: &[(usize, usize)]) -> Result<SubModel> {
    if units_to_remove.is_empty() {
        return Ok(sub.clone());
    }
    for &(k, u) in units_to_remove {
        if !sub.index.contains(k, u) {
            return Err(Error::InvalidUnit { layer: k, unit: u });
        }
    }
    let mut new_layers = Vec::with_capacity(sub.index.layers().len());
    for (k, units) in sub.index.layers().iter().enumerate() {
        let keep: Vec<usize> = units
            .iter()
            .copied()
            .filter(|&u| !units_to_remove.contains(&(k, u)))
            .collect();
        if keep.is_empty() {
            return Err(Error::EmptyLayer { layer: k });
        }
        new_layers.push(keep);
    }
    let new_index = GlobalIndex::from_layers(new_layers, &sub.parent)?;
    let net = slice_network(&sub.net, &sub.index, &new_index, &sub.parent);
    Ok(SubModel {
        parent: sub.parent.clone(),
        index: new_index,
        net,
    })
}

/// The global parameters at the retained positions, as a trainable sub-model.
pub fn extract_submodel(global: &BaseModel, index: &GlobalIndex) -> Result<SubModel> {
    if !index.matches_shape(&global.shape) {
        return Err(Error::MismatchedParents);
    }
    index.validate()?;
    let full = GlobalIndex::full(&global.shape);
    let net = slice_network(&global.net, &full, index, &global.shape);
    Ok(SubModel {
        parent: global.shape.clone(),
        index: index.clone(),
        net,
    })
}

/// Copies the weights of `net` (laid out per `old`) down to the rows/columns
/// retained by `new`. Requires `new ⊆ old` per layer.
fn slice_network(
    net: &Network,
    old: &GlobalIndex,
    new: &GlobalIndex,
    shape: &ModelShape,
) -> Network {
    // positions of the new retained units inside the old layout
    let pos: Vec<Vec<usize>> = old
        .layers()
        .iter()
        .zip(new.layers())
        .map(|(old_units, new_units)| {
            new_units
                .iter()
                .map(|u| old_units.binary_search(u).expect("new index must nest in old"))
                .collect()
        })
        .collect();

    let mut hidden = Vec::with_capacity(net.hidden.len());
    let mut prev_pos: Option<&Vec<usize>> = None;
    for (k, block) in net.hidden.iter().enumerate() {
        let rows = &pos[k];
        let old_w = &block.dense.weight;
        let in_count = prev_pos.map_or(shape.feature_dim, Vec::len);
        let mut weight = Mat::zeros(rows.len(), in_count);
        for (r, &orow) in rows.iter().enumerate() {
            match prev_pos {
                None => weight.row_mut(r).copy_from_slice(old_w.row(orow)),
                Some(cols) => {
                    for (c, &ocol) in cols.iter().enumerate() {
                        weight[(r, c)] = old_w[(orow, ocol)];
                    }
                }
            }
        }
        let bn = block.bn.as_ref().map(|bn| BatchNorm {
            scale: rows.iter().map(|&p| bn.scale[p]).collect(),
            shift: rows.iter().map(|&p| bn.shift[p]).collect(),
            running_mean: rows.iter().map(|&p| bn.running_mean[p]).collect(),
            running_var: rows.iter().map(|&p| bn.running_var[p]).collect(),
        });
        hidden.push(HiddenBlock {
            dense: Dense { weight, bias: None },
            bn,
        });
        prev_pos = Some(&pos[k]);
    }

    let cols = prev_pos.expect("prunable models have at least one hidden layer");
    let mut out_weight = Mat::zeros(net.output.out_units(), cols.len());
    for r in 0..net.output.out_units() {
        for (c, &ocol) in cols.iter().enumerate() {
            out_weight[(r, c)] = net.output.weight[(r, ocol)];
        }
    }
    Network {
        feature_dim: net.feature_dim,
        num_classes: net.num_classes,
        hidden,
        output: Dense {
            weight: out_weight,
            bias: net.output.bias.clone(),
        },
    }
}
