//! The dense base network: fully-connected blocks with batch normalization
//! and ReLU, followed by a linear classifier head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::mat::Mat;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update factor: `running = (1-m)*running + m*batch`.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    BatchNorm,
    Activation,
}

/// One entry of the flattened layer description of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_units: usize,
    pub output_units: usize,
    pub prunable: bool,
}

/// Static description of the dense base network; sub-models refer back to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    pub feature_dim: usize,
    /// Widths of the prunable hidden layers, in order.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    /// Attach a batch-norm layer after each hidden dense layer.
    pub batchnorm: bool,
    /// Give the classifier head a bias vector.
    pub output_bias: bool,
}

impl ModelShape {
    pub fn new(feature_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Self {
        ModelShape {
            feature_dim,
            hidden,
            num_classes,
            batchnorm: true,
            output_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig(
                "feature_dim and num_classes must be nonzero".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be nonzero".into()));
        }
        Ok(())
    }

    /// Flattened per-layer view. The classifier head is never prunable.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut prev = self.feature_dim;
        for &width in &self.hidden {
            specs.push(LayerSpec {
                kind: LayerKind::Dense,
                input_units: prev,
                output_units: width,
                prunable: true,
            });
            if self.batchnorm {
                specs.push(LayerSpec {
                    kind: LayerKind::BatchNorm,
                    input_units: width,
                    output_units: width,
                    prunable: true,
                });
            }
            specs.push(LayerSpec {
                kind: LayerKind::Activation,
                input_units: width,
                output_units: width,
                prunable: true,
            });
            prev = width;
        }
        specs.push(LayerSpec {
            kind: LayerKind::Dense,
            input_units: prev,
            output_units: self.num_classes,
            prunable: false,
        });
        specs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// One row per output unit, one column per input unit.
    pub weight: Mat,
    pub bias: Option<Vec<f64>>,
}

impl Dense {
    fn glorot(out_units: usize, in_units: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_units + out_units) as f64).sqrt();
        let mut weight = Mat::zeros(out_units, in_units);
        for v in weight.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        Dense {
            weight,
            bias: bias.then(|| vec![0.0; out_units]),
        }
    }

    pub fn out_units(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_units(&self) -> usize {
        self.weight.cols()
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        let mut out = x.mul_transpose(&self.weight);
        if let Some(b) = &self.bias {
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                for (o, bi) in row.iter_mut().zip(b) {
                    *o += bi;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn identity(units: usize) -> Self {
        BatchNorm {
            scale: vec![1.0; units],
            shift: vec![0.0; units],
            running_mean: vec![0.0; units],
            running_var: vec![1.0; units],
        }
    }

    pub fn units(&self) -> usize {
        self.scale.len()
    }
}

/// Per-feature batch statistics of one training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Biased (1/B) variance, the one used for normalization.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenBlock {
    pub dense: Dense,
    pub bn: Option<BatchNorm>,
}

/// Weights of a network instance. Both the global base model and every
/// worker sub-model are `Network`s; only their widths differ.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub hidden: Vec<HiddenBlock>,
    pub output: Dense,
}

/// Intermediate values of one training-mode forward pass, kept for backprop.
pub struct ForwardCache {
    /// Input to each hidden block (index 0 is the batch itself).
    pub block_inputs: Vec<Mat>,
    /// Pre-batch-norm linear outputs per block.
    pub pre_bn: Vec<Mat>,
    /// Normalized (pre scale/shift) values per block, when batch norm is on.
    pub normalized: Vec<Option<Mat>>,
    pub bn_stats: Vec<Option<BnBatchStats>>,
    /// Post-activation outputs per block.
    pub activations: Vec<Mat>,
    /// Input to the classifier head.
    pub head_input: Mat,
}

impl Network {
    /// Seeded Glorot-uniform initialization; batch-norm starts at identity.
    pub fn init(shape: &ModelShape, rng: &mut ChaCha8Rng) -> Self {
        let mut hidden = Vec::with_capacity(shape.hidden.len());
        let mut prev = shape.feature_dim;
        for &width in &shape.hidden {
            hidden.push(HiddenBlock {
                dense: Dense::glorot(width, prev, false, rng),
                bn: shape.batchnorm.then(|| BatchNorm::identity(width)),
            });
            prev = width;
        }
        let output = Dense::glorot(shape.num_classes, prev, shape.output_bias, rng);
        Network {
            feature_dim: shape.feature_dim,
            num_classes: shape.num_classes,
            hidden,
            output,
        }
    }

    pub fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} features, model expects {}",
                x.cols(),
                self.feature_dim
            )));
        }
        if x.rows() == 0 {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        Ok(())
    }

    /// Eval-mode forward: a pure function of weights, running stats and input.
    pub fn forward_eval(&self, x: &Mat) -> Result<Mat> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for block in &self.hidden {
            let mut z = block.dense.apply(&cur);
            if let Some(bn) = &block.bn {
                for r in 0..z.rows() {
                    let row = z.row_mut(r);
                    for (j, v) in row.iter_mut().enumerate() {
                        let xhat =
                            (*v - bn.running_mean[j]) / (bn.running_var[j] + BN_EPS).sqrt();
                        *v = bn.scale[j] * xhat + bn.shift[j];
                    }
                }
            }
            z.map_inplace(|v| v.max(0.0));
            cur = z;
        }
        Ok(self.output.apply(&cur))
    }

    /// Training-mode forward using batch statistics; running statistics are
    /// updated as a side effect.
    pub fn forward_train(&mut self, x: &Mat) -> Result<Mat> {
        let (logits, cache) = self.forward_train_cached(x)?;
        self.commit_running_stats(&cache);
        Ok(logits)
    }

    /// Training-mode forward that leaves running statistics untouched and
    /// returns everything backprop needs. Callers that actually train must
    /// follow up with [`Network::commit_running_stats`].
    pub fn forward_train_cached(&self, x: &Mat) -> Result<(Mat, ForwardCache)> {
        self.check_input(x)?;
        let batch = x.rows() as f64;
        let mut cache = ForwardCache {
            block_inputs: Vec::new(),
            pre_bn: Vec::new(),
            normalized: Vec::new(),
            bn_stats: Vec::new(),
            activations: Vec::new(),
            head_input: Mat::zeros(0, 0),
        };
        let mut cur = x.clone();
        for block in &self.hidden {
            cache.block_inputs.push(cur.clone());
            let z = block.dense.apply(&cur);
            cache.pre_bn.push(z.clone());
            let mut out = z;
            if let Some(bn) = &block.bn {
                let units = bn.units();
                let mut mean = vec![0.0; units];
                let mut var = vec![0.0; units];
                for r in 0..out.rows() {
                    for (j, v) in out.row(r).iter().enumerate() {
                        mean[j] += v;
                    }
                }
                for m in &mut mean {
                    *m /= batch;
                }
                for r in 0..out.rows() {
                    for (j, v) in out.row(r).iter().enumerate() {
                        let d = v - mean[j];
                        var[j] += d * d;
                    }
                }
                for v in &mut var {
                    *v /= batch;
                }
                let mut normalized = Mat::zeros(out.rows(), units);
                for r in 0..out.rows() {
                    for j in 0..units {
                        let xhat = (out[(r, j)] - mean[j]) / (var[j] + BN_EPS).sqrt();
                        normalized[(r, j)] = xhat;
                        out[(r, j)] = bn.scale[j] * xhat + bn.shift[j];
                    }
                }
                cache.normalized.push(Some(normalized));
                cache.bn_stats.push(Some(BnBatchStats { mean, var }));
            } else {
                cache.normalized.push(None);
                cache.bn_stats.push(None);
            }
            out.map_inplace(|v| v.max(0.0));
            cache.activations.push(out.clone());
            cur = out;
        }
        cache.head_input = cur.clone();
        Ok((self.output.apply(&cur), cache))
    }

    pub fn commit_running_stats(&mut self, cache: &ForwardCache) {
        for (block, stats) in self.hidden.iter_mut().zip(&cache.bn_stats) {
            if let (Some(bn), Some(s)) = (block.bn.as_mut(), stats) {
                for j in 0..bn.units() {
                    bn.running_mean[j] =
                        (1.0 - BN_MOMENTUM) * bn.running_mean[j] + BN_MOMENTUM * s.mean[j];
                    bn.running_var[j] =
                        (1.0 - BN_MOMENTUM) * bn.running_var[j] + BN_MOMENTUM * s.var[j];
                }
            }
        }
    }

    /// Number of hidden (prunable) layers.
    pub fn num_hidden(&self) -> usize {
        self.hidden.len()
    }

    /// Learnable parameter count: dense weights, biases, bn scale and shift.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for block in &self.hidden {
            n += block.dense.weight.rows() * block.dense.weight.cols();
            if block.dense.bias.is_some() {
                n += block.dense.out_units();
            }
            if let Some(bn) = &block.bn {
                n += 2 * bn.units();
            }
        }
        n += self.output.weight.rows() * self.output.weight.cols();
        if self.output.bias.is_some() {
            n += self.output.out_units();
        }
        n
    }

    /// Multiply-accumulate count of one forward pass over a single sample.
    pub fn macs_per_sample(&self) -> usize {
        let mut n = 0;
        for block in &self.hidden {
            n += block.dense.weight.rows() * block.dense.weight.cols();
        }
        n + self.output.weight.rows() * self.output.weight.cols()
    }

    /// Bitwise equality of every learnable parameter and running statistic.
    pub fn bit_eq(&self, other: &Network) -> bool {
        self == other
    }
}

/// The global dense model: a full-width network plus its shape description.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    pub shape: ModelShape,
    pub net: Network,
}

impl BaseModel {
    pub fn init(shape: ModelShape, rng: &mut ChaCha8Rng) -> Result<Self> {
        shape.validate()?;
        let net = Network::init(&shape, rng);
        Ok(BaseModel { shape, net })
    }

    pub fn forward(&mut self, x: &Mat, training: bool) -> Result<Mat> {
        if training {
            self.net.forward_train(x)
        } else {
            self.net.forward_eval(x)
        }
    }

    /// `|bn_scale|` of every prunable unit as `(layer, unit, importance)`.
    ///
    /// Errors when some prunable layer lacks batch normalization, since the
    /// scaling factors are the importance signal.
    pub fn bn_scaling_importance(&self) -> Result<Vec<(usize, usize, f64)>> {
        let mut out = Vec::new();
        for (layer, block) in self.net.hidden.iter().enumerate() {
            let bn = block
                .bn
                .as_ref()
                .ok_or(Error::MissingBatchNorm { layer })?;
            for (unit, s) in bn.scale.iter().enumerate() {
                out.push((layer, unit, s.abs()));
            }
        }
        Ok(out)
    }
}
