//! Synthetic multi-class blob data and the label-sorted Non-IID partition.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Mat;

/// A labelled mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Mat,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Mat, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::ShapeMismatch("batch_size must be >= 1".into()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows vs {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::ShapeMismatch(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Batch { inputs, labels })
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Mat,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Materializes the subset selected by `idx`, preserving order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut inputs = Mat::zeros(idx.len(), self.inputs.cols());
        let mut labels = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            inputs.row_mut(r).copy_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            inputs,
            labels,
            num_classes: self.num_classes,
        }
    }
}

/// Gaussian blob generator with fixed class means, so train and test splits
/// sampled with different seeds share the same class geometry.
#[derive(Debug, Clone)]
pub struct BlobTask {
    means: Vec<Vec<f64>>,
    feature_dim: usize,
}

impl BlobTask {
    /// Class means drawn on a sphere of radius `separation`.
    pub fn new(num_classes: usize, feature_dim: usize, separation: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = (0..num_classes)
            .map(|_| {
                let v: Vec<f64> = (0..feature_dim).map(|_| gaussian(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                v.into_iter().map(|x| x * separation / norm).collect()
            })
            .collect();
        BlobTask { means, feature_dim }
    }

    /// Draws `n` samples with unit-variance noise, classes balanced (the
    /// first `n % classes` classes get one extra sample), order shuffled.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let classes = self.means.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
        for c in 0..classes {
            let count = n / classes + usize::from(c < n % classes);
            for _ in 0..count {
                let x: Vec<f64> = self.means[c]
                    .iter()
                    .map(|m| m + gaussian(&mut rng))
                    .collect();
                rows.push((x, c));
            }
        }
        rows.shuffle(&mut rng);
        let mut inputs = Mat::zeros(rows.len(), self.feature_dim);
        let mut labels = Vec::with_capacity(rows.len());
        for (r, (x, c)) in rows.iter().enumerate() {
            inputs.row_mut(r).copy_from_slice(x);
            labels.push(*c);
        }
        Dataset {
            inputs,
            labels,
            num_classes: classes,
        }
    }
}

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Splits `(100 - s)%` of the data uniformly at random and the remaining
/// `s%` sorted by label and divided sequentially, so every worker holds the
/// same amount of data (within one sample) but a skewed class mix.
pub fn partition_noniid(
    dataset: &Dataset,
    workers: usize,
    s_percent: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if !(0.0..=100.0).contains(&s_percent) {
        return Err(Error::InvalidConfig(format!(
            "noniid_s must be in [0, 100], got {s_percent}"
        )));
    }
    if workers == 0 {
        return Err(Error::InvalidConfig("workers must be >= 1".into()));
    }
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);

    let n_sorted = ((n as f64) * s_percent / 100.0).round() as usize;
    let n_iid = n - n_sorted;
    let (iid_part, sorted_part) = idx.split_at(n_iid);
    let mut sorted_part: Vec<usize> = sorted_part.to_vec();
    sorted_part.sort_by_key(|&i| (dataset.labels[i], i));

    // equal totals within one sample: worker w's target size, iid share first
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); workers];
    for (k, &i) in iid_part.iter().enumerate() {
        shards[k % workers].push(i);
    }
    let mut cursor = 0;
    for (w, shard) in shards.iter_mut().enumerate() {
        let target = n / workers + usize::from(w < n % workers);
        let take = target - shard.len();
        shard.extend_from_slice(&sorted_part[cursor..cursor + take]);
        cursor += take;
    }
    debug_assert_eq!(cursor, sorted_part.len());
    Ok(shards)
}
