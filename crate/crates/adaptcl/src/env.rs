//! Heterogeneous environment model: per-worker simulated update times,
//! bandwidth-profile construction from `(B_max, sigma)`, heterogeneity
//! metrics and the deterministic simulated clock.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const BYTES_PER_MB: f64 = 1e6;

/// Multiplicative update-time jitter: factors drawn uniformly from
/// `[1 - magnitude, 1 + magnitude]`.
#[derive(Debug, Clone)]
pub struct JitterSpec {
    pub magnitude: f64,
    pub seed: u64,
}

impl JitterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.magnitude) {
            return Err(Error::InvalidConfig(format!(
                "jitter magnitude must be in [0, 0.5], got {}",
                self.magnitude
            )));
        }
        Ok(())
    }

    pub fn stream(&self) -> Jitter {
        Jitter {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            magnitude: self.magnitude,
        }
    }
}

/// A reproducible stream of jitter factors.
#[derive(Debug, Clone)]
pub struct Jitter {
    rng: ChaCha8Rng,
    magnitude: f64,
}

impl Jitter {
    pub fn draw(&mut self) -> f64 {
        if self.magnitude == 0.0 {
            return 1.0;
        }
        1.0 + self.rng.gen_range(-self.magnitude..=self.magnitude)
    }
}

/// Simulated capability of one worker.
#[derive(Debug, Clone)]
pub struct WorkerProfile {
    pub worker_id: usize,
    /// Link bandwidth in megabytes per simulated second.
    pub bandwidth_mb_s: f64,
    /// Simulated seconds per unit of training work.
    pub compute_coeff: f64,
    pub noise: Option<JitterSpec>,
}

impl WorkerProfile {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_mb_s <= 0.0 {
            return Err(Error::NonPositive {
                what: "bandwidth",
                value: self.bandwidth_mb_s,
            });
        }
        if self.compute_coeff < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "compute coefficient must be nonnegative, got {}",
                self.compute_coeff
            )));
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }

    /// One-way transfer seconds for a payload of `bytes`.
    pub fn transfer_seconds(&self, bytes: f64) -> f64 {
        bytes / BYTES_PER_MB / self.bandwidth_mb_s
    }

    pub fn train_seconds(&self, work_units: f64) -> f64 {
        self.compute_coeff * work_units
    }
}

/// Noiseless update time: training plus symmetric send and receive.
pub fn update_time(profile: &WorkerProfile, model_param_bytes: f64, work_units: f64) -> f64 {
    profile.train_seconds(work_units) + 2.0 * profile.transfer_seconds(model_param_bytes)
}

/// Update time with an optional jitter stream applied multiplicatively.
pub fn update_time_jittered(
    profile: &WorkerProfile,
    model_param_bytes: f64,
    work_units: f64,
    jitter: Option<&mut Jitter>,
) -> f64 {
    let phi = update_time(profile, model_param_bytes, work_units);
    match jitter {
        Some(j) => phi * j.draw(),
        None => phi,
    }
}

/// Measured heterogeneity of a round:
/// `H = 1 - mean over non-fastest workers of phi_min / phi_w`.
pub fn heterogeneity(phis: &[f64]) -> Result<f64> {
    if phis.len() < 2 {
        return Err(Error::TooFewWorkers(phis.len()));
    }
    if let Some(&bad) = phis.iter().find(|&&p| p <= 0.0) {
        return Err(Error::NonPositive {
            what: "update time",
            value: bad,
        });
    }
    let argmin = phis
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let phi_min = phis[argmin];
    let sum: f64 = phis
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != argmin)
        .map(|(_, &p)| phi_min / p)
        .sum();
    Ok(1.0 - sum / (phis.len() - 1) as f64)
}

/// Closed-form heterogeneity of the uniformly spread update-time profile
/// built by [`make_bandwidths`].
pub fn predicted_heterogeneity(sigma: f64, workers: usize) -> Result<f64> {
    if workers < 2 {
        return Err(Error::TooFewWorkers(workers));
    }
    if sigma < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "sigma must be >= 1, got {sigma}"
        )));
    }
    let w = workers as f64;
    let mut sum = 0.0;
    for rank in 1..workers {
        sum += 1.0 / (1.0 + (sigma - 1.0) / (w - 1.0) * (w - rank as f64));
    }
    Ok(1.0 - sum / (w - 1.0))
}

/// Builds per-worker bandwidths so that full-model update times are spread
/// uniformly between the fastest worker's time and `sigma` times it. Worker
/// `W-1` (the last) is the fastest and receives exactly `b_max`.
pub fn make_bandwidths(
    b_max: f64,
    sigma: f64,
    workers: usize,
    model_param_bytes: f64,
    t_train: f64,
) -> Result<Vec<f64>> {
    if b_max <= 0.0 {
        return Err(Error::NonPositive {
            what: "b_max",
            value: b_max,
        });
    }
    if sigma < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "sigma must be >= 1, got {sigma}"
        )));
    }
    if workers < 2 {
        return Err(Error::TooFewWorkers(workers));
    }
    if t_train < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "t_train must be nonnegative, got {t_train}"
        )));
    }
    let s_mb = model_param_bytes / BYTES_PER_MB;
    let base = 2.0 * s_mb / b_max + t_train;
    let w = workers as f64;
    let mut bandwidths = Vec::with_capacity(workers);
    for rank in 1..=workers {
        let factor = 1.0 + (sigma - 1.0) / (w - 1.0) * (w - rank as f64);
        let phi = base * factor;
        if phi <= t_train {
            return Err(Error::InvalidConfig(format!(
                "target update time {phi} not above training time {t_train}"
            )));
        }
        bandwidths.push(2.0 * s_mb / (phi - t_train));
    }
    Ok(bandwidths)
}

/// Deterministic simulated clock with a per-round completion log.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    now: f64,
    events: Vec<(usize, f64)>,
}

impl SimClock {
    pub fn new() -> Self {
        SimClock::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn advance_by(&mut self, dt: f64) {
        assert!(dt >= 0.0, "clock cannot run backwards ({dt})");
        self.now += dt;
    }

    pub fn advance_to(&mut self, t: f64) {
        assert!(t >= self.now, "clock cannot run backwards ({t} < {})", self.now);
        self.now = t;
    }

    pub fn log_round(&mut self, round: usize) {
        self.events.push((round, self.now));
    }

    pub fn events(&self) -> &[(usize, f64)] {
        &self.events
    }
}
