//! Server-side pruned-rate controller: per-worker (retention, update time)
//! observations, Newton inverse interpolation toward the fastest worker's
//! time, the initial alpha-model rate and the clamping rules.

use crate::error::{Error, Result};

/// Most recent observations kept per worker; the interpolation degree stays
/// low enough that Runge oscillation cannot appear.
pub const HISTORY_CAP: usize = 5;

/// Relative tolerance under which two averaged update times are considered
/// the same abscissa.
const DUPLICATE_PHI_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePolicy {
    /// Initial coefficient relating update time to retention before any
    /// pruning history exists.
    pub alpha: f64,
    /// Smallest worthwhile pruned rate; smaller gaps skip the pruning.
    pub rho_min: f64,
    /// Largest pruned rate issued at one pruning event.
    pub rho_max: f64,
    /// Smallest model retention ratio a worker may reach.
    pub gamma_min: f64,
}

impl RatePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::NonPositive {
                what: "alpha",
                value: self.alpha,
            });
        }
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.rho_min) || !in_unit(self.rho_max) || self.rho_min >= self.rho_max {
            return Err(Error::InvalidConfig(format!(
                "need 0 < rho_min < rho_max < 1, got {} and {}",
                self.rho_min, self.rho_max
            )));
        }
        if !in_unit(self.gamma_min) {
            return Err(Error::InvalidConfig(format!(
                "gamma_min must be in (0, 1), got {}",
                self.gamma_min
            )));
        }
        Ok(())
    }
}

impl Default for RatePolicy {
    fn default() -> Self {
        RatePolicy {
            alpha: 2.0,
            rho_min: 0.05,
            rho_max: 0.5,
            gamma_min: 0.1,
        }
    }
}

/// One worker's pruning history: `(retention, averaged update time)` pairs in
/// pruning-event order, plus the raw per-round times of the open interval.
#[derive(Debug, Clone, Default)]
pub struct RateHistory {
    observations: Vec<(f64, f64)>,
    pending: Vec<f64>,
}

impl RateHistory {
    pub fn new() -> Self {
        RateHistory::default()
    }

    pub fn record_update_time(&mut self, phi_round: f64) -> Result<()> {
        if phi_round <= 0.0 || !phi_round.is_finite() {
            return Err(Error::NonPositive {
                what: "update time",
                value: phi_round,
            });
        }
        self.pending.push(phi_round);
        Ok(())
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Averages the pending interval times into one `(gamma_now, phi)`
    /// observation. A re-measurement of an unchanged model replaces the last
    /// observation; a duplicate abscissa replaces the old entry holding it.
    pub fn flush_observation(&mut self, gamma_now: f64) -> Result<()> {
        if self.pending.is_empty() {
            return Err(Error::EmptyPending);
        }
        let phi = self.pending.iter().sum::<f64>() / self.pending.len() as f64;
        self.pending.clear();

        if let Some(last) = self.observations.last_mut() {
            if (last.0 - gamma_now).abs() < 1e-12 {
                last.1 = phi;
                return Ok(());
            }
        }
        self.observations
            .retain(|&(_, p)| (p - phi).abs() > DUPLICATE_PHI_REL * p.abs().max(1.0));
        self.observations.push((gamma_now, phi));
        if self.observations.len() > HISTORY_CAP {
            let drop = self.observations.len() - HISTORY_CAP;
            self.observations.drain(..drop);
        }
        Ok(())
    }

    pub fn observations(&self) -> &[(f64, f64)] {
        &self.observations
    }

    /// Latest `(gamma, phi)` observation, the worker's current state.
    pub fn latest(&self) -> Option<(f64, f64)> {
        self.observations.last().copied()
    }
}

/// Evaluates the Newton form of the polynomial through `(phi_i, gamma_i)` at
/// `phi_target`. With a single point the interpolant is that constant.
pub fn newton_inverse_interpolate(points: &[(f64, f64)], phi_target: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("interpolation needs >= 1 point".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let mut coef: Vec<f64> = points.iter().map(|p| p.1).collect();
    let n = x.len();
    for j in 1..n {
        for i in (j..n).rev() {
            let den = x[i] - x[i - j];
            if den == 0.0 {
                return Err(Error::DuplicateAbscissa(x[i]));
            }
            coef[i] = (coef[i] - coef[i - 1]) / den;
        }
    }
    let mut p = coef[n - 1];
    for j in (0..n - 1).rev() {
        p = coef[j] + (phi_target - x[j]) * p;
    }
    Ok(p)
}

/// Which branch produced a worker's pruned rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateBranch {
    /// Newton inverse interpolation over the pruning history.
    Interpolated,
    /// The initial alpha model for workers with no usable history.
    AlphaModel,
    /// Interpolated gap fell below `rho_min`; no pruning issued.
    SkippedSmallGap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDecision {
    pub rate: f64,
    pub branch: RateBranch,
    /// Retention the rate aims at (`gamma_now` when no pruning is issued).
    pub gamma_target: f64,
}

/// Runs the pruned-rate computation for every worker. Histories must have
/// been flushed so that `latest()` is the current `(gamma_now, phi_now)`.
pub fn compute_pruned_rates(
    histories: &[RateHistory],
    policy: &RatePolicy,
    pruned_before: &[bool],
) -> Result<Vec<RateDecision>> {
    policy.validate()?;
    if histories.len() != pruned_before.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} histories vs {} pruned flags",
            histories.len(),
            pruned_before.len()
        )));
    }
    let current: Vec<(f64, f64)> = histories
        .iter()
        .map(|h| {
            h.latest()
                .ok_or_else(|| Error::InvalidConfig("worker has no flushed observation".into()))
        })
        .collect::<Result<_>>()?;
    let phi_min = current
        .iter()
        .map(|&(_, phi)| phi)
        .fold(f64::INFINITY, f64::min);

    let mut out = Vec::with_capacity(histories.len());
    for (w, history) in histories.iter().enumerate() {
        let (gamma_now, phi_now) = current[w];
        let decision = if pruned_before[w] && history.observations().len() >= 2 {
            let nodes: Vec<(f64, f64)> = history
                .observations()
                .iter()
                .map(|&(gamma, phi)| (phi, gamma))
                .collect();
            let raw = newton_inverse_interpolate(&nodes, phi_min)?;
            let target = raw.max(policy.gamma_min);
            if gamma_now - target < policy.rho_min {
                RateDecision {
                    rate: 0.0,
                    branch: RateBranch::SkippedSmallGap,
                    gamma_target: gamma_now,
                }
            } else {
                let target = target.min(gamma_now);
                RateDecision {
                    rate: (gamma_now - target) / gamma_now,
                    branch: RateBranch::Interpolated,
                    gamma_target: target,
                }
            }
        } else {
            // alpha model: phi = alpha * phi_now * gamma
            let rate = (phi_now - phi_min) / (policy.alpha * phi_now);
            RateDecision {
                rate,
                branch: RateBranch::AlphaModel,
                gamma_target: gamma_now * (1.0 - rate),
            }
        };
        let rate = decision.rate.clamp(0.0, policy.rho_max);
        out.push(RateDecision {
            rate,
            gamma_target: gamma_now * (1.0 - rate),
            ..decision
        });
    }
    Ok(out)
}
