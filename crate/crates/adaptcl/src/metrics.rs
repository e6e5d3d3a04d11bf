//! Per-round records and their delimited-text emission.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

/// One aggregation event (one BSP round, or one commit under the
/// asynchronous policies).
#[derive(Debug, Clone)]
pub struct RoundMetrics {
    pub round: usize,
    /// Simulated clock after this round completed.
    pub sim_time_s: f64,
    /// Heterogeneity of this round's update times.
    pub h: f64,
    /// Test accuracy of the aggregated global model.
    pub acc: f64,
    pub phi: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Pruned rate issued to each worker at this round (zero off pruning
    /// rounds).
    pub rate: Vec<f64>,
    /// Mean remaining-network similarity over worker pairs with identical
    /// issued-rate histories, when such pairs exist.
    pub equal_rate_similarity: Option<f64>,
    /// Committed model payload this round (all workers, both directions).
    pub payload_bytes: usize,
    /// Global-index and pruned-rate bytes this round (all workers).
    pub overhead_bytes: usize,
    /// Staleness of the committing worker, for the asynchronous policies.
    pub staleness: Option<u64>,
}

/// End-of-run record.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub policy: String,
    pub seed: u64,
    pub final_acc: f64,
    pub best_acc: f64,
    pub best_acc_time_s: f64,
    pub total_time_s: f64,
    /// Mean over workers of `1 - final retention`.
    pub mean_param_reduction: f64,
    pub baseline_policy: Option<String>,
    pub baseline_time_s: Option<f64>,
    pub speedup: Option<f64>,
}

impl RunSummary {
    /// Single-line `key=value` record.
    pub fn to_line(&self) -> String {
        let mut line = format!(
            "policy={} seed={} final_acc={} best_acc={} best_acc_time_s={} total_time_s={} mean_param_reduction={}",
            self.policy,
            self.seed,
            self.final_acc,
            self.best_acc,
            self.best_acc_time_s,
            self.total_time_s,
            self.mean_param_reduction,
        );
        if let (Some(policy), Some(time)) = (&self.baseline_policy, self.baseline_time_s) {
            let _ = write!(line, " baseline={policy} baseline_time_s={time}");
        }
        if let Some(speedup) = self.speedup {
            let _ = write!(line, " speedup={speedup}");
        }
        line
    }
}

/// Renders the round table: `round,sim_time_s,H,acc` then per-worker
/// `phi_w`, `gamma_w`, `rate_w` columns.
pub fn render_metrics(rounds: &[RoundMetrics], workers: usize) -> String {
    let mut out = String::from("round,sim_time_s,H,acc");
    for w in 0..workers {
        let _ = write!(out, ",phi_{w}");
    }
    for w in 0..workers {
        let _ = write!(out, ",gamma_{w}");
    }
    for w in 0..workers {
        let _ = write!(out, ",rate_{w}");
    }
    out.push('\n');
    for m in rounds {
        let _ = write!(out, "{},{},{},{}", m.round, m.sim_time_s, m.h, m.acc);
        for v in m.phi.iter().chain(&m.gamma).chain(&m.rate) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn emit_metrics(rounds: &[RoundMetrics], workers: usize, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, render_metrics(rounds, workers))?;
    Ok(())
}

pub fn emit_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, summary.to_line() + "\n")?;
    Ok(())
}
