//! Regret and PAC statistics over record streams, and the gap-decomposition audit.

use serde::Serialize;

use super::EpisodeRecord;
use crate::agents::QTables;
use crate::mdp::{Policy, TabularMdp};

/// Number of episodes whose gap exceeds `alpha`.
pub fn pac_count(records: &[EpisodeRecord], alpha: f64) -> usize {
    records.iter().filter(|r| r.gap > alpha).count()
}

/// `(t, Σ_{i≤t} Δ_i)`, recomputed from the gaps.
pub fn regret_curve(records: &[EpisodeRecord]) -> Vec<(usize, f64)> {
    let mut total = 0.0;
    records
        .iter()
        .map(|r| {
            total += r.gap;
            (r.episode, total)
        })
        .collect()
}

pub fn final_regret(records: &[EpisodeRecord]) -> f64 {
    records.iter().map(|r| r.gap).sum()
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandPoint {
    pub episode: usize,
    pub mean: f64,
    pub std: f64,
}

/// Per-episode mean and standard deviation of cumulative regret across
/// replicas, truncated to the shortest stream.
pub fn regret_band(replicas: &[Vec<EpisodeRecord>]) -> Vec<BandPoint> {
    let curves: Vec<Vec<(usize, f64)>> = replicas.iter().map(|r| regret_curve(r)).collect();
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let values: Vec<f64> = curves.iter().map(|c| c[i].1).collect();
            let (mean, std) = mean_std(&values);
            BandPoint {
                episode: curves[0][i].0,
                mean,
                std,
            }
        })
        .collect()
}

/// One row of the ε sweep summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub mean_final_regret: f64,
    pub std_final_regret: f64,
    pub mean_pac_count: f64,
    pub replicas: usize,
}

pub fn summarize(epsilon: f64, replicas: &[Vec<EpisodeRecord>], alpha: f64) -> SweepRow {
    let finals: Vec<f64> = replicas.iter().map(|r| final_regret(r)).collect();
    let (mean_final_regret, std_final_regret) = mean_std(&finals);
    let pac: Vec<f64> = replicas.iter().map(|r| pac_count(r, alpha) as f64).collect();
    SweepRow {
        epsilon,
        mean_final_regret,
        std_final_regret,
        mean_pac_count: mean_std(&pac).0,
        replicas: replicas.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditEntry {
    pub episode: usize,
    pub gap: f64,
    /// `Σ_{s,a,h} w(s,a,h)·conf(s,a,h)` under the executed policy.
    pub bound: f64,
    pub violated: bool,
}

/// Checks `Δ_t ≤ Σ w_t·conf_t + tolerance` for one episode.
pub fn gap_decomposition_audit(
    mdp: &TabularMdp,
    policy: &Policy,
    tables: &QTables,
    record: &EpisodeRecord,
    tolerance: f64,
) -> AuditEntry {
    let w = mdp.visitation_probs(policy);
    let mut bound = 0.0;
    for h in 0..mdp.horizon() {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let weight = w.w(s, a, h);
                if weight > 0.0 {
                    bound += weight * tables.conf(s, a, h);
                }
            }
        }
    }
    AuditEntry {
        episode: record.episode,
        gap: record.gap,
        bound,
        violated: record.gap > bound + tolerance,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub episodes: usize,
    pub violations: usize,
    pub violating_episodes: Vec<usize>,
    /// Largest `Δ_t − bound_t` seen.
    pub max_excess: f64,
}

impl AuditReport {
    pub fn push(&mut self, entry: &AuditEntry) {
        let excess = entry.gap - entry.bound;
        if self.episodes == 0 || excess > self.max_excess {
            self.max_excess = excess;
        }
        self.episodes += 1;
        if entry.violated {
            self.violations += 1;
            self.violating_episodes.push(entry.episode);
        }
    }
}
