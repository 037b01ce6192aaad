//! Monte-Carlo sanity check of a counter's privacy loss on neighbouring streams.

use rand::Rng;
use serde::{Serialize, Serializer};

use super::{CounterError, NoiseMode, PrivateCounter};

/// Minimum number of trials accepted by the probe.
pub const MIN_PROBE_TRIALS: usize = 10_000;

/// How final releases are bucketed into events.
#[derive(Debug, Clone, PartialEq)]
pub enum EventGrid {
    /// `k` buckets at the empirical quantiles of the pooled releases.
    Quantiles(usize),
    /// Explicit interior edges; bucket `j` is `(edges[j-1], edges[j]]`.
    Edges(Vec<f64>),
}

impl Default for EventGrid {
    fn default() -> Self {
        EventGrid::Quantiles(10)
    }
}

fn finite_or_string<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    #[serde(serialize_with = "finite_or_string")]
    pub epsilon_counter: f64,
    pub trials: usize,
    /// Interior bucket edges.
    pub edges: Vec<f64>,
    pub counts_a: Vec<u64>,
    pub counts_b: Vec<u64>,
    /// Add-one smoothed event probabilities.
    pub p_a: Vec<f64>,
    pub p_b: Vec<f64>,
    /// `max_events |ln(p̂_a / p̂_b)|`, or `+∞` when the two streams put
    /// their mass on disjoint events.
    #[serde(serialize_with = "finite_or_string")]
    pub estimate: f64,
    /// Sampling allowance `3·sqrt(1 / min_count)` over the compared events.
    pub slack: f64,
    pub worst_event: Option<usize>,
}

impl ProbeReport {
    /// `estimate ≤ ε + slack`, with an infinite estimate never within budget.
    pub fn within_budget(&self) -> bool {
        self.estimate.is_finite() && self.estimate <= self.epsilon_counter + self.slack
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("probe report is serializable")
    }
}

/// Runs a fresh counter on `stream_a` and on `stream_b` `trials` times each
/// and compares the distributions of the final release over `grid`.
///
/// The streams may differ in at most one position.
pub fn empirical_privacy_probe<R: Rng + ?Sized>(
    stream_a: &[f64],
    stream_b: &[f64],
    mode: NoiseMode,
    trials: usize,
    grid: &EventGrid,
    rng: &mut R,
) -> Result<ProbeReport, CounterError> {
    if stream_a.len() != stream_b.len() || stream_a.is_empty() {
        return Err(CounterError::InvalidParameter(
            "streams must be non-empty and of equal length".into(),
        ));
    }
    let differing = stream_a.iter().zip(stream_b).filter(|(a, b)| a != b).count();
    if differing > 1 {
        return Err(CounterError::InvalidParameter(format!(
            "streams differ in {differing} positions; neighbours differ in at most one"
        )));
    }
    if trials < MIN_PROBE_TRIALS {
        return Err(CounterError::InvalidParameter(format!(
            "need at least {MIN_PROBE_TRIALS} trials, got {trials}"
        )));
    }
    let capacity = stream_a.len();
    let final_release = |stream: &[f64], rng: &mut R| -> Result<f64, CounterError> {
        let mut counter = PrivateCounter::new(capacity, mode)?;
        let mut last = 0.0;
        for &v in stream {
            last = counter.feed(v, rng)?;
        }
        Ok(last)
    };
    let mut releases_a = Vec::with_capacity(trials);
    let mut releases_b = Vec::with_capacity(trials);
    for _ in 0..trials {
        releases_a.push(final_release(stream_a, rng)?);
        releases_b.push(final_release(stream_b, rng)?);
    }

    let edges = match grid {
        EventGrid::Edges(edges) => edges.clone(),
        EventGrid::Quantiles(k) => {
            let k = (*k).max(2);
            let mut pooled: Vec<f64> = releases_a.iter().chain(&releases_b).copied().collect();
            pooled.sort_by(f64::total_cmp);
            let mut edges: Vec<f64> = (1..k).map(|i| pooled[i * pooled.len() / k]).collect();
            edges.dedup();
            edges
        }
    };
    let buckets = edges.len() + 1;
    let histogram = |releases: &[f64]| {
        let mut counts = vec![0u64; buckets];
        for &x in releases {
            counts[edges.partition_point(|&e| e < x)] += 1;
        }
        counts
    };
    let counts_a = histogram(&releases_a);
    let counts_b = histogram(&releases_b);
    let denom = (trials + buckets) as f64;
    let smooth = |c: &[u64]| c.iter().map(|&n| (n as f64 + 1.0) / denom).collect::<Vec<_>>();
    let p_a = smooth(&counts_a);
    let p_b = smooth(&counts_b);

    let mut estimate = 0.0f64;
    let mut worst_event = None;
    let mut min_count = u64::MAX;
    for j in 0..buckets {
        let (ca, cb) = (counts_a[j], counts_b[j]);
        if ca == 0 && cb == 0 {
            continue;
        }
        // Half the trials on an event the other stream never reaches: the
        // supports differ, so no finite ε explains the data.
        if (ca == 0 && cb as usize * 2 >= trials) || (cb == 0 && ca as usize * 2 >= trials) {
            estimate = f64::INFINITY;
            worst_event = Some(j);
            min_count = min_count.min(ca.min(cb) + 1);
            break;
        }
        min_count = min_count.min(ca.min(cb) + 1);
        let loss = (p_a[j] / p_b[j]).ln().abs();
        if loss > estimate || worst_event.is_none() {
            estimate = estimate.max(loss);
            worst_event = Some(j);
        }
    }
    let slack = if min_count == u64::MAX {
        0.0
    } else {
        3.0 * (1.0 / min_count as f64).sqrt()
    };
    Ok(ProbeReport {
        epsilon_counter: mode.epsilon(),
        trials,
        edges,
        counts_a,
        counts_b,
        p_a,
        p_b,
        estimate,
        slack,
        worst_event,
    })
}
