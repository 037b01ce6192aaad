//! Binary-mechanism counters under continual observation.
//!
//! A [`PrivateCounter`] consumes a stream of values in `[0, 1]` and, after
//! each symbol, releases a noisy prefix sum. Partial sums are kept on the
//! levels of a binary tree; the release at time `t` combines one noisy
//! partial sum per set bit of `t`, each perturbed with Laplace noise of scale
//! `depth / ε`.

mod family;
mod probe;

pub use family::{
    counter_count, family_error_bound, CountTables, CounterFamily, FamilyDelta, FamilyDeltas,
    DEFAULT_MAX_COUNTERS,
};
pub use probe::{empirical_privacy_probe, EventGrid, ProbeReport};

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag written into serialized counter state.
pub const COUNTER_STATE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CounterError {
    #[error("counter capacity {capacity} exceeded")]
    CapacityExceeded { capacity: usize },
    #[error("stream value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("invalid counter parameter: {0}")]
    InvalidParameter(String),
    #[error("refusing to allocate {requested} counters (cap {cap})")]
    TooManyCounters { requested: usize, cap: usize },
    #[error("trajectory does not fit the counter family: {0}")]
    Trajectory(String),
    #[error("unsupported counter state version {0}")]
    StateVersion(u32),
    #[error("malformed counter state: {0}")]
    State(#[from] serde_json::Error),
}

/// Whether releases are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseMode {
    Laplace { epsilon: f64 },
    /// Exact prefix sums; corresponds to `ε = ∞`.
    NoiseFree,
}

impl NoiseMode {
    /// `ε = +∞` selects [`NoiseMode::NoiseFree`]; any other value must be a
    /// positive finite number.
    pub fn from_epsilon(epsilon: f64) -> Result<Self, CounterError> {
        if epsilon == f64::INFINITY {
            Ok(NoiseMode::NoiseFree)
        } else if epsilon.is_finite() && epsilon > 0.0 {
            Ok(NoiseMode::Laplace { epsilon })
        } else {
            Err(CounterError::InvalidParameter(format!(
                "epsilon must be positive (or infinite for noise-free), got {epsilon}"
            )))
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            NoiseMode::Laplace { epsilon } => *epsilon,
            NoiseMode::NoiseFree => f64::INFINITY,
        }
    }

    pub fn is_noise_free(&self) -> bool {
        matches!(self, NoiseMode::NoiseFree)
    }
}

/// Number of tree levels charged against the budget: `⌈log₂ max(T, 2)⌉`.
pub fn tree_depth(capacity: usize) -> u32 {
    let t = capacity.max(2);
    usize::BITS - (t - 1).leading_zeros()
}

/// One draw from `Laplace(0, scale)` by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Uniform prefix-error bound `(4/ε)·ln(1/β)·log₂(T)^{5/2}` of one counter.
pub fn error_bound_counter(capacity: usize, epsilon: f64, beta: f64) -> Result<f64, CounterError> {
    if capacity == 0 {
        return Err(CounterError::InvalidParameter("T must be at least 1".into()));
    }
    if !(epsilon > 0.0) {
        return Err(CounterError::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(CounterError::InvalidParameter(format!(
            "beta must lie in (0, 1), got {beta}"
        )));
    }
    let lg = (capacity as f64).log2();
    Ok(4.0 / epsilon * (1.0 / beta).ln() * lg.powf(2.5))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub clean: f64,
    pub noisy: f64,
}

/// Binary-mechanism counter with a fixed capacity `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateCounter {
    capacity: usize,
    mode: NoiseMode,
    levels: Vec<Level>,
    t: usize,
    last_release: f64,
}

impl PrivateCounter {
    pub fn new(capacity: usize, mode: NoiseMode) -> Result<Self, CounterError> {
        if capacity == 0 {
            return Err(CounterError::InvalidParameter("T must be at least 1".into()));
        }
        if let NoiseMode::Laplace { epsilon } = mode {
            NoiseMode::from_epsilon(epsilon)?;
        }
        let depth = tree_depth(capacity) as usize;
        Ok(Self {
            capacity,
            mode,
            levels: vec![Level::default(); depth + 1],
            t: 0,
            last_release: 0.0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn depth(&self) -> u32 {
        tree_depth(self.capacity)
    }

    /// `ε' = ε / depth`; infinite in noise-free mode.
    pub fn per_level_budget(&self) -> f64 {
        self.mode.epsilon() / self.depth() as f64
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Latest monotonized release (0 before the first symbol).
    pub fn release(&self) -> f64 {
        self.last_release
    }

    /// Noisy partial sums combined into the current release: one per set bit of `t`.
    pub fn levels_combined(&self) -> u32 {
        self.t.count_ones()
    }

    /// Consumes one symbol and returns the new release.
    pub fn feed<R: Rng + ?Sized>(&mut self, value: f64, rng: &mut R) -> Result<f64, CounterError> {
        if self.t >= self.capacity {
            return Err(CounterError::CapacityExceeded {
                capacity: self.capacity,
            });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(CounterError::ValueOutOfRange(value));
        }
        self.t += 1;
        let i = self.t.trailing_zeros() as usize;
        let merged: f64 = self.levels[..i].iter().map(|l| l.clean).sum::<f64>() + value;
        for level in &mut self.levels[..i] {
            *level = Level::default();
        }
        let noise = match self.mode {
            NoiseMode::Laplace { .. } => sample_laplace(1.0 / self.per_level_budget(), rng),
            NoiseMode::NoiseFree => 0.0,
        };
        self.levels[i] = Level {
            clean: merged,
            noisy: merged + noise,
        };
        let raw: f64 = self
            .levels
            .iter()
            .enumerate()
            .filter(|(j, _)| self.t >> j & 1 == 1)
            .map(|(_, l)| l.noisy)
            .sum();
        self.last_release = raw.max(self.last_release).max(0.0);
        Ok(self.last_release)
    }

    pub fn state(&self) -> CounterState {
        CounterState {
            version: COUNTER_STATE_VERSION,
            capacity: self.capacity,
            mode: self.mode,
            levels: self.levels.clone(),
            t: self.t,
            last_release: self.last_release,
        }
    }

    pub fn from_state(state: CounterState) -> Result<Self, CounterError> {
        if state.version != COUNTER_STATE_VERSION {
            return Err(CounterError::StateVersion(state.version));
        }
        let mut counter = Self::new(state.capacity, state.mode)?;
        if state.levels.len() != counter.levels.len() || state.t > state.capacity {
            return Err(CounterError::InvalidParameter(
                "counter state inconsistent with its capacity".into(),
            ));
        }
        counter.levels = state.levels;
        counter.t = state.t;
        counter.last_release = state.last_release;
        Ok(counter)
    }
}

/// Checkpoint of a [`PrivateCounter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterState {
    pub version: u32,
    pub capacity: usize,
    #[serde(flatten)]
    pub mode: NoiseMode,
    pub levels: Vec<Level>,
    pub t: usize,
    pub last_release: f64,
}

impl CounterState {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("counter state is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, CounterError> {
        Ok(serde_json::from_str(text)?)
    }
}
