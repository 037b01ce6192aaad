//! Finite-horizon tabular MDPs and exact (noise-free) dynamic programming.
//!
//! Steps are 0-based in code: `h` ranges over `0..horizon`, and value tables
//! carry an extra terminal row at `h == horizon` that is identically zero.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that probability rows sum to one.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

/// How a realized reward is drawn for a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardKind {
    /// Reward is 1 with probability `r(s,a,h)`, else 0.
    Bernoulli,
    /// Reward is exactly `r(s,a,h)`.
    Deterministic,
    /// Reward is 1 exactly when the sampled next state is `success_state`.
    /// The mean reward table must then equal `P(success_state | s,a,h)`.
    TransitionCoupled { success_state: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape {
        table: &'static str,
        expected: usize,
        found: usize,
    },
    EmptyDimension,
    NegativeProbability {
        state: usize,
        action: usize,
        step: usize,
        next_state: usize,
        value: f64,
    },
    RowSum {
        state: usize,
        action: usize,
        step: usize,
        sum: f64,
    },
    NegativeInitial {
        state: usize,
        value: f64,
    },
    InitialSum {
        sum: f64,
    },
    RewardOutOfRange {
        state: usize,
        action: usize,
        step: usize,
        value: f64,
    },
    SuccessStateOutOfRange {
        success_state: usize,
    },
    CoupledRewardMismatch {
        state: usize,
        action: usize,
        step: usize,
        mean: f64,
        success_probability: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape {
                table,
                expected,
                found,
            } => write!(f, "{table}: expected {expected} entries, found {found}"),
            Violation::EmptyDimension => write!(f, "S, A and H must all be positive"),
            Violation::NegativeProbability {
                state,
                action,
                step,
                next_state,
                value,
            } => write!(
                f,
                "negative transition probability {value} at (s={state}, a={action}, h={step}, s'={next_state})"
            ),
            Violation::RowSum {
                state,
                action,
                step,
                sum,
            } => write!(
                f,
                "transition row (s={state}, a={action}, h={step}) sums to {sum}"
            ),
            Violation::NegativeInitial { state, value } => {
                write!(f, "negative initial probability {value} at s={state}")
            }
            Violation::InitialSum { sum } => write!(f, "initial distribution sums to {sum}"),
            Violation::RewardOutOfRange {
                state,
                action,
                step,
                value,
            } => write!(
                f,
                "mean reward {value} outside [0,1] at (s={state}, a={action}, h={step})"
            ),
            Violation::SuccessStateOutOfRange { success_state } => {
                write!(f, "success state {success_state} is not a valid state")
            }
            Violation::CoupledRewardMismatch {
                state,
                action,
                step,
                mean,
                success_probability,
            } => write!(
                f,
                "mean reward {mean} differs from success probability {success_probability} at (s={state}, a={action}, h={step})"
            ),
        }
    }
}

/// Every invariant violation found by [`TabularMdp::validate`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid MDP: {0}")]
    Invalid(ValidationReport),
    #[error("malformed MDP document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("malformed MDP document: {0}")]
    Shape(String),
    #[error("invalid policy: {0}")]
    Policy(String),
}

/// A finite-horizon MDP with step-dependent dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// Flattened `[s][a][h][s']`.
    transitions: Vec<f64>,
    /// Flattened `[s][a][h]`.
    mean_rewards: Vec<f64>,
    reward_kind: RewardKind,
    initial_dist: Vec<f64>,
}

impl TabularMdp {
    /// Builds an MDP and rejects it unless every invariant holds.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        mean_rewards: Vec<f64>,
        reward_kind: RewardKind,
        initial_dist: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let mdp = Self::from_parts_unchecked(
            num_states,
            num_actions,
            horizon,
            transitions,
            mean_rewards,
            reward_kind,
            initial_dist,
        );
        mdp.validate().map_err(MdpError::Invalid)?;
        Ok(mdp)
    }

    /// Builds an MDP without checking invariants. Call [`validate`](Self::validate)
    /// before using it for planning.
    pub fn from_parts_unchecked(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        mean_rewards: Vec<f64>,
        reward_kind: RewardKind,
        initial_dist: Vec<f64>,
    ) -> Self {
        Self {
            num_states,
            num_actions,
            horizon,
            transitions,
            mean_rewards,
            reward_kind,
            initial_dist,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn reward_kind(&self) -> RewardKind {
        self.reward_kind
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    fn sah(&self, s: usize, a: usize, h: usize) -> usize {
        (s * self.num_actions + a) * self.horizon + h
    }

    /// `P(· | s, a, h)`.
    pub fn transition_row(&self, s: usize, a: usize, h: usize) -> &[f64] {
        let start = self.sah(s, a, h) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn mean_reward(&self, s: usize, a: usize, h: usize) -> f64 {
        self.mean_rewards[self.sah(s, a, h)]
    }

    /// Rescales every transition row and the initial distribution to sum to one.
    /// Strict construction never does this implicitly.
    pub fn normalize_rows(&mut self) {
        for row in self.transitions.chunks_mut(self.num_states.max(1)) {
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        let sum: f64 = self.initial_dist.iter().sum();
        if sum > 0.0 {
            self.initial_dist.iter_mut().for_each(|p| *p /= sum);
        }
    }

    /// Checks every structural invariant and lists all violations.
    pub fn validate(&self) -> Result<(), ValidationReport> {
        let mut report = ValidationReport::default();
        let (s_n, a_n, h_n) = (self.num_states, self.num_actions, self.horizon);
        if s_n == 0 || a_n == 0 || h_n == 0 {
            report.violations.push(Violation::EmptyDimension);
            return Err(report);
        }
        let checks = [
            ("transitions", s_n * a_n * h_n * s_n, self.transitions.len()),
            ("rewards", s_n * a_n * h_n, self.mean_rewards.len()),
            ("p0", s_n, self.initial_dist.len()),
        ];
        for (table, expected, found) in checks {
            if expected != found {
                report.violations.push(Violation::Shape {
                    table,
                    expected,
                    found,
                });
            }
        }
        if !report.is_empty() {
            return Err(report);
        }

        let success = match self.reward_kind {
            RewardKind::TransitionCoupled { success_state } if success_state >= s_n => {
                report
                    .violations
                    .push(Violation::SuccessStateOutOfRange { success_state });
                None
            }
            RewardKind::TransitionCoupled { success_state } => Some(success_state),
            _ => None,
        };

        for s in 0..s_n {
            for a in 0..a_n {
                for h in 0..h_n {
                    let row = self.transition_row(s, a, h);
                    for (next_state, &p) in row.iter().enumerate() {
                        if !(p >= 0.0) {
                            report.violations.push(Violation::NegativeProbability {
                                state: s,
                                action: a,
                                step: h,
                                next_state,
                                value: p,
                            });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if !((sum - 1.0).abs() <= DISTRIBUTION_TOLERANCE) {
                        report.violations.push(Violation::RowSum {
                            state: s,
                            action: a,
                            step: h,
                            sum,
                        });
                    }
                    let r = self.mean_reward(s, a, h);
                    if !(0.0..=1.0).contains(&r) {
                        report.violations.push(Violation::RewardOutOfRange {
                            state: s,
                            action: a,
                            step: h,
                            value: r,
                        });
                    }
                    if let Some(success) = success {
                        if !((row[success] - r).abs() <= DISTRIBUTION_TOLERANCE) {
                            report.violations.push(Violation::CoupledRewardMismatch {
                                state: s,
                                action: a,
                                step: h,
                                mean: r,
                                success_probability: row[success],
                            });
                        }
                    }
                }
            }
        }
        for (state, &p) in self.initial_dist.iter().enumerate() {
            if !(p >= 0.0) {
                report
                    .violations
                    .push(Violation::NegativeInitial { state, value: p });
            }
        }
        let sum: f64 = self.initial_dist.iter().sum();
        if !((sum - 1.0).abs() <= DISTRIBUTION_TOLERANCE) {
            report.violations.push(Violation::InitialSum { sum });
        }

        if report.is_empty() {
            Ok(())
        } else {
            Err(report)
        }
    }

    /// Bellman backup `r(s,a,h) + Σ_{s'} P(s'|s,a,h) · next[s']`.
    fn backup(&self, s: usize, a: usize, h: usize, next: &[f64]) -> f64 {
        let row = self.transition_row(s, a, h);
        let future: f64 = row.iter().zip(next).map(|(p, v)| p * v).sum();
        self.mean_reward(s, a, h) + future
    }

    /// Backward induction for `V*`, `Q*` and `ρ* = p₀ᵀ V*₀`.
    pub fn optimal_values(&self) -> OptimalValues {
        let (s_n, a_n, h_n) = (self.num_states, self.num_actions, self.horizon);
        let mut v = vec![0.0; (h_n + 1) * s_n];
        let mut q = vec![0.0; h_n * s_n * a_n];
        for h in (0..h_n).rev() {
            let (current, next) = v.split_at_mut((h + 1) * s_n);
            let next = &next[..s_n];
            let current = &mut current[h * s_n..];
            for s in 0..s_n {
                let mut best = f64::NEG_INFINITY;
                for a in 0..a_n {
                    let value = self.backup(s, a, h, next);
                    q[(h * s_n + s) * a_n + a] = value;
                    if value > best {
                        best = value;
                    }
                }
                current[s] = best;
            }
        }
        let rho = dot(&self.initial_dist, &v[..s_n]);
        OptimalValues {
            num_states: s_n,
            num_actions: a_n,
            horizon: h_n,
            v,
            q,
            rho,
        }
    }

    /// Exact evaluation of a deterministic policy.
    pub fn policy_value(&self, policy: &Policy) -> PolicyValues {
        let (s_n, h_n) = (self.num_states, self.horizon);
        let mut v = vec![0.0; (h_n + 1) * s_n];
        for h in (0..h_n).rev() {
            let (current, next) = v.split_at_mut((h + 1) * s_n);
            let next = &next[..s_n];
            for s in 0..s_n {
                current[h * s_n + s] = self.backup(s, policy.action(s, h), h, next);
            }
        }
        let rho = dot(&self.initial_dist, &v[..s_n]);
        PolicyValues {
            num_states: s_n,
            v,
            rho,
        }
    }

    /// Occupancy `w(s,a,h)` of every state-action pair under `policy`.
    pub fn visitation_probs(&self, policy: &Policy) -> Visitation {
        let (s_n, a_n, h_n) = (self.num_states, self.num_actions, self.horizon);
        let mut w = vec![0.0; h_n * s_n * a_n];
        let mut state_probs = self.initial_dist.clone();
        for h in 0..h_n {
            let mut next_probs = vec![0.0; s_n];
            for s in 0..s_n {
                let mass = state_probs[s];
                let a = policy.action(s, h);
                w[(h * s_n + s) * a_n + a] = mass;
                if mass == 0.0 {
                    continue;
                }
                for (next, p) in next_probs.iter_mut().zip(self.transition_row(s, a, h)) {
                    *next += mass * p;
                }
            }
            state_probs = next_probs;
        }
        Visitation {
            num_states: s_n,
            num_actions: a_n,
            horizon: h_n,
            w,
        }
    }

    /// Rolls out one episode of `policy`.
    pub fn sample_episode<R: Rng + ?Sized>(
        &self,
        policy: &Policy,
        episode: usize,
        rng: &mut R,
    ) -> Trajectory {
        let mut steps = Vec::with_capacity(self.horizon);
        let mut state = sample_index(&self.initial_dist, rng.random());
        for h in 0..self.horizon {
            let action = policy.action(state, h);
            let next_state = sample_index(self.transition_row(state, action, h), rng.random());
            let mean = self.mean_reward(state, action, h);
            let reward = match self.reward_kind {
                RewardKind::Bernoulli => {
                    if rng.random::<f64>() < mean {
                        1.0
                    } else {
                        0.0
                    }
                }
                RewardKind::Deterministic => mean,
                RewardKind::TransitionCoupled { success_state } => {
                    if next_state == success_state {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            steps.push(Step {
                state,
                action,
                reward,
                next_state,
            });
            state = next_state;
        }
        Trajectory { episode, steps }
    }

    /// Returns a copy with states renamed by `perm` (old index `s` becomes `perm[s]`).
    pub fn relabel_states(&self, perm: &[usize]) -> TabularMdp {
        let (s_n, a_n, h_n) = (self.num_states, self.num_actions, self.horizon);
        let mut transitions = vec![0.0; self.transitions.len()];
        let mut rewards = vec![0.0; self.mean_rewards.len()];
        let mut p0 = vec![0.0; s_n];
        for s in 0..s_n {
            p0[perm[s]] = self.initial_dist[s];
            for a in 0..a_n {
                for h in 0..h_n {
                    let dst = (perm[s] * a_n + a) * h_n + h;
                    rewards[dst] = self.mean_reward(s, a, h);
                    for (next, &p) in self.transition_row(s, a, h).iter().enumerate() {
                        transitions[dst * s_n + perm[next]] = p;
                    }
                }
            }
        }
        let reward_kind = match self.reward_kind {
            RewardKind::TransitionCoupled { success_state } => RewardKind::TransitionCoupled {
                success_state: perm[success_state],
            },
            other => other,
        };
        TabularMdp::from_parts_unchecked(s_n, a_n, h_n, transitions, rewards, reward_kind, p0)
    }

    /// Serializes to the nested-array JSON document read by [`from_json`](Self::from_json).
    pub fn to_json(&self) -> String {
        let doc = MdpDocument::from(self);
        serde_json::to_string_pretty(&doc).expect("MDP document is always serializable")
    }

    /// Parses and strictly validates a JSON MDP document.
    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        doc.into_mdp()
    }
}

/// On-disk layout: `transitions[s][a][h][s']`, `rewards[s][a][h]`.
#[derive(Debug, Serialize, Deserialize)]
struct MdpDocument {
    #[serde(rename = "S")]
    num_states: usize,
    #[serde(rename = "A")]
    num_actions: usize,
    #[serde(rename = "H")]
    horizon: usize,
    p0: Vec<f64>,
    transitions: Vec<Vec<Vec<Vec<f64>>>>,
    rewards: Vec<Vec<Vec<f64>>>,
    reward_kind: RewardKind,
}

impl From<&TabularMdp> for MdpDocument {
    fn from(mdp: &TabularMdp) -> Self {
        let (s_n, a_n, h_n) = (mdp.num_states, mdp.num_actions, mdp.horizon);
        let transitions = (0..s_n)
            .map(|s| {
                (0..a_n)
                    .map(|a| {
                        (0..h_n)
                            .map(|h| mdp.transition_row(s, a, h).to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let rewards = (0..s_n)
            .map(|s| {
                (0..a_n)
                    .map(|a| (0..h_n).map(|h| mdp.mean_reward(s, a, h)).collect())
                    .collect()
            })
            .collect();
        MdpDocument {
            num_states: s_n,
            num_actions: a_n,
            horizon: h_n,
            p0: mdp.initial_dist.clone(),
            transitions,
            rewards,
            reward_kind: mdp.reward_kind,
        }
    }
}

impl MdpDocument {
    fn into_mdp(self) -> Result<TabularMdp, MdpError> {
        let (s_n, a_n, h_n) = (self.num_states, self.num_actions, self.horizon);
        let shape_err = |what: &str| MdpError::Shape(format!("{what} does not match S={s_n}, A={a_n}, H={h_n}"));
        if self.transitions.len() != s_n || self.rewards.len() != s_n {
            return Err(shape_err("outer dimension"));
        }
        let mut transitions = Vec::with_capacity(s_n * a_n * h_n * s_n);
        let mut rewards = Vec::with_capacity(s_n * a_n * h_n);
        for (per_action, reward_rows) in self.transitions.iter().zip(&self.rewards) {
            if per_action.len() != a_n || reward_rows.len() != a_n {
                return Err(shape_err("action dimension"));
            }
            for (per_step, reward_row) in per_action.iter().zip(reward_rows) {
                if per_step.len() != h_n || reward_row.len() != h_n {
                    return Err(shape_err("step dimension"));
                }
                for row in per_step {
                    if row.len() != s_n {
                        return Err(shape_err("next-state dimension"));
                    }
                    transitions.extend_from_slice(row);
                }
                rewards.extend_from_slice(reward_row);
            }
        }
        TabularMdp::new(
            s_n,
            a_n,
            h_n,
            transitions,
            rewards,
            self.reward_kind,
            self.p0,
        )
    }
}

/// Deterministic, step-dependent policy `π(s, h)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    num_states: usize,
    horizon: usize,
    /// Flattened `[h][s]`.
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(
        num_states: usize,
        horizon: usize,
        num_actions: usize,
        actions: Vec<usize>,
    ) -> Result<Self, MdpError> {
        if actions.len() != num_states * horizon {
            return Err(MdpError::Policy(format!(
                "expected {} entries, found {}",
                num_states * horizon,
                actions.len()
            )));
        }
        if let Some(bad) = actions.iter().position(|&a| a >= num_actions) {
            return Err(MdpError::Policy(format!(
                "action {} at (s={}, h={}) exceeds A={num_actions}",
                actions[bad],
                bad % num_states,
                bad / num_states
            )));
        }
        Ok(Self {
            num_states,
            horizon,
            actions,
        })
    }

    pub fn constant(num_states: usize, horizon: usize, action: usize) -> Self {
        Self {
            num_states,
            horizon,
            actions: vec![action; num_states * horizon],
        }
    }

    pub fn from_fn(num_states: usize, horizon: usize, mut f: impl FnMut(usize, usize) -> usize) -> Self {
        let mut actions = Vec::with_capacity(num_states * horizon);
        for h in 0..horizon {
            for s in 0..num_states {
                actions.push(f(s, h));
            }
        }
        Self {
            num_states,
            horizon,
            actions,
        }
    }

    #[inline]
    pub fn action(&self, s: usize, h: usize) -> usize {
        self.actions[h * self.num_states + s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// One episode: exactly `H` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalValues {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    v: Vec<f64>,
    q: Vec<f64>,
    pub rho: f64,
}

impl OptimalValues {
    /// `V*_h(s)`; `h == H` is the zero terminal row.
    pub fn v(&self, s: usize, h: usize) -> f64 {
        self.v[h * self.num_states + s]
    }

    pub fn q(&self, s: usize, a: usize, h: usize) -> f64 {
        self.q[(h * self.num_states + s) * self.num_actions + a]
    }

    /// Greedy policy on `Q*`, ties toward the smallest action index.
    pub fn greedy_policy(&self) -> Policy {
        let a_n = self.num_actions;
        Policy::from_fn(self.num_states, self.horizon, |s, h| {
            let start = (h * self.num_states + s) * a_n;
            argmax_first(&self.q[start..start + a_n])
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValues {
    num_states: usize,
    v: Vec<f64>,
    pub rho: f64,
}

impl PolicyValues {
    pub fn v(&self, s: usize, h: usize) -> f64 {
        self.v[h * self.num_states + s]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Visitation {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    w: Vec<f64>,
}

impl Visitation {
    pub fn w(&self, s: usize, a: usize, h: usize) -> f64 {
        self.w[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn step_mass(&self, h: usize) -> f64 {
        let len = self.num_states * self.num_actions;
        self.w[h * len..(h + 1) * len].iter().sum()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Index of the first maximum.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse-CDF draw from a discrete distribution given `u ∈ [0,1)`.
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}
