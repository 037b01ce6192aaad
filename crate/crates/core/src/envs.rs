//! Environment generators: the hard bandit-like MDP class, random MDPs and
//! small known-answer fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{MdpError, RewardKind, TabularMdp};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment parameters: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// `n` parallel bandit problems feeding two absorbing states.
///
/// State layout: `0..n` are the initial states, `n` is the winning
/// absorbing state and `n + 1` the losing one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardMdpSpec {
    pub n: usize,
    /// Arms are `0..=m`.
    pub m: usize,
    pub alpha_prime: f64,
    pub horizon: usize,
    /// Optimal arm `I_s` per initial state.
    pub optimal_arms: Vec<usize>,
}

impl HardMdpSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidSpec(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.alpha_prime > 0.0 && self.alpha_prime <= 0.5) {
            return bad(format!("alpha' = {} outside (0, 1/2]", self.alpha_prime));
        }
        if self.optimal_arms.len() != self.n {
            return bad(format!(
                "expected {} optimal arms, found {}",
                self.n,
                self.optimal_arms.len()
            ));
        }
        if let Some(&arm) = self.optimal_arms.iter().find(|&&a| a > self.m) {
            return bad(format!("optimal arm {arm} exceeds m = {}", self.m));
        }
        Ok(())
    }

    pub fn win_state(&self) -> usize {
        self.n
    }

    pub fn lose_state(&self) -> usize {
        self.n + 1
    }

    /// Probability of reaching the winning state from initial state `s` with `arm`.
    pub fn win_probability(&self, s: usize, arm: usize) -> f64 {
        let optimal = self.optimal_arms[s];
        if arm == 0 {
            0.5 + self.alpha_prime / 2.0
        } else if arm == optimal {
            0.5 + self.alpha_prime
        } else {
            0.5
        }
    }
}

/// Gap parameter `α' = 14α/H` that couples the hard class to a PAC accuracy `α`.
pub fn pac_alpha_prime(alpha: f64, horizon: usize) -> f64 {
    14.0 * alpha / horizon as f64
}

/// Builds the hard MDP. Each episode pays `H` if the first transition lands
/// in the winning state and `0` otherwise.
pub fn hard_mdp(spec: &HardMdpSpec) -> Result<TabularMdp, EnvError> {
    spec.validate()?;
    let s_n = spec.n + 2;
    let a_n = spec.m + 1;
    let h_n = spec.horizon;
    let (win, lose) = (spec.win_state(), spec.lose_state());
    let mut transitions = vec![0.0; s_n * a_n * h_n * s_n];
    let mut rewards = vec![0.0; s_n * a_n * h_n];
    for s in 0..s_n {
        for a in 0..a_n {
            for h in 0..h_n {
                let sah = (s * a_n + a) * h_n + h;
                let row = &mut transitions[sah * s_n..(sah + 1) * s_n];
                // Initial states are only occupied at h = 0; later rows are
                // unreachable and reuse the same bandit dynamics.
                let p_win = if s < spec.n {
                    spec.win_probability(s, a)
                } else if s == win {
                    1.0
                } else {
                    0.0
                };
                row[win] = p_win;
                row[lose] = 1.0 - p_win;
                rewards[sah] = p_win;
            }
        }
    }
    let mut p0 = vec![0.0; s_n];
    p0[..spec.n].fill(1.0 / spec.n as f64);
    Ok(TabularMdp::new(
        s_n,
        a_n,
        h_n,
        transitions,
        rewards,
        RewardKind::TransitionCoupled { success_state: win },
        p0,
    )?)
}

/// Random MDP with Dirichlet(`concentration`) transition rows and initial
/// distribution, uniform mean rewards and Bernoulli reward draws.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    concentration: f64,
    seed: u64,
) -> TabularMdp {
    assert!(num_states > 0 && num_actions > 0 && horizon > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(concentration, 1.0).expect("concentration must be positive");
    let dirichlet = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut row: Vec<f64> = (0..num_states).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = row.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            row.iter_mut().for_each(|p| *p /= sum);
        } else {
            // every draw underflowed; fall back to a point mass
            row.fill(0.0);
            row[rng.random_range(0..num_states)] = 1.0;
        }
        row
    };
    let mut transitions = Vec::with_capacity(num_states * num_actions * horizon * num_states);
    for _ in 0..num_states * num_actions * horizon {
        transitions.extend(dirichlet(&mut rng));
    }
    let rewards = (0..num_states * num_actions * horizon)
        .map(|_| rng.random::<f64>())
        .collect();
    let p0 = dirichlet(&mut rng);
    TabularMdp::new(
        num_states,
        num_actions,
        horizon,
        transitions,
        rewards,
        RewardKind::Bernoulli,
        p0,
    )
    .expect("generated rows are normalized")
}

/// Optimal value of [`chain_fixture`] for every `H >= 2`.
pub const CHAIN_OPTIMAL_VALUE: f64 = 1.0;

/// Three-state deterministic chain `0 -> 1 -> 2`, starting in state 0.
///
/// Action 1 advances; action 0 resets to state 0. Advancing out of state 1
/// pays 1 and lands in the absorbing, reward-free state 2.
pub fn chain_fixture(horizon: usize) -> Result<TabularMdp, EnvError> {
    if horizon < 2 {
        return Err(EnvError::InvalidSpec(format!(
            "chain fixture needs H >= 2, got {horizon}"
        )));
    }
    let (s_n, a_n, h_n) = (3, 2, horizon);
    let mut transitions = vec![0.0; s_n * a_n * h_n * s_n];
    let mut rewards = vec![0.0; s_n * a_n * h_n];
    for s in 0..s_n {
        for a in 0..a_n {
            let next = match (s, a) {
                (2, _) => 2,
                (_, 0) => 0,
                (s, _) => s + 1,
            };
            for h in 0..h_n {
                let sah = (s * a_n + a) * h_n + h;
                transitions[sah * s_n + next] = 1.0;
                if s == 1 && a == 1 {
                    rewards[sah] = 1.0;
                }
            }
        }
    }
    Ok(TabularMdp::new(
        s_n,
        a_n,
        h_n,
        transitions,
        rewards,
        RewardKind::Deterministic,
        vec![1.0, 0.0, 0.0],
    )?)
}
