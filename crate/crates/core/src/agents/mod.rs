//! Episodic agents behind a common plan/observe interface.

mod planning;

pub use planning::{
    confidence, empirical_backup, inverse_gap_bound_check, llnp, optimistic_planning,
    priv_q_planning, ubev_planning, Bonus, ConfidenceParams, PlanDiagnostics, QTables,
    PSI_LINEAR_COEFF, PSI_QUADRATIC_COEFF,
};

use rand::Rng;
use thiserror::Error;

use crate::counters::{CountTables, CounterError, CounterFamily, NoiseMode};
use crate::mdp::{Policy, Trajectory};
use crate::seeding::SeededRng;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Counter(#[from] CounterError),
    #[error("episode limit T = {0} reached")]
    EpisodeLimit(usize),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// The episodic interaction contract.
///
/// `plan_episode` for episode `t` may only depend on trajectories passed to
/// `observe_episode` for earlier episodes.
pub trait Agent: Send {
    fn name(&self) -> &'static str;

    fn plan_episode(&mut self) -> Result<Policy, AgentError>;

    fn observe_episode(&mut self, trajectory: &Trajectory) -> Result<(), AgentError>;

    /// Last planned policy.
    fn final_policy(&self) -> Option<&Policy>;

    /// Tables behind the most recent plan, for planners that have them.
    fn q_tables(&self) -> Option<&QTables> {
        None
    }

    fn diagnostics(&self) -> Option<PlanDiagnostics> {
        None
    }
}

/// Parameters of the private optimistic agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PucbConfig {
    /// Total JDP budget; `f64::INFINITY` runs the counters noise-free.
    pub epsilon: f64,
    pub beta: f64,
    /// Maximum number of episodes `T`.
    pub episodes: usize,
}

impl PucbConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        NoiseMode::from_epsilon(self.epsilon)
            .map_err(|e| AgentError::Config(e.to_string()))?;
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(AgentError::Config(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if self.episodes == 0 {
            return Err(AgentError::Config("T must be at least 1".into()));
        }
        Ok(())
    }

    pub fn noise_mode(&self) -> NoiseMode {
        NoiseMode::from_epsilon(self.epsilon).unwrap_or(NoiseMode::NoiseFree)
    }
}

/// Tracks whether the next call must be a plan or an observation.
#[derive(Debug, Clone)]
struct Lifecycle {
    limit: Option<usize>,
    episodes: usize,
    awaiting_observation: bool,
}

impl Lifecycle {
    fn new(limit: Option<usize>) -> Self {
        Self {
            limit,
            episodes: 0,
            awaiting_observation: false,
        }
    }

    fn begin_plan(&mut self) -> Result<(), AgentError> {
        if self.awaiting_observation {
            return Err(AgentError::Protocol(
                "plan_episode called twice without observe_episode".into(),
            ));
        }
        if let Some(limit) = self.limit {
            if self.episodes >= limit {
                return Err(AgentError::EpisodeLimit(limit));
            }
        }
        Ok(())
    }

    fn planned(&mut self) {
        self.awaiting_observation = true;
    }

    fn observe(&mut self) -> Result<(), AgentError> {
        if !self.awaiting_observation {
            return Err(AgentError::Protocol(
                "observe_episode called without a planned episode".into(),
            ));
        }
        self.awaiting_observation = false;
        self.episodes += 1;
        Ok(())
    }
}

/// Private optimistic agent: plans on counter releases every episode.
#[derive(Debug, Clone)]
pub struct PucbAgent {
    config: PucbConfig,
    family: CounterFamily,
    noise: SeededRng,
    lifecycle: Lifecycle,
    last_plan: Option<(Policy, QTables)>,
    last_snapshot: Option<CountTables>,
}

impl PucbAgent {
    pub fn new(
        config: PucbConfig,
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        noise: SeededRng,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let family = CounterFamily::new(
            num_states,
            num_actions,
            horizon,
            config.epsilon,
            config.beta,
            config.episodes,
        )?;
        Ok(Self {
            config,
            family,
            noise,
            lifecycle: Lifecycle::new(Some(config.episodes)),
            last_plan: None,
            last_snapshot: None,
        })
    }

    pub fn config(&self) -> &PucbConfig {
        &self.config
    }

    pub fn counters(&self) -> &CounterFamily {
        &self.family
    }

    /// `E_ε` used by the planner.
    pub fn error_bound(&self) -> f64 {
        self.family.error_bound()
    }
}

impl Agent for PucbAgent {
    fn name(&self) -> &'static str {
        "pucb"
    }

    fn plan_episode(&mut self) -> Result<Policy, AgentError> {
        self.lifecycle.begin_plan()?;
        let snapshot = self.family.snapshot();
        let tables = priv_q_planning(&snapshot, self.family.error_bound(), self.config.beta);
        let policy = tables.greedy_policy();
        self.last_plan = Some((policy.clone(), tables));
        self.last_snapshot = Some(snapshot);
        self.lifecycle.planned();
        Ok(policy)
    }

    fn observe_episode(&mut self, trajectory: &Trajectory) -> Result<(), AgentError> {
        self.lifecycle.observe()?;
        self.family.feed_episode(trajectory, &mut self.noise)?;
        Ok(())
    }

    fn final_policy(&self) -> Option<&Policy> {
        self.last_plan.as_ref().map(|(p, _)| p)
    }

    fn q_tables(&self) -> Option<&QTables> {
        self.last_plan.as_ref().map(|(_, q)| q)
    }

    fn diagnostics(&self) -> Option<PlanDiagnostics> {
        let (_, tables) = self.last_plan.as_ref()?;
        Some(tables.diagnostics(self.last_snapshot.as_ref()?))
    }
}

/// Non-private optimistic baseline on exact counts.
#[derive(Debug, Clone)]
pub struct UbevAgent {
    beta: f64,
    counts: CountTables,
    lifecycle: Lifecycle,
    last_plan: Option<(Policy, QTables)>,
}

impl UbevAgent {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        beta: f64,
        episodes: Option<usize>,
    ) -> Result<Self, AgentError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(AgentError::Config(format!("beta must lie in (0, 1), got {beta}")));
        }
        Ok(Self {
            beta,
            counts: CountTables::zeros(num_states, num_actions, horizon),
            lifecycle: Lifecycle::new(episodes),
            last_plan: None,
        })
    }

    pub fn counts(&self) -> &CountTables {
        &self.counts
    }
}

impl Agent for UbevAgent {
    fn name(&self) -> &'static str {
        "ubev"
    }

    fn plan_episode(&mut self) -> Result<Policy, AgentError> {
        self.lifecycle.begin_plan()?;
        let tables = ubev_planning(&self.counts, self.beta);
        let policy = tables.greedy_policy();
        self.last_plan = Some((policy.clone(), tables));
        self.lifecycle.planned();
        Ok(policy)
    }

    fn observe_episode(&mut self, trajectory: &Trajectory) -> Result<(), AgentError> {
        self.lifecycle.observe()?;
        self.counts.add_episode(trajectory)?;
        Ok(())
    }

    fn final_policy(&self) -> Option<&Policy> {
        self.last_plan.as_ref().map(|(p, _)| p)
    }

    fn q_tables(&self) -> Option<&QTables> {
        self.last_plan.as_ref().map(|(_, q)| q)
    }

    fn diagnostics(&self) -> Option<PlanDiagnostics> {
        let (_, tables) = self.last_plan.as_ref()?;
        Some(tables.diagnostics(&self.counts))
    }
}

/// Plays a fresh uniformly random deterministic policy every episode.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    rng: SeededRng,
    lifecycle: Lifecycle,
    last: Option<Policy>,
}

impl RandomAgent {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize, rng: SeededRng) -> Self {
        Self {
            num_states,
            num_actions,
            horizon,
            rng,
            lifecycle: Lifecycle::new(None),
            last: None,
        }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &'static str {
        "random"
    }

    fn plan_episode(&mut self) -> Result<Policy, AgentError> {
        self.lifecycle.begin_plan()?;
        let a_n = self.num_actions;
        let rng = &mut self.rng;
        let policy = Policy::from_fn(self.num_states, self.horizon, |_, _| rng.random_range(0..a_n));
        self.last = Some(policy.clone());
        self.lifecycle.planned();
        Ok(policy)
    }

    fn observe_episode(&mut self, _trajectory: &Trajectory) -> Result<(), AgentError> {
        self.lifecycle.observe()
    }

    fn final_policy(&self) -> Option<&Policy> {
        self.last.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain_fixture, hard_mdp, random_mdp, HardMdpSpec};
    use crate::mdp::TabularMdp;
    use crate::seeding::{derive_rng, StreamPurpose};

    fn run<A: Agent>(agent: &mut A, mdp: &TabularMdp, episodes: usize, seed: u64) -> Vec<Policy> {
        let mut env = derive_rng(seed, 0, StreamPurpose::Environment);
        (0..episodes)
            .map(|t| {
                let pi = agent.plan_episode().unwrap();
                let traj = mdp.sample_episode(&pi, t, &mut env);
                agent.observe_episode(&traj).unwrap();
                pi
            })
            .collect()
    }

    fn pucb(epsilon: f64, mdp: &TabularMdp, episodes: usize, seed: u64) -> PucbAgent {
        PucbAgent::new(
            PucbConfig {
                epsilon,
                beta: 0.1,
                episodes,
            },
            mdp.num_states(),
            mdp.num_actions(),
            mdp.horizon(),
            derive_rng(seed, 0, StreamPurpose::CounterNoise),
        )
        .unwrap()
    }

    #[test]
    fn single_episode_plan_is_action_zero() {
        let mdp = chain_fixture(3).unwrap();
        let mut agent = pucb(1.0, &mdp, 1, 0);
        let pi = agent.plan_episode().unwrap();
        assert!(pi.actions().iter().all(|&a| a == 0));
        assert!(agent.q_tables().unwrap().q_plus.iter().all(|&q| q == 3.0));
        let traj = mdp.sample_episode(&pi, 0, &mut derive_rng(0, 0, StreamPurpose::Environment));
        agent.observe_episode(&traj).unwrap();
        assert!(matches!(agent.plan_episode(), Err(AgentError::EpisodeLimit(1))));
        assert_eq!(agent.final_policy(), Some(&pi));
    }

    #[test]
    fn lifecycle_is_enforced() {
        let mdp = chain_fixture(2).unwrap();
        let mut agent = UbevAgent::new(3, 2, 2, 0.1, None).unwrap();
        let traj = mdp.sample_episode(&Policy::constant(3, 2, 0), 0, &mut derive_rng(0, 0, StreamPurpose::Environment));
        assert!(matches!(agent.observe_episode(&traj), Err(AgentError::Protocol(_))));
        agent.plan_episode().unwrap();
        assert!(matches!(agent.plan_episode(), Err(AgentError::Protocol(_))));
    }

    #[test]
    fn config_validation() {
        let base = PucbConfig {
            epsilon: 1.0,
            beta: 0.1,
            episodes: 10,
        };
        assert!(base.validate().is_ok());
        assert!(PucbConfig { epsilon: 0.0, ..base }.validate().is_err());
        assert!(PucbConfig { epsilon: f64::NAN, ..base }.validate().is_err());
        assert!(PucbConfig { epsilon: f64::INFINITY, ..base }.validate().is_ok());
        assert!(PucbConfig { beta: 1.0, ..base }.validate().is_err());
        assert!(PucbConfig { episodes: 0, ..base }.validate().is_err());
    }

    #[test]
    fn noise_free_pucb_matches_ubev() {
        let mdp = random_mdp(3, 2, 3, 0.5, 4);
        let episodes = 150;
        let mut private = pucb(f64::INFINITY, &mdp, episodes, 9);
        let mut reference = UbevAgent::new(3, 2, 3, 0.1, None).unwrap();
        let mut env_a = derive_rng(1, 0, StreamPurpose::Environment);
        let mut env_b = derive_rng(1, 0, StreamPurpose::Environment);
        for t in 0..episodes {
            let pa = private.plan_episode().unwrap();
            let pb = reference.plan_episode().unwrap();
            assert_eq!(pa, pb, "episode {t}");
            assert!(private.q_tables().unwrap().bits_eq(reference.q_tables().unwrap()));
            private.observe_episode(&mdp.sample_episode(&pa, t, &mut env_a)).unwrap();
            reference.observe_episode(&mdp.sample_episode(&pb, t, &mut env_b)).unwrap();
        }
    }

    #[test]
    fn laplace_runs_are_reproducible() {
        let mdp = random_mdp(3, 3, 2, 1.0, 6);
        let a = run(&mut pucb(1.0, &mdp, 100, 5), &mdp, 100, 5);
        let b = run(&mut pucb(1.0, &mdp, 100, 5), &mdp, 100, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn random_agent_is_reproducible_and_trivial_with_one_action() {
        let mdp = random_mdp(3, 1, 2, 1.0, 6);
        let mut r = RandomAgent::new(3, 1, 2, derive_rng(0, 0, StreamPurpose::Agent));
        let mut u = UbevAgent::new(3, 1, 2, 0.1, None).unwrap();
        assert_eq!(run(&mut r, &mdp, 20, 1), run(&mut u, &mdp, 20, 1));
        let mdp = random_mdp(3, 4, 2, 1.0, 6);
        let mut a = RandomAgent::new(3, 4, 2, derive_rng(3, 0, StreamPurpose::Agent));
        let mut b = RandomAgent::new(3, 4, 2, derive_rng(3, 0, StreamPurpose::Agent));
        assert_eq!(run(&mut a, &mdp, 20, 1), run(&mut b, &mdp, 20, 1));
    }

    #[test]
    fn ubev_converges_on_small_mdp() {
        let mdp = random_mdp(2, 2, 2, 1.0, 31);
        let opt = mdp.optimal_values().rho;
        let mut agent = UbevAgent::new(2, 2, 2, 0.1, None).unwrap();
        let policies = run(&mut agent, &mdp, 4000, 2);
        let tail: f64 = policies[policies.len() - 100..]
            .iter()
            .map(|p| opt - mdp.policy_value(p).rho)
            .sum::<f64>()
            / 100.0;
        assert!(tail < 0.05 * 2.0, "tail gap {tail}");
    }

    #[test]
    fn random_agent_regret_is_linear_at_analytic_rate() {
        let spec = HardMdpSpec {
            n: 2,
            m: 2,
            alpha_prime: 0.3,
            horizon: 3,
            optimal_arms: vec![1, 0],
        };
        let mdp = hard_mdp(&spec).unwrap();
        let opt = mdp.optimal_values();
        // mean per-state gap under a uniform arm: average over arms of H·(best − p(arm))
        let analytic: f64 = (0..spec.n)
            .map(|s| {
                let best = (0..=spec.m).map(|a| spec.win_probability(s, a)).fold(0.0, f64::max);
                (0..=spec.m)
                    .map(|a| 3.0 * (best - spec.win_probability(s, a)))
                    .sum::<f64>()
                    / (spec.m + 1) as f64
            })
            .sum::<f64>()
            / spec.n as f64;
        let mut agent = RandomAgent::new(mdp.num_states(), 3, 3, derive_rng(4, 0, StreamPurpose::Agent));
        let t = 5000;
        let regret: f64 = run(&mut agent, &mdp, t, 4)
            .iter()
            .map(|p| opt.rho - mdp.policy_value(p).rho)
            .sum();
        let rate = regret / t as f64;
        assert!((rate - analytic).abs() < 0.1 * analytic, "{rate} vs {analytic}");
    }

    #[test]
    fn diagnostics_reflect_clamping() {
        let mdp = chain_fixture(3).unwrap();
        let mut agent = pucb(1.0, &mdp, 10, 0);
        agent.plan_episode().unwrap();
        let d = agent.diagnostics().unwrap();
        assert_eq!(d.clamped_entries, 3 * 2 * 3);
        assert_eq!(d.below_threshold, 3 * 2 * 3);
        assert_eq!(d.min_visit_release, 0.0);
        assert_eq!(d.q_plus_max, 3.0);
    }
}
