use rand::Rng;

use super::{CounterError, NoiseMode, PrivateCounter};
use crate::mdp::Trajectory;

/// Allocation cap on the number of counters in one family.
pub const DEFAULT_MAX_COUNTERS: usize = 10_000_000;

/// `2·S·A·H + S²·A·H`: reward, visit and transition counters.
pub fn counter_count(num_states: usize, num_actions: usize, horizon: usize) -> Option<usize> {
    let sah = num_states.checked_mul(num_actions)?.checked_mul(horizon)?;
    sah.checked_mul(2)?.checked_add(sah.checked_mul(num_states)?)
}

/// Uniform error bound `E_ε = (3/ε)·H·ln(K/β')·ln(T)^{5/2}` over all `K`
/// counters of a family, with `β' = β/4`. Zero when `ε = ∞`.
pub fn family_error_bound(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    epsilon: f64,
    beta: f64,
    capacity: usize,
) -> f64 {
    if epsilon.is_infinite() {
        return 0.0;
    }
    let count = counter_count(num_states, num_actions, horizon).unwrap_or(usize::MAX) as f64;
    let beta_prime = beta / 4.0;
    3.0 / epsilon * horizon as f64 * (count / beta_prime).ln() * (capacity as f64).ln().powf(2.5)
}

/// Dense `(s, a, h)` statistics: visit counts, reward sums and transition
/// counts. Used both for private releases and exact tallies.
///
/// Layout is step-major: `[h][s][a]` and `[h][s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTables {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    pub visits: Vec<f64>,
    pub rewards: Vec<f64>,
    pub transitions: Vec<f64>,
}

impl CountTables {
    pub fn zeros(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        let sah = num_states * num_actions * horizon;
        Self {
            num_states,
            num_actions,
            horizon,
            visits: vec![0.0; sah],
            rewards: vec![0.0; sah],
            transitions: vec![0.0; sah * num_states],
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

    #[inline]
    pub fn index(&self, s: usize, a: usize, h: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    pub fn visit(&self, s: usize, a: usize, h: usize) -> f64 {
        self.visits[self.index(s, a, h)]
    }

    pub fn reward(&self, s: usize, a: usize, h: usize) -> f64 {
        self.rewards[self.index(s, a, h)]
    }

    pub fn transition_row(&self, s: usize, a: usize, h: usize) -> &[f64] {
        let start = self.index(s, a, h) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    /// Per-counter symbols one episode contributes: a 1 on each visited key
    /// (reward on the reward key), 0 everywhere else.
    pub fn episode_symbols(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        trajectory: &Trajectory,
    ) -> Result<Self, CounterError> {
        let mut symbols = Self::zeros(num_states, num_actions, horizon);
        symbols.add_episode(trajectory)?;
        Ok(symbols)
    }

    /// Adds one trajectory's visits, rewards and transitions.
    pub fn add_episode(&mut self, trajectory: &Trajectory) -> Result<(), CounterError> {
        if trajectory.steps.len() != self.horizon {
            return Err(CounterError::Trajectory(format!(
                "expected {} steps, found {}",
                self.horizon,
                trajectory.steps.len()
            )));
        }
        for step in &trajectory.steps {
            if step.state >= self.num_states
                || step.next_state >= self.num_states
                || step.action >= self.num_actions
            {
                return Err(CounterError::Trajectory(format!(
                    "step {step:?} outside S={}, A={}",
                    self.num_states, self.num_actions
                )));
            }
            if !(0.0..=1.0).contains(&step.reward) {
                return Err(CounterError::ValueOutOfRange(step.reward));
            }
        }
        for (h, step) in trajectory.steps.iter().enumerate() {
            let i = self.index(step.state, step.action, h);
            self.visits[i] += 1.0;
            self.rewards[i] += step.reward;
            self.transitions[i * self.num_states + step.next_state] += 1.0;
        }
        Ok(())
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &Vec<f64>| v.iter().map(|x| x * factor).collect();
        Self {
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            visits: scale(&self.visits),
            rewards: scale(&self.rewards),
            transitions: scale(&self.transitions),
        }
    }
}

/// How two per-episode symbol sets differ within one counter family.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FamilyDelta {
    /// Total ℓ1 change across all keys.
    pub l1: f64,
    /// Mass added on keys whose symbol went up.
    pub increase: f64,
    /// Mass removed from keys whose symbol went down.
    pub decrease: f64,
    /// Steps `h` whose symbol vector changed at all.
    pub steps_changed: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FamilyDeltas {
    pub visits: FamilyDelta,
    pub rewards: FamilyDelta,
    pub transitions: FamilyDelta,
}

impl FamilyDeltas {
    pub fn between(a: &CountTables, b: &CountTables) -> Self {
        let per_step_sa = a.num_states * a.num_actions;
        Self {
            visits: delta(&a.visits, &b.visits, per_step_sa),
            rewards: delta(&a.rewards, &b.rewards, per_step_sa),
            transitions: delta(&a.transitions, &b.transitions, per_step_sa * a.num_states),
        }
    }
}

fn delta(a: &[f64], b: &[f64], per_step: usize) -> FamilyDelta {
    let mut out = FamilyDelta::default();
    for (chunk_a, chunk_b) in a.chunks(per_step).zip(b.chunks(per_step)) {
        let mut changed = false;
        for (x, y) in chunk_a.iter().zip(chunk_b) {
            let d = y - x;
            if d != 0.0 {
                changed = true;
            }
            out.l1 += d.abs();
            if d > 0.0 {
                out.increase += d;
            } else {
                out.decrease -= d;
            }
        }
        out.steps_changed += changed as usize;
    }
    out
}

/// The full set of counters maintained by the private agent, each with
/// budget `ε/(3H)`.
#[derive(Debug, Clone)]
pub struct CounterFamily {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    capacity: usize,
    total_epsilon: f64,
    total_beta: f64,
    counter_mode: NoiseMode,
    rewards: Vec<PrivateCounter>,
    visits: Vec<PrivateCounter>,
    transitions: Vec<PrivateCounter>,
    error_bound: f64,
    per_counter_beta: f64,
    episodes: usize,
}

impl CounterFamily {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        epsilon: f64,
        beta: f64,
        capacity: usize,
    ) -> Result<Self, CounterError> {
        Self::with_max_counters(
            num_states,
            num_actions,
            horizon,
            epsilon,
            beta,
            capacity,
            DEFAULT_MAX_COUNTERS,
        )
    }

    pub fn with_max_counters(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        epsilon: f64,
        beta: f64,
        capacity: usize,
        max_counters: usize,
    ) -> Result<Self, CounterError> {
        if num_states == 0 || num_actions == 0 || horizon == 0 || capacity == 0 {
            return Err(CounterError::InvalidParameter(
                "S, A, H and T must all be positive".into(),
            ));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(CounterError::InvalidParameter(format!(
                "beta must lie in (0, 1), got {beta}"
            )));
        }
        let total_mode = NoiseMode::from_epsilon(epsilon)?;
        let count = counter_count(num_states, num_actions, horizon).unwrap_or(usize::MAX);
        if count > max_counters {
            return Err(CounterError::TooManyCounters {
                requested: count,
                cap: max_counters,
            });
        }
        let counter_mode = match total_mode {
            NoiseMode::Laplace { epsilon } => NoiseMode::Laplace {
                epsilon: epsilon / (3.0 * horizon as f64),
            },
            NoiseMode::NoiseFree => NoiseMode::NoiseFree,
        };
        let template = PrivateCounter::new(capacity, counter_mode)?;
        let sah = num_states * num_actions * horizon;
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            capacity,
            total_epsilon: epsilon,
            total_beta: beta,
            counter_mode,
            rewards: vec![template.clone(); sah],
            visits: vec![template.clone(); sah],
            transitions: vec![template; sah * num_states],
            error_bound: family_error_bound(
                num_states,
                num_actions,
                horizon,
                epsilon,
                beta,
                capacity,
            ),
            per_counter_beta: beta / 4.0 / count as f64,
            episodes: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len() + self.visits.len() + self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `E_ε` for this family.
    pub fn error_bound(&self) -> f64 {
        self.error_bound
    }

    pub fn per_counter_beta(&self) -> f64 {
        self.per_counter_beta
    }

    /// Budget of each individual counter, `ε/(3H)`.
    pub fn per_counter_epsilon(&self) -> f64 {
        self.counter_mode.epsilon()
    }

    pub fn total_epsilon(&self) -> f64 {
        self.total_epsilon
    }

    pub fn total_beta(&self) -> f64 {
        self.total_beta
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn counters(&self) -> impl Iterator<Item = &PrivateCounter> {
        self.rewards
            .iter()
            .chain(&self.visits)
            .chain(&self.transitions)
    }

    /// Feeds one episode: every counter consumes exactly one symbol.
    pub fn feed_episode<R: Rng + ?Sized>(
        &mut self,
        trajectory: &Trajectory,
        rng: &mut R,
    ) -> Result<(), CounterError> {
        if self.episodes >= self.capacity {
            return Err(CounterError::CapacityExceeded {
                capacity: self.capacity,
            });
        }
        let symbols = CountTables::episode_symbols(
            self.num_states,
            self.num_actions,
            self.horizon,
            trajectory,
        )?;
        let feeds = [
            (&mut self.rewards, &symbols.rewards),
            (&mut self.visits, &symbols.visits),
            (&mut self.transitions, &symbols.transitions),
        ];
        for (counters, values) in feeds {
            for (counter, &value) in counters.iter_mut().zip(values) {
                counter.feed(value, rng)?;
            }
        }
        self.episodes += 1;
        Ok(())
    }

    /// Latest releases of every counter as dense tables.
    pub fn snapshot(&self) -> CountTables {
        let release = |cs: &[PrivateCounter]| cs.iter().map(PrivateCounter::release).collect();
        CountTables {
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            visits: release(&self.visits),
            rewards: release(&self.rewards),
            transitions: release(&self.transitions),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(steps: &[(usize, usize, f64, usize)]) -> Trajectory {
        Trajectory {
            episode: 0,
            steps: steps
                .iter()
                .map(|&(state, action, reward, next_state)| Step {
                    state,
                    action,
                    reward,
                    next_state,
                })
                .collect(),
        }
    }

    #[test]
    fn counter_count_formula() {
        assert_eq!(counter_count(2, 2, 3), Some(48));
        let fam = CounterFamily::new(2, 2, 3, 1.0, 0.2, 16).unwrap();
        assert_eq!(fam.len(), 48);
    }

    #[test]
    fn error_bound_formula() {
        let expected = 9.0 * (48.0f64 / 0.05).ln() * 1024f64.ln().powf(2.5);
        let got = family_error_bound(2, 2, 3, 1.0, 0.2, 1024);
        assert!((got - expected).abs() < 1e-9 * expected);
        let fam = CounterFamily::new(2, 2, 3, 1.0, 0.2, 1024).unwrap();
        assert_eq!(fam.error_bound(), got);
        assert!((fam.per_counter_epsilon() - 1.0 / 9.0).abs() < 1e-15);
        assert!((fam.per_counter_beta() - 0.05 / 48.0).abs() < 1e-15);
    }

    #[test]
    fn infinite_epsilon_is_noise_free() {
        let fam = CounterFamily::new(2, 2, 3, f64::INFINITY, 0.2, 1024).unwrap();
        assert_eq!(fam.error_bound(), 0.0);
        assert!(fam.counters().all(|c| c.mode().is_noise_free()));
    }

    #[test]
    fn allocation_cap() {
        let err = CounterFamily::with_max_counters(10, 10, 10, 1.0, 0.1, 10, 1000).unwrap_err();
        assert!(matches!(err, CounterError::TooManyCounters { requested: 12_000, cap: 1000 }));
        assert!(CounterFamily::new(2, 2, 2, 0.0, 0.1, 10).is_err());
        assert!(CounterFamily::new(2, 2, 2, 1.0, 1.0, 10).is_err());
    }

    #[test]
    fn single_state_episode() {
        let mut fam = CounterFamily::new(1, 3, 2, f64::INFINITY, 0.1, 4).unwrap();
        let t = traj(&[(0, 2, 1.0, 0), (0, 2, 0.0, 0)]);
        fam.feed_episode(&t, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let snap = fam.snapshot();
        for h in 0..2 {
            assert_eq!(snap.visit(0, 2, h), 1.0);
            assert_eq!(snap.visit(0, 0, h), 0.0);
            assert_eq!(snap.visit(0, 1, h), 0.0);
        }
        assert_eq!(snap.reward(0, 2, 0), 1.0);
        assert_eq!(snap.reward(0, 2, 1), 0.0);
        assert!(fam.counters().all(|c| c.t() == 1));
    }

    #[test]
    fn noise_free_snapshot_equals_exact_counts() {
        use crate::envs::random_mdp;
        use crate::mdp::Policy;
        let mdp = random_mdp(3, 2, 3, 0.5, 21);
        let policy = Policy::from_fn(3, 3, |s, h| (s + h) % 2);
        let mut fam = CounterFamily::new(3, 2, 3, f64::INFINITY, 0.1, 50).unwrap();
        let mut exact = CountTables::zeros(3, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(fam.snapshot(), exact);
        for t in 0..50 {
            let traj = mdp.sample_episode(&policy, t, &mut rng);
            fam.feed_episode(&traj, &mut rng).unwrap();
            exact.add_episode(&traj).unwrap();
            assert_eq!(fam.snapshot(), exact);
        }
        let extra = mdp.sample_episode(&policy, 50, &mut rng);
        assert!(matches!(
            fam.feed_episode(&extra, &mut rng),
            Err(CounterError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn laplace_snapshots_are_monotone() {
        let mut fam = CounterFamily::new(2, 2, 2, 1.0, 0.1, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut prev = fam.snapshot();
        for _ in 0..20 {
            fam.feed_episode(&traj(&[(0, 1, 0.5, 1), (1, 0, 1.0, 0)]), &mut rng)
                .unwrap();
            let snap = fam.snapshot();
            for (old, new) in [
                (&prev.visits, &snap.visits),
                (&prev.rewards, &snap.rewards),
                (&prev.transitions, &snap.transitions),
            ] {
                for (o, n) in old.iter().zip(new) {
                    assert!(*n >= *o && *n >= 0.0);
                }
            }
            prev = snap;
        }
    }

    #[test]
    fn rejects_malformed_trajectories() {
        let mut fam = CounterFamily::new(2, 2, 2, 1.0, 0.1, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(fam.feed_episode(&traj(&[(0, 1, 0.5, 1)]), &mut rng).is_err());
        assert!(fam
            .feed_episode(&traj(&[(0, 2, 0.5, 1), (0, 0, 0.0, 0)]), &mut rng)
            .is_err());
        assert!(fam
            .feed_episode(&traj(&[(0, 1, 1.5, 1), (0, 0, 0.0, 0)]), &mut rng)
            .is_err());
        assert_eq!(fam.episodes(), 0);
    }

    #[test]
    fn neighbouring_episodes_move_at_most_one_unit_per_step() {
        let a = CountTables::episode_symbols(3, 2, 3, &traj(&[(0, 0, 1.0, 1), (1, 1, 0.0, 2), (2, 0, 0.3, 0)])).unwrap();
        let b = CountTables::episode_symbols(3, 2, 3, &traj(&[(0, 1, 0.2, 2), (2, 1, 1.0, 2), (2, 0, 0.3, 0)])).unwrap();
        let d = FamilyDeltas::between(&a, &b);
        assert_eq!(d.visits.steps_changed, 2);
        assert_eq!(d.visits.increase, 2.0);
        assert_eq!(d.visits.decrease, 2.0);
        assert_eq!(d.visits.l1, 4.0);
        assert_eq!(d.transitions.l1, 4.0);
        assert!((d.rewards.increase - 1.2).abs() < 1e-15);
        assert!((d.rewards.decrease - 1.0).abs() < 1e-15);
    }
}
