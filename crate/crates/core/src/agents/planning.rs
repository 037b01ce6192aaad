//! Optimistic backward induction over count statistics.
//!
//! The same routine serves the private planner (noisy releases, error bound
//! `E_ε > 0`) and the non-private reference planner (exact counts, `E_ε = 0`).

use std::f64::consts::E;

use crate::counters::CountTables;
use crate::mdp::{argmax_first, OptimalValues, Policy};

use super::AgentError;

/// Multiplier on the first-order privacy correction `(1+SH)·E/ñ`.
pub const PSI_LINEAR_COEFF: f64 = 3.0;
/// Multiplier on the second-order privacy correction `(1+SH)·E²/ñ²`.
pub const PSI_QUADRATIC_COEFF: f64 = 2.0;

/// `ln(ln(max(x, e)))`; zero for `x ≤ e`.
pub fn llnp(x: f64) -> f64 {
    x.max(E).ln().ln()
}

/// Inputs to the exploration bonus that do not vary per `(s, a, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// Uniform counter error bound `E_ε` (0 for exact counts).
    pub error_bound: f64,
    /// `β' = β/4`.
    pub beta_prime: f64,
}

impl ConfidenceParams {
    /// `ln(3SAH/β')`.
    pub fn log_term(&self) -> f64 {
        (3.0 * (self.num_states * self.num_actions * self.horizon) as f64 / self.beta_prime).ln()
    }

    /// Visit level below which the bonus saturates at `H`.
    pub fn threshold(&self) -> f64 {
        if self.error_bound > 0.0 {
            2.0 * self.error_bound
        } else {
            1.0
        }
    }
}

/// Bonus for one `(s, a, h)`. `phi`/`psi` are `None` below the visit threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bonus {
    pub conf: f64,
    pub phi: Option<f64>,
    pub psi: Option<f64>,
}

/// Exploration bonus `conf = (H+1)·φ + ψ` for a (possibly noisy) visit count.
pub fn confidence(n_tilde: f64, params: &ConfidenceParams) -> Bonus {
    let h = params.horizon as f64;
    if !(n_tilde >= params.threshold()) {
        return Bonus {
            conf: h,
            phi: None,
            psi: None,
        };
    }
    let e = params.error_bound;
    let effective = n_tilde - e;
    let phi = ((2.0 * llnp(effective) + params.log_term()) / effective).sqrt();
    let sh = 1.0 + (params.num_states as f64) * h;
    let psi = PSI_LINEAR_COEFF * sh * e / n_tilde
        + PSI_QUADRATIC_COEFF * sh * e * e / (n_tilde * n_tilde);
    Bonus {
        conf: (h + 1.0) * phi + psi,
        phi: Some(phi),
        psi: Some(psi),
    }
}

/// Checks `1/(x−y) ≤ 1/x + 2y/x²` on its domain `y > 0, x ≥ 2y`.
pub fn inverse_gap_bound_check(x: f64, y: f64) -> Result<bool, AgentError> {
    if !(y > 0.0 && x >= 2.0 * y) || !x.is_finite() {
        return Err(AgentError::Precondition(format!(
            "need y > 0 and x >= 2y, got x = {x}, y = {y}"
        )));
    }
    let lhs = 1.0 / (x - y);
    let rhs = 1.0 / x + 2.0 * y / (x * x);
    // Rounding can put the x = 2y equality case one ulp on either side.
    Ok(lhs <= rhs * (1.0 + 4.0 * f64::EPSILON))
}

/// Planner output, step-major (`[h][s][a]`, values `[h][s]` with a zero row at `h = H`).
#[derive(Debug, Clone, PartialEq)]
pub struct QTables {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    pub q_tilde: Vec<Option<f64>>,
    pub q_plus: Vec<f64>,
    pub v_tilde: Vec<f64>,
    pub conf: Vec<f64>,
    pub phi: Vec<Option<f64>>,
    pub psi: Vec<Option<f64>>,
}

impl QTables {
    #[inline]
    fn index(&self, s: usize, a: usize, h: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
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

    pub fn q_plus(&self, s: usize, a: usize, h: usize) -> f64 {
        self.q_plus[self.index(s, a, h)]
    }

    pub fn q_tilde(&self, s: usize, a: usize, h: usize) -> Option<f64> {
        self.q_tilde[self.index(s, a, h)]
    }

    pub fn conf(&self, s: usize, a: usize, h: usize) -> f64 {
        self.conf[self.index(s, a, h)]
    }

    pub fn v(&self, s: usize, h: usize) -> f64 {
        self.v_tilde[h * self.num_states + s]
    }

    /// Greedy policy on `Q̃⁺`, ties toward the smallest action.
    pub fn greedy_policy(&self) -> Policy {
        let a_n = self.num_actions;
        Policy::from_fn(self.num_states, self.horizon, |s, h| {
            let start = self.index(s, 0, h);
            argmax_first(&self.q_plus[start..start + a_n])
        })
    }

    /// True when `Q̃⁺(s,a,h) ≥ Q*(s,a,h)` for every entry (up to `tol`).
    pub fn dominates(&self, optimal: &OptimalValues, tol: f64) -> bool {
        (0..self.horizon).all(|h| {
            (0..self.num_states).all(|s| {
                (0..self.num_actions).all(|a| self.q_plus(s, a, h) + tol >= optimal.q(s, a, h))
            })
        })
    }

    /// Equality down to the bit pattern of every entry.
    pub fn bits_eq(&self, other: &QTables) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        fn same_opt(a: &[Option<f64>], b: &[Option<f64>]) -> bool {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| match (x, y) {
                    (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
                    (None, None) => true,
                    _ => false,
                })
        }
        (self.num_states, self.num_actions, self.horizon)
            == (other.num_states, other.num_actions, other.horizon)
            && same(&self.q_plus, &other.q_plus)
            && same(&self.v_tilde, &other.v_tilde)
            && same(&self.conf, &other.conf)
            && same_opt(&self.q_tilde, &other.q_tilde)
            && same_opt(&self.phi, &other.phi)
            && same_opt(&self.psi, &other.psi)
    }

    pub fn diagnostics(&self, counts: &CountTables) -> PlanDiagnostics {
        let h = self.horizon as f64;
        let n = self.q_plus.len() as f64;
        PlanDiagnostics {
            q_plus_min: self.q_plus.iter().copied().fold(f64::INFINITY, f64::min),
            q_plus_max: self.q_plus.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            q_plus_mean: self.q_plus.iter().sum::<f64>() / n,
            clamped_entries: self.q_plus.iter().filter(|&&q| q >= h).count(),
            below_threshold: self.phi.iter().filter(|p| p.is_none()).count(),
            min_visit_release: counts.visits.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Per-episode summary of a planning call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanDiagnostics {
    pub q_plus_min: f64,
    pub q_plus_max: f64,
    pub q_plus_mean: f64,
    /// Entries where `Q̃⁺ = H`.
    pub clamped_entries: usize,
    /// Entries whose visit release is under the bonus threshold.
    pub below_threshold: usize,
    pub min_visit_release: f64,
}

/// `Q̃ = (r̃ + Σ_{s'} Ṽ(s')·m̃(s'))/ñ`.
pub fn empirical_backup(reward: f64, visits: f64, transitions: &[f64], next_values: &[f64]) -> f64 {
    let future: f64 = next_values
        .iter()
        .zip(transitions)
        .map(|(v, m)| v * m)
        .sum();
    (reward + future) / visits
}

/// Optimistic backward induction with `Q̃⁺ = min{H, Q̃ + conf}`, or `H`
/// directly when the visit count is under the bonus threshold.
pub fn optimistic_planning(counts: &CountTables, params: &ConfidenceParams) -> QTables {
    let (s_n, a_n, h_n) = (counts.num_states(), counts.num_actions(), counts.horizon());
    let sah = s_n * a_n * h_n;
    let horizon = h_n as f64;
    let mut tables = QTables {
        num_states: s_n,
        num_actions: a_n,
        horizon: h_n,
        q_tilde: vec![None; sah],
        q_plus: vec![0.0; sah],
        v_tilde: vec![0.0; (h_n + 1) * s_n],
        conf: vec![0.0; sah],
        phi: vec![None; sah],
        psi: vec![None; sah],
    };
    for h in (0..h_n).rev() {
        for s in 0..s_n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..a_n {
                let i = counts.index(s, a, h);
                let n = counts.visits[i];
                let bonus = confidence(n, params);
                tables.conf[i] = bonus.conf;
                tables.phi[i] = bonus.phi;
                tables.psi[i] = bonus.psi;
                let q_plus = if bonus.phi.is_some() {
                    let next = &tables.v_tilde[(h + 1) * s_n..(h + 2) * s_n];
                    let q = empirical_backup(
                        counts.rewards[i],
                        n,
                        counts.transition_row(s, a, h),
                        next,
                    );
                    tables.q_tilde[i] = Some(q);
                    horizon.min(q + bonus.conf)
                } else {
                    horizon
                };
                tables.q_plus[i] = q_plus;
                best = best.max(q_plus);
            }
            tables.v_tilde[h * s_n + s] = best;
        }
    }
    tables
}

/// Private planner on counter releases with error bound `E_ε`.
pub fn priv_q_planning(snapshot: &CountTables, error_bound: f64, beta: f64) -> QTables {
    optimistic_planning(
        snapshot,
        &ConfidenceParams {
            num_states: snapshot.num_states(),
            num_actions: snapshot.num_actions(),
            horizon: snapshot.horizon(),
            error_bound,
            beta_prime: beta / 4.0,
        },
    )
}

/// Non-private reference planner on exact counts.
pub fn ubev_planning(counts: &CountTables, beta: f64) -> QTables {
    priv_q_planning(counts, 0.0, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(e: f64) -> ConfidenceParams {
        ConfidenceParams {
            num_states: 3,
            num_actions: 2,
            horizon: 4,
            error_bound: e,
            beta_prime: 0.0125,
        }
    }

    #[test]
    fn unvisited_gets_full_bonus() {
        let b = confidence(0.0, &params(0.0));
        assert_eq!(b.conf, 4.0);
        assert_eq!(b.phi, None);
        assert_eq!(b.psi, None);
    }

    #[test]
    fn non_private_width() {
        let p = params(0.0);
        let n = 37.0;
        let b = confidence(n, &p);
        let expected = 5.0 * ((2.0 * (n as f64).ln().ln() + (72.0f64 / 0.0125).ln()) / n).sqrt();
        assert_eq!(b.psi, Some(0.0));
        assert!((b.conf - expected).abs() < 1e-12);
        // llnp clamps small counts
        let b1 = confidence(1.0, &p);
        assert!((b1.phi.unwrap() - (72.0f64 / 0.0125).ln().sqrt()).abs() < 1e-12);
    }

    #[test]
    fn threshold_boundary_takes_bonus_branch() {
        let e = 7.5;
        let b = confidence(2.0 * e, &params(e));
        let phi = b.phi.expect("bonus branch at ñ = 2E");
        let expected_phi = ((2.0 * llnp(e) + params(e).log_term()) / e).sqrt();
        assert!((phi - expected_phi).abs() < 1e-12);
        let sh = 1.0 + 3.0 * 4.0;
        let expected_psi = 3.0 * sh * e / (2.0 * e) + 2.0 * sh * e * e / (4.0 * e * e);
        assert!((b.psi.unwrap() - expected_psi).abs() < 1e-12);
        assert_eq!(confidence(2.0 * e - 1e-9, &params(e)).phi, None);
    }

    #[test]
    fn inverse_gap_examples() {
        for y in [1e-6, 0.5, 1.0, 3.7, 1e6] {
            assert!(inverse_gap_bound_check(2.0 * y, y).unwrap());
        }
        assert!(inverse_gap_bound_check(10.0, 1.0).unwrap());
        assert!(inverse_gap_bound_check(1.0, 1.0).is_err());
        assert!(inverse_gap_bound_check(1.0, 0.0).is_err());
        assert!(inverse_gap_bound_check(1.0, -1.0).is_err());
    }

    #[test]
    fn zero_counts_plan_is_fully_optimistic() {
        let counts = CountTables::zeros(3, 4, 5);
        let q = priv_q_planning(&counts, 12.0, 0.1);
        assert!(q.q_plus.iter().all(|&v| v == 5.0));
        assert!(q.v_tilde[..15].iter().all(|&v| v == 5.0));
        let pi = q.greedy_policy();
        assert!(pi.actions().iter().all(|&a| a == 0));
    }

    #[test]
    fn displayed_backup_arithmetic() {
        let next = [0.0, 2.0, 0.0];
        let m = [0.0, 10.0, 0.0];
        assert!((empirical_backup(7.0, 10.0, &m, &next) - 2.7).abs() < 1e-15);
    }

    #[test]
    fn planner_uses_backup_on_visited_entries() {
        // one state, one action, H = 2; step 1 has V = Q⁺ at h = 1.
        let mut counts = CountTables::zeros(1, 1, 2);
        counts.visits = vec![1000.0, 1000.0];
        counts.rewards = vec![200.0, 300.0];
        counts.transitions = vec![1000.0, 1000.0];
        let q = ubev_planning(&counts, 0.1);
        let last = 0.3 + q.conf(0, 0, 1);
        assert!((q.q_plus(0, 0, 1) - last.min(2.0)).abs() < 1e-12);
        let first = 0.2 + q.v(0, 1) + q.conf(0, 0, 0);
        assert!((q.q_plus(0, 0, 0) - first.min(2.0)).abs() < 1e-12);
        assert_eq!(q.q_tilde(0, 0, 1), Some(0.3));
    }

    #[test]
    fn clamp_binds_on_single_visit() {
        let mut counts = CountTables::zeros(1, 1, 1);
        counts.visits = vec![1.0];
        counts.rewards = vec![1.0];
        counts.transitions = vec![1.0];
        let q = ubev_planning(&counts, 0.05);
        assert_eq!(q.q_plus(0, 0, 0), 1.0);
    }

    #[test]
    fn scaling_preserves_terminal_empirical_values() {
        let mut counts = CountTables::zeros(2, 2, 1);
        counts.visits = vec![40.0, 10.0, 25.0, 8.0];
        counts.rewards = vec![12.0, 9.0, 5.0, 2.0];
        counts.transitions = vec![20.0, 20.0, 5.0, 5.0, 25.0, 0.0, 4.0, 4.0];
        let base = ubev_planning(&counts, 0.1);
        let scaled = ubev_planning(&counts.scaled(3.0), 0.1);
        for s in 0..2 {
            for a in 0..2 {
                let (x, y) = (base.q_tilde(s, a, 0).unwrap(), scaled.q_tilde(s, a, 0).unwrap());
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn inverse_gap_property(y in 1e-9f64..1e9, k in 2.0f64..1e6) {
            prop_assert!(inverse_gap_bound_check(k * y, y).unwrap());
        }

        #[test]
        fn bonus_nonincreasing_in_visits(e in 0.0f64..50.0, n in 0.0f64..1e5, dn in 0.0f64..1e4) {
            let p = params(e);
            let (lo, hi) = (confidence(n, &p), confidence(n + dn, &p));
            let h = p.horizon as f64;
            prop_assert!(hi.conf.min(h) <= lo.conf.min(h) + 1e-12);
            if lo.phi.is_some() {
                prop_assert!(hi.conf <= lo.conf + 1e-12);
            }
        }

        #[test]
        fn bonus_nondecreasing_in_error_bound(e in 0.0f64..50.0, de in 0.0f64..50.0, n in 0.0f64..1e5) {
            let (lo, hi) = (confidence(n, &params(e)), confidence(n, &params(e + de)));
            let h = 4.0;
            prop_assert!(hi.conf.min(h) + 1e-12 >= lo.conf.min(h));
            if hi.phi.is_some() {
                prop_assert!(hi.conf + 1e-12 >= lo.conf);
            }
        }

        #[test]
        fn q_plus_clamped_and_values_consistent(
            seed in any::<u64>(),
            e in 0.0f64..20.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (s_n, a_n, h_n) = (3, 2, 3);
            let mut counts = CountTables::zeros(s_n, a_n, h_n);
            for h in 0..h_n {
                for s in 0..s_n {
                    for a in 0..a_n {
                        let i = counts.index(s, a, h);
                        let n: f64 = rng.random_range(0.0..200.0);
                        counts.visits[i] = n;
                        counts.rewards[i] = n * rng.random::<f64>();
                        for s2 in 0..s_n {
                            counts.transitions[i * s_n + s2] = n * rng.random::<f64>();
                        }
                    }
                }
            }
            let q = priv_q_planning(&counts, e, 0.1);
            for &v in &q.q_plus {
                prop_assert!((0.0..=h_n as f64).contains(&v));
            }
            for h in 0..h_n {
                for s in 0..s_n {
                    let best = (0..a_n).map(|a| q.q_plus(s, a, h)).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(q.v(s, h), best);
                }
            }
            for s in 0..s_n {
                prop_assert_eq!(q.v(s, h_n), 0.0);
            }
        }
    }
}
