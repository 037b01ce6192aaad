//! Joint-differentially-private optimistic exploration for tabular episodic MDPs.
//!
//! * [`mdp`]: finite-horizon MDPs and exact dynamic programming.
//! * [`counters`]: binary-mechanism private counters and the per-agent counter family.
//! * [`agents`]: the private optimistic agent, its non-private reference and a random baseline.
//! * [`envs`]: environment generators.
//! * [`harness`]: seeded experiments, regret and PAC statistics, CSV/JSON output.

pub mod agents;
pub mod counters;
pub mod envs;
pub mod harness;
pub mod mdp;
pub mod seeding;
