//! Seeded experiment orchestration: runs an agent against an environment
//! for `T` episodes per replica, scores every executed policy exactly and
//! persists the record streams.

mod config;
mod output;
mod stats;

pub use config::{AgentSpec, EnvSpec, ExperimentConfig, OutputFormat};
pub use output::{
    format_epsilon, read_records, write_summary, RecordFile, RecordWriter, TruncationMarker,
    CSV_HEADER, SUMMARY_HEADER, TRUNCATION_PREFIX,
};
pub use stats::{
    final_regret, gap_decomposition_audit, mean_std, pac_count, regret_band, regret_curve,
    summarize, AuditEntry, AuditReport, BandPoint, SweepRow,
};

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentError, PucbAgent, PucbConfig, QTables, RandomAgent, UbevAgent};
use crate::envs::EnvError;
use crate::mdp::{MdpError, OptimalValues, Policy, TabularMdp, Trajectory};
use crate::seeding::{derive_rng, StreamPurpose};

/// Gaps below `-GAP_TOLERANCE` indicate an evaluation bug rather than rounding.
pub const GAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("replica {replica} failed: {message}")]
    ReplicaFailed { replica: usize, message: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Exact per-episode outcome of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub replica: usize,
    /// 1-based episode index.
    pub episode: usize,
    pub policy_value: f64,
    pub optimal_value: f64,
    pub gap: f64,
    pub cum_regret: f64,
    pub suboptimal: bool,
    pub clamped_entries: Option<usize>,
    pub min_visit_release: Option<f64>,
}

/// Everything visible to an episode observer, after planning and rollout
/// but before the agent sees the trajectory.
pub struct EpisodeContext<'a> {
    pub mdp: &'a TabularMdp,
    pub optimal: &'a OptimalValues,
    pub policy: &'a Policy,
    pub tables: Option<&'a QTables>,
    pub trajectory: &'a Trajectory,
    pub record: &'a EpisodeRecord,
}

pub fn build_agent(
    spec: &AgentSpec,
    mdp: &TabularMdp,
    episodes: usize,
    seed: u64,
    replica: usize,
) -> Result<Box<dyn Agent>, HarnessError> {
    let (s, a, h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    Ok(match *spec {
        AgentSpec::Pucb { epsilon, beta } => Box::new(PucbAgent::new(
            PucbConfig {
                epsilon,
                beta,
                episodes,
            },
            s,
            a,
            h,
            derive_rng(seed, replica as u64, StreamPurpose::CounterNoise),
        )?),
        AgentSpec::Ubev { beta } => Box::new(UbevAgent::new(s, a, h, beta, Some(episodes))?),
        AgentSpec::Random => Box::new(RandomAgent::new(
            s,
            a,
            h,
            derive_rng(seed, replica as u64, StreamPurpose::Agent),
        )),
    })
}

/// Runs one replica of `cfg` on `mdp`, calling `observer` once per episode.
/// An observer error aborts the replica.
pub fn run_replica<F>(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    replica: usize,
    mut observer: F,
) -> Result<Vec<EpisodeRecord>, HarnessError>
where
    F: FnMut(&EpisodeContext<'_>) -> Result<(), HarnessError>,
{
    let optimal = mdp.optimal_values();
    let mut agent = build_agent(&cfg.agent, mdp, cfg.episodes, cfg.seed, replica)?;
    let mut env_rng = derive_rng(cfg.seed, replica as u64, StreamPurpose::Environment);
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut cum_regret = 0.0;
    for episode in 1..=cfg.episodes {
        let policy = agent.plan_episode()?;
        let trajectory = mdp.sample_episode(&policy, episode, &mut env_rng);
        let value = mdp.policy_value(&policy).rho;
        let raw_gap = optimal.rho - value;
        if raw_gap < -GAP_TOLERANCE {
            return Err(HarnessError::Invariant(format!(
                "episode {episode}: policy value {value} exceeds optimum {}",
                optimal.rho
            )));
        }
        let gap = raw_gap.max(0.0);
        cum_regret += gap;
        let diagnostics = agent.diagnostics();
        let record = EpisodeRecord {
            replica,
            episode,
            policy_value: value,
            optimal_value: optimal.rho,
            gap,
            cum_regret,
            suboptimal: gap > cfg.alpha,
            clamped_entries: diagnostics.map(|d| d.clamped_entries),
            min_visit_release: diagnostics.map(|d| d.min_visit_release),
        };
        observer(&EpisodeContext {
            mdp,
            optimal: &optimal,
            policy: &policy,
            tables: agent.q_tables(),
            trajectory: &trajectory,
            record: &record,
        })?;
        agent.observe_episode(&trajectory)?;
        records.push(record);
    }
    log::debug!(
        "replica {replica} ({}) finished: regret {cum_regret}",
        agent.name()
    );
    Ok(records)
}

/// Outcome of [`run_experiment`], indexed by replica.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub optimal_value: f64,
    pub replicas: Vec<Result<Vec<EpisodeRecord>, HarnessError>>,
}

impl ExperimentOutcome {
    pub fn failures(&self) -> Vec<(usize, &HarnessError)> {
        self.replicas
            .iter()
            .enumerate()
            .filter_map(|(r, res)| res.as_ref().err().map(|e| (r, e)))
            .collect()
    }

    /// All replica streams, or the first replica error.
    pub fn streams(&self) -> Result<Vec<&Vec<EpisodeRecord>>, HarnessError> {
        self.replicas
            .iter()
            .enumerate()
            .map(|(replica, res)| {
                res.as_ref().map_err(|e| HarnessError::ReplicaFailed {
                    replica,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

fn part_path(output: &Path, replica: usize) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".replica-{replica}.part"));
    output.with_file_name(name)
}

fn run_persisted_replica(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    replica: usize,
) -> Result<Vec<EpisodeRecord>, HarnessError> {
    match &cfg.output {
        None => run_replica(cfg, mdp, replica, |_| Ok(())),
        Some(output) => {
            let mut writer = RecordWriter::create(&part_path(output, replica), cfg.format, false)?;
            let records = run_replica(cfg, mdp, replica, |ctx| writer.write_record(ctx.record))?;
            writer.finish()?;
            Ok(records)
        }
    }
}

fn merge_parts(cfg: &ExperimentConfig, output: &Path, outcome: &ExperimentOutcome) -> Result<(), HarnessError> {
    let mut merged = RecordWriter::create(output, cfg.format, true)?;
    for (replica, result) in outcome.replicas.iter().enumerate() {
        let part = part_path(output, replica);
        if part.is_file() {
            merged.append_file(&part)?;
            std::fs::remove_file(&part).map_err(|source| HarnessError::Io {
                path: part.clone(),
                source,
            })?;
        }
        if let Err(e) = result {
            merged.write_marker(&TruncationMarker {
                replica,
                reason: e.to_string(),
            })?;
        }
    }
    merged.finish()
}

/// Runs every replica of `cfg` on up to `cfg.workers` threads. With an
/// output path, each replica streams into its own part file and the parts
/// are merged in replica order once all replicas finish.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    let mdp = cfg.env.build(cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let replicas: Vec<_> = pool.install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| run_persisted_replica(cfg, &mdp, r))
            .collect()
    });
    let outcome = ExperimentOutcome {
        optimal_value: mdp.optimal_values().rho,
        replicas,
    };
    for (replica, e) in outcome.failures() {
        log::warn!("replica {replica} aborted: {e}");
    }
    if let Some(output) = &cfg.output {
        merge_parts(cfg, output, &outcome)?;
    }
    Ok(outcome)
}

/// One ε cell of a sweep.
#[derive(Debug)]
pub struct SweepCell {
    pub epsilon: f64,
    pub output: Option<PathBuf>,
    pub outcome: ExperimentOutcome,
    /// Summary over replicas, or the first replica error of the cell.
    pub row: Result<SweepRow, HarnessError>,
}

/// Output path of a sweep cell: `<stem>-eps<ε>.<ext>` next to `base`.
pub fn sweep_cell_path(base: &Path, epsilon: f64, format: OutputFormat) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sweep".into());
    base.with_file_name(format!("{stem}-eps{}.{}", format_epsilon(epsilon), format.extension()))
}

/// Runs the PUCB template once per ε.
pub fn sweep(template: &ExperimentConfig, epsilons: &[f64]) -> Result<Vec<SweepCell>, HarnessError> {
    if epsilons.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one epsilon".into()));
    }
    let AgentSpec::Pucb { beta, .. } = template.agent else {
        return Err(HarnessError::Config(format!(
            "sweep needs a pucb agent template, got {}",
            template.agent.label()
        )));
    };
    epsilons
        .iter()
        .map(|&epsilon| {
            let mut cfg = template.clone();
            cfg.agent = AgentSpec::Pucb { epsilon, beta };
            cfg.output = template
                .output
                .as_ref()
                .map(|base| sweep_cell_path(base, epsilon, template.format));
            let outcome = run_experiment(&cfg)?;
            let row = outcome.streams().map(|streams| {
                let owned: Vec<Vec<EpisodeRecord>> = streams.into_iter().cloned().collect();
                summarize(epsilon, &owned, cfg.alpha)
            });
            Ok(SweepCell {
                epsilon,
                output: cfg.output,
                outcome,
                row,
            })
        })
        .collect()
}
