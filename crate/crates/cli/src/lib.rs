//! Command-line driver: config loading, flag overrides and subcommand dispatch.
//!
//! Exit codes are 0 on success, 1 on runtime failures and 2 on usage or
//! configuration errors. Every failure prints one line of the form
//! `error: kind=<usage|config|runtime> code=<n> msg=<text>` on stderr.

pub mod plot;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pucb_core::counters::{empirical_privacy_probe, EventGrid, NoiseMode};
use pucb_core::harness::{
    format_epsilon, run_experiment, summarize, sweep, write_summary, AgentSpec, ExperimentConfig,
    HarnessError, OutputFormat,
};
use pucb_core::mdp::{MdpError, TabularMdp};

#[derive(Debug, Parser)]
#[command(name = "pucb", version, about = "Private optimistic RL experiments on tabular episodic MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its per-episode records.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a PUCB configuration once per privacy budget.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated budgets; `inf` runs noise-free.
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the optimal values of an MDP file and its validation report.
    EvalMdp { path: PathBuf },
    /// Plot cumulative regret (mean and one standard deviation) as SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "Cumulative regret")]
        title: String,
        #[arg(long)]
        allow_partial: bool,
    },
    /// Estimate a single counter's privacy loss on neighbouring bit streams.
    ProbePrivacy {
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, conflicts_with = "epsilon")]
        noise_free: bool,
        /// Stream length T.
        #[arg(long, default_value_t = 64)]
        length: usize,
        /// Position at which the neighbouring stream differs.
        #[arg(long, default_value_t = 0)]
        position: usize,
        /// Compare a stream against itself.
        #[arg(long)]
        identical: bool,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        buckets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

/// Flags layered over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Shorthand for `--epsilon inf`.
    #[arg(long, conflicts_with = "epsilon")]
    pub noise_free: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "error: kind={} code={} msg={}",
            self.kind(),
            self.code(),
            self.message().replace(['\n', '\r'], " ")
        )
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(v) = self.episodes {
            cfg.episodes = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.replicas {
            cfg.replicas = v;
        }
        if let Some(v) = &self.out {
            cfg.output = Some(v.clone());
        }
        if let Some(v) = self.format {
            cfg.format = v.into();
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        let epsilon = if self.noise_free {
            Some(f64::INFINITY)
        } else {
            self.epsilon
        };
        match &mut cfg.agent {
            AgentSpec::Pucb {
                epsilon: eps,
                beta,
            } => {
                if let Some(e) = epsilon {
                    *eps = e;
                }
                if let Some(b) = self.beta {
                    *beta = b;
                }
            }
            AgentSpec::Ubev { beta } => {
                if epsilon.is_some() {
                    return Err(CliError::Usage(
                        "--epsilon/--noise-free apply only to pucb agents".into(),
                    ));
                }
                if let Some(b) = self.beta {
                    *beta = b;
                }
            }
            AgentSpec::Random => {
                if epsilon.is_some() || self.beta.is_some() {
                    return Err(CliError::Usage(
                        "--epsilon/--beta/--noise-free do not apply to the random agent".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Loads the config, applies overrides, validates and builds the environment
/// once so configuration problems surface before any replica runs.
fn prepare(path: &Path, overrides: &Overrides, default_output: &str) -> Result<ExperimentConfig, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("config file not found: {}", path.display())));
    }
    let mut cfg = ExperimentConfig::load(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    overrides.apply(&mut cfg)?;
    if cfg.output.is_none() {
        cfg.output = Some(PathBuf::from(format!("{default_output}.{}", cfg.format.extension())));
    }
    cfg.validate().map_err(config_error)?;
    cfg.env.build(cfg.seed).map_err(config_error)?;
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir)
            .map_err(|e| runtime(format!("cannot create {}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn echo_config(output: &Path, cfg: &ExperimentConfig, header: &str) -> Result<PathBuf, CliError> {
    let path = sibling(output, ".config.toml");
    let text = format!("{header}{}", cfg.to_toml_string());
    std::fs::write(&path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn cmd_run(config: &Path, overrides: &Overrides, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = prepare(config, overrides, "results")?;
    let output = cfg.output.clone().expect("output set by prepare");
    ensure_parent(&output)?;
    echo_config(&output, &cfg, "")?;
    log::info!("running {} for {} episodes x {} replicas", cfg.agent.label(), cfg.episodes, cfg.replicas);
    let outcome = run_experiment(&cfg).map_err(runtime)?;
    let failures = outcome.failures();
    if !failures.is_empty() {
        let (replica, e) = failures[0];
        return Err(CliError::Runtime(format!(
            "{} of {} replicas failed (first: replica {replica}: {e}); partial output in {}",
            failures.len(),
            cfg.replicas,
            output.display()
        )));
    }
    let streams: Vec<_> = outcome.streams().map_err(runtime)?.into_iter().cloned().collect();
    let epsilon = match cfg.agent {
        AgentSpec::Pucb { epsilon, .. } => epsilon,
        _ => f64::NAN,
    };
    let row = summarize(epsilon, &streams, cfg.alpha);
    writeln!(
        out,
        "agent={} episodes={} replicas={} optimal_value={} mean_final_regret={} std_final_regret={} mean_pac_count={} output={}",
        cfg.agent.label(),
        cfg.episodes,
        row.replicas,
        outcome.optimal_value,
        row.mean_final_regret,
        row.std_final_regret,
        row.mean_pac_count,
        output.display()
    )
    .map_err(runtime)
}

fn cmd_sweep(config: &Path, epsilons: &[f64], overrides: &Overrides, out: &mut dyn Write) -> Result<(), CliError> {
    if overrides.epsilon.is_some() || overrides.noise_free {
        return Err(CliError::Usage("sweep takes budgets from --epsilons only".into()));
    }
    if let Some(bad) = epsilons.iter().find(|e| e.is_nan() || **e <= 0.0) {
        return Err(CliError::Config(format!(
            "epsilon must be > 0 (or inf for noise-free), got {bad}"
        )));
    }
    let cfg = prepare(config, overrides, "sweep")?;
    if !matches!(cfg.agent, AgentSpec::Pucb { .. }) {
        return Err(CliError::Config("sweep needs a pucb agent in the config".into()));
    }
    let base = cfg.output.clone().expect("output set by prepare");
    ensure_parent(&base)?;
    let listed: Vec<String> = epsilons.iter().map(|&e| format_epsilon(e)).collect();
    echo_config(&base, &cfg, &format!("# sweep epsilons: {}\n", listed.join(", ")))?;
    let cells = sweep(&cfg, epsilons).map_err(runtime)?;
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for cell in &cells {
        match &cell.row {
            Ok(row) => rows.push(*row),
            Err(e) => failed.push(format!("epsilon {}: {e}", format_epsilon(cell.epsilon))),
        }
    }
    let summary = sibling(&base, "-summary.csv");
    write_summary(&summary, &rows).map_err(runtime)?;
    writeln!(out, "{}", pucb_core::harness::SUMMARY_HEADER).map_err(runtime)?;
    for row in &rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            format_epsilon(row.epsilon),
            row.mean_final_regret,
            row.std_final_regret,
            row.mean_pac_count,
            row.replicas
        )
        .map_err(runtime)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(failed.join("; ")))
    }
}

fn cmd_eval_mdp(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mdp = match TabularMdp::from_json(&text) {
        Ok(mdp) => mdp,
        Err(MdpError::Invalid(report)) => {
            let _ = writeln!(out, "validation: {} violation(s)", report.violations.len());
            let _ = writeln!(out, "{report}");
            return Err(CliError::Config(format!(
                "{} is not a valid MDP ({} violations)",
                path.display(),
                report.violations.len()
            )));
        }
        Err(e) => return Err(CliError::Config(format!("{}: {e}", path.display()))),
    };
    let optimal = mdp.optimal_values();
    let mut report = format!(
        "S = {}\nA = {}\nH = {}\nrho* = {}\n",
        mdp.num_states(),
        mdp.num_actions(),
        mdp.horizon(),
        optimal.rho
    );
    for s in 0..mdp.num_states() {
        report.push_str(&format!("V*_1({s}) = {}\n", optimal.v(s, 0)));
    }
    report.push_str("validation: ok\n");
    out.write_all(report.as_bytes()).map_err(runtime)
}

fn cmd_plot(inputs: &[PathBuf], out_path: &Path, title: &str, allow_partial: bool) -> Result<(), CliError> {
    let mut series = Vec::with_capacity(inputs.len());
    for input in inputs {
        let s = plot::load_series(input, allow_partial).map_err(|e| match e {
            plot::PlotError::Harness(HarnessError::Io { .. }) => runtime(e),
            other => config_error(other),
        })?;
        series.push(s);
    }
    plot::order_series(&mut series);
    let svg = plot::render_svg(&series, title);
    ensure_parent(out_path)?;
    std::fs::write(out_path, svg).map_err(|e| runtime(format!("cannot write {}: {e}", out_path.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_probe(
    epsilon: f64,
    noise_free: bool,
    length: usize,
    position: usize,
    identical: bool,
    trials: usize,
    buckets: usize,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mode = if noise_free {
        NoiseMode::NoiseFree
    } else {
        NoiseMode::from_epsilon(epsilon).map_err(config_error)?
    };
    if position >= length {
        return Err(CliError::Usage(format!("--position {position} outside a stream of length {length}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..length).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let mut b = a.clone();
    if !identical {
        b[position] = 1.0 - b[position];
    }
    let report = empirical_privacy_probe(&a, &b, mode, trials, &EventGrid::Quantiles(buckets), &mut rng)
        .map_err(config_error)?;
    writeln!(
        out,
        "epsilon={} estimate={} slack={} within_budget={}",
        format_epsilon(report.epsilon_counter),
        format_epsilon(report.estimate),
        report.slack,
        report.within_budget()
    )
    .map_err(runtime)?;
    writeln!(out, "{}", report.to_json()).map_err(runtime)
}

pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, overrides } => cmd_run(&config, &overrides, out),
        Command::Sweep {
            config,
            epsilons,
            overrides,
        } => cmd_sweep(&config, &epsilons, &overrides, out),
        Command::EvalMdp { path } => cmd_eval_mdp(&path, out),
        Command::Plot {
            inputs,
            out: out_path,
            title,
            allow_partial,
        } => cmd_plot(&inputs, &out_path, &title, allow_partial),
        Command::ProbePrivacy {
            epsilon,
            noise_free,
            length,
            position,
            identical,
            trials,
            buckets,
            seed,
        } => cmd_probe(epsilon, noise_free, length, position, identical, trials, buckets, seed, out),
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::Usage(e.to_string().lines().next().unwrap_or("invalid usage").to_string());
            eprintln!("{}", err.line());
            let _ = e.print();
            return err.code();
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match dispatch(cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("{}", e.line());
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pucb_core::harness::EnvSpec;

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            episodes: 10,
            alpha: 0.1,
            replicas: 1,
            seed: 0,
            output: None,
            format: OutputFormat::Csv,
            workers: 1,
            env: EnvSpec::Chain { horizon: 2 },
            agent: AgentSpec::Pucb {
                epsilon: 1.0,
                beta: 0.1,
            },
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut cfg = base();
        let o = Overrides {
            episodes: Some(7),
            noise_free: true,
            beta: Some(0.2),
            format: Some(FormatArg::Json),
            ..Default::default()
        };
        o.apply(&mut cfg).unwrap();
        assert_eq!(cfg.episodes, 7);
        assert_eq!(cfg.format, OutputFormat::Json);
        assert_eq!(
            cfg.agent,
            AgentSpec::Pucb {
                epsilon: f64::INFINITY,
                beta: 0.2
            }
        );
    }

    #[test]
    fn epsilon_on_non_private_agents_is_a_usage_error() {
        let mut cfg = base();
        cfg.agent = AgentSpec::Ubev { beta: 0.1 };
        let o = Overrides {
            epsilon: Some(1.0),
            ..Default::default()
        };
        assert!(matches!(o.apply(&mut cfg), Err(CliError::Usage(_))));
    }

    #[test]
    fn error_lines_are_single_line() {
        let e = CliError::Config("bad\nthing".into());
        assert_eq!(e.line(), "error: kind=config code=2 msg=bad thing");
        assert_eq!(CliError::Runtime(String::new()).code(), 1);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["pucb", "sweep", "--config", "c.toml", "--epsilons", "0.1,1,inf"]).unwrap();
        match cli.command {
            Command::Sweep { epsilons, .. } => assert_eq!(epsilons, vec![0.1, 1.0, f64::INFINITY]),
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["pucb", "run", "--config", "c", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["pucb", "run", "--config", "c", "--epsilon", "1", "--noise-free"]).is_err());
    }
}
