use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pucb_core::envs::{chain_fixture, hard_mdp, HardMdpSpec, CHAIN_OPTIMAL_VALUE};
use pucb_core::harness::{read_records, CSV_HEADER};

fn pucb(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pucb"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn chain_config(dir: &Path) -> PathBuf {
    let path = dir.join("chain.toml");
    std::fs::write(
        &path,
        r#"
episodes = 50
alpha = 0.1
replicas = 3
seed = 9

[env]
kind = "chain"
horizon = 3

[agent]
kind = "pucb"
epsilon = 1.0
beta = 0.05
"#,
    )
    .unwrap();
    path
}

fn hard_config(dir: &Path) -> PathBuf {
    let path = dir.join("hard.toml");
    std::fs::write(
        &path,
        r#"
episodes = 60
alpha = 0.3
replicas = 2
seed = 4

[env]
kind = "hard"
n = 2
m = 1
alpha_prime = 0.3
horizon = 2
optimal_arms = [1, 0]

[agent]
kind = "pucb"
epsilon = 1.0
beta = 0.1
"#,
    )
    .unwrap();
    path
}

#[test]
fn run_noise_free_writes_rows_per_replica_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    chain_config(dir.path());
    let o = pucb(
        &["run", "--config", "chain.toml", "--episodes", "10", "--noise-free", "--out", "res/chain.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("agent=pucb(eps=inf)"));

    let csv = dir.path().join("res/chain.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    let file = read_records(&csv).unwrap();
    let replicas = file.by_replica();
    assert_eq!(replicas.len(), 3);
    assert!(replicas.iter().all(|r| r.len() == 10));

    let echoed = std::fs::read_to_string(dir.path().join("res/chain.config.toml")).unwrap();
    assert!(echoed.contains("episodes = 10"));
    assert!(echoed.contains("epsilon = inf"));
}

#[test]
fn run_is_deterministic_and_supports_json() {
    let dir = tempfile::tempdir().unwrap();
    chain_config(dir.path());
    let mut bytes = Vec::new();
    for (i, workers) in ["1", "3"].iter().enumerate() {
        let out = format!("r{i}.jsonl");
        let o = pucb(
            &["run", "--config", "chain.toml", "--format", "json", "--workers", workers, "--out", &out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        bytes.push(std::fs::read(dir.path().join(out)).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let file = read_records(&dir.path().join("r0.jsonl")).unwrap();
    assert_eq!(file.records.len(), 150);
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = pucb(&["run", "--config", "nope/missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("nope/missing.toml"), "{err}");
    assert!(err.lines().any(|l| l.starts_with("error: kind=config code=2 msg=")));
}

#[test]
fn invalid_values_and_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    chain_config(dir.path());
    let o = pucb(&["run", "--config", "chain.toml", "--epsilon", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epsilon must be > 0"));

    let o = pucb(&["run", "--config", "chain.toml", "--speed", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: kind=usage code=2"));

    let o = pucb(&["run", "--config", "chain.toml", "--episodes", "ten"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(dir.path().join("broken.toml"), "episodes = [").unwrap();
    let o = pucb(&["run", "--config", "broken.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replica_io_failure_exits_1_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    chain_config(dir.path());
    std::fs::create_dir_all(dir.path().join("out.csv.replica-0.part")).unwrap();
    let o = pucb(&["run", "--config", "chain.toml", "--out", "out.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kind=runtime code=1"));
    let file = read_records(&dir.path().join("out.csv")).unwrap();
    assert!(file.is_truncated());
}

#[test]
fn eval_mdp_reports_values_and_violations() {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("chain.json");
    std::fs::write(&chain, chain_fixture(4).unwrap().to_json()).unwrap();
    let o = pucb(&["eval-mdp", "chain.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("S = 3\nA = 2\nH = 4\n"), "{text}");
    assert!(text.contains(&format!("rho* = {CHAIN_OPTIMAL_VALUE}\n")));
    assert!(text.contains("V*_1(0) = 1\n"));
    assert!(text.contains("validation: ok"));

    let spec = HardMdpSpec {
        n: 2,
        m: 1,
        alpha_prime: 0.25,
        horizon: 4,
        optimal_arms: vec![1, 1],
    };
    std::fs::write(dir.path().join("hard.json"), hard_mdp(&spec).unwrap().to_json()).unwrap();
    let o = pucb(&["eval-mdp", "hard.json"], dir.path());
    let rho: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("rho* = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((rho - 4.0 * (0.5 + 0.25)).abs() < 1e-12);

    let broken = chain_fixture(2).unwrap().to_json().replacen("1.0", "0.7", 1);
    std::fs::write(dir.path().join("broken.json"), broken).unwrap();
    let o = pucb(&["eval-mdp", "broken.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("violation"), "{}", stdout(&o));
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap()
}

#[test]
fn probe_privacy_cases() {
    let dir = tempfile::tempdir().unwrap();
    let o = pucb(&["probe-privacy", "--identical", "--trials", "20000"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let estimate: f64 = field(&text, "estimate").parse().unwrap();
    let slack: f64 = field(&text, "slack").parse().unwrap();
    assert!(estimate < slack, "{text}");

    let o = pucb(&["probe-privacy", "--noise-free", "--trials", "10000", "--position", "3"], dir.path());
    assert!(o.status.success());
    assert_eq!(field(&stdout(&o), "estimate"), "inf");

    let o = pucb(&["probe-privacy", "--epsilon", "1", "--trials", "50000", "--position", "11"], dir.path());
    assert!(o.status.success());
    assert_eq!(field(&stdout(&o), "within_budget"), "true", "{}", stdout(&o));

    let o = pucb(&["probe-privacy", "--trials", "10"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

fn write_stream(path: &Path, gaps: &[&[f64]], truncated: bool) {
    let mut text = format!("{CSV_HEADER}\n");
    for (replica, g) in gaps.iter().enumerate() {
        let mut cum = 0.0;
        for (i, gap) in g.iter().enumerate() {
            cum += gap;
            text.push_str(&format!("{replica},{},{},1,{gap},{cum},0,,\n", i + 1, 1.0 - gap));
        }
    }
    if truncated {
        text.push_str("#TRUNCATED replica=2 reason=disk full\n");
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn plot_is_deterministic_with_one_legend_entry_per_series() {
    let dir = tempfile::tempdir().unwrap();
    write_stream(&dir.path().join("zero.csv"), &[&[0.0; 5], &[0.0; 5]], false);
    write_stream(&dir.path().join("other.csv"), &[&[1.0, 0.5, 0.0], &[0.0, 0.5, 1.0]], false);
    let mut svgs = Vec::new();
    for out in ["a.svg", "b.svg"] {
        let o = pucb(&["plot", "zero.csv", "other.csv", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        svgs.push(std::fs::read_to_string(dir.path().join(out)).unwrap());
    }
    assert_eq!(svgs[0], svgs[1]);
    assert_eq!(svgs[0].matches("<polyline").count(), 2);
    assert!(svgs[0].contains(">zero</text>") && svgs[0].contains(">other</text>"));
    assert!(svgs[0].contains(">episode</text>") && svgs[0].contains(">cumulative regret</text>"));
}

#[test]
fn plot_refuses_truncated_or_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    write_stream(&dir.path().join("cut.csv"), &[&[0.1, 0.1]], true);
    let o = pucb(&["plot", "cut.csv", "--out", "cut.svg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("truncation"));
    assert!(!dir.path().join("cut.svg").exists());
    let o = pucb(&["plot", "cut.csv", "--out", "cut.svg", "--allow-partial"], dir.path());
    assert!(o.status.success());

    std::fs::write(dir.path().join("bad.csv"), "episode,regret\n1,0\n").unwrap();
    let o = pucb(&["plot", "bad.csv", "--out", "bad.svg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schema"));
}

#[test]
fn sweep_then_plot_matches_golden_svg() {
    let dir = tempfile::tempdir().unwrap();
    hard_config(dir.path());
    let o = pucb(
        &["sweep", "--config", "hard.toml", "--epsilons", "10,inf,0.1,1", "--out", "sweep.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("sweep-summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("epsilon,mean_final_regret,std_final_regret,mean_pac_count,replicas\n"));

    let inputs = ["sweep-eps10.csv", "sweep-epsinf.csv", "sweep-eps0.1.csv", "sweep-eps1.csv"];
    let mut args = vec!["plot"];
    args.extend(inputs);
    args.extend(["--out", "sweep.svg", "--title", "Regret by budget"]);
    let o = pucb(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(dir.path().join("sweep.svg")).unwrap();

    let order: Vec<usize> = ["sweep-eps0.1", "sweep-eps1<", "sweep-eps10", "sweep-epsinf"]
        .iter()
        .map(|label| svg.find(label).unwrap_or_else(|| panic!("{label} missing")))
        .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]), "{order:?}");
    assert!(svg.contains("NOISE-FREE"));

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/sweep.svg");
    if std::env::var_os("PUCB_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &svg).unwrap();
    }
    let expected = std::fs::read_to_string(&golden).expect("golden file present");
    assert_eq!(svg, expected);
}

#[test]
fn sweep_rejects_non_private_templates_and_bad_budgets() {
    let dir = tempfile::tempdir().unwrap();
    hard_config(dir.path());
    let o = pucb(&["sweep", "--config", "hard.toml", "--epsilons", "1,0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = pucb(&["sweep", "--config", "hard.toml", "--epsilons", "1", "--noise-free"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
