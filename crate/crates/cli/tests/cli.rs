use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gridprompt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridprompt"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn oracle_prints_shortest_plan() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&gridprompt(&["oracle", "--env", "empty-5x5-random"], dir.path()));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("FFRFF"));
    assert!(out.contains("length 5, reward 0.955"));
}

#[test]
fn run_from_yaml_config_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.yaml"),
        "environment: crossing-9x9\nepisodes: 20\nmax_steps: native\nseed: 5\npolicy:\n  kind: random\n",
    )
    .unwrap();
    for out in ["a", "b"] {
        stdout(&gridprompt(&["run", "--config", "run.yaml", "--out", out], dir.path()));
    }
    for file in ["steps.jsonl", "episodes.csv", "summary.csv", "config.yaml"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let summary = fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
    assert!(summary.starts_with("policy,model,config,episodes,avg_reward,success_rate,parse_failure_rate\nRandom,-,crossing-9x9,20,"));
}

#[test]
fn flags_override_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&gridprompt(
        &["run", "--policy", "oracle", "--env", "2", "--episodes", "3", "--seed", "9", "--out", "o"],
        dir.path(),
    ));
    assert!(out.contains("Oracle on empty-16x16: avg reward 0.757, success 100.0%"), "{out}");
    let episodes = fs::read_to_string(dir.path().join("o/episodes.csv")).unwrap();
    assert_eq!(episodes.lines().count(), 4);
}

#[test]
fn oneshot_grades_a_saved_reply() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("reply.txt"), "<think>east twice, then south</think>\nFFRF").unwrap();
    let out = stdout(&gridprompt(
        &["oneshot", "--policy", "hwbp", "--env", "1", "--reply", "reply.txt", "--out", "os"],
        dir.path(),
    ));
    assert!(out.contains("Nearly complete (plan FFRF, optimal length 5"), "{out}");
    let verdict: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("os/verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["verdict"]["kind"], "nearly_complete");
    assert!(dir.path().join("os/transcript.txt").exists());
}

#[test]
fn train_then_report() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&gridprompt(&["train-rl", "--env", "1", "--steps", "30000", "--out", "rl"], dir.path()));
    let curve = fs::read_to_string(dir.path().join("rl/curve.csv")).unwrap();
    assert!(curve.starts_with("episode,reward,steps,moving_avg\n"));
    assert!(fs::read_to_string(dir.path().join("rl/qtable.txt")).unwrap().starts_with('#'));

    fs::write(
        dir.path().join("rl.yaml"),
        "environment: empty-5x5-random\nepisodes: 10\npolicy:\n  kind: rl_greedy\n  qtable: rl/qtable.txt\n",
    )
    .unwrap();
    stdout(&gridprompt(&["run", "--config", "rl.yaml", "--out", "rl-run"], dir.path()));
    stdout(&gridprompt(&["run", "--policy", "random", "--env", "1", "--episodes", "10", "--out", "rand"], dir.path()));
    let table = stdout(&gridprompt(&["report", "rand", "rl-run/summary.csv", "--out", "report"], dir.path()));
    let random_at = table.find("| Random |").unwrap();
    let rl_at = table.find("| RL | - | 0.955 | 100 |").unwrap();
    assert!(random_at < rl_at, "{table}");
    assert!(dir.path().join("report/report-empty-5x5-random.csv").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.yaml"), "environment: empty-16x16\nlabel: ''\npolicy: { kind: random }\n").unwrap();
    for args in [
        vec!["run", "--config", "bad.yaml"],
        vec!["run", "--policy", "hwbp+sparkles", "--env", "1"],
        vec!["run", "--policy", "random"],
        vec!["run", "--policy", "random", "--env", "1", "--episodes", "0"],
        vec!["oneshot", "--policy", "random", "--env", "1", "--reply", "bad.yaml"],
    ] {
        let o = gridprompt(&args, dir.path());
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty());
    }
}
