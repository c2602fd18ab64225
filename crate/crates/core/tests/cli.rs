use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
n_s = 2
seeds = [0, 1]
hidden = [8, 6]

[generator]
num_identities = 30
samples_per_identity = 4
feature_dim = 6
num_classes = 4

[train]
epochs = 4
batch_size = 16
learning_rate = 0.1

[metaloss]
epochs = 1
hidden = 8
embed_dim = 2
"#;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oneshot-unlearn"))
        .args(args)
        .arg("--config")
        .arg(dir.join("exp.toml"))
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn staged_commands_match_run_all() {
    let staged = setup();
    for cmd in ["generate-data", "pretrain", "retrain", "train-metaloss", "unlearn", "evaluate", "report"] {
        let out = cli(staged.path(), &[cmd]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let all = setup();
    let out = cli(all.path(), &["run-all"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("metaunlearn"));
    let read = |d: &Path| std::fs::read(d.join("out").join("summary.csv")).unwrap();
    assert_eq!(read(staged.path()), read(all.path()));
}

#[test]
fn single_seed_and_method_flags() {
    let dir = setup();
    let out = cli(dir.path(), &["evaluate", "--seed", "4", "--method", "neg-grad"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval = std::fs::read_to_string(dir.path().join("out/seed-4/reports/eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 2);
    assert!(eval.lines().nth(1).unwrap().starts_with("neg-grad,4,"));
    assert!(!dir.path().join("out/seed-0").exists());
    assert!(!dir.path().join("out/seed-4/metaloss.json").exists());
}

#[test]
fn ablate_single_axis() {
    let dir = setup();
    let out = cli(dir.path(), &["ablate", "--axis", "inputs", "--seed", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/ablation/inputs.md").exists());
    assert!(!dir.path().join("out/ablation/aux-loss.csv").exists());
}

#[test]
fn errors_and_failed_seeds_set_exit_codes() {
    let dir = setup();
    assert_eq!(cli(dir.path(), &["ablate", "--axis", "nope"]).status.code(), Some(2));
    assert_eq!(cli(dir.path(), &["evaluate", "--method", "nope"]).status.code(), Some(1));
    std::fs::write(dir.path().join("exp.toml"), "bogus = 1\n").unwrap();
    let out = cli(dir.path(), &["run-all"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    // A request larger than the training split fails every seed.
    assert_eq!(cli(dir.path(), &["run-all", "--n-s", "100"]).status.code(), Some(1));
}
