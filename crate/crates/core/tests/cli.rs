use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
[synthetic]
n_users = 30
n_items = 12

[gen]
n_train = 2
n_test = 2
seed = 4

[train]
epochs = 3
dim = 4

[plan]
dataset = "bundle"
output = "run"
methods = ["DLCE", "BLCE", "Pop"]
metrics = ["CP@3", "CAR"]
estimate_chi = [0.0, 0.1]

[plan.grids]
gamma = [0.01]
chi = [0.1]

[plan.train]
epochs = 3
dim = 4
"#;

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_causalrank"))
        .current_dir(dir)
        .env("CAUSALRANK_WORKERS", "2")
        .args(["--config", "config.toml"])
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn meta(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path.join("meta.json")).unwrap()).unwrap()
}

#[test]
fn every_subcommand_writes_its_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("config.toml"), CONFIG).unwrap();

    run(dir, &["gen", "--out", "bundle"]);
    assert!(dir.join("bundle").is_dir());

    run(dir, &["train", "--data", "bundle", "--out", "trained", "--method", "dlce", "--chi", "0.05"]);
    assert_eq!(first_line(&dir.join("trained/train_log.csv")), "epoch,mean_triplet_loss,validation_metric");
    assert_eq!(std::fs::read_to_string(dir.join("trained/train_log.csv")).unwrap().lines().count(), 4);
    assert_eq!(meta(&dir.join("trained"))["command"], "train");

    run(dir, &["eval", "--data", "bundle", "--model", "trained", "--out", "scored"]);
    assert_eq!(first_line(&dir.join("scored/eval.csv")), "metric,mean,std,ips_mean,ips_std,chi");

    run(dir, &["compare"]);
    assert_eq!(first_line(&dir.join("run/report.csv")), "method,metric,mean,std,gamma,chi,seed");
    let m = meta(&dir.join("run"));
    assert_eq!(m["command"], "compare");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], m["config_hash"]);

    run(dir, &["sweep-capping", "--out", "caps", "--values", "0.01,0.1"]);
    assert!(first_line(&dir.join("caps/sweep.csv")).starts_with("parameter,value,method"));
    run(dir, &["sweep-beta", "--out", "betas", "--values", "0,1"]);
    run(dir, &["sweep-xi", "--out", "xis", "--values", "0,0.5"]);
    assert_eq!(meta(&dir.join("xis"))["command"], "sweep-xi");

    run(dir, &["estimate", "--out", "est"]);
    assert!(first_line(&dir.join("est/estimates.csv")).starts_with("method,metric,estimator,chi,mae"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("config.toml"), "[gen]\nunknown_key = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_causalrank"))
        .current_dir(dir)
        .args(["--config", "config.toml", "gen", "--out", "b"])
        .output()
        .unwrap();
    assert!(!out.status.success());

    std::fs::write(dir.join("config.toml"), CONFIG).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_causalrank"))
        .current_dir(dir)
        .env("CAUSALRANK_WORKERS", "0")
        .args(["--config", "config.toml", "compare", "--data", "missing"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
