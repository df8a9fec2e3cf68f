use std::path::PathBuf;
use std::process::Command;

fn lsiq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lsiq"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lsiq-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn write_config(dir: &PathBuf) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("config.json");
    std::fs::write(&path, r#"{"total_steps": 2000, "eval_every": 1000, "eval_episodes": 20}"#).unwrap();
    path
}

#[test]
fn train_writes_metrics_and_checkpoint_then_eval_scores_it() {
    let dir = scratch("train");
    let config = write_config(&dir);
    let out = lsiq()
        .args(["train", "--seed", "3", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,discounted_return,success_rate,q_mean_absorbing,q_mean_nonabsorbing,loss,idm_accuracy"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(',')), "idm_accuracy must be empty without --lfo");

    let eval = lsiq()
        .arg("eval")
        .arg("--checkpoint")
        .arg(dir.join("checkpoint.json"))
        .output()
        .unwrap();
    assert!(eval.status.success());
    let result: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(result["success_rate"].as_f64().unwrap() >= 0.0);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn lfo_training_reports_idm_accuracy() {
    let dir = scratch("lfo");
    let config = write_config(&dir);
    let out = lsiq().arg("train").arg("--lfo").arg("--config").arg(&config).arg("--out").arg(&dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert!(metrics.lines().skip(1).all(|r| !r.ends_with(',')));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn collect_in_observation_mode_hides_actions() {
    let dir = scratch("collect");
    let out = lsiq().args(["collect", "--lfo", "--out"]).arg(&dir).output().unwrap();
    assert!(out.status.success());
    let demos = std::fs::read_to_string(dir.join("demos.jsonl")).unwrap();
    assert!(!demos.is_empty());
    for line in demos.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("a").is_none());
        assert!(v.get("s_next").is_some());
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn expert_command_saves_policy() {
    let dir = scratch("expert");
    let out = lsiq().args(["expert", "--out"]).arg(&dir).output().unwrap();
    assert!(out.status.success());
    assert!(dir.join("expert.json").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_passes() {
    let out = lsiq().args(["verify", "--seed", "1"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().any(|l| l.starts_with("PASS")));
    assert!(!text.lines().any(|l| l.starts_with("FAIL")));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = scratch("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("config.json");
    std::fs::write(&path, r#"{"total_step": 10}"#).unwrap();
    let out = lsiq().arg("train").arg("--config").arg(&path).arg("--out").arg(&dir).output().unwrap();
    assert!(!out.status.success());
    std::fs::remove_dir_all(&dir).unwrap();
}
