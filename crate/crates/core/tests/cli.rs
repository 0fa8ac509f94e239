use std::fs;
use std::process::{Command, Output};

fn saferl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saferl")).args(args).output().unwrap()
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let r = saferl(&[
        "train", "--env", "goal", "--algo", "ppo_buffer", "--epochs", "2", "--steps-per-epoch", "200",
        "--pretrain-epochs", "1", "--seed", "4", "--out", out_s,
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["metrics.csv", "audit.csv", "checkpoint.txt", "config.txt", "buffer.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let ck = out.join("checkpoint.txt");
    let ck_s = ck.to_str().unwrap();
    let e = saferl(&["eval", "--checkpoint", ck_s, "--episodes", "3", "--use-buffer"]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let stdout = String::from_utf8(e.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("episodes,mean_reward,failure_rate,substitutions"));
    assert!(lines.next().unwrap().starts_with("3,"));
    let again = saferl(&["eval", "--checkpoint", ck_s, "--episodes", "3", "--use-buffer"]);
    assert_eq!(stdout, String::from_utf8(again.stdout).unwrap());
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "env = survival\nalgo = ppo_lagrangian\nepochs = 1\nsteps_per_epoch = 100\npretrain_epochs = 0\n").unwrap();
    let out = dir.path().join("run");
    let r = saferl(&[
        "train", "--config", cfg.to_str().unwrap(), "--set", "lagrangian_lr=0.1", "--out", out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let written = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.contains("lagrangian_lr = 0.1"));
    assert!(written.contains("env = survival"));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out_s = out.to_str().unwrap();
    let bad_algo = saferl(&["train", "--algo", "sac", "--out", out_s]);
    assert_eq!(bad_algo.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_algo.stderr).starts_with("error:"));
    let bad_set = saferl(&["train", "--set", "novalue", "--out", out_s]);
    assert_eq!(bad_set.status.code(), Some(2));
    let missing = saferl(&["eval", "--checkpoint", dir.path().join("none.txt").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(5));
    let usage = saferl(&["train", "--epochs", "many"]);
    assert_eq!(usage.status.code(), Some(2));
}
