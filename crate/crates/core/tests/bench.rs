use std::fs;

use saferl::bench::{run_matrix, ExperimentMatrix};

const SMALL: &str = "
envs = goal
algos = ppo, ppo_buffer
seeds = 0, 1
epochs = 3
steps_per_epoch = 300
pretrain_epochs = 1
eval_episodes = 3
";

fn column(csv: &str, name: &str) -> usize {
    csv.lines().next().unwrap().split(',').position(|c| c == name).unwrap()
}

#[test]
fn small_matrix_writes_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let m = ExperimentMatrix::parse_str(SMALL).unwrap();
    let report = run_matrix(&m, Some(dir.path())).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert!(report.cells.iter().all(|c| c.ok()));
    for f in ["learning_curve.csv", "runs.csv", "comparison.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_dir(dir.path().join("cells")).unwrap().count(), 4);

    let rel: Vec<f64> = report.comparison.iter().map(|r| r.rel_cum_failures).collect();
    assert_eq!(rel.len(), 2);
    assert!(rel.iter().all(|r| (0.0..=1.0).contains(r)));

    // aggregate rows equal the mean of the per-seed rows
    let curve = fs::read_to_string(dir.path().join("learning_curve.csv")).unwrap();
    let seed_col = column(&curve, "seed");
    let epoch_col = column(&curve, "epoch");
    let reward_col = column(&curve, "mean_reward");
    let rows: Vec<Vec<&str>> = curve.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for agg in rows.iter().filter(|r| r[seed_col] == "mean") {
        let per_seed: Vec<f64> = rows
            .iter()
            .filter(|r| r[1] == agg[1] && r[epoch_col] == agg[epoch_col] && r[seed_col].parse::<u64>().is_ok())
            .map(|r| r[reward_col].parse().unwrap())
            .collect();
        assert_eq!(per_seed.len(), 2);
        let want = per_seed.iter().sum::<f64>() / 2.0;
        let got: f64 = agg[reward_col].parse().unwrap();
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn matrix_outputs_are_byte_identical_across_runs() {
    let m = ExperimentMatrix::parse_str(SMALL).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_matrix(&m, Some(a.path())).unwrap();
    run_matrix(&m, Some(b.path())).unwrap();
    for f in ["learning_curve.csv", "runs.csv", "comparison.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn ablation_matrix_produces_one_row_per_setting() {
    let text = "
envs = goal
algos = ppo_buffer
seeds = 0
epochs = 2
steps_per_epoch = 200
pretrain_epochs = 0
eval_episodes = 2
ablation = danger_radius
";
    let report = run_matrix(&ExperimentMatrix::parse_str(text).unwrap(), None).unwrap();
    let settings: Vec<&str> = report.ablation.iter().map(|r| r.setting.as_str()).collect();
    assert_eq!(settings.len(), 3);
    assert!(report.cells.iter().all(|c| c.eval.is_some()));
}

#[test]
fn bad_matrix_files_are_rejected() {
    assert!(ExperimentMatrix::parse_str("envs = moon").is_err());
    assert!(ExperimentMatrix::parse_str("seeds = a").is_err());
    assert!(ExperimentMatrix::parse_str("no equals sign").is_err());
}
