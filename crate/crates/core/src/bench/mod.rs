//! Experiment matrix runner and the comparison metrics derived from it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::safety_buffer::KPolicy;
use crate::trainer::{metrics_csv, Algo, EpochMetrics, EvalReport, TrainConfig, Trainer};

/// Number of trailing epochs averaged for "final" performance.
pub const FINAL_WINDOW: usize = 10;

/// Divides each value by the maximum. All zeros map to all zeros.
pub fn relative_cumulative_failures(cumulative: &[f64]) -> Result<Vec<f64>> {
    if cumulative.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(Error::InvalidArgument("cumulative failures must be finite and non-negative".into()));
    }
    let max = cumulative.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(vec![0.0; cumulative.len()]);
    }
    Ok(cumulative.iter().map(|c| if *c == max { 1.0 } else { c / max }).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum AblationAxis {
    None,
    /// Cluster-count settings, run with the matrix's buffer algorithm.
    KExponent(Vec<KPolicy>),
    /// Environment danger radii; scored by greedy test episodes with the buffer.
    DangerRadius(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentMatrix {
    pub envs: Vec<EnvId>,
    pub algos: Vec<Algo>,
    pub seeds: Vec<u64>,
    pub base: TrainConfig,
    pub ablation: AblationAxis,
    pub eval_episodes: usize,
}

impl Default for ExperimentMatrix {
    fn default() -> Self {
        ExperimentMatrix {
            envs: vec![EnvId::GoalNav],
            algos: vec![Algo::Ppo, Algo::PpoBuffer],
            seeds: vec![0, 1, 2],
            base: TrainConfig::default(),
            ablation: AblationAxis::None,
            eval_episodes: 100,
        }
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl ExperimentMatrix {
    /// Parses a `key = value` file. Matrix keys are `envs`, `algos`, `seeds`,
    /// `ablation` (`none`, `k_exponent`, `danger_radius`), `ablation_values`
    /// and `eval_episodes`; any other key overrides the shared training
    /// configuration.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut m = ExperimentMatrix::default();
        let mut axis = "none".to_string();
        let mut values: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key = value, found {line:?}")))?;
            let wrap = |e: Error| Error::parse(i + 1, e.to_string());
            match k.trim() {
                "envs" => m.envs = split_list(v).map(str::parse).collect::<Result<_>>().map_err(wrap)?,
                "algos" => m.algos = split_list(v).map(str::parse).collect::<Result<_>>().map_err(wrap)?,
                "seeds" => {
                    m.seeds = split_list(v)
                        .map(|s| s.parse().map_err(|_| Error::parse(i + 1, format!("bad seed {s:?}"))))
                        .collect::<Result<_>>()?
                }
                "ablation" => axis = v.trim().to_string(),
                "ablation_values" => values = Some(v.to_string()),
                "eval_episodes" => {
                    m.eval_episodes = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::parse(i + 1, format!("bad episode count {v:?}")))?
                }
                key => m.base.set(key, v).map_err(wrap)?,
            }
        }
        m.ablation = match axis.as_str() {
            "none" => AblationAxis::None,
            "k_exponent" => {
                let v = values.as_deref().unwrap_or("brute, 0.1, 0.333, 0.5, 0.8");
                AblationAxis::KExponent(split_list(v).map(str::parse).collect::<Result<_>>()?)
            }
            "danger_radius" | "danger_threshold" => {
                let v = values.as_deref().unwrap_or("1.5, 2.5, 3.5");
                AblationAxis::DangerRadius(
                    split_list(v)
                        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad danger radius {s:?}"))))
                        .collect::<Result<_>>()?,
                )
            }
            other => return Err(Error::Config(format!("unknown ablation axis '{other}'"))),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.envs.is_empty() || self.algos.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("matrix needs at least one env, algo and seed".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        match &self.ablation {
            AblationAxis::KExponent(v) if v.is_empty() => Err(Error::Config("empty k_exponent sweep".into())),
            AblationAxis::DangerRadius(v) if v.is_empty() => Err(Error::Config("empty danger radius sweep".into())),
            AblationAxis::None => Ok(()),
            _ if !self.algos.iter().any(|a| a.uses_buffer()) => {
                Err(Error::Config("ablations need a buffer algorithm in algos".into()))
            }
            _ => Ok(()),
        }
    }

    /// One training run per cell, in output order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        let buffer_algo = self.algos.iter().copied().find(|a| a.uses_buffer());
        for &env in &self.envs {
            match &self.ablation {
                AblationAxis::None => {
                    for &algo in &self.algos {
                        for &seed in &self.seeds {
                            cells.push(Cell::new(&self.base, env, algo, seed, None));
                        }
                    }
                }
                AblationAxis::KExponent(settings) => {
                    let algo = buffer_algo.expect("validated");
                    for k in settings {
                        for &seed in &self.seeds {
                            let mut c = Cell::new(&self.base, env, algo, seed, Some(k.to_string()));
                            c.config.k_policy = *k;
                            cells.push(c);
                        }
                    }
                }
                AblationAxis::DangerRadius(radii) => {
                    let algo = buffer_algo.expect("validated");
                    for r in radii {
                        for &seed in &self.seeds {
                            let mut c = Cell::new(&self.base, env, algo, seed, Some(r.to_string()));
                            c.config.danger_radius = Some(*r);
                            cells.push(c);
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub env: EnvId,
    pub algo: Algo,
    pub seed: u64,
    /// Ablation setting label, if any.
    pub setting: Option<String>,
    pub config: TrainConfig,
}

impl Cell {
    fn new(base: &TrainConfig, env: EnvId, algo: Algo, seed: u64, setting: Option<String>) -> Self {
        Cell {
            env,
            algo,
            seed,
            setting,
            config: TrainConfig {
                env,
                algo,
                seed,
                ..base.clone()
            },
        }
    }

    pub fn name(&self) -> String {
        match &self.setting {
            Some(s) => format!("{}_{}_{}_s{}", self.env, self.algo, s.replace('/', "over"), self.seed),
            None => format!("{}_{}_s{}", self.env, self.algo, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub metrics: Vec<EpochMetrics>,
    pub eval: Option<EvalReport>,
    /// `ok` or the error message.
    pub status: String,
}

impl CellResult {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    /// Mean of `f` over the last `FINAL_WINDOW` epochs.
    pub fn final_mean(&self, f: impl Fn(&EpochMetrics) -> f64) -> f64 {
        let tail = &self.metrics[self.metrics.len().saturating_sub(FINAL_WINDOW)..];
        tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn cum_failures(&self) -> u64 {
        self.metrics.last().map_or(0, |m| m.cum_failures)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub env: EnvId,
    pub algo: Algo,
    pub final_reward: f64,
    pub final_failure_rate: f64,
    pub cum_failures: f64,
    pub rel_cum_failures: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub env: EnvId,
    pub setting: String,
    pub reward: f64,
    pub failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixReport {
    pub cells: Vec<CellResult>,
    pub comparison: Vec<ComparisonRow>,
    pub ablation: Vec<AblationRow>,
}

pub fn run_cell(cell: &Cell, eval_episodes: usize, with_eval: bool) -> CellResult {
    let run = || -> Result<(Vec<EpochMetrics>, Option<EvalReport>)> {
        let mut trainer = Trainer::new(cell.config.clone())?;
        trainer.run()?;
        let eval = if with_eval {
            Some(trainer.evaluate(eval_episodes, cell.algo.uses_buffer())?)
        } else {
            None
        };
        Ok((trainer.history().to_vec(), eval))
    };
    match run() {
        Ok((metrics, eval)) => CellResult {
            cell: cell.clone(),
            metrics,
            eval,
            status: "ok".into(),
        },
        Err(e) => CellResult {
            cell: cell.clone(),
            metrics: Vec::new(),
            eval: None,
            status: e.to_string().replace([',', '\n'], ";"),
        },
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs every cell (failed cells are recorded, not fatal) and, when `out` is
/// given, writes per-cell metrics plus the merged CSVs.
pub fn run_matrix(matrix: &ExperimentMatrix, out: Option<&Path>) -> Result<MatrixReport> {
    matrix.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir.join("cells"))?;
    }
    let with_eval = !matches!(matrix.ablation, AblationAxis::KExponent(_));
    let mut results = Vec::new();
    for cell in matrix.cells() {
        let r = run_cell(&cell, matrix.eval_episodes, with_eval);
        if let Some(dir) = out {
            let cell_dir = dir.join("cells").join(cell.name());
            fs::create_dir_all(&cell_dir)?;
            write_atomic(&cell_dir.join("metrics.csv"), &metrics_csv(&r.metrics))?;
        }
        results.push(r);
    }
    let report = MatrixReport {
        comparison: comparison_rows(matrix, &results)?,
        ablation: ablation_rows(matrix, &results),
        cells: results,
    };
    if let Some(dir) = out {
        write_atomic(&dir.join("learning_curve.csv"), &learning_curve_csv(&report.cells))?;
        write_atomic(&dir.join("runs.csv"), &runs_csv(&report.cells))?;
        if matches!(matrix.ablation, AblationAxis::None) {
            write_atomic(&dir.join("comparison.csv"), &comparison_csv(&report.comparison))?;
        } else {
            write_atomic(&dir.join("ablation.csv"), &ablation_csv(&report.ablation))?;
        }
    }
    Ok(report)
}

fn comparison_rows(matrix: &ExperimentMatrix, results: &[CellResult]) -> Result<Vec<ComparisonRow>> {
    if !matches!(matrix.ablation, AblationAxis::None) {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for &env in &matrix.envs {
        let mut env_rows = Vec::new();
        for &algo in &matrix.algos {
            let runs: Vec<&CellResult> = results
                .iter()
                .filter(|r| r.ok() && r.cell.env == env && r.cell.algo == algo)
                .collect();
            if runs.is_empty() {
                continue;
            }
            let avg = |f: &dyn Fn(&CellResult) -> f64| mean(&runs.iter().map(|r| f(r)).collect::<Vec<_>>());
            env_rows.push(ComparisonRow {
                env,
                algo,
                final_reward: avg(&|r| r.final_mean(|m| m.mean_reward)),
                final_failure_rate: avg(&|r| r.final_mean(|m| m.failure_rate)),
                cum_failures: avg(&|r| r.cum_failures() as f64),
                rel_cum_failures: 0.0,
            });
        }
        let rel = relative_cumulative_failures(&env_rows.iter().map(|r| r.cum_failures).collect::<Vec<_>>())?;
        for (row, rel) in env_rows.iter_mut().zip(rel) {
            row.rel_cum_failures = rel;
        }
        rows.extend(env_rows);
    }
    Ok(rows)
}

fn ablation_rows(matrix: &ExperimentMatrix, results: &[CellResult]) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for &env in &matrix.envs {
        let mut settings: Vec<&str> = Vec::new();
        for r in results.iter().filter(|r| r.cell.env == env) {
            if let Some(s) = r.cell.setting.as_deref() {
                if !settings.contains(&s) {
                    settings.push(s);
                }
            }
        }
        for s in settings {
            let runs: Vec<&CellResult> = results
                .iter()
                .filter(|r| r.ok() && r.cell.env == env && r.cell.setting.as_deref() == Some(s))
                .collect();
            if runs.is_empty() {
                continue;
            }
            let (reward, failure_rate): (Vec<f64>, Vec<f64>) = match matrix.ablation {
                AblationAxis::DangerRadius(_) => runs
                    .iter()
                    .map(|r| {
                        let e = r.eval.expect("evaluated");
                        (e.mean_reward, e.failure_rate)
                    })
                    .unzip(),
                _ => runs
                    .iter()
                    .map(|r| {
                        let all = mean(&r.metrics.iter().map(|m| m.failure_rate).collect::<Vec<_>>());
                        (r.final_mean(|m| m.mean_reward), all)
                    })
                    .unzip(),
            };
            rows.push(AblationRow {
                env,
                setting: s.to_string(),
                reward: mean(&reward),
                failure_rate: mean(&failure_rate),
            });
        }
    }
    rows
}

pub const LEARNING_CURVE_HEADER: &str = "env,algo,seed,epoch,mean_reward,failure_rate,cum_failures,buffer_size,filtered_actions";

/// Per-run rows followed by `seed=mean` and `seed=std` aggregate rows for
/// every (env, algo[, setting], epoch) group.
pub fn learning_curve_csv(results: &[CellResult]) -> String {
    let mut s = format!("{LEARNING_CURVE_HEADER}\n");
    let label = |c: &Cell| match &c.setting {
        Some(x) => format!("{}[{}]", c.algo, x),
        None => c.algo.to_string(),
    };
    for r in results {
        for m in &r.metrics {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.cell.env,
                label(&r.cell),
                r.cell.seed,
                m.epoch,
                m.mean_reward,
                m.failure_rate,
                m.cum_failures,
                m.buffer_size,
                m.filtered_actions
            );
        }
    }
    let mut groups: Vec<(EnvId, String)> = Vec::new();
    for r in results.iter().filter(|r| r.ok()) {
        let key = (r.cell.env, label(&r.cell));
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    for (env, algo) in groups {
        let runs: Vec<&CellResult> = results
            .iter()
            .filter(|r| r.ok() && r.cell.env == env && label(&r.cell) == algo)
            .collect();
        let epochs = runs.iter().map(|r| r.metrics.len()).min().unwrap_or(0);
        for e in 0..epochs {
            let col = |f: fn(&EpochMetrics) -> f64| runs.iter().map(|r| f(&r.metrics[e])).collect::<Vec<f64>>();
            let cols = [
                col(|m| m.mean_reward),
                col(|m| m.failure_rate),
                col(|m| m.cum_failures as f64),
                col(|m| m.buffer_size as f64),
                col(|m| m.filtered_actions as f64),
            ];
            for (tag, agg) in [("mean", mean as fn(&[f64]) -> f64), ("std", std_dev)] {
                let vals: Vec<String> = cols.iter().map(|c| agg(c).to_string()).collect();
                let _ = writeln!(s, "{env},{algo},{tag},{e},{}", vals.join(","));
            }
        }
    }
    s
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("env,algo,final_reward,final_failure_rate,cum_failures,rel_cum_failures\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.env, r.algo, r.final_reward, r.final_failure_rate, r.cum_failures, r.rel_cum_failures
        );
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("env,setting,reward,failure_rate\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.env, r.setting, r.reward, r.failure_rate);
    }
    s
}

pub fn runs_csv(results: &[CellResult]) -> String {
    let mut s = String::from("env,algo,setting,seed,epochs,cum_failures,eval_reward,eval_failure_rate,status\n");
    for r in results {
        let (er, ef) = r
            .eval
            .map_or((String::new(), String::new()), |e| (e.mean_reward.to_string(), e.failure_rate.to_string()));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.cell.env,
            r.cell.algo,
            r.cell.setting.as_deref().unwrap_or(""),
            r.cell.seed,
            r.metrics.len(),
            r.cum_failures(),
            er,
            ef,
            r.status
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_failures() {
        let r = relative_cumulative_failures(&[500.0, 145.0]).unwrap();
        assert_eq!(r[0], 1.0);
        assert!((r[1] - 0.29).abs() < 1e-12);
        assert_eq!(relative_cumulative_failures(&[7.0]).unwrap(), vec![1.0]);
        assert_eq!(relative_cumulative_failures(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(relative_cumulative_failures(&[-1.0]).is_err());
    }

    #[test]
    fn matrix_file() {
        let m = ExperimentMatrix::parse_str(
            "envs = goal, survival\nalgos = ppo_buffer\nseeds = 4, 5\nablation = k_exponent\nepochs = 3\npretrain_epochs = 1\n",
        )
        .unwrap();
        assert_eq!(m.base.epochs, 3);
        assert_eq!(m.cells().len(), 2 * 5 * 2);
        assert!(ExperimentMatrix::parse_str("seeds = 1, 1").is_err());
        assert!(ExperimentMatrix::parse_str("algos = ppo\nablation = k_exponent").is_err());
        assert!(ExperimentMatrix::parse_str("ablation = sideways").is_err());
    }
}
