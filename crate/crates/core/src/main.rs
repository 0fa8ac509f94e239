use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use saferl::bench::{run_matrix, write_atomic, ExperimentMatrix};
use saferl::cmdp::DangerThreshold;
use saferl::envs::{make_env, EnvOptions};
use saferl::policy::{load_checkpoint, save_checkpoint, Checkpoint};
use saferl::safety_buffer::{KPolicy, SafetyBuffer};
use saferl::trainer::{evaluate, make_matcher, metrics_csv, AuditEntry, TrainConfig, Trainer};
use saferl::{Error, Result};

#[derive(Parser)]
#[command(name = "saferl", version, about = "Safe PPO with a clustered recovery-action buffer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics, audit log, checkpoint and buffer.
    Train(TrainArgs),
    /// Run an experiment matrix and write CSV artifacts.
    Bench {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved checkpoint with greedy actions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Filter danger states with the buffer saved next to the checkpoint.
        #[arg(long)]
        use_buffer: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Key = value file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    c_hat: Option<f64>,
    #[arg(long)]
    k_exponent: Option<String>,
    #[arg(long)]
    bucket_width: Option<f64>,
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    danger_radius: Option<f64>,
    #[arg(long)]
    rollout_workers: Option<usize>,
    #[arg(long)]
    parallel: bool,
    /// Extra `key=value` overrides; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

impl TrainArgs {
    fn to_config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        let flags: [(&str, Option<String>); 13] = [
            ("env", self.env.clone()),
            ("algo", self.algo.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("steps_per_epoch", self.steps_per_epoch.map(|v| v.to_string())),
            ("c_hat", self.c_hat.map(|v| v.to_string())),
            ("k_exponent", self.k_exponent.clone()),
            ("bucket_width", self.bucket_width.map(|v| v.to_string())),
            ("capacity", self.capacity.map(|v| v.to_string())),
            ("pretrain_epochs", self.pretrain_epochs.map(|v| v.to_string())),
            ("horizon", self.horizon.map(|v| v.to_string())),
            ("danger_radius", self.danger_radius.map(|v| v.to_string())),
            ("rollout_workers", self.rollout_workers.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        if self.parallel {
            cfg.parallel = true;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_outputs(dir: &Path, trainer: &Trainer) -> Result<()> {
    write_atomic(&dir.join("metrics.csv"), &metrics_csv(trainer.history()))?;
    let mut audit = format!("{}\n", AuditEntry::CSV_HEADER);
    for a in trainer.audit_log() {
        audit.push_str(&a.csv_row());
        audit.push('\n');
    }
    write_atomic(&dir.join("audit.csv"), &audit)?;
    let cfg = trainer.config();
    let mut meta = BTreeMap::new();
    meta.insert("config".to_string(), "config.txt".to_string());
    meta.insert("epochs_done".to_string(), trainer.epochs_done().to_string());
    save_checkpoint(
        &dir.join("checkpoint.txt"),
        &Checkpoint {
            params: trainer.params().clone(),
            meta,
        },
    )?;
    write_atomic(&dir.join("config.txt"), &cfg.to_key_values())?;
    if let Some(buffer) = trainer.buffer() {
        let mut snap = Vec::new();
        buffer.write_snapshot(&mut snap)?;
        write_atomic(&dir.join("buffer.txt"), &String::from_utf8_lossy(&snap))?;
    }
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.to_config()?;
    fs::create_dir_all(&args.out)?;
    let mut trainer = Trainer::new(cfg)?;
    let start = std::time::Instant::now();
    while !trainer.is_finished() {
        match trainer.run_epoch() {
            Ok(m) => eprintln!(
                "epoch {:>4}  reward {:>9.3}  failure_rate {:.3}  cum_failures {:>6}  buffer {:>6}  filtered {:>5}  {:>7.1}s",
                m.epoch,
                m.mean_reward,
                m.failure_rate,
                m.cum_failures,
                m.buffer_size,
                m.filtered_actions,
                start.elapsed().as_secs_f64()
            ),
            Err(e) => {
                // keep the last good parameters on disk before reporting
                write_outputs(&args.out, &trainer)?;
                return Err(e);
            }
        }
    }
    write_outputs(&args.out, &trainer)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn eval(checkpoint: &Path, episodes: usize, use_buffer: bool, seed: u64) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let cfg_name = ck.meta.get("config").map_or("config.txt", String::as_str);
    let cfg = TrainConfig::load(&dir.join(cfg_name))?;
    let options = EnvOptions {
        horizon: cfg.horizon,
        danger_radius: cfg.danger_radius,
        layout: cfg.layout.as_deref().map(saferl::envs::Layout::load).transpose()?,
    };
    let mut env = make_env(cfg.env, &options)?;
    if env.spec().obs_dim != ck.params.obs_dim {
        return Err(Error::Config(format!(
            "checkpoint expects observation dimension {}, environment {} provides {}",
            ck.params.obs_dim,
            cfg.env,
            env.spec().obs_dim
        )));
    }
    let buffer = if use_buffer {
        let path = dir.join("buffer.txt");
        let file = fs::File::open(&path)
            .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
        let matcher = make_matcher(&env.spec().action_space, cfg.bucket_width)?;
        let kp: KPolicy = cfg.k_policy;
        let mut b = SafetyBuffer::read_snapshot(BufReader::new(file), kp, matcher)?;
        b.rebuild(seed)?;
        Some(b)
    } else {
        None
    };
    let report = evaluate(
        &ck.params,
        env.as_mut(),
        episodes,
        buffer.as_ref(),
        DangerThreshold::new(cfg.c_hat)?,
        seed,
    )?;
    println!("episodes,mean_reward,failure_rate,substitutions");
    println!(
        "{},{},{},{}",
        report.episodes, report.mean_reward, report.failure_rate, report.substitutions
    );
    Ok(())
}

fn bench(matrix: &Path, out: &Path) -> Result<()> {
    let m = ExperimentMatrix::load(matrix)?;
    let report = run_matrix(&m, Some(out))?;
    let failed = report.cells.iter().filter(|c| !c.ok()).count();
    eprintln!("{} cells, {} failed; wrote {}", report.cells.len(), failed, out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => train(args),
        Command::Bench { matrix, out } => bench(matrix, out),
        Command::Eval {
            checkpoint,
            episodes,
            use_buffer,
            seed,
        } => eval(checkpoint, *episodes, *use_buffer, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidArgument(_) | Error::Usage(_) => 2,
                Error::Config(_) | Error::Parse { .. } => 3,
                Error::Numerical(_) => 4,
                Error::Io(_) => 5,
            })
        }
    }
}
