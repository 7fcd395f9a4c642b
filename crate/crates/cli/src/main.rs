//! `closedloop`: generate scenario suites, pre-train, post-train, evaluate
//! and plot episodes.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use closedloop::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use closedloop::config::ExperimentConfig;
use closedloop::env::EnvConfig;
use closedloop::il::{build_demonstrations, pretrain, save_demonstrations, DemonstrationSample};
use closedloop::metrics::{run_benchmark, save_episode_logs, Driver, EpisodeLog};
use closedloop::policy::Policy;
use closedloop::rl::trainer::LogRow;
use closedloop::rl::Trainer;
use closedloop::scenario::Scenario;
use closedloop::suite::{generate_suite, load_suite};
use closedloop::svg::render_episode;
use closedloop::synth::Template;

#[derive(Parser)]
#[command(name = "closedloop", version, about = "Closed-loop driving policy training and evaluation")]
struct Cli {
    /// Root directory for run directories.
    #[arg(long, env = "CLOSEDLOOP_RUNS", default_value = "runs", global = true)]
    runs: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scenario suite with a manifest.
    Gen(GenArgs),
    /// Imitation pre-training; writes the stage-2 checkpoint.
    Pretrain(PretrainArgs),
    /// RL/IL post-training from a stage-2 checkpoint.
    Train(TrainArgs),
    /// Closed-loop evaluation over a suite.
    Eval(EvalArgs),
    /// Render an episode log as an SVG trace plot.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated template names, or `all`.
    #[arg(long, default_value = "all")]
    template: String,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Config whose environment settings validate the generated clips.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory name under the runs root.
    #[arg(long, default_value = "pretrain")]
    run: String,
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Stage-2 checkpoint to start from.
    #[arg(long = "from", required_unless_present = "resume")]
    from: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    run: String,
    /// Stop once this cycle is reached. The learning-rate schedule still
    /// spans `rl.cycles` from the config, so a run can be split and resumed.
    #[arg(long)]
    cycles: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Continue from the latest checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
    /// Keep a checkpoint every N cycles (the final one is always kept).
    #[arg(long, default_value_t = 1)]
    checkpoint_every: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "expert", conflicts_with = "expert")]
    ckpt: Option<PathBuf>,
    /// Drive with exact expert playback instead of a policy.
    #[arg(long)]
    expert: bool,
    /// Suite manifest; defaults to the config's evaluation suite.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    log: PathBuf,
    out: PathBuf,
}

/// Marks errors that stem from bad input rather than a failed run.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use closedloop::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io { .. }
                | E::Parse { .. }
                | E::Schema { .. }
                | E::InvalidConfig(_)
                | E::InvalidGrid(_)
                | E::VersionMismatch(_)
                | E::EmptyScenarioPool => 2,
                _ => 3,
            };
        }
    }
    3
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn load_manifest(path: &Path) -> Result<Vec<Arc<Scenario>>> {
    load_suite(path).with_context(|| format!("loading suite manifest {}", path.display()))
}

fn create_run_dir(runs: &Path, name: &str) -> Result<PathBuf> {
    let dir = runs.join(name);
    fs::create_dir_all(dir.join("checkpoints")).with_context(|| format!("creating run directory {}", dir.display()))?;
    Ok(dir)
}

fn demos_for(pool: &[Arc<Scenario>], cfg: &ExperimentConfig) -> Vec<DemonstrationSample> {
    pool.iter()
        .flat_map(|s| build_demonstrations(s, &cfg.env, &cfg.policy.features))
        .collect()
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let templates: Vec<Template> = if a.template == "all" {
        Template::ALL.to_vec()
    } else {
        a.template
            .split(',')
            .map(|t| t.trim().parse::<Template>().map_err(|e| usage(format!("--template: {e}"))))
            .collect::<Result<_>>()?
    };
    let env = match &a.config {
        Some(p) => load_config(p)?.env,
        None => EnvConfig::default(),
    };
    let m = generate_suite(&a.out, a.seed, &templates, a.count, &env)?;
    println!("wrote {} scenarios to {}", m.entries.len(), a.out.display());
    Ok(())
}

fn cmd_pretrain(runs: &Path, a: PretrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(steps) = a.steps {
        cfg.pretrain.steps = steps;
    }
    let pool = load_manifest(&cfg.suite.train_manifest)?;
    let dir = create_run_dir(runs, &a.run)?;
    cfg.save(dir.join("config.toml"))?;

    let demos = demos_for(&pool, &cfg);
    save_demonstrations(dir.join("demos.jsonl"), &demos)?;
    log::info!("{} demonstrations from {} clips", demos.len(), pool.len());

    let mut policy = Policy::init(cfg.policy.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.pretrain.seed));
    let log_path = dir.join("pretrain_log.csv");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    writeln!(log, "step,loss")?;
    let mut rows = Vec::new();
    let (adam, _) = pretrain(&demos, &mut policy, &cfg.pretrain, |step, loss| {
        rows.push(format!("{step},{loss}"));
        if step % 100 == 0 {
            log::info!("pretrain step {step} loss {loss:.5}");
        }
    })?;
    for r in rows {
        writeln!(log, "{r}")?;
    }
    let ckpt = Checkpoint {
        adam,
        ..Checkpoint::new(policy)
    };
    let path = dir.join("checkpoints").join("stage2.ckpt");
    save_checkpoint(&path, &ckpt)?;
    println!("stage-2 checkpoint: {}", path.display());
    Ok(())
}

fn latest_checkpoint(dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    let mut best = None;
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(None);
    };
    for e in entries {
        let p = e?.path();
        let cycle = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("cycle_"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(c) = cycle {
            if best.as_ref().is_none_or(|(b, _)| c > *b) {
                best = Some((c, p));
            }
        }
    }
    Ok(best)
}

fn cmd_train(runs: &Path, a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(w) = a.workers {
        cfg.rl.workers = w;
    }
    if a.checkpoint_every == 0 {
        bail!(usage("--checkpoint-every must be positive"));
    }
    let pool = load_manifest(&cfg.suite.train_manifest)?;
    let demos = demos_for(&pool, &cfg);
    let dir = create_run_dir(runs, &a.run)?;
    let ckpt_dir = dir.join("checkpoints");
    let log_path = dir.join("train_log.csv");

    let mut trainer = if a.resume {
        let Some((_, path)) = latest_checkpoint(&ckpt_dir)? else {
            bail!(usage(format!("nothing to resume in {}", ckpt_dir.display())));
        };
        let ckpt = load_checkpoint(&path, Some(&cfg.policy))?;
        log::info!("resuming from {}", path.display());
        let t = Trainer::resume(cfg.rl.clone(), cfg.env, ckpt, pool, demos)?;
        // drop log rows written after the checkpoint
        let text = fs::read_to_string(&log_path).unwrap_or_default();
        let mut kept: Vec<&str> = vec![LogRow::HEADER];
        kept.extend(text.lines().skip(1).filter(|l| {
            l.split(',').next().and_then(|c| c.parse::<u64>().ok()).is_some_and(|c| c < t.state.cycle)
        }));
        fs::write(&log_path, kept.join("\n") + "\n")?;
        t
    } else {
        let from = a.from.as_ref().expect("clap enforces --from");
        let stage2 = load_checkpoint(from, Some(&cfg.policy))?;
        cfg.save(dir.join("config.toml"))?;
        fs::write(&log_path, format!("{}\n", LogRow::HEADER))?;
        Trainer::new(cfg.rl.clone(), cfg.env, stage2.policy, pool, demos)?
    };

    let mut log = fs::OpenOptions::new().append(true).open(&log_path)?;
    let stop = a.cycles.unwrap_or(cfg.rl.cycles);
    while trainer.state.cycle < stop {
        let rows = trainer.training_cycle()?;
        for r in &rows {
            writeln!(log, "{}", r.to_csv())?;
        }
        log.flush()?;
        let c = trainer.state.cycle;
        let rl_rows: Vec<&LogRow> = rows.iter().filter(|r| r.phase == "rl").collect();
        let mean = |f: fn(&LogRow) -> f64| rl_rows.iter().map(|r| f(r)).sum::<f64>() / rl_rows.len().max(1) as f64;
        log::info!(
            "cycle {c}: ppo {:.4} value {:.4} clip_x {:.3} clip_y {:.3}",
            mean(|r| r.ppo),
            mean(|r| r.value),
            mean(|r| r.clip_frac_x),
            mean(|r| r.clip_frac_y)
        );
        if c % a.checkpoint_every == 0 || c == stop {
            save_checkpoint(ckpt_dir.join(format!("cycle_{c:04}.ckpt")), &trainer.checkpoint())?;
        }
    }
    println!("trained {} cycles in {}", trainer.state.cycle, dir.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    let suite_path = match (&a.suite, &cfg) {
        (Some(s), _) => s.clone(),
        (None, Some(c)) => c.suite.eval_manifest.clone(),
        (None, None) => bail!(usage("either --suite or --config is required")),
    };
    let suite = load_manifest(&suite_path)?;
    let env = cfg.as_ref().map(|c| c.env).unwrap_or_default();
    let workers = a.workers.or(cfg.as_ref().map(|c| c.eval.workers)).unwrap_or(1);
    let policy = match &a.ckpt {
        Some(p) => Some(load_checkpoint(p, cfg.as_ref().map(|c| &c.policy))?.policy),
        None => None,
    };
    let driver = match &policy {
        Some(p) => Driver::Greedy(p),
        None => Driver::Expert,
    };
    let (report, logs) = run_benchmark(driver, &suite, &env, workers)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    report.save(&a.out)?;
    save_episode_logs(a.out.join("episodes"), &logs)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let log = EpisodeLog::load(&a.log)?;
    fs::write(&a.out, render_episode(&log)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Pretrain(a) => cmd_pretrain(&cli.runs, a),
        Cmd::Train(a) => cmd_train(&cli.runs, a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Replay(a) => cmd_replay(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
