//! `sgpo`: train policies, run the oracle check suites, and demo the
//! sparsifier.
//!
//! Exit status is 0 on success, 1 on runtime failure or a failing check and
//! 2 on bad flags or configuration.

mod config;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sgpo_core::checks::{random_modular, run_suite, synthetic_ground, CheckOptions, Suite};
use sgpo_core::env::{GridInstance, RewardMode, SmdpSpec, StartDistribution, DEFAULT_LAMBDA};
use sgpo_core::metrics::write_csv;
use sgpo_core::policy::Checkpoint;
use sgpo_core::sparsifier::{sparsify, SparsifyConfig, SubmodularityGraph};
use sgpo_core::trainer::{
    train_with_observer, Algorithm, PolicyKind, TrainConfig, DEFAULT_ALPHA,
    DEFAULT_CRITIC_LEARNING_RATE, DEFAULT_ROLLOUTS,
};
use sgpo_core::StateKey;

use crate::config::{ConfigFile, Manifest};

#[derive(Debug, Parser)]
#[command(
    name = "sgpo",
    version,
    about = "Submodular-reward policy optimization on grid worlds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy and write metrics, checkpoint and manifest.
    Train(Box<TrainArgs>),
    /// Run the brute-force check suites.
    Check(CheckArgs),
    /// Sparsify a synthetic or file-backed state set and report the result.
    SparsifyDemo(DemoArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Reward mode: graph-m, graph-srl, entropy-m or entropy-srl.
    #[arg(long)]
    env: Option<String>,
    /// sgpo (sparsified) or subpo (all steps).
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Rollouts per epoch.
    #[arg(long)]
    rollouts: Option<usize>,
    /// Step size.
    #[arg(long)]
    alpha: Option<f64>,
    /// Revisit penalty for graph-m.
    #[arg(long)]
    lambda: Option<f64>,
    /// Count every visit in graph-srl instead of distinct cells.
    #[arg(long)]
    additive: bool,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Grid side length.
    #[arg(long)]
    grid: Option<u32>,
    /// tabular or mlp.
    #[arg(long)]
    policy: Option<String>,
    /// Hidden width of the MLP policy.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start cell as `row,col`, or `uniform`.
    #[arg(long)]
    start: Option<String>,
    /// Instance file; generated from the seed when absent.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "critic-lr")]
    critic_lr: Option<f64>,
    /// Weight score terms by return minus critic value.
    #[arg(long = "advantage-weighted")]
    advantage_weighted: bool,
    /// Fill the wallclock_ms column (makes reruns differ).
    #[arg(long = "record-wallclock")]
    record_wallclock: bool,
    /// key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Suite to run (repeatable); all suites when omitted.
    #[arg(long)]
    suite: Vec<Suite>,
    /// Grid side for the gradient suite.
    #[arg(long, default_value_t = 3)]
    grid: u32,
    /// Horizon for the gradient suite.
    #[arg(long, default_value_t = 4)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DemoArgs {
    /// Number of synthetic states with random modular weights.
    #[arg(long, conflicts_with = "instance")]
    n: Option<usize>,
    /// Instance file whose cells and weights form the ground set.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value_t = 8.0)]
    r: f64,
    #[arg(long, default_value_t = 8.0)]
    c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write every edge of the submodularity graph as CSV.
    #[arg(long = "dump-graph")]
    dump_graph: Option<PathBuf>,
}

/// Bad flags or configuration; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl fmt::Display) -> anyhow::Error {
    Usage(msg.to_string()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(*args),
        Command::Check(args) => cmd_check(args),
        Command::SparsifyDemo(args) => cmd_sparsify_demo(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// A setting taken from the flag, else the config file, else `default`.
fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T>
where
    T::Err: fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|e| usage(format!("config key '{key}': {e}"))),
        None => Ok(default),
    }
}

fn pick_bool(flag: bool, file: &ConfigFile, key: &str) -> Result<bool> {
    if flag {
        return Ok(true);
    }
    pick(None, file, key, false)
}

fn parse_start(raw: &str) -> Result<StartDistribution> {
    if raw == "uniform" {
        return Ok(StartDistribution::Uniform);
    }
    let (r, c) = raw
        .split_once(',')
        .ok_or_else(|| usage(format!("start must be 'row,col' or 'uniform', got '{raw}'")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<u32>()
            .map_err(|e| usage(format!("start '{raw}': {e}")))
    };
    Ok(StartDistribution::Fixed(StateKey::new(
        parse(r)?,
        parse(c)?,
    )))
}

fn describe_start(start: StartDistribution) -> String {
    match start {
        StartDistribution::Uniform => "uniform".into(),
        StartDistribution::Fixed(s) => format!("{},{}", s.row, s.col),
    }
}

struct ResolvedTrain {
    cfg: TrainConfig,
    lambda: f64,
    additive: bool,
    hidden: usize,
    r: f64,
    c: f64,
    instance: GridInstance,
    instance_source: Option<PathBuf>,
    out: PathBuf,
}

fn resolve_train(args: TrainArgs) -> Result<ResolvedTrain> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => ConfigFile::default(),
    };
    let out: PathBuf = match args.out.or_else(|| file.get("out").map(PathBuf::from)) {
        Some(o) => o,
        None => return Err(usage("--out is required")),
    };
    let env_name: String = pick(args.env, &file, "env", "graph-srl".to_string())?;
    let algo: String = pick(args.algo, &file, "algo", "sgpo".to_string())?;
    let lambda = pick(args.lambda, &file, "lambda", DEFAULT_LAMBDA)?;
    let additive = pick_bool(args.additive, &file, "additive")?;
    let grid = pick(args.grid, &file, "grid", 10)?;
    let hidden = pick(
        args.hidden,
        &file,
        "hidden",
        sgpo_core::policy::DEFAULT_HIDDEN,
    )?;
    let policy_name: String = pick(args.policy, &file, "policy", "tabular".to_string())?;
    let r = pick(args.r, &file, "r", 8.0)?;
    let c = pick(args.c, &file, "c", 8.0)?;
    let start_raw: String = pick(args.start, &file, "start", "0,0".to_string())?;
    let seed = pick(args.seed, &file, "seed", 0)?;

    let mut mode: RewardMode = env_name.parse().map_err(usage)?;
    match &mut mode {
        RewardMode::GraphM { lambda: l } => *l = lambda,
        RewardMode::GraphSrl { additive: a } => *a = additive,
        _ => {}
    }
    let policy = match policy_name.parse::<PolicyKind>().map_err(usage)? {
        PolicyKind::Mlp { .. } => PolicyKind::Mlp { hidden },
        p => p,
    };
    // Validate r and c even for subpo so that typos never pass silently.
    let sparsify_cfg = SparsifyConfig::new(r, c, 0).map_err(usage)?;
    let algorithm = match algo.as_str() {
        "sgpo" => Algorithm::Sgpo(sparsify_cfg),
        "subpo" => Algorithm::Subpo,
        other => {
            return Err(usage(format!(
                "unknown algo '{other}' (expected sgpo or subpo)"
            )))
        }
    };
    let env = SmdpSpec {
        grid_size: grid,
        horizon: pick(args.horizon, &file, "horizon", 64)?,
        start: parse_start(&start_raw)?,
        mode,
        ..SmdpSpec::default()
    };
    let cfg = TrainConfig {
        epochs: pick(args.epochs, &file, "epochs", 300)?,
        alpha: pick(args.alpha, &file, "alpha", DEFAULT_ALPHA)?,
        rollouts: pick(args.rollouts, &file, "rollouts", DEFAULT_ROLLOUTS)?,
        seed,
        env,
        policy,
        algorithm,
        critic_learning_rate: pick(
            args.critic_lr,
            &file,
            "critic-lr",
            DEFAULT_CRITIC_LEARNING_RATE,
        )?,
        advantage_weighted: pick_bool(args.advantage_weighted, &file, "advantage-weighted")?,
        record_wallclock: pick_bool(args.record_wallclock, &file, "record-wallclock")?,
    };
    cfg.validate().map_err(usage)?;

    let instance_source = args
        .instance
        .or_else(|| file.get("instance").map(PathBuf::from));
    let instance = match &instance_source {
        Some(path) => {
            let f =
                File::open(path).with_context(|| format!("opening instance {}", path.display()))?;
            GridInstance::read(BufReader::new(f))
                .with_context(|| format!("reading instance {}", path.display()))?
        }
        None => GridInstance::generate(grid, seed)?,
    };
    if instance.grid_size() != grid {
        return Err(usage(format!(
            "instance grid size {} does not match --grid {grid}",
            instance.grid_size()
        )));
    }
    Ok(ResolvedTrain {
        cfg,
        lambda,
        additive,
        hidden,
        r,
        c,
        instance,
        instance_source,
        out,
    })
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let run = resolve_train(args)?;
    let cfg = &run.cfg;
    fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;

    // The instance used is always stored with the run so the manifest alone
    // reproduces it.
    let instance_path = run.out.join("instance.txt");
    run.instance
        .write(BufWriter::new(File::create(&instance_path)?))
        .with_context(|| format!("writing {}", instance_path.display()))?;

    let outcome = train_with_observer(cfg, &run.instance, |m| {
        if (m.epoch + 1) % 50 == 0 || m.epoch + 1 == cfg.epochs {
            eprintln!(
                "epoch {:>5}  objective {:.4}  kept {:.1}",
                m.epoch + 1,
                m.objective,
                m.kept_states
            );
        }
    })?;

    let metrics_path = run.out.join("metrics.csv");
    write_file(&metrics_path, |w| {
        write_csv(w, &outcome.metrics).map_err(Into::into)
    })?;
    let checkpoint_path = run.out.join("policy.ckpt");
    let ck = Checkpoint {
        policy: outcome.policy,
        critic: Some(outcome.critic),
    };
    write_file(&checkpoint_path, |w| ck.write(w).map_err(Into::into))?;

    let mut m = Manifest::default();
    m.set("version", env!("CARGO_PKG_VERSION"));
    m.set("env", cfg.env.mode.name());
    m.set("algo", cfg.algorithm.name());
    m.set("epochs", cfg.epochs);
    m.set("horizon", cfg.env.horizon);
    m.set("rollouts", cfg.rollouts);
    m.set("alpha", cfg.alpha);
    m.set("lambda", run.lambda);
    m.set("additive", run.additive);
    m.set("r", run.r);
    m.set("c", run.c);
    m.set("grid", cfg.env.grid_size);
    m.set("policy", cfg.policy.name());
    m.set("hidden", run.hidden);
    m.set("seed", cfg.seed);
    m.set("start", describe_start(cfg.env.start));
    m.set("instance", instance_path.display());
    m.set("critic-lr", cfg.critic_learning_rate);
    m.set("advantage-weighted", cfg.advantage_weighted);
    m.set("record-wallclock", cfg.record_wallclock);
    m.set("out", run.out.display());
    m.set("metrics", metrics_path.display());
    m.set("checkpoint", checkpoint_path.display());
    if let Some(src) = &run.instance_source {
        m.set("# instance copied from", src.display());
    }
    let manifest_path = run.out.join("manifest.txt");
    write_file(&manifest_path, |w| Ok(w.write_all(m.render().as_bytes())?))?;

    println!(
        "wrote {} epochs to {}",
        outcome.metrics.len(),
        run.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    body(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode> {
    let suites = if args.suite.is_empty() {
        Suite::ALL.to_vec()
    } else {
        args.suite
    };
    let opts = CheckOptions {
        grid: args.grid,
        horizon: args.horizon,
        seed: args.seed,
    };
    if opts.grid == 0 {
        return Err(usage("--grid must be >= 1"));
    }
    let mut all_passed = true;
    for suite in suites {
        let report = run_suite(suite, &opts)?;
        all_passed &= report.passed;
        println!("{report}");
    }
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_sparsify_demo(args: DemoArgs) -> Result<ExitCode> {
    let cfg = SparsifyConfig::new(args.r, args.c, args.seed).map_err(usage)?;
    let (ground, oracle) = match (&args.instance, args.n) {
        (Some(path), _) => {
            let f =
                File::open(path).with_context(|| format!("opening instance {}", path.display()))?;
            let inst = GridInstance::read(BufReader::new(f))?;
            let g = inst.grid_size();
            let ground = (0..g)
                .flat_map(|r| (0..g).map(move |c| StateKey::new(r, c)))
                .collect();
            (ground, inst.node_function())
        }
        (None, Some(0)) => return Err(usage("--n must be >= 1")),
        (None, Some(n)) => {
            let ground = synthetic_ground(n);
            let f = random_modular(&ground, args.seed)?;
            (ground, f)
        }
        (None, None) => return Err(usage("one of --n or --instance is required")),
    };
    let result = sparsify(&oracle, &ground, &cfg)?;
    let plural = if result.iterations == 1 { "" } else { "s" };
    println!(
        "kept {} of {} in {} iteration{plural}",
        result.kept.len(),
        ground.len(),
        result.iterations
    );
    for (i, removed) in result.removed_per_iteration.iter().enumerate() {
        println!(
            "  pass {}: sampled {}, removed {}",
            i + 1,
            result.samples[i].len(),
            removed
        );
    }
    if let Some(path) = &args.dump_graph {
        let graph = SubmodularityGraph::build(&oracle, &ground)?;
        write_file(path, |w| graph.write_csv(w).map_err(Into::into))?;
        println!(
            "wrote {} edges to {}",
            ground.len() * (ground.len() - 1),
            path.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}
