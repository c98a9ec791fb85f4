//! `fusionbench` command-line tool: synthesize a scene, prepare tiles, train
//! fusion models, evaluate them and sweep learning rates from one config file.

mod config;

use std::fs;
use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use config::RunConfig;
use fusionbench::models::Strategy;
use fusionbench::pipeline::{evaluate, load_prepared, prepare};
use fusionbench::synthgen::{difficulty_dial, generate_scene, write_scene};
use fusionbench::training::{run_experiment, tune_lr, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "fusionbench", version, about = "Multimodal fusion of thermal, RGB and elevation rasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "fusionbench.toml")]
    config: PathBuf,
    /// Output directory; overrides `paths.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scene seed for `synth`, first trial seed for `train` and `tune-lr`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scene to the configured raster and point paths.
    Synth {
        /// Signal strength dial: 0 is strongly separable, 1 is no signal.
        #[arg(long, default_value_t = 0.0)]
        level: f64,
    },
    /// Grid, label, split and fit band statistics; writes `<out>/prepared/`.
    Prepare,
    /// Train trials; completed trials are skipped.
    Train(TrainArgs),
    /// Score completed trials on the test split and write `<out>/report/`.
    Evaluate,
    /// Train trial 0 at each learning rate and report the best validation AUC.
    TuneLr {
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 1e-3, 1e-4, 1e-5])]
        rates: Vec<f64>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Strategy to train; defaults to `model.strategies`.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Trials `0..N`; overrides `train.n_trials`.
    #[arg(long, conflicts_with = "trial_range")]
    trials: Option<usize>,
    /// Trials `A..B` (end exclusive), for splitting a sweep across processes.
    #[arg(long, value_parser = parse_range)]
    trial_range: Option<Range<usize>>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum StrategyArg {
    Early,
    Late,
    Moe,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Early => Strategy::Early,
            StrategyArg::Late => Strategy::Late,
            StrategyArg::Moe => Strategy::Moe,
        }
    }
}

fn parse_range(s: &str) -> Result<Range<usize>, String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected A:B, got {s}"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("bad range start {a}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("bad range end {b}: {e}"))?;
    if a >= b {
        return Err(format!("empty trial range {a}:{b}"));
    }
    Ok(a..b)
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        config.paths.out_dir = out.clone();
    }
    Ok(config)
}

fn strategies(config: &RunConfig, flag: Option<StrategyArg>) -> Result<Vec<Strategy>> {
    let list = match flag {
        Some(s) => vec![s.into()],
        None => config.model.strategies.clone(),
    };
    if list.is_empty() {
        bail!("no strategies selected");
    }
    Ok(list)
}

fn experiment(config: &RunConfig, strategy: Strategy, trials: Option<Range<usize>>) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig {
        model: config.model.spec(strategy),
        train: config.train.clone(),
        rebalance: config.rebalance.clone(),
        pretrained: config.pretrained()?,
        out_dir: config.paths.out_dir.clone(),
        trials,
    })
}

fn cmd_synth(config: &RunConfig, seed: Option<u64>, level: f64) -> Result<()> {
    let mut spec = difficulty_dial(&config.scene, level)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let scene = generate_scene(&spec)?;
    let dirs: Vec<_> = [&config.paths.thermal, &config.paths.rgb, &config.paths.lidar, &config.paths.points]
        .into_iter()
        .filter_map(|p| p.parent())
        .collect();
    for dir in dirs {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    // write beside the targets, then move into place
    let staging = config.paths.out_dir.join(format!(".synth-staging-{}", std::process::id()));
    let files = write_scene(&scene, &staging);
    let moved = files.and_then(|files| {
        for (from, to) in [
            (&files.thermal, &config.paths.thermal),
            (&files.rgb, &config.paths.rgb),
            (&files.lidar, &config.paths.lidar),
            (&files.points, &config.paths.points),
        ] {
            fs::copy(from, to).map_err(|e| fusionbench::Error::Io {
                path: to.clone(),
                source: e,
            })?;
        }
        Ok(())
    });
    let _ = fs::remove_dir_all(&staging);
    moved?;
    println!(
        "wrote {} x {} cell scene (seed {}, level {level}) with {} feature points",
        spec.n_rows,
        spec.n_cols,
        spec.seed,
        scene.points.len()
    );
    Ok(())
}

fn cmd_prepare(config: &RunConfig) -> Result<()> {
    config.check_inputs_exist()?;
    let summary = prepare(
        &config.inputs(),
        config.grid.cell_size_m,
        &config.split,
        &config.rebalance,
        &config.paths.out_dir,
    )?;
    println!(
        "grid {} x {}: {} train, {} val, {} test cells ({} points outside the grid)",
        summary.grid.n_rows, summary.grid.n_cols, summary.n_train, summary.n_val, summary.n_test, summary.rejected_points
    );
    Ok(())
}

fn cmd_train(config: &mut RunConfig, seed: Option<u64>, args: &TrainArgs) -> Result<()> {
    if let Some(seed) = seed {
        config.train.seed_offset = seed;
    }
    let trials = match (args.trials, &args.trial_range) {
        (Some(n), _) => Some(0..n),
        (None, Some(r)) => Some(r.clone()),
        (None, None) => None,
    };
    let data = load_prepared(&config.paths.out_dir)?;
    for strategy in strategies(config, args.strategy)? {
        let cfg = experiment(config, strategy, trials.clone())?;
        info!(
            "training {strategy} with learning rate {}",
            cfg.train.learning_rate_for(strategy)
        );
        let run = run_experiment::<f32>(&data, &cfg)?;
        for r in &run.results {
            let status = if run.executed.contains(&r.trial_index) { "trained" } else { "already complete" };
            println!(
                "{strategy} trial {}: best val auc {:.4} at epoch {} ({status})",
                r.trial_index, r.best_val_auc, r.best_epoch
            );
        }
    }
    Ok(())
}

fn cmd_evaluate(config: &RunConfig) -> Result<()> {
    let data = load_prepared(&config.paths.out_dir)?;
    let eval = evaluate::<f32>(&config.paths.out_dir, &data.test, config.train.batch_size)?;
    let summary = fs::read_to_string(&eval.files.summary)?;
    print!("{summary}");
    if let Some(path) = &eval.files.gating_table {
        print!("\n{}", fs::read_to_string(path)?);
    }
    println!("report written to {}", config.paths.out_dir.join("report").display());
    Ok(())
}

fn cmd_tune_lr(config: &mut RunConfig, seed: Option<u64>, strategy: Option<StrategyArg>, rates: &[f64]) -> Result<()> {
    if let Some(seed) = seed {
        config.train.seed_offset = seed;
    }
    let data = load_prepared(&config.paths.out_dir)?;
    for strategy in strategies(config, strategy)? {
        let sweep = tune_lr::<f32>(&data, &experiment(config, strategy, None)?, rates)?;
        for (lr, auc) in &sweep {
            println!("{strategy} lr {lr:e}: best val auc {auc:.4}");
        }
        let path = config.paths.out_dir.join(format!("tune_lr_{strategy}.json"));
        fs::write(&path, serde_json::to_string_pretty(&sweep)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.common)?;
    match &cli.command {
        Command::Synth { level } => cmd_synth(&config, cli.common.seed, *level),
        Command::Prepare => cmd_prepare(&config),
        Command::Train(args) => cmd_train(&mut config, cli.common.seed, args),
        Command::Evaluate => cmd_evaluate(&config),
        Command::TuneLr { strategy, rates } => cmd_tune_lr(&mut config, cli.common.seed, *strategy, rates),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
