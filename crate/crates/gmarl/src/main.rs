use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gmarl::config::{ExperimentConfig, Preset};
use gmarl::covid::{synthetic_city_table, CITY_COUNT};
use gmarl::dump::{parse_dump, write_dump};
use gmarl::experiment::{self, build_source, generalization_sweep, load_checkpoint, run_experiment, CHECKPOINT_FILE};
use gmarl_core::episode::{simulate, EpisodeSource};
use gmarl_core::graph::AttachmentSpec;

#[derive(Parser)]
#[command(name = "gmarl", version, about = "Adapt graph filters on expanding graphs with multi-agent RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Built-in preset: synthetic-uniform, synthetic-preferential, movielens, covid.
    #[arg(long, default_value = "synthetic-uniform")]
    preset: Preset,
    /// JSON file whose keys override the preset defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $GMARL_OUT_DIR, then gmarl-out/<preset>).
    #[arg(long, env = "GMARL_OUT_DIR")]
    out: Option<PathBuf>,
    /// Dataset location for the real-data presets.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Paired evaluation runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path, self.preset)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::preset(self.preset),
        };
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(d) = &self.data {
            config.data = Some(d.clone());
        }
        if let Some(r) = self.runs {
            config.runs = r;
        }
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        config.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| Path::new("gmarl-out").join(config.preset.name()));
        Ok((config, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the baselines, train the policy and compare all methods.
    Train(Common),
    /// Compare all methods using an existing policy checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: <out>/policy.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Mean RMSE against the horizon for a fixed trained policy.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated horizons.
        #[arg(long, value_delimiter = ',', default_values_t = [10, 25, 50, 75, 100])]
        horizons: Vec<usize>,
    },
    /// Prepare or inspect input data.
    #[command(subcommand)]
    Ingest(Ingest),
}

#[derive(Subcommand)]
enum Ingest {
    /// Write a synthetic city case table with spatially correlated outbreaks.
    CovidSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = CITY_COUNT)]
        cities: usize,
        #[arg(long, default_value_t = 150)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Record one episode of a preset as a replayable trajectory dump.
    Dump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: Option<usize>,
        /// Destination file.
        #[arg(long)]
        file: PathBuf,
    },
    /// Validate a trajectory dump and print its size.
    Check { file: PathBuf },
}

fn checkpoint_path(given: Option<PathBuf>, out: &Path) -> PathBuf {
    given.unwrap_or_else(|| out.join(CHECKPOINT_FILE))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(common) => {
            let (config, out) = common.resolve()?;
            let every = (config.epochs / 20).max(1);
            let report = run_experiment(&config, &out, None, |s| {
                if s.epoch % every == 0 || s.epoch + 1 == config.epochs {
                    log::info!(
                        "epoch {:>4}: reward {:.4} rmse {:.4}{}",
                        s.epoch,
                        s.mean_reward,
                        s.mean_rmse,
                        s.eval_rmse.map(|r| format!(" monitor rmse {r:.4}")).unwrap_or_default()
                    );
                }
            })?;
            print!("{}", report.table());
            println!("results in {}", out.display());
        }
        Command::Eval { common, checkpoint } => {
            let (config, out) = common.resolve()?;
            let ckpt = if config.has(gmarl::config::Method::Gmarl) {
                Some(load_checkpoint(&checkpoint_path(checkpoint, &out))?)
            } else {
                None
            };
            let report = run_experiment(&config, &out, ckpt, |_| {})?;
            print!("{}", report.table());
            println!("results in {}", out.display());
        }
        Command::Sweep {
            common,
            checkpoint,
            horizons,
        } => {
            let (config, out) = common.resolve()?;
            let ckpt = if config.has(gmarl::config::Method::Gmarl) {
                Some(load_checkpoint(&checkpoint_path(checkpoint, &out))?)
            } else {
                None
            };
            let rows = generalization_sweep(&config, &out, ckpt.as_ref(), &horizons)?;
            let names: Vec<&str> = config.method_list().iter().map(|m| m.name()).collect();
            println!("{:>5} {}", "T", names.iter().map(|n| format!("{n:>14}")).collect::<String>());
            for (t, r) in rows {
                println!("{t:>5} {}", r.iter().map(|v| format!("{v:>14.6}")).collect::<String>());
            }
            println!("results in {}", out.join(experiment::SWEEP_FILE).display());
        }
        Command::Ingest(Ingest::CovidSynthetic { out, cities, days, seed }) => {
            if cities == 0 || days == 0 {
                bail!("--cities and --days must be positive");
            }
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let f = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            synthetic_city_table(cities, days, seed).write(std::io::BufWriter::new(f))?;
            println!("wrote {cities} cities x {days} days to {}", out.display());
        }
        Command::Ingest(Ingest::Dump { common, horizon, file }) => {
            let (config, _) = common.resolve()?;
            let source = build_source(&config)?;
            let horizon = horizon.unwrap_or(config.horizon);
            let episode = source.episode(config.seed)?;
            let traj = simulate(&episode, horizon, config.filter_order, config.seed, true)?;
            std::fs::write(&file, write_dump(&traj)?).with_context(|| format!("writing {}", file.display()))?;
            println!("wrote {horizon}-step trajectory to {}", file.display());
        }
        Command::Ingest(Ingest::Check { file }) => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let episode = parse_dump(&text)?;
            let steps = match &episode.attachment {
                AttachmentSpec::Replay(v) => v.len(),
                _ => unreachable!("dumps always replay recorded attachments"),
            };
            let traj = simulate(&episode, steps, 1, 0, false)?;
            println!("ok: {} initial nodes, {} steps", traj.initial.n(), traj.len());
        }
    }
    Ok(())
}
