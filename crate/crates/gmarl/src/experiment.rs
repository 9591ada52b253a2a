//! Experiment protocol: fit the baselines, train the policy, score every
//! method on the same replayed runs, write CSVs and plots.

use std::path::{Path, PathBuf};

use gmarl_core::baselines::{
    batch_fit, batch_predictions, online_filter_predictions, online_gnn_predictions, BatchDesign, OnlineGnn,
};
use gmarl_core::episode::{realize, AttachmentRule, EpisodeSource, SyntheticSource, Trajectory};
use gmarl_core::filter::FilterTaps;
use gmarl_core::graph::{ShiftNormalization, SignalDynamics};
use gmarl_core::policy::{Checkpoint, PolicyParameters};
use gmarl_core::rng::{derive_seed, stream, streams};
use gmarl_core::trainer::{policy_predictions, rmse_curve, train, EpochStats, TrainConfig};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Method, Preset};
use crate::covid::{CityTable, CovidSource};
use crate::error::{io_err, Error, Result};
use crate::movielens::{MovieLensPool, MovieLensSource};
use crate::plot::{line_chart, Series};
use crate::report;
use crate::source::DataSource;
use crate::stats::{mean, sign_test};

/// Independent seed families derived from the experiment seed.
mod tag {
    pub const TRAIN: u64 = 1;
    pub const FIT: u64 = 2;
    pub const TUNE: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const MONITOR: u64 = 5;
    pub const POLICY: u64 = 6;
    pub const GNN: u64 = 7;
}

pub const RMSE_FILE: &str = "rmse.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRAINING_FILE: &str = "training.csv";
pub const MONITOR_FILE: &str = "monitor.csv";
pub const TUNING_FILE: &str = "tuning.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CHECKPOINT_FILE: &str = "policy.ckpt";
pub const CONFIG_FILE: &str = "config.json";

pub fn family(seed: u64, tag: u64, count: usize) -> Vec<u64> {
    let base = derive_seed(seed, tag);
    (0..count as u64).map(|i| derive_seed(base, i)).collect()
}

pub fn build_source(config: &ExperimentConfig) -> Result<DataSource> {
    let need_data = |what: &'static str, hint: &'static str| -> Result<PathBuf> {
        config.data.clone().ok_or(Error::MissingInput {
            what,
            path: PathBuf::from("<unset>"),
            hint,
        })
    };
    Ok(match config.preset {
        Preset::SyntheticUniform | Preset::SyntheticPreferential => DataSource::Synthetic(SyntheticSource {
            initial_nodes: config.initial_nodes,
            rule: if config.preset == Preset::SyntheticUniform {
                AttachmentRule::Uniform
            } else {
                AttachmentRule::Preferential
            },
            edges_per_node: config.edges_per_node,
            dynamics: SignalDynamics {
                noise_variance: config.noise_variance,
                shift_normalization: ShiftNormalization::SpectralRadius,
            },
        }),
        Preset::Movielens => {
            let dir = need_data("MovieLens-100K directory", "pass --data <ml-100k dir> or set \"data\" in the config")?;
            let mut s = MovieLensSource::new(MovieLensPool::load(&dir, &config.movielens_item)?);
            s.initial_users = config.initial_nodes;
            s.edges = config.edges_per_node;
            DataSource::MovieLens(s)
        }
        Preset::Covid => {
            let path = need_data(
                "city case table",
                "pass --data <csv> or set \"data\" in the config (`gmarl ingest covid-synthetic` writes a stand-in)",
            )?;
            let mut s = CovidSource::new(CityTable::load(&path)?);
            s.initial_cities = config.initial_nodes;
            s.neighbors = config.edges_per_node;
            s.day = config.covid_day;
            DataSource::Covid(s)
        }
    })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Everything the three comparison methods need, derived deterministically
/// from the configuration.
#[derive(Debug, Clone)]
pub struct BaselineSetup {
    /// Batch solution on one training sequence; also the starting taps of
    /// the online filter and of the policy.
    pub batch_taps: FilterTaps,
    pub filter_step: f64,
    pub gnn_step: f64,
    /// Online GNN after a warm-start pass over the fitting sequence.
    pub gnn: OnlineGnn,
    /// RMS of each shift feature `a^T A^(k-1) x` over the fitting sequence.
    pub feature_rms: Vec<f64>,
    /// `(step, mean RMSE on the tuning runs)` per grid point.
    pub filter_grid: Vec<(f64, f64)>,
    pub gnn_grid: Vec<(f64, f64)>,
}

fn mean_rmse_of(curves: &[Vec<f64>]) -> f64 {
    mean(&rmse_curve(curves))
}

fn errors(preds: &[f64], traj: &Trajectory) -> Vec<f64> {
    preds.iter().zip(&traj.steps).map(|(p, s)| p - s.ground_truth).collect()
}

fn pick(grid: &[(f64, f64)]) -> Option<f64> {
    grid.iter()
        .filter(|(_, r)| r.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .map(|&(s, _)| s)
}

pub fn prepare_baselines<S: EpisodeSource + Sync>(config: &ExperimentConfig, source: &S) -> Result<BaselineSetup> {
    let k = config.filter_order;
    let fit = realize(source, config.horizon, k, derive_seed(config.seed, tag::FIT))?;
    let design = BatchDesign::from_observations(&fit.steps, k)?;
    let batch_taps = batch_fit(&design, config.ridge)?;
    let feature_rms = (0..=k)
        .map(|j| (fit.steps.iter().map(|s| s.features[j].powi(2)).sum::<f64>() / fit.len().max(1) as f64).sqrt())
        .collect();
    let gnn_init = OnlineGnn::init(&mut stream(derive_seed(config.seed, tag::GNN), streams::INIT_PARAMS));

    let tuning: Vec<Trajectory> = family(config.seed, tag::TUNE, config.tuning_runs)
        .into_par_iter()
        .map(|s| realize(source, config.horizon, k, s))
        .collect::<gmarl_core::Result<_>>()?;

    let filter_grid: Vec<(f64, f64)> = match config.filter_step {
        Some(s) => vec![(s, f64::NAN)],
        None => config
            .step_grid
            .par_iter()
            .map(|&step| {
                let errs: Option<Vec<Vec<f64>>> = tuning
                    .iter()
                    .map(|t| online_filter_predictions(t, &batch_taps, step).ok().map(|p| errors(&p, t)))
                    .collect();
                (step, errs.map(|e| mean_rmse_of(&e)).unwrap_or(f64::INFINITY))
            })
            .collect(),
    };
    let warm = |step: f64| online_gnn_predictions(&fit, &gnn_init, step).ok().map(|(_, g)| g);
    let gnn_grid: Vec<(f64, f64)> = match config.gnn_step {
        Some(s) => vec![(s, f64::NAN)],
        None => config
            .step_grid
            .par_iter()
            .map(|&step| {
                let score = warm(step).and_then(|g| {
                    tuning
                        .iter()
                        .map(|t| online_gnn_predictions(t, &g, step).ok().map(|(p, _)| errors(&p, t)))
                        .collect::<Option<Vec<_>>>()
                });
                (step, score.map(|e| mean_rmse_of(&e)).unwrap_or(f64::INFINITY))
            })
            .collect(),
    };
    let filter_step = config
        .filter_step
        .or_else(|| pick(&filter_grid))
        .ok_or_else(|| Error::Data("online filter diverged for every step size in the grid".into()))?;
    let gnn_step = config
        .gnn_step
        .or_else(|| pick(&gnn_grid))
        .ok_or_else(|| Error::Data("online GNN diverged for every step size in the grid".into()))?;
    let gnn = warm(gnn_step).ok_or_else(|| Error::Data("online GNN warm start diverged".into()))?;
    Ok(BaselineSetup {
        batch_taps,
        filter_step,
        gnn_step,
        gnn,
        feature_rms,
        filter_grid,
        gnn_grid,
    })
}

pub fn train_config(config: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        horizon: config.horizon,
        discount: config.discount,
        learning_rate: config.learning_rate,
        episodes_per_epoch: config.episodes_per_epoch,
        epochs: config.epochs,
        baseline_momentum: config.baseline_momentum,
        grad_clip: config.grad_clip,
        optimizer: config.optimizer.into(),
        control_variate: config.control_variate.into(),
        filter_order: config.filter_order,
        seed: derive_seed(config.seed, tag::TRAIN),
        eval_seeds: family(config.seed, tag::MONITOR, config.monitor_runs),
    }
}

/// Trains the policy from the batch taps.
pub fn train_policy<S: EpisodeSource + Sync>(
    config: &ExperimentConfig,
    source: &S,
    setup: &BaselineSetup,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    let taps_init = &setup.batch_taps;
    let mut params = PolicyParameters::init(
        config.filter_order,
        &mut stream(derive_seed(config.seed, tag::POLICY), streams::INIT_PARAMS),
    )
    .with_mean_scale(config.mean_scale)
    .with_initial_spread(config.initial_spread);
    if config.feature_scaled_actions {
        params = params.with_feature_scales(&setup.feature_rms)?;
    }
    let out = train(&train_config(config), source, params, taps_init, on_epoch)?;
    Ok((
        Checkpoint {
            params: out.params,
            initial_taps: taps_init.clone(),
        },
        out.curve,
    ))
}

/// Per-method errors over paired runs: `errors[m][r][t]`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub methods: Vec<Method>,
    pub run_seeds: Vec<u64>,
    pub errors: Vec<Vec<Vec<f64>>>,
    /// Runs dropped because some method produced a non-finite error.
    pub excluded: Vec<u64>,
}

impl Evaluation {
    pub fn curves(&self) -> Vec<Vec<f64>> {
        self.errors.iter().map(|e| rmse_curve(e)).collect()
    }

    /// Mean over steps of the per-step RMSE.
    pub fn mean_rmse(&self) -> Vec<f64> {
        self.curves().iter().map(|c| mean(c)).collect()
    }

    /// Per-run RMSE over the horizon, for paired tests.
    pub fn run_rmse(&self, m: usize) -> Vec<f64> {
        self.errors[m]
            .iter()
            .map(|e| (e.iter().map(|v| v * v).sum::<f64>() / e.len().max(1) as f64).sqrt())
            .collect()
    }

    pub fn index(&self, m: Method) -> Option<usize> {
        self.methods.iter().position(|&x| x == m)
    }
}

pub fn evaluate_methods<S: EpisodeSource + Sync>(
    config: &ExperimentConfig,
    source: &S,
    setup: &BaselineSetup,
    policy: Option<&Checkpoint>,
    horizon: usize,
) -> Result<Evaluation> {
    let methods = config.method_list();
    if methods.contains(&Method::Gmarl) && policy.is_none() {
        return Err(Error::Config("gmarl selected but no trained policy is available".into()));
    }
    let run_seeds = family(config.seed, tag::EVAL, config.runs);
    let per_run: Vec<(u64, Option<Vec<Vec<f64>>>)> = run_seeds
        .par_iter()
        .map(|&seed| -> Result<_> {
            let traj = realize(source, horizon, config.filter_order, seed)?;
            let mut row = Vec::with_capacity(methods.len());
            for m in &methods {
                let preds = match m {
                    Method::Gmarl => {
                        let ckpt = policy.expect("checked above");
                        policy_predictions(&traj, &ckpt.params, &ckpt.initial_taps).ok()
                    }
                    Method::Batch => Some(batch_predictions(&traj, &setup.batch_taps)),
                    Method::OnlineFilter => online_filter_predictions(&traj, &setup.batch_taps, setup.filter_step).ok(),
                    Method::OnlineGnn => online_gnn_predictions(&traj, &setup.gnn, setup.gnn_step).ok().map(|p| p.0),
                };
                match preds.map(|p| errors(&p, &traj)) {
                    Some(e) if e.iter().all(|v| v.is_finite()) => row.push(e),
                    _ => {
                        log::warn!("run {seed}: {m} produced a non-finite prediction; run excluded");
                        return Ok((seed, None));
                    }
                }
            }
            Ok((seed, Some(row)))
        })
        .collect::<Result<_>>()?;
    let mut errors = vec![Vec::new(); methods.len()];
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (seed, row) in per_run {
        match row {
            Some(row) => {
                kept.push(seed);
                for (m, e) in row.into_iter().enumerate() {
                    errors[m].push(e);
                }
            }
            None => excluded.push(seed),
        }
    }
    if kept.is_empty() {
        return Err(Error::Data("every evaluation run was excluded".into()));
    }
    Ok(Evaluation {
        methods,
        run_seeds: kept,
        errors,
        excluded,
    })
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub setup: BaselineSetup,
    pub evaluation: Evaluation,
    pub mean_rmse: Vec<f64>,
    pub training: Option<Vec<EpochStats>>,
    pub checkpoint: Option<Checkpoint>,
    /// G-MARL vs online filter: `(gmarl wins, losses, one-sided p)`.
    pub sign_test: Option<(usize, usize, f64)>,
}

impl RunReport {
    pub fn rmse_of(&self, m: Method) -> Option<f64> {
        self.evaluation.index(m).map(|i| self.mean_rmse[i])
    }

    /// Human-readable comparison table.
    pub fn table(&self) -> String {
        let mut s = format!("{:<14} {:>12}\n", "method", "mean RMSE");
        for (m, r) in self.evaluation.methods.iter().zip(&self.mean_rmse) {
            s.push_str(&format!("{:<14} {:>12.6}\n", m.name(), r));
        }
        if let Some((w, l, p)) = self.sign_test {
            s.push_str(&format!("sign test gmarl < online-filter: {w} wins, {l} losses, p = {p:.3e}\n"));
        }
        if !self.evaluation.excluded.is_empty() {
            s.push_str(&format!("excluded runs: {}\n", self.evaluation.excluded.len()));
        }
        s
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingInput {
            what: "policy checkpoint",
            path: path.to_path_buf(),
            hint: "run `gmarl train` first or pass --checkpoint",
        });
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(Checkpoint::from_text(&text)?)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_text(path, &ckpt.to_text())
}

/// Full protocol. With `policy` given the training phase is skipped and
/// that checkpoint is evaluated instead.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    policy: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&EpochStats) + Send,
) -> Result<RunReport> {
    config.validate()?;
    let source = build_source(config)?;
    let pool = thread_pool(config.workers)?;
    pool.install(|| {
        let setup = prepare_baselines(config, &source)?;
        log::info!(
            "batch taps {:?}, online steps {:e} (filter) {:e} (gnn), feature rms {:?}",
            setup.batch_taps.as_slice(),
            setup.filter_step,
            setup.gnn_step,
            setup.feature_rms
        );
        let needs_policy = config.has(Method::Gmarl);
        let (checkpoint, training) = match (needs_policy, policy) {
            (false, _) => (None, None),
            (true, Some(c)) => (Some(c), None),
            (true, None) => {
                let (c, curve) = train_policy(config, &source, &setup, &mut on_epoch)?;
                (Some(c), Some(curve))
            }
        };
        let evaluation = evaluate_methods(config, &source, &setup, checkpoint.as_ref(), config.horizon)?;
        let mean_rmse = evaluation.mean_rmse();
        let sign = match (evaluation.index(Method::Gmarl), evaluation.index(Method::OnlineFilter)) {
            (Some(g), Some(f)) => Some(sign_test(&evaluation.run_rmse(g), &evaluation.run_rmse(f))),
            _ => None,
        };
        let report = RunReport {
            out_dir: out_dir.to_path_buf(),
            setup,
            evaluation,
            mean_rmse,
            training,
            checkpoint,
            sign_test: sign,
        };
        write_outputs(config, &report)?;
        Ok(report)
    })
}

fn write_outputs(config: &ExperimentConfig, report: &RunReport) -> Result<()> {
    let dir = &report.out_dir;
    let ev = &report.evaluation;
    let names: Vec<&str> = ev.methods.iter().map(|m| m.name()).collect();
    let curves = ev.curves();
    write_text(&dir.join(CONFIG_FILE), &config.to_json())?;
    report::write_rmse_curves(&dir.join(RMSE_FILE), &names, &curves)?;
    let summary: Vec<(&str, f64, usize)> = names
        .iter()
        .zip(&report.mean_rmse)
        .map(|(&n, &r)| (n, r, ev.excluded.len()))
        .collect();
    report::write_summary(&dir.join(SUMMARY_FILE), &summary)?;
    report::write_step_grid(
        &dir.join(TUNING_FILE),
        &[
            (Method::OnlineFilter.name(), &report.setup.filter_grid),
            (Method::OnlineGnn.name(), &report.setup.gnn_grid),
        ],
    )?;
    let steps: Vec<f64> = (1..=curves.first().map(Vec::len).unwrap_or(0)).map(|t| t as f64).collect();
    let series: Vec<Series> = names
        .iter()
        .zip(&curves)
        .map(|(&label, c)| Series {
            label,
            x: steps.clone(),
            y: c.clone(),
        })
        .collect();
    write_text(
        &dir.join("rmse.svg"),
        &line_chart(&format!("{} — RMSE per step", config.preset), "step", "RMSE", &series),
    )?;
    if let Some(curve) = &report.training {
        report::write_training_curve(&dir.join(TRAINING_FILE), curve)?;
        report::write_eval_curve(&dir.join(MONITOR_FILE), curve)?;
        let epochs: Vec<f64> = curve.iter().map(|s| s.epoch as f64).collect();
        let mut series = vec![Series {
            label: "training",
            x: epochs.clone(),
            y: curve.iter().map(|s| s.mean_reward).collect(),
        }];
        if curve.iter().all(|s| s.eval_reward.is_some()) {
            series.push(Series {
                label: "evaluation",
                x: epochs,
                y: curve.iter().map(|s| s.eval_reward.unwrap_or(f64::NAN)).collect(),
            });
        }
        write_text(
            &dir.join("training.svg"),
            &line_chart(&format!("{} — reward per epoch", config.preset), "epoch", "discounted reward", &series),
        )?;
    }
    if let Some(c) = &report.checkpoint {
        if report.training.is_some() {
            save_checkpoint(&dir.join(CHECKPOINT_FILE), c)?;
        }
    }
    Ok(())
}

/// Mean RMSE of every method at each horizon in `horizons`, with the
/// policy held fixed.
pub fn generalization_sweep(
    config: &ExperimentConfig,
    out_dir: &Path,
    policy: Option<&Checkpoint>,
    horizons: &[usize],
) -> Result<Vec<(usize, Vec<f64>)>> {
    config.validate()?;
    if horizons.is_empty() {
        return Err(Error::Config("the sweep needs at least one horizon".into()));
    }
    if horizons.contains(&0) {
        return Err(Error::Config("horizons must be positive".into()));
    }
    if config.has(Method::Gmarl) && policy.is_none() {
        return Err(Error::MissingInput {
            what: "policy checkpoint",
            path: out_dir.join(CHECKPOINT_FILE),
            hint: "run `gmarl train` first or pass --checkpoint",
        });
    }
    let source = build_source(config)?;
    let pool = thread_pool(config.workers)?;
    let rows = pool.install(|| -> Result<Vec<(usize, Vec<f64>)>> {
        let setup = prepare_baselines(config, &source)?;
        horizons
            .iter()
            .map(|&t| Ok((t, evaluate_methods(config, &source, &setup, policy, t)?.mean_rmse())))
            .collect()
    })?;
    let names: Vec<&str> = config.method_list().iter().map(|m| m.name()).collect();
    report::write_sweep(&out_dir.join(SWEEP_FILE), &names, &rows)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
    let series: Vec<Series> = names
        .iter()
        .enumerate()
        .map(|(i, &label)| Series {
            label,
            x: xs.clone(),
            y: rows.iter().map(|r| r.1[i]).collect(),
        })
        .collect();
    write_text(
        &out_dir.join("sweep.svg"),
        &line_chart(&format!("{} — mean RMSE vs horizon", config.preset), "T", "mean RMSE", &series),
    )?;
    Ok(rows)
}
