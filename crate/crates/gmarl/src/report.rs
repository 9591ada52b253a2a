//! CSV outputs. Every writer is a pure function of its inputs, so equal
//! results produce byte-identical files.

use std::path::Path;

use gmarl_core::trainer::EpochStats;

use crate::error::{io_err, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(csv::Writer::from_path(path)?)
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(io_err(path))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// `step, <method>...` with one row per step.
pub fn write_rmse_curves(path: &Path, methods: &[&str], curves: &[Vec<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["step".to_string()];
    header.extend(methods.iter().map(|m| m.to_string()));
    w.write_record(&header)?;
    let horizon = curves.first().map(Vec::len).unwrap_or(0);
    for t in 0..horizon {
        let mut row = vec![(t + 1).to_string()];
        row.extend(curves.iter().map(|c| num(c[t])));
        w.write_record(&row)?;
    }
    flush(w, path)
}

/// `epoch, mean_reward, mean_rmse`.
pub fn write_training_curve(path: &Path, curve: &[EpochStats]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "mean_reward", "mean_rmse"])?;
    for s in curve {
        w.write_record([s.epoch.to_string(), num(s.mean_reward), num(s.mean_rmse)])?;
    }
    flush(w, path)
}

/// `epoch, eval_reward, eval_rmse` on the fixed evaluation runs.
pub fn write_eval_curve(path: &Path, curve: &[EpochStats]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "eval_reward", "eval_rmse"])?;
    for s in curve {
        if let (Some(r), Some(e)) = (s.eval_reward, s.eval_rmse) {
            w.write_record([s.epoch.to_string(), num(r), num(e)])?;
        }
    }
    flush(w, path)
}

/// `T, <method>...` with the mean RMSE over steps and runs.
pub fn write_sweep(path: &Path, methods: &[&str], rows: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["T".to_string()];
    header.extend(methods.iter().map(|m| m.to_string()));
    w.write_record(&header)?;
    for (t, values) in rows {
        let mut row = vec![t.to_string()];
        row.extend(values.iter().map(|&v| num(v)));
        w.write_record(&row)?;
    }
    flush(w, path)
}

/// `method, step, tuning_rmse` for every grid point tried (`NaN` when the
/// step was given explicitly, `inf` when it diverged).
pub fn write_step_grid(path: &Path, grids: &[(&str, &[(f64, f64)])]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "step", "tuning_rmse"])?;
    for (method, grid) in grids {
        for &(step, rmse) in grid.iter() {
            w.write_record([method.to_string(), num(step), num(rmse)])?;
        }
    }
    flush(w, path)
}

/// `method, mean_rmse, excluded_runs`.
pub fn write_summary(path: &Path, rows: &[(&str, f64, usize)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "mean_rmse", "excluded_runs"])?;
    for (m, v, excluded) in rows {
        w.write_record([m.to_string(), num(*v), excluded.to_string()])?;
    }
    flush(w, path)
}
