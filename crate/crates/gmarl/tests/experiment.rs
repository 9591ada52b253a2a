use std::fs;
use std::path::Path;

use gmarl::config::{ExperimentConfig, Method, Preset};
use gmarl::experiment::{
    generalization_sweep, load_checkpoint, run_experiment, CHECKPOINT_FILE, CONFIG_FILE, MONITOR_FILE, RMSE_FILE,
    SUMMARY_FILE, SWEEP_FILE, TRAINING_FILE, TUNING_FILE,
};
use gmarl::Error;

fn tiny(preset: Preset) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset(preset);
    c.horizon = 12;
    c.epochs = 3;
    c.episodes_per_epoch = 4;
    c.runs = 6;
    c.monitor_runs = 2;
    c.tuning_runs = 2;
    c.step_grid = vec![1e-4, 1e-3];
    c.seed = 11;
    c
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    fs::read(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn reruns_write_identical_csvs() {
    let c = tiny(Preset::SyntheticUniform);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&c, a.path(), None, |_| {}).unwrap();
    run_experiment(&c, b.path(), None, |_| {}).unwrap();
    for f in [RMSE_FILE, SUMMARY_FILE, TRAINING_FILE, MONITOR_FILE, TUNING_FILE, CHECKPOINT_FILE, CONFIG_FILE] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs between reruns");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let mut c = tiny(Preset::SyntheticPreferential);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    c.workers = 1;
    run_experiment(&c, a.path(), None, |_| {}).unwrap();
    c.workers = 3;
    run_experiment(&c, b.path(), None, |_| {}).unwrap();
    for f in [RMSE_FILE, SUMMARY_FILE, TRAINING_FILE] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} depends on the worker count");
    }
}

#[test]
fn batch_only_runs_skip_training() {
    let mut c = tiny(Preset::SyntheticUniform);
    c.methods = vec![Method::Batch];
    let dir = tempfile::tempdir().unwrap();
    let mut epochs = 0;
    let report = run_experiment(&c, dir.path(), None, |_| epochs += 1).unwrap();
    assert_eq!(epochs, 0);
    assert!(report.training.is_none() && report.checkpoint.is_none());
    assert!(!dir.path().join(TRAINING_FILE).exists());
    assert!(!dir.path().join(CHECKPOINT_FILE).exists());
    let header = String::from_utf8(read(dir.path(), RMSE_FILE)).unwrap();
    assert_eq!(header.lines().next(), Some("step,batch"));
    assert_eq!(header.lines().count(), 1 + c.horizon);
}

#[test]
fn csv_shapes_follow_the_config() {
    let c = tiny(Preset::SyntheticUniform);
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&c, dir.path(), None, |_| {}).unwrap();
    let rmse = String::from_utf8(read(dir.path(), RMSE_FILE)).unwrap();
    assert_eq!(rmse.lines().next(), Some("step,gmarl,batch,online-filter,online-gnn"));
    assert_eq!(rmse.lines().count(), 1 + c.horizon);
    let training = String::from_utf8(read(dir.path(), TRAINING_FILE)).unwrap();
    assert_eq!(training.lines().next(), Some("epoch,mean_reward,mean_rmse"));
    assert_eq!(training.lines().count(), 1 + c.epochs);
    assert_eq!(report.evaluation.run_seeds.len() + report.evaluation.excluded.len(), c.runs);
    assert!(report.mean_rmse.iter().all(|r| r.is_finite() && *r >= 0.0));
    let back = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(Some(&back), report.checkpoint.as_ref());
}

#[test]
fn evaluating_a_saved_checkpoint_reproduces_the_comparison() {
    let c = tiny(Preset::SyntheticUniform);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let trained = run_experiment(&c, a.path(), None, |_| {}).unwrap();
    let ckpt = load_checkpoint(&a.path().join(CHECKPOINT_FILE)).unwrap();
    let again = run_experiment(&c, b.path(), Some(ckpt), |_| panic!("must not train")).unwrap();
    assert_eq!(trained.mean_rmse, again.mean_rmse);
    assert_eq!(read(a.path(), RMSE_FILE), read(b.path(), RMSE_FILE));
}

#[test]
fn sweep_at_the_training_horizon_matches_the_main_run() {
    let c = tiny(Preset::SyntheticUniform);
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&c, dir.path(), None, |_| {}).unwrap();
    let rows = generalization_sweep(&c, dir.path(), report.checkpoint.as_ref(), &[5, c.horizon]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].1, report.mean_rmse);
    let csv = String::from_utf8(read(dir.path(), SWEEP_FILE)).unwrap();
    assert_eq!(csv.lines().next(), Some("T,gmarl,batch,online-filter,online-gnn"));
}

#[test]
fn sweep_rejects_missing_inputs() {
    let c = tiny(Preset::SyntheticUniform);
    let dir = tempfile::tempdir().unwrap();
    let err = generalization_sweep(&c, dir.path(), None, &[10]).unwrap_err();
    assert!(matches!(err, Error::MissingInput { .. }), "{err}");
    assert!(err.to_string().contains("gmarl train"), "{err}");
    let mut batch = c.clone();
    batch.methods = vec![Method::Batch];
    assert!(generalization_sweep(&batch, dir.path(), None, &[]).is_err());
    assert!(generalization_sweep(&batch, dir.path(), None, &[0]).is_err());
    assert!(generalization_sweep(&batch, dir.path(), None, &[7]).is_ok());
}

#[test]
fn real_presets_without_data_give_actionable_errors() {
    for p in [Preset::Movielens, Preset::Covid] {
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&tiny(p), dir.path(), None, |_| {}).unwrap_err();
        assert!(matches!(err, Error::MissingInput { .. }), "{err}");
        assert!(err.to_string().contains("--data"), "{err}");
    }
    let mut c = tiny(Preset::Covid);
    c.data = Some("/nonexistent/cities.csv".into());
    let err = run_experiment(&c, Path::new("/tmp/unused"), None, |_| {}).unwrap_err();
    assert!(err.to_string().contains("ingest covid-synthetic"), "{err}");
}

#[test]
fn covid_stand_in_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("cities.csv");
    let t = gmarl::covid::synthetic_city_table(80, 120, 4);
    t.write(fs::File::create(&table).unwrap()).unwrap();
    let mut c = tiny(Preset::Covid);
    c.data = Some(table);
    let report = run_experiment(&c, &dir.path().join("out"), None, |_| {}).unwrap();
    assert_eq!(report.mean_rmse.len(), 4);
    assert!(report.mean_rmse.iter().all(|r| r.is_finite()));
}
