//! Experiment configuration: presets plus JSON overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    SyntheticUniform,
    SyntheticPreferential,
    Movielens,
    Covid,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::SyntheticUniform,
        Preset::SyntheticPreferential,
        Preset::Movielens,
        Preset::Covid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SyntheticUniform => "synthetic-uniform",
            Self::SyntheticPreferential => "synthetic-preferential",
            Self::Movielens => "movielens",
            Self::Covid => "covid",
        }
    }

    pub fn is_synthetic(self) -> bool {
        matches!(self, Self::SyntheticUniform | Self::SyntheticPreferential)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?} (expected one of synthetic-uniform, synthetic-preferential, movielens, covid)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gmarl,
    Batch,
    OnlineFilter,
    OnlineGnn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gmarl, Method::Batch, Method::OnlineFilter, Method::OnlineGnn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gmarl => "gmarl",
            Self::Batch => "batch",
            Self::OnlineFilter => "online-filter",
            Self::OnlineGnn => "online-gnn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Update rule for the policy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl From<OptimizerKind> for gmarl_core::optim::Optimizer {
    fn from(k: OptimizerKind) -> Self {
        match k {
            OptimizerKind::Sgd => Self::Sgd,
            OptimizerKind::Adam => Self::Adam,
        }
    }
}

/// Per-step control variate subtracted from the reward-to-go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlKind {
    None,
    FrozenTaps,
}

impl From<ControlKind> for gmarl_core::trainer::ControlVariate {
    fn from(k: ControlKind) -> Self {
        match k {
            ControlKind::None => Self::None,
            ControlKind::FrozenTaps => Self::FrozenTaps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Initial graph size (`N_0`).
    pub initial_nodes: usize,
    /// Edges formed by each incoming node.
    pub edges_per_node: usize,
    /// Horizon `T` used for training and the main evaluation.
    pub horizon: usize,
    /// Filter order `K`.
    pub filter_order: usize,
    pub discount: f64,
    pub learning_rate: f64,
    pub episodes_per_epoch: usize,
    pub epochs: usize,
    pub baseline_momentum: f64,
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    pub control_variate: ControlKind,
    /// Initial standard deviation of every agent's action distribution.
    pub initial_spread: f64,
    /// Fixed multiplier on the policy's action means.
    pub mean_scale: f64,
    /// Divide each agent's mean multiplier and initial spread by the RMS of
    /// its shift feature on the fitting sequence.
    pub feature_scaled_actions: bool,
    /// Paired evaluation runs.
    pub runs: usize,
    /// Fixed runs scored with mean actions after every training epoch.
    pub monitor_runs: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Synthetic presets only.
    pub noise_variance: f64,
    pub ridge: f64,
    /// Online-filter step size; chosen from `step_grid` when absent.
    pub filter_step: Option<f64>,
    /// Online-GNN step size; chosen from `step_grid` when absent.
    pub gnn_step: Option<f64>,
    pub step_grid: Vec<f64>,
    /// Held-out runs used to pick step sizes.
    pub tuning_runs: usize,
    /// Worker threads for per-run work (0 = all cores).
    pub workers: usize,
    /// MovieLens directory or city-table CSV for the real-data presets.
    pub data: Option<PathBuf>,
    pub movielens_item: String,
    pub covid_day: usize,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let (initial_nodes, edges_per_node) = match preset {
            Preset::SyntheticUniform | Preset::SyntheticPreferential => (5, 2),
            Preset::Movielens => (crate::movielens::INITIAL_USERS, crate::movielens::EDGES),
            Preset::Covid => (crate::covid::INITIAL_CITIES, crate::covid::NEIGHBORS),
        };
        Self {
            preset,
            initial_nodes,
            edges_per_node,
            horizon: 50,
            filter_order: 3,
            discount: 0.95,
            learning_rate: 5e-4,
            episodes_per_epoch: 32,
            epochs: 1000,
            baseline_momentum: 0.9,
            grad_clip: 5.0,
            optimizer: OptimizerKind::Adam,
            control_variate: ControlKind::FrozenTaps,
            initial_spread: 0.01,
            mean_scale: 0.02,
            feature_scaled_actions: true,
            runs: 64,
            monitor_runs: 64,
            seed: 0,
            methods: Method::ALL.to_vec(),
            noise_variance: 0.25,
            ridge: gmarl_core::baselines::DEFAULT_RIDGE,
            filter_step: None,
            gnn_step: None,
            step_grid: vec![1e-7, 3e-7, 1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
            tuning_runs: 16,
            workers: 0,
            data: None,
            movielens_item: crate::movielens::DEFAULT_ITEM_TITLE.to_string(),
            covid_day: crate::covid::SNAPSHOT_DAY,
            out_dir: None,
        }
    }

    /// Preset defaults overlaid with the keys present in a JSON document.
    /// A `preset` key in the document selects the base preset.
    pub fn from_json(text: &str, fallback: Preset) -> Result<Self> {
        let overrides: serde_json::Value = serde_json::from_str(text)?;
        let obj = overrides
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let preset = match obj.get("preset") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => fallback,
        };
        let mut base = serde_json::to_value(Self::preset(preset))?;
        let map = base.as_object_mut().expect("struct serializes to an object");
        for (k, v) in obj {
            if !map.contains_key(k) {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
            map.insert(k.clone(), v.clone());
        }
        let config: Self = serde_json::from_value(base)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, fallback: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text, fallback)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.runs == 0 {
            return fail("runs must be at least 1".into());
        }
        if self.methods.is_empty() {
            return fail("select at least one method".into());
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        if self.filter_order == 0 {
            return fail("filter_order must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return fail(format!("discount {} outside [0, 1]", self.discount));
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 || self.episodes_per_epoch == 0 {
            return fail("epochs and episodes_per_epoch must be positive".into());
        }
        if !(self.initial_spread > 0.0) || !self.initial_spread.is_finite() {
            return fail(format!("initial_spread {} must be positive", self.initial_spread));
        }
        if !self.mean_scale.is_finite() {
            return fail("mean_scale must be finite".into());
        }
        if self.initial_nodes == 0 || self.edges_per_node == 0 {
            return fail("initial_nodes and edges_per_node must be positive".into());
        }
        if self.preset.is_synthetic() && self.edges_per_node > self.initial_nodes {
            return fail(format!(
                "edges_per_node {} exceeds the initial graph size {}",
                self.edges_per_node, self.initial_nodes
            ));
        }
        if !(self.noise_variance >= 0.0) || !(self.ridge >= 0.0) {
            return fail("noise_variance and ridge must be nonnegative".into());
        }
        for s in self.filter_step.iter().chain(&self.gnn_step).chain(&self.step_grid) {
            if !(*s >= 0.0) || !s.is_finite() {
                return fail(format!("step size {s} must be finite and nonnegative"));
            }
        }
        if self.step_grid.is_empty() && (self.filter_step.is_none() || self.gnn_step.is_none()) {
            return fail("step_grid is empty and no explicit step size was given".into());
        }
        if self.tuning_runs == 0 {
            return fail("tuning_runs must be at least 1".into());
        }
        Ok(())
    }

    pub fn has(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    /// Methods in canonical column order without duplicates.
    pub fn method_list(&self) -> Vec<Method> {
        Method::ALL.into_iter().filter(|m| self.has(*m)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_land_on_preset_defaults() {
        let c = ExperimentConfig::from_json(r#"{"preset": "covid", "runs": 3}"#, Preset::SyntheticUniform).unwrap();
        assert_eq!(c.preset, Preset::Covid);
        assert_eq!(c.runs, 3);
        assert_eq!(c.initial_nodes, 30);
        assert_eq!(c.horizon, 50);
    }

    #[test]
    fn bad_documents_are_rejected() {
        let p = Preset::SyntheticUniform;
        assert!(ExperimentConfig::from_json(r#"{"runs": 0}"#, p).is_err());
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#, p).is_err());
        assert!(ExperimentConfig::from_json(r#"{"methods": ["nope"]}"#, p).is_err());
        assert!(ExperimentConfig::from_json("[]", p).is_err());
        assert!(ExperimentConfig::from_json(r#"{"discount": 2.0}"#, p).is_err());
    }

    #[test]
    fn config_round_trips() {
        let c = ExperimentConfig::preset(Preset::Movielens);
        assert_eq!(ExperimentConfig::from_json(&c.to_json(), Preset::Covid).unwrap(), c);
    }

    #[test]
    fn preset_names_parse() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }
}
