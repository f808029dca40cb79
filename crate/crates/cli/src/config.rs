use std::path::{Path, PathBuf};

use gcot::cot::{CotConfig, StdPromptConfig};
use gcot::encoder::EncoderConfig;
use gcot::fewshot::{AblationVariant, BenchConfig, TuneConfig};
use gcot::graphdata::{load_meta, TaskKind};
use gcot::pretrain::PretrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUT_DIR_ENV: &str = "GCOT_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    /// `null` uses every eligible node as an anchor each epoch.
    pub anchors_per_epoch: Option<usize>,
    pub include_positive_in_denominator: bool,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        PretrainSection {
            epochs: p.epochs,
            learning_rate: p.learning_rate,
            negatives: p.negatives,
            anchors_per_epoch: p.anchors_per_epoch,
            include_positive_in_denominator: p.include_positive_in_denominator,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TuneSection {
    fn default() -> Self {
        let t = TuneConfig::default();
        TuneSection {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
        }
    }
}

/// Everything a run depends on. `null` fields are filled in by [`RunConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Defaults to the task recorded in the dataset's meta.json.
    pub task: Option<TaskKind>,
    /// Encoder checkpoint; defaults to `<out_dir>/encoder.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// One benchmark per entry.
    pub shots: Vec<usize>,
    /// Defaults to 2 for node tasks and 3 for graph tasks.
    pub steps: Option<usize>,
    /// Defaults to 32 for node tasks and 8 for graph tasks.
    pub cond_hidden: Option<usize>,
    pub std_prompt: StdPromptConfig,
    pub chain_features: bool,
    pub tau_pretrain: f64,
    pub tau_downstream: f64,
    pub pretrain: PretrainSection,
    pub tune: TuneSection,
    pub num_tasks: usize,
    pub num_seeds: usize,
    pub base_seed: u64,
    pub variant: AblationVariant,
    pub jobs: usize,
    pub out_dir: PathBuf,
    /// Write every tuned prompt state under `<out_dir>/prompts`.
    pub save_prompts: bool,
    /// Prompt checkpoint read by export-embeddings; defaults to the first saved run.
    pub prompts: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("fixtures/cora"),
            task: None,
            checkpoint: None,
            num_layers: 3,
            hidden_dim: 256,
            shots: vec![1],
            steps: None,
            cond_hidden: None,
            std_prompt: StdPromptConfig::default(),
            chain_features: false,
            tau_pretrain: PretrainConfig::default().tau,
            tau_downstream: TuneConfig::default().tau,
            pretrain: PretrainSection::default(),
            tune: TuneSection::default(),
            num_tasks: 100,
            num_seeds: 5,
            base_seed: 0,
            variant: AblationVariant::Full,
            jobs: 1,
            out_dir: std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("gcot-out")),
            save_prompts: false,
            prompts: None,
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid by the JSON object in `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fills every defaulted-by-context field so the config reproduces the run on its own.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let task = match self.task {
            Some(t) => t,
            None => load_meta(&self.dataset)?.task,
        };
        self.task = Some(task);
        let defaults = CotConfig::for_task(task);
        self.steps.get_or_insert(defaults.steps);
        self.cond_hidden.get_or_insert(defaults.cond_hidden);
        if self.checkpoint.is_none() {
            self.checkpoint = Some(self.out_dir.join("encoder.ckpt"));
        }
        if self.shots.is_empty() {
            return Err(CliError::Config(
                "shots must list at least one value".into(),
            ));
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be >= 1".into()));
        }
        self.cot()?.validate()?;
        self.pretrain_config()?.validate()?;
        self.tune_config().validate()?;
        Ok(self)
    }

    pub fn task(&self) -> TaskKind {
        self.task.expect("resolved")
    }

    pub fn checkpoint(&self) -> &Path {
        self.checkpoint.as_deref().expect("resolved")
    }

    pub fn encoder_config(&self, input_dim: usize) -> Result<EncoderConfig, CliError> {
        Ok(EncoderConfig::new(
            self.num_layers,
            input_dim,
            self.hidden_dim,
        )?)
    }

    pub fn cot(&self) -> Result<CotConfig, CliError> {
        let task = self.task();
        let defaults = CotConfig::for_task(task);
        Ok(CotConfig {
            steps: self.steps.unwrap_or(defaults.steps),
            cond_hidden: self.cond_hidden.unwrap_or(defaults.cond_hidden),
            std_prompt: self.std_prompt.clone(),
            chain_features: self.chain_features,
        })
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig, CliError> {
        Ok(PretrainConfig {
            epochs: self.pretrain.epochs,
            learning_rate: self.pretrain.learning_rate,
            tau: self.tau_pretrain,
            negatives: self.pretrain.negatives,
            anchors_per_epoch: self.pretrain.anchors_per_epoch,
            include_positive_in_denominator: self.pretrain.include_positive_in_denominator,
            seed: self.base_seed,
        })
    }

    pub fn tune_config(&self) -> TuneConfig {
        TuneConfig {
            epochs: self.tune.epochs,
            learning_rate: self.tune.learning_rate,
            tau: self.tau_downstream,
            seed: self.base_seed,
        }
    }

    pub fn bench_config(&self, shots: usize) -> Result<BenchConfig, CliError> {
        Ok(BenchConfig {
            kind: self.task(),
            shots,
            num_tasks: self.num_tasks,
            num_seeds: self.num_seeds,
            base_seed: self.base_seed,
            variant: self.variant,
            cot: self.cot()?,
            tune: self.tune_config(),
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data serializes")
    }
}

/// Parses `3`, `1,2,5` or the inclusive range `1..10`.
pub fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("'{s}' is not a number, a comma list or a range a..b");
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| bad()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists() {
        assert_eq!(parse_list("3").unwrap(), vec![3]);
        assert_eq!(parse_list("1,2, 5").unwrap(), vec![1, 2, 5]);
        assert_eq!(parse_list("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert!(parse_list("4..1").is_err());
        assert!(parse_list("x").is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"num_tasks": 7, "tune": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.num_tasks, 7);
        assert_eq!(c.tune.epochs, 3);
        assert_eq!(c.tune.learning_rate, TuneSection::default().learning_rate);
        assert_eq!(c.num_seeds, 5);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn resolved_config_is_a_fixed_point() {
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mutag");
        let c = RunConfig {
            dataset: dir,
            ..RunConfig::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(c.task, Some(TaskKind::Graph));
        assert_eq!((c.steps, c.cond_hidden), (Some(3), Some(8)));
        let again: RunConfig = serde_json::from_value(c.to_json()).unwrap();
        assert_eq!(again.clone().resolve().unwrap(), c);
    }
}
