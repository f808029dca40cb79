use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sample_task;
use super::tune::{evaluate, init_prompt_state, tune, AblationVariant, TuneConfig};
use crate::cot::{save_prompt_state, CotConfig, FrozenContext};
use crate::error::{Error, Result};
use crate::graphdata::TaskKind;
use crate::rng::{derive_seed, purpose, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub kind: TaskKind,
    pub shots: usize,
    pub num_tasks: usize,
    pub num_seeds: usize,
    pub base_seed: u64,
    pub variant: AblationVariant,
    pub cot: CotConfig,
    /// Its `seed` is replaced per run.
    pub tune: TuneConfig,
}

impl BenchConfig {
    pub fn new(kind: TaskKind) -> Self {
        BenchConfig {
            kind,
            shots: 1,
            num_tasks: 100,
            num_seeds: 5,
            base_seed: 0,
            variant: AblationVariant::Full,
            cot: CotConfig::for_task(kind),
            tune: TuneConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 || self.num_tasks == 0 || self.num_seeds == 0 {
            return Err(Error::Config(
                "shots, num_tasks and num_seeds must all be >= 1".into(),
            ));
        }
        self.cot.validate()?;
        self.tune.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task_index: usize,
    pub repeat_index: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub dataset: String,
    pub task: TaskKind,
    pub shots: usize,
    /// Steps actually run.
    pub steps: usize,
    pub cond_hidden: usize,
    pub variant: AblationVariant,
    pub base_seed: u64,
    /// Sorted by `(task_index, repeat_index)`.
    pub runs: Vec<RunResult>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl ResultsRecord {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.accuracy).collect()
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn one_run(
    ctx: &FrozenContext,
    config: &BenchConfig,
    task_index: usize,
    repeat_index: usize,
    prompt_dir: Option<&Path>,
) -> Result<RunResult> {
    let mut rng = stream(config.base_seed, &[purpose::TASK, task_index as u64]);
    let task = sample_task(ctx.graph(), config.kind, config.shots, &mut rng)?;
    let seed = derive_seed(config.base_seed, &[task_index as u64, repeat_index as u64]);
    let state = init_prompt_state(ctx, &config.cot, config.variant, seed)?;
    let tune_config = TuneConfig {
        seed,
        ..config.tune.clone()
    };
    let tuned = tune(ctx, &task, state, &tune_config)?;
    if let Some(dir) = prompt_dir {
        save_prompt_state(
            &tuned.state,
            dir.join(prompt_file_name(task_index, repeat_index)),
        )?;
    }
    Ok(RunResult {
        task_index,
        repeat_index,
        accuracy: evaluate(ctx, &task, &tuned.state)?,
    })
}

/// `num_tasks × num_seeds` tune-and-evaluate runs on up to `jobs` threads.
/// Task `i` is drawn from `(base_seed, i)` and repeat `r` initializes the
/// prompts from `(base_seed, i, r)`, so the record does not depend on `jobs`.
pub fn run_benchmark(
    ctx: &FrozenContext,
    config: &BenchConfig,
    jobs: usize,
) -> Result<ResultsRecord> {
    run_benchmark_saving(ctx, config, jobs, None)
}

/// File name of the tuned prompts of one run inside a prompt directory.
pub fn prompt_file_name(task_index: usize, repeat_index: usize) -> String {
    format!("prompt_t{task_index}_r{repeat_index}.txt")
}

/// As [`run_benchmark`], also writing every tuned prompt state into `prompt_dir`.
pub fn run_benchmark_saving(
    ctx: &FrozenContext,
    config: &BenchConfig,
    jobs: usize,
    prompt_dir: Option<&Path>,
) -> Result<ResultsRecord> {
    config.validate()?;
    if let AblationVariant::LayerOnly(l) = config.variant {
        let layers = ctx.encoder().num_layers();
        if l > layers {
            return Err(Error::Config(format!(
                "layer_only({l}) needs 1 <= l <= {layers}"
            )));
        }
    }
    let pairs: Vec<(usize, usize)> = (0..config.num_tasks)
        .flat_map(|t| (0..config.num_seeds).map(move |r| (t, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut runs: Vec<RunResult> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(t, r)| one_run(ctx, config, t, r, prompt_dir))
            .collect::<Result<_>>()
    })?;
    runs.sort_by_key(|r| (r.task_index, r.repeat_index));
    let (mean, std) = mean_std(&runs.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    Ok(ResultsRecord {
        dataset: ctx.graph().name().to_string(),
        task: config.kind,
        shots: config.shots,
        steps: config.variant.steps(&config.cot),
        cond_hidden: config.cot.cond_hidden,
        variant: config.variant,
        base_seed: config.base_seed,
        runs,
        mean,
        std,
    })
}

/// Runs `full`, `no_cot` and `layer_only(1..=L)` with otherwise equal settings.
pub fn run_ablation(
    ctx: &FrozenContext,
    config: &BenchConfig,
    jobs: usize,
) -> Result<Vec<ResultsRecord>> {
    let layers = ctx.encoder().num_layers();
    let variants = [AblationVariant::Full, AblationVariant::NoCot]
        .into_iter()
        .chain((1..=layers).map(AblationVariant::LayerOnly));
    variants
        .map(|variant| {
            let c = BenchConfig {
                variant,
                ..config.clone()
            };
            run_benchmark(ctx, &c, jobs)
        })
        .collect()
}

pub const RESULTS_HEADER: &str =
    "dataset,task,shots,K,s,variant,base_seed,task_index,repeat_index,accuracy";

/// One row per run of every record.
pub fn write_results_csv(records: &[ResultsRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        for run in &r.runs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.dataset,
                r.task,
                r.shots,
                r.steps,
                r.cond_hidden,
                r.variant,
                r.base_seed,
                run.task_index,
                run.repeat_index,
                run.accuracy
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    dataset: &'a str,
    task: TaskKind,
    shots: usize,
    #[serde(rename = "K")]
    steps: usize,
    s: usize,
    variant: AblationVariant,
    runs: usize,
    mean: f64,
    std: f64,
}

/// Mean and standard deviation of each record next to `config`.
pub fn write_summary_json(
    records: &[ResultsRecord],
    config: &serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let entries: Vec<SummaryEntry> = records
        .iter()
        .map(|r| SummaryEntry {
            dataset: &r.dataset,
            task: r.task,
            shots: r.shots,
            steps: r.steps,
            s: r.cond_hidden,
            variant: r.variant,
            runs: r.runs.len(),
            mean: r.mean,
            std: r.std,
        })
        .collect();
    let doc = serde_json::json!({ "results": entries, "config": config });
    let text = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
