mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gcot::cot::StdPromptConfig;
use gcot::fewshot::AblationVariant;
use gcot::graphdata::TaskKind;

use config::{parse_list, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] gcot::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => e.exit_code() as u8,
        }
    }
}

/// Chain-of-thought graph prompt experiments.
///
/// Settings come from built-in defaults, overridden by `--config FILE`
/// (a JSON object with any subset of the keys shown by `--print-config`),
/// overridden by command-line flags. `GCOT_OUT_DIR` replaces the default
/// output directory.
#[derive(Debug, Parser)]
#[command(name = "gcot", version)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed for pre-training, task sampling and prompt initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for benchmark runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pre-train the encoder by link prediction and write its checkpoint.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        /// Pre-training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        negatives: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        anchors_per_epoch: Option<usize>,
        #[arg(long)]
        include_positive_in_denominator: bool,
    },
    /// Tune and evaluate prompts on m-shot tasks.
    Bench {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        /// Shot counts: `1`, `1,5` or `1..10`.
        #[arg(long)]
        shots: Option<List>,
        #[arg(long)]
        variant: Option<AblationVariant>,
        /// Keep every tuned prompt state under `<out>/prompts`.
        #[arg(long)]
        save_prompts: bool,
    },
    /// Run full, no_cot and every layer_only(l) variant.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long)]
        shots: Option<List>,
    },
    /// One benchmark per value of one setting, all with the same base seed.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Values: `1,2,3` or `1..4`.
        #[arg(long)]
        values: List,
        #[arg(long)]
        variant: Option<AblationVariant>,
    },
    /// Write answer and thought embeddings of a tuned prompt state as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        data: DataArgs,
        /// Prompt checkpoint written by `bench --save-prompts`.
        #[arg(long, value_name = "PATH")]
        prompts: Option<PathBuf>,
    },
}

/// Comma list or inclusive range of integers.
#[derive(Clone, Debug)]
struct List(Vec<usize>);

impl std::str::FromStr for List {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_list(s).map(List)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Steps,
    CondHidden,
    Shots,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Steps => "steps",
            Axis::CondHidden => "cond_hidden",
            Axis::Shots => "shots",
        })
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Canonical dataset directory.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskKind>,
    /// Encoder checkpoint.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Debug, Args)]
struct PromptArgs {
    /// Inference steps K.
    #[arg(long)]
    steps: Option<usize>,
    /// Condition-net bottleneck s.
    #[arg(long)]
    cond_hidden: Option<usize>,
    #[arg(long, value_name = "KIND")]
    std_prompt: Option<String>,
    #[arg(long)]
    num_prompts: Option<usize>,
    /// Multiply each step's prompt into the previous step's features.
    #[arg(long)]
    chain_features: bool,
    /// Tuning epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Temperature of the downstream loss.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    num_tasks: Option<usize>,
    #[arg(long)]
    num_seeds: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.dataset, self.dataset);
        if self.task.is_some() {
            c.task = self.task;
        }
        if self.checkpoint.is_some() {
            c.checkpoint = self.checkpoint;
        }
        set(&mut c.num_layers, self.layers);
        set(&mut c.hidden_dim, self.hidden);
    }
}

impl PromptArgs {
    fn apply(self, c: &mut RunConfig) {
        if self.steps.is_some() {
            c.steps = self.steps;
        }
        if self.cond_hidden.is_some() {
            c.cond_hidden = self.cond_hidden;
        }
        let StdPromptConfig { kind, num_prompts } = &mut c.std_prompt;
        set(kind, self.std_prompt);
        set(num_prompts, self.num_prompts);
        c.chain_features |= self.chain_features;
        set(&mut c.tune.epochs, self.epochs);
        set(&mut c.tune.learning_rate, self.lr);
        set(&mut c.tau_downstream, self.tau);
        set(&mut c.num_tasks, self.num_tasks);
        set(&mut c.num_seeds, self.num_seeds);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut c = RunConfig::load(cli.config.as_deref())?;
    set(&mut c.out_dir, cli.out);
    set(&mut c.base_seed, cli.seed);
    set(&mut c.jobs, cli.jobs);
    let mut sweep = None;
    let name = match cli.command {
        Command::Pretrain {
            data,
            epochs,
            lr,
            negatives,
            tau,
            anchors_per_epoch,
            include_positive_in_denominator,
        } => {
            data.apply(&mut c);
            set(&mut c.pretrain.epochs, epochs);
            set(&mut c.pretrain.learning_rate, lr);
            set(&mut c.pretrain.negatives, negatives);
            set(&mut c.tau_pretrain, tau);
            if anchors_per_epoch.is_some() {
                c.pretrain.anchors_per_epoch = anchors_per_epoch;
            }
            c.pretrain.include_positive_in_denominator |= include_positive_in_denominator;
            "pretrain"
        }
        Command::Bench {
            data,
            prompt,
            shots,
            variant,
            save_prompts,
        } => {
            data.apply(&mut c);
            prompt.apply(&mut c);
            set(&mut c.shots, shots.map(|l| l.0));
            set(&mut c.variant, variant);
            c.save_prompts |= save_prompts;
            "bench"
        }
        Command::Ablate {
            data,
            prompt,
            shots,
        } => {
            data.apply(&mut c);
            prompt.apply(&mut c);
            set(&mut c.shots, shots.map(|l| l.0));
            "ablate"
        }
        Command::Sweep {
            data,
            prompt,
            axis,
            values,
            variant,
        } => {
            data.apply(&mut c);
            prompt.apply(&mut c);
            set(&mut c.variant, variant);
            let values = values.0;
            if values.is_empty() {
                return Err(CliError::Config("sweep needs at least one value".into()));
            }
            sweep = Some((axis, values));
            "sweep"
        }
        Command::ExportEmbeddings { data, prompts } => {
            data.apply(&mut c);
            if prompts.is_some() {
                c.prompts = prompts;
            }
            "export-embeddings"
        }
    };
    let c = c.resolve()?;
    if cli.print_config {
        println!(
            "{}",
            serde_json::to_string_pretty(&c.to_json()).expect("plain data serializes")
        );
        return Ok(());
    }
    match name {
        "pretrain" => commands::pretrain(&c),
        "bench" => commands::bench(&c),
        "ablate" => commands::ablate(&c),
        "sweep" => {
            let (axis, values) = sweep.expect("set for sweep");
            commands::sweep(&c, axis, &values)
        }
        _ => commands::export_embeddings(&c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
