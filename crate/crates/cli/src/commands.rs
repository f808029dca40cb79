use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use gcot::cot::{cot_forward, load_prompt_state, FrozenContext};
use gcot::encoder::{load_checkpoint, save_checkpoint};
use gcot::fewshot::{
    prompt_file_name, run_ablation, run_benchmark, run_benchmark_saving, write_results_csv,
    write_summary_json, ResultsRecord,
};
use gcot::graphdata::{load_dataset, PreparedGraph};
use gcot::numcore::Tensor;
use gcot::pretrain::{pretrain_run, write_loss_log};
use gcot::Error;

use crate::config::RunConfig;
use crate::{Axis, CliError};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Writes the resolved config next to the outputs of `command`.
fn write_config(c: &RunConfig, command: &str) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&c.to_json()).expect("plain data serializes");
    write_text(
        &c.out_dir.join(format!("{command}_config.json")),
        &(text + "\n"),
    )
}

fn load_graph(c: &RunConfig) -> Result<Arc<PreparedGraph>, CliError> {
    let collection = load_dataset(&c.dataset)?;
    Ok(Arc::new(PreparedGraph::from_collection(&collection)))
}

fn load_context(c: &RunConfig) -> Result<FrozenContext, CliError> {
    let graph = load_graph(c)?;
    let weights = load_checkpoint(c.checkpoint())?;
    let have = weights.config();
    let want = c.encoder_config(graph.feature_dim())?;
    if have != want {
        return Err(Error::Dimension {
            op: "encoder checkpoint (L, d) vs configuration",
            left: (have.num_layers, have.input_dim),
            right: (want.num_layers, want.input_dim),
        }
        .into());
    }
    Ok(FrozenContext::new(graph, Arc::new(weights))?)
}

fn report(r: &ResultsRecord) {
    println!(
        "{} {} {}-shot K={} s={} {}: mean {:.4} std {:.4} over {} runs",
        r.dataset,
        r.task,
        r.shots,
        r.steps,
        r.cond_hidden,
        r.variant,
        r.mean,
        r.std,
        r.runs.len()
    );
}

pub fn pretrain(c: &RunConfig) -> Result<(), CliError> {
    let graph = load_graph(c)?;
    let encoder = c.encoder_config(graph.feature_dim())?;
    create_dir(&c.out_dir)?;
    let outcome = pretrain_run(&graph, encoder, &c.pretrain_config()?)?;
    if let Some(parent) = c
        .checkpoint()
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
    {
        create_dir(parent)?;
    }
    save_checkpoint(&outcome.weights, c.checkpoint())?;
    write_loss_log(&outcome.losses, c.out_dir.join("pretrain_log.csv"))?;
    write_config(c, "pretrain")?;
    if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
        println!(
            "loss {first:.6} -> {last:.6}; checkpoint {}",
            c.checkpoint().display()
        );
    }
    Ok(())
}

/// Directory of the tuned prompts of `shots`-shot runs.
pub fn prompt_dir(c: &RunConfig, shots: usize) -> PathBuf {
    c.out_dir.join("prompts").join(format!("m{shots}"))
}

pub fn bench(c: &RunConfig) -> Result<(), CliError> {
    let ctx = load_context(c)?;
    create_dir(&c.out_dir)?;
    let mut records = Vec::with_capacity(c.shots.len());
    for &m in &c.shots {
        let config = c.bench_config(m)?;
        let dir = c.save_prompts.then(|| prompt_dir(c, m));
        if let Some(d) = &dir {
            create_dir(d)?;
        }
        let record = run_benchmark_saving(&ctx, &config, c.jobs, dir.as_deref())?;
        report(&record);
        records.push(record);
    }
    write_results_csv(&records, c.out_dir.join("results.csv"))?;
    write_summary_json(&records, &c.to_json(), c.out_dir.join("summary.json"))?;
    write_config(c, "bench")
}

pub fn ablate(c: &RunConfig) -> Result<(), CliError> {
    let ctx = load_context(c)?;
    create_dir(&c.out_dir)?;
    let mut records = Vec::new();
    for &m in &c.shots {
        for r in run_ablation(&ctx, &c.bench_config(m)?, c.jobs)? {
            report(&r);
            records.push(r);
        }
    }
    write_results_csv(&records, c.out_dir.join("ablation.csv"))?;
    write_summary_json(
        &records,
        &c.to_json(),
        c.out_dir.join("ablation_summary.json"),
    )?;
    write_config(c, "ablate")
}

pub const SWEEP_HEADER: &str =
    "axis,value,dataset,task,shots,K,s,variant,runs,mean,std,wall_seconds";

pub fn sweep(c: &RunConfig, axis: Axis, values: &[usize]) -> Result<(), CliError> {
    let ctx = load_context(c)?;
    create_dir(&c.out_dir)?;
    let mut table = String::from(SWEEP_HEADER);
    table.push('\n');
    let mut records = Vec::with_capacity(values.len());
    for &v in values {
        let mut point = c.clone();
        match axis {
            Axis::Steps => point.steps = Some(v),
            Axis::CondHidden => point.cond_hidden = Some(v),
            Axis::Shots => point.shots = vec![v],
        }
        let point = point.resolve()?;
        let config = point.bench_config(point.shots[0])?;
        let start = Instant::now();
        let r = run_benchmark(&ctx, &config, c.jobs)?;
        let secs = start.elapsed().as_secs_f64();
        report(&r);
        writeln!(
            table,
            "{axis},{v},{},{},{},{},{},{},{},{},{},{secs:.6}",
            r.dataset,
            r.task,
            r.shots,
            r.steps,
            r.cond_hidden,
            r.variant,
            r.runs.len(),
            r.mean,
            r.std
        )
        .expect("writing to a string");
        records.push(r);
    }
    write_text(&c.out_dir.join("sweep.csv"), &table)?;
    write_results_csv(&records, c.out_dir.join("sweep_results.csv"))?;
    write_config(c, "sweep")
}

fn embedding_csv(header: &str, rows: impl Iterator<Item = String>, values: &Tensor) -> String {
    let mut out = String::from(header);
    for j in 0..values.cols() {
        write!(out, ",h{j}").expect("writing to a string");
    }
    out.push('\n');
    for (i, prefix) in rows.enumerate() {
        out.push_str(&prefix);
        for v in values.row(i) {
            write!(out, ",{v}").expect("writing to a string");
        }
        out.push('\n');
    }
    out
}

pub fn export_embeddings(c: &RunConfig) -> Result<(), CliError> {
    let ctx = load_context(c)?;
    let path = c
        .prompts
        .clone()
        .unwrap_or_else(|| prompt_dir(c, c.shots[0]).join(prompt_file_name(0, 0)));
    let state = load_prompt_state(&path)?;
    let out = cot_forward(&ctx, &state, None)?;
    let dir = c.out_dir.join("embeddings");
    create_dir(&dir)?;
    let graph = ctx.graph();
    let n = graph.num_nodes();
    let labels = (0..n).map(|i| {
        let label = graph.node_labels()[i]
            .map(|y| y.to_string())
            .unwrap_or_default();
        format!("{i},{label}")
    });
    let answer = embedding_csv("node_id,label", labels, out.tape.value(out.answer));
    write_text(&dir.join("answer.csv"), &answer)?;
    for (k, &t) in out.thoughts.iter().enumerate() {
        let rows = (0..n).map(|i| format!("{},{i}", k + 1));
        let text = embedding_csv("step,node_id", rows, out.tape.value(t));
        write_text(&dir.join(format!("thought_{}.csv", k + 1)), &text)?;
    }
    println!(
        "wrote answer and {} thought file(s) for {n} nodes to {}",
        out.thoughts.len(),
        dir.display()
    );
    write_config(c, "export-embeddings")
}
