//! m-shot tasks: sampling, prototypes, the downstream loss, prompt tuning,
//! evaluation and benchmark aggregation.

mod bench;
mod tune;

pub use bench::{
    prompt_file_name, run_ablation, run_benchmark, run_benchmark_saving, write_results_csv,
    write_summary_json, BenchConfig, ResultsRecord, RunResult, RESULTS_HEADER,
};
pub use tune::{
    evaluate, init_prompt_state, support_loss, tune, AblationVariant, TuneConfig, TuneOutcome,
};

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graphdata::{PreparedGraph, TaskKind};
use crate::numcore::{cosine, Pool, Tape, Tensor, Var};

/// Support and query instances of one task. Instances are node ids for node
/// tasks and graph ids for graph tasks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FewShotTask {
    pub kind: TaskKind,
    pub shots: usize,
    pub num_classes: usize,
    /// `shots` instances per class, grouped by class in increasing order.
    pub support: Vec<usize>,
    pub support_labels: Vec<usize>,
    /// Every other labeled instance, sorted.
    pub query: Vec<usize>,
    pub query_labels: Vec<usize>,
}

fn labels_for(graph: &PreparedGraph, kind: TaskKind) -> Result<&[Option<usize>]> {
    let labels = match kind {
        TaskKind::Node => graph.node_labels(),
        TaskKind::Graph => graph.graph_labels(),
    };
    if labels.iter().all(Option::is_none) {
        return Err(Error::Config(format!(
            "'{}' has no {kind} labels",
            graph.name()
        )));
    }
    Ok(labels)
}

/// Draws `shots` labeled instances per class; the rest become queries.
pub fn sample_task<R: Rng + ?Sized>(
    graph: &PreparedGraph,
    kind: TaskKind,
    shots: usize,
    rng: &mut R,
) -> Result<FewShotTask> {
    if shots == 0 {
        return Err(Error::Config("shots must be >= 1".into()));
    }
    let labels = labels_for(graph, kind)?;
    let num_classes = graph.num_classes(kind);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, label) in labels.iter().enumerate() {
        if let Some(c) = *label {
            by_class[c].push(i);
        }
    }
    let mut support = Vec::with_capacity(shots * num_classes);
    let mut support_labels = Vec::with_capacity(shots * num_classes);
    let mut in_support = vec![false; labels.len()];
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < shots + 1 {
            return Err(Error::InsufficientData(format!(
                "class {c} has {} labeled instances, {shots}-shot tasks need {}",
                members.len(),
                shots + 1
            )));
        }
        let mut picked: Vec<usize> = rand::seq::index::sample(rng, members.len(), shots)
            .into_iter()
            .map(|i| members[i])
            .collect();
        picked.sort_unstable();
        for &i in &picked {
            in_support[i] = true;
        }
        support.extend(picked);
        support_labels.extend(std::iter::repeat_n(c, shots));
    }
    let (query, query_labels) = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.filter(|_| !in_support[i]).map(|c| (i, c)))
        .unzip();
    Ok(FewShotTask {
        kind,
        shots,
        num_classes,
        support,
        support_labels,
        query,
        query_labels,
    })
}

fn class_groups(labels: &[usize], num_classes: usize) -> Result<Arc<[Vec<usize>]>> {
    let mut groups = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        groups
            .get_mut(c)
            .ok_or_else(|| Error::Degenerate(format!("label {c} outside {num_classes} classes")))?
            .push(i);
    }
    if let Some(c) = groups.iter().position(Vec::is_empty) {
        return Err(Error::Degenerate(format!(
            "class {c} has no support embedding"
        )));
    }
    Ok(groups.into())
}

/// Class means of the rows of `embeddings`, one row per class.
pub fn compute_prototypes(
    embeddings: &Tensor,
    labels: &[usize],
    num_classes: usize,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let e = tape.constant(embeddings.clone());
    let p = prototypes_on_tape(&mut tape, e, labels, num_classes)?;
    Ok(tape.value(p).clone())
}

pub(crate) fn prototypes_on_tape(
    tape: &mut Tape,
    embeddings: Var,
    labels: &[usize],
    num_classes: usize,
) -> Result<Var> {
    if tape.value(embeddings).rows() != labels.len() {
        return Err(Error::Dimension {
            op: "compute_prototypes",
            left: tape.value(embeddings).shape(),
            right: (labels.len(), 1),
        });
    }
    let groups = class_groups(labels, num_classes)?;
    tape.pool_rows(embeddings, groups, Pool::Mean)
}

/// `Σ_x −ln softmax_c(sim(h_x, p_c)/τ)[y_x]` over the rows of `embeddings`.
pub fn downstream_loss(
    tape: &mut Tape,
    embeddings: Var,
    labels: &[usize],
    prototypes: Var,
    tau: f64,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    let classes = tape.value(prototypes).rows();
    if let Some(&c) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::Degenerate(format!("label {c} has no prototype")));
    }
    let sims = tape.cosine_matrix(embeddings, prototypes)?;
    let logits = tape.scale(sims, 1.0 / tau)?;
    let lse = tape.logsumexp_rows(logits)?;
    let own = tape.pick(logits, labels.into())?;
    let per_row = tape.sub(lse, own)?;
    tape.sum_all(per_row)
}

/// Class with the highest cosine similarity; a zero-norm row or prototype
/// counts as similarity 0, and ties go to the smallest class index.
pub fn predict(embedding: &[f64], prototypes: &Tensor) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..prototypes.rows() {
        let p = prototypes.row(c);
        let sim = cosine(embedding, p.as_slice().expect("standard layout")).unwrap_or(0.0);
        if sim > best.1 {
            best = (c, sim);
        }
    }
    best.0
}

/// Fraction of `embeddings` rows whose prediction matches `labels`.
pub fn accuracy(embeddings: &Tensor, labels: &[usize], prototypes: &Tensor) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Degenerate("empty query set".into()));
    }
    if embeddings.rows() != labels.len() {
        return Err(Error::Dimension {
            op: "accuracy",
            left: embeddings.shape(),
            right: (labels.len(), 1),
        });
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            predict(
                embeddings.row(i).as_slice().expect("standard layout"),
                prototypes,
            ) == y
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}
