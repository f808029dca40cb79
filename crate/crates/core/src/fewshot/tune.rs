use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{accuracy, compute_prototypes, downstream_loss, prototypes_on_tape, FewShotTask};
use crate::cot::{cot_forward, CotConfig, CotOutput, FrozenContext, PromptState};
use crate::error::{Error, Result};
use crate::graphdata::{positions_in, TaskKind};
use crate::numcore::{adam_step, AdamConfig, AdamState, Pool, Tensor, Var};
use crate::rng::{purpose, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            epochs: 100,
            learning_rate: 1e-2,
            tau: 0.5,
            seed: 0,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "tune.tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "tune.learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    Full,
    /// One inference step: only the standard prompt is tuned.
    NoCot,
    /// Thoughts taken from layer `l` alone (1-based).
    LayerOnly(usize),
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationVariant::Full => f.write_str("full"),
            AblationVariant::NoCot => f.write_str("no_cot"),
            AblationVariant::LayerOnly(l) => write!(f, "layer_only({l})"),
        }
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationVariant::Full),
            "no_cot" => Ok(AblationVariant::NoCot),
            _ => s
                .strip_prefix("layer_only(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.parse().ok())
                .filter(|&l| l >= 1)
                .map(AblationVariant::LayerOnly)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown variant '{s}' (expected full, no_cot or layer_only(l))"
                    ))
                }),
        }
    }
}

impl Serialize for AblationVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AblationVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

impl AblationVariant {
    /// Inference steps actually run under this variant.
    pub fn steps(&self, cot: &CotConfig) -> usize {
        match self {
            AblationVariant::NoCot => 1,
            _ => cot.steps,
        }
    }
}

/// Fresh prompt parameters for `variant`, drawn from `stream(seed, [PROMPT_INIT])`.
pub fn init_prompt_state(
    ctx: &FrozenContext,
    cot: &CotConfig,
    variant: AblationVariant,
    seed: u64,
) -> Result<PromptState> {
    let config = CotConfig {
        steps: variant.steps(cot),
        ..cot.clone()
    };
    let mut rng = stream(seed, &[purpose::PROMPT_INIT]);
    let mut state = PromptState::init(&config, ctx.encoder().config(), &mut rng)?;
    if let AblationVariant::LayerOnly(l) = variant {
        state.pin_fusion_to_layer(l)?;
    }
    Ok(state)
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub state: PromptState,
    /// Loss of each epoch, measured before that epoch's update.
    pub losses: Vec<f64>,
}

/// Rows to compute and how to turn them into one embedding per support instance.
struct SupportLayout {
    targets: Vec<usize>,
    groups: Arc<[Vec<usize>]>,
}

fn support_layout(ctx: &FrozenContext, task: &FewShotTask) -> SupportLayout {
    let graph = ctx.graph();
    match task.kind {
        TaskKind::Node => {
            let mut targets = task.support.clone();
            targets.sort_unstable();
            let groups = positions_in(&targets, &task.support)
                .into_iter()
                .map(|p| vec![p])
                .collect();
            SupportLayout { targets, groups }
        }
        TaskKind::Graph => {
            let mut graphs = task.support.clone();
            graphs.sort_unstable();
            let targets: Vec<usize> = graphs.iter().flat_map(|&g| graph.graph_nodes(g)).collect();
            let groups = task
                .support
                .iter()
                .map(|&g| positions_in(&targets, &graph.graph_nodes(g).collect::<Vec<_>>()))
                .collect();
            SupportLayout { targets, groups }
        }
    }
}

/// Parameters updated by tuning, in the order `cot_forward` registers them.
fn trainable(state: &mut PromptState) -> Vec<&mut Tensor> {
    let mut out = Vec::new();
    if state.steps > 1 {
        if !state.fusion_pinned {
            out.push(&mut state.fusion);
        }
        out.extend(state.condnet.params_mut());
    }
    out.extend(state.standard.params_mut());
    out
}

fn loss_on_layout(
    ctx: &FrozenContext,
    task: &FewShotTask,
    state: &PromptState,
    layout: &SupportLayout,
    tau: f64,
) -> Result<(CotOutput, Var)> {
    let mut out = cot_forward(ctx, state, Some(&layout.targets))?;
    let tape = &mut out.tape;
    // singleton groups for nodes, sum readout for graphs
    let embeddings = tape.pool_rows(out.answer, layout.groups.clone(), Pool::Sum)?;
    let prototypes = prototypes_on_tape(tape, embeddings, &task.support_labels, task.num_classes)?;
    let loss = downstream_loss(tape, embeddings, &task.support_labels, prototypes, tau)?;
    Ok((out, loss))
}

/// Prototype loss of the support set under `state`, on the returned forward tape.
pub fn support_loss(
    ctx: &FrozenContext,
    task: &FewShotTask,
    state: &PromptState,
    tau: f64,
) -> Result<(CotOutput, Var)> {
    if task.support.is_empty() {
        return Err(Error::Degenerate("task has no support instances".into()));
    }
    loss_on_layout(ctx, task, state, &support_layout(ctx, task), tau)
}

/// Optimizes the prompt parameters on the support set. The encoder is only read.
pub fn tune(
    ctx: &FrozenContext,
    task: &FewShotTask,
    mut state: PromptState,
    config: &TuneConfig,
) -> Result<TuneOutcome> {
    config.validate()?;
    if task.support.is_empty() {
        return Err(Error::Degenerate("task has no support instances".into()));
    }
    let layout = support_layout(ctx, task);
    let shapes: Vec<(usize, usize)> = trainable(&mut state).iter().map(|p| p.shape()).collect();
    let zeros: Vec<Tensor> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
    let mut adam = AdamState::new(
        AdamConfig::with_learning_rate(config.learning_rate),
        &zeros.iter().collect::<Vec<_>>(),
    )?;
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (mut out, loss) = loss_on_layout(ctx, task, &state, &layout, config.tau)?;
        let tape = &mut out.tape;
        losses.push(tape.value(loss).item()?);
        let grads = tape.backward(loss)?;

        let mut vars: Vec<Var> = Vec::new();
        vars.extend(out.params.fusion.filter(|_| !state.fusion_pinned));
        vars.extend(out.params.condnet.into_iter().flatten());
        vars.extend(&out.params.standard);
        let grads: Vec<Tensor> = vars
            .iter()
            .zip(&shapes)
            .map(|(&v, &s)| grads.get_or_zeros(v, s))
            .collect();
        adam_step(&mut trainable(&mut state), &grads, &mut adam)?;
    }
    Ok(TuneOutcome { state, losses })
}

/// Embeddings of the given instances under `state`: answer rows for node
/// tasks, summed answer rows per graph for graph tasks.
pub(crate) fn instance_embeddings(
    answer: &Tensor,
    ctx: &FrozenContext,
    kind: TaskKind,
    ids: &[usize],
) -> Tensor {
    match kind {
        TaskKind::Node => answer.select_rows(ids),
        TaskKind::Graph => {
            let h = answer.cols();
            let mut out = Tensor::zeros(ids.len(), h);
            let graph = ctx.graph();
            for (i, &g) in ids.iter().enumerate() {
                let mut acc = vec![0.0; h];
                for v in graph.graph_nodes(g) {
                    for (a, x) in acc.iter_mut().zip(answer.row(v)) {
                        *a += x;
                    }
                }
                out.values_mut()[i * h..(i + 1) * h].copy_from_slice(&acc);
            }
            out
        }
    }
}

/// Query accuracy with prototypes built from the support embeddings.
pub fn evaluate(ctx: &FrozenContext, task: &FewShotTask, state: &PromptState) -> Result<f64> {
    if task.query.is_empty() {
        return Err(Error::Degenerate("empty query set".into()));
    }
    let out = cot_forward(ctx, state, None)?;
    let answer = out.tape.value(out.answer);
    let support = instance_embeddings(answer, ctx, task.kind, &task.support);
    let prototypes = compute_prototypes(&support, &task.support_labels, task.num_classes)?;
    let query = instance_embeddings(answer, ctx, task.kind, &task.query);
    accuracy(&query, &task.query_labels, &prototypes)
}
