//! Chained inference steps: encode, fuse layers into a thought, turn the
//! thought into node-specific feature prompts, re-encode; then a standard
//! prompt on the last step's embeddings.

mod checkpoint;
mod prompts;

pub use checkpoint::{load_prompt_state, save_prompt_state};
pub use prompts::{
    build_standard_prompt, prompt_kinds, standard_prompt_apply, Gpf, GpfPlus, GraphPrompt,
    PromptDims, PromptKind, StandardPrompt, REGISTRY,
};

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_on_tape, EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::graphdata::{positions_in, PreparedGraph, ReceptivePlan, TaskKind};
use crate::numcore::{CsrMatrix, Tape, Tensor, Var, LEAKY_SLOPE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StdPromptConfig {
    pub kind: String,
    pub num_prompts: usize,
}

impl Default for StdPromptConfig {
    fn default() -> Self {
        StdPromptConfig {
            kind: "gpf_plus".into(),
            num_prompts: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotConfig {
    pub steps: usize,
    pub cond_hidden: usize,
    pub std_prompt: StdPromptConfig,
    /// Multiply each step's prompt into the previous step's features instead of the originals.
    pub chain_features: bool,
}

impl CotConfig {
    pub fn for_task(task: TaskKind) -> Self {
        let (steps, cond_hidden) = match task {
            TaskKind::Node => (2, 32),
            TaskKind::Graph => (3, 8),
        };
        CotConfig {
            steps,
            cond_hidden,
            std_prompt: StdPromptConfig::default(),
            chain_features: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config(
                "number of inference steps must be >= 1".into(),
            ));
        }
        if self.cond_hidden == 0 {
            return Err(Error::Config(
                "condition-net hidden size must be >= 1".into(),
            ));
        }
        if self.std_prompt.num_prompts == 0 {
            return Err(Error::Config("standard prompt needs N >= 1".into()));
        }
        if self.chain_features && self.std_prompt.kind == "gpf" {
            return Err(Error::Config(
                "chain_features cannot be combined with the gpf prompt".into(),
            ));
        }
        Ok(())
    }
}

/// Bottleneck MLP from thoughts (`h`) to feature prompts (`d`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionNet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ConditionNet {
    /// Starts as the constant all-ones prompt: `W2 = 0`, `b2 = 1`.
    pub fn init(
        hidden: usize,
        bottleneck: usize,
        feature_dim: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        ConditionNet {
            w1: Tensor::glorot(hidden, bottleneck, rng),
            b1: Tensor::zeros(1, bottleneck),
            w2: Tensor::zeros(bottleneck, feature_dim),
            b2: Tensor::ones(1, feature_dim),
        }
    }

    pub fn params(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

#[derive(Clone, Debug)]
pub struct PromptState {
    pub steps: usize,
    pub chain_features: bool,
    /// `1 × L` layer weights of the thought.
    pub fusion: Tensor,
    /// Excludes the fusion weights from optimization.
    pub fusion_pinned: bool,
    pub condnet: ConditionNet,
    pub standard: Box<dyn StandardPrompt>,
}

impl PromptState {
    pub fn init(config: &CotConfig, encoder: EncoderConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let l = encoder.num_layers;
        let condnet = ConditionNet::init(
            encoder.hidden_dim,
            config.cond_hidden,
            encoder.input_dim,
            rng,
        );
        let dims = PromptDims {
            hidden: encoder.hidden_dim,
            feature_dim: encoder.input_dim,
            num_prompts: config.std_prompt.num_prompts,
        };
        let standard = build_standard_prompt(&config.std_prompt.kind, &dims, rng)?;
        Ok(PromptState {
            steps: config.steps,
            chain_features: config.chain_features,
            fusion: Tensor::full(1, l, 1.0 / l as f64),
            fusion_pinned: false,
            condnet,
            standard,
        })
    }

    /// Fixes the fusion weights to the one-hot vector of `layer` (1-based).
    pub fn pin_fusion_to_layer(&mut self, layer: usize) -> Result<()> {
        let l = self.fusion.cols();
        if layer == 0 || layer > l {
            return Err(Error::Config(format!(
                "layer_only({layer}) needs 1 <= l <= {l}"
            )));
        }
        let mut w = Tensor::zeros(1, l);
        w.values_mut()[layer - 1] = 1.0;
        self.fusion = w;
        self.fusion_pinned = true;
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.fusion.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.condnet.w1.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.condnet.w2.cols()
    }
}

/// Thought `Σ wˡ Hˡ` for equally shaped layers, `w` being `1 × L`.
pub(crate) fn fuse(tape: &mut Tape, layers: &[Var], w: Var) -> Result<Var> {
    if tape.value(w).shape() != (1, layers.len()) {
        return Err(Error::Dimension {
            op: "fuse_thought",
            left: tape.value(w).shape(),
            right: (1, layers.len()),
        });
    }
    tape.weighted_sum(layers, w)
}

/// Hidden activation `leaky_relu(T W1 + b1)` of the condition-net.
fn condnet_hidden(tape: &mut Tape, t: Var, vars: &[Var; 4]) -> Result<Var> {
    let z = tape.matmul(t, vars[0])?;
    let z = tape.add_row(z, vars[1])?;
    tape.leaky_relu(z, LEAKY_SLOPE)
}

/// Prompt entries `(Z W2 + b2)_ij` at every stored entry of `pattern`.
fn condnet_at_pattern(
    tape: &mut Tape,
    hidden: Var,
    vars: &[Var; 4],
    pattern: &Arc<CsrMatrix>,
) -> Result<Var> {
    let main = tape.sddmm(pattern, hidden, vars[2])?;
    let ones = tape.constant(Tensor::ones(pattern.rows(), 1));
    let bias = tape.sddmm(pattern, ones, vars[3])?;
    tape.add(main, bias)
}

/// `T = Σ wˡ Hˡ`.
pub fn fuse_thought(layers: &[Tensor], w: &Tensor) -> Result<Tensor> {
    if layers.is_empty() {
        return Err(Error::Degenerate("thought fusion over zero layers".into()));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = layers.iter().map(|h| tape.constant(h.clone())).collect();
    let wv = tape.constant(w.clone());
    let t = fuse(&mut tape, &vars, wv)?;
    Ok(tape.value(t).clone())
}

/// Dense node-specific prompts `P = leaky_relu(T W1 + b1) W2 + b2`.
pub fn condnet_prompts(t: &Tensor, net: &ConditionNet) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = net.params().map(|p| tape.constant(p.clone()));
    let tv = tape.constant(t.clone());
    let z = condnet_hidden(&mut tape, tv, &vars)?;
    let p = tape.matmul(z, vars[2])?;
    let p = tape.add_row(p, vars[3])?;
    Ok(tape.value(p).clone())
}

/// `P ⊙ X`.
pub fn apply_feature_prompt(p: &Tensor, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.constant(p.clone());
    let b = tape.constant(x.clone());
    let out = tape.mul(a, b)?;
    Ok(tape.value(out).clone())
}

/// Frozen encoder, graph and everything about the unprompted first step that
/// never changes during tuning.
#[derive(Debug)]
pub struct FrozenContext {
    graph: Arc<PreparedGraph>,
    encoder: Arc<EncoderWeights>,
    /// `X θ¹` over all nodes.
    x_theta: Tensor,
    /// Layers of the unprompted graph.
    plain_layers: Vec<Tensor>,
}

impl FrozenContext {
    pub fn new(graph: Arc<PreparedGraph>, encoder: Arc<EncoderWeights>) -> Result<Self> {
        if !encoder.is_frozen() {
            return Err(Error::Config(
                "prompt tuning requires a frozen encoder".into(),
            ));
        }
        if graph.feature_dim() != encoder.config().input_dim {
            return Err(Error::Dimension {
                op: "frozen_context",
                left: (graph.num_nodes(), graph.feature_dim()),
                right: (graph.num_nodes(), encoder.config().input_dim),
            });
        }
        let mut tape = Tape::new();
        let thetas = encoder.register(&mut tape, false);
        let first = tape.spmm(graph.features(), None, thetas[0])?;
        let plan = graph.full_plan(encoder.num_layers());
        let layers = encode_on_tape(&mut tape, &plan, first, &thetas)?;
        Ok(FrozenContext {
            x_theta: tape.value(first).clone(),
            plain_layers: layers.iter().map(|&v| tape.value(v).clone()).collect(),
            graph,
            encoder,
        })
    }

    pub fn graph(&self) -> &Arc<PreparedGraph> {
        &self.graph
    }

    pub fn encoder(&self) -> &Arc<EncoderWeights> {
        &self.encoder
    }

    /// Layers of the graph without any prompt.
    pub fn plain_layers(&self) -> &[Tensor] {
        &self.plain_layers
    }
}

/// Tape nodes of the prompt parameters for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    pub fusion: Option<Var>,
    pub condnet: Option<[Var; 4]>,
    pub standard: Vec<Var>,
}

pub struct CotOutput {
    pub tape: Tape,
    /// Answer embeddings, one row per requested node (all nodes when none were given).
    pub answer: Var,
    /// Thoughts `T_1 … T_{K−1}`, rows as for `answer` in full mode.
    pub thoughts: Vec<Var>,
    pub params: ParamVars,
    /// Row order of `answer`.
    pub rows: Arc<[usize]>,
}

/// Runs the `K`-step chain. Feature prompts multiply the original features,
/// or the shifted features `X + 1pᵀ` when the standard prompt supplies a
/// shift. With `targets` (sorted, distinct node ids) only
/// the receptive field of those nodes is computed; otherwise the whole graph.
pub fn cot_forward(
    ctx: &FrozenContext,
    state: &PromptState,
    targets: Option<&[usize]>,
) -> Result<CotOutput> {
    let graph = &ctx.graph;
    let encoder = &ctx.encoder;
    let l = encoder.num_layers();
    let k_steps = state.steps;
    if k_steps == 0 {
        return Err(Error::Config(
            "number of inference steps must be >= 1".into(),
        ));
    }
    if state.num_layers() != l
        || state.hidden_dim() != encoder.config().hidden_dim
        || state.feature_dim() != encoder.config().input_dim
    {
        return Err(Error::Dimension {
            op: "cot_forward",
            left: (state.num_layers(), state.hidden_dim()),
            right: (l, encoder.config().hidden_dim),
        });
    }
    if state.chain_features && state.standard.kind() == "gpf" {
        return Err(Error::Config(
            "chain_features cannot be combined with the gpf prompt".into(),
        ));
    }

    let full = targets.is_none();
    // plans[k - 1] serves step k; each step's targets are the next step's inputs
    let mut plans: Vec<ReceptivePlan> = Vec::with_capacity(k_steps);
    if full {
        plans = vec![graph.full_plan(l); k_steps];
    } else {
        let t = targets.expect("not full");
        if t.is_empty() || t.windows(2).any(|w| w[0] >= w[1]) || t[t.len() - 1] >= graph.num_nodes()
        {
            return Err(Error::Degenerate(
                "targets must be sorted, distinct node ids".into(),
            ));
        }
        plans.push(graph.receptive_plan(t, l));
        for _ in 1..k_steps {
            let next = graph.receptive_plan(plans.last().unwrap().inputs(), l);
            plans.push(next);
        }
        plans.reverse();
    }
    let features_at = |rows: &Arc<[usize]>| -> Arc<CsrMatrix> {
        if full {
            graph.features().clone()
        } else {
            Arc::new(graph.features().restrict(rows, graph.feature_dim(), Some))
        }
    };

    let mut tape = Tape::new();
    let mut params = ParamVars {
        standard: state
            .standard
            .params()
            .into_iter()
            .map(|p| tape.param(p.clone()))
            .collect(),
        ..ParamVars::default()
    };
    if k_steps > 1 {
        params.fusion = Some(if state.fusion_pinned {
            tape.constant(state.fusion.clone())
        } else {
            tape.param(state.fusion.clone())
        });
        params.condnet = Some(state.condnet.params().map(|p| tape.param(p.clone())));
    }
    let shift = state.standard.feature_shift(&params.standard);
    let needs_encoder = k_steps > 1 || shift.is_some();
    let thetas = if needs_encoder {
        encoder.register(&mut tape, false)
    } else {
        Vec::new()
    };

    let mut thoughts = Vec::with_capacity(k_steps - 1);
    // per-entry feature values entering the current step, with their pattern
    let mut step_input: Option<(Var, Arc<CsrMatrix>)> = None;
    // dense `(P ⊙ 1pᵀ) θ¹` term carried by an additive feature shift
    let mut shift_input: Option<Var> = None;
    let mut final_h = None;
    for k in 1..=k_steps {
        let plan = &plans[k - 1];
        let computed: Option<Vec<Var>> = if k == 1 {
            match shift {
                None => None,
                Some(p) => {
                    let base = if full {
                        ctx.x_theta.clone()
                    } else {
                        ctx.x_theta.select_rows(plan.inputs())
                    };
                    let base = tape.constant(base);
                    let shift_theta = tape.matmul(p, thetas[0])?;
                    let first = tape.add_row(base, shift_theta)?;
                    Some(encode_on_tape(&mut tape, plan, first, &thetas)?)
                }
            }
        } else {
            let (values, pattern) = step_input.as_ref().expect("set by the previous step");
            let mut first = tape.spmm(pattern, Some(*values), thetas[0])?;
            if let Some(extra) = shift_input {
                first = tape.add(first, extra)?;
            }
            Some(encode_on_tape(&mut tape, plan, first, &thetas)?)
        };

        let step_targets = plan.targets();
        // layer embeddings at this step's targets
        let at_targets: Vec<Var> = match &computed {
            None => ctx
                .plain_layers
                .iter()
                .map(|h| {
                    tape.constant(if full {
                        h.clone()
                    } else {
                        h.select_rows(step_targets)
                    })
                })
                .collect(),
            Some(layers) => {
                let mut out = Vec::with_capacity(l);
                for (i, &h) in layers.iter().enumerate() {
                    let set = &plan.sets[i + 1];
                    if full || set.len() == step_targets.len() {
                        out.push(h);
                    } else {
                        let pos: Arc<[usize]> = positions_in(set, step_targets).into();
                        out.push(tape.gather_rows(h, pos)?);
                    }
                }
                out
            }
        };

        if k == k_steps {
            final_h = Some(at_targets[l - 1]);
            break;
        }

        let w = params.fusion.expect("registered for K > 1");
        let cn = params.condnet.expect("registered for K > 1");
        let thought = fuse(&mut tape, &at_targets, w)?;
        thoughts.push(thought);
        let hidden = condnet_hidden(&mut tape, thought, &cn)?;
        let pattern = features_at(step_targets);
        let prompt = condnet_at_pattern(&mut tape, hidden, &cn, &pattern)?;
        let base = match (&step_input, state.chain_features) {
            (Some((prev, prev_pattern)), true) => {
                if full {
                    *prev
                } else {
                    // entries of the previous input restricted to this step's targets
                    let pos = positions_in(plan.inputs(), step_targets);
                    let entries: Arc<[usize]> = pos
                        .iter()
                        .flat_map(|&p| prev_pattern.row_range(p))
                        .collect();
                    tape.gather_rows(*prev, entries)?
                }
            }
            _ => tape.constant(pattern.values_tensor()),
        };
        let values = tape.mul(prompt, base)?;
        step_input = Some((values, pattern));
        if let Some(p) = shift {
            let dense = tape.matmul(hidden, cn[2])?;
            let dense = tape.add_row(dense, cn[3])?;
            let shifted = tape.mul_row(dense, p)?;
            shift_input = Some(tape.matmul(shifted, thetas[0])?);
        }
    }

    let answer = state
        .standard
        .apply(&mut tape, &params.standard, final_h.expect("loop ran"))?;
    let rows: Arc<[usize]> = match targets {
        Some(t) => t.into(),
        None => (0..graph.num_nodes()).collect(),
    };
    Ok(CotOutput {
        tape,
        answer,
        thoughts,
        params,
        rows,
    })
}
