//! Standard prompts applied after the last inference step, selected by name.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

/// Sizes a standard prompt may depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptDims {
    pub hidden: usize,
    pub feature_dim: usize,
    pub num_prompts: usize,
}

pub trait StandardPrompt: Send + Sync + std::fmt::Debug {
    fn kind(&self) -> &'static str;

    /// Trainable tensors in checkpoint order.
    fn params(&self) -> Vec<&Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// `N` as recorded in checkpoints.
    fn num_prompts(&self) -> usize {
        1
    }

    /// Row vector added to every input feature row before the first step.
    /// `vars` are this prompt's parameters as registered on the tape.
    fn feature_shift(&self, _vars: &[Var]) -> Option<Var> {
        None
    }

    /// Builds the answer matrix from final-step embeddings `h`.
    fn apply(&self, tape: &mut Tape, vars: &[Var], h: Var) -> Result<Var>;

    fn clone_box(&self) -> Box<dyn StandardPrompt>;
}

impl Clone for Box<dyn StandardPrompt> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Attention over `N` bias prompts, multiplied into the output embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct GpfPlus {
    /// `N × h`, one bias prompt per row.
    pub bias: Tensor,
    /// `h × N`, one projection vector per column.
    pub projections: Tensor,
}

impl GpfPlus {
    pub fn init(dims: &PromptDims, rng: &mut dyn RngCore) -> Self {
        let mut bias = Tensor::normal(dims.num_prompts, dims.hidden, 0.0, 0.01, rng);
        bias.values_mut().iter_mut().for_each(|v| *v += 1.0);
        GpfPlus {
            bias,
            projections: Tensor::normal(dims.hidden, dims.num_prompts, 0.0, 0.01, rng),
        }
    }
}

impl StandardPrompt for GpfPlus {
    fn kind(&self) -> &'static str {
        "gpf_plus"
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.bias, &self.projections]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.bias, &mut self.projections]
    }

    fn num_prompts(&self) -> usize {
        self.bias.rows()
    }

    fn apply(&self, tape: &mut Tape, vars: &[Var], h: Var) -> Result<Var> {
        let logits = tape.matmul(h, vars[1])?;
        let alpha = tape.row_softmax(logits)?;
        let prompts = tape.matmul(alpha, vars[0])?;
        tape.mul(prompts, h)
    }

    fn clone_box(&self) -> Box<dyn StandardPrompt> {
        Box::new(self.clone())
    }
}

/// One vector added to the input features; leaves the output untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct Gpf {
    pub shift: Tensor,
}

impl StandardPrompt for Gpf {
    fn kind(&self) -> &'static str {
        "gpf"
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.shift]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.shift]
    }

    fn feature_shift(&self, vars: &[Var]) -> Option<Var> {
        Some(vars[0])
    }

    fn apply(&self, _tape: &mut Tape, _vars: &[Var], h: Var) -> Result<Var> {
        Ok(h)
    }

    fn clone_box(&self) -> Box<dyn StandardPrompt> {
        Box::new(self.clone())
    }
}

/// One vector multiplied into every output embedding row.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphPrompt {
    pub scale: Tensor,
}

impl StandardPrompt for GraphPrompt {
    fn kind(&self) -> &'static str {
        "graphprompt"
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.scale]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.scale]
    }

    fn apply(&self, tape: &mut Tape, vars: &[Var], h: Var) -> Result<Var> {
        tape.mul_row(h, vars[0])
    }

    fn clone_box(&self) -> Box<dyn StandardPrompt> {
        Box::new(self.clone())
    }
}

pub struct PromptKind {
    pub name: &'static str,
    pub build: fn(&PromptDims, &mut dyn RngCore) -> Box<dyn StandardPrompt>,
}

pub const REGISTRY: &[PromptKind] = &[
    PromptKind {
        name: "gpf_plus",
        build: |dims, rng| Box::new(GpfPlus::init(dims, rng)),
    },
    PromptKind {
        name: "gpf",
        build: |dims, _| {
            Box::new(Gpf {
                shift: Tensor::zeros(1, dims.feature_dim),
            })
        },
    },
    PromptKind {
        name: "graphprompt",
        build: |dims, _| {
            Box::new(GraphPrompt {
                scale: Tensor::ones(1, dims.hidden),
            })
        },
    },
];

pub fn prompt_kinds() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|k| k.name)
}

/// Looks up `name` in the registry and initializes it.
pub fn build_standard_prompt(
    name: &str,
    dims: &PromptDims,
    rng: &mut dyn RngCore,
) -> Result<Box<dyn StandardPrompt>> {
    if dims.num_prompts == 0 {
        return Err(Error::Config("standard prompt needs N >= 1".into()));
    }
    let kind = REGISTRY.iter().find(|k| k.name == name).ok_or_else(|| {
        Error::Config(format!(
            "unknown standard prompt '{name}' (known: {})",
            prompt_kinds().collect::<Vec<_>>().join(", ")
        ))
    })?;
    Ok((kind.build)(dims, rng))
}

/// Applies `prompt` to a plain matrix of final-step embeddings.
pub fn standard_prompt_apply(h: &Tensor, prompt: &dyn StandardPrompt) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = prompt
        .params()
        .into_iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let hv = tape.constant(h.clone());
    let out = prompt.apply(&mut tape, &vars, hv)?;
    Ok(tape.value(out).clone())
}
