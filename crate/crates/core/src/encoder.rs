//! Bias-free GCN encoder `Hˡ = relu(Â Hˡ⁻¹ θˡ)`, linear in the last layer,
//! and its checkpoint format.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graphdata::{PreparedGraph, ReceptivePlan};
use crate::numcore::{Tape, Tensor, Var};

const MAGIC: &str = "GCOT-CKPT";
const VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl EncoderConfig {
    pub fn new(num_layers: usize, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if num_layers == 0 || input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config(format!(
                "encoder needs L, d, h >= 1 (got {num_layers}, {input_dim}, {hidden_dim})"
            )));
        }
        Ok(EncoderConfig {
            num_layers,
            input_dim,
            hidden_dim,
        })
    }

    fn shape_of(&self, layer: usize) -> (usize, usize) {
        if layer == 0 {
            (self.input_dim, self.hidden_dim)
        } else {
            (self.hidden_dim, self.hidden_dim)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    config: EncoderConfig,
    thetas: Vec<Tensor>,
    frozen: bool,
}

impl EncoderWeights {
    /// Glorot-uniform initialization, unfrozen.
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Self {
        let thetas = (0..config.num_layers)
            .map(|l| {
                let (r, c) = config.shape_of(l);
                Tensor::glorot(r, c, rng)
            })
            .collect();
        EncoderWeights {
            config,
            thetas,
            frozen: false,
        }
    }

    pub fn from_thetas(thetas: Vec<Tensor>, frozen: bool) -> Result<Self> {
        let first = thetas
            .first()
            .ok_or_else(|| Error::Config("encoder needs at least one layer".into()))?;
        let config = EncoderConfig::new(thetas.len(), first.rows(), first.cols())?;
        for (l, t) in thetas.iter().enumerate() {
            if t.shape() != config.shape_of(l) {
                return Err(Error::Dimension {
                    op: "encoder_weights",
                    left: t.shape(),
                    right: config.shape_of(l),
                });
            }
        }
        Ok(EncoderWeights {
            config,
            thetas,
            frozen,
        })
    }

    pub fn config(&self) -> EncoderConfig {
        self.config
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn thetas(&self) -> &[Tensor] {
        &self.thetas
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub(crate) fn thetas_mut(&mut self) -> Result<&mut [Tensor]> {
        if self.frozen {
            return Err(Error::Config(
                "attempt to modify frozen encoder weights".into(),
            ));
        }
        Ok(&mut self.thetas)
    }

    /// SHA-256 over every weight (shape and bit pattern).
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for t in &self.thetas {
            t.feed(&mut hasher);
        }
        hasher.finalize().into()
    }

    /// Registers the weights on `tape`, as parameters when `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.thetas
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}

/// Dense forward pass returning every layer's embeddings. Every layer but
/// the last applies relu.
pub fn encode(x: &Tensor, a_hat: &Tensor, weights: &EncoderWeights) -> Result<Vec<Tensor>> {
    let cfg = weights.config;
    let n = x.rows();
    if x.cols() != cfg.input_dim {
        return Err(Error::Dimension {
            op: "encode",
            left: x.shape(),
            right: (n, cfg.input_dim),
        });
    }
    if a_hat.shape() != (n, n) {
        return Err(Error::Dimension {
            op: "encode",
            left: a_hat.shape(),
            right: (n, n),
        });
    }
    let mut layers = Vec::with_capacity(cfg.num_layers);
    let mut prev = x.array().clone();
    for (l, theta) in weights.thetas.iter().enumerate() {
        let mut h = a_hat.array().dot(&prev.dot(theta.array()));
        if l + 1 < cfg.num_layers {
            h.mapv_inplace(|v| v.max(0.0));
        }
        layers.push(Tensor::from_array(h.clone()));
        prev = h;
    }
    Ok(layers)
}

/// Message passing on the tape at the rows described by `plan`.
///
/// `first` is `X θ¹` at rows `plan.sets[0]`; layer `l` comes out at rows `plan.sets[l]`.
pub fn encode_on_tape(
    tape: &mut Tape,
    plan: &ReceptivePlan,
    first: Var,
    thetas: &[Var],
) -> Result<Vec<Var>> {
    let mut layers: Vec<Var> = Vec::with_capacity(thetas.len());
    for (l, &theta) in thetas.iter().enumerate() {
        let z = match layers.last() {
            None => first,
            Some(&prev) => tape.matmul(prev, theta)?,
        };
        let h = tape.spmm(&plan.blocks[l], None, z)?;
        layers.push(if l + 1 < thetas.len() {
            tape.relu(h)?
        } else {
            h
        });
    }
    Ok(layers)
}

/// Full-graph forward with sparse features, without gradients.
pub fn encode_graph(graph: &PreparedGraph, weights: &EncoderWeights) -> Result<Vec<Tensor>> {
    if graph.feature_dim() != weights.config.input_dim {
        return Err(Error::Dimension {
            op: "encode_graph",
            left: (graph.num_nodes(), graph.feature_dim()),
            right: (graph.num_nodes(), weights.config.input_dim),
        });
    }
    let mut tape = Tape::new();
    let thetas = weights.register(&mut tape, false);
    let first = tape.spmm(graph.features(), None, thetas[0])?;
    let plan = graph.full_plan(weights.num_layers());
    let layers = encode_on_tape(&mut tape, &plan, first, &thetas)?;
    Ok(layers.into_iter().map(|v| tape.value(v).clone()).collect())
}

pub fn save_checkpoint(weights: &EncoderWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let cfg = weights.config;
    let mut out = format!(
        "{MAGIC} {VERSION}\n{} {} {}\n",
        cfg.num_layers, cfg.input_dim, cfg.hidden_dim
    );
    for t in &weights.thetas {
        write_rows(&mut out, t);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_rows(out: &mut String, t: &Tensor) {
    for i in 0..t.rows() {
        let mut first = true;
        for v in t.row(i) {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v:.16e}").expect("string write");
        }
        out.push('\n');
    }
}

/// Line-oriented reader shared by the checkpoint formats.
pub(crate) struct RowReader<'a> {
    lines: std::str::Lines<'a>,
    what: &'static str,
}

impl<'a> RowReader<'a> {
    /// Checks the magic word and version on the first line.
    pub(crate) fn open(
        text: &'a str,
        magic: &str,
        version: &str,
        what: &'static str,
    ) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let mut parts = header.split_whitespace();
        if parts.next() != Some(magic) {
            return Err(Error::Format(format!(
                "{what}: expected '{magic}' header, found '{header}'"
            )));
        }
        match parts.next() {
            Some(v) if v == version => {}
            other => {
                return Err(Error::Version(format!(
                    "{what}: found {}, this reader supports {version}",
                    other.unwrap_or("no version")
                )))
            }
        }
        Ok(RowReader { lines, what })
    }

    pub(crate) fn header_line(&mut self) -> Result<Vec<&'a str>> {
        let line = self
            .lines
            .next()
            .ok_or_else(|| Error::Corrupt(format!("{}: missing dimension header", self.what)))?;
        Ok(line.split_whitespace().collect())
    }

    pub(crate) fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self
                .lines
                .next()
                .ok_or_else(|| Error::Corrupt(format!("{}: truncated payload", self.what)))?;
            let before = values.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::Corrupt(format!("{}: bad number '{tok}'", self.what)))?;
                values.push(v);
            }
            if values.len() - before != cols {
                return Err(Error::Corrupt(format!(
                    "{}: row has {} values, expected {cols}",
                    self.what,
                    values.len() - before
                )));
            }
        }
        Tensor::new(rows, cols, values)
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        if self.lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Corrupt(format!(
                "{}: trailing data after payload",
                self.what
            )));
        }
        Ok(())
    }
}

pub(crate) fn parse_usize(tok: Option<&&str>, what: &'static str) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Corrupt(format!("{what}: malformed dimension header")))
}

/// Loads a checkpoint; the returned weights are frozen.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderWeights> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

fn parse_checkpoint(text: &str) -> Result<EncoderWeights> {
    let mut reader = RowReader::open(text, MAGIC, VERSION, "encoder checkpoint")?;
    let dims = reader.header_line()?;
    if dims.len() != 3 {
        return Err(Error::Corrupt(
            "encoder checkpoint: malformed dimension header".into(),
        ));
    }
    let what = "encoder checkpoint";
    let config = EncoderConfig::new(
        parse_usize(dims.first(), what)?,
        parse_usize(dims.get(1), what)?,
        parse_usize(dims.get(2), what)?,
    )
    .map_err(|e| Error::Corrupt(e.to_string()))?;
    let mut thetas = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        let (r, c) = config.shape_of(l);
        thetas.push(reader.tensor(r, c)?);
    }
    reader.finish()?;
    EncoderWeights::from_thetas(thetas, true)
}
