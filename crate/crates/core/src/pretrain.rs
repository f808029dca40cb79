//! Contrastive link-prediction pre-training of the encoder.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_on_tape, EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::graphdata::PreparedGraph;
use crate::numcore::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::rng::{purpose, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub negatives: usize,
    /// Anchors drawn per epoch; `None` uses every eligible node once.
    pub anchors_per_epoch: Option<usize>,
    pub include_positive_in_denominator: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            tau: 2.0,
            negatives: 5,
            anchors_per_epoch: None,
            include_positive_in_denominator: false,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "pre-training tau must be > 0, got {}",
                self.tau
            )));
        }
        if self.negatives == 0 {
            return Err(Error::Config(
                "pre-training needs at least one negative per anchor".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.anchors_per_epoch == Some(0) {
            return Err(Error::Config("anchors_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkSample {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

fn has_edges(graph: &PreparedGraph) -> bool {
    (0..graph.num_nodes()).any(|v| graph.degree(v) > 0)
}

/// Anchors with at least one neighbor and at least one non-neighbor in their own graph.
fn eligible_anchors(graph: &PreparedGraph) -> Vec<usize> {
    (0..graph.num_nodes())
        .filter(|&v| {
            let deg = graph.degree(v);
            let size = graph.graph_nodes(graph.graph_of(v)).len();
            deg > 0 && size > deg + 1
        })
        .collect()
}

/// Draws one positive and `negatives` non-adjacent nodes per anchor, all from
/// the anchor's own graph.
pub fn sample_link_pairs<R: Rng + ?Sized>(
    graph: &PreparedGraph,
    negatives: usize,
    anchors_per_epoch: Option<usize>,
    rng: &mut R,
) -> Result<Vec<LinkSample>> {
    if !has_edges(graph) {
        return Err(Error::UnusableForPretraining(format!(
            "'{}' has no edges",
            graph.name()
        )));
    }
    let eligible = eligible_anchors(graph);
    if eligible.is_empty() {
        return Err(Error::UnusableForPretraining(format!(
            "'{}' has no node with both a neighbor and a non-neighbor",
            graph.name()
        )));
    }
    let anchors: Vec<usize> = match anchors_per_epoch {
        None => eligible,
        Some(m) => (0..m)
            .map(|_| eligible[rng.random_range(0..eligible.len())])
            .collect(),
    };
    let adjacency = graph.adjacency();
    let mut samples = Vec::with_capacity(anchors.len());
    for o in anchors {
        let neighbors: Vec<usize> = graph.neighbors(o).collect();
        let positive = neighbors[rng.random_range(0..neighbors.len())];
        let range = graph.graph_nodes(graph.graph_of(o));
        let closed = adjacency.row_indices(o);
        let negatives = (0..negatives)
            .map(|_| loop {
                let b = rng.random_range(range.clone());
                if closed.binary_search(&b).is_err() {
                    break b;
                }
            })
            .collect();
        samples.push(LinkSample {
            anchor: o,
            positive,
            negatives,
        });
    }
    Ok(samples)
}

/// Contrastive loss over final-layer embeddings `h`:
/// `−Σ_o [ sim(o, a)/τ − ln Σ_b exp(sim(o, b)/τ) ]`, with the positive
/// optionally included in the denominator.
pub fn pretrain_loss(
    tape: &mut Tape,
    h: Var,
    samples: &[LinkSample],
    tau: f64,
    include_positive_in_denominator: bool,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let k = samples.first().map(|s| s.negatives.len()).unwrap_or(0);
    if samples.is_empty() || k == 0 || samples.iter().any(|s| s.negatives.len() != k) {
        return Err(Error::Degenerate(
            "pre-training loss needs samples with equal, positive negative counts".into(),
        ));
    }
    let anchors: Arc<[usize]> = samples.iter().map(|s| s.anchor).collect();
    let positives: Arc<[usize]> = samples.iter().map(|s| s.positive).collect();
    let repeated: Arc<[usize]> = samples
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.anchor, k))
        .collect();
    let negatives: Arc<[usize]> = samples
        .iter()
        .flat_map(|s| s.negatives.iter().copied())
        .collect();

    let ha = tape.gather_rows(h, anchors)?;
    let hp = tape.gather_rows(h, positives)?;
    let hr = tape.gather_rows(h, repeated)?;
    let hn = tape.gather_rows(h, negatives)?;
    let pos = tape.cosine_pairs(ha, hp)?;
    let pos = tape.scale(pos, 1.0 / tau)?;
    let neg = tape.cosine_pairs(hr, hn)?;
    let neg = tape.scale(neg, 1.0 / tau)?;
    let mut denom = tape.reshape(neg, samples.len(), k)?;
    if include_positive_in_denominator {
        denom = tape.concat_cols(pos, denom)?;
    }
    let lse = tape.logsumexp_rows(denom)?;
    let per_anchor = tape.sub(lse, pos)?;
    tape.sum_all(per_anchor)
}

/// Final-layer embeddings of the whole graph with the encoder weights as tape
/// parameters. Returns the output node and the parameter nodes.
fn forward(
    tape: &mut Tape,
    graph: &PreparedGraph,
    weights: &EncoderWeights,
) -> Result<(Var, Vec<Var>)> {
    let thetas = weights.register(tape, true);
    let first = tape.spmm(graph.features(), None, thetas[0])?;
    let plan = graph.full_plan(weights.num_layers());
    let layers = encode_on_tape(tape, &plan, first, &thetas)?;
    Ok((*layers.last().expect("L >= 1"), thetas))
}

/// Loss of `weights` on `samples`, with gradients for every weight matrix.
pub fn loss_and_gradients(
    graph: &PreparedGraph,
    weights: &EncoderWeights,
    samples: &[LinkSample],
    config: &PretrainConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let (h, thetas) = forward(&mut tape, graph, weights)?;
    let loss = pretrain_loss(
        &mut tape,
        h,
        samples,
        config.tau,
        config.include_positive_in_denominator,
    )?;
    let grads = tape.backward(loss)?;
    let value = tape.value(loss).item()?;
    let grads = thetas
        .iter()
        .map(|&t| grads.get_or_zeros(t, tape.value(t).shape()))
        .collect();
    Ok((value, grads))
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// Frozen weights after the last epoch.
    pub weights: EncoderWeights,
    /// Loss of each epoch, measured before that epoch's update.
    pub losses: Vec<f64>,
}

/// Trains a freshly initialized encoder and returns it frozen.
pub fn pretrain_run(
    graph: &PreparedGraph,
    encoder: EncoderConfig,
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if encoder.input_dim != graph.feature_dim() {
        return Err(Error::Dimension {
            op: "pretrain_run",
            left: (graph.num_nodes(), graph.feature_dim()),
            right: (graph.num_nodes(), encoder.input_dim),
        });
    }
    if !has_edges(graph) {
        return Err(Error::UnusableForPretraining(format!(
            "'{}' has no edges",
            graph.name()
        )));
    }
    let mut weights =
        EncoderWeights::init(encoder, &mut stream(config.seed, &[purpose::ENCODER_INIT]));
    let mut adam = AdamState::new(
        AdamConfig::with_learning_rate(config.learning_rate),
        &weights.thetas().iter().collect::<Vec<_>>(),
    )?;
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = stream(config.seed, &[purpose::PRETRAIN_SAMPLES, epoch as u64]);
        let samples =
            sample_link_pairs(graph, config.negatives, config.anchors_per_epoch, &mut rng)?;
        let (loss, grads) = loss_and_gradients(graph, &weights, &samples, config)?;
        losses.push(loss);
        let mut params: Vec<&mut Tensor> = weights.thetas_mut()?.iter_mut().collect();
        adam_step(&mut params, &grads, &mut adam)?;
    }
    weights.freeze();
    Ok(PretrainOutcome { weights, losses })
}

/// Writes `epoch,loss` rows, epochs numbered from 1.
pub fn write_loss_log(losses: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{l:.16e}\n", i + 1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{DatasetMeta, GraphCollection, GraphRecord, TaskKind};

    fn prepared(n: usize, edges: &[(usize, usize)]) -> PreparedGraph {
        let features = Tensor::from_array(ndarray::Array2::from_shape_fn((n, 3), |(i, j)| {
            ((i * 3 + j) % 5) as f64 + 1.0
        }));
        PreparedGraph::from_collection(&GraphCollection {
            graphs: vec![GraphRecord::new(
                features,
                edges.iter().copied(),
                None,
                None,
            )],
            meta: DatasetMeta {
                name: "toy".into(),
                num_nodes: n,
                num_edges: None,
                num_graphs: 1,
                feature_dim: 3,
                node_classes: None,
                graph_classes: None,
                task: TaskKind::Node,
                edge_convention: String::new(),
            },
        })
    }

    #[test]
    fn triangle_positives_are_neighbors() {
        let g = prepared(4, &[(0, 1), (1, 2), (0, 2)]);
        let mut rng = stream(1, &[]);
        let samples = sample_link_pairs(&g, 1, Some(50), &mut rng).unwrap();
        for s in &samples {
            assert!(s.anchor < 3 && s.positive < 3 && s.positive != s.anchor);
            assert_eq!(s.negatives, vec![3]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = prepared(6, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let a = sample_link_pairs(&g, 2, None, &mut stream(9, &[])).unwrap();
        let b = sample_link_pairs(&g, 2, None, &mut stream(9, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn star_center_is_skipped() {
        let g = prepared(4, &[(0, 1), (0, 2), (0, 3)]);
        let samples = sample_link_pairs(&g, 1, None, &mut stream(0, &[])).unwrap();
        assert!(samples.iter().all(|s| s.anchor != 0));
        assert_eq!(samples.len(), 3);
    }

    #[test]
    fn edgeless_graph_is_unusable() {
        let g = prepared(3, &[]);
        assert!(matches!(
            sample_link_pairs(&g, 1, None, &mut stream(0, &[])),
            Err(Error::UnusableForPretraining(_))
        ));
        let cfg = PretrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(
            pretrain_run(&g, EncoderConfig::new(1, 3, 2).unwrap(), &cfg),
            Err(Error::UnusableForPretraining(_))
        ));
    }

    fn loss_for(rows: &[Vec<f64>], tau: f64, include: bool) -> f64 {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(rows).unwrap());
        let s = [LinkSample {
            anchor: 0,
            positive: 1,
            negatives: vec![2],
        }];
        let l = pretrain_loss(&mut tape, h, &s, tau, include).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn loss_hand_examples() {
        let rows = [vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]];
        assert!((loss_for(&rows, 1.0, false) + 1.0).abs() < 1e-12);
        assert!((loss_for(&rows, 0.5, false) + 2.0).abs() < 1e-12);
        // ln(e² + 1) − 2
        assert!((loss_for(&rows, 0.5, true) - ((2f64).exp() + 1.0).ln() + 2.0).abs() < 1e-12);
        let equal = [vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, -1.0]];
        assert!(loss_for(&equal, 1.0, false).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_row_is_degenerate() {
        let rows = [vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]];
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&rows).unwrap());
        let s = [LinkSample {
            anchor: 0,
            positive: 1,
            negatives: vec![2],
        }];
        assert!(matches!(
            pretrain_loss(&mut tape, h, &s, 1.0, false),
            Err(Error::Degenerate(_))
        ));
    }
}
