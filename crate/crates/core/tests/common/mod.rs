#![allow(dead_code)]

pub mod reference;

use std::path::PathBuf;
use std::sync::Arc;

use gcot::encoder::{EncoderConfig, EncoderWeights};
use gcot::graphdata::{DatasetMeta, GraphCollection, GraphRecord, PreparedGraph, TaskKind};
use gcot::numcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn meta(
    name: &str,
    n: usize,
    graphs: usize,
    d: usize,
    task: TaskKind,
    classes: usize,
) -> DatasetMeta {
    DatasetMeta {
        name: name.into(),
        num_nodes: n,
        num_edges: None,
        num_graphs: graphs,
        feature_dim: d,
        node_classes: (task == TaskKind::Node).then_some(classes),
        graph_classes: (task == TaskKind::Graph).then_some(classes),
        task,
        edge_convention: "undirected".into(),
    }
}

/// Random connected-ish graph: a path backbone plus random chords. Features
/// are sparse non-negative, with at least one nonzero per row.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> GraphRecord {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for _ in 0..n {
        edges.push((rng.random_range(0..n), rng.random_range(0..n)));
    }
    let mut feats = vec![0.0; n * d];
    for i in 0..n {
        feats[i * d + rng.random_range(0..d)] = rng.random_range(0.5..2.0);
        for j in 0..d {
            if rng.random_bool(0.3) {
                feats[i * d + j] = rng.random_range(0.1..2.0);
            }
        }
    }
    let labels = (0..n).map(|i| Some(i % classes)).collect();
    GraphRecord::new(Tensor::new(n, d, feats).unwrap(), edges, Some(labels), None)
}

pub fn node_collection(seed: u64, n: usize, d: usize, classes: usize) -> GraphCollection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GraphCollection {
        graphs: vec![random_graph(&mut rng, n, d, classes)],
        meta: meta("toy", n, 1, d, TaskKind::Node, classes),
    }
}

pub fn graph_collection(seed: u64, graphs: usize, d: usize, classes: usize) -> GraphCollection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<GraphRecord> = (0..graphs)
        .map(|g| {
            let n = rng.random_range(3..8);
            let mut r = random_graph(&mut rng, n, d, 1);
            r.node_labels = None;
            r.graph_label = Some(g % classes);
            r
        })
        .collect();
    let n = records.iter().map(GraphRecord::num_nodes).sum();
    GraphCollection {
        meta: meta("toy-graphs", n, graphs, d, TaskKind::Graph, classes),
        graphs: records,
    }
}

pub fn frozen_encoder(seed: u64, l: usize, d: usize, h: usize) -> Arc<EncoderWeights> {
    let mut w = EncoderWeights::init(
        EncoderConfig::new(l, d, h).unwrap(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    );
    w.freeze();
    Arc::new(w)
}

pub fn prepared(c: &GraphCollection) -> Arc<PreparedGraph> {
    Arc::new(PreparedGraph::from_collection(c))
}

/// Moves every parameter of a freshly initialized prompt away from its
/// initialization so no step is an identity.
pub fn perturb(state: &mut gcot::cot::PromptState, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bump = |t: &mut Tensor| {
        for v in t.values_mut() {
            *v += rng.random_range(-scale..scale);
        }
    };
    if !state.fusion_pinned {
        bump(&mut state.fusion);
    }
    for p in state.condnet.params_mut() {
        bump(p);
    }
    for p in state.standard.params_mut() {
        bump(p);
    }
}
