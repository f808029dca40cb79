//! Graph data model, canonical dataset directories, normalized adjacency and
//! graph readout.

mod adjacency;
mod io;
mod prepared;

pub use adjacency::{normalized_adjacency, normalized_adjacency_sparse, readout_sum};
pub use io::{load_dataset, load_meta, write_dataset};
pub use prepared::{positions_in, PreparedGraph, ReceptivePlan};

use serde::{Deserialize, Serialize};

use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Node,
    Graph,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Node => "node",
            TaskKind::Graph => "graph",
        })
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "node" => Ok(TaskKind::Node),
            "graph" => Ok(TaskKind::Graph),
            other => Err(format!(
                "unknown task kind '{other}' (expected node or graph)"
            )),
        }
    }
}

/// One graph. Node ids are the contiguous range `0..n`; edges are undirected,
/// stored once as `(u, v)` with `u < v`, without self-loops or duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphRecord {
    pub features: Tensor,
    pub edges: Vec<(usize, usize)>,
    /// Per-node class, `None` where the label is missing.
    pub node_labels: Option<Vec<Option<usize>>>,
    pub graph_label: Option<usize>,
}

impl GraphRecord {
    /// Canonicalizes the edge list: orders endpoints, drops self-loops and duplicates.
    pub fn new(
        features: Tensor,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_labels: Option<Vec<Option<usize>>>,
        graph_label: Option<usize>,
    ) -> Self {
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        GraphRecord {
            features,
            edges,
            node_labels,
            graph_label,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Adjacency lists, each sorted ascending.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub num_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_edges: Option<usize>,
    pub num_graphs: usize,
    pub feature_dim: usize,
    pub node_classes: Option<usize>,
    pub graph_classes: Option<usize>,
    pub task: TaskKind,
    pub edge_convention: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphCollection {
    pub graphs: Vec<GraphRecord>,
    pub meta: DatasetMeta,
}

impl GraphCollection {
    pub fn num_nodes(&self) -> usize {
        self.graphs.iter().map(GraphRecord::num_nodes).sum()
    }

    pub fn num_edges(&self) -> usize {
        self.graphs.iter().map(|g| g.edges.len()).sum()
    }
}
