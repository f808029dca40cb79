use std::ops::Range;
use std::sync::Arc;

use super::{normalized_adjacency_sparse, GraphCollection, TaskKind};
use crate::numcore::CsrMatrix;

/// A collection flattened into one block-diagonal graph: sparse normalized
/// adjacency and sparse features over the union of all nodes.
#[derive(Debug)]
pub struct PreparedGraph {
    name: String,
    task: TaskKind,
    adjacency: Arc<CsrMatrix>,
    features: Arc<CsrMatrix>,
    offsets: Vec<usize>,
    node_labels: Vec<Option<usize>>,
    graph_labels: Vec<Option<usize>>,
    node_classes: usize,
    graph_classes: usize,
}

/// Nested node sets for computing an `L`-layer encoder at a set of target rows.
///
/// `sets[L]` holds the targets and `sets[l-1]` the closed neighborhood of
/// `sets[l]`; `blocks[l-1]` is the adjacency restricted to rows `sets[l]` and
/// columns `sets[l-1]`, the latter renumbered to local positions.
#[derive(Clone, Debug)]
pub struct ReceptivePlan {
    pub sets: Vec<Arc<[usize]>>,
    pub blocks: Vec<Arc<CsrMatrix>>,
}

impl ReceptivePlan {
    pub fn targets(&self) -> &Arc<[usize]> {
        self.sets.last().expect("at least one set")
    }

    pub fn inputs(&self) -> &Arc<[usize]> {
        &self.sets[0]
    }
}

impl PreparedGraph {
    pub fn from_collection(collection: &GraphCollection) -> Self {
        let n = collection.num_nodes();
        let d = collection.meta.feature_dim;
        let mut offsets = Vec::with_capacity(collection.graphs.len() + 1);
        let mut adj = Vec::new();
        let mut feat = Vec::new();
        let mut node_labels = Vec::with_capacity(n);
        let mut offset = 0;
        for g in &collection.graphs {
            offsets.push(offset);
            let a = normalized_adjacency_sparse(g);
            for i in 0..a.rows() {
                for e in a.row_range(i) {
                    adj.push((offset + i, offset + a.indices()[e], a.values()[e]));
                }
                for (j, &v) in g.features.row(i).iter().enumerate() {
                    if v != 0.0 {
                        feat.push((offset + i, j, v));
                    }
                }
            }
            match &g.node_labels {
                Some(labels) => node_labels.extend(labels.iter().copied()),
                None => node_labels.extend(std::iter::repeat_n(None, g.num_nodes())),
            }
            offset += g.num_nodes();
        }
        offsets.push(offset);
        PreparedGraph {
            name: collection.meta.name.clone(),
            task: collection.meta.task,
            adjacency: Arc::new(CsrMatrix::from_triplets(n, n, &adj).expect("in range")),
            features: Arc::new(CsrMatrix::from_triplets(n, d, &feat).expect("in range")),
            offsets,
            node_labels,
            graph_labels: collection.graphs.iter().map(|g| g.graph_label).collect(),
            node_classes: collection.meta.node_classes.unwrap_or(0),
            graph_classes: collection.meta.graph_classes.unwrap_or(0),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &Arc<CsrMatrix> {
        &self.adjacency
    }

    pub fn features(&self) -> &Arc<CsrMatrix> {
        &self.features
    }

    pub fn graph_nodes(&self, graph: usize) -> Range<usize> {
        self.offsets[graph]..self.offsets[graph + 1]
    }

    pub fn graph_of(&self, node: usize) -> usize {
        self.offsets.partition_point(|&o| o <= node) - 1
    }

    pub fn node_labels(&self) -> &[Option<usize>] {
        &self.node_labels
    }

    pub fn graph_labels(&self) -> &[Option<usize>] {
        &self.graph_labels
    }

    /// Number of classes for the given task kind.
    pub fn num_classes(&self, kind: TaskKind) -> usize {
        match kind {
            TaskKind::Node => self.node_classes,
            TaskKind::Graph => self.graph_classes,
        }
    }

    /// Neighbors of `node` excluding itself.
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency
            .row_indices(node)
            .iter()
            .copied()
            .filter(move |&j| j != node)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row_indices(node).len() - 1
    }

    /// Sorted union of the closed neighborhoods of `nodes`.
    pub fn closed_neighborhood(&self, nodes: &[usize]) -> Vec<usize> {
        let mut mark = vec![false; self.num_nodes()];
        for &v in nodes {
            for &u in self.adjacency.row_indices(v) {
                mark[u] = true;
            }
        }
        mark.iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Plan for `layers` rounds of message passing at `targets` (sorted, distinct).
    pub fn receptive_plan(&self, targets: &[usize], layers: usize) -> ReceptivePlan {
        debug_assert!(targets.windows(2).all(|w| w[0] < w[1]));
        let mut sets: Vec<Arc<[usize]>> = vec![targets.into()];
        for _ in 0..layers {
            let next = self.closed_neighborhood(sets.last().unwrap());
            sets.push(next.into());
        }
        sets.reverse();
        let mut local = vec![usize::MAX; self.num_nodes()];
        let mut blocks = Vec::with_capacity(layers);
        for l in 1..=layers {
            for (pos, &v) in sets[l - 1].iter().enumerate() {
                local[v] = pos;
            }
            let block = self
                .adjacency
                .restrict(&sets[l], sets[l - 1].len(), |c| Some(local[c]));
            blocks.push(Arc::new(block));
        }
        ReceptivePlan { sets, blocks }
    }

    /// The trivial plan over every node.
    pub fn full_plan(&self, layers: usize) -> ReceptivePlan {
        let all: Arc<[usize]> = (0..self.num_nodes()).collect();
        ReceptivePlan {
            sets: vec![all; layers + 1],
            blocks: vec![self.adjacency.clone(); layers],
        }
    }
}

/// Positions of `subset` inside the sorted `superset`.
pub fn positions_in(superset: &[usize], subset: &[usize]) -> Vec<usize> {
    subset
        .iter()
        .map(|v| superset.binary_search(v).expect("subset of superset"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{DatasetMeta, GraphRecord};
    use crate::numcore::Tensor;

    fn path(n: usize) -> GraphCollection {
        let features = Tensor::eye(n);
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        GraphCollection {
            graphs: vec![GraphRecord::new(
                features,
                edges,
                Some(vec![Some(0); n]),
                None,
            )],
            meta: DatasetMeta {
                name: "path".into(),
                num_nodes: n,
                num_edges: None,
                num_graphs: 1,
                feature_dim: n,
                node_classes: Some(1),
                graph_classes: None,
                task: TaskKind::Node,
                edge_convention: String::new(),
            },
        }
    }

    #[test]
    fn plan_grows_by_one_hop_per_layer() {
        let g = PreparedGraph::from_collection(&path(8));
        let plan = g.receptive_plan(&[3], 2);
        assert_eq!(&*plan.sets[2], &[3]);
        assert_eq!(&*plan.sets[1], &[2, 3, 4]);
        assert_eq!(&*plan.sets[0], &[1, 2, 3, 4, 5]);
        assert_eq!(plan.blocks[0].shape(), (3, 5));
        assert_eq!(plan.blocks[1].shape(), (1, 3));
        assert_eq!(plan.blocks[1].indices(), &[0, 1, 2]);
    }

    #[test]
    fn graph_membership() {
        let mut c = path(3);
        c.graphs.push(c.graphs[0].clone());
        c.meta.num_graphs = 2;
        let g = PreparedGraph::from_collection(&c);
        assert_eq!(g.num_nodes(), 6);
        assert_eq!(g.graph_nodes(1), 3..6);
        assert_eq!(g.graph_of(2), 0);
        assert_eq!(g.graph_of(3), 1);
        assert_eq!(g.closed_neighborhood(&[2]), vec![1, 2]);
        assert_eq!(g.degree(4), 2);
    }
}
