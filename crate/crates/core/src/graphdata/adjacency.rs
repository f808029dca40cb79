use super::GraphRecord;
use crate::error::{Error, Result};
use crate::numcore::{CsrMatrix, Tensor};

/// `D^{-1/2} (A + I) D^{-1/2}` in sparse form, with `D` the degree of `A + I`.
pub fn normalized_adjacency_sparse(graph: &GraphRecord) -> CsrMatrix {
    let neighbors = graph.neighbors();
    let degree: Vec<f64> = neighbors.iter().map(|l| (l.len() + 1) as f64).collect();
    let mut triplets = Vec::with_capacity(graph.num_nodes() + 2 * graph.edges.len());
    for (i, list) in neighbors.iter().enumerate() {
        triplets.push((i, i, 1.0 / degree[i]));
        for &j in list {
            triplets.push((i, j, 1.0 / (degree[i] * degree[j]).sqrt()));
        }
    }
    let n = graph.num_nodes();
    CsrMatrix::from_triplets(n, n, &triplets).expect("indices in range")
}

/// Dense symmetric-normalized adjacency with self-loops.
pub fn normalized_adjacency(graph: &GraphRecord) -> Tensor {
    normalized_adjacency_sparse(graph).to_dense()
}

/// Graph embedding as the column-wise sum of node embeddings, `1 × h`.
pub fn readout_sum(embeddings: &Tensor, graph: &GraphRecord) -> Result<Tensor> {
    if embeddings.rows() != graph.num_nodes() {
        return Err(Error::Dimension {
            op: "readout_sum",
            left: embeddings.shape(),
            right: (graph.num_nodes(), embeddings.cols()),
        });
    }
    let sum = embeddings.array().sum_axis(ndarray::Axis(0));
    Ok(Tensor::row_vector(sum.as_slice().expect("contiguous")))
}
