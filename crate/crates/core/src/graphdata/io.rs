use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{DatasetMeta, GraphCollection, GraphRecord, TaskKind};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const META: &str = "meta.json";
const NODES: &str = "nodes.tsv";
const FEATURES: &str = "features.tsv";
const EDGES: &str = "edges.tsv";
const GRAPHS: &str = "graphs.tsv";

struct TsvRows {
    path: PathBuf,
    reader: csv::Reader<File>,
}

impl TsvRows {
    fn open(dir: &Path, name: &str) -> Result<Self> {
        let path = dir.join(name);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(true)
            .flexible(true)
            .from_reader(file);
        Ok(TsvRows { path, reader })
    }

    fn each(&mut self, mut f: impl FnMut(usize, &csv::StringRecord) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        let mut line = 1;
        loop {
            match self.reader.read_record(&mut record) {
                Ok(true) => {
                    line += 1;
                    f(line, &record)?;
                }
                Ok(false) => return Ok(()),
                Err(e) => return Err(Error::data(&self.path, e.to_string())),
            }
        }
    }

    fn err(&self, line: usize, message: impl std::fmt::Display) -> Error {
        Error::data(&self.path, format!("line {line}: {message}"))
    }

    fn field<T: std::str::FromStr>(
        &self,
        record: &csv::StringRecord,
        line: usize,
        col: usize,
        what: &str,
    ) -> Result<T> {
        let raw = record
            .get(col)
            .ok_or_else(|| self.err(line, format!("missing column {what}")))?;
        raw.trim()
            .parse()
            .map_err(|_| self.err(line, format!("{what} is not a valid number: '{raw}'")))
    }
}

fn check_count(path: &Path, what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::data(
            path,
            format!("{found} {what}, meta.json declares {expected}"),
        ));
    }
    Ok(())
}

/// Reads only `meta.json` of a dataset directory.
pub fn load_meta(dir: impl AsRef<Path>) -> Result<DatasetMeta> {
    let meta_path = dir.as_ref().join(META);
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_text).map_err(|e| Error::data(&meta_path, e.to_string()))?;
    if meta.num_graphs == 0 || meta.num_nodes == 0 || meta.feature_dim == 0 {
        return Err(Error::data(
            &meta_path,
            "num_graphs, num_nodes and feature_dim must be positive",
        ));
    }
    Ok(meta)
}

/// Reads and validates a canonical dataset directory. Nodes keep their
/// `nodes.tsv` order; within each graph they are renumbered `0..n` in that order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<GraphCollection> {
    let dir = dir.as_ref();
    let meta = load_meta(dir)?;
    let multi = meta.num_graphs > 1 || meta.task == TaskKind::Graph;

    // nodes.tsv: global id -> (graph, local index)
    let mut nodes = TsvRows::open(dir, NODES)?;
    let mut position: HashMap<i64, (usize, usize)> = HashMap::new();
    let mut sizes = vec![0usize; meta.num_graphs];
    let mut labels: Vec<Vec<Option<usize>>> = vec![Vec::new(); meta.num_graphs];
    let mut order: Vec<i64> = Vec::new();
    {
        let rows = &mut nodes;
        let mut entries = Vec::new();
        rows.each(|line, rec| {
            entries.push((line, rec.clone()));
            Ok(())
        })?;
        for (line, rec) in entries {
            let id: i64 = rows.field(&rec, line, 0, "node_id")?;
            let graph: usize = rows.field(&rec, line, 1, "graph_id")?;
            let label: i64 = rows.field(&rec, line, 2, "label")?;
            if graph >= meta.num_graphs {
                return Err(rows.err(
                    line,
                    format!("graph_id {graph} out of range 0..{}", meta.num_graphs),
                ));
            }
            let label = match label {
                -1 => None,
                l if l >= 0 && meta.node_classes.is_some_and(|c| (l as usize) < c) => {
                    Some(l as usize)
                }
                l => {
                    return Err(
                        rows.err(line, format!("node label {l} outside the declared classes"))
                    )
                }
            };
            if position.insert(id, (graph, sizes[graph])).is_some() {
                return Err(rows.err(line, format!("duplicate node_id {id}")));
            }
            sizes[graph] += 1;
            labels[graph].push(label);
            order.push(id);
        }
    }
    check_count(&nodes.path, "nodes", order.len(), meta.num_nodes)?;
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::data(&nodes.path, format!("graph {g} has no nodes")));
    }

    // features.tsv
    let mut features: Vec<Vec<f64>> = sizes
        .iter()
        .map(|&s| vec![0.0; s * meta.feature_dim])
        .collect();
    let mut seen = vec![false; meta.num_nodes];
    let mut feat = TsvRows::open(dir, FEATURES)?;
    let mut rows_read = 0usize;
    let mut records = Vec::new();
    feat.each(|line, rec| {
        records.push((line, rec.clone()));
        Ok(())
    })?;
    for (line, rec) in records {
        if rec.len() != meta.feature_dim + 1 {
            return Err(feat.err(
                line,
                format!(
                    "expected {} feature columns, found {}",
                    meta.feature_dim,
                    rec.len().saturating_sub(1)
                ),
            ));
        }
        let id: i64 = feat.field(&rec, line, 0, "node_id")?;
        let &(graph, local) = position
            .get(&id)
            .ok_or_else(|| feat.err(line, format!("node_id {id} is not listed in {NODES}")))?;
        let global = order_index(&order, id);
        if std::mem::replace(&mut seen[global], true) {
            return Err(feat.err(line, format!("duplicate features for node {id}")));
        }
        let row = &mut features[graph][local * meta.feature_dim..(local + 1) * meta.feature_dim];
        for (j, slot) in row.iter_mut().enumerate() {
            let v: f64 = feat.field(&rec, line, j + 1, "feature")?;
            if !v.is_finite() {
                return Err(feat.err(line, format!("non-finite feature value {v}")));
            }
            *slot = v;
        }
        rows_read += 1;
    }
    check_count(&feat.path, "feature rows", rows_read, meta.num_nodes)?;

    // edges.tsv
    let mut edge_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); meta.num_graphs];
    let mut edges = TsvRows::open(dir, EDGES)?;
    let mut records = Vec::new();
    edges.each(|line, rec| {
        records.push((line, rec.clone()));
        Ok(())
    })?;
    for (line, rec) in records {
        let src: i64 = edges.field(&rec, line, 0, "src")?;
        let dst: i64 = edges.field(&rec, line, 1, "dst")?;
        let lookup = |id: i64| {
            position.get(&id).copied().ok_or_else(|| {
                edges.err(
                    line,
                    format!("edge references node {id}, which is absent from {NODES}"),
                )
            })
        };
        let (gu, u) = lookup(src)?;
        let (gv, v) = lookup(dst)?;
        if gu != gv {
            return Err(edges.err(line, format!("edge {src}-{dst} joins graphs {gu} and {gv}")));
        }
        edge_lists[gu].push((u, v));
    }

    // graphs.tsv
    let mut graph_labels: Vec<Option<usize>> = vec![None; meta.num_graphs];
    if multi {
        let mut graphs = TsvRows::open(dir, GRAPHS)?;
        let mut records = Vec::new();
        graphs.each(|line, rec| {
            records.push((line, rec.clone()));
            Ok(())
        })?;
        check_count(&graphs.path, "graph rows", records.len(), meta.num_graphs)?;
        for (line, rec) in records {
            let g: usize = graphs.field(&rec, line, 0, "graph_id")?;
            let label: i64 = graphs.field(&rec, line, 1, "label")?;
            if g >= meta.num_graphs {
                return Err(graphs.err(line, format!("graph_id {g} out of range")));
            }
            if label < 0 || !meta.graph_classes.is_some_and(|c| (label as usize) < c) {
                return Err(graphs.err(
                    line,
                    format!("graph label {label} outside the declared classes"),
                ));
            }
            if graph_labels[g].replace(label as usize).is_some() {
                return Err(graphs.err(line, format!("duplicate graph_id {g}")));
            }
        }
    }

    let any_node_labels = meta.node_classes.is_some();
    let graphs: Vec<GraphRecord> = features
        .into_iter()
        .zip(edge_lists)
        .zip(labels)
        .zip(graph_labels)
        .zip(&sizes)
        .map(|((((feat, edges), labels), graph_label), &n)| {
            let features = Tensor::new(n, meta.feature_dim, feat).expect("sized above");
            GraphRecord::new(
                features,
                edges,
                any_node_labels.then_some(labels),
                graph_label,
            )
        })
        .collect();
    let collection = GraphCollection { graphs, meta };
    if let Some(expected) = collection.meta.num_edges {
        check_count(
            &dir.join(EDGES),
            "distinct undirected edges",
            collection.num_edges(),
            expected,
        )?;
    }
    Ok(collection)
}

fn order_index(order: &[i64], id: i64) -> usize {
    // ids are usually 0..n in file order
    match usize::try_from(id) {
        Ok(i) if i < order.len() && order[i] == id => i,
        _ => order.iter().position(|&x| x == id).expect("id is known"),
    }
}

/// Writes the canonical files for `collection` into `dir`, numbering nodes
/// globally in graph order.
pub fn write_dataset(collection: &GraphCollection, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| -> Result<(PathBuf, BufWriter<File>)> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok((path, BufWriter::new(file)))
    };

    let mut meta = collection.meta.clone();
    meta.num_nodes = collection.num_nodes();
    meta.num_graphs = collection.graphs.len();
    meta.num_edges = Some(collection.num_edges());
    let (meta_path, mut out) = create(META)?;
    let text =
        serde_json::to_string_pretty(&meta).map_err(|e| Error::data(&meta_path, e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| Error::io(&meta_path, e))?;
    out.flush().map_err(|e| Error::io(&meta_path, e))?;

    let (nodes_path, mut nodes) = create(NODES)?;
    let (feat_path, mut feats) = create(FEATURES)?;
    let (edges_path, mut edges) = create(EDGES)?;
    let mut write_all = || -> std::io::Result<()> {
        writeln!(nodes, "node_id\tgraph_id\tlabel")?;
        write!(feats, "node_id")?;
        for j in 0..meta.feature_dim {
            write!(feats, "\tf{j}")?;
        }
        writeln!(feats)?;
        writeln!(edges, "src\tdst")?;
        let mut offset = 0;
        for (g, graph) in collection.graphs.iter().enumerate() {
            for i in 0..graph.num_nodes() {
                let label = graph
                    .node_labels
                    .as_ref()
                    .and_then(|l| l[i])
                    .map_or(-1, |l| l as i64);
                writeln!(nodes, "{}\t{g}\t{label}", offset + i)?;
                write!(feats, "{}", offset + i)?;
                for v in graph.features.row(i) {
                    write!(feats, "\t{v}")?;
                }
                writeln!(feats)?;
            }
            for &(u, v) in &graph.edges {
                writeln!(edges, "{}\t{}", offset + u, offset + v)?;
            }
            offset += graph.num_nodes();
        }
        nodes.flush()?;
        feats.flush()?;
        edges.flush()
    };
    write_all().map_err(|e| Error::io(&nodes_path, e))?;
    let _ = (feat_path, edges_path);

    if collection.graphs.len() > 1 || meta.task == TaskKind::Graph {
        let (graphs_path, mut out) = create(GRAPHS)?;
        let mut write_graphs = || -> std::io::Result<()> {
            writeln!(out, "graph_id\tlabel")?;
            for (g, graph) in collection.graphs.iter().enumerate() {
                writeln!(out, "{g}\t{}", graph.graph_label.map_or(-1, |l| l as i64))?;
            }
            out.flush()
        };
        write_graphs().map_err(|e| Error::io(&graphs_path, e))?;
    }
    Ok(())
}
