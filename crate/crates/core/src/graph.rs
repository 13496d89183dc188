//! Global relation graph: k-nearest-neighbour construction over relation
//! embeddings and symmetric normalization with self-loops.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::autodiff::Scalar;
use crate::data::{parse_id_row, write_id_rows};
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Mat};

/// One feature row per relation; row index is the relation id.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationEmbeddings(Mat<f64>);

impl RelationEmbeddings {
    pub fn new(matrix: Mat<f64>) -> Result<Self> {
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(Error::InvalidArgument("relation embeddings are empty".into()));
        }
        if !matrix.all_finite() {
            return Err(Error::InvalidArgument("relation embeddings contain non-finite values".into()));
        }
        Ok(RelationEmbeddings(matrix))
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    /// Reads `relation_id<TAB>v1<TAB>...` lines. Ids must cover `0..n` exactly once.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let Some((id, values)) = parse_id_row(path, line_no, line)? else {
                continue;
            };
            let expected = *dim.get_or_insert(values.len());
            if values.is_empty() || values.len() != expected {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("dimension {} does not match {expected}", values.len()),
                ));
            }
            if rows.len() <= id {
                rows.resize(id + 1, None);
            }
            if rows[id].replace(values).is_some() {
                return Err(Error::parse(path, line_no, format!("duplicate relation id {id}")));
            }
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(id, r)| {
                r.ok_or_else(|| Error::parse(path, 0, format!("missing embedding for relation {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(Error::parse(path, 0, "no embeddings"));
        }
        RelationEmbeddings::new(Mat::from_rows(rows)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_id_rows(path, self.0.iter_rows().enumerate())
    }
}

/// Undirected relation graph with its normalized propagation operator.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationGraph {
    features: RelationEmbeddings,
    neighbors: Vec<Vec<usize>>,
    // Sparse rows of D^-1/2 (A + I) D^-1/2.
    propagation: Vec<Vec<(usize, f64)>>,
}

impl RelationGraph {
    /// Graph over `features` with the given undirected edges.
    pub fn from_edges(
        features: RelationEmbeddings,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = features.len();
        let mut sets = vec![BTreeSet::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-edge on node {u}")));
            }
            sets[u].insert(v);
            sets[v].insert(u);
        }
        let neighbors: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let propagation = normalize(&neighbors);
        Ok(RelationGraph {
            features,
            neighbors,
            propagation,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn features(&self) -> &RelationEmbeddings {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    /// Undirected edges as `(u, v)` with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect()
    }

    /// Rows `rows` of `Â · h`.
    pub fn propagate<S: Scalar>(&self, h: &Mat<S>, rows: &[usize]) -> Result<Mat<S>> {
        if h.rows() != self.num_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for a graph of {} nodes",
                h.rows(),
                self.num_nodes()
            )));
        }
        let mut out = Mat::zeros(rows.len(), h.cols());
        for (o, &i) in rows.iter().enumerate() {
            let dst = out.row_mut(o);
            for &(j, w) in &self.propagation[i] {
                for (d, &x) in dst.iter_mut().zip(h.row(j)) {
                    *d = *d + x * w;
                }
            }
        }
        Ok(out)
    }

    /// Writes one `u<TAB>v` line per undirected edge, `u < v`.
    pub fn save_edges(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (u, v) in self.edges() {
            writeln!(out, "{u}\t{v}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_edges(features: RelationEmbeddings, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Vec<usize> = line
                .split('\t')
                .map(|f| f.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, i + 1, "expected u<TAB>v"))?;
            match parsed.as_slice() {
                [u, v] => edges.push((*u, *v)),
                _ => return Err(Error::parse(path, i + 1, "expected u<TAB>v")),
            }
        }
        RelationGraph::from_edges(features, edges)
    }
}

fn normalize(neighbors: &[Vec<usize>]) -> Vec<Vec<(usize, f64)>> {
    let deg: Vec<f64> = neighbors.iter().map(|ns| (ns.len() + 1) as f64).collect();
    let weight = |i: usize, j: usize| 1.0 / (deg[i] * deg[j]).sqrt();
    neighbors
        .iter()
        .enumerate()
        .map(|(i, ns)| {
            let mut row: Vec<(usize, f64)> = ns
                .iter()
                .map(|&j| (j, weight(i, j)))
                .chain(std::iter::once((i, weight(i, i))))
                .collect();
            row.sort_by_key(|&(j, _)| j);
            row
        })
        .collect()
}

/// Connects every relation to its `k` nearest relations by Euclidean distance
/// (ties to the lower id), symmetrized by union.
pub fn build_knn_graph(embeddings: &RelationEmbeddings, k: usize) -> Result<RelationGraph> {
    let n = embeddings.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..{n} for {n} relations, got {k}"
        )));
    }
    let m = embeddings.matrix();
    let mut edges = Vec::with_capacity(n * k);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        candidates.clear();
        candidates.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(m.row(i), m.row(j)), j)),
        );
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(candidates[..k].iter().map(|&(_, j)| (i, j)));
    }
    RelationGraph::from_edges(embeddings.clone(), edges)
}

/// Dense `D̃^{-1/2} (A + I) D̃^{-1/2}`.
pub fn normalized_adjacency(graph: &RelationGraph) -> Mat<f64> {
    let n = graph.num_nodes();
    let mut out = Mat::zeros(n, n);
    for (i, row) in graph.propagation.iter().enumerate() {
        for &(j, w) in row {
            out.set(i, j, w);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> RelationEmbeddings {
        RelationEmbeddings::new(Mat::new(points.len(), 1, points.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn two_nodes_forced_edge() {
        let g = build_knn_graph(&line(&[0.0, 5.0]), 1).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
        let a = normalized_adjacency(&g);
        assert_eq!(a.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn tie_breaks_to_lower_id() {
        // Node 1 is equidistant from 0 and 2; it picks 0.
        let g = build_knn_graph(&line(&[0.0, 1.0, 2.0, 10.0]), 1).unwrap();
        assert_eq!(g.edges(), vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn k_out_of_range() {
        assert!(build_knn_graph(&line(&[0.0, 1.0]), 2).is_err());
        assert!(build_knn_graph(&line(&[0.0, 1.0]), 0).is_err());
    }

    #[test]
    fn isolated_node_self_loop() {
        let g = RelationGraph::from_edges(line(&[3.0]), []).unwrap();
        assert_eq!(normalized_adjacency(&g).as_slice(), &[1.0]);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(RelationGraph::from_edges(line(&[0.0, 1.0]), [(0, 0)]).is_err());
        assert!(RelationGraph::from_edges(line(&[0.0, 1.0]), [(0, 2)]).is_err());
    }

    #[test]
    fn regular_graph_constant_row_sums() {
        // 4-cycle: every degree 2.
        let g = RelationGraph::from_edges(line(&[0.0, 1.0, 2.0, 3.0]), [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let a = normalized_adjacency(&g);
        for r in a.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn default_k_degree() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i * i) as f64 * 0.1, (i % 7) as f64]).collect();
        let emb = RelationEmbeddings::new(Mat::from_rows(rows).unwrap()).unwrap();
        let g = build_knn_graph(&emb, 10).unwrap();
        assert!((0..30).all(|i| g.degree(i) >= 10));
    }

    #[test]
    fn propagate_matches_dense() {
        let g = build_knn_graph(&line(&[0.0, 1.0, 2.5, 4.0, 9.0]), 2).unwrap();
        let h = Mat::from_rows((0..5).map(|i| vec![i as f64, 1.0 - i as f64]).collect()).unwrap();
        let dense = normalized_adjacency(&g).matmul(&h).unwrap();
        let sparse = g.propagate(&h, &[0, 1, 2, 3, 4]).unwrap();
        for (a, b) in dense.as_slice().iter().zip(sparse.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        let picked = g.propagate(&h, &[3, 1]).unwrap();
        assert_eq!(picked.row(0), sparse.row(3));
        assert_eq!(picked.row(1), sparse.row(1));
    }

    #[test]
    fn file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let emb = line(&[0.25, 1.0, 2.0, 10.0, -3.5]);
        let epath = dir.path().join("emb.tsv");
        emb.save(&epath).unwrap();
        let loaded = RelationEmbeddings::load(&epath).unwrap();
        assert_eq!(loaded, emb);
        let g = build_knn_graph(&emb, 2).unwrap();
        let gpath = dir.path().join("graph.tsv");
        g.save_edges(&gpath).unwrap();
        let text = fs::read_to_string(&gpath).unwrap();
        assert!(text.lines().all(|l| {
            let (u, v) = l.split_once('\t').unwrap();
            u.parse::<usize>().unwrap() < v.parse::<usize>().unwrap()
        }));
        assert_eq!(RelationGraph::load_edges(loaded, &gpath).unwrap(), g);
    }
}
