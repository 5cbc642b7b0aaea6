//! Proposal graphs: nodes carry a flat feature vector, undirected edges carry
//! the IoU of the two proposals.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

pub type NodeId = u64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// An undirected simple graph over proposals.
///
/// Edges are kept sorted by `(i, j)` with `i < j`; the adjacency lists are
/// derived from them and sorted by neighbor index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalGraph {
    node_ids: Vec<NodeId>,
    features: Array2<f64>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl ProposalGraph {
    pub fn new(node_ids: Vec<NodeId>, features: Array2<f64>, mut edges: Vec<Edge>) -> Result<Self> {
        let m = node_ids.len();
        if features.nrows() != m {
            return Err(Error::invalid(format!("{} node ids but {} feature rows", m, features.nrows())));
        }
        let mut sorted_ids = node_ids.clone();
        sorted_ids.sort_unstable();
        if let Some(w) = sorted_ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate node id {}", w[0])));
        }
        for e in &edges {
            if e.i >= e.j || e.j >= m {
                return Err(Error::invalid(format!("edge ({}, {}) must satisfy i < j < {m}", e.i, e.j)));
            }
            if !(e.w.is_finite() && e.w > 0.0) {
                return Err(Error::invalid(format!("edge ({}, {}) has non-positive weight {}", e.i, e.j, e.w)));
            }
        }
        edges.sort_by_key(|e| (e.i, e.j));
        if edges.windows(2).any(|p| (p[0].i, p[0].j) == (p[1].i, p[1].j)) {
            return Err(Error::invalid("duplicate edge"));
        }
        let mut adjacency = vec![Vec::new(); m];
        for e in &edges {
            adjacency[e.i].push((e.j, e.w));
            adjacency[e.j].push((e.i, e.w));
        }
        for row in &mut adjacency {
            row.sort_by_key(|&(n, _)| n);
        }
        Ok(Self { node_ids, features, edges, adjacency })
    }

    /// Graph on nodes `0..m` with zero-width features; handy for pure
    /// structure computations.
    pub fn from_edges(m: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let edges = edges.iter().map(|&(a, b, w)| Edge { i: a.min(b), j: a.max(b), w }).collect();
        Self::new((0..m as NodeId).collect(), Array2::zeros((m, 0)), edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.node_ids
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let row = &self.adjacency[a];
        row.binary_search_by_key(&b, |&(n, _)| n).ok().map(|k| row[k].1)
    }

    pub fn weighted_degree(&self, node: usize) -> f64 {
        self.adjacency[node].iter().map(|&(_, w)| w).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.w).sum()
    }

    /// Induced subgraph on `nodes` (local indices, strictly ascending).
    pub fn induced(&self, nodes: &[usize]) -> ProposalGraph {
        debug_assert!(nodes.windows(2).all(|p| p[0] < p[1]));
        let mut local = vec![usize::MAX; self.node_count()];
        for (k, &n) in nodes.iter().enumerate() {
            local[n] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| local[e.i] != usize::MAX && local[e.j] != usize::MAX)
            .map(|e| Edge { i: local[e.i], j: local[e.j], w: e.w })
            .collect();
        let ids = nodes.iter().map(|&n| self.node_ids[n]).collect();
        let features = self.features.select(Axis(0), nodes);
        ProposalGraph::new(ids, features, edges).expect("induced subgraph of a valid graph")
    }
}

/// Builds the IoU graph: an edge joins `i < j` iff `iou(box_i, box_j) > iou_thr`.
pub fn build_graph(boxes: &[BoundingBox], features: Array2<f64>, iou_thr: f64) -> Result<ProposalGraph> {
    if boxes.len() != features.nrows() {
        return Err(Error::invalid(format!("{} boxes but {} feature rows", boxes.len(), features.nrows())));
    }
    if !(0.0..1.0).contains(&iou_thr) {
        return Err(Error::invalid(format!("iou threshold {iou_thr} outside [0, 1)")));
    }
    let m = boxes.len();
    // Rows are computed independently and concatenated in index order, so the
    // edge list does not depend on the worker count.
    let edges: Vec<Edge> = (0..m)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..m)
                .filter_map(|j| {
                    let w = iou(&boxes[i], &boxes[j]);
                    (w > iou_thr).then_some(Edge { i, j, w })
                })
                .collect::<Vec<_>>()
        })
        .flatten_iter()
        .collect();
    ProposalGraph::new((0..m as NodeId).collect(), features, edges)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub labels: Vec<usize>,
    pub component_sizes: Vec<usize>,
}

impl ComponentLabeling {
    pub fn component_count(&self) -> usize {
        self.component_sizes.len()
    }

    /// Member lists per component, each ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.component_count()];
        for (node, &l) in self.labels.iter().enumerate() {
            out[l].push(node);
        }
        out
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components, labelled in ascending order of each component's
/// smallest node index.
pub fn connected_components(g: &ProposalGraph) -> ComponentLabeling {
    let m = g.node_count();
    let mut dsu = DisjointSet::new(m);
    for e in g.edges() {
        dsu.union(e.i, e.j);
    }
    let mut root_label = vec![usize::MAX; m];
    let mut labels = Vec::with_capacity(m);
    let mut component_sizes = Vec::new();
    for node in 0..m {
        let r = dsu.find(node);
        if root_label[r] == usize::MAX {
            root_label[r] = component_sizes.len();
            component_sizes.push(0);
        }
        labels.push(root_label[r]);
        component_sizes[root_label[r]] += 1;
    }
    ComponentLabeling { labels, component_sizes }
}

/// Drops every connected component with fewer than `min_size` nodes.
///
/// Returns the induced subgraph on the survivors and the ascending ids of the
/// removed nodes.
pub fn filter_components(g: &ProposalGraph, min_size: usize) -> (ProposalGraph, Vec<NodeId>) {
    let comps = connected_components(g);
    let (keep, drop): (Vec<usize>, Vec<usize>) =
        (0..g.node_count()).partition(|&n| comps.component_sizes[comps.labels[n]] >= min_size);
    let mut removed: Vec<NodeId> = drop.iter().map(|&n| g.node_ids()[n]).collect();
    removed.sort_unstable();
    (g.induced(&keep), removed)
}
