//! Normalized-cut partitioning.
//!
//! The objective is `Ncut = Σ_j cut(A_j, V∖A_j) / assoc(A_j, V)` over the sets
//! of a partition. Two-way cuts use the spectral relaxation: the Fiedler
//! vector `z` of `L_sym = I − D^{-1/2} W D^{-1/2}` is mapped back with
//! `y = D^{-1/2} z`, nodes are sorted by `y`, and every prefix split is scored
//! with the exact objective.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{connected_components, ProposalGraph};

/// Largest graph `brute_force_ncut` accepts.
pub const BRUTE_FORCE_LIMIT: usize = 15;

/// Two objective values closer than this are treated as a tie.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    set_count: usize,
}

impl Partition {
    /// Validates that labels are dense in `[0, k)` with every set non-empty.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let set_count = labels.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; set_count];
        for &l in &labels {
            seen[l] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("partition has an empty set"));
        }
        Ok(Self { labels, set_count })
    }

    /// Relabels so that sets are numbered by their smallest member.
    pub fn canonical(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self { labels, set_count: map.len() }
    }

    /// Builds a partition from disjoint member lists covering `0..n`.
    pub fn from_sets(n: usize, sets: &[Vec<usize>]) -> Self {
        let mut raw = vec![usize::MAX; n];
        for (k, set) in sets.iter().enumerate() {
            for &m in set {
                raw[m] = k;
            }
        }
        debug_assert!(raw.iter().all(|&l| l != usize::MAX));
        Self::canonical(&raw)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn set_count(&self) -> usize {
        self.set_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sets(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.set_count];
        for (n, &l) in self.labels.iter().enumerate() {
            out[l].push(n);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetCut {
    pub cut: f64,
    pub assoc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutReport {
    pub ncut_value: f64,
    pub per_set: Vec<SetCut>,
}

/// Total connection from `set` to the whole graph, i.e. its weighted-degree sum.
pub fn assoc(g: &ProposalGraph, set: &[usize]) -> f64 {
    set.iter().map(|&u| g.weighted_degree(u)).sum()
}

/// Weight of edges with exactly one endpoint in `set`.
pub fn cut(g: &ProposalGraph, set: &[usize]) -> f64 {
    let mut inside = vec![false; g.node_count()];
    for &u in set {
        inside[u] = true;
    }
    g.edges().iter().filter(|e| inside[e.i] != inside[e.j]).map(|e| e.w).sum()
}

pub fn ncut_value(g: &ProposalGraph, p: &Partition) -> Result<CutReport> {
    if p.len() != g.node_count() {
        return Err(Error::invalid(format!("partition covers {} nodes, graph has {}", p.len(), g.node_count())));
    }
    let labels = p.labels();
    let mut per_set = vec![SetCut { cut: 0.0, assoc: 0.0 }; p.set_count()];
    for e in g.edges() {
        let (a, b) = (labels[e.i], labels[e.j]);
        per_set[a].assoc += e.w;
        per_set[b].assoc += e.w;
        if a != b {
            per_set[a].cut += e.w;
            per_set[b].cut += e.w;
        }
    }
    let mut total = 0.0;
    for (set, s) in per_set.iter().enumerate() {
        if s.assoc <= 0.0 {
            return Err(Error::DegeneratePartition { set });
        }
        total += s.cut / s.assoc;
    }
    Ok(CutReport { ncut_value: total, per_set })
}

/// Symmetric normalized Laplacian `I − D^{-1/2} W D^{-1/2}`.
pub fn normalized_laplacian(g: &ProposalGraph) -> Result<Array2<f64>> {
    let m = g.node_count();
    let inv_sqrt: Vec<f64> = (0..m)
        .map(|n| {
            let d = g.weighted_degree(n);
            if d > 0.0 {
                Ok(1.0 / d.sqrt())
            } else {
                Err(Error::invalid(format!("node {n} has zero degree")))
            }
        })
        .collect::<Result<_>>()?;
    let mut l = Array2::eye(m);
    for e in g.edges() {
        let v = -e.w * inv_sqrt[e.i] * inv_sqrt[e.j];
        l[[e.i, e.j]] = v;
        l[[e.j, e.i]] = v;
    }
    Ok(l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenConfig {
    /// Off-diagonal Frobenius norm, relative to the matrix norm, at which the
    /// sweeps stop (one polishing sweep follows).
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 100 }
    }
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching unit eigenvectors
/// as columns. The rotation order is fixed, so results are reproducible.
pub fn symmetric_eigen(a: &Array2<f64>, cfg: &EigenConfig) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid(format!("matrix is {}x{}, not square", n, a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    for i in 0..n {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-12 * (1.0 + a[[i, j]].abs()) {
                return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }

    // row-major working copies
    let mut m: Vec<f64> = a.iter().copied().collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off_norm = |m: &[f64]| {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += m[p * n + q] * m[p * n + q];
            }
        }
        (2.0 * s).sqrt()
    };

    let mut polish = false;
    let mut sweeps = 0;
    loop {
        let off = off_norm(&m);
        if off == 0.0 {
            break;
        }
        if off <= cfg.tol * norm {
            if polish {
                break;
            }
            polish = true;
        }
        if sweeps == cfg.max_sweeps {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge in {} sweeps (off-diagonal norm {off:e})",
                cfg.max_sweeps
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                m[p * n + p] -= t * apq;
                m[q * n + q] += t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[r * n + p];
                    let arq = m[r * n + q];
                    let np = c * arp - s * arq;
                    let nq = s * arp + c * arq;
                    m[r * n + p] = np;
                    m[p * n + r] = np;
                    m[r * n + q] = nq;
                    m[q * n + r] = nq;
                }
                for r in 0..n {
                    let vp = v[r * n + p];
                    let vq = v[r * n + q];
                    v[r * n + p] = c * vp - s * vq;
                    v[r * n + q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[x * n + x].total_cmp(&m[y * n + y]).then(x.cmp(&y)));
    let values = order.iter().map(|&k| m[k * n + k]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        for r in 0..n {
            vectors[[r, col]] = v[r * n + k];
        }
    }
    Ok((values, vectors))
}

/// Flips `v` so that its largest-magnitude entry (lowest index on ties) is positive.
fn fix_sign(v: &mut Array1<f64>) {
    let max = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if let Some(lead) = v.iter().find(|x| x.abs() >= max - TIE_EPS) {
        if *lead < 0.0 {
            v.mapv_inplace(|x| -x);
        }
    }
}

/// Second-smallest eigenpair of a symmetric Laplacian, unit norm, sign fixed.
pub fn fiedler_vector(l: &Array2<f64>, cfg: &EigenConfig) -> Result<(f64, Array1<f64>)> {
    if l.nrows() < 2 {
        return Err(Error::invalid("a Fiedler vector needs at least two nodes"));
    }
    let (values, vectors) = symmetric_eigen(l, cfg)?;
    let mut v = vectors.column(1).to_owned();
    let norm = v.dot(&v).sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Numerical("eigenvector has zero norm".into()));
    }
    v /= norm;
    fix_sign(&mut v);
    Ok((values[1], v))
}

/// Best prefix split of nodes ordered by the back-mapped Fiedler vector.
pub fn two_way_ncut(g: &ProposalGraph, cfg: &EigenConfig) -> Result<(Partition, CutReport)> {
    let m = g.node_count();
    if m < 2 {
        return Err(Error::invalid("two-way cut needs at least two nodes"));
    }
    let l = normalized_laplacian(g)?;
    let (_, z) = fiedler_vector(&l, cfg)?;
    let degree: Vec<f64> = (0..m).map(|n| g.weighted_degree(n)).collect();
    let y: Vec<f64> = (0..m).map(|n| z[n] / degree[n].sqrt()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));

    let total: f64 = degree.iter().sum();
    let mut inside = vec![false; m];
    let (mut cut_w, mut assoc_a) = (0.0, 0.0);
    let mut best = (f64::INFINITY, 0usize);
    for (k, &u) in order.iter().enumerate().take(m - 1) {
        assoc_a += degree[u];
        for &(v, w) in g.neighbors(u) {
            if inside[v] {
                cut_w -= w;
            } else {
                cut_w += w;
            }
        }
        inside[u] = true;
        let value = cut_w / assoc_a + cut_w / (total - assoc_a);
        // strict improvement keeps the earliest (smallest first set) split
        if value < best.0 - TIE_EPS {
            best = (value, k + 1);
        }
    }

    let mut raw = vec![1usize; m];
    for &u in &order[..best.1] {
        raw[u] = 0;
    }
    let p = Partition::canonical(&raw);
    let report = ncut_value(g, &p)?;
    Ok((p, report))
}

/// Hierarchical bisection: keep splitting while the best two-way cut has
/// `Ncut ≤ stop_ncut` and leaves at least `min_part` nodes on each side.
///
/// A piece that falls apart into several connected components is split along
/// them (an `Ncut` of zero) before any spectral cut.
pub fn recursive_ncut(g: &ProposalGraph, stop_ncut: f64, min_part: usize, cfg: &EigenConfig) -> Result<Partition> {
    let all: Vec<usize> = (0..g.node_count()).collect();
    let mut parts = Vec::new();
    split_into(g, all, stop_ncut, min_part.max(1), cfg, &mut parts)?;
    Ok(Partition::from_sets(g.node_count(), &parts))
}

fn split_into(
    g: &ProposalGraph,
    nodes: Vec<usize>,
    stop_ncut: f64,
    min_part: usize,
    cfg: &EigenConfig,
    out: &mut Vec<Vec<usize>>,
) -> Result<()> {
    if nodes.len() < 2 {
        out.push(nodes);
        return Ok(());
    }
    let sub = g.induced(&nodes);
    let comps = connected_components(&sub);
    let sides: Vec<Vec<usize>> = if comps.component_count() > 1 {
        if 0.0 > stop_ncut || comps.component_sizes.iter().any(|&s| s < min_part) {
            out.push(nodes);
            return Ok(());
        }
        comps.members()
    } else {
        let (p, report) = two_way_ncut(&sub, cfg)?;
        let sets = p.sets();
        if report.ncut_value > stop_ncut || sets.iter().any(|s| s.len() < min_part) {
            out.push(nodes);
            return Ok(());
        }
        sets
    };
    for side in sides {
        let global = side.into_iter().map(|k| nodes[k]).collect();
        split_into(g, global, stop_ncut, min_part, cfg, out)?;
    }
    Ok(())
}

/// Exhaustive minimum-Ncut bipartition for graphs of at most 15 nodes.
///
/// Bipartitions in which a side has zero association are skipped. Ties go to
/// the lexicographically smallest label vector, node 0 always carrying label 0.
pub fn brute_force_ncut(g: &ProposalGraph) -> Result<(Partition, CutReport)> {
    let m = g.node_count();
    if m > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeLimit { nodes: m, limit: BRUTE_FORCE_LIMIT });
    }
    if m < 2 {
        return Err(Error::invalid("exhaustive cut needs at least two nodes"));
    }
    let mut best: Option<(Vec<usize>, CutReport)> = None;
    for mask in 1u32..(1u32 << (m - 1)) {
        let mut labels = vec![0usize; m];
        for (i, l) in labels.iter_mut().enumerate().skip(1) {
            *l = ((mask >> (m - 1 - i)) & 1) as usize;
        }
        let p = Partition { labels, set_count: 2 };
        let report = match ncut_value(g, &p) {
            Ok(r) => r,
            Err(Error::DegeneratePartition { .. }) => continue,
            Err(e) => return Err(e),
        };
        let better = match &best {
            None => true,
            Some((bl, br)) => {
                let (a, b) = (report.ncut_value, br.ncut_value);
                a < b - TIE_EPS || ((a - b).abs() <= TIE_EPS && p.labels < *bl)
            }
        };
        if better {
            best = Some((p.labels, report));
        }
    }
    let (labels, report) =
        best.ok_or_else(|| Error::invalid("no bipartition with positive association on both sides"))?;
    Ok((Partition { labels, set_count: 2 }, report))
}
