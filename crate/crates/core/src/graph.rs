//! Outcome-unit dependency networks and outcome/intervention interference.
//!
//! Three structures live here:
//!
//! - [`Network`]: an undirected, unweighted graph over outcome units.
//! - [`InterferenceMatrix`]: sparse `n × m` weights linking outcome units to
//!   intervention units for one time period.
//! - [`WeightedGraph`]: the outcome-unit projection of an interference matrix,
//!   with Dijkstra distances.
//!
//! Distances feed the network HAC variance through the [`DistanceSource`]
//! trait, which only ever asks for the nodes within a bounded radius of a
//! source node. Hop distances are computed by truncated BFS and memoized per
//! source in a [`DistanceOracle`].

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::OnceLock;

use thiserror::Error;

/// Weight sums below this are treated as zero in the bipartite projection.
pub const PROJECTION_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node index {index} out of range for {size} nodes")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("interference weight {weight} at ({row}, {col}) is outside [0, 1]")]
    InvalidWeight { row: usize, col: usize, weight: f64 },
    #[error("negative edge weight {0}")]
    NegativeEdgeWeight(f64),
}

/// Undirected simple graph over `n` outcome units.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    adjacency: Vec<Vec<usize>>,
    edge_count: usize,
}

impl Network {
    /// Builds a network from an edge list. Mirrored and repeated pairs are
    /// collapsed into a single edge.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in edges {
            for idx in [a, b] {
                if idx >= node_count {
                    return Err(GraphError::IndexOutOfRange {
                        index: idx,
                        size: node_count,
                    });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let mut edge_count = 0;
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
            edge_count += nbrs.len();
        }
        Ok(Self {
            adjacency,
            edge_count: edge_count / 2,
        })
    }

    /// Cycle graph `0 - 1 - ... - (n-1) - 0`.
    pub fn ring(node_count: usize) -> Self {
        let edges: Vec<(usize, usize)> = (0..node_count)
            .map(|i| (i, (i + 1) % node_count))
            .filter(|&(a, b)| a != b)
            .collect();
        Self::new(node_count, &edges).expect("ring edges are valid")
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    /// Normalized `(i, k)` pairs with `i < k`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&k| k > i).map(|&k| (i, k)));
        }
        out
    }

    fn check(&self, node: usize) -> Result<(), GraphError> {
        if node >= self.node_count() {
            Err(GraphError::IndexOutOfRange {
                index: node,
                size: self.node_count(),
            })
        } else {
            Ok(())
        }
    }

    /// BFS from `source`, stopping after `max_depth` layers when given.
    fn bfs_layers(&self, source: usize, max_depth: Option<usize>) -> BfsLayers {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut order = vec![source];
        let mut layer_starts = vec![0, 1];
        seen[source] = true;
        let mut depth = 0;
        loop {
            if max_depth.is_some_and(|d| depth >= d) {
                break;
            }
            let start = layer_starts[depth];
            let end = layer_starts[depth + 1];
            for idx in start..end {
                let u = order[idx];
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        order.push(v);
                    }
                }
            }
            if order.len() == end {
                break;
            }
            layer_starts.push(order.len());
            depth += 1;
        }
        BfsLayers {
            order,
            layer_starts,
        }
    }
}

/// Nodes reachable from a source grouped by exact hop distance.
#[derive(Debug, Clone)]
struct BfsLayers {
    order: Vec<usize>,
    // layer `s` is `order[layer_starts[s]..layer_starts[s + 1]]`
    layer_starts: Vec<usize>,
}

impl BfsLayers {
    fn depth(&self) -> usize {
        self.layer_starts.len() - 1
    }

    fn layer(&self, s: usize) -> &[usize] {
        if s >= self.depth() {
            return &[];
        }
        &self.order[self.layer_starts[s]..self.layer_starts[s + 1]]
    }

    fn distance_to(&self, target: usize) -> Option<usize> {
        let pos = self.order.iter().position(|&v| v == target)?;
        Some(self.layer_starts.partition_point(|&start| start <= pos) - 1)
    }
}

/// Memoized hop distances over a [`Network`].
///
/// Each source's BFS runs at most once and is truncated at `max_depth` when
/// one is set. With truncation, a `None` from [`DistanceOracle::path_distance`]
/// means "farther than `max_depth` or unreachable".
#[derive(Debug)]
pub struct DistanceOracle<'a> {
    network: &'a Network,
    max_depth: Option<usize>,
    cache: Vec<OnceLock<BfsLayers>>,
}

impl<'a> DistanceOracle<'a> {
    pub fn new(network: &'a Network) -> Self {
        Self::with_max_depth(network, None)
    }

    /// Oracle whose BFS never goes past `depth`; enough for a HAC bandwidth
    /// of `depth` under hop distance.
    pub fn truncated(network: &'a Network, depth: usize) -> Self {
        Self::with_max_depth(network, Some(depth))
    }

    fn with_max_depth(network: &'a Network, max_depth: Option<usize>) -> Self {
        let cache = (0..network.node_count()).map(|_| OnceLock::new()).collect();
        Self {
            network,
            max_depth,
            cache,
        }
    }

    pub fn network(&self) -> &Network {
        self.network
    }

    pub fn max_depth(&self) -> Option<usize> {
        self.max_depth
    }

    fn layers(&self, source: usize) -> &BfsLayers {
        self.cache[source].get_or_init(|| self.network.bfs_layers(source, self.max_depth))
    }

    /// Shortest-path edge count, `None` when no path exists.
    pub fn path_distance(&self, i: usize, k: usize) -> Result<Option<usize>, GraphError> {
        self.network.check(i)?;
        self.network.check(k)?;
        if i == k {
            return Ok(Some(0));
        }
        Ok(self.layers(i).distance_to(k))
    }

    /// Nodes at exactly distance `s` from `i`, sorted ascending.
    pub fn neighborhood_shell(&self, i: usize, s: usize) -> Result<Vec<usize>, GraphError> {
        self.network.check(i)?;
        let mut shell = if self.max_depth.is_some_and(|d| s > d) {
            self.network.bfs_layers(i, Some(s)).layer(s).to_vec()
        } else {
            self.layers(i).layer(s).to_vec()
        };
        shell.sort_unstable();
        Ok(shell)
    }

    /// `n⁻¹ Σᵢ |shell(i, s)|^v`.
    pub fn average_shell_size(&self, s: usize, v: f64) -> f64 {
        let n = self.network.node_count();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = (0..n)
            .map(|i| {
                let size = self.neighborhood_shell(i, s).expect("index in range").len() as f64;
                size.powf(v)
            })
            .sum();
        total / n as f64
    }
}

/// Anything that can list the nodes within a radius of a source node.
///
/// Implementations must include the source itself at distance zero and must
/// return neighbors in a deterministic order.
pub trait DistanceSource: Sync {
    fn node_count(&self) -> usize;

    /// `(node, distance)` pairs with `distance <= radius`.
    fn within(&self, source: usize, radius: f64) -> Vec<(usize, f64)>;
}

impl DistanceSource for DistanceOracle<'_> {
    fn node_count(&self) -> usize {
        self.network.node_count()
    }

    fn within(&self, source: usize, radius: f64) -> Vec<(usize, f64)> {
        if !(radius >= 0.0) {
            return Vec::new();
        }
        let depth = if radius.is_finite() {
            radius.floor() as usize
        } else {
            usize::MAX
        };
        let collect = |layers: &BfsLayers| {
            let top = layers.depth().min(depth.saturating_add(1));
            let mut out = Vec::new();
            for s in 0..top {
                out.extend(layers.layer(s).iter().map(|&v| (v, s as f64)));
            }
            out
        };
        match self.max_depth {
            Some(d) if depth > d => collect(&self.network.bfs_layers(source, Some(depth))),
            _ => collect(self.layers(source)),
        }
    }
}

/// Every unit independent of every other: only the source is within any
/// radius. Useful when no network is supplied and the bandwidth is zero.
#[derive(Debug, Clone, Copy)]
pub struct Isolated(pub usize);

impl DistanceSource for Isolated {
    fn node_count(&self) -> usize {
        self.0
    }

    fn within(&self, source: usize, radius: f64) -> Vec<(usize, f64)> {
        if radius >= 0.0 {
            vec![(source, 0.0)]
        } else {
            Vec::new()
        }
    }
}

/// Distances restricted to a subset of nodes, reindexed `0..kept.len()`.
pub struct SubsetDistances<'a> {
    inner: &'a dyn DistanceSource,
    kept: Vec<usize>,
    position: Vec<Option<usize>>,
}

impl<'a> SubsetDistances<'a> {
    /// `kept` lists original node indices in their new order.
    pub fn new(inner: &'a dyn DistanceSource, kept: Vec<usize>) -> Result<Self, GraphError> {
        let size = inner.node_count();
        let mut position = vec![None; size];
        for (new, &old) in kept.iter().enumerate() {
            if old >= size {
                return Err(GraphError::IndexOutOfRange { index: old, size });
            }
            position[old] = Some(new);
        }
        Ok(Self {
            inner,
            kept,
            position,
        })
    }
}

impl DistanceSource for SubsetDistances<'_> {
    fn node_count(&self) -> usize {
        self.kept.len()
    }

    fn within(&self, source: usize, radius: f64) -> Vec<(usize, f64)> {
        self.inner
            .within(self.kept[source], radius)
            .into_iter()
            .filter_map(|(j, d)| self.position[j].map(|p| (p, d)))
            .collect()
    }
}

/// Sparse `rows × cols` interference weights for a single period.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceMatrix {
    cols: usize,
    // per-row `(col, weight)` sorted by column; weights in (0, 1]
    rows: Vec<Vec<(usize, f64)>>,
}

impl InterferenceMatrix {
    /// Builds from `(row, col, weight)` triplets. Zero weights are dropped;
    /// repeated coordinates keep the last value.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, GraphError> {
        let mut maps: Vec<HashMap<usize, f64>> = vec![HashMap::new(); rows];
        for &(r, c, w) in triplets {
            if r >= rows {
                return Err(GraphError::IndexOutOfRange {
                    index: r,
                    size: rows,
                });
            }
            if c >= cols {
                return Err(GraphError::IndexOutOfRange {
                    index: c,
                    size: cols,
                });
            }
            if !(0.0..=1.0).contains(&w) {
                return Err(GraphError::InvalidWeight {
                    row: r,
                    col: c,
                    weight: w,
                });
            }
            if w == 0.0 {
                maps[r].remove(&c);
            } else {
                maps[r].insert(c, w);
            }
        }
        let rows = maps
            .into_iter()
            .map(|m| {
                let mut row: Vec<(usize, f64)> = m.into_iter().collect();
                row.sort_unstable_by_key(|&(c, _)| c);
                row
            })
            .collect();
        Ok(Self { cols, rows })
    }

    /// Identity interference: outcome unit `i` is affected only by
    /// intervention unit `i`.
    pub fn identity(n: usize) -> Self {
        Self {
            cols: n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn col_count(&self) -> usize {
        self.cols
    }

    /// Nonzero `(col, weight)` entries of one row; its columns are the
    /// interference set of that outcome unit.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for (r, row) in self.rows.iter().enumerate() {
            out.extend(row.iter().map(|&(c, w)| (r, c, w)));
        }
        out
    }

    /// Divides each nonempty row by its sum.
    pub fn row_normalized(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let total: f64 = row.iter().map(|&(_, w)| w).sum();
                row.iter().map(|&(c, w)| (c, w / total)).collect()
            })
            .collect();
        Self {
            cols: self.cols,
            rows,
        }
    }

    /// Keeps only the first `rows` outcome units.
    pub fn truncate_rows(&self, rows: usize) -> Self {
        Self {
            cols: self.cols,
            rows: self.rows.iter().take(rows).cloned().collect(),
        }
    }

    /// Column → rows with a nonzero entry in that column.
    pub fn column_index(&self) -> Vec<Vec<(usize, f64)>> {
        let mut index = vec![Vec::new(); self.cols];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, w) in row {
                index[c].push((r, w));
            }
        }
        index
    }
}

/// Undirected graph with nonnegative edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    pub fn new(node_count: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b, w) in edges {
            for idx in [a, b] {
                if idx >= node_count {
                    return Err(GraphError::IndexOutOfRange {
                        index: idx,
                        size: node_count,
                    });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if !(w >= 0.0) {
                return Err(GraphError::NegativeEdgeWeight(w));
            }
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        }
        Ok(Self { adjacency })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    /// Lightest weight between `a` and `b`, if they are adjacent.
    pub fn edge_weight(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency[a]
            .iter()
            .filter(|&&(v, _)| v == b)
            .map(|&(_, w)| w)
            .min_by(f64::total_cmp)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Dijkstra distances from `source`, settling only nodes with distance
    /// `<= radius`. Output is sorted by (distance, node).
    pub fn dijkstra_within(&self, source: usize, radius: f64) -> Vec<(usize, f64)> {
        let n = self.node_count();
        let mut best = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        let mut out = Vec::new();
        best[source] = 0.0;
        heap.push(HeapItem {
            dist: 0.0,
            node: source,
        });
        while let Some(HeapItem { dist, node }) = heap.pop() {
            if done[node] || dist > best[node] {
                continue;
            }
            if dist > radius {
                break;
            }
            done[node] = true;
            out.push((node, dist));
            for &(v, w) in &self.adjacency[node] {
                let cand = dist + w;
                if cand < best[v] && cand <= radius {
                    best[v] = cand;
                    heap.push(HeapItem {
                        dist: cand,
                        node: v,
                    });
                }
            }
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Weighted shortest-path length, `f64::INFINITY` when disconnected.
    pub fn shortest_path(&self, i: usize, k: usize) -> Result<f64, GraphError> {
        let n = self.node_count();
        for idx in [i, k] {
            if idx >= n {
                return Err(GraphError::IndexOutOfRange {
                    index: idx,
                    size: n,
                });
            }
        }
        Ok(self
            .dijkstra_within(i, f64::INFINITY)
            .into_iter()
            .find(|&(v, _)| v == k)
            .map_or(f64::INFINITY, |(_, d)| d))
    }
}

impl DistanceSource for WeightedGraph {
    fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    fn within(&self, source: usize, radius: f64) -> Vec<(usize, f64)> {
        if !(radius >= 0.0) {
            return Vec::new();
        }
        self.dijkstra_within(source, radius)
    }
}

#[derive(Debug, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties broken by node index
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Projects interference weights onto outcome units:
/// `w_out(i, i') = 1 / Σ_j min(w_ij, w_i'j)`, with no edge when the sum
/// vanishes. Only pairs sharing a column are ever visited.
pub fn project_bipartite(w: &InterferenceMatrix) -> WeightedGraph {
    let mut overlap: HashMap<(usize, usize), f64> = HashMap::new();
    for rows in w.column_index() {
        for (a, &(ra, wa)) in rows.iter().enumerate() {
            for &(rb, wb) in &rows[a + 1..] {
                let key = if ra < rb { (ra, rb) } else { (rb, ra) };
                *overlap.entry(key).or_insert(0.0) += wa.min(wb);
            }
        }
    }
    let mut edges: Vec<(usize, usize, f64)> = overlap
        .into_iter()
        .filter(|&(_, total)| total >= PROJECTION_EPS)
        .map(|((a, b), total)| (a, b, 1.0 / total))
        .collect();
    edges.sort_unstable_by_key(|e| (e.0, e.1));
    WeightedGraph::new(w.row_count(), &edges).expect("projection edges are valid")
}
