//! Weighted multigraphs, Laplacian assembly, tree decompositions and
//! partitions, plus brute-force structural checks for small instances.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest graph accepted by [`minor_density_bruteforce`].
pub const MINOR_DENSITY_CAP: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("edge weight {weight} must be positive and finite")]
    BadWeight { weight: f64 },
    #[error("edge weight {weight} is not an integer in 1..={cap}")]
    WeightOutOfRange { weight: f64, cap: u64 },
    #[error("graph is disconnected")]
    Disconnected,
    #[error("instance has {n} nodes, brute force is capped at {cap}")]
    TooLarge { n: usize, cap: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecompositionError {
    #[error("bag {bag} references node {node} outside the graph")]
    InvalidNode { bag: usize, node: usize },
    #[error("decomposition tree edges do not form a tree over the bags")]
    NotATree,
    #[error("node {node} is not covered by any bag")]
    Uncovered { node: usize },
    #[error("bags containing node {node} do not form a connected subtree")]
    Disconnected { node: usize },
    #[error("edge {{{u},{v}}} is not contained in any bag")]
    EdgeUncovered { u: usize, v: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("part {part} is empty")]
    EmptyPart { part: usize },
    #[error("part {part} references node {node} outside the graph")]
    InvalidNode { part: usize, node: usize },
    #[error("part {part} lists node {node} twice")]
    DuplicateNode { part: usize, node: usize },
    #[error("part {part} does not induce a connected subgraph")]
    DisconnectedPart { part: usize },
    #[error("node {node} lies in {count} parts, cap is {cap}")]
    MultiplicityOverflow { node: usize, count: usize, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

impl Edge {
    pub fn is_loop(&self) -> bool {
        self.u == self.v
    }

    /// The endpoint opposite to `x`.
    pub fn other(&self, x: usize) -> usize {
        if self.u == x {
            self.v
        } else {
            self.u
        }
    }

    pub fn resistance(&self) -> f64 {
        1.0 / self.weight
    }
}

/// Undirected weighted multigraph on dense node indices `0..n`.
///
/// Each edge is stored once; its position in [`WeightedGraph::edges`] is its
/// edge id. Parallel edges are kept distinct and self-loops (which only arise
/// from contractions) are kept for bookkeeping but ignored by [`laplacian`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
}

impl WeightedGraph {
    pub fn new(n: usize) -> Self {
        Self { n, edges: Vec::new() }
    }

    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, GraphError> {
        let mut g = Self::new(n);
        for (u, v, w) in edges {
            g.add_edge(u, v, w)?;
        }
        Ok(g)
    }

    /// Unit-weight graph from an edge list.
    pub fn unit(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        Self::from_edges(n, edges.iter().map(|&(u, v)| (u, v, 1.0)))
    }

    pub fn add_edge(&mut self, u: usize, v: usize, weight: f64) -> Result<usize, GraphError> {
        for node in [u, v] {
            if node >= self.n {
                return Err(GraphError::NodeOutOfRange { node, n: self.n });
            }
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(GraphError::BadWeight { weight });
        }
        self.edges.push(Edge { u, v, weight });
        Ok(self.edges.len() - 1)
    }

    pub fn add_node(&mut self) -> usize {
        self.n += 1;
        self.n - 1
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    /// Edges that are not self-loops.
    pub fn proper_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| !e.is_loop())
    }

    /// Per node: `(neighbor, edge id)` for every incident non-loop edge.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n];
        for (id, e) in self.proper_edges() {
            adj[e.u].push((e.v, id));
            adj[e.v].push((e.u, id));
        }
        adj
    }

    /// Sorted, deduplicated neighbor lists (parallel edges collapse).
    pub fn neighbor_sets(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for (_, e) in self.proper_edges() {
            adj[e.u].push(e.v);
            adj[e.v].push(e.u);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    pub fn weighted_degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.n];
        for (_, e) in self.proper_edges() {
            deg[e.u] += e.weight;
            deg[e.v] += e.weight;
        }
        deg
    }

    pub fn total_weight(&self) -> f64 {
        self.proper_edges().map(|(_, e)| e.weight).sum()
    }

    /// Checks that every weight is an integer in `1..=cap`.
    pub fn check_integral(&self, cap: u64) -> Result<(), GraphError> {
        for e in &self.edges {
            if e.weight.fract() != 0.0 || e.weight < 1.0 || e.weight > cap as f64 {
                return Err(GraphError::WeightOutOfRange { weight: e.weight, cap });
            }
        }
        Ok(())
    }

    /// Hop distances from `src`; unreachable nodes are `usize::MAX`.
    pub fn bfs_distances(&self, src: usize) -> Vec<usize> {
        bfs(&self.neighbor_sets(), src)
    }

    pub fn is_connected(&self) -> bool {
        self.n <= 1 || self.bfs_distances(0).iter().all(|&d| d != usize::MAX)
    }

    /// Subgraph induced by `nodes`, relabelled in the given order.
    pub fn induced(&self, nodes: &[usize]) -> WeightedGraph {
        let mut index = vec![usize::MAX; self.n];
        for (i, &x) in nodes.iter().enumerate() {
            index[x] = i;
        }
        let mut g = WeightedGraph::new(nodes.len());
        for e in &self.edges {
            if index[e.u] != usize::MAX && index[e.v] != usize::MAX {
                g.edges.push(Edge { u: index[e.u], v: index[e.v], weight: e.weight });
            }
        }
        g
    }

    /// Parallel edges merged into one with summed weight, self-loops dropped.
    /// The Laplacian is unchanged.
    pub fn merged(&self) -> WeightedGraph {
        let mut map = std::collections::BTreeMap::new();
        for (_, e) in self.proper_edges() {
            let key = (e.u.min(e.v), e.u.max(e.v));
            *map.entry(key).or_insert(0.0) += e.weight;
        }
        WeightedGraph {
            n: self.n,
            edges: map.into_iter().map(|((u, v), weight)| Edge { u, v, weight }).collect(),
        }
    }
}

pub(crate) fn bfs(adj: &[Vec<usize>], src: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::new();
    dist[src] = 0;
    queue.push_back(src);
    while let Some(x) = queue.pop_front() {
        for &y in &adj[x] {
            if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    dist
}

/// Dense Laplacian: weighted degrees on the diagonal, `-w` summed over
/// parallel edges off the diagonal. Self-loops contribute nothing.
pub fn laplacian(g: &WeightedGraph) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(g.n(), g.n());
    for (_, e) in g.proper_edges() {
        l[(e.u, e.u)] += e.weight;
        l[(e.v, e.v)] += e.weight;
        l[(e.u, e.v)] -= e.weight;
        l[(e.v, e.u)] -= e.weight;
    }
    l
}

/// Maximum unweighted shortest-path length over all pairs.
pub fn hop_diameter(g: &WeightedGraph) -> Result<usize, GraphError> {
    let adj = g.neighbor_sets();
    let mut diameter = 0;
    for src in 0..g.n() {
        for d in bfs(&adj, src) {
            if d == usize::MAX {
                return Err(GraphError::Disconnected);
            }
            diameter = diameter.max(d);
        }
    }
    Ok(diameter)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDecomposition {
    pub bags: Vec<Vec<usize>>,
    pub tree_edges: Vec<(usize, usize)>,
}

impl TreeDecomposition {
    pub fn width(&self) -> usize {
        self.bags.iter().map(Vec::len).max().unwrap_or(1).saturating_sub(1)
    }

    pub(crate) fn bag_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.bags.len()];
        for &(a, b) in &self.tree_edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

/// Checks the three tree-decomposition conditions and returns the width.
pub fn validate_tree_decomposition(
    g: &WeightedGraph,
    td: &TreeDecomposition,
) -> Result<usize, DecompositionError> {
    let k = td.bags.len();
    let mut holds = vec![Vec::new(); g.n()];
    for (b, bag) in td.bags.iter().enumerate() {
        for &x in bag {
            if x >= g.n() {
                return Err(DecompositionError::InvalidNode { bag: b, node: x });
            }
            holds[x].push(b);
        }
    }
    if k > 0 {
        let in_range = td.tree_edges.iter().all(|&(a, b)| a < k && b < k && a != b);
        if !in_range || td.tree_edges.len() != k - 1 {
            return Err(DecompositionError::NotATree);
        }
        if bfs(&td.bag_adjacency(), 0).contains(&usize::MAX) {
            return Err(DecompositionError::NotATree);
        }
    }
    if let Some(node) = holds.iter().position(Vec::is_empty) {
        return Err(DecompositionError::Uncovered { node });
    }
    let adj = td.bag_adjacency();
    let mut member = vec![false; k];
    for (node, bags) in holds.iter().enumerate() {
        for &b in bags {
            member[b] = true;
        }
        // BFS within the bags holding `node`.
        let mut seen = vec![false; k];
        let mut stack = vec![bags[0]];
        seen[bags[0]] = true;
        let mut reached = 1;
        while let Some(b) = stack.pop() {
            for &c in &adj[b] {
                if member[c] && !seen[c] {
                    seen[c] = true;
                    reached += 1;
                    stack.push(c);
                }
            }
        }
        for &b in bags {
            member[b] = false;
        }
        if reached != bags.len() {
            return Err(DecompositionError::Disconnected { node });
        }
    }
    for (_, e) in g.proper_edges() {
        let covered = holds[e.u].iter().any(|b| td.bags[*b].contains(&e.v));
        if !covered {
            return Err(DecompositionError::EdgeUncovered { u: e.u, v: e.v });
        }
    }
    Ok(td.width())
}

/// Node subsets with per-node multiplicity (how many parts contain the node).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub parts: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(parts: Vec<Vec<usize>>) -> Self {
        Self { parts }
    }

    pub fn multiplicity(&self, n: usize) -> Vec<usize> {
        let mut mult = vec![0; n];
        for part in &self.parts {
            for &x in part {
                if x < n {
                    mult[x] += 1;
                }
            }
        }
        mult
    }

    /// For each node, the ids of the parts containing it in ascending order.
    pub fn memberships(&self, n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n];
        for (p, part) in self.parts.iter().enumerate() {
            for &x in part {
                out[x].push(p);
            }
        }
        out
    }
}

/// Checks that every part is non-empty and connected and that no node lies in
/// more than `rho_cap` parts. Returns the maximum multiplicity.
pub fn validate_partition(
    g: &WeightedGraph,
    partition: &Partition,
    rho_cap: usize,
) -> Result<usize, PartitionError> {
    let adj = g.neighbor_sets();
    let mut inside = vec![false; g.n()];
    for (p, part) in partition.parts.iter().enumerate() {
        if part.is_empty() {
            return Err(PartitionError::EmptyPart { part: p });
        }
        for &x in part {
            if x >= g.n() {
                return Err(PartitionError::InvalidNode { part: p, node: x });
            }
            if inside[x] {
                return Err(PartitionError::DuplicateNode { part: p, node: x });
            }
            inside[x] = true;
        }
        let mut seen = vec![false; g.n()];
        let mut stack = vec![part[0]];
        seen[part[0]] = true;
        let mut reached = 1;
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if inside[y] && !seen[y] {
                    seen[y] = true;
                    reached += 1;
                    stack.push(y);
                }
            }
        }
        for &x in part {
            inside[x] = false;
        }
        if reached != part.len() {
            return Err(PartitionError::DisconnectedPart { part: p });
        }
    }
    let mult = partition.multiplicity(g.n());
    let rho = mult.iter().copied().max().unwrap_or(0);
    if rho > rho_cap {
        let node = mult.iter().position(|&c| c == rho).unwrap_or(0);
        return Err(PartitionError::MultiplicityOverflow { node, count: rho, cap: rho_cap });
    }
    Ok(rho)
}

/// Exact minor density `max |E'|/|V'|` over simple minors, by enumerating
/// every assignment of nodes to connected branch sets (or deletion).
pub fn minor_density_bruteforce(g: &WeightedGraph) -> Result<Ratio<usize>, GraphError> {
    let n = g.n();
    if n > MINOR_DENSITY_CAP {
        return Err(GraphError::TooLarge { n, cap: MINOR_DENSITY_CAP });
    }
    let simple: Vec<(usize, usize)> = {
        let mut es: Vec<_> = g.proper_edges().map(|(_, e)| (e.u.min(e.v), e.u.max(e.v))).collect();
        es.sort_unstable();
        es.dedup();
        es
    };
    let mut best = Ratio::new(0, 1);
    // label[x] = 0 means deleted, otherwise branch set `label - 1`; labels are
    // restricted-growth so each set partition is visited once.
    let mut label = vec![0usize; n];
    enumerate_labels(0, 0, &mut label, &mut |label, blocks| {
        if blocks == 0 {
            return;
        }
        if !branch_sets_connected(n, &simple, label, blocks) {
            return;
        }
        let mut adjacent = vec![false; blocks * blocks];
        let mut count = 0;
        for &(u, v) in &simple {
            let (a, b) = (label[u], label[v]);
            if a == 0 || b == 0 || a == b {
                continue;
            }
            let (a, b) = (a.min(b) - 1, a.max(b) - 1);
            if !adjacent[a * blocks + b] {
                adjacent[a * blocks + b] = true;
                count += 1;
            }
        }
        let density = Ratio::new(count, blocks);
        if density > best {
            best = density;
        }
    });
    Ok(best)
}

fn enumerate_labels(
    pos: usize,
    blocks: usize,
    label: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize], usize),
) {
    if pos == label.len() {
        visit(label, blocks);
        return;
    }
    for l in 0..=blocks + 1 {
        label[pos] = l;
        let next = if l == blocks + 1 { blocks + 1 } else { blocks };
        enumerate_labels(pos + 1, next, label, visit);
    }
}

fn branch_sets_connected(n: usize, edges: &[(usize, usize)], label: &[usize], blocks: usize) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for &(u, v) in edges {
        if label[u] != 0 && label[u] == label[v] {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            parent[a] = b;
        }
    }
    let mut root = vec![usize::MAX; blocks];
    for x in 0..n {
        if label[x] == 0 {
            continue;
        }
        let r = find(&mut parent, x);
        let slot = &mut root[label[x] - 1];
        if *slot == usize::MAX {
            *slot = r;
        } else if *slot != r {
            return false;
        }
    }
    true
}
