//! Deterministic graph families. Families with bounded treewidth ship a
//! tree decomposition of the stated width.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{GraphError, Partition, TreeDecomposition, WeightedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Path,
    Cycle,
    Grid,
    Ktree,
    RandomBoundedTw,
    Random,
    Star,
    Complete,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Path => "path",
            Family::Cycle => "cycle",
            Family::Grid => "grid",
            Family::Ktree => "ktree",
            Family::RandomBoundedTw => "random-bounded-tw",
            Family::Random => "random",
            Family::Star => "star",
            Family::Complete => "complete",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "path" => Family::Path,
            "cycle" => Family::Cycle,
            "grid" => Family::Grid,
            "ktree" | "k-tree" => Family::Ktree,
            "random-bounded-tw" | "partial-ktree" => Family::RandomBoundedTw,
            "random" | "gnp" => Family::Random,
            "star" => Family::Star,
            "complete" => Family::Complete,
            other => return Err(format!("unknown graph family `{other}`")),
        })
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of one generated instance. Unused fields are ignored by the
/// family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphSpec {
    pub family: Family,
    pub n: usize,
    /// Grid rows; `n` is then ignored.
    pub rows: usize,
    pub cols: usize,
    /// Treewidth parameter of k-tree families.
    pub k: usize,
    /// Edge probability of `random`, edge retention of `random-bounded-tw`.
    pub p: f64,
    /// Integral weights are drawn uniformly from `1..=max_weight`.
    pub max_weight: u64,
}

impl Default for GraphSpec {
    fn default() -> Self {
        Self { family: Family::Path, n: 8, rows: 0, cols: 0, k: 2, p: 0.5, max_weight: 1 }
    }
}

impl GraphSpec {
    pub fn new(family: Family, n: usize) -> Self {
        Self { family, n, ..Self::default() }
    }

    pub fn grid(rows: usize, cols: usize) -> Self {
        Self { family: Family::Grid, n: rows * cols, rows, cols, ..Self::default() }
    }

    pub fn ktree(n: usize, k: usize) -> Self {
        Self { family: Family::Ktree, n, k, ..Self::default() }
    }

    pub fn weighted(mut self, max_weight: u64) -> Self {
        self.max_weight = max_weight;
        self
    }

    /// Node count of the generated graph.
    pub fn nodes(&self) -> usize {
        match self.family {
            Family::Grid if self.rows > 0 => self.rows * self.cols.max(1),
            _ => self.n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub graph: WeightedGraph,
    pub decomposition: Option<TreeDecomposition>,
}

pub fn generate_graph(spec: &GraphSpec, seed: u64) -> Result<Generated, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.nodes();
    if n == 0 {
        return Err(GraphError::Disconnected);
    }
    let (mut graph, decomposition) = match spec.family {
        Family::Path => (path(n), Some(path_decomposition(n))),
        Family::Cycle => (cycle(n), Some(cycle_decomposition(n))),
        Family::Grid => {
            let (r, c) = if spec.rows > 0 { (spec.rows, spec.cols.max(1)) } else { square_dims(n) };
            (grid(r, c), Some(grid_decomposition(r, c)))
        }
        Family::Ktree => {
            let (g, td) = ktree(n, spec.k, &mut rng);
            (g, Some(td))
        }
        Family::RandomBoundedTw => {
            let (g, td) = random_bounded_tw(n, spec.k, spec.p, &mut rng);
            (g, Some(td))
        }
        Family::Random => (random_connected(n, spec.p, &mut rng), None),
        Family::Star => (star(n), Some(star_decomposition(n))),
        Family::Complete => (complete(n), Some(TreeDecomposition { bags: vec![(0..n).collect()], tree_edges: vec![] })),
    };
    if spec.max_weight > 1 {
        reweight(&mut graph, spec.max_weight, &mut rng);
    }
    Ok(Generated { graph, decomposition })
}

fn square_dims(n: usize) -> (usize, usize) {
    let mut r = (n as f64).sqrt().floor() as usize;
    while r > 1 && !n.is_multiple_of(r) {
        r -= 1;
    }
    (r.max(1), n / r.max(1))
}

fn unit(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> WeightedGraph {
    let mut g = WeightedGraph::new(n);
    for (u, v) in edges {
        g.add_edge(u, v, 1.0).expect("generator edge in range");
    }
    g
}

pub fn path(n: usize) -> WeightedGraph {
    unit(n, (1..n).map(|i| (i - 1, i)))
}

pub fn cycle(n: usize) -> WeightedGraph {
    let mut g = path(n);
    if n >= 3 {
        g.add_edge(n - 1, 0, 1.0).unwrap();
    }
    g
}

/// Node `(r, c)` has id `r * cols + c`.
pub fn grid(rows: usize, cols: usize) -> WeightedGraph {
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    unit(rows * cols, edges)
}

pub fn star(n: usize) -> WeightedGraph {
    unit(n, (1..n).map(|i| (0, i)))
}

pub fn complete(n: usize) -> WeightedGraph {
    unit(n, (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))))
}

fn chain(bags: Vec<Vec<usize>>) -> TreeDecomposition {
    let tree_edges = (1..bags.len()).map(|i| (i - 1, i)).collect();
    TreeDecomposition { bags, tree_edges }
}

pub fn path_decomposition(n: usize) -> TreeDecomposition {
    if n <= 1 {
        return chain(vec![(0..n).collect()]);
    }
    chain((1..n).map(|i| vec![i - 1, i]).collect())
}

pub fn cycle_decomposition(n: usize) -> TreeDecomposition {
    if n <= 3 {
        return chain(vec![(0..n).collect()]);
    }
    chain((1..n - 1).map(|i| vec![0, i, i + 1]).collect())
}

/// Sliding window over the shorter side: width `min(rows, cols)`.
pub fn grid_decomposition(rows: usize, cols: usize) -> TreeDecomposition {
    let n = rows * cols;
    let order: Vec<usize> = if cols <= rows {
        (0..n).collect()
    } else {
        (0..cols).flat_map(|c| (0..rows).map(move |r| r * cols + c)).collect()
    };
    let w = rows.min(cols);
    if n <= w + 1 {
        return chain(vec![order]);
    }
    chain((0..n - w).map(|i| order[i..=i + w].to_vec()).collect())
}

pub fn star_decomposition(n: usize) -> TreeDecomposition {
    if n <= 2 {
        return chain(vec![(0..n).collect()]);
    }
    let bags: Vec<Vec<usize>> = (1..n).map(|i| vec![0, i]).collect();
    let tree_edges = (1..bags.len()).map(|i| (0, i)).collect();
    TreeDecomposition { bags, tree_edges }
}

/// Random k-tree: a `(k+1)`-clique grown by attaching each new node to a
/// random k-clique. Requires `n ≥ k + 1`; smaller `n` yields `K_n`.
pub fn ktree<R: Rng>(n: usize, k: usize, rng: &mut R) -> (WeightedGraph, TreeDecomposition) {
    let (edges, td) = ktree_parts(n, k, rng);
    (unit(n, edges), td)
}

fn ktree_parts<R: Rng>(n: usize, k: usize, rng: &mut R) -> (Vec<(usize, usize)>, TreeDecomposition) {
    let base = n.min(k + 1);
    let mut edges: Vec<(usize, usize)> = (0..base).flat_map(|u| (u + 1..base).map(move |v| (u, v))).collect();
    let mut bags = vec![(0..base).collect::<Vec<_>>()];
    let mut tree_edges = Vec::new();
    for v in base..n {
        let parent = rng.random_range(0..bags.len());
        let mut bag = bags[parent].clone();
        let drop = rng.random_range(0..bag.len());
        bag.remove(drop);
        for &u in &bag {
            edges.push((u, v));
        }
        bag.push(v);
        bags.push(bag);
        tree_edges.push((parent, bags.len() - 1));
    }
    (edges, TreeDecomposition { bags, tree_edges })
}

/// Connected partial k-tree: each k-tree edge survives with probability
/// `keep`, except one edge per attached node which keeps the graph connected.
pub fn random_bounded_tw<R: Rng>(n: usize, k: usize, keep: f64, rng: &mut R) -> (WeightedGraph, TreeDecomposition) {
    let base = n.min(k + 1);
    let (edges, td) = ktree_parts(n, k, rng);
    let mut kept = Vec::new();
    // The base clique keeps a path, every later node its first edge.
    let mut anchored = vec![false; n];
    for (u, v) in edges {
        let forced = if v < base { v == u + 1 } else { !anchored[v] };
        if forced || rng.random_bool(keep.clamp(0.0, 1.0)) {
            kept.push((u, v));
            if v >= base {
                anchored[v] = true;
            }
        }
    }
    (unit(n, kept), td)
}

/// Random spanning tree (random attachment) plus independent extra edges.
pub fn random_connected<R: Rng>(n: usize, p: f64, rng: &mut R) -> WeightedGraph {
    let mut g = WeightedGraph::new(n);
    let mut present = std::collections::HashSet::new();
    let nodes: Vec<usize> = (0..n).collect();
    for v in 1..n {
        let u = *nodes[..v].choose(rng).unwrap();
        present.insert((u, v));
        g.add_edge(u, v, 1.0).unwrap();
    }
    for u in 0..n {
        for v in u + 1..n {
            if !present.contains(&(u, v)) && rng.random_bool(p.clamp(0.0, 1.0)) {
                g.add_edge(u, v, 1.0).unwrap();
            }
        }
    }
    g
}

/// Replaces every weight by a uniform integer in `1..=max_weight`.
pub fn reweight<R: Rng>(g: &mut WeightedGraph, max_weight: u64, rng: &mut R) {
    let edges: Vec<_> = g.edges().iter().map(|e| (e.u, e.v, rng.random_range(1..=max_weight) as f64)).collect();
    let mut h = WeightedGraph::new(g.n());
    for (u, v, w) in edges {
        h.add_edge(u, v, w).unwrap();
    }
    *g = h;
}

/// `rho` layers, each a partition of the nodes into about `parts` connected
/// parts grown by randomized multi-source BFS. Every node lies in exactly
/// `rho` parts.
pub fn random_congested_partition<R: Rng>(g: &WeightedGraph, parts: usize, rho: usize, rng: &mut R) -> Partition {
    let n = g.n();
    let nbrs = g.neighbor_sets();
    let mut out = Vec::new();
    for _ in 0..rho {
        let mut owner = vec![usize::MAX; n];
        let mut frontier = Vec::new();
        let mut layer: Vec<Vec<usize>> = Vec::new();
        for s in rand::seq::index::sample(rng, n, parts.clamp(1, n.max(1))) {
            owner[s] = layer.len();
            layer.push(vec![s]);
            frontier.push(s);
        }
        while !frontier.is_empty() {
            let i = rng.random_range(0..frontier.len());
            let x = frontier.swap_remove(i);
            for &y in &nbrs[x] {
                if owner[y] == usize::MAX {
                    owner[y] = owner[x];
                    layer[owner[x]].push(y);
                    frontier.push(y);
                }
            }
        }
        for mut p in layer {
            p.sort_unstable();
            out.push(p);
        }
    }
    Partition::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{hop_diameter, validate_tree_decomposition};

    #[test]
    fn congested_partitions_are_valid() {
        let g = grid(6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_congested_partition(&g, 5, 3, &mut rng);
        assert_eq!(p.parts.len(), 15);
        assert!(p.multiplicity(36).iter().all(|&m| m == 3));
        assert!(crate::graph::validate_partition(&g, &p, 3).is_ok());
    }

    #[test]
    fn small_families() {
        let p5 = generate_graph(&GraphSpec::new(Family::Path, 5), 0).unwrap();
        assert_eq!((p5.graph.n(), p5.graph.m()), (5, 4));
        assert_eq!(validate_tree_decomposition(&p5.graph, p5.decomposition.as_ref().unwrap()), Ok(1));

        let g = generate_graph(&GraphSpec::grid(6, 6), 0).unwrap();
        assert_eq!((g.graph.n(), g.graph.m()), (36, 60));
        assert_eq!(validate_tree_decomposition(&g.graph, g.decomposition.as_ref().unwrap()), Ok(6));
        assert_eq!(hop_diameter(&g.graph), Ok(10));

        let g = generate_graph(&GraphSpec::grid(3, 7), 0).unwrap();
        assert_eq!(validate_tree_decomposition(&g.graph, g.decomposition.as_ref().unwrap()), Ok(3));

        for fam in [Family::Cycle, Family::Star, Family::Complete] {
            let g = generate_graph(&GraphSpec::new(fam, 7), 0).unwrap();
            assert!(g.graph.is_connected());
            validate_tree_decomposition(&g.graph, g.decomposition.as_ref().unwrap()).unwrap();
        }
    }

    #[test]
    fn ktree_width_is_exact() {
        for seed in 0..5 {
            let g = generate_graph(&GraphSpec::ktree(20, 3), seed).unwrap();
            assert_eq!(validate_tree_decomposition(&g.graph, g.decomposition.as_ref().unwrap()), Ok(3));
            // A k-tree on n nodes has k(k+1)/2 + (n-k-1)k edges.
            assert_eq!(g.graph.m(), 6 + 16 * 3);
        }
    }

    #[test]
    fn random_families_are_connected_and_reproducible() {
        let spec = GraphSpec { family: Family::RandomBoundedTw, n: 40, k: 3, p: 0.3, ..GraphSpec::default() };
        let a = generate_graph(&spec, 11).unwrap();
        let b = generate_graph(&spec, 11).unwrap();
        assert_eq!(a.graph, b.graph);
        assert!(a.graph.is_connected());
        assert!(validate_tree_decomposition(&a.graph, a.decomposition.as_ref().unwrap()).unwrap() <= 3);

        let spec = GraphSpec { family: Family::Random, n: 30, p: 0.1, max_weight: 9, ..GraphSpec::default() };
        let g = generate_graph(&spec, 3).unwrap().graph;
        assert!(g.is_connected());
        g.check_integral(9).unwrap();
    }

    #[test]
    fn family_names_round_trip() {
        for f in [Family::Path, Family::Grid, Family::Ktree, Family::RandomBoundedTw, Family::Random] {
            assert_eq!(f.name().parse::<Family>(), Ok(f));
        }
    }
}
