//! Ultra-sparsification: a low-stretch spanning tree, stretch-proportional
//! sampling of the off-tree edges, and exact elimination of degree-1 and
//! degree-2 nodes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggError, AggregationService};
use crate::cost::{aggregation_cost, CostLedger};
use crate::graph::WeightedGraph;
use crate::linalg::{EliminationOps, Pivot, Step};
use crate::minors::{compose_minors, MinorDistribution, MinorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UltraError {
    #[error("graph is disconnected")]
    Disconnected,
    #[error("k must be at least 1, got {0}")]
    BadK(f64),
    #[error(transparent)]
    Minor(#[from] MinorError),
    #[error(transparent)]
    Aggregation(#[from] AggError),
}

/// Spanning tree with the exact stretch of every edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchTree {
    /// Edge ids of the tree, sorted.
    pub tree_edges: Vec<usize>,
    pub off_tree: Vec<usize>,
    /// `w_e · R_T(u, v)` per edge id; tree edges have stretch 1, self-loops 0.
    pub stretch: Vec<f64>,
    /// Sum of the off-tree stretches.
    pub total_stretch: f64,
}

/// Tree rooted at node 0 with resistance distances to the root.
struct Rooted {
    parent: Vec<Option<(usize, usize)>>,
    depth: Vec<usize>,
    dist: Vec<f64>,
}

impl Rooted {
    fn new(g: &WeightedGraph, tree: &[usize]) -> Self {
        let n = g.n();
        let mut adj = vec![Vec::new(); n];
        for &e in tree {
            let ed = g.edge(e);
            adj[ed.u].push((ed.v, e));
            adj[ed.v].push((ed.u, e));
        }
        let mut parent = vec![None; n];
        let mut depth = vec![0; n];
        let mut dist = vec![0.0; n];
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        if n > 0 {
            seen[0] = true;
        }
        while let Some(x) = stack.pop() {
            for &(y, e) in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    parent[y] = Some((x, e));
                    depth[y] = depth[x] + 1;
                    dist[y] = dist[x] + g.edge(e).resistance();
                    stack.push(y);
                }
            }
        }
        Self { parent, depth, dist }
    }

    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap().0;
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap().0;
        }
        while a != b {
            a = self.parent[a].unwrap().0;
            b = self.parent[b].unwrap().0;
        }
        a
    }

    fn resistance(&self, a: usize, b: usize) -> f64 {
        let c = self.lca(a, b);
        self.dist[a] + self.dist[b] - 2.0 * self.dist[c]
    }

    /// Tree edge ids on the path between `a` and `b`.
    fn path(&self, mut a: usize, mut b: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while self.depth[a] > self.depth[b] {
            let (p, e) = self.parent[a].unwrap();
            out.push(e);
            a = p;
        }
        while self.depth[b] > self.depth[a] {
            let (p, e) = self.parent[b].unwrap();
            out.push(e);
            b = p;
        }
        while a != b {
            let (pa, ea) = self.parent[a].unwrap();
            let (pb, eb) = self.parent[b].unwrap();
            out.push(ea);
            out.push(eb);
            a = pa;
            b = pb;
        }
        out
    }
}

/// Exact stretches of every edge with respect to a spanning tree.
pub fn stretch_of(g: &WeightedGraph, tree: &[usize]) -> StretchTree {
    let rooted = Rooted::new(g, tree);
    let in_tree: BTreeSet<usize> = tree.iter().copied().collect();
    let mut stretch = vec![0.0; g.m()];
    let mut off_tree = Vec::new();
    let mut total = 0.0;
    for (i, e) in g.edges().iter().enumerate() {
        if e.is_loop() {
            continue;
        }
        if in_tree.contains(&i) {
            stretch[i] = 1.0;
        } else {
            let s = e.weight * rooted.resistance(e.u, e.v);
            stretch[i] = s;
            total += s;
            off_tree.push(i);
        }
    }
    let mut tree_edges = tree.to_vec();
    tree_edges.sort_unstable();
    StretchTree { tree_edges, off_tree, stretch, total_stretch: total }
}

#[derive(PartialEq)]
struct Dist(f64, usize);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Dijkstra on resistances; returns distances and parent edges.
fn shortest_paths(g: &WeightedGraph, adj: &[Vec<(usize, usize)>], src: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let mut dist = vec![f64::INFINITY; g.n()];
    let mut via = vec![None; g.n()];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Dist(0.0, src));
    while let Some(Dist(d, x)) = heap.pop() {
        if d > dist[x] {
            continue;
        }
        for &(y, e) in &adj[x] {
            let nd = d + g.edge(e).resistance();
            if nd < dist[y] {
                dist[y] = nd;
                via[y] = Some(e);
                heap.push(Dist(nd, y));
            }
        }
    }
    (dist, via)
}

fn max_weight_tree(g: &WeightedGraph) -> Vec<usize> {
    let mut order: Vec<usize> = g.proper_edges().map(|(i, _)| i).collect();
    order.sort_by(|&a, &b| g.edge(b).weight.total_cmp(&g.edge(a).weight).then(a.cmp(&b)));
    let mut parent: Vec<usize> = (0..g.n()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut tree = Vec::new();
    for e in order {
        let ed = g.edge(e);
        let (a, b) = (find(&mut parent, ed.u), find(&mut parent, ed.v));
        if a != b {
            parent[a] = b;
            tree.push(e);
        }
    }
    tree
}

/// Low-stretch spanning tree: the better of the shortest-path tree from the
/// 1-median and the maximum-weight spanning tree, then improved by
/// `swap_rounds` rounds of edge swaps along high-stretch cycles.
pub fn low_stretch_tree(g: &WeightedGraph, swap_rounds: usize) -> Result<StretchTree, UltraError> {
    if !g.is_connected() {
        return Err(UltraError::Disconnected);
    }
    let n = g.n();
    if n <= 1 {
        return Ok(stretch_of(g, &[]));
    }
    let adj = g.adjacency();
    let roots: Vec<usize> = if n <= 256 { (0..n).collect() } else { (0..n).step_by(n / 64).collect() };
    let median = roots
        .iter()
        .map(|&r| (shortest_paths(g, &adj, r).0.iter().sum::<f64>(), r))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .unwrap()
        .1;
    let spt: Vec<usize> = shortest_paths(g, &adj, median).1.into_iter().flatten().collect();
    let a = stretch_of(g, &spt);
    let b = stretch_of(g, &max_weight_tree(g));
    let mut best = if b.total_stretch < a.total_stretch { b } else { a };

    for _ in 0..swap_rounds {
        let rooted = Rooted::new(g, &best.tree_edges);
        let mut worst = best.off_tree.clone();
        worst.sort_by(|&x, &y| best.stretch[y].total_cmp(&best.stretch[x]).then(x.cmp(&y)));
        let mut improved = None;
        for &e in worst.iter().take(4) {
            let ed = g.edge(e);
            for f in rooted.path(ed.u, ed.v) {
                let tree: Vec<usize> =
                    best.tree_edges.iter().copied().filter(|&t| t != f).chain(std::iter::once(e)).collect();
                let cand = stretch_of(g, &tree);
                let bar = improved.as_ref().map_or(best.total_stretch, |c: &StretchTree| c.total_stretch);
                if cand.total_stretch < bar - 1e-12 {
                    improved = Some(cand);
                }
            }
        }
        match improved {
            Some(t) => best = t,
            None => break,
        }
    }
    Ok(best)
}

/// `H` on the nodes of `G`: tree edges at `k·w`, off-tree edges kept with
/// probability `min(1, c_s·stretch·ln n / k)` at weight `w / p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampled {
    pub h: WeightedGraph,
    /// Edge of `G` behind every edge of `H`.
    pub origin: Vec<usize>,
    /// Edge ids of `H` that came from off-tree edges.
    pub kept_off_tree: Vec<usize>,
    /// Expected number of kept off-tree edges.
    pub expected_off_tree: f64,
}

pub fn sample_by_stretch<R: Rng>(
    g: &WeightedGraph,
    tree: &StretchTree,
    k: f64,
    c_s: f64,
    rng: &mut R,
) -> Result<Sampled, UltraError> {
    if !(k >= 1.0) {
        return Err(UltraError::BadK(k));
    }
    let n = g.n().max(2) as f64;
    let mut h = WeightedGraph::new(g.n());
    let mut origin = Vec::new();
    for &e in &tree.tree_edges {
        let ed = g.edge(e);
        h.add_edge(ed.u, ed.v, k * ed.weight).expect("valid edge");
        origin.push(e);
    }
    let mut kept = Vec::new();
    let mut expected = 0.0;
    for &e in &tree.off_tree {
        let ed = g.edge(e);
        let p = (c_s * tree.stretch[e] * n.ln() / k).min(1.0);
        expected += p;
        if p >= 1.0 || rng.random::<f64>() < p {
            kept.push(h.add_edge(ed.u, ed.v, ed.weight / p).expect("valid edge"));
            origin.push(e);
        }
    }
    Ok(Sampled { h, origin, kept_off_tree: kept, expected_off_tree: expected })
}

/// Result of eliminating degree-1 and degree-2 nodes of `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduced {
    /// `SC(H, C)` with node `i` standing for `terminals[i]`.
    pub ghat: WeightedGraph,
    pub ops: EliminationOps,
    /// 1-minor distribution of `ghat` into `H`.
    pub minor: MinorDistribution,
    pub sweeps: usize,
}

impl Reduced {
    pub fn terminals(&self) -> &[usize] {
        &self.ops.terminals
    }
}

/// Eliminates non-`keep` nodes of degree at most two in sweeps of
/// independent nodes, ascending id, never removing the last node.
pub fn eliminate_degree12(h: &WeightedGraph, keep: &[usize]) -> Result<Reduced, UltraError> {
    if !h.is_connected() {
        return Err(UltraError::Disconnected);
    }
    let n = h.n();
    let keep: BTreeSet<usize> = keep.iter().copied().collect();
    // Neighbour → (weight, image edge of H).
    let mut nbrs: Vec<BTreeMap<usize, (f64, usize)>> = vec![BTreeMap::new(); n];
    for (i, e) in h.proper_edges() {
        nbrs[e.u].entry(e.v).or_insert((0.0, i)).0 += e.weight;
        nbrs[e.v].entry(e.u).or_insert((0.0, i)).0 += e.weight;
    }
    let mut alive = vec![true; n];
    let mut remaining = n;
    // Representative super-node owner and accumulated trees.
    let mut owner: Vec<usize> = (0..n).collect();
    let mut trees: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut steps = Vec::new();
    let mut sweeps = 0;
    loop {
        let mut chosen = Vec::new();
        let mut blocked = BTreeSet::new();
        for v in 0..n {
            if !alive[v] || keep.contains(&v) || nbrs[v].len() > 2 || blocked.contains(&v) {
                continue;
            }
            if remaining - chosen.len() <= 1 {
                break;
            }
            chosen.push(v);
            blocked.extend(nbrs[v].keys().copied());
        }
        if chosen.is_empty() {
            break;
        }
        sweeps += 1;
        let mut pivots = Vec::with_capacity(chosen.len());
        for v in chosen {
            let list: Vec<(usize, (f64, usize))> = nbrs[v].iter().map(|(&u, &x)| (u, x)).collect();
            let d: f64 = list.iter().map(|(_, (w, _))| w).sum();
            for &(u, _) in &list {
                nbrs[u].remove(&v);
            }
            if let Some(&(a, (_, ha))) = list.first() {
                // v's super-node joins a's through the image of (a, v).
                let moved = std::mem::take(&mut trees[v]);
                trees[a].extend(moved);
                trees[a].push(ha);
                owner[v] = a;
                if let Some(&(b, (wb, hb))) = list.get(1) {
                    let wa = list[0].1 .0;
                    let w = wa * wb / (wa + wb);
                    nbrs[a].entry(b).or_insert((0.0, hb)).0 += w;
                    nbrs[b].entry(a).or_insert((0.0, hb)).0 += w;
                }
            }
            alive[v] = false;
            remaining -= 1;
            pivots.push(Pivot { v, d, nbrs: list.iter().map(|&(u, (w, _))| (u, w)).collect() });
        }
        steps.push(Step::Pivots(pivots));
    }

    let terminals: Vec<usize> = (0..n).filter(|&v| alive[v]).collect();
    let mut index = vec![usize::MAX; n];
    for (i, &t) in terminals.iter().enumerate() {
        index[t] = i;
    }
    let root = |mut v: usize| {
        while owner[v] != v {
            v = owner[v];
        }
        v
    };
    let mut super_nodes = vec![Vec::new(); terminals.len()];
    for v in 0..n {
        super_nodes[index[root(v)]].push(v);
    }
    let mut ghat = WeightedGraph::new(terminals.len());
    let mut edge_image = Vec::new();
    for &t in &terminals {
        for (&u, &(w, img)) in &nbrs[t] {
            if t < u {
                ghat.add_edge(index[t], index[u], w).expect("valid edge");
                edge_image.push(Some(img));
            }
        }
    }
    let minor_trees = terminals.iter().map(|&t| std::mem::take(&mut trees[t])).collect();
    let minor =
        MinorDistribution::new(ghat.clone(), h.clone(), super_nodes, terminals.clone(), minor_trees, edge_image)?;
    Ok(Reduced { ghat, ops: EliminationOps { n, steps, terminals }, minor, sweeps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UltraParams {
    pub k: f64,
    pub c_s: f64,
    pub swap_rounds: usize,
}

impl Default for UltraParams {
    fn default() -> Self {
        Self { k: 8.0, c_s: 2.0, swap_rounds: 8 }
    }
}

#[derive(Debug, Clone)]
pub struct UltraSparsifier {
    pub tree: StretchTree,
    pub sampled: Sampled,
    pub reduced: Reduced,
    /// Distribution of `H` into the host.
    pub h_dist: MinorDistribution,
    /// Distribution of `Ĝ` into the host.
    pub ghat_dist: MinorDistribution,
    pub ledger: CostLedger,
}

fn ceil_log2(n: usize) -> u64 {
    (usize::BITS - n.max(1).saturating_sub(1).leading_zeros()) as u64
}

/// Runs the three stages on the minor of `dist`, charging aggregations at
/// the measured cost of `dist`'s super-nodes in `service`.
pub fn ultrasparsify(
    dist: &MinorDistribution,
    params: &UltraParams,
    service: &AggregationService,
    seed: u64,
) -> Result<UltraSparsifier, UltraError> {
    let g = &dist.minor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x756c_7472_61);
    let q = aggregation_cost(service, Some(dist))?;
    let mut ledger = CostLedger::default();

    let tree = low_stretch_tree(g, params.swap_rounds)?;
    ledger.charge("ultrasparsify/tree", ceil_log2(g.n()), q);
    ledger.charge("ultrasparsify/stretch", ceil_log2(g.n()), q);

    let sampled = sample_by_stretch(g, &tree, params.k, params.c_s, &mut rng)?;
    ledger.add_rounds("ultrasparsify/sample", 1);
    let h_dist = MinorDistribution::new(
        sampled.h.clone(),
        dist.host.clone(),
        dist.super_nodes.clone(),
        dist.leaders.clone(),
        dist.trees.clone(),
        sampled.origin.iter().map(|&e| dist.edge_image[e]).collect(),
    )?;

    let keep: BTreeSet<usize> =
        sampled.kept_off_tree.iter().flat_map(|&e| [sampled.h.edge(e).u, sampled.h.edge(e).v]).collect();
    let keep: Vec<usize> = keep.into_iter().collect();
    let reduced = eliminate_degree12(&sampled.h, &keep)?;
    ledger.charge("ultrasparsify/eliminate", reduced.sweeps as u64, q);
    let ghat_dist = compose_minors(&reduced.minor, &h_dist)?;
    ledger.note(format!(
        "ultrasparsify: n={} m={} off-tree kept {}/{} (expected {:.1}), |C|={}, sweeps {}",
        g.n(),
        g.m(),
        sampled.kept_off_tree.len(),
        tree.off_tree.len(),
        sampled.expected_off_tree,
        reduced.ghat.n(),
        reduced.sweeps
    ));
    Ok(UltraSparsifier { tree, sampled, reduced, h_dist, ghat_dist, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::generators::{cycle, grid, path, random_connected, star};
    use crate::graph::laplacian;
    use crate::minors::identity_minor;
    use crate::oracle::{generalized_eigen_range, laplacian_pinv, laplacian_schur};
    use rand::seq::SliceRandom;

    #[test]
    fn tree_has_zero_off_tree_stretch() {
        let t = low_stretch_tree(&path(7), 4).unwrap();
        assert_eq!(t.total_stretch, 0.0);
        assert_eq!(t.tree_edges.len(), 6);
    }

    #[test]
    fn c4_off_tree_stretch_is_three() {
        let t = low_stretch_tree(&cycle(4), 4).unwrap();
        assert_eq!(t.off_tree.len(), 1);
        assert!((t.total_stretch - 3.0).abs() < 1e-12);
    }

    #[test]
    fn grid_tree_beats_random_spanning_trees() {
        let g = grid(8, 8);
        let ours = low_stretch_tree(&g, 8).unwrap().total_stretch;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut best = f64::INFINITY;
        for _ in 0..50 {
            let mut order: Vec<usize> = (0..g.m()).collect();
            order.shuffle(&mut rng);
            let mut h = WeightedGraph::new(g.n());
            for &e in &order {
                let ed = g.edge(e);
                h.add_edge(ed.u, ed.v, 1.0).unwrap();
            }
            let perm_tree: Vec<usize> = max_weight_tree(&h).into_iter().map(|i| order[i]).collect();
            best = best.min(stretch_of(&g, &perm_tree).total_stretch);
        }
        assert!(ours <= best, "{ours} > {best}");
    }

    #[test]
    fn tree_sampling_is_exact_sandwich() {
        let g = path(6);
        let t = low_stretch_tree(&g, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_by_stretch(&g, &t, 4.0, 2.0, &mut rng).unwrap();
        let (lo, hi) = generalized_eigen_range(&laplacian(&g), &laplacian(&s.h)).unwrap();
        assert!((lo - 4.0).abs() < 1e-9 && (hi - 4.0).abs() < 1e-9);
    }

    #[test]
    fn k_one_reproduces_g() {
        let g = grid(3, 3);
        let t = low_stretch_tree(&g, 2).unwrap();
        let s = sample_by_stretch(&g, &t, 1.0, 2.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((laplacian(&s.h) - laplacian(&g)).amax() < 1e-12);
        assert!(sample_by_stretch(&g, &t, 0.5, 2.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn path_reduces_to_series_edge() {
        let g = WeightedGraph::from_edges(4, [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 4.0)]).unwrap();
        let r = eliminate_degree12(&g, &[0, 3]).unwrap();
        assert_eq!(r.terminals(), &[0, 3]);
        assert_eq!(r.ghat.m(), 1);
        let want = 1.0 / (1.0 + 0.5 + 0.25);
        assert!((r.ghat.edge(0).weight - want).abs() < 1e-12);
        assert_eq!(r.minor.rho, 1);
    }

    #[test]
    fn star_collapses_to_center() {
        let r = eliminate_degree12(&star(6), &[0]).unwrap();
        assert_eq!(r.terminals(), &[0]);
        assert_eq!(r.ghat.m(), 0);
        assert_eq!(r.minor.super_nodes[0].len(), 6);
    }

    fn check_identity(h: &WeightedGraph, r: &Reduced) {
        let sc = laplacian_schur(h, r.terminals());
        assert!((laplacian(&r.ghat) - &sc).amax() < 1e-7);
        let inner = laplacian_pinv(&laplacian(&r.ghat)).unwrap();
        let composite = r.ops.materialize(&inner);
        let lp = laplacian_pinv(&laplacian(h)).unwrap();
        assert!((composite - lp).amax() < 1e-7);
    }

    #[test]
    fn c4_with_chord_identity() {
        let mut h = cycle(4);
        h.add_edge(0, 2, 1.0).unwrap();
        let r = eliminate_degree12(&h, &[0, 2]).unwrap();
        assert_eq!(r.ghat.n(), 2);
        check_identity(&h, &r);
    }

    #[test]
    fn random_graph_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let n = rng.random_range(4..=40);
            let g = random_connected(n, 1.5 / n as f64, &mut rng);
            let keep: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < 0.15).collect();
            let r = eliminate_degree12(&g, &keep).unwrap();
            check_identity(&g, &r);
            assert!(r.terminals().iter().all(|&t| keep.contains(&t)) || r.ghat.n() >= 1, "trial {trial}");
        }
    }

    #[test]
    fn pipeline_on_c4_and_grid() {
        let g = cycle(4);
        let d = identity_minor(&g);
        let svc = AggregationService::sequential(g.clone());
        let u = ultrasparsify(&d, &UltraParams { k: 2.0, ..Default::default() }, &svc, 3).unwrap();
        let sc = laplacian_schur(&u.sampled.h, u.reduced.terminals());
        assert!((laplacian(&u.reduced.ghat) - sc).amax() < 1e-7);
        assert_eq!(u.ghat_dist.host, g);

        let g = grid(6, 6);
        let d = identity_minor(&g);
        let svc = AggregationService::sequential(g.clone());
        let u = ultrasparsify(&d, &UltraParams { k: 4.0, ..Default::default() }, &svc, 3).unwrap();
        let (lo, hi) = generalized_eigen_range(&laplacian(&g), &laplacian(&u.sampled.h)).unwrap();
        assert!(lo >= 1.0 - 1e-9 && hi <= 8.0, "{lo} {hi}");
        assert!(u.ledger.total_rounds() > 0);
    }
}
