//! ρ-minor distributions: super-nodes with leaders and spanning trees, edge
//! images, and the operations built on them (composition, contraction and
//! matrix-vector products through part-wise aggregation).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggError, AggOp, AggregationService, PartInputs, Value};
use crate::graph::{GraphError, Partition, WeightedGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MinorError {
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("super-node of {node} is empty")]
    EmptySuperNode { node: usize },
    #[error("super-node of {node} contains host node {host} outside the host graph")]
    InvalidHostNode { node: usize, host: usize },
    #[error("leader of {node} lies outside its super-node")]
    LeaderOutside { node: usize },
    #[error("tree of {node} uses host edge {edge} which does not exist")]
    TreeEdgeMissing { node: usize, edge: usize },
    #[error("tree of {node} uses host edge {edge} leaving the super-node")]
    TreeEdgeOutside { node: usize, edge: usize },
    #[error("tree of {node} does not span its super-node")]
    TreeNotSpanning { node: usize },
    #[error("image of minor edge {edge} does not join the two super-nodes")]
    BadImage { edge: usize },
    #[error("minor edge {edge} does not exist")]
    InvalidEdge { edge: usize },
    #[error("host of the inner distribution differs from the minor of the outer one")]
    HostMismatch,
    #[error("operator has a nonzero at ({u}, {v}) which is not an edge of the minor")]
    UnsupportedPattern { u: usize, v: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Aggregation(#[from] AggError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorDistribution {
    pub minor: WeightedGraph,
    pub host: WeightedGraph,
    /// Sorted host nodes of every minor node.
    pub super_nodes: Vec<Vec<usize>>,
    pub leaders: Vec<usize>,
    /// Host edge ids of the spanning tree of each super-node.
    pub trees: Vec<Vec<usize>>,
    /// Host edge carrying each minor edge; `None` marks a self-loop image.
    pub edge_image: Vec<Option<usize>>,
    pub rho: usize,
}

impl MinorDistribution {
    /// Assembles and validates a distribution; `rho` is computed.
    pub fn new(
        minor: WeightedGraph,
        host: WeightedGraph,
        mut super_nodes: Vec<Vec<usize>>,
        leaders: Vec<usize>,
        trees: Vec<Vec<usize>>,
        edge_image: Vec<Option<usize>>,
    ) -> Result<Self, MinorError> {
        for s in &mut super_nodes {
            s.sort_unstable();
            s.dedup();
        }
        let mut d = Self { minor, host, super_nodes, leaders, trees, edge_image, rho: 0 };
        d.rho = validate_minor(&d)?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.minor.n()
    }

    /// Super-nodes as a partition of the host.
    pub fn partition(&self) -> Partition {
        Partition::new(self.super_nodes.clone())
    }

    pub fn node_congestion(&self) -> usize {
        let mut count = vec![0usize; self.host.n()];
        for s in &self.super_nodes {
            for &x in s {
                count[x] += 1;
            }
        }
        count.into_iter().max().unwrap_or(0)
    }

    pub fn edge_congestion(&self) -> usize {
        let mut count = vec![0usize; self.host.m()];
        for t in &self.trees {
            for &e in t {
                count[e] += 1;
            }
        }
        for e in self.edge_image.iter().flatten() {
            count[*e] += 1;
        }
        count.into_iter().max().unwrap_or(0)
    }

    /// Host node representing a self-loop image of `{u, v}`.
    fn shared_host(&self, u: usize, v: usize) -> Option<usize> {
        if u == v {
            return Some(self.leaders[u]);
        }
        let b: BTreeSet<_> = self.super_nodes[v].iter().copied().collect();
        self.super_nodes[u].iter().copied().find(|x| b.contains(x))
    }
}

/// Returns the true congestion `max(node congestion, edge congestion)`.
pub fn validate_minor(d: &MinorDistribution) -> Result<usize, MinorError> {
    let n = d.minor.n();
    for (what, got) in [("super_nodes", d.super_nodes.len()), ("leaders", d.leaders.len()), ("trees", d.trees.len())] {
        if got != n {
            return Err(MinorError::LengthMismatch { what, got, expected: n });
        }
    }
    if d.edge_image.len() != d.minor.m() {
        return Err(MinorError::LengthMismatch { what: "edge_image", got: d.edge_image.len(), expected: d.minor.m() });
    }
    let hn = d.host.n();
    for u in 0..n {
        let s = &d.super_nodes[u];
        if s.is_empty() {
            return Err(MinorError::EmptySuperNode { node: u });
        }
        if let Some(&x) = s.iter().find(|&&x| x >= hn) {
            return Err(MinorError::InvalidHostNode { node: u, host: x });
        }
        if s.binary_search(&d.leaders[u]).is_err() {
            return Err(MinorError::LeaderOutside { node: u });
        }
        let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &e in &d.trees[u] {
            if e >= d.host.m() {
                return Err(MinorError::TreeEdgeMissing { node: u, edge: e });
            }
            let he = d.host.edge(e);
            if s.binary_search(&he.u).is_err() || s.binary_search(&he.v).is_err() || he.is_loop() {
                return Err(MinorError::TreeEdgeOutside { node: u, edge: e });
            }
            adj.entry(he.u).or_default().push(he.v);
            adj.entry(he.v).or_default().push(he.u);
        }
        if d.trees[u].len() + 1 != s.len() || reach(&adj, d.leaders[u]).len() != s.len() {
            return Err(MinorError::TreeNotSpanning { node: u });
        }
    }
    for (i, e) in d.minor.edges().iter().enumerate() {
        let ok = match d.edge_image[i] {
            Some(h) => {
                if h >= d.host.m() {
                    false
                } else {
                    let he = d.host.edge(h);
                    let (su, sv) = (&d.super_nodes[e.u], &d.super_nodes[e.v]);
                    let inside = |s: &Vec<usize>, x: usize| s.binary_search(&x).is_ok();
                    !he.is_loop()
                        && ((inside(su, he.u) && inside(sv, he.v)) || (inside(su, he.v) && inside(sv, he.u)))
                }
            }
            None => d.shared_host(e.u, e.v).is_some(),
        };
        if !ok {
            return Err(MinorError::BadImage { edge: i });
        }
    }
    Ok(d.node_congestion().max(d.edge_congestion()).max(1))
}

fn reach(adj: &BTreeMap<usize, Vec<usize>>, root: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(x) = queue.pop_front() {
        for &y in adj.get(&x).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(y) {
                queue.push_back(y);
            }
        }
    }
    seen
}

/// BFS spanning tree of `nodes` over the candidate host edges, rooted at
/// `root`.
pub fn stitch_tree(host: &WeightedGraph, nodes: &[usize], candidates: &BTreeSet<usize>, root: usize) -> Option<Vec<usize>> {
    let inside: BTreeSet<usize> = nodes.iter().copied().collect();
    let mut adj: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &e in candidates {
        let he = host.edge(e);
        if !he.is_loop() && inside.contains(&he.u) && inside.contains(&he.v) {
            adj.entry(he.u).or_default().push((he.v, e));
            adj.entry(he.v).or_default().push((he.u, e));
        }
    }
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    let mut tree = Vec::new();
    while let Some(x) = queue.pop_front() {
        for &(y, e) in adj.get(&x).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(y) {
                tree.push(e);
                queue.push_back(y);
            }
        }
    }
    (seen.len() == inside.len()).then_some(tree)
}

/// Every node is its own super-node.
pub fn identity_minor(g: &WeightedGraph) -> MinorDistribution {
    let n = g.n();
    let edge_image = g.edges().iter().enumerate().map(|(i, e)| (!e.is_loop()).then_some(i)).collect();
    MinorDistribution {
        minor: g.clone(),
        host: g.clone(),
        super_nodes: (0..n).map(|v| vec![v]).collect(),
        leaders: (0..n).collect(),
        trees: vec![Vec::new(); n],
        edge_image,
        rho: 1,
    }
}

/// Distribution of `d1.minor` into `d2.host`. Leaders are recomputed as the
/// outer leader of the inner leader.
pub fn compose_minors(d1: &MinorDistribution, d2: &MinorDistribution) -> Result<MinorDistribution, MinorError> {
    if d1.host != d2.minor {
        return Err(MinorError::HostMismatch);
    }
    let n = d1.n();
    let mut super_nodes = Vec::with_capacity(n);
    let mut leaders = Vec::with_capacity(n);
    let mut trees = Vec::with_capacity(n);
    for u in 0..n {
        let mut nodes = BTreeSet::new();
        let mut candidates = BTreeSet::new();
        for &x in &d1.super_nodes[u] {
            nodes.extend(d2.super_nodes[x].iter().copied());
            candidates.extend(d2.trees[x].iter().copied());
        }
        for &t in &d1.trees[u] {
            if let Some(h) = d2.edge_image[t] {
                candidates.insert(h);
            }
        }
        let nodes: Vec<usize> = nodes.into_iter().collect();
        let leader = d2.leaders[d1.leaders[u]];
        let tree = stitch_tree(&d2.host, &nodes, &candidates, leader).ok_or(MinorError::TreeNotSpanning { node: u })?;
        super_nodes.push(nodes);
        leaders.push(leader);
        trees.push(tree);
    }
    let edge_image = d1.edge_image.iter().map(|img| img.and_then(|f| d2.edge_image[f])).collect();
    MinorDistribution::new(d1.minor.clone(), d2.host.clone(), super_nodes, leaders, trees, edge_image)
}

/// Component label of every minor node after contracting `f`, numbered by
/// smallest member.
pub fn contraction_labels(g: &WeightedGraph, f: &[usize]) -> Result<Vec<usize>, MinorError> {
    let mut parent: Vec<usize> = (0..g.n()).collect();
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
    for &e in f {
        if e >= g.m() {
            return Err(MinorError::InvalidEdge { edge: e });
        }
        let ed = g.edge(e);
        let (a, b) = (find(&mut parent, ed.u), find(&mut parent, ed.v));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut label = vec![usize::MAX; g.n()];
    let mut next = 0;
    for v in 0..g.n() {
        let r = find(&mut parent, v);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        label[v] = label[r];
    }
    Ok(label)
}

/// Oracle contraction `G / F`: edges keep their ids, contracted ones become
/// self-loops.
pub fn contract_graph(g: &WeightedGraph, f: &[usize]) -> Result<(WeightedGraph, Vec<usize>), MinorError> {
    let label = contraction_labels(g, f)?;
    let k = label.iter().copied().max().map_or(0, |x| x + 1);
    let h = WeightedGraph::from_edges(k, g.edges().iter().map(|e| (label[e.u], label[e.v], e.weight)))?;
    Ok((h, label))
}

/// Distribution of `G / F` into the same host. Each component takes the
/// smallest member leader.
pub fn contract_edges(d: &MinorDistribution, f: &[usize]) -> Result<MinorDistribution, MinorError> {
    let (minor, label) = contract_graph(&d.minor, f)?;
    let k = minor.n();
    let mut members = vec![Vec::new(); k];
    for (v, &c) in label.iter().enumerate() {
        members[c].push(v);
    }
    let mut internal = vec![BTreeSet::new(); k];
    for (i, e) in d.minor.edges().iter().enumerate() {
        if label[e.u] == label[e.v] {
            if let Some(h) = d.edge_image[i] {
                internal[label[e.u]].insert(h);
            }
        }
    }
    let mut super_nodes = Vec::with_capacity(k);
    let mut leaders = Vec::with_capacity(k);
    let mut trees = Vec::with_capacity(k);
    for c in 0..k {
        let mut nodes = BTreeSet::new();
        let mut candidates = std::mem::take(&mut internal[c]);
        for &v in &members[c] {
            nodes.extend(d.super_nodes[v].iter().copied());
            candidates.extend(d.trees[v].iter().copied());
        }
        let leader = members[c].iter().map(|&v| d.leaders[v]).min().unwrap();
        let nodes: Vec<usize> = nodes.into_iter().collect();
        let tree = stitch_tree(&d.host, &nodes, &candidates, leader).ok_or(MinorError::TreeNotSpanning { node: c })?;
        super_nodes.push(nodes);
        leaders.push(leader);
        trees.push(tree);
    }
    let edge_image = d
        .minor
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| if label[e.u] == label[e.v] { None } else { d.edge_image[i] })
        .collect();
    let out = MinorDistribution::new(minor, d.host.clone(), super_nodes, leaders, trees, edge_image)?;
    Ok(out)
}

/// A symmetric matrix supported on the minor: a diagonal plus one
/// off-diagonal value per edge (`A_uv` is the sum over parallel edges).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOperator {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl EdgeOperator {
    pub fn laplacian(g: &WeightedGraph) -> Self {
        let off = g.edges().iter().map(|e| if e.is_loop() { 0.0 } else { -e.weight }).collect();
        Self { diag: g.weighted_degrees(), off }
    }

    /// Splits a dense symmetric matrix over the edges of `g`; nonzeros
    /// off the edge set are rejected.
    pub fn from_matrix(g: &WeightedGraph, a: &nalgebra::DMatrix<f64>) -> Result<Self, MinorError> {
        let n = g.n();
        let mut first: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (i, e) in g.edges().iter().enumerate() {
            if !e.is_loop() {
                first.entry((e.u.min(e.v), e.u.max(e.v))).or_insert(i);
            }
        }
        let mut off = vec![0.0; g.m()];
        for u in 0..n {
            for v in u + 1..n {
                let x = a[(u, v)];
                if x == 0.0 {
                    continue;
                }
                match first.get(&(u, v)) {
                    Some(&i) => off[i] = x,
                    None => return Err(MinorError::UnsupportedPattern { u, v }),
                }
            }
        }
        Ok(Self { diag: (0..n).map(|u| a[(u, u)]).collect(), off })
    }

    /// Sequential product.
    pub fn apply(&self, g: &WeightedGraph, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.diag.iter().zip(x).map(|(d, x)| d * x).collect();
        for (e, &a) in g.edges().iter().zip(&self.off) {
            if !e.is_loop() {
                y[e.u] += a * x[e.v];
                y[e.v] += a * x[e.u];
            }
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct MatvecOutcome {
    pub y: Vec<f64>,
    pub rounds: usize,
}

/// `A·x` with `x_u` held by the leader of `u`: leaders broadcast through
/// their super-nodes, host endpoints of edge images multiply locally, and a
/// second aggregation sums the partial products back at the leaders.
pub fn minor_matvec(
    d: &MinorDistribution,
    a: &EdgeOperator,
    x: &[f64],
    service: &AggregationService,
) -> Result<MatvecOutcome, MinorError> {
    let n = d.n();
    if x.len() != n || a.diag.len() != n || a.off.len() != d.minor.m() {
        return Err(MinorError::LengthMismatch { what: "vector", got: x.len(), expected: n });
    }
    let partition = d.partition();
    let leaders = d.leaders.as_slice();
    let inputs: PartInputs = (0..n)
        .map(|u| d.super_nodes[u].iter().map(|&h| Value::new(if h == d.leaders[u] { x[u] } else { 0.0 })).collect())
        .collect();
    let first = service.aggregate(&partition, Some(leaders), &inputs, AggOp::Sum)?;
    // What each host node now knows about each super-node it belongs to.
    let known: Vec<BTreeMap<usize, f64>> =
        first.learned.iter().map(|row| row.iter().map(|&(p, v)| (p, v.x)).collect()).collect();
    let mut partial: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); d.host.n()];
    for u in 0..n {
        *partial[d.leaders[u]].entry(u).or_default() += a.diag[u] * known[d.leaders[u]][&u];
    }
    for (i, e) in d.minor.edges().iter().enumerate() {
        if e.is_loop() || a.off[i] == 0.0 {
            continue;
        }
        let (hu, hv) = match d.edge_image[i] {
            Some(h) => {
                let he = d.host.edge(h);
                if d.super_nodes[e.u].binary_search(&he.u).is_ok() && d.super_nodes[e.v].binary_search(&he.v).is_ok() {
                    (he.u, he.v)
                } else {
                    (he.v, he.u)
                }
            }
            None => {
                let s = d.shared_host(e.u, e.v).ok_or(MinorError::BadImage { edge: i })?;
                (s, s)
            }
        };
        // Each endpoint learns the other's coordinate across the image edge.
        *partial[hu].entry(e.u).or_default() += a.off[i] * known[hv][&e.v];
        *partial[hv].entry(e.v).or_default() += a.off[i] * known[hu][&e.u];
    }
    let inputs: PartInputs = (0..n)
        .map(|u| d.super_nodes[u].iter().map(|&h| Value::new(partial[h].get(&u).copied().unwrap_or(0.0))).collect())
        .collect();
    let second = service.aggregate(&partition, Some(leaders), &inputs, AggOp::Sum)?;
    let mut y = vec![0.0; n];
    for u in 0..n {
        y[u] = second.learned[d.leaders[u]].iter().find(|(p, _)| *p == u).map(|(_, v)| v.x).unwrap_or(0.0);
    }
    let exchange = usize::from(d.minor.m() > 0);
    Ok(MatvecOutcome { y, rounds: first.rounds + second.rounds + exchange })
}
