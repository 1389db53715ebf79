//! Tree-based part-wise aggregation: the convergecast/broadcast node
//! program, shortcut providers and their measured quality, and the host
//! baseline with pipelining over a global BFS tree.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{check_inputs, AggError, AggOp, AggOutcome, PartInputs, Value};
use crate::graph::{validate_partition, Partition, TreeDecomposition, WeightedGraph};
use crate::netsim::{run_congest, Action, Ctx, NetConfig, NodeId, NodeProgram, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// `H_i = ∅`: every part aggregates over its own induced subgraph.
    Empty,
    /// Parts with `|P| ≤ √n` use their own trees, larger parts a global BFS
    /// tree restricted to the part.
    Baseline,
    /// Global BFS tree rooted in the central bag of a tree decomposition,
    /// used by parts whose induced diameter exceeds the hop diameter.
    TreeDec,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "empty" => Ok(ProviderKind::Empty),
            "baseline" => Ok(ProviderKind::Baseline),
            "treedec" | "tree-dec" => Ok(ProviderKind::TreeDec),
            other => Err(format!("unknown provider `{other}`")),
        }
    }
}

/// Per-part shortcut edges with congestion and dilation recomputed from the
/// content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortcutSet {
    pub edges: Vec<Vec<(usize, usize)>>,
    pub congestion: usize,
    pub dilation: usize,
}

impl ShortcutSet {
    pub fn new(g: &WeightedGraph, partition: &Partition, edges: Vec<Vec<(usize, usize)>>) -> Self {
        let edges: Vec<Vec<(usize, usize)>> = edges
            .into_iter()
            .map(|h| {
                let mut h: Vec<_> = h.into_iter().map(|(u, v)| (u.min(v), u.max(v))).collect();
                h.sort_unstable();
                h.dedup();
                h
            })
            .collect();
        let (congestion, dilation, _) = quality_of(g, partition, &edges);
        Self { edges, congestion, dilation }
    }

    pub fn quality(&self) -> usize {
        self.congestion + self.dilation
    }
}

/// `(c, d, Q)` of a shortcut set.
pub fn shortcut_quality(g: &WeightedGraph, partition: &Partition, s: &ShortcutSet) -> (usize, usize, usize) {
    quality_of(g, partition, &s.edges)
}

fn quality_of(g: &WeightedGraph, partition: &Partition, edges: &[Vec<(usize, usize)>]) -> (usize, usize, usize) {
    let mut mult: HashMap<(usize, usize), usize> = HashMap::new();
    for h in edges {
        for &e in h {
            *mult.entry(e).or_default() += 1;
        }
    }
    let c = mult.values().copied().max().unwrap_or(0);
    let adj = g.neighbor_sets();
    let d = partition
        .parts
        .iter()
        .zip(edges)
        .map(|(part, h)| SubGraph::new(&adj, part, h).diameter())
        .max()
        .unwrap_or(0);
    (c, d, c + d)
}

/// `G[P] ∪ H` with local indices.
pub(crate) struct SubGraph {
    pub nodes: Vec<usize>,
    pub is_part: Vec<bool>,
    pub adj: Vec<Vec<usize>>,
}

impl SubGraph {
    pub fn new(g_adj: &[Vec<usize>], part: &[usize], h: &[(usize, usize)]) -> Self {
        let mut idx: HashMap<usize, usize> = HashMap::new();
        let mut nodes = Vec::new();
        let mut is_part = Vec::new();
        for &x in part {
            idx.insert(x, nodes.len());
            nodes.push(x);
            is_part.push(true);
        }
        for &(u, v) in h {
            for x in [u, v] {
                if let std::collections::hash_map::Entry::Vacant(e) = idx.entry(x) {
                    e.insert(nodes.len());
                    nodes.push(x);
                    is_part.push(false);
                }
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for &x in part {
            for &y in &g_adj[x] {
                if let Some(&j) = idx.get(&y) {
                    if is_part[j] {
                        adj[idx[&x]].push(j);
                    }
                }
            }
        }
        for &(u, v) in h {
            let (a, b) = (idx[&u], idx[&v]);
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Self { nodes, is_part, adj }
    }

    fn bfs(&self, src: usize) -> (Vec<usize>, Vec<usize>) {
        let n = self.nodes.len();
        let mut dist = vec![usize::MAX; n];
        let mut parent = vec![usize::MAX; n];
        let mut q = VecDeque::from([src]);
        dist[src] = 0;
        while let Some(x) = q.pop_front() {
            for &y in &self.adj[x] {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    parent[y] = x;
                    q.push_back(y);
                }
            }
        }
        (dist, parent)
    }

    pub fn diameter(&self) -> usize {
        (0..self.nodes.len())
            .map(|s| self.bfs(s).0.into_iter().filter(|&d| d != usize::MAX).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Midpoint of a double-sweep path; a cheap near-center.
    fn center(&self) -> usize {
        let far = |s: usize| {
            let (dist, parent) = self.bfs(s);
            let t = (0..dist.len()).filter(|&i| dist[i] != usize::MAX).max_by_key(|&i| (dist[i], usize::MAX - i)).unwrap();
            (t, dist[t], parent)
        };
        let (a, _, _) = far(0);
        let (b, len, parent) = far(a);
        let mut x = b;
        for _ in 0..len / 2 {
            x = parent[x];
        }
        x
    }

    /// BFS tree from the center with non-part leaves pruned, in global ids.
    pub fn aggregation_tree(&self) -> TaskTree {
        let root = self.center();
        let (dist, parent) = self.bfs(root);
        let n = self.nodes.len();
        let mut keep: Vec<bool> = (0..n).map(|i| self.is_part[i] && dist[i] != usize::MAX).collect();
        for i in 0..n {
            if keep[i] {
                let mut x = i;
                while x != root && !keep[parent[x]] {
                    keep[parent[x]] = true;
                    x = parent[x];
                }
            }
        }
        keep[root] = true;
        let mut tree = BTreeMap::new();
        for i in 0..n {
            if keep[i] {
                let p = if i == root { None } else { Some(self.nodes[parent[i]]) };
                tree.insert(self.nodes[i], p);
            }
        }
        TaskTree { root: self.nodes[root], parent: tree }
    }
}

/// A rooted tree over global node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskTree {
    pub root: usize,
    pub parent: BTreeMap<usize, Option<usize>>,
}

impl TaskTree {
    pub fn depth(&self) -> usize {
        self.parent
            .keys()
            .map(|&x| {
                let mut d = 0;
                let mut y = x;
                while let Some(Some(p)) = self.parent.get(&y) {
                    y = *p;
                    d += 1;
                }
                d
            })
            .max()
            .unwrap_or(0)
    }
}

/// Global BFS tree (parent array) from `root`.
pub(crate) fn bfs_parents(adj: &[Vec<usize>], root: usize) -> Result<Vec<usize>, AggError> {
    let n = adj.len();
    let mut parent = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut q = VecDeque::from([root]);
    seen[root] = true;
    parent[root] = root;
    while let Some(x) = q.pop_front() {
        for &y in &adj[x] {
            if !seen[y] {
                seen[y] = true;
                parent[y] = x;
                q.push_back(y);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(AggError::Disconnected);
    }
    Ok(parent)
}

/// Edges of the minimal subtree of the rooted tree spanning `part`.
pub(crate) fn steiner_edges(parent: &[usize], part: &[usize]) -> Vec<(usize, usize)> {
    let n = parent.len();
    let mut marked = vec![false; n];
    let mut in_part = vec![false; n];
    for &x in part {
        in_part[x] = true;
        let mut y = x;
        while !marked[y] {
            marked[y] = true;
            if parent[y] == y {
                break;
            }
            y = parent[y];
        }
    }
    let mut children = vec![0usize; n];
    let mut root = usize::MAX;
    for x in 0..n {
        if marked[x] {
            if parent[x] == x {
                root = x;
            } else {
                children[parent[x]] += 1;
            }
        }
    }
    // Walk the top down while it is a non-part node with a single child.
    let mut top = root;
    while top != usize::MAX && !in_part[top] && children[top] == 1 {
        marked[top] = false;
        top = (0..n).find(|&c| marked[c] && parent[c] == top).unwrap();
    }
    (0..n).filter(|&x| marked[x] && x != top).map(|x| (x, parent[x])).collect()
}

fn double_sweep_center(adj: &[Vec<usize>]) -> usize {
    let all: Vec<usize> = (0..adj.len()).collect();
    SubGraph::new(adj, &all, &[]).center()
}

/// Central bag of a decomposition tree (minimum eccentricity over bags).
fn central_bag(td: &TreeDecomposition) -> usize {
    let adj = td.bag_adjacency();
    (0..td.bags.len())
        .min_by_key(|&b| crate::graph::bfs(&adj, b).into_iter().max().unwrap_or(0))
        .unwrap_or(0)
}

/// Builds shortcuts for (possibly overlapping) connected parts.
pub fn build_shortcuts(
    g: &WeightedGraph,
    partition: &Partition,
    kind: ProviderKind,
    td: Option<&TreeDecomposition>,
) -> Result<ShortcutSet, AggError> {
    let adj = g.neighbor_sets();
    let k = partition.parts.len();
    let edges = match kind {
        ProviderKind::Empty => vec![Vec::new(); k],
        ProviderKind::Baseline => {
            let parent = bfs_parents(&adj, double_sweep_center(&adj))?;
            let threshold = (g.n() as f64).sqrt();
            partition
                .parts
                .iter()
                .map(|p| if (p.len() as f64) <= threshold { Vec::new() } else { steiner_edges(&parent, p) })
                .collect()
        }
        ProviderKind::TreeDec => {
            let td = td.ok_or(AggError::MissingDecomposition)?;
            crate::graph::validate_tree_decomposition(g, td).map_err(|e| AggError::BadDecomposition(e.to_string()))?;
            let bag = &td.bags[central_bag(td)];
            let root = *bag.iter().min().ok_or(AggError::MissingDecomposition)?;
            let parent = bfs_parents(&adj, root)?;
            let diameter = crate::graph::hop_diameter(g).map_err(|_| AggError::Disconnected)?;
            partition
                .parts
                .iter()
                .map(|p| {
                    if SubGraph::new(&adj, p, &[]).diameter() > diameter {
                        steiner_edges(&parent, p)
                    } else {
                        Vec::new()
                    }
                })
                .collect()
        }
    };
    Ok(ShortcutSet::new(g, partition, edges))
}

pub(crate) fn trees_for(g: &WeightedGraph, partition: &Partition, s: &ShortcutSet) -> Vec<TaskTree> {
    let adj = g.neighbor_sets();
    partition.parts.iter().zip(&s.edges).map(|(p, h)| SubGraph::new(&adj, p, h).aggregation_tree()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeMsg {
    pub task: usize,
    pub down: bool,
    pub value: Value,
    pub value_words: usize,
}

impl Payload for TreeMsg {
    fn words(&self) -> usize {
        // Task id and direction share one word.
        1 + self.value_words
    }
}

#[derive(Debug, Clone)]
struct TaskState {
    key: usize,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    delay: usize,
    acc: Value,
    waiting: usize,
    sent_up: bool,
    result: Option<Value>,
}

/// Convergecast then broadcast over one tree per task, with one FIFO queue
/// per neighbor so trees sharing an edge are pipelined.
#[derive(Debug, Clone)]
pub struct TreeAggNode {
    op: AggOp,
    tasks: Vec<TaskState>,
    index: HashMap<usize, usize>,
    queues: BTreeMap<NodeId, VecDeque<TreeMsg>>,
}

impl TreeAggNode {
    pub fn results(&self) -> BTreeMap<usize, Value> {
        self.tasks.iter().filter_map(|t| t.result.map(|v| (t.key, v))).collect()
    }

    fn push(&mut self, to: NodeId, task: usize, down: bool, value: Value) {
        let value_words = self.op.value_words();
        self.queues.entry(to).or_default().push_back(TreeMsg { task, down, value, value_words });
    }
}

impl NodeProgram for TreeAggNode {
    type Msg = TreeMsg;

    fn step(&mut self, ctx: &Ctx, local: &[(NodeId, TreeMsg)], _: &[(NodeId, TreeMsg)]) -> Action<TreeMsg> {
        for (_, m) in local {
            let i = self.index[&m.task];
            if m.down {
                self.tasks[i].result = Some(m.value);
                let children = self.tasks[i].children.clone();
                for c in children {
                    self.push(c, m.task, true, m.value);
                }
            } else {
                let t = &mut self.tasks[i];
                t.acc = self.op.combine(t.acc, m.value);
                t.waiting -= 1;
            }
        }
        let mut delayed = false;
        for i in 0..self.tasks.len() {
            let t = &self.tasks[i];
            if t.sent_up || t.waiting > 0 {
                continue;
            }
            if ctx.round < t.delay {
                delayed = true;
                continue;
            }
            let (key, acc, parent) = (t.key, t.acc, t.parent);
            self.tasks[i].sent_up = true;
            match parent {
                Some(p) => self.push(p, key, false, acc),
                None => {
                    self.tasks[i].result = Some(acc);
                    let children = self.tasks[i].children.clone();
                    for c in children {
                        self.push(c, key, true, acc);
                    }
                }
            }
        }
        let mut out = Vec::new();
        for (&to, q) in self.queues.iter_mut() {
            if let Some(m) = q.pop_front() {
                out.push((to, m));
            }
        }
        self.queues.retain(|_, q| !q.is_empty());
        Action { local: out, global: Vec::new(), halt: !delayed && self.queues.is_empty() }
    }
}

/// One program per node of `n`, running task `i` on `trees[i]` with the
/// member inputs `inputs[i]` and start delay `delays[i]`.
pub fn tree_programs(
    n: usize,
    trees: &[TaskTree],
    inputs: &[BTreeMap<usize, Value>],
    delays: &[usize],
    op: AggOp,
) -> Vec<TreeAggNode> {
    let mut nodes: Vec<TreeAggNode> = (0..n)
        .map(|_| TreeAggNode { op, tasks: Vec::new(), index: HashMap::new(), queues: BTreeMap::new() })
        .collect();
    for (key, tree) in trees.iter().enumerate() {
        let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&x, &p) in &tree.parent {
            if let Some(p) = p {
                children.entry(p).or_default().push(x);
            }
        }
        for (&x, &p) in &tree.parent {
            let kids = children.remove(&x).unwrap_or_default();
            let acc = inputs[key].get(&x).copied().unwrap_or(op.identity());
            let node = &mut nodes[x];
            node.index.insert(key, node.tasks.len());
            node.tasks.push(TaskState {
                key,
                parent: p,
                waiting: kids.len(),
                children: kids,
                delay: delays[key],
                acc,
                sent_up: false,
                result: None,
            });
        }
    }
    nodes
}

pub(crate) fn input_maps(partition: &Partition, inputs: &PartInputs) -> Vec<BTreeMap<usize, Value>> {
    partition.parts.iter().zip(inputs).map(|(p, v)| p.iter().copied().zip(v.iter().copied()).collect()).collect()
}

/// The explicit `O(ρ√n + D)` scheme on the host: small parts over their own
/// BFS trees, large parts over a shared global BFS tree, all pipelined.
pub fn baseline_congested_aggregation(
    g: &WeightedGraph,
    partition: &Partition,
    inputs: &PartInputs,
    op: AggOp,
    net: &NetConfig,
) -> Result<AggOutcome, AggError> {
    check_inputs(partition, inputs)?;
    validate_partition(g, partition, usize::MAX)?;
    let shortcuts = build_shortcuts(g, partition, ProviderKind::Baseline, None)?;
    let trees = trees_for(g, partition, &shortcuts);
    let programs = tree_programs(g.n(), &trees, &input_maps(partition, inputs), &vec![0; trees.len()], op);
    let run = run_congest(g, programs, net)?;
    let learned = collect_learned(g.n(), partition, |u| run.programs[u].results());
    Ok(AggOutcome { learned, rounds: run.ledger.rounds, ledger: run.ledger, notes: Vec::new() })
}

pub(crate) fn collect_learned(
    n: usize,
    partition: &Partition,
    results: impl Fn(usize) -> BTreeMap<usize, Value>,
) -> Vec<Vec<(usize, Value)>> {
    partition
        .memberships(n)
        .into_iter()
        .enumerate()
        .map(|(u, parts)| {
            let res = results(u);
            parts.into_iter().filter_map(|p| res.get(&p).map(|&v| (p, v))).collect()
        })
        .collect()
}
