//! Schur complement approximation by leverage-score contraction and
//! deletion of steady edge sets, with sketch-based estimators for the
//! quantities that certify steadiness.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{aggregation_cost, CostLedger};
use crate::aggregation::{AggError, AggregationService};
use crate::graph::WeightedGraph;
use crate::linalg::SolverFactory;
use crate::minors::{stitch_tree, MinorDistribution, MinorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxScError {
    #[error("terminal {0} is not a node of the graph")]
    BadTerminal(usize),
    #[error("no terminals")]
    NoTerminals,
    #[error("ε must lie in (0, 1), got {0}")]
    BadEps(f64),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("loop budget of {0} iterations exceeded")]
    LoopBudget(usize),
    #[error(transparent)]
    Minor(#[from] MinorError),
    #[error(transparent)]
    Aggregation(#[from] AggError),
}

/// Random ±1/√k matrix.
fn sign_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let s = 1.0 / (rows as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| if rng.random::<bool>() { s } else { -s })
}

/// `Bᵀ W^{1/2} Qᵀ`: one node-space vector per row of `q` (rows × m).
fn lift(g: &WeightedGraph, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(g.n(), q.nrows());
    for (i, e) in g.proper_edges() {
        let s = e.weight.sqrt();
        for j in 0..q.nrows() {
            let x = s * q[(j, i)];
            out[(e.u, j)] += x;
            out[(e.v, j)] -= x;
        }
    }
    out
}

/// `Σ_j (z_j[u] − z_j[v])²` for every edge.
fn edge_norms(g: &WeightedGraph, z: &DMatrix<f64>) -> Vec<f64> {
    g.edges()
        .iter()
        .map(|e| if e.is_loop() { 0.0 } else { (0..z.ncols()).map(|j| (z[(e.u, j)] - z[(e.v, j)]).powi(2)).sum() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageEstimates {
    pub lev: Vec<f64>,
    pub delta: f64,
    pub projections: usize,
    pub solver_calls: usize,
}

/// Random-projection leverage scores with `⌈c·ln n/δ²⌉` projections.
pub fn approx_leverage_scores<R: Rng>(
    g: &WeightedGraph,
    delta: f64,
    c: f64,
    factory: &dyn SolverFactory,
    rng: &mut R,
) -> LeverageEstimates {
    let n = g.n().max(2) as f64;
    let k = (c * n.ln() / (delta * delta)).ceil().max(1.0) as usize;
    let q = sign_matrix(k, g.m(), rng);
    let solver = factory.build(g);
    let z = solver.solve_many(&lift(g, &q));
    let r = edge_norms(g, &z);
    let lev = g.edges().iter().zip(r).map(|(e, r)| if e.is_loop() { 0.0 } else { e.weight * r }).collect();
    LeverageEstimates { lev, delta, projections: k, solver_calls: solver.calls() }
}

/// Weighted median minimizing `Σ w_j |x_j − λ|`.
fn weighted_median(mut pts: Vec<(f64, f64)>) -> f64 {
    pts.retain(|p| p.1 > 0.0 && p.0.is_finite());
    if pts.is_empty() {
        return 0.0;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = pts.iter().map(|p| p.1).sum::<f64>() / 2.0;
    let mut acc = 0.0;
    for &(x, w) in &pts {
        acc += w;
        if acc >= half {
            return x;
        }
    }
    pts.last().unwrap().0
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSums {
    /// Estimate per member of `W`, in the order given.
    pub sums: Vec<f64>,
    pub rows: usize,
    pub solver_calls: usize,
}

/// Estimates `Σ_{f∈W, f≠e} |b_eᵀL†b_f| / √(r_e r_f)` for every `e ∈ W` with a
/// Cauchy sketch of `⌈c·ln²n⌉` rows. The diagonal term is removed by a
/// per-column L1 fit before taking the median.
pub fn approx_column_sums<R: Rng>(
    g: &WeightedGraph,
    w: &[usize],
    c: f64,
    factory: &dyn SolverFactory,
    rng: &mut R,
) -> ColumnSums {
    if w.len() <= 1 {
        return ColumnSums { sums: vec![0.0; w.len()], rows: 0, solver_calls: 0 };
    }
    let ln_n = (g.n().max(2) as f64).ln();
    let s = (c * ln_n * ln_n).ceil().max(1.0) as usize;
    let cauchy = Cauchy::new(0.0, 1.0).expect("valid scale");
    let cm = DMatrix::from_fn(s, w.len(), |_, _| cauchy.sample(rng));
    let mut rhs = DMatrix::zeros(g.n(), s);
    for (k, &e) in w.iter().enumerate() {
        let ed = g.edge(e);
        let sw = ed.weight.sqrt();
        for j in 0..s {
            rhs[(ed.u, j)] += cm[(j, k)] * sw;
            rhs[(ed.v, j)] -= cm[(j, k)] * sw;
        }
    }
    let solver = factory.build(g);
    let z = solver.solve_many(&rhs);
    let sums = w
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let ed = g.edge(e);
            let sw = ed.weight.sqrt();
            let u: Vec<f64> = (0..s).map(|j| sw * (z[(ed.u, j)] - z[(ed.v, j)])).collect();
            let lambda = weighted_median((0..s).map(|j| (u[j] / cm[(j, k)], cm[(j, k)].abs())).collect());
            median((0..s).map(|j| (u[j] - cm[(j, k)] * lambda).abs()).collect())
        })
        .collect();
    ColumnSums { sums, rows: s, solver_calls: solver.calls() }
}

/// `G / T` with the terminals merged into node `0`; other nodes keep their
/// order from index 1.
fn contract_terminals(g: &WeightedGraph, is_t: &[bool]) -> (WeightedGraph, Vec<usize>) {
    let mut label = vec![0; g.n()];
    let mut next = 1;
    for v in 0..g.n() {
        if !is_t[v] {
            label[v] = next;
            next += 1;
        }
    }
    let edges = g.proper_edges().filter(|(_, e)| label[e.u] != label[e.v]).map(|(_, e)| (label[e.u], label[e.v], e.weight));
    (WeightedGraph::from_edges(next, edges).expect("valid edges"), label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimates {
    /// `w_e·b_eᵀ L† [SC(G,T) 0; 0 0] L† b_e` per edge.
    pub energy: Vec<f64>,
    pub projections: usize,
    pub solver_calls: usize,
}

/// Random-projection estimate of the Schur-complement energy of every edge.
/// The harmonic extension off `T` is computed with a solver for `G / T`.
pub fn sc_energy_estimate<R: Rng>(
    g: &WeightedGraph,
    terminals: &[usize],
    c: f64,
    factory: &dyn SolverFactory,
    rng: &mut R,
) -> EnergyEstimates {
    let n = g.n();
    let mut is_t = vec![false; n];
    for &t in terminals {
        is_t[t] = true;
    }
    let k = (c * (n.max(2) as f64).ln()).ceil().max(1.0) as usize;
    let q = sign_matrix(k, g.m(), rng);
    let y = lift(g, &q);
    // Hᵀy = y_T − L_TS L_SS⁻¹ y_S, with the grounded solve through G / T.
    let (gt, label) = contract_terminals(g, &is_t);
    let mut calls = 0;
    let mut ht = DMatrix::zeros(n, k);
    if gt.n() > 1 {
        let mut rhs = DMatrix::zeros(gt.n(), k);
        for v in 0..n {
            if !is_t[v] {
                for j in 0..k {
                    rhs[(label[v], j)] += y[(v, j)];
                    rhs[(0, j)] -= y[(v, j)];
                }
            }
        }
        let sol = factory.build(&gt);
        let zz = sol.solve_many(&rhs);
        calls += sol.calls();
        for (_, e) in g.proper_edges() {
            for (a, b) in [(e.u, e.v), (e.v, e.u)] {
                if is_t[a] && !is_t[b] {
                    for j in 0..k {
                        let zb = zz[(label[b], j)] - zz[(0, j)];
                        ht[(a, j)] += e.weight * zb;
                    }
                }
            }
        }
    }
    for v in 0..n {
        if is_t[v] {
            for j in 0..k {
                ht[(v, j)] += y[(v, j)];
            }
        }
    }
    let solver = factory.build(g);
    let z = solver.solve_many(&ht);
    calls += solver.calls();
    let r = edge_norms(g, &z);
    let energy = g.edges().iter().zip(r).map(|(e, r)| if e.is_loop() { 0.0 } else { e.weight * r }).collect();
    EnergyEstimates { energy, projections: k, solver_calls: calls }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApproxScParams {
    /// Accuracy of the leverage scores fed to the splitter.
    pub lev_delta: f64,
    /// Projections per `ln n/δ²` for leverage scores.
    pub c_lev: f64,
    /// Cauchy rows per `ln² n`.
    pub c_cauchy: f64,
    /// Projections per `ln n` for Schur-complement energies.
    pub c_energy: f64,
    /// `δ = delta_scale·ε`.
    pub delta_scale: f64,
    /// Steady sampling rate `steady_scale·δ/(C·ln²m)`.
    pub steady_scale: f64,
    pub steady_c: f64,
    /// Use the unscaled rate `δ/(1000·C·ln²m)`.
    pub unscaled: bool,
    pub steady_retries: usize,
    /// Stop once `m ≤ edge_scale·|T|·ln²n/ε²`.
    pub edge_scale: f64,
    /// Iteration budget; `None` uses `⌈4·ln m/α_s⌉`.
    pub max_iterations: Option<usize>,
}

impl Default for ApproxScParams {
    fn default() -> Self {
        Self {
            lev_delta: 0.1,
            c_lev: 9.0,
            c_cauchy: 16.0,
            c_energy: 24.0,
            delta_scale: 1.0,
            steady_scale: 1.0,
            steady_c: 1.0,
            unscaled: false,
            steady_retries: 10,
            edge_scale: 1.0,
            max_iterations: None,
        }
    }
}

impl ApproxScParams {
    pub fn steady_rate(&self, m: usize, delta: f64) -> f64 {
        let l = (m.max(2) as f64).ln();
        let base = delta / (self.steady_c * l * l);
        if self.unscaled {
            base / 1000.0
        } else {
            (self.steady_scale * base).min(1.0)
        }
    }

    pub fn edge_threshold(&self, n: usize, t: usize, eps: f64) -> f64 {
        let l = (n.max(2) as f64).ln();
        self.edge_scale * t as f64 * l * l / (eps * eps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadySet {
    pub z: Vec<usize>,
    pub alpha: f64,
    pub delta: f64,
    /// Localization sum estimate per member.
    pub localization: Vec<f64>,
    /// Schur-complement energy estimate per member.
    pub variance: Vec<f64>,
    pub tries: usize,
    pub solver_calls: usize,
}

/// Samples non-terminal-pair edges at the steady rate and keeps those whose
/// localization estimate is at most `δ/2` and energy estimate at most
/// `16|T|/m`; retries while the result is empty.
pub fn find_steady<R: Rng>(
    g: &WeightedGraph,
    terminals: &[usize],
    delta: f64,
    params: &ApproxScParams,
    factory: &dyn SolverFactory,
    rng: &mut R,
) -> SteadySet {
    let m = g.proper_edges().count();
    let alpha = params.steady_rate(m, delta);
    let mut is_t = vec![false; g.n()];
    for &t in terminals {
        is_t[t] = true;
    }
    let energy = sc_energy_estimate(g, terminals, params.c_energy, factory, rng);
    let mut calls = energy.solver_calls;
    let var_bound = 16.0 * terminals.len() as f64 / m.max(1) as f64;
    let eligible: Vec<usize> = g.proper_edges().filter(|(_, e)| !(is_t[e.u] && is_t[e.v])).map(|(i, _)| i).collect();
    let mut tries = 0;
    while tries < params.steady_retries.max(1) {
        tries += 1;
        let sample: Vec<usize> = eligible.iter().copied().filter(|_| rng.random::<f64>() < alpha).collect();
        if sample.is_empty() {
            continue;
        }
        let loc = approx_column_sums(g, &sample, params.c_cauchy, factory, rng);
        calls += loc.solver_calls;
        let mut out = SteadySet { z: vec![], alpha, delta, localization: vec![], variance: vec![], tries, solver_calls: 0 };
        for (k, &e) in sample.iter().enumerate() {
            if loc.sums[k] <= delta / 2.0 && energy.energy[e] <= var_bound {
                out.z.push(e);
                out.localization.push(loc.sums[k]);
                out.variance.push(energy.energy[e]);
            }
        }
        if !out.z.is_empty() {
            out.solver_calls = calls;
            return out;
        }
    }
    SteadySet { z: vec![], alpha, delta, localization: vec![], variance: vec![], tries, solver_calls: calls }
}

/// A graph being reduced, with every node's host super-node tracked so the
/// result stays minor-distributed into the host.
#[derive(Debug, Clone)]
pub struct Work {
    pub g: WeightedGraph,
    pub nodes: Vec<BTreeSet<usize>>,
    /// Host edges usable for the super-node trees.
    pub cands: Vec<BTreeSet<usize>>,
    pub leaders: Vec<usize>,
    pub image: Vec<Option<usize>>,
    /// Original terminal carried by each node.
    pub term: Vec<Option<usize>>,
}

impl Work {
    pub fn new(d: &MinorDistribution, terminals: &[usize]) -> Self {
        let mut term = vec![None; d.n()];
        for &t in terminals {
            term[t] = Some(t);
        }
        Self {
            g: d.minor.clone(),
            nodes: d.super_nodes.iter().map(|s| s.iter().copied().collect()).collect(),
            cands: d.trees.iter().map(|t| t.iter().copied().collect()).collect(),
            leaders: d.leaders.clone(),
            image: d.edge_image.clone(),
            term,
        }
    }

    /// Position of each original terminal.
    pub fn terminal_positions(&self, terminals: &[usize]) -> Vec<usize> {
        let pos: BTreeMap<usize, usize> = self.term.iter().enumerate().filter_map(|(i, t)| t.map(|t| (t, i))).collect();
        terminals.iter().map(|t| pos[t]).collect()
    }

    pub fn into_distribution(self, host: &WeightedGraph) -> Result<MinorDistribution, MinorError> {
        let mut super_nodes = Vec::with_capacity(self.g.n());
        let mut trees = Vec::with_capacity(self.g.n());
        for v in 0..self.g.n() {
            let nodes: Vec<usize> = self.nodes[v].iter().copied().collect();
            let tree = stitch_tree(host, &nodes, &self.cands[v], self.leaders[v]).ok_or(MinorError::TreeNotSpanning { node: v })?;
            super_nodes.push(nodes);
            trees.push(tree);
        }
        MinorDistribution::new(self.g, host.clone(), super_nodes, self.leaders, trees, self.image)
    }

    /// Rebuilds from merge groups (`label[v]`, `None` drops `v`) and an
    /// explicit edge list `(u, v, w, image, extra candidate)` in old labels.
    fn rebuild(&self, label: &[Option<usize>], edges: Vec<(usize, usize, f64, Option<usize>, Option<usize>)>) -> Self {
        let k = label.iter().flatten().max().map_or(0, |x| x + 1);
        let mut nodes = vec![BTreeSet::new(); k];
        let mut cands = vec![BTreeSet::new(); k];
        let mut leaders = vec![usize::MAX; k];
        let mut term = vec![None; k];
        for v in 0..self.g.n() {
            if let Some(c) = label[v] {
                nodes[c].extend(self.nodes[v].iter().copied());
                cands[c].extend(self.cands[v].iter().copied());
                leaders[c] = leaders[c].min(self.leaders[v]);
                if self.term[v].is_some() {
                    term[c] = self.term[v];
                }
            }
        }
        let mut g = WeightedGraph::new(k);
        let mut image = Vec::new();
        for (u, v, w, img, extra) in edges {
            let (Some(a), Some(b)) = (label[u], label[v]) else { continue };
            if let Some(x) = extra {
                cands[a].insert(x);
            }
            if a == b {
                if let Some(i) = img {
                    cands[a].insert(i);
                }
                continue;
            }
            g.add_edge(a, b, w).expect("positive weight");
            image.push(img);
        }
        Self { g, nodes, cands, leaders, image, term }
    }

    fn edge_list(&self) -> Vec<(usize, usize, f64, Option<usize>, Option<usize>)> {
        self.g.edges().iter().zip(&self.image).map(|(e, &i)| (e.u, e.v, e.weight, i, None)).collect()
    }

    /// Merges parallel edges (keeping the first image), drops non-terminal
    /// leaves and splices non-terminal degree-2 nodes until none remain.
    pub fn collapse(&self) -> Self {
        let n = self.g.n();
        let mut nbrs: Vec<BTreeMap<usize, (f64, Option<usize>)>> = vec![BTreeMap::new(); n];
        for (e, &img) in self.g.edges().iter().zip(&self.image) {
            if e.is_loop() {
                continue;
            }
            nbrs[e.u].entry(e.v).or_insert((0.0, img)).0 += e.weight;
            nbrs[e.v].entry(e.u).or_insert((0.0, img)).0 += e.weight;
        }
        let mut owner: Vec<Option<usize>> = (0..n).map(Some).collect();
        let mut extra: Vec<(usize, Option<usize>)> = Vec::new();
        let mut alive = n;
        loop {
            let mut changed = false;
            for v in 0..n {
                if owner[v] != Some(v) || self.term[v].is_some() || nbrs[v].len() > 2 || alive <= 1 {
                    continue;
                }
                let list: Vec<(usize, (f64, Option<usize>))> = nbrs[v].iter().map(|(&u, &x)| (u, x)).collect();
                for &(u, _) in &list {
                    nbrs[u].remove(&v);
                }
                nbrs[v].clear();
                match list.as_slice() {
                    [] | [_] => owner[v] = None,
                    [(a, (wa, ia)), (b, (wb, ib))] => {
                        owner[v] = Some(*a);
                        extra.push((*a, *ia));
                        let w = wa * wb / (wa + wb);
                        nbrs[*a].entry(*b).or_insert((0.0, *ib)).0 += w;
                        nbrs[*b].entry(*a).or_insert((0.0, *ib)).0 += w;
                    }
                    _ => unreachable!(),
                }
                alive -= 1;
                changed = true;
            }
            if !changed {
                break;
            }
        }
        // Resolve owners: splices point at live nodes or at further owners.
        let resolve = |mut v: usize| -> Option<usize> {
            loop {
                match owner[v] {
                    None => return None,
                    Some(o) if o == v => return Some(v),
                    Some(o) => v = o,
                }
            }
        };
        let roots: Vec<Option<usize>> = (0..n).map(resolve).collect();
        let live: Vec<usize> = (0..n).filter(|&v| owner[v] == Some(v)).collect();
        let mut index = vec![None; n];
        for (i, &v) in live.iter().enumerate() {
            index[v] = Some(i);
        }
        let label: Vec<Option<usize>> = roots.iter().map(|r| r.and_then(|r| index[r])).collect();
        let mut edges = Vec::new();
        for &v in &live {
            for (&u, &(w, img)) in &nbrs[v] {
                if v < u {
                    edges.push((v, u, w, img, None));
                }
            }
        }
        for (a, img) in extra {
            edges.push((a, a, 1.0, img, None));
        }
        self.rebuild(&label, edges)
    }
}

/// Splits every edge whose estimate leaves `[3/16·m, 13/16/m]` (`m` the
/// accuracy margin): high-leverage edges into two parallel halves, low ones
/// into a series pair through a new node sharing the first endpoint's
/// super-node. Returns the new work graph and its leverage estimates.
pub fn split_edges(w: &Work, lev: &[f64], margin: f64) -> (Work, Vec<f64>) {
    let hi = 13.0 / 16.0 / margin;
    let lo = 3.0 / 16.0 * margin;
    let mut out = Work {
        g: WeightedGraph::new(w.g.n()),
        nodes: w.nodes.clone(),
        cands: w.cands.clone(),
        leaders: w.leaders.clone(),
        image: Vec::new(),
        term: w.term.clone(),
    };
    let mut new_lev = Vec::new();
    for (i, e) in w.g.edges().iter().enumerate() {
        if e.is_loop() {
            continue;
        }
        let l = lev[i].clamp(0.0, 1.0);
        if l > hi {
            for _ in 0..2 {
                out.g.add_edge(e.u, e.v, e.weight / 2.0).expect("positive weight");
                out.image.push(w.image[i]);
                new_lev.push(l / 2.0);
            }
        } else if l < lo {
            let m = out.g.add_node();
            out.nodes.push(w.nodes[e.u].clone());
            out.cands.push(w.cands[e.u].clone());
            out.leaders.push(w.leaders[e.u]);
            out.term.push(None);
            out.g.add_edge(e.u, m, 2.0 * e.weight).expect("positive weight");
            out.image.push(None);
            out.g.add_edge(m, e.v, 2.0 * e.weight).expect("positive weight");
            out.image.push(w.image[i]);
            let x = l / (1.0 - l).max(1e-300);
            let half = (1.0 + 2.0 * x) / (2.0 + 2.0 * x);
            new_lev.push(half);
            new_lev.push(half);
        } else {
            out.g.add_edge(e.u, e.v, e.weight).expect("positive weight");
            out.image.push(w.image[i]);
            new_lev.push(l);
        }
    }
    (out, new_lev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub nodes: usize,
    pub edges: usize,
    pub steady: usize,
    pub contracted: usize,
    pub deleted: usize,
    pub conflicts: usize,
    pub solver_calls: usize,
}

#[derive(Debug, Clone)]
pub struct ApproxSc {
    /// Distribution of `H` into the host of the input.
    pub dist: MinorDistribution,
    /// Position of every terminal in `H`, in input order.
    pub terminal_positions: Vec<usize>,
    pub iterations: Vec<IterationReport>,
    pub threshold: f64,
    pub solver_calls: usize,
    pub ledger: CostLedger,
}

impl ApproxSc {
    pub fn h(&self) -> &WeightedGraph {
        &self.dist.minor
    }
}

/// Contracts or deletes steady edges with probability given by their
/// leverage estimates until `H` has at most `edge_scale·|T|·ln²n/ε²`
/// edges. Contractions that would merge two terminals and deletions that
/// would disconnect `H` are skipped and counted as conflicts.
pub fn approx_sc(
    dist: &MinorDistribution,
    terminals: &[usize],
    eps: f64,
    params: &ApproxScParams,
    factory: &dyn SolverFactory,
    service: &AggregationService,
    seed: u64,
) -> Result<ApproxSc, ApproxScError> {
    let g0 = &dist.minor;
    if terminals.is_empty() {
        return Err(ApproxScError::NoTerminals);
    }
    if let Some(&t) = terminals.iter().find(|&&t| t >= g0.n()) {
        return Err(ApproxScError::BadTerminal(t));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ApproxScError::BadEps(eps));
    }
    if !g0.is_connected() {
        return Err(ApproxScError::Disconnected);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6170_7078_7363);
    let mut ledger = CostLedger::default();
    let threshold = params.edge_threshold(g0.n(), terminals.len(), eps);
    let delta = params.delta_scale * eps;
    let budget = params.max_iterations.unwrap_or_else(|| {
        let m = g0.m().max(2) as f64;
        (4.0 * m.ln() / params.steady_rate(g0.m(), delta)).ceil() as usize
    });
    let mut work = Work::new(dist, terminals);
    let mut iterations = Vec::new();
    let mut solver_calls = 0;
    let margin = 1.0 + params.lev_delta;

    let mut i = 0;
    while (work.g.proper_edges().count() as f64) > threshold {
        if i >= budget {
            return Err(ApproxScError::LoopBudget(budget));
        }
        i += 1;
        let mut calls = 0;
        let collapsed = work.collapse();
        let lev = approx_leverage_scores(&collapsed.g, params.lev_delta, params.c_lev, factory, &mut rng);
        calls += lev.solver_calls;
        let (split, lev) = split_edges(&collapsed, &lev.lev, margin);
        let tpos = split.terminal_positions(terminals);
        let is_t: BTreeSet<usize> = tpos.iter().copied().collect();
        if split.g.edges().iter().all(|e| is_t.contains(&e.u) && is_t.contains(&e.v)) {
            ledger.note("approxsc: only terminal-terminal edges remain");
            work = split;
            break;
        }
        let steady = find_steady(&split.g, &tpos, delta, params, factory, &mut rng);
        calls += steady.solver_calls;
        if let Ok(d) = split.clone().into_distribution(&dist.host) {
            let q = aggregation_cost(service, Some(&d))?;
            ledger.charge("approxsc/estimators", 3, q);
            ledger.charge("approxsc/contract", 1, q);
        }
        ledger.solver_calls += calls as u64;
        solver_calls += calls;

        let mut contract = Vec::new();
        let mut delete = BTreeSet::new();
        for &e in &steady.z {
            if rng.random::<f64>() < lev[e] {
                contract.push(e);
            } else {
                delete.insert(e);
            }
        }
        // Contractions must not merge two terminals.
        let n = split.g.n();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut has_t: Vec<bool> = split.term.iter().map(Option::is_some).collect();
        let mut conflicts = 0;
        let mut contracted = BTreeSet::new();
        for e in contract {
            let ed = split.g.edge(e);
            let (a, b) = (find(&mut parent, ed.u), find(&mut parent, ed.v));
            if a != b && has_t[a] && has_t[b] {
                conflicts += 1;
                continue;
            }
            if a != b {
                parent[a] = b;
                has_t[b] |= has_t[a];
            }
            contracted.insert(e);
        }
        // Deletions must keep the graph connected.
        let mut removed = BTreeSet::new();
        for &e in &delete {
            removed.insert(e);
            let rest = WeightedGraph::from_edges(
                n,
                split.g.edges().iter().enumerate().filter(|(i, _)| !removed.contains(i)).map(|(_, e)| (e.u, e.v, e.weight)),
            )
            .expect("valid edges");
            if !rest.is_connected() {
                removed.remove(&e);
                conflicts += 1;
            }
        }
        let label: Vec<Option<usize>> = {
            let roots: Vec<usize> = (0..n).map(|v| find(&mut parent, v)).collect();
            let mut idx = BTreeMap::new();
            for &r in &roots {
                let next = idx.len();
                idx.entry(r).or_insert(next);
            }
            roots.iter().map(|r| Some(idx[r])).collect()
        };
        let edges = split
            .edge_list()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(i, mut x)| {
                if contracted.contains(&i) {
                    x.4 = x.3;
                }
                x
            })
            .collect();
        work = split.rebuild(&label, edges);
        iterations.push(IterationReport {
            nodes: work.g.n(),
            edges: work.g.m(),
            steady: steady.z.len(),
            contracted: contracted.len(),
            deleted: removed.len(),
            conflicts,
            solver_calls: calls,
        });
    }
    if !iterations.is_empty() {
        work = work.collapse();
    }
    let terminal_positions = work.terminal_positions(terminals);
    let dist = work.into_distribution(&dist.host)?;
    Ok(ApproxSc { dist, terminal_positions, iterations, threshold, solver_calls, ledger })
}
