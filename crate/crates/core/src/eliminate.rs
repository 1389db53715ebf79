//! Parallel approximate Gaussian elimination: α-DD subsets, truncated
//! Jacobi inverses, random-walk Schur complements with congestion capping,
//! and spectral sparsification between rounds.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggError, AggModel, AggregationService};
use crate::cost::{aggregation_cost, CostLedger};
use crate::graph::WeightedGraph;
use crate::linalg::{EliminationOps, JacobiBlock, Step};
use crate::minors::{compose_minors, MinorDistribution, MinorError};
use crate::oracle::leverage_scores_exact;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElimError {
    #[error("α must be at least 4 for the Jacobi operator, got {0}")]
    AlphaTooSmall(f64),
    #[error("no α-DD subset of size {need} after {tries} tries")]
    RetriesExhausted { need: usize, tries: usize },
    #[error("{node} is not α-DD within the subset (slack {slack})")]
    NotDiagonallyDominant { node: usize, slack: f64 },
    #[error("no terminals to walk to")]
    NoTerminals,
    #[error("walk from {start} exceeded its restart budget")]
    WalkBudget { start: usize },
    #[error("round {round} produced a disconnected graph after {tries} tries")]
    Disconnected { round: usize, tries: usize },
    #[error(transparent)]
    Minor(#[from] MinorError),
    #[error(transparent)]
    Aggregation(#[from] AggError),
}

/// Merged neighbour lists of a graph: `(neighbour, weight, edge id)`.
struct Adj {
    nbrs: Vec<Vec<(usize, f64, usize)>>,
    deg: Vec<f64>,
    cum: Vec<Vec<f64>>,
}

impl Adj {
    fn new(g: &WeightedGraph) -> Self {
        let mut nbrs = vec![Vec::new(); g.n()];
        for (i, e) in g.proper_edges() {
            nbrs[e.u].push((e.v, e.weight, i));
            nbrs[e.v].push((e.u, e.weight, i));
        }
        let deg = nbrs.iter().map(|l| l.iter().map(|x| x.1).sum()).collect();
        let cum = nbrs
            .iter()
            .map(|l| {
                let mut acc = 0.0;
                l.iter()
                    .map(|x| {
                        acc += x.1;
                        acc
                    })
                    .collect()
            })
            .collect();
        Self { nbrs, deg, cum }
    }

    fn step<R: Rng>(&self, x: usize, rng: &mut R) -> (usize, f64, usize) {
        let r = rng.random::<f64>() * self.deg[x];
        let i = self.cum[x].partition_point(|&c| c <= r).min(self.nbrs[x].len() - 1);
        self.nbrs[x][i]
    }
}

/// An α-diagonally-dominant index set with its row certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DDSubset {
    pub f: Vec<usize>,
    pub alpha: f64,
    /// `L_ii − (1+α)·Σ_{j∈F, j≠i} |L_ij|` per member.
    pub slack: Vec<f64>,
    pub tries: usize,
}

impl DDSubset {
    /// Re-checks every certificate against `g`.
    pub fn validate(&self, g: &WeightedGraph) -> Result<(), ElimError> {
        let (slack, _) = dd_slack(g, &self.f, self.alpha);
        for (&v, &s) in self.f.iter().zip(&slack) {
            if s < -1e-12 {
                return Err(ElimError::NotDiagonallyDominant { node: v, slack: s });
            }
        }
        Ok(())
    }
}

fn dd_slack(g: &WeightedGraph, f: &[usize], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let mut inside = vec![false; g.n()];
    for &v in f {
        inside[v] = true;
    }
    let deg = g.weighted_degrees();
    let mut within = vec![0.0; g.n()];
    for (_, e) in g.proper_edges() {
        if inside[e.u] && inside[e.v] {
            within[e.u] += e.weight;
            within[e.v] += e.weight;
        }
    }
    let slack = f.iter().map(|&v| deg[v] - (1.0 + alpha) * within[v]).collect();
    (slack, deg)
}

/// Smallest size the subset must reach, `⌈n / (8(1+α))⌉`.
pub fn dd_size_bound(n: usize, alpha: f64) -> usize {
    ((n as f64 / (8.0 * (1.0 + alpha))).ceil() as usize).max(1)
}

/// Samples nodes with probability `1/(4(1+α))` and drops those violating
/// dominance within the sample; retries up to `retries` times.
pub fn find_dd_subset<R: Rng>(
    g: &WeightedGraph,
    alpha: f64,
    retries: usize,
    rng: &mut R,
) -> Result<DDSubset, ElimError> {
    let n = g.n();
    let need = dd_size_bound(n, alpha);
    let p = 1.0 / (4.0 * (1.0 + alpha));
    for tries in 1..=retries.max(1) {
        let sample: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < p).collect();
        let (slack, _) = dd_slack(g, &sample, alpha);
        let f: Vec<usize> = sample.iter().zip(&slack).filter(|(_, &s)| s >= 0.0).map(|(&v, _)| v).collect();
        if f.len() >= need && f.len() < n {
            let (slack, _) = dd_slack(g, &f, alpha);
            return Ok(DDSubset { f, alpha, slack, tries });
        }
    }
    Err(ElimError::RetriesExhausted { need, tries: retries.max(1) })
}

/// Number of correction terms for accuracy `eps`: `⌈c_j·ln(1/ε)⌉`, odd so
/// that the truncated series under-approximates `L_FF⁻¹`.
pub fn jacobi_terms(eps: f64, c_j: f64) -> usize {
    let t = (c_j * (1.0 / eps).ln()).ceil().max(1.0) as usize;
    if t.is_multiple_of(2) {
        t + 1
    } else {
        t
    }
}

/// Jacobi block of `F` in `g`. Without edges inside `F` the block is exact
/// with no correction terms.
pub fn jacobi_block(g: &WeightedGraph, f: &[usize], alpha: f64, eps: f64, c_j: f64) -> Result<JacobiBlock, ElimError> {
    if alpha < 4.0 {
        return Err(ElimError::AlphaTooSmall(alpha));
    }
    let mut pos = vec![usize::MAX; g.n()];
    for (i, &v) in f.iter().enumerate() {
        pos[v] = i;
    }
    let deg = g.weighted_degrees();
    let mut inner = Vec::new();
    let mut cross = Vec::new();
    for (_, e) in g.proper_edges() {
        match (pos[e.u], pos[e.v]) {
            (usize::MAX, usize::MAX) => {}
            (i, usize::MAX) => cross.push((i, e.v, e.weight)),
            (usize::MAX, j) => cross.push((j, e.u, e.weight)),
            (i, j) => inner.push((i, j, e.weight)),
        }
    }
    let terms = if inner.is_empty() { 0 } else { jacobi_terms(eps, c_j) };
    Ok(JacobiBlock { f: f.to_vec(), diag: f.iter().map(|&v| deg[v]).collect(), inner, cross, terms })
}

/// One combined walk generated by an edge: its two terminal ends and the
/// total resistance travelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkRecord {
    pub edge: usize,
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    pub len: usize,
    /// Repetitions this record stands for (`μ` for edges between
    /// terminals, whose walks are all empty).
    pub copies: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkBundle {
    pub terminals: Vec<usize>,
    pub mu: usize,
    /// Individual walks, kept only while `records_kept` holds.
    pub records: Vec<WalkRecord>,
    pub records_kept: bool,
    /// Summed `copies/(μ·R)` per unordered terminal pair, with the first
    /// generating edge.
    pub contributions: BTreeMap<(usize, usize), (f64, usize)>,
    /// Occurrences of each node strictly inside some walk.
    pub congestion: Vec<u64>,
    pub restarts: usize,
    pub longest: usize,
    /// Edges walked by the half-walks ending at each terminal.
    pub walked: BTreeMap<usize, BTreeSet<usize>>,
}

/// Walks beyond this many are aggregated without individual records.
pub const RECORD_LIMIT: usize = 200_000;

impl WalkBundle {
    pub fn max_congestion(&self) -> u64 {
        self.congestion.iter().copied().max().unwrap_or(0)
    }
}

/// Simulates `μ` walk pairs per edge until both halves hit `terminals`.
/// Walks longer than `cap_len` are restarted. Walked edges are collected
/// per terminal only when `track` is set.
pub fn simulate_hitting_walks<R: Rng>(
    g: &WeightedGraph,
    terminals: &[usize],
    mu: usize,
    cap_len: usize,
    track: bool,
    rng: &mut R,
) -> Result<WalkBundle, ElimError> {
    if terminals.is_empty() {
        return Err(ElimError::NoTerminals);
    }
    let adj = Adj::new(g);
    let mut is_t = vec![false; g.n()];
    for &t in terminals {
        is_t[t] = true;
    }
    let mut congestion = vec![0u64; g.n()];
    let mut restarts = 0;
    let mut longest = 0;
    let mut walked: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut records = Vec::new();
    let records_kept = mu.saturating_mul(g.m()) <= RECORD_LIMIT;
    let mut contributions: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    let budget = 1000;

    // One half-walk from `start`; the trail is left in `trail`.
    let half = |start: usize, rng: &mut R, trail: &mut Vec<usize>, restarts: &mut usize| -> Result<(usize, f64), ElimError> {
        let mut tries = 0;
        loop {
            let (mut x, mut r) = (start, 0.0);
            trail.clear();
            while !is_t[x] && trail.len() <= cap_len {
                let (y, w, e) = adj.step(x, rng);
                r += 1.0 / w;
                trail.push(e);
                x = y;
            }
            if is_t[x] {
                return Ok((x, r));
            }
            tries += 1;
            *restarts += 1;
            if tries > budget {
                return Err(ElimError::WalkBudget { start });
            }
        }
    };
    let charge = |start: usize, trail: &[usize], congestion: &mut [u64]| {
        let mut y = start;
        for &e in trail {
            congestion[y] += 1;
            y = g.edge(e).other(y);
        }
    };

    let (mut ta, mut tb) = (Vec::new(), Vec::new());
    // Per-edge accumulation before merging into `contributions`.
    let mut local: Vec<((usize, usize), f64)> = Vec::new();
    for (i, e) in g.proper_edges() {
        if is_t[e.u] && is_t[e.v] {
            contributions.entry((e.u.min(e.v), e.u.max(e.v))).or_insert((0.0, i)).0 += 1.0 / e.resistance();
            if records_kept {
                records.push(WalkRecord { edge: i, from: e.u, to: e.v, resistance: e.resistance(), len: 1, copies: mu });
            }
            continue;
        }
        local.clear();
        for _ in 0..mu {
            let (xa, ra) = half(e.u, rng, &mut ta, &mut restarts)?;
            let (xb, rb) = half(e.v, rng, &mut tb, &mut restarts)?;
            charge(e.u, &ta, &mut congestion);
            charge(e.v, &tb, &mut congestion);
            let len = ta.len() + tb.len() + 1;
            longest = longest.max(len);
            if track {
                walked.entry(xa).or_default().extend(ta.iter().copied());
                walked.entry(xb).or_default().extend(tb.iter().copied());
            }
            let resistance = ra + rb + e.resistance();
            if xa != xb {
                let key = (xa.min(xb), xa.max(xb));
                let c = 1.0 / (mu as f64 * resistance);
                match local.iter_mut().find(|(k, _)| *k == key) {
                    Some(slot) => slot.1 += c,
                    None => local.push((key, c)),
                }
            }
            if records_kept {
                records.push(WalkRecord { edge: i, from: xa, to: xb, resistance, len, copies: 1 });
            }
        }
        for &(key, c) in &local {
            contributions.entry(key).or_insert((0.0, i)).0 += c;
        }
    }
    let mut terminals = terminals.to_vec();
    terminals.sort_unstable();
    Ok(WalkBundle { terminals, mu, records, records_kept, contributions, congestion, restarts, longest, walked })
}

/// Assembles the walk estimate of `SC(G, T)` on the terminals, node `i`
/// standing for `bundle.terminals[i]`. Parallel contributions are merged
/// and walks returning to their start are dropped. The second component
/// is the generating edge of every output edge.
pub fn walk_schur_laplacian(bundle: &WalkBundle) -> (WeightedGraph, Vec<usize>) {
    let index: BTreeMap<usize, usize> = bundle.terminals.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let mut h = WeightedGraph::new(bundle.terminals.len());
    let mut image = Vec::with_capacity(bundle.contributions.len());
    for (&(a, b), &(w, e)) in &bundle.contributions {
        h.add_edge(index[&a], index[&b], w).expect("positive weight");
        image.push(e);
    }
    (h, image)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SparsifyEngine {
    /// Effective-resistance sampling through the dense oracle.
    EffectiveResistance,
    /// Bundles of Baswana–Sen spanners with quarter sampling of the rest.
    #[default]
    BaswanaSen,
    /// Keep every edge.
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sparsified {
    pub g: WeightedGraph,
    /// Input edge id of every output edge.
    pub kept: Vec<usize>,
    pub spanners: usize,
    pub iterations: usize,
}

/// Baswana–Sen `(2k−1)`-spanner on resistance lengths over the edges with
/// `live` set; returns edge ids.
pub fn baswana_sen_spanner<R: Rng>(g: &WeightedGraph, live: &[bool], k: usize, rng: &mut R) -> Vec<usize> {
    let n = g.n();
    let k = k.max(1);
    let p = (n.max(2) as f64).powf(-1.0 / k as f64);
    let mut cluster: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mut alive: Vec<bool> = live.to_vec();
    let mut spanner = BTreeSet::new();
    let length = |e: usize| g.edge(e).resistance();
    let mut incident = vec![Vec::new(); n];
    for (i, e) in g.proper_edges() {
        incident[e.u].push(i);
        incident[e.v].push(i);
    }
    // Lightest live edge from v to each neighbouring cluster.
    let lightest = |v: usize, cluster: &[Option<usize>], alive: &[bool]| {
        let mut best: BTreeMap<usize, usize> = BTreeMap::new();
        for &e in &incident[v] {
            if !alive[e] {
                continue;
            }
            let u = g.edge(e).other(v);
            if let Some(c) = cluster[u] {
                if cluster[v] == Some(c) {
                    continue;
                }
                let slot = best.entry(c).or_insert(e);
                if length(e) < length(*slot) || (length(e) == length(*slot) && e < *slot) {
                    *slot = e;
                }
            }
        }
        best
    };
    for _ in 1..k {
        let centers: BTreeSet<usize> =
            cluster.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().filter(|_| rng.random::<f64>() < p).collect();
        let mut next = cluster.clone();
        for v in 0..n {
            let Some(c) = cluster[v] else { continue };
            if centers.contains(&c) {
                continue;
            }
            let best = lightest(v, &cluster, &alive);
            let join = best
                .iter()
                .filter(|(c, _)| centers.contains(c))
                .min_by(|a, b| length(*a.1).total_cmp(&length(*b.1)).then(a.1.cmp(b.1)))
                .map(|(&c, &e)| (c, e));
            match join {
                None => {
                    spanner.extend(best.values().copied());
                    for &e in &incident[v] {
                        alive[e] = false;
                    }
                    next[v] = None;
                }
                Some((c, e_star)) => {
                    spanner.insert(e_star);
                    let bound = length(e_star);
                    for (&d, &e) in &best {
                        if d != c && length(e) < bound {
                            spanner.insert(e);
                            for &f in &incident[v] {
                                let u = g.edge(f).other(v);
                                if cluster[u] == Some(d) {
                                    alive[f] = false;
                                }
                            }
                        }
                    }
                    for &f in &incident[v] {
                        let u = g.edge(f).other(v);
                        if cluster[u] == Some(c) {
                            alive[f] = false;
                        }
                    }
                    next[v] = Some(c);
                }
            }
        }
        cluster = next;
        for (i, e) in g.proper_edges() {
            if cluster[e.u].is_some() && cluster[e.u] == cluster[e.v] {
                alive[i] = false;
            }
        }
    }
    for v in 0..n {
        if cluster[v].is_some() {
            spanner.extend(lightest(v, &cluster, &alive).into_values());
        }
    }
    spanner.into_iter().collect()
}

/// Spectral sparsifier of a connected graph with the given engine.
pub fn spectral_sparsify<R: Rng>(
    g: &WeightedGraph,
    eps: f64,
    engine: SparsifyEngine,
    c_sparsify: f64,
    rng: &mut R,
) -> Sparsified {
    let ln_n = (g.n().max(2) as f64).ln();
    match engine {
        SparsifyEngine::Off => Sparsified { g: g.clone(), kept: (0..g.m()).collect(), spanners: 0, iterations: 0 },
        SparsifyEngine::EffectiveResistance => {
            let lev = leverage_scores_exact(g);
            let mut out = WeightedGraph::new(g.n());
            let mut kept = Vec::new();
            for (i, e) in g.proper_edges() {
                let p = (c_sparsify * lev[i] * ln_n / (eps * eps)).min(1.0);
                if p >= 1.0 || rng.random::<f64>() < p {
                    out.add_edge(e.u, e.v, e.weight / p).expect("positive weight");
                    kept.push(i);
                }
            }
            Sparsified { g: out, kept, spanners: 0, iterations: 1 }
        }
        SparsifyEngine::BaswanaSen => {
            let t = (c_sparsify * ln_n / (eps * eps)).ceil() as usize;
            let k = ln_n.ceil() as usize;
            let mut weights: Vec<f64> = g.edges().iter().map(|e| e.weight).collect();
            let mut present: Vec<bool> = g.edges().iter().map(|e| !e.is_loop()).collect();
            let rounds = ((g.m().max(1) as f64 / g.n().max(1) as f64).log2().ceil() as usize).max(1);
            let (mut spanners, mut iterations) = (0, 0);
            for _ in 0..rounds {
                iterations += 1;
                let mut rest = present.clone();
                let mut bundle = vec![false; g.m()];
                for _ in 0..t {
                    if !rest.iter().any(|&x| x) {
                        break;
                    }
                    spanners += 1;
                    for e in baswana_sen_spanner(g, &rest, k, rng) {
                        bundle[e] = true;
                        rest[e] = false;
                    }
                }
                if !rest.iter().any(|&x| x) {
                    break;
                }
                for e in 0..g.m() {
                    if rest[e] {
                        if rng.random::<f64>() < 0.25 {
                            weights[e] *= 4.0;
                        } else {
                            present[e] = false;
                        }
                    }
                }
            }
            let mut out = WeightedGraph::new(g.n());
            let mut kept = Vec::new();
            for e in 0..g.m() {
                if present[e] {
                    let ed = g.edge(e);
                    out.add_edge(ed.u, ed.v, weights[e]).expect("positive weight");
                    kept.push(e);
                }
            }
            Sparsified { g: out, kept, spanners, iterations }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EliminateParams {
    pub alpha: f64,
    /// Multiplier on the congestion threshold `1000·C·α⁻¹·ln⁸n/ε⁴`.
    pub gamma_scale: f64,
    pub gamma_c: f64,
    /// Multiplier on `μ = ⌈4 ln n/ε²⌉`.
    pub mu_boost: f64,
    /// Walks are capped at `walk_cap·α⁻¹·ln n` steps.
    pub walk_cap: f64,
    pub c_j: f64,
    pub engine: SparsifyEngine,
    pub c_sparsify: f64,
    pub dd_retries: usize,
}

impl Default for EliminateParams {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            gamma_scale: 1.0,
            gamma_c: 1.0,
            mu_boost: 1.0,
            walk_cap: 8.0,
            c_j: 2.0,
            engine: SparsifyEngine::BaswanaSen,
            c_sparsify: 1.0,
            dd_retries: 10,
        }
    }
}

impl EliminateParams {
    pub fn gamma(&self, n: usize, eps: f64) -> f64 {
        let ln_n = (n.max(2) as f64).ln();
        self.gamma_scale * 1000.0 * self.gamma_c / self.alpha * ln_n.powi(8) / eps.powi(4)
    }

    pub fn mu(&self, n: usize, eps: f64) -> usize {
        let ln_n = (n.max(2) as f64).ln();
        ((4.0 * ln_n / (eps * eps)).ceil() * self.mu_boost).ceil().max(1.0) as usize
    }

    pub fn cap_len(&self, n: usize) -> usize {
        let ln_n = (n.max(2) as f64).ln();
        (self.walk_cap / self.alpha * ln_n).ceil().max(1.0) as usize
    }
}

/// Expected walk occurrences per node, propagated from the walk starts for
/// `steps` steps.
pub fn estimate_congestion(g: &WeightedGraph, terminals: &[usize], mu: usize, steps: usize) -> Vec<f64> {
    let adj = Adj::new(g);
    let mut is_t = vec![false; g.n()];
    for &t in terminals {
        is_t[t] = true;
    }
    let mut mass = vec![0.0; g.n()];
    for (_, e) in g.proper_edges() {
        if !(is_t[e.u] && is_t[e.v]) {
            for x in [e.u, e.v] {
                if !is_t[x] {
                    mass[x] += mu as f64;
                }
            }
        }
    }
    let mut visits = mass.clone();
    for _ in 0..steps {
        let mut next = vec![0.0; g.n()];
        for x in 0..g.n() {
            if is_t[x] || mass[x] == 0.0 {
                continue;
            }
            for &(y, w, _) in &adj.nbrs[x] {
                if !is_t[y] {
                    next[y] += mass[x] * w / adj.deg[x];
                }
            }
        }
        for (v, m) in visits.iter_mut().zip(&next) {
            *v += m;
        }
        mass = next;
    }
    visits
}

#[derive(Debug, Clone)]
pub struct RandWalkSchur {
    /// Estimate of `SC(G, T̂)`, node `i` standing for `t_hat[i]`.
    pub h: WeightedGraph,
    /// Generating edge of `G` behind each edge of `h`.
    pub image: Vec<usize>,
    pub t_hat: Vec<usize>,
    /// Members of `F` promoted to terminals for congestion.
    pub promoted: Vec<usize>,
    pub bundle: WalkBundle,
}

/// Walk-based Schur complement onto `V \ F`, promoting nodes whose
/// estimated congestion exceeds `gamma`. `gamma = 0` keeps every node.
pub fn randwalk_schur<R: Rng>(
    g: &WeightedGraph,
    f: &[usize],
    eps: f64,
    gamma: f64,
    params: &EliminateParams,
    track: bool,
    rng: &mut R,
) -> Result<RandWalkSchur, ElimError> {
    let n = g.n();
    let in_f: BTreeSet<usize> = f.iter().copied().collect();
    let base: Vec<usize> = (0..n).filter(|v| !in_f.contains(v)).collect();
    let mu = params.mu(n, eps);
    let promoted: Vec<usize> = if gamma <= 0.0 {
        f.to_vec()
    } else {
        let steps = params.cap_len(n);
        let est = estimate_congestion(g, &base, mu, steps);
        f.iter().copied().filter(|&v| est[v] > gamma).collect()
    };
    let mut t_hat: Vec<usize> = base.into_iter().chain(promoted.iter().copied()).collect();
    t_hat.sort_unstable();
    let bundle = simulate_hitting_walks(g, &t_hat, mu, params.cap_len(n), track, rng)?;
    let (h, image) = walk_schur_laplacian(&bundle);
    Ok(RandWalkSchur { h, image, t_hat, promoted, bundle })
}

/// Distribution of the walk graph into `g`: each terminal owns the nodes
/// of the half-walks ending at it.
pub fn walk_minor(g: &WeightedGraph, rw: &RandWalkSchur) -> Result<MinorDistribution, MinorError> {
    let mut super_nodes = Vec::with_capacity(rw.t_hat.len());
    let mut trees = Vec::with_capacity(rw.t_hat.len());
    for &t in &rw.t_hat {
        let edges = rw.bundle.walked.get(&t).cloned().unwrap_or_default();
        let mut nodes = BTreeSet::from([t]);
        for &e in &edges {
            nodes.insert(g.edge(e).u);
            nodes.insert(g.edge(e).v);
        }
        let mut adj: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for &e in &edges {
            let ed = g.edge(e);
            adj.entry(ed.u).or_default().push((ed.v, e));
            adj.entry(ed.v).or_default().push((ed.u, e));
        }
        let mut seen = BTreeSet::from([t]);
        let mut stack = vec![t];
        let mut tree = Vec::new();
        while let Some(x) = stack.pop() {
            for &(y, e) in adj.get(&x).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(y) {
                    tree.push(e);
                    stack.push(y);
                }
            }
        }
        super_nodes.push(nodes.into_iter().collect());
        trees.push(tree);
    }
    let image = rw.image.iter().map(|&e| Some(e)).collect();
    MinorDistribution::new(rw.h.clone(), g.clone(), super_nodes, rw.t_hat.clone(), trees, image)
}

/// Same distribution with parallel edges merged and self-loops dropped;
/// merged edges keep the image of their first member.
pub fn merged_distribution(d: &MinorDistribution) -> Result<MinorDistribution, MinorError> {
    let merged = d.minor.merged();
    let mut first: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, e) in d.minor.proper_edges() {
        first.entry((e.u.min(e.v), e.u.max(e.v))).or_insert(i);
    }
    let image = merged.edges().iter().map(|e| d.edge_image[first[&(e.u, e.v)]]).collect();
    MinorDistribution::new(merged, d.host.clone(), d.super_nodes.clone(), d.leaders.clone(), d.trees.clone(), image)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub active: usize,
    pub f: usize,
    pub promoted: usize,
    pub terminals: usize,
    pub walk_edges: usize,
    pub sparsified_edges: usize,
    pub jacobi_terms: usize,
    pub mu: usize,
    pub restarts: usize,
    pub max_congestion: u64,
    pub gamma: f64,
    pub dd_tries: usize,
    pub retries: usize,
}

#[derive(Debug, Clone)]
pub struct Elimination {
    /// Operators over the node space of the input minor.
    pub ops: EliminationOps,
    /// Approximate Schur complement onto `ops.terminals`, node `i`
    /// standing for `ops.terminals[i]`.
    pub schur: WeightedGraph,
    /// Distribution of `schur` into the host, tracked for distributed models.
    pub dist: Option<MinorDistribution>,
    pub rounds: Vec<RoundReport>,
    pub ledger: CostLedger,
    /// Rounds charged per application of the operators.
    pub apply_rounds: u64,
    /// Why elimination stopped before `d` rounds, if it did.
    pub stopped: Option<String>,
}

impl Elimination {
    pub fn terminals(&self) -> &[usize] {
        &self.ops.terminals
    }
}

/// `d` rounds of elimination on the minor of `dist` with overall accuracy
/// `eps`, split evenly across the Jacobi, walk and sparsification steps.
pub fn eliminate(
    dist: &MinorDistribution,
    d: usize,
    eps: f64,
    params: &EliminateParams,
    service: &AggregationService,
    seed: u64,
) -> Result<Elimination, ElimError> {
    if params.alpha < 4.0 {
        return Err(ElimError::AlphaTooSmall(params.alpha));
    }
    let n0 = dist.minor.n();
    let part = (1.0 + eps).ln() / 3.0;
    let track = service.model() != AggModel::Sequential;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x656c_696d);
    let mut ledger = CostLedger::default();
    let mut g = dist.minor.merged();
    let mut ids: Vec<usize> = (0..n0).collect();
    let mut cur = if track { Some(merged_distribution(dist)?) } else { None };
    let mut ops = EliminationOps::identity(n0);
    let mut rounds = Vec::new();
    let mut apply_rounds = 0u64;
    let mut stopped = None;

    for round in 0..d {
        if g.n() <= 1 {
            stopped = Some(format!("round {round}: one node left"));
            break;
        }
        let q = aggregation_cost(service, cur.as_ref())?;
        let dd = match find_dd_subset(&g, params.alpha, params.dd_retries, &mut rng) {
            Ok(dd) => dd,
            Err(e) => {
                stopped = Some(format!("round {round}: {e}"));
                ledger.note(format!("eliminate: stopped at round {round}: {e}"));
                break;
            }
        };
        ledger.charge("eliminate/dd", 2 * dd.tries as u64, q);
        let gamma = params.gamma(g.n(), part);

        let mut attempt = 0;
        let (rw, sp) = loop {
            let rw = randwalk_schur(&g, &dd.f, part, gamma, params, track, &mut rng)?;
            let sp = spectral_sparsify(&rw.h, part, params.engine, params.c_sparsify, &mut rng);
            if sp.g.is_connected() {
                break (rw, sp);
            }
            attempt += 1;
            if attempt >= 3 {
                return Err(ElimError::Disconnected { round, tries: attempt });
            }
        };
        let promoted: BTreeSet<usize> = rw.promoted.iter().copied().collect();
        let f_prime: Vec<usize> = dd.f.iter().copied().filter(|v| !promoted.contains(v)).collect();

        let mut block = jacobi_block(&g, &f_prime, params.alpha, part, params.c_j)?;
        let terms = block.terms;
        block.f = block.f.iter().map(|&v| ids[v]).collect();
        block.cross = block.cross.iter().map(|&(i, c, w)| (i, ids[c], w)).collect();
        let t_ids: Vec<usize> = rw.t_hat.iter().map(|&t| ids[t]).collect();
        ops = ops.then(EliminationOps { n: n0, steps: vec![Step::Jacobi(block)], terminals: t_ids.clone() });

        let steps = params.cap_len(g.n()) as u64;
        ledger.charge("eliminate/congestion", steps, q);
        ledger.charge("eliminate/walks", rw.bundle.longest as u64 + 1, q);
        ledger.add_rounds("eliminate/walks", rw.bundle.max_congestion());
        let k_bs = (g.n().max(2) as f64).ln().ceil() as u64;
        ledger.charge("eliminate/sparsify", sp.spanners as u64 * k_bs + sp.iterations as u64, q);
        apply_rounds += 2 * ((terms as u64 + 1) * (2 * q.rounds as u64 + 1) + 1);

        rounds.push(RoundReport {
            active: g.n(),
            f: dd.f.len(),
            promoted: rw.promoted.len(),
            terminals: rw.t_hat.len(),
            walk_edges: rw.h.m(),
            sparsified_edges: sp.g.m(),
            jacobi_terms: terms,
            mu: rw.bundle.mu,
            restarts: rw.bundle.restarts,
            max_congestion: rw.bundle.max_congestion(),
            gamma,
            dd_tries: dd.tries,
            retries: attempt,
        });

        if let Some(prev) = cur.take() {
            let wm = walk_minor(&g, &rw)?;
            let sparse = MinorDistribution::new(
                sp.g.clone(),
                g.clone(),
                wm.super_nodes,
                wm.leaders,
                wm.trees,
                sp.kept.iter().map(|&e| wm.edge_image[e]).collect(),
            )?;
            cur = Some(compose_minors(&sparse, &prev)?);
        }
        ids = t_ids;
        g = sp.g;
    }
    Ok(Elimination { ops, schur: g, dist: cur, rounds, ledger, apply_rounds, stopped })
}
