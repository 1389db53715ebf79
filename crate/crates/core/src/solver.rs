//! The end-to-end solver: spectral sparsification, ultra-sparsification,
//! a Schur complement chain on the reduced graph, and preconditioned
//! Chebyshev iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggError, AggregationService};
use crate::approxsc::{approx_sc, ApproxScError, ApproxScParams};
use crate::cost::{aggregation_cost, CostLedger};
use crate::eliminate::{eliminate, spectral_sparsify, ElimError, EliminateParams};
use crate::graph::{hop_diameter, laplacian, Partition, WeightedGraph};
use crate::linalg::{dot, lap_apply, project_mean_zero, DenseFactory, DenseLaplacianSolver, EliminationOps, LaplacianSolver, SolverFactory};
use crate::minors::{identity_minor, MinorDistribution};
use crate::oracle::{generalized_eigen_range, laplacian_pinv, laplacian_schur, OracleError};
use crate::ultrasparsify::{ultrasparsify, UltraError, UltraParams, UltraSparsifier};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("input: graph is disconnected")]
    Disconnected,
    #[error("input: right-hand side has length {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("input: eps must be positive, got {0}")]
    BadEps(f64),
    #[error("ultrasparsify: {0}")]
    Ultra(#[from] UltraError),
    #[error("eliminate (link {link}): {source}")]
    Eliminate { link: usize, source: ElimError },
    #[error("approxsc (link {link}): {source}")]
    ApproxSc { link: usize, source: ApproxScError },
    #[error("aggregation: {0}")]
    Aggregation(#[from] AggError),
    #[error("spectrum: {0}")]
    Spectrum(#[from] OracleError),
    #[error("chebyshev: no convergence after {iterations} iterations (error bound {bound:.3e}, target {target:.3e})")]
    NoConvergence { iterations: usize, bound: f64, target: f64 },
}

impl SolverError {
    /// Pipeline stage the error comes from.
    pub fn stage(&self) -> &'static str {
        match self {
            SolverError::Disconnected | SolverError::Dimension { .. } | SolverError::BadEps(_) => "input",
            SolverError::Ultra(_) => "ultrasparsify",
            SolverError::Eliminate { .. } => "eliminate",
            SolverError::ApproxSc { .. } => "approxsc",
            SolverError::Aggregation(_) => "aggregation",
            SolverError::Spectrum(_) => "spectrum",
            SolverError::NoConvergence { .. } => "chebyshev",
        }
    }
}

/// What a link falls back to when ApproxSC does not shrink the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Close the chain with the exact Schur complement onto the terminals.
    #[default]
    ExactBase,
    /// Continue the chain on Eliminate's own Schur complement estimate.
    EliminateSchur,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub k: f64,
    pub d: usize,
    /// Chain accuracy; `None` uses `min(0.05, 1/(c_eps·⌈ln n⌉))`.
    pub chain_eps: Option<f64>,
    pub c_eps: f64,
    pub spec_spars: bool,
    pub ultra: UltraParams,
    pub elim: EliminateParams,
    pub approx: ApproxScParams,
    pub fallback: Fallback,
    pub max_links: usize,
    /// Slack on the `[1, k]` sandwich when the spectrum is not measured.
    pub kappa_slack: f64,
    /// Largest `n` whose preconditioned spectrum is measured densely.
    pub measure_max_n: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            k: 8.0,
            d: 2,
            chain_eps: None,
            c_eps: 1.0,
            spec_spars: true,
            ultra: UltraParams::default(),
            elim: EliminateParams::default(),
            approx: ApproxScParams::default(),
            fallback: Fallback::ExactBase,
            max_links: 64,
            kappa_slack: 2.0,
            measure_max_n: 300,
        }
    }
}

impl SolverParams {
    pub fn chain_eps(&self, n: usize) -> f64 {
        self.chain_eps.unwrap_or_else(|| {
            let l = (n.max(2) as f64).ln().ceil();
            (1.0 / (self.c_eps * l)).min(0.05)
        })
    }

    /// `k = 2^{(log n)^{2/3}}`, `d = 2^{(log log n)²}`, `ε = 1/(log n)²`.
    /// These only become meaningful far beyond desk scale.
    pub fn asymptotic(n: usize) -> Self {
        let l = (n.max(4) as f64).log2();
        let k = 2f64.powf(l.powf(2.0 / 3.0)).max(1.0);
        let d = 2f64.powf(l.log2().powi(2)).round().max(1.0) as usize;
        Self { k, d, chain_eps: Some(1.0 / (l * l)), ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    ApproxSc,
    EliminateSchur,
    ExactSchur,
}

#[derive(Debug, Clone)]
pub struct ChainLink {
    pub ops: EliminationOps,
    /// Position in the next graph of every terminal of `ops`.
    pub positions: Vec<usize>,
    pub kind: LinkKind,
    pub apply_rounds: u64,
}

/// `G_1, …, G_t` with the operators linking consecutive graphs and an exact
/// solver for `G_t`.
#[derive(Debug, Clone)]
pub struct SchurChain {
    pub graphs: Vec<WeightedGraph>,
    pub links: Vec<ChainLink>,
    pub base: DenseLaplacianSolver,
    pub eps: f64,
    pub ledger: CostLedger,
    pub base_rounds: u64,
}

impl SchurChain {
    pub fn sizes(&self) -> Vec<usize> {
        self.graphs.iter().map(WeightedGraph::n).collect()
    }

    /// `W_1 b` with `W_i = Z_{i,1}ᵀ diag(Z_{i,2}, W_{i+1}) Z_{i,1}` and `W_t`
    /// the exact pseudo-inverse.
    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        self.apply_level(0, b)
    }

    fn apply_level(&self, i: usize, b: &[f64]) -> Vec<f64> {
        let mut b = b.to_vec();
        project_mean_zero(&mut b);
        let mut x = match self.links.get(i) {
            None => self.base.solve(&b),
            Some(link) => {
                let next = self.graphs[i + 1].n();
                link.ops.apply(&b, |r| {
                    let mut bb = vec![0.0; next];
                    for (&p, &v) in link.positions.iter().zip(r) {
                        bb[p] = v;
                    }
                    let y = self.apply_level(i + 1, &bb);
                    link.positions.iter().map(|&p| y[p]).collect()
                })
            }
        };
        project_mean_zero(&mut x);
        x
    }

    /// Rounds charged per application.
    pub fn apply_rounds(&self) -> u64 {
        self.links.iter().map(|l| l.apply_rounds).sum::<u64>() + self.base_rounds
    }
}

/// Graph of the exact Schur complement of `g` onto `t`, node `i` standing for
/// `t[i]`.
pub fn schur_graph(g: &WeightedGraph, t: &[usize]) -> WeightedGraph {
    let sc = laplacian_schur(g, t);
    let scale = sc.amax().max(f64::MIN_POSITIVE);
    let mut out = WeightedGraph::new(t.len());
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            let w = -sc[(i, j)];
            if w > 1e-13 * scale {
                out.add_edge(i, j, w).expect("positive weight");
            }
        }
    }
    out
}

/// Builds the chain on the minor of `dist`: Eliminate, then ApproxSC onto
/// the surviving terminals, until at most `k` nodes remain or no link
/// shrinks the graph.
pub fn build_chain(
    dist: &MinorDistribution,
    params: &SolverParams,
    eps: f64,
    service: &AggregationService,
    seed: u64,
) -> Result<SchurChain, SolverError> {
    let host_d = hop_diameter(&dist.host).unwrap_or(dist.host.n()) as u64;
    let mut ledger = CostLedger::default();
    let mut graphs = vec![dist.minor.clone()];
    let mut links = Vec::new();
    let mut cur = dist.clone();
    let mut link = 0;
    while (cur.minor.n() as f64) > params.k && link < params.max_links {
        let lseed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(link as u64 + 1));
        let e = eliminate(&cur, params.d, eps, &params.elim, service, lseed)
            .map_err(|source| SolverError::Eliminate { link, source })?;
        ledger.absorb(&e.ledger);
        if e.ops.eliminated() == 0 {
            ledger.note(format!("chain: link {link} eliminated nothing; closing"));
            break;
        }
        let t = e.terminals().to_vec();
        let a = approx_sc(&cur, &t, eps.min(0.099), &params.approx, &DenseFactory, service, lseed ^ 0x5c)
            .map_err(|source| SolverError::ApproxSc { link, source })?;
        ledger.absorb(&a.ledger);
        let apply_rounds = e.apply_rounds;
        if a.h().n() < cur.minor.n() {
            graphs.push(a.h().clone());
            links.push(ChainLink { ops: e.ops, positions: a.terminal_positions.clone(), kind: LinkKind::ApproxSc, apply_rounds });
            cur = a.dist;
        } else {
            match (params.fallback, e.dist) {
                (Fallback::EliminateSchur, Some(next)) => {
                    graphs.push(e.schur.clone());
                    links.push(ChainLink { ops: e.ops, positions: (0..t.len()).collect(), kind: LinkKind::EliminateSchur, apply_rounds });
                    cur = next;
                }
                (Fallback::EliminateSchur, None) => {
                    // Sequential runs carry no distribution; the estimate maps
                    // identically onto its own nodes.
                    graphs.push(e.schur.clone());
                    links.push(ChainLink { ops: e.ops, positions: (0..t.len()).collect(), kind: LinkKind::EliminateSchur, apply_rounds });
                    cur = identity_minor(&e.schur);
                }
                (Fallback::ExactBase, _) => {
                    let base = schur_graph(&cur.minor, &t);
                    ledger.note(format!(
                        "chain: ApproxSC kept all {} nodes at link {link}; base is the exact Schur complement on {} terminals",
                        cur.minor.n(),
                        t.len()
                    ));
                    graphs.push(base.clone());
                    links.push(ChainLink { ops: e.ops, positions: (0..t.len()).collect(), kind: LinkKind::ExactSchur, apply_rounds });
                    break;
                }
            }
        }
        link += 1;
    }
    let last = graphs.last().unwrap().clone();
    let base_rounds = 2 * host_d + 2 * last.n() as u64;
    ledger.add_rounds("chain/base-gather", 2 * host_d + 2 * (last.m() as u64));
    Ok(SchurChain { base: DenseLaplacianSolver::new(&last), graphs, links, eps, ledger, base_rounds })
}

/// Preconditioner for `L(G)` built once and reused across right-hand sides.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    pub g: WeightedGraph,
    pub sparsified: WeightedGraph,
    pub ultra: UltraSparsifier,
    pub chain: SchurChain,
    /// Bounds on the spectrum of `P·L(G)`.
    pub lo: f64,
    pub hi: f64,
    pub measured: bool,
    pub setup: CostLedger,
    pub apply_rounds: u64,
    /// Rounds of one Chebyshev iteration.
    pub iteration_rounds: u64,
    pub chain_eps: f64,
}

impl Preconditioner {
    pub fn build(g: &WeightedGraph, params: &SolverParams, service: &AggregationService, seed: u64) -> Result<Self, SolverError> {
        if !g.is_connected() {
            return Err(SolverError::Disconnected);
        }
        let n = g.n();
        let eps = params.chain_eps(n);
        let mut setup = CostLedger::default();
        let base = identity_minor(g);
        let q_host = aggregation_cost(service, Some(&base))?;

        let (sparsified, kept) = if params.spec_spars && g.m() > 0 {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0x7370_6172);
            let sp = spectral_sparsify(g, eps, params.elim.engine, params.elim.c_sparsify, &mut rng);
            let k_bs = (n.max(2) as f64).ln().ceil() as u64;
            setup.charge("specspars", sp.spanners as u64 * k_bs + sp.iterations as u64, q_host);
            if sp.g.is_connected() {
                (sp.g, Some(sp.kept))
            } else {
                setup.note("specspars: sample disconnected; using the input graph");
                (g.clone(), None)
            }
        } else {
            (g.clone(), None)
        };
        let spars_dist = match kept {
            None => base.clone(),
            Some(kept) => MinorDistribution::new(
                sparsified.clone(),
                g.clone(),
                base.super_nodes.clone(),
                base.leaders.clone(),
                base.trees.clone(),
                kept.into_iter().map(Some).collect(),
            )
            .expect("sparsifier is a reweighted subgraph"),
        };

        let ultra_params = UltraParams { k: params.k, ..params.ultra };
        let ultra = ultrasparsify(&spars_dist, &ultra_params, service, seed)?;
        setup.absorb(&ultra.ledger);
        let chain = build_chain(&ultra.ghat_dist, params, eps, service, seed ^ 0x6368_6169_6e)?;
        setup.absorb(&chain.ledger);

        let global_q = service.quality(&Partition::new(vec![(0..n).collect()]), None)?.max(1) as u64;
        let apply_rounds = 2 * ultra.reduced.sweeps as u64 * q_host.rounds as u64 + chain.apply_rounds();
        let iteration_rounds = 1 + apply_rounds + 2 * global_q;

        let mut p = Self {
            g: g.clone(),
            sparsified,
            ultra,
            chain,
            lo: 1.0 / (params.kappa_slack * params.k),
            hi: params.kappa_slack,
            measured: false,
            setup,
            apply_rounds,
            iteration_rounds,
            chain_eps: eps,
        };
        if n <= params.measure_max_n && n > 1 {
            let (lo, hi) = p.measure()?;
            p.lo = lo * (1.0 - 1e-6);
            p.hi = hi * (1.0 + 1e-6);
            p.measured = true;
        }
        Ok(p)
    }

    /// `P b`, projected onto mean-zero vectors on both sides.
    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        let mut b = b.to_vec();
        project_mean_zero(&mut b);
        let mut x = self.ultra.reduced.ops.apply(&b, |r| self.chain.apply(r));
        project_mean_zero(&mut x);
        x
    }

    /// Dense matrix of `P`.
    pub fn materialize(&self) -> DMatrix<f64> {
        let n = self.g.n();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            m.set_column(j, &DVector::from_vec(self.apply(&e)));
        }
        (&m + m.transpose()) * 0.5
    }

    /// Extremal eigenvalues of `P·L(G)` on the mean-zero subspace.
    pub fn measure(&self) -> Result<(f64, f64), OracleError> {
        let lp = laplacian_pinv(&laplacian(&self.g))?;
        generalized_eigen_range(&lp, &self.materialize())
    }

    pub fn kappa(&self) -> f64 {
        self.hi / self.lo
    }

    /// Solves `L x = b` to `‖x − L†b‖_L ≤ eps·‖b‖_L`, certified by
    /// `√(rᵀPr/λ_lo)` on the residual.
    pub fn solve(&self, b: &[f64], eps: f64) -> Result<Solution, SolverError> {
        let n = self.g.n();
        if b.len() != n {
            return Err(SolverError::Dimension { got: b.len(), expected: n });
        }
        if !(eps > 0.0) {
            return Err(SolverError::BadEps(eps));
        }
        let mut b = b.to_vec();
        let removed_mean = project_mean_zero(&mut b);
        let b_l = dot(&b, &lap_apply(&self.g, &b)).max(0.0).sqrt();
        let target = eps * b_l;
        let mut ledger = CostLedger::default();
        if b_l == 0.0 {
            return Ok(Solution::trivial(n, removed_mean, self));
        }
        let (lo, hi) = (self.lo, self.hi);
        let kappa = hi / lo;
        let z0 = self.apply(&b);
        let b_p = dot(&b, &z0).max(0.0);
        let b_dual = (b_p / lo).sqrt();
        let eps_eff = (target / b_dual).min(1.0);
        let budget = (kappa.sqrt() * (2.0 / eps_eff).ln()).ceil() as usize + 1;

        let theta = (hi + lo) / 2.0;
        let delta = (hi - lo) / 2.0;
        let mut x = vec![0.0; n];
        let mut r = b.clone();
        let mut z = z0;
        let mut bound = b_dual;
        let mut iterations = 0;
        if bound > target {
            let sigma = theta / delta.max(f64::MIN_POSITIVE);
            let mut rho = 1.0 / sigma;
            let mut d: Vec<f64> = z.iter().map(|v| v / theta).collect();
            while iterations < 4 * budget {
                iterations += 1;
                for (xi, di) in x.iter_mut().zip(&d) {
                    *xi += di;
                }
                let ad = lap_apply(&self.g, &d);
                for (ri, a) in r.iter_mut().zip(&ad) {
                    *ri -= a;
                }
                z = self.apply(&r);
                bound = (dot(&r, &z).max(0.0) / lo).sqrt();
                if bound <= target {
                    break;
                }
                let rho_next = 1.0 / (2.0 * sigma - rho);
                for (di, zi) in d.iter_mut().zip(&z) {
                    *di = rho_next * rho * *di + 2.0 * rho_next / delta * zi;
                }
                rho = rho_next;
            }
        }
        ledger.add_rounds("solve/chebyshev", iterations as u64 * self.iteration_rounds + self.apply_rounds);
        project_mean_zero(&mut x);
        if bound > target {
            return Err(SolverError::NoConvergence { iterations, bound, target });
        }
        Ok(Solution {
            x,
            iterations,
            budget,
            kappa,
            measured: self.measured,
            lo,
            hi,
            removed_mean,
            error_bound: bound,
            target,
            ledger,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub budget: usize,
    pub kappa: f64,
    pub measured: bool,
    pub lo: f64,
    pub hi: f64,
    /// Mean removed from `b` before solving.
    pub removed_mean: f64,
    /// Certified bound on `‖x − L†b‖_L`.
    pub error_bound: f64,
    pub target: f64,
    pub ledger: CostLedger,
}

impl Solution {
    fn trivial(n: usize, removed_mean: f64, p: &Preconditioner) -> Self {
        Self {
            x: vec![0.0; n],
            iterations: 0,
            budget: 0,
            kappa: p.kappa(),
            measured: p.measured,
            lo: p.lo,
            hi: p.hi,
            removed_mean,
            error_bound: 0.0,
            target: 0.0,
            ledger: CostLedger::default(),
        }
    }
}

/// [`LaplacianSolver`] backed by a [`Preconditioner`], solving every right-hand
/// side to `‖x − L†b‖_L ≤ eps·‖b‖_L`. Falls back to the dense solver when
/// the chain cannot be built.
pub struct ChainSolver {
    inner: Result<Preconditioner, DenseLaplacianSolver>,
    eps: f64,
    calls: std::cell::Cell<usize>,
}

impl ChainSolver {
    pub fn new(g: &WeightedGraph, params: &SolverParams, eps: f64, seed: u64) -> Self {
        let svc = AggregationService::sequential(g.clone());
        let inner = Preconditioner::build(g, params, &svc, seed).map_err(|_| DenseLaplacianSolver::new(g));
        Self { inner, eps, calls: std::cell::Cell::new(0) }
    }

    pub fn is_chain(&self) -> bool {
        self.inner.is_ok()
    }
}

impl LaplacianSolver for ChainSolver {
    fn n(&self) -> usize {
        match &self.inner {
            Ok(p) => p.g.n(),
            Err(d) => d.n(),
        }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.calls.set(self.calls.get() + 1);
        match &self.inner {
            Ok(p) => match p.solve(b, self.eps) {
                Ok(s) => s.x,
                Err(_) => DenseLaplacianSolver::new(&p.g).solve(b),
            },
            Err(d) => d.solve(b),
        }
    }

    fn calls(&self) -> usize {
        self.calls.get()
    }
}

/// Factory of [`ChainSolver`]s.
#[derive(Debug, Clone, Copy)]
pub struct ChainFactory {
    pub params: SolverParams,
    pub eps: f64,
    pub seed: u64,
}

impl SolverFactory for ChainFactory {
    fn build(&self, g: &WeightedGraph) -> Box<dyn LaplacianSolver> {
        Box::new(ChainSolver::new(g, &self.params, self.eps, self.seed))
    }
}

/// Everything a single solve reports.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Solution,
    pub ledger: CostLedger,
    pub chain_sizes: Vec<usize>,
    pub ghat_nodes: usize,
}

/// One-shot solve of `L(G) x = b`.
pub fn solve(
    g: &WeightedGraph,
    b: &[f64],
    eps: f64,
    service: &AggregationService,
    params: &SolverParams,
    seed: u64,
) -> Result<SolveReport, SolverError> {
    let p = Preconditioner::build(g, params, service, seed)?;
    let solution = p.solve(b, eps)?;
    let mut ledger = p.setup.clone();
    ledger.absorb(&solution.ledger);
    Ok(SolveReport { chain_sizes: p.chain.sizes(), ghat_nodes: p.ultra.reduced.ghat.n(), solution, ledger })
}
