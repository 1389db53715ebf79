//! Graph generators and the config-driven experiment harness.
//!
//! A config names graph families and sizes, models, one module, a grid of
//! parameter objects and seeds. Every (graph, model, params, seed) cell
//! yields one CSV row; [`emit_report`] groups rows and fits round counts.

pub mod generators;

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggModel, AggOp, AggregationService, PartInputs, ProviderKind, Value};
use crate::approxsc::{approx_sc, ApproxScParams};
use crate::cost::{CostLedger, StageCost};
use crate::eliminate::{eliminate, EliminateParams};
use crate::graph::{hop_diameter, laplacian, WeightedGraph};
use crate::io::IoError;
use crate::linalg::{energy_norm, DenseFactory};
use crate::minors::identity_minor;
use crate::netsim::NetConfig;
use crate::oracle::{exact_solve, generalized_eigen_range, laplacian_pinv, laplacian_schur, spectral_approx_check};
use crate::solver::{Preconditioner, SolverParams};
use crate::ultrasparsify::{ultrasparsify, UltraParams};

use generators::{generate_graph, random_congested_partition, Family, GraphSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Module {
    Aggregation,
    Ultrasparsify,
    Eliminate,
    Approxsc,
    Solve,
}

impl Module {
    pub fn name(self) -> &'static str {
        match self {
            Module::Aggregation => "aggregation",
            Module::Ultrasparsify => "ultrasparsify",
            Module::Eliminate => "eliminate",
            Module::Approxsc => "approxsc",
            Module::Solve => "solve",
        }
    }
}

/// One family swept over sizes (and treewidths for k-tree families).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphSweep {
    pub family: Family,
    pub sizes: Vec<usize>,
    /// Treewidth values for k-tree families.
    pub k: Vec<usize>,
    pub p: f64,
    pub max_weight: u64,
}

impl Default for GraphSweep {
    fn default() -> Self {
        Self { family: Family::Path, sizes: vec![16], k: vec![2], p: 0.5, max_weight: 1 }
    }
}

impl GraphSweep {
    fn specs(&self) -> Vec<GraphSpec> {
        let ks: &[usize] = match self.family {
            Family::Ktree | Family::RandomBoundedTw => &self.k,
            _ => &self.k[..self.k.len().min(1)],
        };
        let mut out = Vec::new();
        for &n in &self.sizes {
            for &k in ks {
                out.push(GraphSpec { family: self.family, n, k, p: self.p, max_weight: self.max_weight, ..GraphSpec::default() });
            }
        }
        out
    }
}

/// Parameters of one cell. Fields a module does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    /// Target accuracy of the module under test.
    pub eps: f64,
    pub k: f64,
    pub d: usize,
    pub chain_eps: Option<f64>,
    pub gamma_scale: f64,
    /// Terminal count for ApproxSC; terminals are spread evenly over ids.
    pub terminals: usize,
    /// Congestion and parts per layer of aggregation partitions.
    pub rho: usize,
    pub parts: usize,
    pub provider: ProviderKind,
    pub op: AggOp,
    pub asymptotic: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            k: 8.0,
            d: 2,
            chain_eps: None,
            gamma_scale: 1.0,
            terminals: 6,
            rho: 1,
            parts: 4,
            provider: ProviderKind::Baseline,
            op: AggOp::Sum,
            asymptotic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub graphs: Vec<GraphSweep>,
    pub models: Vec<AggModel>,
    pub module: Module,
    /// Parameter grid: each entry is one cell's overrides.
    pub params: Vec<RunParams>,
    pub seeds: Vec<u64>,
    /// Oracle comparisons run only for `n` up to this size.
    pub oracle_cap: usize,
    pub net: NetConfig,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            graphs: Vec::new(),
            models: vec![AggModel::Sequential],
            module: Module::Solve,
            params: vec![RunParams::default()],
            seeds: vec![0],
            oracle_cap: 200,
            net: NetConfig::default(),
            out: None,
        }
    }
}

/// One CSV row; the column order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub family: String,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "D")]
    pub diameter: usize,
    pub tw: Option<usize>,
    pub model: String,
    pub module: String,
    #[serde(rename = "params-json")]
    pub params_json: String,
    pub seed: u64,
    pub rounds_local: u64,
    pub rounds_global: u64,
    pub msgs_local: u64,
    pub msgs_global: u64,
    pub error_vs_oracle: Option<f64>,
    pub status: String,
}

impl Row {
    pub fn rounds(&self) -> u64 {
        self.rounds_local.max(self.rounds_global)
    }

    pub fn params(&self) -> RunParams {
        serde_json::from_str(&self.params_json).unwrap_or_default()
    }
}

pub const CSV_HEADER: [&str; 15] = [
    "family",
    "n",
    "m",
    "D",
    "tw",
    "model",
    "module",
    "params-json",
    "seed",
    "rounds_local",
    "rounds_global",
    "msgs_local",
    "msgs_global",
    "error_vs_oracle",
    "status",
];

pub fn model_name(m: AggModel) -> &'static str {
    match m {
        AggModel::Congest => "congest",
        AggModel::Ncc => "ncc",
        AggModel::Hybrid => "hybrid",
        AggModel::Sequential => "sequential",
    }
}

fn cell_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt
}

struct Cell<'a> {
    g: &'a WeightedGraph,
    service: &'a AggregationService,
    params: &'a RunParams,
    seed: u64,
    oracle: bool,
}

struct Outcome {
    cost: StageCost,
    error: Option<f64>,
    status: String,
}

impl Outcome {
    fn from_ledger(l: &CostLedger, error: Option<f64>) -> Self {
        Self { cost: l.total(), error, status: "ok".into() }
    }

    fn failed(stage: &str) -> Self {
        Self { cost: StageCost::default(), error: None, status: stage.into() }
    }
}

fn run_aggregation(c: &Cell) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(c.seed, 1));
    let partition = random_congested_partition(c.g, c.params.parts, c.params.rho, &mut rng);
    let inputs: PartInputs =
        partition.parts.iter().map(|p| p.iter().map(|&v| Value::with_id(rng.random_range(-1000..1000) as f64, v)).collect()).collect();
    match c.service.aggregate(&partition, None, &inputs, c.params.op) {
        Ok(out) => {
            let s = out.ledger.summary();
            let ok = out.matches_oracle(&partition, &inputs, c.params.op, 1e-9);
            Outcome {
                cost: StageCost {
                    rounds: out.rounds as u64,
                    aggregations: 1,
                    rounds_local: s.rounds_local as u64,
                    rounds_global: s.rounds_global as u64,
                    msgs_local: s.msgs_local as u64,
                    msgs_global: s.msgs_global as u64,
                },
                error: Some(if ok { 0.0 } else { 1.0 }),
                status: if ok { "ok".into() } else { "mismatch".into() },
            }
        }
        Err(_) => Outcome::failed("aggregation"),
    }
}

fn run_ultrasparsify(c: &Cell) -> Outcome {
    let params = UltraParams { k: c.params.k, ..UltraParams::default() };
    match ultrasparsify(&identity_minor(c.g), &params, c.service, c.seed) {
        Ok(u) => {
            // Achieved log condition number of the pencil (L(H), L(G)).
            let error = c.oracle.then(|| {
                generalized_eigen_range(&laplacian(c.g), &laplacian(&u.sampled.h)).map_or(f64::NAN, |(lo, hi)| (hi / lo).ln())
            });
            Outcome::from_ledger(&u.ledger, error)
        }
        Err(_) => Outcome::failed("ultrasparsify"),
    }
}

fn run_eliminate(c: &Cell) -> Outcome {
    let params = EliminateParams { gamma_scale: c.params.gamma_scale, ..EliminateParams::default() };
    match eliminate(&identity_minor(c.g), c.params.d, c.params.eps, &params, c.service, c.seed) {
        Ok(e) => {
            let error = c.oracle.then(|| {
                let inner = laplacian_pinv(&laplacian(&e.schur)).expect("dense pseudo-inverse");
                let w = e.ops.materialize(&inner);
                let lp = laplacian_pinv(&laplacian(c.g)).expect("dense pseudo-inverse");
                spectral_approx_check(&lp, &w, c.params.eps).map_or(f64::NAN, |r| r.achieved_eps)
            });
            Outcome::from_ledger(&e.ledger, error)
        }
        Err(_) => Outcome::failed("eliminate"),
    }
}

fn spread_terminals(n: usize, t: usize) -> Vec<usize> {
    let t = t.clamp(1, n);
    let mut out: Vec<usize> = (0..t).map(|i| i * (n - 1) / (t - 1).max(1)).collect();
    out.dedup();
    out
}

fn run_approxsc(c: &Cell) -> Outcome {
    let t = spread_terminals(c.g.n(), c.params.terminals);
    let eps = c.params.eps.min(0.099);
    match approx_sc(&identity_minor(c.g), &t, eps, &ApproxScParams::default(), &DenseFactory, c.service, c.seed) {
        Ok(a) => {
            let error = c.oracle.then(|| {
                let sc = laplacian_schur(a.h(), &a.terminal_positions);
                spectral_approx_check(&laplacian_schur(c.g, &t), &sc, eps).map_or(f64::NAN, |r| r.achieved_eps)
            });
            let mut l = a.ledger.clone();
            l.solver_calls = a.solver_calls as u64;
            Outcome::from_ledger(&l, error)
        }
        Err(_) => Outcome::failed("approxsc"),
    }
}

pub fn solver_params(p: &RunParams, n: usize) -> SolverParams {
    if p.asymptotic {
        return SolverParams::asymptotic(n);
    }
    SolverParams { k: p.k, d: p.d, chain_eps: p.chain_eps, ..SolverParams::default() }
}

/// Deterministic mean-zero right-hand side.
pub fn random_rhs(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    crate::linalg::project_mean_zero(&mut b);
    b
}

fn run_solve(c: &Cell) -> Outcome {
    let params = solver_params(c.params, c.g.n());
    let p = match Preconditioner::build(c.g, &params, c.service, c.seed) {
        Ok(p) => p,
        Err(e) => return Outcome::failed(e.stage()),
    };
    let b = random_rhs(c.g.n(), cell_seed(c.seed, 2));
    match p.solve(&b, c.params.eps) {
        Ok(s) => {
            let error = c.oracle.then(|| {
                let x = exact_solve(&laplacian(c.g), &DVector::from_column_slice(&b)).expect("dense solve");
                let diff: Vec<f64> = s.x.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                energy_norm(c.g, &diff) / energy_norm(c.g, &b)
            });
            let mut l = p.setup.clone();
            l.absorb(&s.ledger);
            Outcome::from_ledger(&l, error)
        }
        Err(e) => Outcome::failed(e.stage()),
    }
}

/// Runs every cell of `config` in a fixed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<Row>, ExperimentError> {
    if config.params.is_empty() {
        return Err(ExperimentError::Config("empty parameter grid".into()));
    }
    let mut rows = Vec::new();
    for sweep in &config.graphs {
        for spec in sweep.specs() {
            for &seed in &config.seeds {
                let gen = generate_graph(&spec, seed).map_err(|e| ExperimentError::Config(format!("{}: {e}", spec.family)))?;
                let g = gen.graph;
                let diameter = hop_diameter(&g).unwrap_or(0);
                let tw = gen.decomposition.as_ref().map(|d| d.width());
                for &model in &config.models {
                    // One service per provider so measured qualities are cached
                    // across the parameter grid.
                    let mut services: Vec<(ProviderKind, AggregationService)> = Vec::new();
                    for params in &config.params {
                        if !services.iter().any(|(k, _)| *k == params.provider) {
                            let net = NetConfig { seed, ..config.net };
                            let svc = AggregationService::new(g.clone(), model, net).with_provider(params.provider, gen.decomposition.clone());
                            services.push((params.provider, svc));
                        }
                        let service = &services.iter().find(|(k, _)| *k == params.provider).unwrap().1;
                        let cell = Cell { g: &g, service, params, seed, oracle: g.n() <= config.oracle_cap };
                        let out = match config.module {
                            Module::Aggregation => run_aggregation(&cell),
                            Module::Ultrasparsify => run_ultrasparsify(&cell),
                            Module::Eliminate => run_eliminate(&cell),
                            Module::Approxsc => run_approxsc(&cell),
                            Module::Solve => run_solve(&cell),
                        };
                        rows.push(Row {
                            family: spec.family.name().into(),
                            n: g.n(),
                            m: g.m(),
                            diameter,
                            tw,
                            model: model_name(model).into(),
                            module: config.module.name().into(),
                            params_json: serde_json::to_string(params).expect("params serialize"),
                            seed,
                            rounds_local: out.cost.rounds_local,
                            rounds_global: out.cost.rounds_global,
                            msgs_local: out.cost.msgs_local,
                            msgs_global: out.cost.msgs_global,
                            error_vs_oracle: out.error,
                            status: out.status,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_csv<W: std::io::Write>(rows: &[Row], out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<Row>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Least-squares fit `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
    pub points: usize,
}

pub fn fit_linear(xs: &[f64], ys: &[f64]) -> Option<Fit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(Fit { intercept, slope, r2, points: n })
}

/// Least-squares fit through the origin, `y ≈ slope·x`; `r2` is the
/// uncentered coefficient of determination.
pub fn fit_proportional(xs: &[f64], ys: &[f64]) -> Option<Fit> {
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    if xs.len() != ys.len() || xs.is_empty() || sxx == 0.0 {
        return None;
    }
    let slope = xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>() / sxx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| y * y).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(Fit { intercept: 0.0, slope, r2, points: xs.len() })
}

/// Mean over seeds of one (family, n, model, module, params) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: String,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "D")]
    pub diameter: usize,
    pub tw: Option<usize>,
    pub model: String,
    pub module: String,
    #[serde(rename = "params-json")]
    pub params_json: String,
    pub runs: usize,
    pub ok: usize,
    pub mean_rounds: f64,
    pub max_error: Option<f64>,
    /// Status of the first failing run, or `ok`.
    pub status: String,
}

/// Fitted `rounds ≈ c1 + c2·ln(1/ε)` for one (family, n, model, module)
/// group of a solver sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsFit {
    pub family: String,
    pub n: usize,
    pub model: String,
    pub fit: Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub eps_fits: Vec<EpsFit>,
}

pub fn emit_report(rows: &[Row]) -> Report {
    let mut summary: Vec<SummaryRow> = Vec::new();
    for r in rows {
        let key = |s: &SummaryRow| {
            s.family == r.family && s.n == r.n && s.m == r.m && s.model == r.model && s.module == r.module && s.params_json == r.params_json
        };
        let ok = r.status == "ok";
        match summary.iter_mut().find(|s| key(s)) {
            Some(s) => {
                s.mean_rounds += r.rounds() as f64;
                s.runs += 1;
                s.ok += ok as usize;
                if let Some(e) = r.error_vs_oracle {
                    s.max_error = Some(s.max_error.map_or(e, |m: f64| m.max(e)));
                }
                if !ok && s.status == "ok" {
                    s.status = r.status.clone();
                }
            }
            None => summary.push(SummaryRow {
                family: r.family.clone(),
                n: r.n,
                m: r.m,
                diameter: r.diameter,
                tw: r.tw,
                model: r.model.clone(),
                module: r.module.clone(),
                params_json: r.params_json.clone(),
                runs: 1,
                ok: ok as usize,
                mean_rounds: r.rounds() as f64,
                max_error: r.error_vs_oracle,
                status: r.status.clone(),
            }),
        }
    }
    for s in &mut summary {
        s.mean_rounds /= s.runs as f64;
    }

    let mut eps_fits: Vec<EpsFit> = Vec::new();
    let mut groups: Vec<((String, usize, String), Vec<(f64, f64)>)> = Vec::new();
    for r in rows.iter().filter(|r| r.module == "solve" && r.status == "ok") {
        let key = (r.family.clone(), r.n, r.model.clone());
        let pt = ((1.0 / r.params().eps).ln(), r.rounds() as f64);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(pt),
            None => groups.push((key, vec![pt])),
        }
    }
    for ((family, n, model), pts) in groups {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        if let Some(fit) = fit_linear(&xs, &ys) {
            eps_fits.push(EpsFit { family, n, model, fit });
        }
    }
    Report { summary, eps_fits }
}

/// Writes `metrics.csv`, `summary.csv` and `report.json` into `dir`.
pub fn write_outputs(dir: &Path, rows: &[Row], report: &Report) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    crate::io::write_string(&dir.join("metrics.csv"), &String::from_utf8(buf).expect("utf8 csv"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    if report.summary.is_empty() {
        w.write_record(["family", "n", "m", "D", "tw", "model", "module", "params-json", "runs", "ok", "mean_rounds", "max_error", "status"])?;
    }
    for s in &report.summary {
        w.serialize(s)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("utf8 csv");
    crate::io::write_string(&dir.join("summary.csv"), &text)?;
    crate::io::write_string(&dir.join("report.json"), &serde_json::to_string_pretty(report).expect("report serializes"))?;
    Ok(())
}
