use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use distlap::aggregation::tree::build_shortcuts;
use distlap::aggregation::{shortcut_quality, AggModel, AggOp, AggregationService, PartInputs, ProviderKind, Value};
use distlap::approxsc::{approx_sc, ApproxScParams};
use distlap::eliminate::{eliminate, EliminateParams};
use distlap::experiments::generators::{generate_graph, Family, GraphSpec};
use distlap::experiments::{emit_report, run_experiment, write_outputs, ExperimentConfig};
use distlap::graph::{laplacian, WeightedGraph};
use distlap::io;
use distlap::linalg::{energy_norm, DenseFactory, SolverFactory};
use distlap::minors::identity_minor;
use distlap::netsim::{DropPolicy, NetConfig};
use distlap::oracle::{exact_solve, generalized_eigen_range, laplacian_pinv, laplacian_schur};
use distlap::solver::{ChainFactory, Preconditioner, SolverParams};
use distlap::ultrasparsify::{ultrasparsify, UltraParams};

/// Distributed Laplacian solving on a simulated CONGEST/NCC/HYBRID network.
#[derive(Parser)]
#[command(name = "distlap", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Net {
    #[arg(long, default_value = "sequential")]
    model: AggModel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    max_rounds: usize,
    #[arg(long, default_value_t = 4)]
    msg_factor: usize,
    #[arg(long, default_value_t = 3)]
    ncc_cap_factor: usize,
    #[arg(long, default_value = "seeded-random")]
    drop_policy: DropPolicy,
}

impl Net {
    fn config(&self) -> NetConfig {
        NetConfig {
            seed: self.seed,
            max_rounds: self.max_rounds,
            msg_factor: self.msg_factor,
            ncc_cap_factor: self.ncc_cap_factor,
            drop_policy: self.drop_policy,
        }
    }

    fn service(&self, g: &WeightedGraph) -> AggregationService {
        AggregationService::new(g.clone(), self.model, self.config())
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Writes a generated graph in the `n m W` edge-list format.
    Generate {
        #[arg(long)]
        family: Family,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        cols: usize,
        /// Treewidth of k-tree families.
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        max_weight: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the tree decomposition as JSON.
        #[arg(long)]
        decomposition: Option<PathBuf>,
    },
    /// Part-wise aggregation; prints {aggregates, rounds, c, d, Q}.
    Aggregate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        parts: PathBuf,
        #[arg(long, default_value = "sum")]
        op: String,
        #[arg(long, default_value = "baseline")]
        provider: ProviderKind,
        /// Node inputs, one value per node; defaults to the node ids.
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Tree decomposition JSON for the treedec provider.
        #[arg(long)]
        decomposition: Option<PathBuf>,
        /// Writes every delivered message as CSV (round, channel, src, dst, bits).
        #[arg(long)]
        ledger_csv: Option<PathBuf>,
        #[command(flatten)]
        net: Net,
    },
    /// Ultra-sparsifier; prints {edges(H), |C|, sandwich range, rounds}.
    Ultrasparsify {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 8.0)]
        k: f64,
        #[command(flatten)]
        net: Net,
    },
    /// Schur complement elimination; prints {|T| per round, sandwich range, rounds, congestion}.
    Eliminate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma_scale: f64,
        #[command(flatten)]
        net: Net,
    },
    /// Approximate Schur complement; prints {|E(H)|, approximation range, solver calls, rounds}.
    Approxsc {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        terminals: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Dense solves inside the estimators instead of the chain solver.
        #[arg(long)]
        use_oracle_solver: bool,
        #[command(flatten)]
        net: Net,
    },
    /// Solves L x = b; writes x and prints the JSON ledger.
    Solve {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        chain_eps: Option<f64>,
        /// k, d and chain accuracy from the asymptotic formulas.
        #[arg(long)]
        asymptotic_params: bool,
        /// Solution file; printed to stdout when absent.
        #[arg(long)]
        x_out: Option<PathBuf>,
        /// Largest n compared against the dense oracle.
        #[arg(long, default_value_t = 400)]
        oracle_cap: usize,
        #[command(flatten)]
        net: Net,
    },
    /// Runs a JSON experiment config; writes metrics.csv, summary.csv, report.json.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type Res = Result<(), Box<dyn std::error::Error>>;

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print(v: serde_json::Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(&v).expect("json")));
}

fn range(lo_hi: Result<(f64, f64), distlap::oracle::OracleError>) -> serde_json::Value {
    match lo_hi {
        Ok((lo, hi)) => json!([lo, hi]),
        Err(e) => json!(e.to_string()),
    }
}

fn run(cli: Cli) -> Res {
    match cli.cmd {
        Cmd::Generate { family, n, rows, cols, k, p, max_weight, seed, out, decomposition } => {
            let spec = GraphSpec { family, n, rows, cols, k, p, max_weight };
            let gen = generate_graph(&spec, seed)?;
            let text = io::format_graph(&gen.graph);
            match out {
                Some(path) => io::write_string(&path, &text)?,
                None => emit(&text),
            }
            if let (Some(path), Some(td)) = (decomposition, gen.decomposition) {
                io::write_string(&path, &serde_json::to_string_pretty(&td)?)?;
            }
        }
        Cmd::Aggregate { graph, parts, op, provider, inputs, decomposition, ledger_csv, net } => {
            let g = io::read_graph(&graph)?;
            let partition = io::parse_parts(&io::read_to_string(&parts)?)?;
            let op = AggOp::from_name(&op)?;
            let td = match decomposition {
                Some(p) => Some(serde_json::from_str(&io::read_to_string(&p)?)?),
                None => None,
            };
            let values = match inputs {
                Some(p) => io::parse_vector(&io::read_to_string(&p)?)?,
                None => (0..g.n()).map(|v| v as f64).collect(),
            };
            if values.len() != g.n() {
                return Err(format!("inputs: {} values for {} nodes", values.len(), g.n()).into());
            }
            let part_inputs: PartInputs =
                partition.parts.iter().map(|p| p.iter().map(|&v| Value::with_id(values[v], v)).collect()).collect();
            let svc = net.service(&g).with_provider(provider, td.clone());
            let out = svc.aggregate(&partition, None, &part_inputs, op)?;
            let s = build_shortcuts(&g, &partition, provider, td.as_ref())?;
            let (c, d, q) = shortcut_quality(&g, &partition, &s);
            if let Some(path) = ledger_csv {
                let mut buf = Vec::new();
                out.ledger.write_csv(&mut buf)?;
                io::write_string(&path, &String::from_utf8(buf)?)?;
            }
            let aggregates: Vec<serde_json::Value> =
                out.per_part(partition.parts.len()).iter().map(|v| v.map_or(json!(null), |v| json!(v.x))).collect();
            print(json!({
                "aggregates": aggregates,
                "rounds": out.rounds,
                "c": c,
                "d": d,
                "Q": q,
                "summary": out.ledger.summary(),
                "notes": out.notes,
            }));
        }
        Cmd::Ultrasparsify { graph, k, net } => {
            let g = io::read_graph(&graph)?;
            let svc = net.service(&g);
            let u = ultrasparsify(&identity_minor(&g), &UltraParams { k, ..UltraParams::default() }, &svc, net.seed)?;
            print(json!({
                "edges_h": u.sampled.h.m(),
                "off_tree_kept": u.sampled.kept_off_tree.len(),
                "c": u.reduced.ghat.n(),
                "ghat_edges": u.reduced.ghat.m(),
                "total_stretch": u.tree.total_stretch,
                "sandwich": range(generalized_eigen_range(&laplacian(&g), &laplacian(&u.sampled.h))),
                "rounds": u.ledger.total_rounds(),
                "ledger": u.ledger,
            }));
        }
        Cmd::Eliminate { graph, d, eps, gamma_scale, net } => {
            let g = io::read_graph(&graph)?;
            let svc = net.service(&g);
            let params = EliminateParams { gamma_scale, ..EliminateParams::default() };
            let e = eliminate(&identity_minor(&g), d, eps, &params, &svc, net.seed)?;
            let sandwich = laplacian_pinv(&laplacian(&e.schur)).and_then(|inner| {
                generalized_eigen_range(&laplacian_pinv(&laplacian(&g))?, &e.ops.materialize(&inner))
            });
            print(json!({
                "terminals_per_round": e.rounds.iter().map(|r| r.terminals).collect::<Vec<_>>(),
                "sandwich": range(sandwich),
                "rounds": e.ledger.total_rounds(),
                "congestion_max": e.rounds.iter().map(|r| r.max_congestion).max().unwrap_or(0),
                "stopped": e.stopped,
                "ledger": e.ledger,
            }));
        }
        Cmd::Approxsc { graph, terminals, eps, use_oracle_solver, net } => {
            let g = io::read_graph(&graph)?;
            let t = io::parse_nodes(&io::read_to_string(&terminals)?)?;
            let svc = net.service(&g);
            let chain = ChainFactory { params: SolverParams::default(), eps: 1e-8, seed: net.seed };
            let factory: &dyn SolverFactory = if use_oracle_solver { &DenseFactory } else { &chain };
            let a = approx_sc(&identity_minor(&g), &t, eps, &ApproxScParams::default(), factory, &svc, net.seed)?;
            let sc = laplacian_schur(a.h(), &a.terminal_positions);
            print(json!({
                "edges_h": a.h().m(),
                "nodes_h": a.h().n(),
                "threshold": a.threshold,
                "approx": range(generalized_eigen_range(&laplacian_schur(&g, &t), &sc)),
                "solver_calls": a.solver_calls,
                "iterations": a.iterations.len(),
                "rounds": a.ledger.total_rounds(),
                "ledger": a.ledger,
            }));
        }
        Cmd::Solve { graph, b, eps, k, d, chain_eps, asymptotic_params, x_out, oracle_cap, net } => {
            let g = io::read_graph(&graph)?;
            let b = io::parse_vector(&io::read_to_string(&b)?)?;
            let mut params = if asymptotic_params { SolverParams::asymptotic(g.n()) } else { SolverParams::default() };
            if let Some(k) = k {
                params.k = k;
            }
            if let Some(d) = d {
                params.d = d;
            }
            if chain_eps.is_some() {
                params.chain_eps = chain_eps;
            }
            let svc = net.service(&g);
            let p = Preconditioner::build(&g, &params, &svc, net.seed)?;
            let s = p.solve(&b, eps)?;
            let mut ledger = p.setup.clone();
            ledger.absorb(&s.ledger);
            let error = (g.n() <= oracle_cap).then(|| {
                let mut bb = b.clone();
                distlap::linalg::project_mean_zero(&mut bb);
                let x = exact_solve(&laplacian(&g), &nalgebra::DVector::from_column_slice(&bb)).expect("dense solve");
                let diff: Vec<f64> = s.x.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                energy_norm(&g, &diff) / energy_norm(&g, &bb)
            });
            let summary = json!({
                "stage_rounds": ledger.stages,
                "total_rounds": ledger.total_rounds(),
                "solver_calls": ledger.solver_calls,
                "chain_sizes": p.chain.sizes(),
                "ghat_nodes": p.ultra.reduced.ghat.n(),
                "iterations": s.iterations,
                "budget": s.budget,
                "kappa": s.kappa,
                "kappa_measured": s.measured,
                "removed_mean": s.removed_mean,
                "error_bound": s.error_bound,
                "target": s.target,
                "error_vs_oracle": error,
                "notes": ledger.notes,
            });
            let text = io::format_vector(&s.x);
            match x_out {
                Some(path) => {
                    io::write_string(&path, &text)?;
                    print(summary);
                }
                None => {
                    emit(&text);
                    eprintln!("{}", serde_json::to_string_pretty(&summary)?);
                }
            }
        }
        Cmd::Experiment { config, out } => {
            let cfg: ExperimentConfig = serde_json::from_str(&io::read_to_string(&config)?)?;
            let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
            let rows = run_experiment(&cfg)?;
            let report = emit_report(&rows);
            write_outputs(&dir, &rows, &report)?;
            print(json!({
                "rows": rows.len(),
                "failed": rows.iter().filter(|r| r.status != "ok").count(),
                "out": dir,
                "eps_fits": report.eps_fits,
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
