//! End-to-end solve of L x = b in every model, with the error against the
//! dense oracle and the per-stage round ledger.

use distlap::aggregation::{AggModel, AggregationService};
use distlap::experiments::generators::{generate_graph, GraphSpec};
use distlap::experiments::random_rhs;
use distlap::graph::laplacian;
use distlap::linalg::energy_norm;
use distlap::netsim::NetConfig;
use distlap::oracle::exact_solve;
use distlap::solver::{solve, SolverParams};
use nalgebra::DVector;

fn main() {
    let g = generate_graph(&GraphSpec::ktree(48, 2).weighted(10), 4).unwrap().graph;
    let b = random_rhs(g.n(), 4);
    let x_star = exact_solve(&laplacian(&g), &DVector::from_vec(b.clone())).unwrap();
    for model in [AggModel::Sequential, AggModel::Congest, AggModel::Ncc, AggModel::Hybrid] {
        let svc = AggregationService::new(g.clone(), model, NetConfig::default());
        let r = solve(&g, &b, 1e-6, &svc, &SolverParams::default(), 4).unwrap();
        let diff: Vec<f64> = r.solution.x.iter().zip(x_star.iter()).map(|(a, b)| a - b).collect();
        println!(
            "{model:?}: chain {:?}, {} iterations (budget {}), kappa {:.2}, rel. error {:.1e}, rounds {}",
            r.chain_sizes,
            r.solution.iterations,
            r.solution.budget,
            r.solution.kappa,
            energy_norm(&g, &diff) / energy_norm(&g, &b),
            r.ledger.total_rounds()
        );
        if model == AggModel::Hybrid {
            for (stage, cost) in &r.ledger.stages {
                println!("    {stage:<24} {:>8} rounds", cost.rounds);
            }
        }
    }
}
