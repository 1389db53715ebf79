//! Contracts a set of host edges into a minor distribution and multiplies
//! the minor's Laplacian by a vector through two aggregations.

use distlap::aggregation::{AggModel, AggregationService};
use distlap::experiments::generators::grid;
use distlap::graph::laplacian;
use distlap::minors::{contract_edges, identity_minor, minor_matvec, validate_minor, EdgeOperator};
use distlap::netsim::NetConfig;
use nalgebra::DVector;

fn main() {
    let host = grid(5, 5);
    // Contract the first row and the second column.
    let f: Vec<usize> =
        host.edges().iter().enumerate().filter(|(_, e)| (e.u < 5 && e.v < 5) || (e.u % 5 == 1 && e.v % 5 == 1)).map(|(i, _)| i).collect();
    let d = contract_edges(&identity_minor(&host), &f).unwrap();
    println!("minor: n={} m={} rho={}", d.minor.n(), d.minor.m(), validate_minor(&d).unwrap());

    let x: Vec<f64> = (0..d.n()).map(|i| (i as f64).sin()).collect();
    let exact = laplacian(&d.minor) * DVector::from_vec(x.clone());
    for model in [AggModel::Congest, AggModel::Hybrid] {
        let svc = AggregationService::new(host.clone(), model, NetConfig::default());
        let out = minor_matvec(&d, &EdgeOperator::laplacian(&d.minor), &x, &svc).unwrap();
        let err = out.y.iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{model:?}: rounds={} max error={err:.2e}", out.rounds);
    }
}
