//! Estimator audits against exact leverage scores, then ApproxSC onto a few
//! terminals of a weighted graph.

use distlap::aggregation::AggregationService;
use distlap::approxsc::{approx_leverage_scores, approx_sc, ApproxScParams};
use distlap::experiments::generators::{generate_graph, Family, GraphSpec};
use distlap::linalg::DenseFactory;
use distlap::minors::identity_minor;
use distlap::oracle::{laplacian_schur, leverage_scores_exact, spectral_approx_check};
use rand::SeedableRng;

fn main() {
    let g = generate_graph(&GraphSpec { p: 0.3, ..GraphSpec::new(Family::Random, 40) }.weighted(4), 9).unwrap().graph;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let est = approx_leverage_scores(&g, 0.1, 9.0, &DenseFactory, &mut rng);
    let exact = leverage_scores_exact(&g);
    let worst = est.lev.iter().zip(&exact).map(|(a, b)| (a / b).ln().abs()).fold(0.0, f64::max);
    println!("leverage: {} projections, worst |ln ratio| = {worst:.3}", est.projections);

    let t = vec![0, 7, 19, 33, 39];
    let svc = AggregationService::sequential(g.clone());
    for (label, params) in [
        ("defaults", ApproxScParams::default()),
        ("forced", ApproxScParams { edge_scale: 0.01, steady_scale: 10.0, ..ApproxScParams::default() }),
    ] {
        let a = approx_sc(&identity_minor(&g), &t, 0.1, &params, &DenseFactory, &svc, 4).unwrap();
        let c = spectral_approx_check(&laplacian_schur(&g, &t), &laplacian_schur(a.h(), &a.terminal_positions), 0.1).unwrap();
        println!(
            "{label}: m {} -> {} (threshold {:.0}), {} iterations, achieved eps {:.3}",
            g.m(),
            a.h().m(),
            a.threshold,
            a.iterations.len(),
            c.achieved_eps
        );
    }
}
