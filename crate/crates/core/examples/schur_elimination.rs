//! d rounds of Eliminate on a grid: terminal counts per round and the
//! composite operator compared with L(G)†.

use distlap::aggregation::AggregationService;
use distlap::eliminate::{eliminate, EliminateParams};
use distlap::experiments::generators::grid;
use distlap::graph::laplacian;
use distlap::minors::identity_minor;
use distlap::oracle::{laplacian_pinv, spectral_approx_check};

fn main() {
    let g = grid(6, 6);
    let svc = AggregationService::sequential(g.clone());
    let lp = laplacian_pinv(&laplacian(&g)).unwrap();
    for d in 1..=3 {
        let eps = 0.5;
        let e = eliminate(&identity_minor(&g), d, eps, &EliminateParams::default(), &svc, 11).unwrap();
        let w = e.ops.materialize(&laplacian_pinv(&laplacian(&e.schur)).unwrap());
        let c = spectral_approx_check(&lp, &w, d as f64 * (1.0 + eps).ln()).unwrap();
        let t: Vec<usize> = e.rounds.iter().map(|r| r.terminals).collect();
        println!("d={d}: |T| per round {t:?}, range [{:.3}, {:.3}], within (1+eps)^d: {}", c.lo, c.hi, c.holds);
    }
}
