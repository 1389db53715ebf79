//! Low-stretch tree, stretch sampling and degree-1/2 elimination for
//! several k, with the measured sandwich L(G) ⪯ L(H) ⪯ k·L(G).

use distlap::aggregation::AggregationService;
use distlap::experiments::generators::{generate_graph, Family, GraphSpec};
use distlap::graph::laplacian;
use distlap::minors::identity_minor;
use distlap::oracle::generalized_eigen_range;
use distlap::ultrasparsify::{ultrasparsify, UltraParams};

fn main() {
    let g = generate_graph(&GraphSpec { p: 0.08, ..GraphSpec::new(Family::Random, 80) }.weighted(8), 2).unwrap().graph;
    let svc = AggregationService::sequential(g.clone());
    for (k, c_s) in [(2.0, 2.0), (8.0, 2.0), (8.0, 0.2), (32.0, 0.2)] {
        let u = ultrasparsify(&identity_minor(&g), &UltraParams { k, c_s, ..UltraParams::default() }, &svc, 1).unwrap();
        let (lo, hi) = generalized_eigen_range(&laplacian(&g), &laplacian(&u.sampled.h)).unwrap();
        println!(
            "k={k:>4} c_s={c_s}: stretch={:.1} off-tree kept {}/{} |C|={} sandwich [{lo:.4}, {hi:.3}]",
            u.tree.total_stretch,
            u.sampled.kept_off_tree.len(),
            u.tree.off_tree.len(),
            u.reduced.ghat.n(),
        );
    }
}
