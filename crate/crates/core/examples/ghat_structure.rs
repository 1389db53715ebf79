//! The augmented graph Ĝ_ρ of an overlapping partition: its diameter stays
//! within D+1 and a lifted tree decomposition has width at most ρ(w+1)−1.

use distlap::aggregation::{build_ghat, check_diameter_claim, lift_tree_decomposition};
use distlap::experiments::generators::{generate_graph, random_congested_partition, GraphSpec};
use distlap::graph::{hop_diameter, validate_tree_decomposition};
use rand::SeedableRng;

fn main() {
    let gen = generate_graph(&GraphSpec::ktree(40, 2), 5).unwrap();
    let (g, td) = (gen.graph, gen.decomposition.unwrap());
    let w = validate_tree_decomposition(&g, &td).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for rho in 1..=4 {
        let parts = random_congested_partition(&g, 5, rho, &mut rng);
        let ghat = build_ghat(&g, &parts).unwrap();
        let lifted = lift_tree_decomposition(&g, &td, &ghat).unwrap();
        let lw = validate_tree_decomposition(&ghat.graph, &lifted).unwrap();
        println!(
            "rho={rho}: |V(Ĝ)|={} D={} D(Ĝ)={} claim={} width {w} -> {lw} (bound {})",
            ghat.graph.n(),
            hop_diameter(&g).unwrap(),
            hop_diameter(&ghat.graph).unwrap(),
            check_diameter_claim(&g, &ghat).unwrap(),
            rho * (w + 1) - 1
        );
    }
}
