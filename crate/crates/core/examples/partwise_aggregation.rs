//! ρ-congested part-wise aggregation on a 3-tree in every model, checked
//! against the sequential oracle, with the measured round cost next to the
//! shortcut quality.

use distlap::aggregation::tree::build_shortcuts;
use distlap::aggregation::{shortcut_quality, AggModel, AggOp, AggregationService, PartInputs, ProviderKind, Value};
use distlap::experiments::generators::{generate_graph, random_congested_partition, GraphSpec};
use distlap::netsim::NetConfig;
use rand::{Rng, SeedableRng};

fn main() {
    let gen = generate_graph(&GraphSpec::ktree(60, 3), 3).unwrap();
    let g = gen.graph;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for rho in 1..=3 {
        let parts = random_congested_partition(&g, 6, rho, &mut rng);
        let inputs: PartInputs =
            parts.parts.iter().map(|p| p.iter().map(|&v| Value::with_id(rng.random_range(0..100) as f64, v)).collect()).collect();
        for provider in [ProviderKind::Baseline, ProviderKind::TreeDec] {
            let s = build_shortcuts(&g, &parts, provider, gen.decomposition.as_ref()).unwrap();
            let (c, d, q) = shortcut_quality(&g, &parts, &s);
            for model in [AggModel::Congest, AggModel::Ncc, AggModel::Hybrid] {
                let svc = AggregationService::new(g.clone(), model, NetConfig::with_seed(1))
                    .with_provider(provider, gen.decomposition.clone());
                let out = svc.aggregate(&parts, None, &inputs, AggOp::Min).unwrap();
                let ok = out.matches_oracle(&parts, &inputs, AggOp::Min, 0.0);
                println!("rho={rho} {provider:?} c={c} d={d} Q={q} {model:?}: rounds={} matches_oracle={ok}", out.rounds);
            }
        }
    }
}
