//! Generates each graph family, prints its size, hop diameter and the width
//! of the shipped tree decomposition, and round-trips one graph through the
//! edge-list format.

use distlap::experiments::generators::{generate_graph, Family, GraphSpec};
use distlap::graph::{hop_diameter, validate_tree_decomposition};
use distlap::io::{format_graph, parse_graph};

fn main() {
    let specs = [
        GraphSpec::new(Family::Path, 12),
        GraphSpec::new(Family::Cycle, 12),
        GraphSpec::grid(4, 6),
        GraphSpec::ktree(30, 3),
        GraphSpec { k: 3, p: 0.6, ..GraphSpec::new(Family::RandomBoundedTw, 30) },
        GraphSpec { p: 0.15, ..GraphSpec::new(Family::Random, 30) }.weighted(16),
    ];
    println!("{:<18} {:>4} {:>5} {:>4} {:>4}", "family", "n", "m", "D", "tw");
    for spec in &specs {
        let gen = generate_graph(spec, 7).expect("generator");
        let g = &gen.graph;
        let tw = match &gen.decomposition {
            Some(td) => validate_tree_decomposition(g, td).expect("valid decomposition").to_string(),
            None => "-".into(),
        };
        println!("{:<18} {:>4} {:>5} {:>4} {:>4}", spec.family, g.n(), g.m(), hop_diameter(g).unwrap(), tw);
    }

    let g = generate_graph(&GraphSpec::grid(2, 3).weighted(5), 1).unwrap().graph;
    let text = format_graph(&g);
    print!("\n2x3 weighted grid:\n{text}");
    assert_eq!(parse_graph(&text).unwrap(), g);
}
