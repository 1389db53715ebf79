//! A max-id flooding protocol written against the node-program interface,
//! run under CONGEST and HYBRID. The ledger shows rounds and messages per
//! channel.

use distlap::experiments::generators::grid;
use distlap::netsim::{run_congest, run_hybrid, Action, Ctx, NetConfig, NodeId, NodeProgram, Payload};

#[derive(Clone)]
struct Id(usize);

impl Payload for Id {
    fn words(&self) -> usize {
        1
    }
}

struct Flood {
    best: usize,
    nbrs: Vec<NodeId>,
    fresh: bool,
}

impl NodeProgram for Flood {
    type Msg = Id;

    fn step(&mut self, _: &Ctx, local: &[(NodeId, Id)], _: &[(NodeId, Id)]) -> Action<Id> {
        for (_, Id(x)) in local {
            if *x > self.best {
                self.best = *x;
                self.fresh = true;
            }
        }
        if !self.fresh {
            return Action::halt();
        }
        self.fresh = false;
        Action { local: self.nbrs.iter().map(|&v| (v, Id(self.best))).collect(), ..Action::default() }
    }
}

fn programs(g: &distlap::graph::WeightedGraph) -> Vec<Flood> {
    g.neighbor_sets().into_iter().enumerate().map(|(v, nbrs)| Flood { best: v, nbrs, fresh: true }).collect()
}

fn main() {
    let g = grid(6, 10);
    let cfg = NetConfig::default();
    let congest = run_congest(&g, programs(&g), &cfg).unwrap();
    assert!(congest.programs.iter().all(|p| p.best == 59));
    println!("congest: {:?}", congest.ledger.summary());
    let hybrid = run_hybrid(&g, programs(&g), &cfg).unwrap();
    println!("hybrid:  {:?}", hybrid.ledger.summary());
}
