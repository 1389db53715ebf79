//! The augmented graph Ĝ_ρ: every host node `u` is split into one copy per
//! part containing it, so congested parts become disjoint. Programs written
//! for Ĝ_ρ run on the host through [`GhatHost`], which multiplexes copies and
//! spends `ρ²` host rounds per Ĝ_ρ round.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{build_shortcuts, collect_learned, input_maps, tree_programs, trees_for, ProviderKind, ShortcutSet};
use super::{check_inputs, AggError, AggOp, AggOutcome, PartInputs, Value};
use crate::graph::{hop_diameter, validate_partition, Partition, TreeDecomposition, WeightedGraph};
use crate::netsim::{run_congest, Action, Ctx, NetConfig, NodeId, NodeProgram, Payload, RoundLedger};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedGraph {
    pub graph: WeightedGraph,
    /// Copy → host node.
    pub host_of: Vec<usize>,
    /// Copy → part label; `None` for the single copy of a node in no part.
    pub part_of: Vec<Option<usize>>,
    /// Host node → its copies, ordered by part id.
    pub copies: Vec<Vec<usize>>,
}

impl AugmentedGraph {
    /// `max_u ρ(u)`, at least 1.
    pub fn rho(&self) -> usize {
        self.copies.iter().map(Vec::len).max().unwrap_or(1).max(1)
    }

    /// Parts of Ĝ_ρ: part `p` becomes the copies labelled `p`.
    pub fn lifted_partition(&self, parts: usize) -> Partition {
        let mut out = vec![Vec::new(); parts];
        for (c, p) in self.part_of.iter().enumerate() {
            if let Some(p) = p {
                out[*p].push(c);
            }
        }
        Partition::new(out)
    }
}

/// Splits each host node into `ρ(u)` copies and connects all copy pairs
/// across each host edge.
pub fn build_ghat(host: &WeightedGraph, partition: &Partition) -> Result<AugmentedGraph, AggError> {
    validate_partition(host, partition, usize::MAX)?;
    let n = host.n();
    let memberships = partition.memberships(n);
    let mut host_of = Vec::new();
    let mut part_of = Vec::new();
    let mut copies = vec![Vec::new(); n];
    for u in 0..n {
        if memberships[u].is_empty() {
            copies[u].push(host_of.len());
            host_of.push(u);
            part_of.push(None);
        }
        for &p in &memberships[u] {
            copies[u].push(host_of.len());
            host_of.push(u);
            part_of.push(Some(p));
        }
    }
    let mut graph = WeightedGraph::new(host_of.len());
    for (u, nbrs) in host.neighbor_sets().iter().enumerate() {
        for &v in nbrs.iter().filter(|&&v| v > u) {
            for &a in &copies[u] {
                for &b in &copies[v] {
                    graph.add_edge(a, b, 1.0).expect("copies are in range");
                }
            }
        }
    }
    Ok(AugmentedGraph { graph, host_of, part_of, copies })
}

/// `D(Ĝ_ρ) ≤ D(Ḡ) + 1`.
pub fn check_diameter_claim(host: &WeightedGraph, ghat: &AugmentedGraph) -> Result<bool, AggError> {
    let d_host = hop_diameter(host).map_err(|_| AggError::Disconnected)?;
    let d_ghat = hop_diameter(&ghat.graph).map_err(|_| AggError::Disconnected)?;
    Ok(d_ghat <= d_host + 1)
}

/// Replaces every bag by all copies of its nodes.
pub fn lift_tree_decomposition(
    host: &WeightedGraph,
    td: &TreeDecomposition,
    ghat: &AugmentedGraph,
) -> Result<TreeDecomposition, AggError> {
    crate::graph::validate_tree_decomposition(host, td).map_err(|e| AggError::BadDecomposition(e.to_string()))?;
    let bags = td.bags.iter().map(|bag| bag.iter().flat_map(|&u| ghat.copies[u].iter().copied()).collect()).collect();
    Ok(TreeDecomposition { bags, tree_edges: td.tree_edges.clone() })
}

/// A Ĝ_ρ message in transit over a host edge.
#[derive(Debug, Clone)]
pub struct Wrapped<M> {
    pub src: usize,
    pub dst: usize,
    pub msg: M,
}

impl<M: Payload> Payload for Wrapped<M> {
    fn words(&self) -> usize {
        // Source and destination copy indices share one word: each is below
        // ρ, so together they need O(log ρ) ⊆ O(log n̄) bits.
        self.msg.words() + 1
    }
}

/// Host-side multiplexer for the Ĝ_ρ copies of one host node.
///
/// Ĝ_ρ round `t` occupies host rounds `[tF, (t+1)F)` with `F = ρ²`: copies
/// are stepped at the start of the frame, and their messages drain over the
/// host edge queues during the frame.
pub struct GhatHost<P: NodeProgram> {
    copies: Vec<(usize, P, bool)>,
    host_of: Arc<Vec<usize>>,
    ghat_n: usize,
    frame: usize,
    inbox: BTreeMap<usize, Vec<(usize, P::Msg)>>,
    queues: BTreeMap<NodeId, VecDeque<Wrapped<P::Msg>>>,
}

impl<P: NodeProgram> GhatHost<P> {
    pub fn into_copies(self) -> Vec<(usize, P)> {
        self.copies.into_iter().map(|(c, p, _)| (c, p)).collect()
    }
}

impl<P: NodeProgram> NodeProgram for GhatHost<P> {
    type Msg = Wrapped<P::Msg>;

    fn step(&mut self, ctx: &Ctx, local: &[(NodeId, Self::Msg)], _: &[(NodeId, Self::Msg)]) -> Action<Self::Msg> {
        for (_, w) in local {
            self.inbox.entry(w.dst).or_default().push((w.src, w.msg.clone()));
        }
        if ctx.round.is_multiple_of(self.frame) {
            let inner_round = ctx.round / self.frame;
            for (copy, program, halted) in self.copies.iter_mut() {
                let mut inbox = self.inbox.remove(copy).unwrap_or_default();
                if *halted && inbox.is_empty() {
                    continue;
                }
                inbox.sort_by_key(|(src, _)| *src);
                let inner = Ctx { id: *copy, round: inner_round, n: self.ghat_n, global_cap: 0 };
                let action = program.step(&inner, &inbox, &[]);
                *halted = action.halt;
                for (dst, msg) in action.local {
                    let host = self.host_of[dst];
                    self.queues.entry(host).or_default().push_back(Wrapped { src: *copy, dst, msg });
                }
            }
        }
        let mut out = Vec::new();
        for (&to, q) in self.queues.iter_mut() {
            if let Some(w) = q.pop_front() {
                out.push((to, w));
            }
        }
        self.queues.retain(|_, q| !q.is_empty());
        let idle = self.copies.iter().all(|c| c.2) && self.queues.is_empty() && self.inbox.is_empty();
        Action { local: out, global: Vec::new(), halt: idle }
    }
}

/// Wraps programs written for Ĝ_ρ (indexed by copy) into host programs.
pub fn simulate_on_ghat<P: NodeProgram>(ghat: &AugmentedGraph, programs: Vec<P>) -> Vec<GhatHost<P>> {
    let rho = ghat.rho();
    let host_of = Arc::new(ghat.host_of.clone());
    let mut slots: Vec<Option<P>> = programs.into_iter().map(Some).collect();
    ghat.copies
        .iter()
        .map(|cs| GhatHost {
            copies: cs.iter().map(|&c| (c, slots[c].take().expect("one program per copy"), false)).collect(),
            host_of: Arc::clone(&host_of),
            ghat_n: ghat.graph.n(),
            frame: rho * rho,
            inbox: BTreeMap::new(),
            queues: BTreeMap::new(),
        })
        .collect()
}

/// Report of one CONGEST run through Ĝ_ρ.
#[derive(Debug, Clone)]
pub struct CongestAggregation {
    pub outcome: AggOutcome,
    pub rho: usize,
    pub ghat_nodes: usize,
    pub ghat_rounds: usize,
    pub host_rounds: usize,
    pub shortcuts: ShortcutSet,
    pub provider_used: ProviderKind,
    /// Largest random delay drawn.
    pub max_delay: usize,
    pub ghat_ledger: RoundLedger,
}

impl CongestAggregation {
    /// `ρ² ·` Ĝ_ρ rounds; the host rounds never exceed it.
    pub fn simulation_bound(&self) -> usize {
        self.rho * self.rho * self.ghat_rounds
    }
}

/// ρ-congested part-wise aggregation in CONGEST: shortcuts on Ĝ_ρ, random
/// delays per part, and simulation back on the host.
pub fn congested_aggregation_congest(
    host: &WeightedGraph,
    partition: &Partition,
    inputs: &PartInputs,
    op: AggOp,
    provider: ProviderKind,
    td: Option<&TreeDecomposition>,
    net: &NetConfig,
) -> Result<CongestAggregation, AggError> {
    check_inputs(partition, inputs)?;
    let ghat = build_ghat(host, partition)?;
    let lifted_parts = ghat.lifted_partition(partition.parts.len());
    let lifted_td = match td {
        Some(td) => Some(lift_tree_decomposition(host, td, &ghat)?),
        None => None,
    };
    let mut notes = Vec::new();
    let mut provider_used = provider;
    let mut shortcuts = build_shortcuts(&ghat.graph, &lifted_parts, provider, lifted_td.as_ref())?;
    if provider != ProviderKind::Baseline {
        let baseline = build_shortcuts(&ghat.graph, &lifted_parts, ProviderKind::Baseline, None)?;
        if baseline.quality() < shortcuts.quality() {
            notes.push(format!(
                "provider {provider:?} quality {} worse than baseline {}; fell back",
                shortcuts.quality(),
                baseline.quality()
            ));
            shortcuts = baseline;
            provider_used = ProviderKind::Baseline;
        }
    }
    let trees = trees_for(&ghat.graph, &lifted_parts, &shortcuts);
    let (c, d) = (shortcuts.congestion, shortcuts.dilation.max(1));
    let span = c.div_ceil(d) * d;
    let mut rng = ChaCha8Rng::seed_from_u64(net.seed ^ 0x6465_6c61_7973);
    let delays: Vec<usize> = (0..trees.len()).map(|_| if span == 0 { 0 } else { rng.random_range(0..=span) }).collect();
    let max_delay = delays.iter().copied().max().unwrap_or(0);

    // Lifted inputs: the copy of `u` labelled `p` holds `u`'s input for `p`.
    let mut lifted_inputs: Vec<BTreeMap<usize, Value>> = vec![BTreeMap::new(); partition.parts.len()];
    for (p, m) in input_maps(partition, inputs).into_iter().enumerate() {
        for (u, v) in m {
            let copy = ghat.copies[u].iter().copied().find(|&c| ghat.part_of[c] == Some(p)).expect("copy exists");
            lifted_inputs[p].insert(copy, v);
        }
    }
    let programs = tree_programs(ghat.graph.n(), &trees, &lifted_inputs, &delays, op);
    let direct = run_congest(&ghat.graph, programs.clone(), net)?;
    let hosted = run_congest(host, simulate_on_ghat(&ghat, programs), net)?;

    let mut per_copy: Vec<BTreeMap<usize, Value>> = vec![BTreeMap::new(); ghat.graph.n()];
    for h in hosted.programs {
        for (c, p) in h.into_copies() {
            per_copy[c] = p.results();
        }
    }
    let learned = collect_learned(host.n(), partition, |u| {
        ghat.copies[u].iter().flat_map(|&c| per_copy[c].iter().map(|(&k, &v)| (k, v))).collect()
    });
    let host_rounds = hosted.ledger.rounds;
    Ok(CongestAggregation {
        outcome: AggOutcome { learned, rounds: host_rounds, ledger: hosted.ledger, notes },
        rho: ghat.rho(),
        ghat_nodes: ghat.graph.n(),
        ghat_rounds: direct.ledger.rounds,
        host_rounds,
        shortcuts,
        provider_used,
        max_delay,
        ghat_ledger: direct.ledger,
    })
}
