//! Aggregation and multicast in the node-capacitated clique over a simulated
//! butterfly.
//!
//! The `2^d` lowest ids (`d = ⌊log2 n̄⌋`) act as butterfly columns; every
//! other node is attached to column `id − 2^d`. Each group `g` gets a random
//! root column `h_g`. A pass consists of `d` phases; in phase `b` column `x`
//! exchanges data with its partner `x xor 2^b` only, and both sides close
//! the phase with an end marker. Up-sweeps fix the bits of `h_g` one at a
//! time and combine values of the same group on the way, which also records
//! the multicast tree of every group. Since a column only ever hears from
//! its `d` partners and its attached node, throttling each sender to
//! `⌊cap / (d + 1)⌋` messages per round keeps every receiver under the cap.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tree::collect_learned;
use super::{check_inputs, AggError, AggOp, AggOutcome, PartInputs, Value};
use crate::graph::{validate_partition, Partition, WeightedGraph};
use crate::netsim::{run_model, Action, Ctx, Model, NetConfig, NodeId, NodeProgram, Payload, RoundLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Attach,
    Up,
    Route,
    Descend,
    Detach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Aggregate,
    Join,
    Multicast,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Item {
    group: usize,
    value: Value,
    /// Destination node of routed items.
    dest: usize,
}

#[derive(Debug, Clone)]
pub struct BfMsg {
    stage: Stage,
    phase: usize,
    item: Option<Item>,
    end: bool,
    words: usize,
}

impl Payload for BfMsg {
    fn words(&self) -> usize {
        self.words
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub n: usize,
    pub d: usize,
    pub cols: usize,
    /// Messages a node may send per round.
    pub budget: usize,
}

impl Layout {
    pub fn new(n: usize, net: &NetConfig) -> Self {
        let d = if n <= 1 { 0 } else { (usize::BITS - 1 - n.leading_zeros()) as usize };
        let cols = 1usize << d;
        let senders = d + usize::from(n > cols);
        let budget = (net.global_cap(n) / senders.max(1)).max(1);
        Self { n, d, cols, budget }
    }

    pub fn column(&self, v: usize) -> usize {
        if v < self.cols {
            v
        } else {
            v - self.cols
        }
    }

    fn attached(&self, c: usize) -> Option<usize> {
        (c < self.cols && c + self.cols < self.n).then_some(c + self.cols)
    }
}

/// The multicast tree of every group, as recorded by the columns.
#[derive(Debug, Clone, Default)]
pub struct TreeRecord {
    /// `(bit, group)`: the partner across `bit` sent this group here.
    child: BTreeSet<(usize, usize)>,
    /// `(bit, group)`: this column held the group before phase `bit` and
    /// kept it.
    kept: BTreeSet<(usize, usize)>,
    attached_groups: BTreeSet<usize>,
    own_groups: BTreeSet<usize>,
    /// Groups present at this column at each butterfly level.
    level_load: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ButterflyNode {
    id: usize,
    layout: Layout,
    mode: Mode,
    op: AggOp,
    roots: Arc<Vec<usize>>,
    targets: Arc<Vec<usize>>,
    stages: Vec<Stage>,
    si: usize,
    pi: usize,
    entered: bool,
    held: BTreeMap<usize, Value>,
    routing: Vec<Item>,
    initial: Vec<Item>,
    outgoing: VecDeque<(NodeId, BfMsg)>,
    buffer: BTreeMap<(Stage, usize), (Vec<Item>, bool)>,
    record: TreeRecord,
    delivered: BTreeMap<usize, Value>,
    done: bool,
}

impl ButterflyNode {
    fn new(id: usize, layout: Layout, mode: Mode, op: AggOp, roots: Arc<Vec<usize>>, targets: Arc<Vec<usize>>) -> Self {
        let stages = if id >= layout.cols {
            vec![Stage::Attach]
        } else {
            match mode {
                Mode::Aggregate => vec![Stage::Attach, Stage::Up, Stage::Route, Stage::Detach],
                Mode::Join => vec![Stage::Attach, Stage::Up],
                Mode::Multicast => vec![Stage::Attach, Stage::Route, Stage::Descend, Stage::Detach],
            }
        };
        Self {
            id,
            layout,
            mode,
            op,
            roots,
            targets,
            stages,
            si: 0,
            pi: 0,
            entered: false,
            held: BTreeMap::new(),
            routing: Vec::new(),
            initial: Vec::new(),
            outgoing: VecDeque::new(),
            buffer: BTreeMap::new(),
            record: TreeRecord::default(),
            delivered: BTreeMap::new(),
            done: false,
        }
    }

    fn is_column(&self) -> bool {
        self.id < self.layout.cols
    }

    fn stage(&self) -> Stage {
        self.stages[self.si]
    }

    fn phases(&self, stage: Stage) -> usize {
        match stage {
            Stage::Up | Stage::Route | Stage::Descend => self.layout.d,
            Stage::Attach | Stage::Detach => 1,
        }
    }

    fn bit(&self) -> usize {
        match self.stage() {
            Stage::Descend => self.layout.d - 1 - self.pi,
            _ => self.pi,
        }
    }

    fn words(&self, stage: Stage, item: &Option<Item>) -> usize {
        match item {
            None => 1,
            Some(_) => {
                let dest = matches!(stage, Stage::Route | Stage::Detach) && self.mode == Mode::Aggregate;
                1 + self.op.value_words() + usize::from(dest)
            }
        }
    }

    fn queue(&mut self, to: NodeId, stage: Stage, phase: usize, items: Vec<Item>, with_end: bool) {
        let count = items.len();
        for (i, item) in items.into_iter().enumerate() {
            let item = Some(item);
            let words = self.words(stage, &item);
            self.outgoing.push_back((to, BfMsg { stage, phase, item, end: with_end && i + 1 == count, words }));
        }
        if with_end && count == 0 {
            self.outgoing.push_back((to, BfMsg { stage, phase, item: None, end: true, words: 1 }));
        }
    }

    fn dest_column(&self, item: &Item) -> usize {
        self.layout.column(item.dest)
    }

    fn enter(&mut self) {
        let stage = self.stage();
        if stage == Stage::Attach {
            if !self.is_column() {
                let items = std::mem::take(&mut self.initial);
                self.queue(self.layout.column(self.id), Stage::Attach, 0, items, true);
            }
            return;
        }
        if stage == Stage::Detach {
            let attached = self.layout.attached(self.id);
            let mut out = Vec::new();
            match self.mode {
                Mode::Aggregate => {
                    for item in std::mem::take(&mut self.routing) {
                        if item.dest == self.id {
                            self.delivered.insert(item.group, item.value);
                        } else {
                            out.push(item);
                        }
                    }
                }
                Mode::Multicast => {
                    for (&g, &value) in &self.held {
                        if self.record.own_groups.contains(&g) {
                            self.delivered.insert(g, value);
                        }
                        if self.record.attached_groups.contains(&g) {
                            out.push(Item { group: g, value, dest: usize::MAX });
                        }
                    }
                }
                Mode::Join => {}
            }
            if let Some(a) = attached {
                self.queue(a, Stage::Detach, 0, out, false);
            }
            return;
        }
        let b = self.bit();
        let partner = self.id ^ (1 << b);
        let x_bit = (self.id >> b) & 1;
        let mut out = Vec::new();
        match stage {
            Stage::Up => {
                self.record.level_load.push(self.held.len());
                let groups: Vec<usize> = self.held.keys().copied().collect();
                for g in groups {
                    if (self.roots[g] >> b) & 1 != x_bit {
                        let value = self.held.remove(&g).unwrap();
                        out.push(Item { group: g, value, dest: usize::MAX });
                    } else {
                        self.record.kept.insert((b, g));
                    }
                }
            }
            Stage::Route => {
                let items = std::mem::take(&mut self.routing);
                for item in items {
                    if (self.dest_column(&item) >> b) & 1 != x_bit {
                        out.push(item);
                    } else {
                        self.routing.push(item);
                    }
                }
            }
            Stage::Descend => {
                let groups: Vec<usize> = self.held.keys().copied().collect();
                for g in groups {
                    let value = self.held[&g];
                    if self.record.child.contains(&(b, g)) {
                        out.push(Item { group: g, value, dest: usize::MAX });
                    }
                    if !self.record.kept.contains(&(b, g)) {
                        self.held.remove(&g);
                    }
                }
            }
            Stage::Attach | Stage::Detach => unreachable!(),
        }
        self.queue(partner, stage, self.pi, out, true);
    }

    fn phase_complete(&self) -> bool {
        if !self.outgoing.is_empty() {
            return false;
        }
        match self.stage() {
            Stage::Attach => {
                if !self.is_column() || self.layout.attached(self.id).is_none() {
                    return true;
                }
                self.buffer.get(&(Stage::Attach, 0)).is_some_and(|b| b.1)
            }
            Stage::Detach => true,
            s => self.buffer.get(&(s, self.pi)).is_some_and(|b| b.1),
        }
    }

    fn finish_phase(&mut self) {
        let stage = self.stage();
        let (items, _) = self.buffer.remove(&(stage, self.pi)).unwrap_or_default();
        match stage {
            Stage::Attach if self.is_column() => {
                let own = std::mem::take(&mut self.initial);
                for item in own {
                    self.record.own_groups.insert(item.group);
                    self.absorb(item);
                }
                for item in items {
                    self.record.attached_groups.insert(item.group);
                    self.absorb(item);
                }
            }
            Stage::Up => {
                let b = self.bit();
                for item in items {
                    self.record.child.insert((b, item.group));
                    let acc = self.held.get(&item.group).copied().unwrap_or(self.op.identity());
                    self.held.insert(item.group, self.op.combine(acc, item.value));
                }
            }
            Stage::Route => self.routing.extend(items),
            Stage::Descend => {
                for item in items {
                    self.held.insert(item.group, item.value);
                }
            }
            _ => {}
        }
        self.pi += 1;
        self.entered = false;
        if self.pi >= self.phases(stage) {
            self.pi = 0;
            self.after_stage(stage);
            self.si += 1;
            if self.si >= self.stages.len() {
                self.done = true;
            }
        }
    }

    fn absorb(&mut self, item: Item) {
        match self.mode {
            Mode::Aggregate | Mode::Join => {
                let acc = self.held.get(&item.group).copied().unwrap_or(self.op.identity());
                self.held.insert(item.group, self.op.combine(acc, item.value));
            }
            Mode::Multicast => self.routing.push(item),
        }
    }

    fn after_stage(&mut self, stage: Stage) {
        match (self.mode, stage) {
            (Mode::Aggregate, Stage::Up) | (Mode::Join, Stage::Up) => {
                self.record.level_load.push(self.held.len());
                if self.mode == Mode::Aggregate {
                    let held = std::mem::take(&mut self.held);
                    self.routing = held
                        .into_iter()
                        .map(|(g, value)| Item { group: g, value, dest: self.targets[g] })
                        .collect();
                }
            }
            (Mode::Multicast, Stage::Route) => {
                for item in std::mem::take(&mut self.routing) {
                    self.held.insert(item.group, item.value);
                }
            }
            _ => {}
        }
    }
}

impl NodeProgram for ButterflyNode {
    type Msg = BfMsg;

    fn step(&mut self, _: &Ctx, _: &[(NodeId, BfMsg)], global: &[(NodeId, BfMsg)]) -> Action<BfMsg> {
        for (_, m) in global {
            if m.stage == Stage::Detach {
                if let Some(item) = m.item {
                    self.delivered.insert(item.group, item.value);
                }
                continue;
            }
            let slot = self.buffer.entry((m.stage, m.phase)).or_default();
            if let Some(item) = m.item {
                slot.0.push(item);
            }
            slot.1 |= m.end;
        }
        while !self.done {
            if !self.entered {
                self.enter();
                self.entered = true;
            }
            if self.phase_complete() {
                self.finish_phase();
            } else {
                break;
            }
        }
        let k = self.layout.budget.min(self.outgoing.len());
        let out: Vec<(NodeId, BfMsg)> = self.outgoing.drain(..k).collect();
        Action { local: Vec::new(), global: out, halt: self.done && self.outgoing.is_empty() }
    }
}

fn run_programs(
    model: Model,
    host: Option<&WeightedGraph>,
    programs: Vec<ButterflyNode>,
    net: &NetConfig,
) -> Result<(Vec<ButterflyNode>, RoundLedger), AggError> {
    let n = programs.len();
    let empty;
    let g = match host {
        Some(g) => g,
        None => {
            empty = WeightedGraph::new(n);
            &empty
        }
    };
    let model = if model == Model::Congest { Model::Ncc } else { model };
    let run = run_model(model, g, programs, net)?;
    Ok((run.programs, run.ledger))
}

fn random_roots(count: usize, cols: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x726f_6f74_73);
    (0..count).map(|_| rng.random_range(0..cols)).collect()
}

/// Values delivered to the group targets.
#[derive(Debug, Clone)]
pub struct NccAggregate {
    pub values: Vec<Value>,
    pub ledger: RoundLedger,
    pub local_load: usize,
    pub global_load: usize,
}

/// Every target `targets[i]` learns the aggregate of group `groups[i]`.
/// `inputs[i][j]` is the input of `groups[i][j]` for that group.
#[allow(clippy::too_many_arguments)]
pub fn ncc_aggregate(
    model: Model,
    host: Option<&WeightedGraph>,
    n: usize,
    groups: &[Vec<usize>],
    targets: &[usize],
    inputs: &PartInputs,
    op: AggOp,
    net: &NetConfig,
) -> Result<NccAggregate, AggError> {
    check_inputs(&Partition::new(groups.to_vec()), inputs)?;
    for (i, (g, &t)) in groups.iter().zip(targets).enumerate() {
        if !g.contains(&t) {
            return Err(AggError::TargetOutsideGroup { group: i, target: t });
        }
    }
    let mut load = vec![0usize; n];
    for g in groups {
        for &v in g {
            if v >= n {
                return Err(AggError::BadInputs(format!("node {v} outside [0, {n})")));
            }
            load[v] += 1;
        }
    }
    let local_load = load.iter().copied().max().unwrap_or(0);
    let global_load = load.iter().sum();
    let mut values: Vec<Value> = vec![op.identity(); groups.len()];
    let nontrivial: Vec<usize> = (0..groups.len())
        .filter(|&i| {
            if groups[i].len() == 1 {
                values[i] = op.combine(op.identity(), inputs[i][0]);
                false
            } else {
                true
            }
        })
        .collect();
    if nontrivial.is_empty() {
        return Ok(NccAggregate { values, ledger: RoundLedger::default(), local_load, global_load });
    }
    let layout = Layout::new(n, net);
    let roots = Arc::new(random_roots(nontrivial.len(), layout.cols, net.seed));
    let compact_targets = Arc::new(nontrivial.iter().map(|&i| targets[i]).collect::<Vec<_>>());
    let mut programs: Vec<ButterflyNode> = (0..n)
        .map(|v| ButterflyNode::new(v, layout, Mode::Aggregate, op, Arc::clone(&roots), Arc::clone(&compact_targets)))
        .collect();
    for (g, &i) in nontrivial.iter().enumerate() {
        for (&v, &x) in groups[i].iter().zip(&inputs[i]) {
            programs[v].initial.push(Item { group: g, value: x, dest: usize::MAX });
        }
    }
    let (programs, ledger) = run_programs(model, host, programs, net)?;
    for (g, &i) in nontrivial.iter().enumerate() {
        values[i] = programs[targets[i]].delivered.get(&g).copied().unwrap_or(op.identity());
    }
    Ok(NccAggregate { values, ledger, local_load, global_load })
}

/// Multicast trees of the non-trivial groups, recorded at the columns.
#[derive(Debug, Clone)]
pub struct MulticastTrees {
    layout: Layout,
    roots: Arc<Vec<usize>>,
    /// Compact group → original group index.
    groups: Vec<usize>,
    sources: Vec<usize>,
    records: Vec<TreeRecord>,
    /// Maximum number of trees sharing one butterfly node.
    pub congestion: usize,
    pub ledger: RoundLedger,
}

/// Builds one multicast tree per group through a combining up-sweep.
/// Every node may be the source of at most one group.
pub fn ncc_build_multicast_trees(
    model: Model,
    host: Option<&WeightedGraph>,
    n: usize,
    groups: &[Vec<usize>],
    sources: &[usize],
    net: &NetConfig,
) -> Result<MulticastTrees, AggError> {
    let mut count: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, (g, &s)) in groups.iter().zip(sources).enumerate() {
        if !g.contains(&s) {
            return Err(AggError::TargetOutsideGroup { group: i, target: s });
        }
        *count.entry(s).or_default() += 1;
    }
    if let Some((&node, &c)) = count.iter().find(|(_, &c)| c > 1) {
        return Err(AggError::SourceMultiplicity { node, count: c });
    }
    let layout = Layout::new(n, net);
    let nontrivial: Vec<usize> = (0..groups.len()).filter(|&i| groups[i].len() > 1).collect();
    let roots = Arc::new(random_roots(nontrivial.len(), layout.cols, net.seed.wrapping_add(1)));
    let mut trees = MulticastTrees {
        layout,
        roots: Arc::clone(&roots),
        groups: nontrivial.clone(),
        sources: nontrivial.iter().map(|&i| sources[i]).collect(),
        records: vec![TreeRecord::default(); n],
        congestion: 0,
        ledger: RoundLedger::default(),
    };
    if nontrivial.is_empty() {
        return Ok(trees);
    }
    let none = Arc::new(Vec::new());
    let mut programs: Vec<ButterflyNode> =
        (0..n).map(|v| ButterflyNode::new(v, layout, Mode::Join, AggOp::Sum, Arc::clone(&roots), Arc::clone(&none))).collect();
    for (g, &i) in nontrivial.iter().enumerate() {
        for &v in &groups[i] {
            programs[v].initial.push(Item { group: g, value: Value::new(0.0), dest: usize::MAX });
        }
    }
    let (programs, ledger) = run_programs(model, host, programs, net)?;
    trees.records = programs.into_iter().map(|p| p.record).collect();
    trees.congestion = trees.records.iter().flat_map(|r| r.level_load.iter().copied()).max().unwrap_or(0);
    trees.ledger = ledger;
    Ok(trees)
}

/// Delivers `messages[i]` from the source of group `i` to all its members.
/// Returns, per node, `(group, message)` pairs in ascending group order.
pub fn ncc_multicast(
    model: Model,
    host: Option<&WeightedGraph>,
    trees: &MulticastTrees,
    groups: &[Vec<usize>],
    messages: &[Value],
    op: AggOp,
    net: &NetConfig,
) -> Result<(Vec<Vec<(usize, Value)>>, RoundLedger), AggError> {
    let n = trees.layout.n;
    let mut out: Vec<Vec<(usize, Value)>> = vec![Vec::new(); n];
    for (i, g) in groups.iter().enumerate() {
        if g.len() == 1 {
            out[g[0]].push((i, messages[i]));
        }
    }
    if trees.groups.is_empty() {
        return Ok((out, RoundLedger::default()));
    }
    let layout = trees.layout;
    let targets = Arc::new(Vec::new());
    let mut programs: Vec<ButterflyNode> = (0..n)
        .map(|v| {
            let mut p = ButterflyNode::new(v, layout, Mode::Multicast, op, Arc::clone(&trees.roots), Arc::clone(&targets));
            p.record = trees.records[v].clone();
            p.record.own_groups.clear();
            p
        })
        .collect();
    // Column membership is re-derived from the groups themselves.
    for (g, &i) in trees.groups.iter().enumerate() {
        for &v in &groups[i] {
            if v < layout.cols {
                programs[v].record.own_groups.insert(g);
            }
        }
        let s = trees.sources[g];
        programs[s].initial.push(Item { group: g, value: messages[i], dest: trees.roots[g] });
    }
    let (programs, ledger) = run_programs(model, host, programs, net)?;
    for (g, &i) in trees.groups.iter().enumerate() {
        for &v in &groups[i] {
            if let Some(&m) = programs[v].delivered.get(&g) {
                out[v].push((i, m));
            }
        }
    }
    for row in &mut out {
        row.sort_by_key(|(i, _)| *i);
    }
    Ok((out, ledger))
}

/// Report of a ρ-congested aggregation in NCC or HYBRID.
#[derive(Debug, Clone)]
pub struct NccAggregation {
    pub outcome: AggOutcome,
    pub rho: usize,
    pub aggregate_rounds: usize,
    pub tree_rounds: usize,
    pub multicast_rounds: usize,
    pub batches: usize,
    pub max_tree_congestion: usize,
}

/// Leaders learn their part's aggregate, then in at most `ρ` batches act as
/// multicast sources for their parts.
pub fn congested_aggregation_ncc(
    model: Model,
    host: &WeightedGraph,
    partition: &Partition,
    leaders: &[usize],
    inputs: &PartInputs,
    op: AggOp,
    net: &NetConfig,
) -> Result<NccAggregation, AggError> {
    check_inputs(partition, inputs)?;
    let rho = validate_partition(host, partition, usize::MAX)?;
    let n = host.n();
    let graph = (model == Model::Hybrid).then_some(host);
    let agg = ncc_aggregate(model, graph, n, &partition.parts, leaders, inputs, op, net)?;
    let mut ledger = agg.ledger.clone();
    let aggregate_rounds = agg.ledger.rounds;

    let mut by_leader: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (p, &l) in leaders.iter().enumerate() {
        by_leader.entry(l).or_default().push(p);
    }
    let batches = by_leader.values().map(Vec::len).max().unwrap_or(0);
    let mut learned_by: Vec<BTreeMap<usize, Value>> = vec![BTreeMap::new(); n];
    let (mut tree_rounds, mut multicast_rounds, mut max_tree_congestion) = (0, 0, 0);
    for j in 0..batches {
        let batch: Vec<usize> = by_leader.values().filter_map(|ps| ps.get(j).copied()).collect();
        let groups: Vec<Vec<usize>> = batch.iter().map(|&p| partition.parts[p].clone()).collect();
        let sources: Vec<usize> = batch.iter().map(|&p| leaders[p]).collect();
        let mut batch_net = *net;
        batch_net.seed = net.seed.wrapping_add(1000 + j as u64);
        let trees = ncc_build_multicast_trees(model, graph, n, &groups, &sources, &batch_net)?;
        tree_rounds += trees.ledger.rounds;
        max_tree_congestion = max_tree_congestion.max(trees.congestion);
        ledger.append(&trees.ledger);
        let messages: Vec<Value> = batch.iter().map(|&p| agg.values[p]).collect();
        let (delivered, mledger) = ncc_multicast(model, graph, &trees, &groups, &messages, op, &batch_net)?;
        multicast_rounds += mledger.rounds;
        ledger.append(&mledger);
        for (v, row) in delivered.into_iter().enumerate() {
            for (i, m) in row {
                learned_by[v].insert(batch[i], m);
            }
        }
    }
    let learned = collect_learned(n, partition, |u| learned_by[u].clone());
    Ok(NccAggregation {
        outcome: AggOutcome { learned, rounds: ledger.rounds, ledger, notes: Vec::new() },
        rho,
        aggregate_rounds,
        tree_rounds,
        multicast_rounds,
        batches,
        max_tree_congestion,
    })
}
