//! Part-wise aggregation, its ρ-congested variant, and the uniform
//! aggregation service the solver modules charge their rounds to.
//!
//! Three execution paths share one interface:
//!
//! * CONGEST through the augmented graph Ĝ_ρ ([`ghat`]) with pluggable
//!   shortcuts and random-delay scheduling, or the explicit `O(ρ√n + D)`
//!   baseline on the host ([`tree`]);
//! * NCC / HYBRID through a simulated butterfly ([`ncc`]);
//! * a zero-round sequential evaluation for unit tests of higher layers.

pub mod ghat;
pub mod ncc;
pub mod tree;

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{validate_partition, Partition, PartitionError, TreeDecomposition, WeightedGraph};
use crate::netsim::{Model, NetConfig, NetError, RoundLedger};

pub use ghat::{build_ghat, check_diameter_claim, congested_aggregation_congest, lift_tree_decomposition, AugmentedGraph};
pub use ncc::{congested_aggregation_ncc, ncc_aggregate, ncc_build_multicast_trees, ncc_multicast};
pub use tree::{baseline_congested_aggregation, shortcut_quality, ProviderKind, ShortcutSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggError {
    #[error("aggregate `{0}` is not distributive")]
    NonDistributive(String),
    #[error("unknown aggregate `{0}`")]
    UnknownOp(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("inputs do not match the partition: {0}")]
    BadInputs(String),
    #[error("target {target} of group {group} is not a member")]
    TargetOutsideGroup { group: usize, target: usize },
    #[error("node {node} is the source of {count} groups in one multicast")]
    SourceMultiplicity { node: usize, count: usize },
    #[error("host graph is disconnected")]
    Disconnected,
    #[error("tree decomposition is required by the treedec provider")]
    MissingDecomposition,
    #[error("decomposition is invalid: {0}")]
    BadDecomposition(String),
}

/// The fixed registry of distributive aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggOp {
    Min,
    Max,
    Sum,
    /// Minimum value, ties broken by the smaller id; the id travels along.
    MinId,
}

impl AggOp {
    pub fn from_name(name: &str) -> Result<Self, AggError> {
        match name.to_ascii_lowercase().as_str() {
            "min" => Ok(AggOp::Min),
            "max" => Ok(AggOp::Max),
            "sum" => Ok(AggOp::Sum),
            "minid" | "min-id" | "argmin" => Ok(AggOp::MinId),
            "avg" | "mean" | "median" | "mode" => Err(AggError::NonDistributive(name.to_string())),
            _ => Err(AggError::UnknownOp(name.to_string())),
        }
    }

    pub fn identity(self) -> Value {
        match self {
            AggOp::Min | AggOp::MinId => Value { x: f64::INFINITY, id: usize::MAX },
            AggOp::Max => Value { x: f64::NEG_INFINITY, id: usize::MAX },
            AggOp::Sum => Value { x: 0.0, id: usize::MAX },
        }
    }

    pub fn combine(self, a: Value, b: Value) -> Value {
        match self {
            AggOp::Min => Value { x: a.x.min(b.x), id: usize::MAX },
            AggOp::Max => Value { x: a.x.max(b.x), id: usize::MAX },
            AggOp::Sum => Value { x: a.x + b.x, id: usize::MAX },
            AggOp::MinId => {
                if (b.x, b.id) < (a.x, a.id) {
                    b
                } else {
                    a
                }
            }
        }
    }

    /// Words needed to carry one value.
    pub fn value_words(self) -> usize {
        if self == AggOp::MinId {
            2
        } else {
            1
        }
    }
}

/// An aggregate value; `id` is only meaningful for [`AggOp::MinId`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Value {
    pub x: f64,
    pub id: usize,
}

impl Value {
    pub fn new(x: f64) -> Self {
        Self { x, id: usize::MAX }
    }

    pub fn with_id(x: f64, id: usize) -> Self {
        Self { x, id }
    }
}

/// Per-part inputs aligned with the partition: `inputs[p][j]` belongs to
/// node `parts[p][j]`.
pub type PartInputs = Vec<Vec<Value>>;

/// Sequential per-part fold; the correctness oracle for every path.
pub fn sequential_aggregate(inputs: &PartInputs, op: AggOp) -> Vec<Value> {
    inputs.iter().map(|vals| vals.iter().fold(op.identity(), |acc, &v| op.combine(acc, v))).collect()
}

pub(crate) fn check_inputs(partition: &Partition, inputs: &PartInputs) -> Result<(), AggError> {
    if partition.parts.len() != inputs.len() {
        return Err(AggError::BadInputs(format!("{} parts, {} input rows", partition.parts.len(), inputs.len())));
    }
    for (p, (part, vals)) in partition.parts.iter().zip(inputs).enumerate() {
        if part.len() != vals.len() {
            return Err(AggError::BadInputs(format!("part {p} has {} nodes, {} inputs", part.len(), vals.len())));
        }
    }
    Ok(())
}

/// What every node learned: `learned[u]` lists `(part, aggregate)` for each
/// part containing `u`, in ascending part order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggOutcome {
    pub learned: Vec<Vec<(usize, Value)>>,
    pub rounds: usize,
    #[serde(skip)]
    pub ledger: RoundLedger,
    pub notes: Vec<String>,
}

impl AggOutcome {
    /// The part aggregate as seen by its lowest-id member.
    pub fn per_part(&self, parts: usize) -> Vec<Option<Value>> {
        let mut out = vec![None; parts];
        for row in &self.learned {
            for &(p, v) in row {
                if out[p].is_none() {
                    out[p] = Some(v);
                }
            }
        }
        out
    }

    /// True iff every member of every part learned exactly the oracle value
    /// (sums within `sum_tol`).
    pub fn matches_oracle(&self, partition: &Partition, inputs: &PartInputs, op: AggOp, sum_tol: f64) -> bool {
        let truth = sequential_aggregate(inputs, op);
        let members = partition.memberships(self.learned.len());
        for (u, parts) in members.iter().enumerate() {
            let got = &self.learned[u];
            if got.len() != parts.len() {
                return false;
            }
            for (&p, &(q, v)) in parts.iter().zip(got) {
                if p != q || !value_eq(op, v, truth[p], sum_tol) {
                    return false;
                }
            }
        }
        true
    }
}

pub fn value_eq(op: AggOp, a: Value, b: Value, sum_tol: f64) -> bool {
    match op {
        AggOp::Sum => (a.x - b.x).abs() <= sum_tol * (1.0 + b.x.abs()),
        AggOp::MinId => a.x == b.x && a.id == b.id,
        AggOp::Min | AggOp::Max => a.x == b.x,
    }
}

/// Zero-round evaluation.
pub fn sequential_outcome(n: usize, partition: &Partition, inputs: &PartInputs, op: AggOp) -> AggOutcome {
    let truth = sequential_aggregate(inputs, op);
    let learned = partition
        .memberships(n)
        .into_iter()
        .map(|parts| parts.into_iter().map(|p| (p, truth[p])).collect())
        .collect();
    AggOutcome { learned, rounds: 0, ledger: RoundLedger::default(), notes: Vec::new() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggModel {
    Congest,
    Ncc,
    Hybrid,
    Sequential,
}

impl std::str::FromStr for AggModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sequential" | "oracle" | "sequential-oracle" => Ok(AggModel::Sequential),
            other => other.parse::<Model>().map(AggModel::from),
        }
    }
}

impl From<Model> for AggModel {
    fn from(m: Model) -> Self {
        match m {
            Model::Congest => AggModel::Congest,
            Model::Ncc => AggModel::Ncc,
            Model::Hybrid => AggModel::Hybrid,
        }
    }
}

/// Largest Ĝ_ρ the CONGEST path simulates before falling back to the host
/// baseline.
pub const GHAT_NODE_CAP: usize = 6000;

/// Uniform entry point: runs ρ-congested part-wise aggregation in the
/// configured model and measures its round cost `Q(ρ)`.
///
/// The protocols are oblivious to input values, so measured costs are cached
/// per partition.
#[derive(Debug)]
pub struct AggregationService {
    host: WeightedGraph,
    model: AggModel,
    provider: ProviderKind,
    decomposition: Option<TreeDecomposition>,
    net: NetConfig,
    cache: RefCell<HashMap<u64, AggProfile>>,
    notes: RefCell<Vec<String>>,
}

impl AggregationService {
    pub fn new(host: WeightedGraph, model: AggModel, net: NetConfig) -> Self {
        Self {
            host,
            model,
            provider: ProviderKind::Baseline,
            decomposition: None,
            net,
            cache: RefCell::new(HashMap::new()),
            notes: RefCell::new(Vec::new()),
        }
    }

    pub fn sequential(host: WeightedGraph) -> Self {
        Self::new(host, AggModel::Sequential, NetConfig::default())
    }

    pub fn with_provider(mut self, provider: ProviderKind, decomposition: Option<TreeDecomposition>) -> Self {
        self.provider = provider;
        self.decomposition = decomposition;
        self
    }

    pub fn host(&self) -> &WeightedGraph {
        &self.host
    }

    pub fn model(&self) -> AggModel {
        self.model
    }

    pub fn net(&self) -> &NetConfig {
        &self.net
    }

    pub fn notes(&self) -> Vec<String> {
        self.notes.borrow().clone()
    }

    /// Every member of every part learns its part's aggregate. `leaders`
    /// (one per part) are the NCC targets; they default to the minimum id.
    pub fn aggregate(
        &self,
        partition: &Partition,
        leaders: Option<&[usize]>,
        inputs: &PartInputs,
        op: AggOp,
    ) -> Result<AggOutcome, AggError> {
        check_inputs(partition, inputs)?;
        validate_partition(&self.host, partition, usize::MAX)?;
        let default_leaders: Vec<usize>;
        let leaders = match leaders {
            Some(l) => l,
            None => {
                default_leaders = partition.parts.iter().map(|p| *p.iter().min().unwrap()).collect();
                &default_leaders
            }
        };
        let out = match self.model {
            AggModel::Sequential => sequential_outcome(self.host.n(), partition, inputs, op),
            AggModel::Congest => {
                let size: usize = partition.multiplicity(self.host.n()).iter().map(|&m| m.max(1)).sum();
                if size > GHAT_NODE_CAP {
                    let mut out = baseline_congested_aggregation(&self.host, partition, inputs, op, &self.net)?;
                    out.notes.push(format!("augmented graph has {size} nodes; used host baseline"));
                    out
                } else {
                    let res = congested_aggregation_congest(
                        &self.host,
                        partition,
                        inputs,
                        op,
                        self.provider,
                        self.decomposition.as_ref(),
                        &self.net,
                    )?;
                    res.outcome
                }
            }
            AggModel::Ncc => congested_aggregation_ncc(Model::Ncc, &self.host, partition, leaders, inputs, op, &self.net)?.outcome,
            AggModel::Hybrid => {
                congested_aggregation_ncc(Model::Hybrid, &self.host, partition, leaders, inputs, op, &self.net)?.outcome
            }
        };
        self.notes.borrow_mut().extend(out.notes.iter().cloned());
        Ok(out)
    }

    /// Measured `Q` for this partition: rounds of one sum-aggregation.
    pub fn quality(&self, partition: &Partition, leaders: Option<&[usize]>) -> Result<usize, AggError> {
        Ok(self.profile(partition, leaders)?.rounds)
    }

    /// Rounds and messages of one sum-aggregation over `partition`.
    pub fn profile(&self, partition: &Partition, leaders: Option<&[usize]>) -> Result<AggProfile, AggError> {
        if self.model == AggModel::Sequential {
            return Ok(AggProfile::default());
        }
        let key = fingerprint(partition, leaders);
        if let Some(&p) = self.cache.borrow().get(&key) {
            return Ok(p);
        }
        let inputs: PartInputs = partition.parts.iter().map(|p| vec![Value::new(1.0); p.len()]).collect();
        let out = self.aggregate(partition, leaders, &inputs, AggOp::Sum)?;
        let s = out.ledger.summary();
        let p = AggProfile {
            rounds: out.rounds,
            rounds_local: s.rounds_local,
            rounds_global: s.rounds_global,
            msgs_local: s.msgs_local,
            msgs_global: s.msgs_global,
        };
        self.cache.borrow_mut().insert(key, p);
        Ok(p)
    }
}

/// Cost of one aggregation as measured by the simulator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggProfile {
    pub rounds: usize,
    pub rounds_local: usize,
    pub rounds_global: usize,
    pub msgs_local: usize,
    pub msgs_global: usize,
}

fn fingerprint(partition: &Partition, leaders: Option<&[usize]>) -> u64 {
    let mut h = DefaultHasher::new();
    partition.parts.hash(&mut h);
    leaders.hash(&mut h);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry() {
        assert_eq!(AggOp::from_name("MAX"), Ok(AggOp::Max));
        assert!(matches!(AggOp::from_name("avg"), Err(AggError::NonDistributive(_))));
        assert!(matches!(AggOp::from_name("xor"), Err(AggError::UnknownOp(_))));
        let a = Value::with_id(1.0, 7);
        let b = Value::with_id(1.0, 3);
        assert_eq!(AggOp::MinId.combine(a, b), b);
        assert_eq!(AggOp::Sum.combine(AggOp::Sum.identity(), Value::new(2.5)).x, 2.5);
    }

    #[test]
    fn sequential_service() {
        let g = WeightedGraph::unit(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let svc = AggregationService::sequential(g);
        let parts = Partition::new(vec![vec![0, 1, 2], vec![2, 3]]);
        let inputs = vec![vec![Value::new(1.0), Value::new(2.0), Value::new(3.0)], vec![Value::new(5.0), Value::new(7.0)]];
        let out = svc.aggregate(&parts, None, &inputs, AggOp::Sum).unwrap();
        assert_eq!(out.rounds, 0);
        assert!(out.matches_oracle(&parts, &inputs, AggOp::Sum, 0.0));
        assert_eq!(out.learned[2], vec![(0, Value::new(6.0)), (1, Value::new(12.0))]);
    }
}
