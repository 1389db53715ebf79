//! Round accounting for the numerical pipeline.
//!
//! Numerical stages run in-process; each stage is charged the number of
//! part-wise aggregations its distributed counterpart needs, times the
//! measured cost `Q` of one aggregation over the current super-nodes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggError, AggProfile, AggregationService};
use crate::minors::MinorDistribution;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub rounds: u64,
    pub aggregations: u64,
    /// Rounds in which the local (resp. global) channel was used.
    pub rounds_local: u64,
    pub rounds_global: u64,
    pub msgs_local: u64,
    pub msgs_global: u64,
}

impl StageCost {
    fn add(&mut self, o: &StageCost) {
        self.rounds += o.rounds;
        self.aggregations += o.aggregations;
        self.rounds_local += o.rounds_local;
        self.rounds_global += o.rounds_global;
        self.msgs_local += o.msgs_local;
        self.msgs_global += o.msgs_global;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub stages: BTreeMap<String, StageCost>,
    pub solver_calls: u64,
    pub notes: Vec<String>,
}

impl CostLedger {
    /// Charges `aggregations` aggregations of measured cost `q` each.
    pub fn charge(&mut self, stage: &str, aggregations: u64, q: AggProfile) {
        let a = aggregations;
        self.stages.entry(stage.to_string()).or_default().add(&StageCost {
            rounds: a * q.rounds as u64,
            aggregations: a,
            rounds_local: a * q.rounds_local as u64,
            rounds_global: a * q.rounds_global as u64,
            msgs_local: a * q.msgs_local as u64,
            msgs_global: a * q.msgs_global as u64,
        });
    }

    /// Charges neighbour-exchange rounds on the local channel.
    pub fn add_rounds(&mut self, stage: &str, rounds: u64) {
        let s = self.stages.entry(stage.to_string()).or_default();
        s.rounds += rounds;
        s.rounds_local += rounds;
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn absorb(&mut self, other: &CostLedger) {
        for (k, v) in &other.stages {
            self.stages.entry(k.clone()).or_default().add(v);
        }
        self.solver_calls += other.solver_calls;
        self.notes.extend(other.notes.iter().cloned());
    }

    pub fn total_rounds(&self) -> u64 {
        self.stages.values().map(|s| s.rounds).sum()
    }

    pub fn total(&self) -> StageCost {
        let mut t = StageCost::default();
        for s in self.stages.values() {
            t.add(s);
        }
        t
    }

    pub fn rounds(&self, stage: &str) -> u64 {
        self.stages.get(stage).map_or(0, |s| s.rounds)
    }
}

/// Measured cost of one aggregation over the super-nodes of `d`; at least
/// one round, since even singleton parts exchange with their neighbours.
pub fn aggregation_cost(service: &AggregationService, d: Option<&MinorDistribution>) -> Result<AggProfile, AggError> {
    let floor = AggProfile { rounds: 1, rounds_local: 1, ..AggProfile::default() };
    match d {
        Some(d) => {
            let p = service.profile(&d.partition(), Some(&d.leaders))?;
            Ok(if p.rounds == 0 { floor } else { p })
        }
        None => Ok(floor),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(rounds: usize) -> AggProfile {
        AggProfile { rounds, rounds_local: rounds, msgs_local: 10 * rounds, ..AggProfile::default() }
    }

    #[test]
    fn charges_accumulate() {
        let mut a = CostLedger::default();
        a.charge("tree", 3, q(5));
        a.add_rounds("tree", 1);
        let mut b = CostLedger::default();
        b.charge("tree", 1, q(2));
        b.charge("walks", 2, q(2));
        b.solver_calls = 4;
        a.absorb(&b);
        assert_eq!(a.rounds("tree"), 18);
        assert_eq!(a.stages["tree"].aggregations, 4);
        assert_eq!(a.total_rounds(), 22);
        assert_eq!(a.solver_calls, 4);
        assert_eq!(a.total().msgs_local, 10 * 21);
        assert_eq!(a.total().rounds_local, 22);
    }
}
