use serde::Serialize;

use super::PartyId;
use crate::field::FieldElement;

/// One value sent from one party to another during an opening round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub round: u64,
    pub sender: PartyId,
    pub receiver: PartyId,
    pub value: FieldElement,
}

/// Record of everything the parties exchanged. Recording is off by default;
/// the round counter always advances so traces of enabled and disabled runs
/// stay comparable.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProtocolTrace {
    enabled: bool,
    round: u64,
    entries: Vec<TraceEntry>,
    openings: Vec<(u64, FieldElement)>,
}

impl ProtocolTrace {
    pub fn new(enabled: bool) -> Self {
        ProtocolTrace {
            enabled,
            ..Default::default()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.enabled = enabled;
    }

    pub fn rounds(&self) -> u64 {
        self.round
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    /// Opened (public) values with the round they were opened in.
    pub fn openings(&self) -> &[(u64, FieldElement)] {
        &self.openings
    }

    /// Every value `party` received from its peers, in order.
    pub fn received_by(&self, party: PartyId) -> impl Iterator<Item = FieldElement> + '_ {
        self.entries
            .iter()
            .filter(move |e| e.receiver == party)
            .map(|e| e.value)
    }

    pub(crate) fn next_round(&mut self) -> u64 {
        self.round += 1;
        self.round
    }

    pub(crate) fn record_broadcast(&mut self, round: u64, shares: &[FieldElement], opened: FieldElement) {
        if !self.enabled {
            return;
        }
        for (sender, &value) in shares.iter().enumerate() {
            for receiver in (0..shares.len()).filter(|&r| r != sender) {
                self.entries.push(TraceEntry {
                    round,
                    sender: PartyId(sender),
                    receiver: PartyId(receiver),
                    value,
                });
            }
        }
        self.openings.push((round, opened));
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.openings.clear();
    }
}

/// Operation counts for one session; the machine-independent cost metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpCounters {
    pub multiplications: u64,
    pub openings: u64,
    pub eq_zero_tests: u64,
    pub less_than_tests: u64,
    pub record_comparisons: u64,
}

impl std::ops::AddAssign for OpCounters {
    fn add_assign(&mut self, o: Self) {
        self.multiplications += o.multiplications;
        self.openings += o.openings;
        self.eq_zero_tests += o.eq_zero_tests;
        self.less_than_tests += o.less_than_tests;
        self.record_comparisons += o.record_comparisons;
    }
}

impl std::ops::Sub for OpCounters {
    type Output = OpCounters;
    fn sub(self, o: Self) -> Self {
        OpCounters {
            multiplications: self.multiplications - o.multiplications,
            openings: self.openings - o.openings,
            eq_zero_tests: self.eq_zero_tests - o.eq_zero_tests,
            less_than_tests: self.less_than_tests - o.less_than_tests,
            record_comparisons: self.record_comparisons - o.record_comparisons,
        }
    }
}
