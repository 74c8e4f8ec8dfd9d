//! One tracing server: per-day stores of secret-shared records organised
//! in a space-partitioning tree, plus the server side of record comparison.
//!
//! The tree never holds a plaintext grid ID. Each entry keeps the grid-ID
//! share of the first record routed through it; later records are routed
//! by joint zero tests against that share, driven by the orchestrator.

pub mod snapshot;

use std::collections::{BTreeMap, HashMap};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::client::{Day, LocationReport, PseudoId, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::field::FieldElement;
use crate::mpc::{Dealer, Session, Shared};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Child {
    Node(u32),
    Leaf(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeEntry {
    pub representative: FieldElement,
    pub child: Child,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub level: usize,
    pub entries: Vec<TreeEntry>,
}

/// This server's shares of one stored message set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordEntry {
    pub pseudo_id: PseudoId,
    pub t: FieldElement,
    pub x: FieldElement,
    pub y: FieldElement,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LeafGroup {
    pub records: Vec<RecordEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordRef {
    pub day: Day,
    pub leaf: u32,
    pub slot: u32,
}

/// Where a report goes: the entry index matched at each depth from the
/// root. A plan shorter than the tree height creates new entries from
/// that depth down.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InsertPlan {
    pub day: Day,
    pub matched: Vec<usize>,
}

/// Structure of a store with every share value erased.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ShapeNode {
    Node(Vec<ShapeNode>),
    Leaf(Vec<PseudoId>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DayStore {
    day: Day,
    nodes: Vec<TreeNode>,
    leaves: Vec<LeafGroup>,
    index: HashMap<PseudoId, RecordRef>,
}

impl DayStore {
    fn new(day: Day, levels: usize) -> Self {
        DayStore {
            day,
            nodes: vec![TreeNode {
                level: levels,
                entries: Vec::new(),
            }],
            leaves: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn day(&self) -> Day {
        self.day
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: u32) -> &TreeNode {
        &self.nodes[id as usize]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn leaf(&self, id: u32) -> &LeafGroup {
        &self.leaves[id as usize]
    }

    pub fn leaves(&self) -> &[LeafGroup] {
        &self.leaves
    }

    pub fn record(&self, r: RecordRef) -> &RecordEntry {
        &self.leaves[r.leaf as usize].records[r.slot as usize]
    }

    pub fn get(&self, id: PseudoId) -> Option<RecordRef> {
        self.index.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index(&self) -> impl Iterator<Item = (PseudoId, RecordRef)> + '_ {
        self.index.iter().map(|(k, v)| (*k, *v))
    }

    pub fn shape(&self) -> ShapeNode {
        self.shape_of(Child::Node(0))
    }

    fn shape_of(&self, child: Child) -> ShapeNode {
        match child {
            Child::Node(n) => ShapeNode::Node(
                self.nodes[n as usize]
                    .entries
                    .iter()
                    .map(|e| self.shape_of(e.child))
                    .collect(),
            ),
            Child::Leaf(l) => ShapeNode::Leaf(self.leaves[l as usize].records.iter().map(|r| r.pseudo_id).collect()),
        }
    }

    /// Rebuilds a store from its parts, checking that the nodes form one
    /// tree of the given height whose leaves are each reached once.
    pub(crate) fn from_parts(day: Day, levels: usize, nodes: Vec<TreeNode>, leaves: Vec<LeafGroup>) -> Result<Self> {
        let bad = |m: &str| Err(Error::Snapshot(format!("day {day}: {m}")));
        if nodes.is_empty() || nodes[0].level != levels {
            return bad("missing or misplaced root");
        }
        let mut node_seen = vec![false; nodes.len()];
        let mut leaf_seen = vec![false; leaves.len()];
        let mut stack = vec![0u32];
        node_seen[0] = true;
        while let Some(n) = stack.pop() {
            let node = &nodes[n as usize];
            for e in &node.entries {
                match e.child {
                    Child::Node(c) if node.level > 1 => {
                        let Some(seen) = node_seen.get_mut(c as usize) else {
                            return bad("node index");
                        };
                        if *seen || nodes[c as usize].level + 1 != node.level {
                            return bad("bad node link");
                        }
                        *seen = true;
                        stack.push(c);
                    }
                    Child::Leaf(l) if node.level == 1 => {
                        let Some(seen) = leaf_seen.get_mut(l as usize) else {
                            return bad("leaf index");
                        };
                        if *seen {
                            return bad("leaf reached twice");
                        }
                        *seen = true;
                    }
                    _ => return bad("child kind does not match level"),
                }
            }
        }
        if node_seen.contains(&false) || leaf_seen.contains(&false) {
            return bad("unreachable nodes");
        }
        let mut index = HashMap::new();
        for (l, leaf) in leaves.iter().enumerate() {
            for (s, r) in leaf.records.iter().enumerate() {
                let rr = RecordRef {
                    day,
                    leaf: l as u32,
                    slot: s as u32,
                };
                if index.insert(r.pseudo_id, rr).is_some() {
                    return bad("duplicate pseudo ID");
                }
            }
        }
        Ok(DayStore {
            day,
            nodes,
            leaves,
            index,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TracingServer {
    index: usize,
    levels: usize,
    days: BTreeMap<Day, DayStore>,
}

impl TracingServer {
    /// `index` is this server's 0-based position; `levels` the tree height.
    pub fn new(index: usize, levels: usize) -> Self {
        TracingServer {
            index,
            levels,
            days: BTreeMap::new(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn day(&self, day: Day) -> Option<&DayStore> {
        self.days.get(&day)
    }

    pub fn days(&self) -> impl Iterator<Item = &DayStore> {
        self.days.values()
    }

    pub fn record_count(&self) -> usize {
        self.days.values().map(DayStore::len).sum()
    }

    pub fn contains(&self, id: PseudoId) -> bool {
        self.days.values().any(|d| d.index.contains_key(&id))
    }

    /// Checks a report can be stored here without changing anything.
    pub fn check_insertable(&self, report: &LocationReport) -> Result<()> {
        if report.server_index != self.index {
            return Err(Error::Protocol(format!(
                "report for server {} delivered to server {}",
                report.server_index, self.index
            )));
        }
        if report.gid_shares.len() != self.levels {
            return Err(Error::Protocol(format!(
                "{} grid-ID shares for a {}-level tree",
                report.gid_shares.len(),
                self.levels
            )));
        }
        if self.contains(report.pseudo_id) {
            return Err(Error::PseudoIdReuse(report.pseudo_id));
        }
        Ok(())
    }

    /// Shares of the representative at `entry` of node `node` on `day`.
    pub fn representative(&self, day: Day, node: u32, entry: usize) -> FieldElement {
        self.days[&day].nodes[node as usize].entries[entry].representative
    }

    /// Stores `report` along `plan`. Entries past the matched prefix are
    /// created with the report's own grid-ID shares as representatives.
    pub fn apply_insert(&mut self, report: &LocationReport, plan: &InsertPlan) -> Result<RecordRef> {
        self.check_insertable(report)?;
        let levels = self.levels;
        let store = self
            .days
            .entry(plan.day)
            .or_insert_with(|| DayStore::new(plan.day, levels));
        if plan.matched.len() > levels {
            return Err(Error::Protocol("insert plan deeper than the tree".into()));
        }
        let mut node = 0u32;
        let mut leaf = None;
        for depth in 0..levels {
            let level = levels - depth;
            let child = match plan.matched.get(depth) {
                Some(&e) => {
                    store.nodes[node as usize]
                        .entries
                        .get(e)
                        .ok_or_else(|| Error::Protocol(format!("plan entry {e} missing at level {level}")))?
                        .child
                }
                None => {
                    let child = if level == 1 {
                        store.leaves.push(LeafGroup::default());
                        Child::Leaf(store.leaves.len() as u32 - 1)
                    } else {
                        store.nodes.push(TreeNode {
                            level: level - 1,
                            entries: Vec::new(),
                        });
                        Child::Node(store.nodes.len() as u32 - 1)
                    };
                    store.nodes[node as usize].entries.push(TreeEntry {
                        representative: report.gid_share(level),
                        child,
                    });
                    child
                }
            };
            match child {
                Child::Node(n) => node = n,
                Child::Leaf(l) => leaf = Some(l),
            }
        }
        let leaf = leaf.expect("descent ends at a leaf");
        let group = &mut store.leaves[leaf as usize];
        group.records.push(RecordEntry {
            pseudo_id: report.pseudo_id,
            t: report.t_share,
            x: report.x_share,
            y: report.y_share,
        });
        let r = RecordRef {
            day: plan.day,
            leaf,
            slot: group.records.len() as u32 - 1,
        };
        store.index.insert(report.pseudo_id, r);
        Ok(r)
    }

    /// Every stored record under `id` on the given days, with its location.
    pub fn lookup_patient(&self, id: PseudoId, days: RangeInclusive<Day>) -> Vec<(RecordRef, &RecordEntry)> {
        self.days
            .range(days)
            .filter_map(|(_, store)| store.get(id).map(|r| (r, store.record(r))))
            .collect()
    }

    pub fn leaf_group(&self, r: RecordRef) -> &LeafGroup {
        self.days[&r.day].leaf(r.leaf)
    }

    /// Keeps only the days in `(today - retention, today]`.
    pub fn retire_old_days(&mut self, today: Day, retention: u32) -> Vec<Day> {
        let purged: Vec<Day> = self
            .days
            .keys()
            .copied()
            .filter(|&d| d as u64 + retention as u64 <= today as u64)
            .collect();
        for d in &purged {
            self.days.remove(d);
        }
        purged
    }

    pub fn shape(&self) -> Vec<(Day, ShapeNode)> {
        self.days.values().map(|d| (d.day, d.shape())).collect()
    }

    /// Every field element this server holds.
    pub fn field_values(&self) -> impl Iterator<Item = FieldElement> + '_ {
        self.days.values().flat_map(|d| {
            let reps = d.nodes.iter().flat_map(|n| n.entries.iter().map(|e| e.representative));
            let recs = d
                .leaves
                .iter()
                .flat_map(|l| l.records.iter().flat_map(|r| [r.t, r.x, r.y]));
            reps.chain(recs)
        })
    }

    pub(crate) fn insert_day(&mut self, store: DayStore) {
        self.days.insert(store.day, store);
    }
}

/// Which side of the patient's visit counts as exposure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeWindow {
    /// `|t_contact - t_patient| <= tau`.
    #[default]
    Symmetric,
    /// `t_contact - t_patient <= tau`, with no lower bound.
    OneSided,
}

/// The contact predicate's public parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContactPredicate {
    pub distance_cm: u64,
    pub tau_s: u32,
    pub window: TimeWindow,
}

impl ContactPredicate {
    /// The plaintext predicate the secure comparison computes.
    pub fn holds(&self, patient: (u32, u64, u64), candidate: (u32, u64, u64)) -> bool {
        let dx = candidate.1 as i128 - patient.1 as i128;
        let dy = candidate.2 as i128 - patient.2 as i128;
        let dt = candidate.0 as i64 - patient.0 as i64;
        let close = dx * dx + dy * dy <= (self.distance_cm as i128).pow(2);
        let timely = match self.window {
            TimeWindow::Symmetric => dt.abs() <= self.tau_s as i64,
            TimeWindow::OneSided => dt <= self.tau_s as i64,
        };
        close && timely
    }
}

fn gather(records: &[&RecordEntry], f: impl Fn(&RecordEntry) -> FieldElement) -> Shared {
    Shared::from_values(records.iter().map(|r| f(r)))
}

/// Jointly decides whether `candidate` is within the contact predicate of
/// `patient`. Each slice holds one record per server, in server order.
/// Only the final conjunction is opened.
pub fn compare_records<D: Dealer>(
    session: &mut Session<D>,
    patient: &[&RecordEntry],
    candidate: &[&RecordEntry],
    predicate: &ContactPredicate,
) -> Result<bool> {
    let n = session.parties();
    if patient.len() != n || candidate.len() != n {
        return Err(Error::Protocol(format!(
            "comparison needs {n} shares per record, got {} and {}",
            patient.len(),
            candidate.len()
        )));
    }
    if predicate.tau_s == 0 || predicate.tau_s >= SECONDS_PER_DAY {
        return Err(Error::InvalidInput(format!(
            "time window {} s out of range",
            predicate.tau_s
        )));
    }
    session.counters_mut().record_comparisons += 1;
    let dx = &gather(candidate, |r| r.x) - &gather(patient, |r| r.x);
    let dy = &gather(candidate, |r| r.y) - &gather(patient, |r| r.y);
    let dx2 = session.secure_mul(&dx, &dx)?;
    let dy2 = session.secure_mul(&dy, &dy)?;
    let d2 = &dx2 + &dy2;
    let limit = FieldElement::new(predicate.distance_cm * predicate.distance_cm + 1);
    let close = session.secure_less_than_bit(&d2, limit)?;

    // Shift the signed time gap into [1, 2 * day) so both bounds are
    // comparisons of small non-negative values.
    let day = FieldElement::from(SECONDS_PER_DAY);
    let shifted = (&gather(candidate, |r| r.t) - &gather(patient, |r| r.t)).add_public(day);
    let upper = FieldElement::from(SECONDS_PER_DAY + predicate.tau_s + 1);
    let timely = session.secure_less_than_bit(&shifted, upper)?;
    let mut result = session.secure_mul(&close, &timely)?;
    if predicate.window == TimeWindow::Symmetric {
        let lower = FieldElement::from(SECONDS_PER_DAY - predicate.tau_s);
        let below = session.secure_less_than_bit(&shifted, lower)?;
        let not_below = below.public_minus(FieldElement::ONE);
        result = session.secure_mul(&result, &not_below)?;
    }
    session.open_bit(&result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::{share, SeededDealer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn report(server: usize, id: u128, gids: &[u64]) -> LocationReport {
        LocationReport {
            day: 0,
            pseudo_id: PseudoId(id),
            server_index: server,
            t_share: FieldElement::new(1),
            x_share: FieldElement::new(2),
            y_share: FieldElement::new(3),
            gid_shares: gids.iter().map(|&g| FieldElement::new(g)).collect(),
        }
    }

    #[test]
    fn first_insert_builds_a_chain() {
        let mut s = TracingServer::new(0, 3);
        let r = s
            .apply_insert(
                &report(0, 1, &[5, 6, 7]),
                &InsertPlan {
                    day: 0,
                    matched: vec![],
                },
            )
            .unwrap();
        let store = s.day(0).unwrap();
        assert_eq!(store.root().entries.len(), 1);
        assert_eq!(store.nodes().len(), 3);
        assert_eq!(store.leaves().len(), 1);
        assert_eq!(store.leaf(r.leaf).records.len(), 1);
        assert_eq!(store.root().entries[0].representative, FieldElement::new(7));
    }

    #[test]
    fn full_match_appends_to_leaf() {
        let mut s = TracingServer::new(0, 2);
        s.apply_insert(
            &report(0, 1, &[5, 6]),
            &InsertPlan {
                day: 0,
                matched: vec![],
            },
        )
        .unwrap();
        let r = s
            .apply_insert(
                &report(0, 2, &[5, 6]),
                &InsertPlan {
                    day: 0,
                    matched: vec![0, 0],
                },
            )
            .unwrap();
        assert_eq!(r.slot, 1);
        assert_eq!(s.day(0).unwrap().root().entries.len(), 1);
        assert_eq!(
            s.day(0).unwrap().shape(),
            ShapeNode::Node(vec![ShapeNode::Node(vec![ShapeNode::Leaf(vec![
                PseudoId(1),
                PseudoId(2)
            ])])])
        );
    }

    #[test]
    fn partial_match_branches() {
        let mut s = TracingServer::new(0, 2);
        s.apply_insert(
            &report(0, 1, &[5, 6]),
            &InsertPlan {
                day: 0,
                matched: vec![],
            },
        )
        .unwrap();
        s.apply_insert(
            &report(0, 2, &[8, 6]),
            &InsertPlan {
                day: 0,
                matched: vec![0],
            },
        )
        .unwrap();
        let store = s.day(0).unwrap();
        assert_eq!(store.node(1).entries.len(), 2);
        assert_eq!(store.leaves().len(), 2);
    }

    #[test]
    fn reused_pseudo_id_leaves_store_unchanged() {
        let mut s = TracingServer::new(0, 2);
        s.apply_insert(
            &report(0, 1, &[5, 6]),
            &InsertPlan {
                day: 0,
                matched: vec![],
            },
        )
        .unwrap();
        let before = s.clone();
        let mut again = report(0, 1, &[5, 6]);
        again.day = 3;
        assert!(matches!(
            s.apply_insert(
                &again,
                &InsertPlan {
                    day: 3,
                    matched: vec![]
                }
            ),
            Err(Error::PseudoIdReuse(_))
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn malformed_reports_rejected() {
        let s = TracingServer::new(1, 2);
        assert!(matches!(
            s.check_insertable(&report(0, 1, &[1, 2])),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            s.check_insertable(&report(1, 1, &[1])),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn lookup_across_days() {
        let mut s = TracingServer::new(0, 2);
        assert!(s.lookup_patient(PseudoId(9), 0..=10).is_empty());
        for day in 0..3 {
            let mut r = report(0, 100 + day as u128, &[1, 2]);
            r.day = day;
            s.apply_insert(&r, &InsertPlan { day, matched: vec![] }).unwrap();
        }
        assert_eq!(s.lookup_patient(PseudoId(101), 0..=10).len(), 1);
        assert!(s.lookup_patient(PseudoId(101), 2..=10).is_empty());
        let found = s.lookup_patient(PseudoId(100), 0..=0);
        assert_eq!(found[0].1.pseudo_id, PseudoId(100));
        assert_eq!(s.leaf_group(found[0].0).records.len(), 1);
    }

    #[test]
    fn retirement_window() {
        let build = |days: std::ops::Range<u32>| {
            let mut s = TracingServer::new(0, 2);
            for day in days {
                let mut r = report(0, day as u128, &[1, 2]);
                r.day = day;
                s.apply_insert(&r, &InsertPlan { day, matched: vec![] }).unwrap();
            }
            s
        };
        let mut s = build(0..15);
        assert_eq!(s.retire_old_days(14, 14), vec![0]);
        assert!(s.retire_old_days(14, 14).is_empty());
        assert_eq!(s.days().count(), 14);
        let mut s = build(1..15);
        assert!(s.retire_old_days(14, 14).is_empty());
        assert!(!s.contains(PseudoId(0)));
    }

    fn shared_record(id: u128, t: u32, x: u64, y: u64, rng: &mut ChaCha8Rng) -> Vec<RecordEntry> {
        let t = share(FieldElement::from(t), 3, rng).unwrap();
        let x = share(FieldElement::new(x), 3, rng).unwrap();
        let y = share(FieldElement::new(y), 3, rng).unwrap();
        (0..3)
            .map(|i| RecordEntry {
                pseudo_id: PseudoId(id),
                t: t.values()[i],
                x: x.values()[i],
                y: y.values()[i],
            })
            .collect()
    }

    fn secure_check(
        session: &mut Session<SeededDealer>,
        pred: &ContactPredicate,
        p: (u32, u64, u64),
        c: (u32, u64, u64),
        rng: &mut ChaCha8Rng,
    ) -> bool {
        let a = shared_record(1, p.0, p.1, p.2, rng);
        let b = shared_record(2, c.0, c.1, c.2, rng);
        let a: Vec<&RecordEntry> = a.iter().collect();
        let b: Vec<&RecordEntry> = b.iter().collect();
        compare_records(session, &a, &b, pred).unwrap()
    }

    fn session(seed: u64) -> Session<SeededDealer> {
        Session::new(SeededDealer::new(3, seed).unwrap(), seed + 1)
    }

    #[test]
    fn comparison_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = session(2);
        let pred = ContactPredicate {
            distance_cm: 200,
            tau_s: 3600,
            window: TimeWindow::Symmetric,
        };
        let base = (40_000, 10_000, 10_000);
        let cases = [
            ((40_000, 10_000, 10_000), true),
            ((40_000, 10_200, 10_000), true),
            ((40_000, 10_201, 10_000), false),
            ((40_000, 10_120, 10_160), true),
            ((40_000, 10_121, 10_160), false),
            ((43_600, 10_000, 10_000), true),
            ((43_601, 10_000, 10_000), false),
            ((36_400, 10_000, 10_000), true),
            ((36_399, 10_000, 10_000), false),
            ((40_000, 9_800, 10_000), true),
            ((40_000, 9_799, 10_000), false),
        ];
        for (c, want) in cases {
            assert_eq!(secure_check(&mut s, &pred, base, c, &mut rng), want, "{c:?}");
            assert_eq!(pred.holds(base, c), want);
        }
        let one_sided = ContactPredicate {
            window: TimeWindow::OneSided,
            ..pred
        };
        assert!(secure_check(&mut s, &one_sided, base, (100, 10_000, 10_000), &mut rng));
        assert!(!secure_check(
            &mut s,
            &one_sided,
            base,
            (43_601, 10_000, 10_000),
            &mut rng
        ));
        assert_eq!(s.counters().record_comparisons, cases.len() as u64 + 2);
    }

    #[test]
    fn comparison_matches_plaintext_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = session(4);
        let pred = ContactPredicate {
            distance_cm: 400,
            tau_s: 3600,
            window: TimeWindow::Symmetric,
        };
        let side = 1u64 << 28;
        for i in 0..3000 {
            let p = (
                rng.gen_range(0..SECONDS_PER_DAY),
                rng.gen_range(0..=side),
                rng.gen_range(0..=side),
            );
            // mostly near pairs so both outcomes are exercised
            let c = if i % 4 == 0 {
                (
                    rng.gen_range(0..SECONDS_PER_DAY),
                    rng.gen_range(0..=side),
                    rng.gen_range(0..=side),
                )
            } else {
                (
                    (p.0 as i64 + rng.gen_range(-5000..5000)).clamp(0, SECONDS_PER_DAY as i64 - 1) as u32,
                    (p.1 as i64 + rng.gen_range(-500..500)).clamp(0, side as i64) as u64,
                    (p.2 as i64 + rng.gen_range(-500..500)).clamp(0, side as i64) as u64,
                )
            };
            assert_eq!(
                secure_check(&mut s, &pred, p, c, &mut rng),
                pred.holds(p, c),
                "{p:?} {c:?}"
            );
        }
    }

    #[test]
    fn only_the_conjunction_is_opened() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = session(6).with_trace(true);
        let pred = ContactPredicate {
            distance_cm: 200,
            tau_s: 3600,
            window: TimeWindow::Symmetric,
        };
        let before = s.counters();
        secure_check(&mut s, &pred, (0, 0, 0), (0, 0, 0), &mut rng);
        let used = s.counters() - before;
        // every opening except the last one is a masked multiplication or
        // a masked comparison value
        assert_eq!(used.openings, 2 * used.multiplications + used.less_than_tests + 1);
        assert_eq!(s.trace().openings().last().unwrap().1, FieldElement::ONE);
    }

    #[test]
    fn mismatched_share_counts_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = session(8);
        let a = shared_record(1, 0, 0, 0, &mut rng);
        let pred = ContactPredicate {
            distance_cm: 200,
            tau_s: 3600,
            window: TimeWindow::Symmetric,
        };
        let two: Vec<&RecordEntry> = a.iter().take(2).collect();
        let three: Vec<&RecordEntry> = a.iter().collect();
        assert!(matches!(
            compare_records(&mut s, &two, &three, &pred),
            Err(Error::Protocol(_))
        ));
    }
}
