//! Plaintext brute-force tracing over ground-truth stays, used to check
//! the secure protocol's answers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::client::{Day, StayPoint};
use crate::error::Result;
use crate::grid::PlanarPoint;
use crate::orchestrator::{GenerationWindow, QueryParams};
use crate::registry::RealId;
use crate::server::TimeWindow;

/// Every user's stays, indexed by day (sorted by time) and by user.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StayTable {
    today: Day,
    retention_days: u32,
    by_day: BTreeMap<Day, Vec<(u32, RealId, PlanarPoint)>>,
    by_user: HashMap<RealId, Vec<(Day, StayPoint)>>,
    len: usize,
}

/// One CSV row of ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StayRow {
    pub user_id: RealId,
    pub day: Day,
    pub t_seconds: u32,
    pub x_cm: u64,
    pub y_cm: u64,
}

impl StayTable {
    /// An empty table whose latest closed day is `today`, with stores kept
    /// for `retention_days`.
    pub fn new(today: Day, retention_days: u32) -> Self {
        StayTable {
            today,
            retention_days: retention_days.max(1),
            ..Default::default()
        }
    }

    pub fn today(&self) -> Day {
        self.today
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn extend(&mut self, user: RealId, day: Day, stays: &[StayPoint]) {
        let row = self.by_day.entry(day).or_default();
        let mine = self.by_user.entry(user).or_default();
        for s in stays {
            row.push((s.t, user, s.p));
            mine.push((day, *s));
        }
        self.len += stays.len();
    }

    /// Sorts the indexes; call after the last [`Self::extend`].
    pub fn finish(&mut self) {
        for row in self.by_day.values_mut() {
            row.sort_unstable_by_key(|e| (e.0, e.1, e.2.x, e.2.y));
        }
        for mine in self.by_user.values_mut() {
            mine.sort_unstable_by_key(|(d, s)| (*d, s.t, s.p.x, s.p.y));
        }
    }

    pub fn users(&self) -> impl Iterator<Item = RealId> + '_ {
        self.by_user.keys().copied()
    }

    pub fn stays_of(&self, user: RealId) -> &[(Day, StayPoint)] {
        self.by_user.get(&user).map_or(&[], Vec::as_slice)
    }

    /// Days the servers still hold and the query covers.
    pub fn window(&self, params: &QueryParams) -> (Day, Day) {
        let keep = (self.today + 1).saturating_sub(self.retention_days);
        let start = (self.today + 1).saturating_sub(params.incubation_days).max(keep);
        (start, self.today)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (day, row) in &self.by_day {
            for &(t, user, p) in row {
                out.serialize(StayRow {
                    user_id: user,
                    day: *day,
                    t_seconds: t,
                    x_cm: p.x,
                    y_cm: p.y,
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, today: Day, retention_days: u32) -> Result<Self> {
        let mut table = StayTable::new(today, retention_days);
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        for row in reader.deserialize() {
            let row: StayRow = row?;
            table.extend(
                row.user_id,
                row.day,
                &[StayPoint {
                    t: row.t_seconds,
                    p: PlanarPoint::new(row.x_cm, row.y_cm),
                }],
            );
        }
        table.finish();
        Ok(table)
    }
}

fn in_contact(params: &QueryParams, patient: (u32, PlanarPoint), other: (u32, PlanarPoint)) -> bool {
    let dx = patient.1.x as i128 - other.1.x as i128;
    let dy = patient.1.y as i128 - other.1.y as i128;
    if dx * dx + dy * dy > (params.distance_cm as i128) * (params.distance_cm as i128) {
        return false;
    }
    let lag = other.0 as i64 - patient.0 as i64;
    match params.time_window {
        TimeWindow::Symmetric => lag.abs() <= params.tau_s as i64,
        TimeWindow::OneSided => lag <= params.tau_s as i64,
    }
}

/// Users first reached in each generation of a trace from `patient`,
/// mapped to that generation (1 for direct contacts). The patient is not
/// included.
pub fn oracle_trace(table: &StayTable, patient: RealId, params: &QueryParams) -> BTreeMap<RealId, u32> {
    let (start, end) = table.window(params);
    let mut reached: HashSet<RealId> = HashSet::from([patient]);
    let mut out = BTreeMap::new();
    let mut frontier: Vec<(RealId, Day)> = vec![(patient, start)];
    let mut generation = 1;
    while !frontier.is_empty() && params.max_generations.is_none_or(|m| generation <= m) {
        let mut exposed: BTreeMap<RealId, Day> = BTreeMap::new();
        for &(user, from) in &frontier {
            for &(day, s) in table.stays_of(user) {
                if day < from || day > end {
                    continue;
                }
                let Some(row) = table.by_day.get(&day) else { continue };
                // One-sided windows have no lower bound on the other visit.
                let earliest = match params.time_window {
                    TimeWindow::Symmetric => s.t.saturating_sub(params.tau_s),
                    TimeWindow::OneSided => 0,
                };
                let latest = s.t.saturating_add(params.tau_s);
                let lo = row.partition_point(|e| e.0 < earliest);
                for &(t, other, p) in row[lo..].iter().take_while(|e| e.0 <= latest) {
                    if other != user && in_contact(params, (s.t, s.p), (t, p)) {
                        let d = exposed.entry(other).or_insert(day);
                        *d = (*d).min(day);
                    }
                }
            }
        }
        let mut next = Vec::new();
        for (user, day) in exposed {
            if reached.insert(user) {
                out.insert(user, generation);
                let from = match params.generation_window {
                    GenerationWindow::SeedPatient => start,
                    GenerationWindow::SinceExposure => day,
                };
                next.push((user, from));
            }
        }
        frontier = next;
        generation += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::workload::{generate_workload, WorkloadSpec};

    fn stay(t: u32, x: u64, y: u64) -> StayPoint {
        StayPoint {
            t,
            p: PlanarPoint::new(x, y),
        }
    }

    fn params() -> QueryParams {
        QueryParams::new(200, 3600, 7)
    }

    fn table(rows: &[(RealId, Day, StayPoint)]) -> StayTable {
        let mut t = StayTable::new(6, 7);
        for &(u, d, s) in rows {
            t.extend(u, d, &[s]);
        }
        t.finish();
        t
    }

    #[test]
    fn isolated_patient_finds_nobody() {
        let t = table(&[(1, 3, stay(1000, 5000, 5000)), (2, 3, stay(1000, 50_000, 5000))]);
        assert!(oracle_trace(&t, 1, &params()).is_empty());
    }

    #[test]
    fn same_point_same_time_is_mutual() {
        let t = table(&[(1, 3, stay(30_000, 5000, 5000)), (2, 3, stay(30_000, 5000, 5000))]);
        assert_eq!(oracle_trace(&t, 1, &params()), BTreeMap::from([(2, 1)]));
        assert_eq!(oracle_trace(&t, 2, &params()), BTreeMap::from([(1, 1)]));
    }

    #[test]
    fn boundaries_and_days() {
        let p = params();
        let t = table(&[
            (1, 3, stay(30_000, 5000, 5000)),
            (2, 3, stay(33_600, 5200, 5000)),
            (3, 3, stay(33_601, 5000, 5000)),
            (4, 3, stay(30_000, 5000, 5201)),
            (5, 4, stay(30_000, 5000, 5000)),
        ]);
        assert_eq!(oracle_trace(&t, 1, &p), BTreeMap::from([(2, 1), (3, 2)]));
        let mut direct = p;
        direct.max_generations = Some(1);
        assert_eq!(oracle_trace(&t, 1, &direct), BTreeMap::from([(2, 1)]));
        let mut one_sided = p;
        one_sided.time_window = TimeWindow::OneSided;
        assert_eq!(oracle_trace(&t, 3, &one_sided), BTreeMap::from([(1, 1), (2, 1)]));
    }

    #[test]
    fn chain_generations_and_window() {
        let rows = [
            (1, 0, stay(30_000, 5000, 5000)),
            (2, 0, stay(30_000, 5000, 5000)),
            (2, 5, stay(30_000, 9000, 9000)),
            (3, 5, stay(30_000, 9000, 9000)),
            (3, 1, stay(60_000, 100, 100)),
            (4, 1, stay(60_000, 100, 100)),
        ];
        let t = table(&rows);
        let p = params();
        assert_eq!(oracle_trace(&t, 1, &p), BTreeMap::from([(2, 1), (3, 2), (4, 3)]));
        let mut since = p;
        since.generation_window = GenerationWindow::SinceExposure;
        assert_eq!(oracle_trace(&t, 1, &since), BTreeMap::from([(2, 1), (3, 2)]));
        let mut capped = p;
        capped.max_generations = Some(2);
        assert_eq!(oracle_trace(&t, 1, &capped), BTreeMap::from([(2, 1), (3, 2)]));
        let mut short = p;
        short.incubation_days = 6;
        assert!(oracle_trace(&t, 1, &short).is_empty());
    }

    #[test]
    fn first_generation_is_symmetric() {
        let mut spec = WorkloadSpec::new(300, 2, 10, 5, QueryParams::new(400, 3600, 7));
        spec.geography.side_cm = 20_000;
        spec.geography.hotspot_sigma_cm = 1500.0;
        let w = generate_workload(&spec).unwrap();
        let mut p = spec.query;
        p.max_generations = Some(1);
        let traces: HashMap<RealId, BTreeMap<RealId, u32>> =
            (0..spec.users).map(|u| (u, oracle_trace(&w.stays, u, &p))).collect();
        let mut pairs = 0;
        for (a, found) in &traces {
            for b in found.keys() {
                assert!(traces[b].contains_key(a), "{a} finds {b} but not back");
                pairs += 1;
            }
        }
        assert!(pairs > 10, "instance too sparse: {pairs}");
    }

    #[test]
    fn csv_roundtrip() {
        let t = table(&[(1, 3, stay(1000, 5000, 5000)), (2, 4, stay(7, 8, 9))]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(StayTable::read_csv(&buf[..], 6, 7).unwrap(), t);
    }
}
