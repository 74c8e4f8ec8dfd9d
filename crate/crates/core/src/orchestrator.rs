//! Drives the servers through joint protocol rounds: lockstep insertion,
//! contact queries and the generation-by-generation trace.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::client::{flush, Day, DayBatches, LocationReport, PseudoId, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::mpc::{Dealer, OpCounters, Session, Shared};
use crate::registry::Subscriber;
use crate::server::{
    compare_records, Child, ContactPredicate, InsertPlan, RecordEntry, RecordRef, TimeWindow, TracingServer,
};
use crate::transport::{Receipt, SimTransport};

/// Which days a contact found in a later generation is searched over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationWindow {
    /// The first patient's incubation window, for every generation.
    #[default]
    SeedPatient,
    /// The first patient's window, from the day the contact was exposed.
    SinceExposure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryParams {
    pub distance_cm: u64,
    pub tau_s: u32,
    pub incubation_days: u32,
    #[serde(default)]
    pub max_generations: Option<u32>,
    #[serde(default)]
    pub time_window: TimeWindow,
    #[serde(default)]
    pub generation_window: GenerationWindow,
}

impl QueryParams {
    pub fn new(distance_cm: u64, tau_s: u32, incubation_days: u32) -> Self {
        QueryParams {
            distance_cm,
            tau_s,
            incubation_days,
            max_generations: None,
            time_window: TimeWindow::default(),
            generation_window: GenerationWindow::default(),
        }
    }

    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        if self.distance_cm == 0 {
            return Err(Error::InvalidInput("infectious distance must be positive".into()));
        }
        if self.tau_s == 0 || self.tau_s >= SECONDS_PER_DAY {
            return Err(Error::InvalidInput(format!(
                "time window {} s out of range",
                self.tau_s
            )));
        }
        if self.incubation_days == 0 {
            return Err(Error::InvalidInput("incubation period must be at least one day".into()));
        }
        grid.check_distance(self.distance_cm)
    }

    pub fn predicate(&self) -> ContactPredicate {
        ContactPredicate {
            distance_cm: self.distance_cm,
            tau_s: self.tau_s,
            window: self.time_window,
        }
    }
}

/// Identified tokens with the generation each was first found in.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceResult {
    entries: Vec<(PseudoId, u32)>,
}

impl TraceResult {
    pub fn entries(&self) -> &[(PseudoId, u32)] {
        &self.entries
    }

    pub fn ids(&self) -> Vec<PseudoId> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn generation_of(&self, id: PseudoId) -> Option<u32> {
        self.entries.iter().find(|e| e.0 == id).map(|e| e.1)
    }

    pub fn generations(&self) -> u32 {
        self.entries.iter().map(|e| e.1).max().unwrap_or(0)
    }

    /// CSV rows `pseudo_id, generation`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["pseudo_id", "generation"])?;
        for (id, g) in &self.entries {
            out.write_record([id.to_string(), g.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Outcome of feeding the servers' inboxes into their stores.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub inserted: usize,
    pub rejected: Vec<(PseudoId, String)>,
}

/// Per-query work, for cost accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub patient_records: u64,
    pub leaf_candidates: u64,
    pub counters: OpCounters,
}

pub struct PartySet<D: Dealer> {
    servers: Vec<TracingServer>,
    session: Session<D>,
    transport: SimTransport,
    grid: GridConfig,
    retention_days: u32,
    today: Option<Day>,
    last_query: QueryStats,
}

impl<D: Dealer> PartySet<D> {
    pub fn new(grid: GridConfig, dealer: D, seed: u64, retention_days: u32) -> Result<Self> {
        let n = dealer.parties();
        if n < 2 {
            return Err(Error::InvalidPartyCount(n));
        }
        grid.validate()?;
        let servers = (0..n).map(|i| TracingServer::new(i, grid.levels)).collect();
        Ok(PartySet {
            servers,
            session: Session::new(dealer, seed),
            transport: SimTransport::new(n, seed ^ 0x7472_616e_7370_6f72),
            grid,
            retention_days: retention_days.max(1),
            today: None,
            last_query: QueryStats::default(),
        })
    }

    /// Resumes from restored server states.
    pub fn from_servers(
        grid: GridConfig,
        servers: Vec<TracingServer>,
        dealer: D,
        seed: u64,
        retention_days: u32,
    ) -> Result<Self> {
        let mut party = PartySet::new(grid, dealer, seed, retention_days)?;
        if servers.len() != party.servers.len() {
            return Err(Error::InvalidPartyCount(servers.len()));
        }
        for (i, s) in servers.iter().enumerate() {
            if s.index() != i || s.levels() != party.grid.levels {
                return Err(Error::Snapshot(format!("server {i} does not fit this party set")));
            }
            if s.shape() != servers[0].shape() {
                return Err(Error::Snapshot(format!("server {i} tree differs from server 0")));
            }
        }
        party.today = servers[0].days().map(|d| d.day()).max();
        party.servers = servers;
        Ok(party)
    }

    pub fn with_transport(mut self, transport: SimTransport) -> Self {
        self.transport = transport;
        self
    }

    pub fn parties(&self) -> usize {
        self.servers.len()
    }

    pub fn servers(&self) -> &[TracingServer] {
        &self.servers
    }

    pub fn session(&self) -> &Session<D> {
        &self.session
    }

    pub fn session_mut(&mut self) -> &mut Session<D> {
        &mut self.session
    }

    pub fn counters(&self) -> OpCounters {
        self.session.counters()
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn today(&self) -> Option<Day> {
        self.today
    }

    pub fn retention_days(&self) -> u32 {
        self.retention_days
    }

    pub fn transport_mut(&mut self) -> &mut SimTransport {
        &mut self.transport
    }

    pub fn last_query(&self) -> QueryStats {
        self.last_query
    }

    /// Client side of the end-of-day upload.
    pub fn submit(&mut self, batches: DayBatches) -> Result<Vec<Receipt>> {
        flush(batches, &mut self.transport)
    }

    /// Inserts everything waiting in the inboxes, in server 0's arrival
    /// order, matching the other servers' parts by pseudo ID. Reports that
    /// cannot be inserted are listed and skipped.
    pub fn process_inboxes(&mut self) -> Result<IngestSummary> {
        let n = self.parties();
        let lead = self.transport.drain(0);
        let mut others: Vec<HashMap<PseudoId, VecDeque<LocationReport>>> = Vec::with_capacity(n - 1);
        for s in 1..n {
            let mut by_id: HashMap<PseudoId, VecDeque<LocationReport>> = HashMap::new();
            for r in self.transport.drain(s) {
                by_id.entry(r.pseudo_id).or_default().push_back(r);
            }
            others.push(by_id);
        }
        let mut summary = IngestSummary::default();
        for r0 in lead {
            let id = r0.pseudo_id;
            let mut parts = vec![r0];
            for by_id in &mut others {
                if let Some(r) = by_id.get_mut(&id).and_then(VecDeque::pop_front) {
                    parts.push(r);
                }
            }
            if parts.len() != n {
                summary.rejected.push((id, "missing shares from some servers".into()));
                continue;
            }
            match self.run_insert(&parts) {
                Ok(_) => summary.inserted += 1,
                Err(e) => summary.rejected.push((id, e.to_string())),
            }
        }
        for by_id in others {
            for (id, rest) in by_id {
                if !rest.is_empty() {
                    summary.rejected.push((id, "no matching share at server 0".into()));
                }
            }
        }
        Ok(summary)
    }

    /// Closes `today`: later queries search the window ending here, and
    /// stores older than the retention period are dropped.
    pub fn end_day(&mut self, today: Day) -> Vec<Day> {
        self.today = Some(self.today.map_or(today, |t| t.max(today)));
        let mut purged = Vec::new();
        for s in &mut self.servers {
            purged = s.retire_old_days(today, self.retention_days);
        }
        purged
    }

    /// Inserts one message set, one part per server. All servers run the
    /// same zero tests and take the same structural action; a report any
    /// server rejects changes nothing anywhere.
    pub fn run_insert(&mut self, reports: &[LocationReport]) -> Result<RecordRef> {
        let n = self.parties();
        if reports.len() != n {
            return Err(Error::Protocol(format!("{} parts for {n} servers", reports.len())));
        }
        let (id, day) = (reports[0].pseudo_id, reports[0].day);
        for (s, r) in self.servers.iter().zip(reports) {
            if r.pseudo_id != id || r.day != day {
                return Err(Error::Protocol("parts of one message set disagree".into()));
            }
            s.check_insertable(r)?;
        }
        let plan = self.plan_insert(reports)?;
        let mut placed = None;
        for (s, r) in self.servers.iter_mut().zip(reports) {
            let at = s.apply_insert(r, &plan)?;
            if *placed.get_or_insert(at) != at {
                return Err(Error::Protocol("servers placed a record differently".into()));
            }
        }
        Ok(placed.expect("at least two servers"))
    }

    fn plan_insert(&mut self, reports: &[LocationReport]) -> Result<InsertPlan> {
        let day = reports[0].day;
        let levels = self.grid.levels;
        let mut plan = InsertPlan {
            day,
            matched: Vec::new(),
        };
        let stores: Vec<_> = self.servers.iter().map(|s| s.day(day)).collect();
        if stores.iter().all(Option::is_none) {
            return Ok(plan);
        }
        let stores: Vec<_> = stores
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Protocol(format!("day {day} missing on some servers")))?;
        let mut node = 0u32;
        for depth in 0..levels {
            let level = levels - depth;
            let count = stores[0].node(node).entries.len();
            if stores.iter().any(|s| s.node(node).entries.len() != count) {
                return Err(Error::Protocol("server trees diverged".into()));
            }
            let mut hit = None;
            for k in 0..count {
                let d = Shared::from_values(
                    stores
                        .iter()
                        .zip(reports)
                        .map(|(s, r)| r.gid_share(level) - s.node(node).entries[k].representative),
                );
                if self.session.eq_zero_open(&d)? {
                    hit = Some(k);
                    break;
                }
            }
            let Some(k) = hit else { break };
            plan.matched.push(k);
            match stores[0].node(node).entries[k].child {
                Child::Node(c) => node = c,
                Child::Leaf(_) => break,
            }
        }
        Ok(plan)
    }

    /// Days inside the incubation window that ends at the latest closed day.
    pub fn query_days(&self, params: &QueryParams) -> Option<(Day, Day)> {
        let end = self.today.or_else(|| self.servers[0].days().map(|d| d.day()).max())?;
        let start = (end + 1).saturating_sub(params.incubation_days);
        Some((start, end))
    }

    /// One generation: every stored record of each token is compared with
    /// every other record in its leaf group. Returns the matching tokens
    /// with the day of the match, excluding the query tokens themselves.
    pub fn contact_query(&mut self, tokens: &[PseudoId], params: &QueryParams) -> Result<Vec<(PseudoId, Day)>> {
        params.validate(&self.grid)?;
        let Some((start, end)) = self.query_days(params) else {
            return Ok(Vec::new());
        };
        let from: Vec<(PseudoId, Day)> = tokens.iter().map(|t| (*t, start)).collect();
        let before = self.session.counters();
        let mut stats = QueryStats::default();
        let found = self.compare_tokens(&from, end, &params.predicate(), &mut stats)?;
        stats.counters = self.session.counters() - before;
        self.last_query = stats;
        let query: HashSet<PseudoId> = tokens.iter().copied().collect();
        let mut out: BTreeMap<PseudoId, Day> = BTreeMap::new();
        for (id, day) in found {
            if !query.contains(&id) {
                let d = out.entry(id).or_insert(day);
                *d = (*d).min(day);
            }
        }
        Ok(out.into_iter().collect())
    }

    fn compare_tokens(
        &mut self,
        tokens: &[(PseudoId, Day)],
        end: Day,
        predicate: &ContactPredicate,
        stats: &mut QueryStats,
    ) -> Result<Vec<(PseudoId, Day)>> {
        let mut found = Vec::new();
        let servers = &self.servers;
        for &(token, start) in tokens {
            if start > end {
                continue;
            }
            let refs: Vec<RecordRef> = servers[0]
                .lookup_patient(token, start..=end)
                .into_iter()
                .map(|(r, _)| r)
                .collect();
            for s in &servers[1..] {
                let other: Vec<RecordRef> = s
                    .lookup_patient(token, start..=end)
                    .into_iter()
                    .map(|(r, _)| r)
                    .collect();
                if other != refs {
                    return Err(Error::Protocol(format!("servers disagree on records of {token}")));
                }
            }
            for r in refs {
                stats.patient_records += 1;
                let patient: Vec<&RecordEntry> = servers
                    .iter()
                    .map(|s| &s.leaf_group(r).records[r.slot as usize])
                    .collect();
                let size = servers[0].leaf_group(r).records.len();
                for slot in (0..size).filter(|&s| s != r.slot as usize) {
                    let candidate: Vec<&RecordEntry> = servers.iter().map(|s| &s.leaf_group(r).records[slot]).collect();
                    let id = candidate[0].pseudo_id;
                    if candidate.iter().any(|c| c.pseudo_id != id) {
                        return Err(Error::Protocol("leaf groups diverged".into()));
                    }
                    stats.leaf_candidates += 1;
                    if compare_records(&mut self.session, &patient, &candidate, predicate)? {
                        found.push((id, r.day));
                    }
                }
            }
        }
        Ok(found)
    }

    /// Generation-by-generation trace from `seeds` using tokens alone.
    pub fn multi_generation_query(&mut self, seeds: &[PseudoId], params: &QueryParams) -> Result<TraceResult> {
        self.multi_generation_query_with(seeds, params, |_| Vec::new())
    }

    /// As [`Self::multi_generation_query`], with `expand` naming further
    /// tokens of the holder of each identified token; those are queried in
    /// the next generation alongside it.
    pub fn multi_generation_query_with<F>(
        &mut self,
        seeds: &[PseudoId],
        params: &QueryParams,
        mut expand: F,
    ) -> Result<TraceResult>
    where
        F: FnMut(PseudoId) -> Vec<PseudoId>,
    {
        params.validate(&self.grid)?;
        let before = self.session.counters();
        let mut stats = QueryStats::default();
        let mut result = TraceResult::default();
        let Some((start, end)) = self.query_days(params) else {
            return Ok(result);
        };
        let predicate = params.predicate();
        let mut reported: HashSet<PseudoId> = seeds.iter().copied().collect();
        let mut queued = reported.clone();
        let mut frontier: Vec<(PseudoId, Day)> = seeds.iter().map(|s| (*s, start)).collect();
        frontier.sort();
        frontier.dedup();
        let mut generation = 1;
        while !frontier.is_empty() && params.max_generations.is_none_or(|m| generation <= m) {
            let found = self.compare_tokens(&frontier, end, &predicate, &mut stats)?;
            let mut first_day: BTreeMap<PseudoId, Day> = BTreeMap::new();
            for (id, day) in found {
                let d = first_day.entry(id).or_insert(day);
                *d = (*d).min(day);
            }
            let mut ordered: Vec<(Day, PseudoId)> = first_day.into_iter().map(|(id, d)| (d, id)).collect();
            ordered.sort();
            let mut next = Vec::new();
            for (day, id) in ordered {
                if reported.insert(id) {
                    result.entries.push((id, generation));
                }
                let from = match params.generation_window {
                    GenerationWindow::SeedPatient => start,
                    GenerationWindow::SinceExposure => day,
                };
                if queued.insert(id) {
                    next.push((id, from));
                }
                for sibling in expand(id) {
                    if queued.insert(sibling) {
                        next.push((sibling, from));
                    }
                }
            }
            frontier = next;
            generation += 1;
        }
        stats.counters = self.session.counters() - before;
        self.last_query = stats;
        Ok(result)
    }
}

/// Sends the whole result list to every subscriber; returns how many
/// people were notified.
pub fn broadcast_results(result: &TraceResult, subscribers: &mut [Subscriber]) -> usize {
    let ids = result.ids();
    subscribers.iter_mut().map(|s| s.receive_broadcast(&ids).len()).sum()
}
