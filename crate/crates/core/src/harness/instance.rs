//! Runs a generated workload through the full pipeline: registration,
//! stay detection, share upload and lockstep insertion.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::client::{build_day_reports, detect_stay_points, PseudoIdPool, SubscriberId};
use crate::error::{Error, Result};
use crate::grid::{border_replicas, GridConfig};
use crate::mpc::{OpCounters, SeededDealer};
use crate::orchestrator::{PartySet, QueryParams};
use crate::registry::{RealId, Registry};

use super::oracle::StayTable;
use super::workload::{stream_seed, UserDay, Workload, WorkloadSpec};

/// Insertion work for one group of users.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InsertTally {
    pub users: u64,
    pub stays: u64,
    pub message_sets: u64,
    pub counters: OpCounters,
    pub elapsed: Duration,
}

impl InsertTally {
    pub fn eq_tests_per_stay(&self) -> f64 {
        self.counters.eq_zero_tests as f64 / self.stays.max(1) as f64
    }

    pub fn sets_per_stay(&self) -> f64 {
        self.message_sets as f64 / self.stays.max(1) as f64
    }

    fn add(&mut self, o: &InsertTally) {
        self.users += o.users;
        self.stays += o.stays;
        self.message_sets += o.message_sets;
        self.counters += o.counters;
        self.elapsed += o.elapsed;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BuildMetrics {
    /// Everything inserted.
    pub total: InsertTally,
    /// The last users of the final day, inserted after everyone else.
    pub probe: InsertTally,
}

/// A populated deployment with its ground truth.
pub struct Instance {
    pub spec: WorkloadSpec,
    pub grid: GridConfig,
    pub registry: Registry,
    pub party: PartySet<SeededDealer>,
    pub stays: StayTable,
    pub metrics: BuildMetrics,
}

impl Instance {
    pub fn build(spec: &WorkloadSpec) -> Result<Self> {
        Self::build_with_probe(spec, 0)
    }

    /// Builds the instance, holding back the last `probe_users` users of
    /// the final day so their insertion cost is measured against a fully
    /// populated tree.
    pub fn build_with_probe(spec: &WorkloadSpec, probe_users: u64) -> Result<Self> {
        Self::build_inner(spec, probe_users, false)
    }

    /// Builds with the protocol transcript recorded from the first insert.
    pub fn build_traced(spec: &WorkloadSpec) -> Result<Self> {
        Self::build_inner(spec, 0, true)
    }

    fn build_inner(spec: &WorkloadSpec, probe_users: u64, trace: bool) -> Result<Self> {
        let workload = Workload::new(spec)?;
        let grid = spec.resolve_grid()?;
        let dealer = SeededDealer::new(spec.servers, stream_seed(spec.seed, 0, 0, 0xdea1))?;
        let mut party = PartySet::new(
            grid.clone(),
            dealer,
            stream_seed(spec.seed, 0, 0, 0x5e55),
            spec.retention(),
        )?;
        party.session_mut().set_trace(trace);
        let mut instance = Instance {
            spec: spec.clone(),
            grid,
            registry: Registry::new(spec.subscribers, stream_seed(spec.seed, 0, 0, 0x70c3)),
            party,
            stays: StayTable::new(spec.days - 1, spec.retention()),
            metrics: BuildMetrics::default(),
        };
        let probe_from = spec.users.saturating_sub(probe_users.min(spec.users));
        for day in 0..spec.days {
            let last = day + 1 == spec.days;
            let split = if last { probe_from } else { spec.users };
            let t = instance.upload(&workload, day, 0..split)?;
            instance.metrics.total.add(&t);
            if split < spec.users {
                let p = instance.upload(&workload, day, split..spec.users)?;
                instance.metrics.total.add(&p);
                instance.metrics.probe = p;
            }
            instance.party.end_day(day);
        }
        instance.stays.finish();
        Ok(instance)
    }

    pub fn subscriber_of(&self, user: RealId) -> SubscriberId {
        SubscriberId((user % self.spec.subscribers as u64) as u32)
    }

    /// Generates, uploads and inserts one day for `users`.
    fn upload(&mut self, workload: &Workload, day: u32, users: std::ops::Range<RealId>) -> Result<InsertTally> {
        let mut tally = InsertTally::default();
        for user in users {
            let ud = workload.user_day(user, day);
            self.submit_user_day(&ud, &mut tally)?;
        }
        let before = self.party.counters();
        let started = Instant::now();
        let summary = self.party.process_inboxes()?;
        tally.elapsed = started.elapsed();
        tally.counters = self.party.counters() - before;
        if let Some((id, why)) = summary.rejected.first() {
            return Err(Error::Protocol(format!("report {id} was rejected: {why}")));
        }
        Ok(tally)
    }

    fn submit_user_day(&mut self, ud: &UserDay, tally: &mut InsertTally) -> Result<()> {
        let tau = self.spec.query.tau_s;
        let stays = detect_stay_points(&ud.fixes, tau, self.spec.stay_radius_cm)?;
        if stays != ud.stays {
            return Err(Error::Protocol(format!(
                "stay detection drifted for user {} on day {}",
                ud.user, ud.day
            )));
        }
        self.stays.extend(ud.user, ud.day, &stays);
        let d = self.spec.query.distance_cm;
        let sets: usize = stays
            .iter()
            .map(|s| 1 + border_replicas(s.p, &self.grid, d).len())
            .sum();
        let sub = self.subscriber_of(ud.user);
        let m = self.spec.pool_size;
        let mut ids = if self.registry.subscribers()[sub.0 as usize].is_registered(ud.user) {
            self.registry.issue_pool(sub, ud.user, m)?.ids().to_vec()
        } else {
            self.registry.register_user(sub, ud.user, m)?.ids().to_vec()
        };
        // A day with many border stays asks for another pool.
        while ids.len() < sets {
            ids.extend_from_slice(self.registry.issue_pool(sub, ud.user, m)?.ids());
        }
        let mut pool = PseudoIdPool::new(sub, ids);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.spec.seed, ud.user, ud.day, 2));
        let batches = build_day_reports(ud.day, &stays, &mut pool, &self.grid, d, self.spec.servers, &mut rng)?;
        tally.users += 1;
        tally.stays += stays.len() as u64;
        tally.message_sets += batches.message_sets() as u64;
        self.party.submit(batches)?;
        Ok(())
    }

    /// Full trace from `patient` through the registry, mapped to real IDs
    /// with the first generation each person was reached in.
    pub fn trace(&mut self, patient: RealId, params: &QueryParams) -> Result<BTreeMap<RealId, u32>> {
        let sub = self.subscriber_of(patient);
        let result = self
            .registry
            .initiate_trace(sub, patient, true, &mut self.party, params)?;
        let mut out: BTreeMap<RealId, u32> = BTreeMap::new();
        for &(id, g) in result.entries() {
            let (_, real) = self
                .registry
                .resolve(id)
                .ok_or_else(|| Error::Protocol(format!("unissued token {id}")))?;
            if real != patient {
                let e = out.entry(real).or_insert(g);
                *e = (*e).min(g);
            }
        }
        Ok(out)
    }

    /// One contact query with every token of `patient`; returns the
    /// distinct people found.
    pub fn contacts(&mut self, patient: RealId, params: &QueryParams) -> Result<Vec<RealId>> {
        let sub = self.subscriber_of(patient);
        let tokens = self.registry.subscribers()[sub.0 as usize].tokens_of(patient)?;
        let found = self.party.contact_query(&tokens, params)?;
        let people = self.registry.resolve_all(found.into_iter().map(|(id, _)| id));
        let mut out: Vec<RealId> = people.into_iter().map(|(_, r)| r).filter(|&r| r != patient).collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}
