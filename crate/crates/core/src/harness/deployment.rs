//! A deployment kept on disk between runs: party configuration, one
//! snapshot per server and the subscribers' registration table.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::{
    build_day_reports, detect_stay_points, Day, FixRow, PseudoId, PseudoIdPool, RawFix, SubscriberId, SECONDS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::grid::{border_replicas, offset_coords, GridConfig};
use crate::mpc::SeededDealer;
use crate::orchestrator::{PartySet, QueryParams, TraceResult};
use crate::registry::{RealId, Registry};
use crate::server::snapshot::{read_snapshot, write_index_csv, write_snapshot};

use super::oracle::StayTable;
use super::workload::{stream_seed, WorkloadSpec};

const CONFIG_FILE: &str = "config.toml";
const REGISTRY_FILE: &str = "registry.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    pub seed: u64,
    /// Bumped on every save so a resumed run never replays dealer or
    /// token randomness.
    #[serde(default)]
    pub epoch: u64,
    pub servers: usize,
    pub subscribers: usize,
    pub pool_size: usize,
    pub stay_radius_cm: u64,
    pub retention_days: u32,
    #[serde(default)]
    pub today: Option<Day>,
    pub query: QueryParams,
    pub grid: GridConfig,
}

impl DeploymentConfig {
    pub fn from_spec(spec: &WorkloadSpec) -> Result<Self> {
        spec.validate()?;
        Ok(DeploymentConfig {
            seed: spec.seed,
            epoch: 0,
            servers: spec.servers,
            subscribers: spec.subscribers,
            pool_size: spec.pool_size,
            stay_radius_cm: spec.stay_radius_cm,
            retention_days: spec.retention(),
            today: None,
            query: spec.query,
            grid: spec.resolve_grid()?,
        })
    }

    fn stream(&self, tag: u64) -> u64 {
        stream_seed(self.seed, self.epoch, 0, tag)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub days: usize,
    pub user_days: usize,
    pub stays: usize,
    pub message_sets: usize,
    pub inserted: usize,
}

pub struct Deployment {
    pub config: DeploymentConfig,
    pub registry: Registry,
    pub party: PartySet<SeededDealer>,
}

fn snapshot_name(i: usize) -> String {
    format!("server-{i}.snap")
}

impl Deployment {
    pub fn new(config: DeploymentConfig) -> Result<Self> {
        let dealer = SeededDealer::new(config.servers, config.stream(0xdea1))?;
        let party = PartySet::new(
            config.grid.clone(),
            dealer,
            config.stream(0x5e55),
            config.retention_days,
        )?;
        let registry = Registry::new(config.subscribers, config.stream(0x70c3));
        config.query.validate(&config.grid)?;
        Ok(Deployment {
            config,
            registry,
            party,
        })
    }

    pub fn subscriber_of(&self, user: RealId) -> SubscriberId {
        SubscriberId((user % self.config.subscribers as u64) as u32)
    }

    /// Detects stays in raw fixes and uploads them, one closed day at a
    /// time. Days already closed are refused. Also returns the detected
    /// stays as ground truth.
    pub fn ingest(&mut self, rows: &[FixRow]) -> Result<(IngestReport, StayTable)> {
        let mut by_day: BTreeMap<Day, BTreeMap<RealId, Vec<RawFix>>> = BTreeMap::new();
        for r in rows {
            if r.t_seconds >= SECONDS_PER_DAY {
                return Err(Error::InvalidInput(format!(
                    "fix time {} is past the end of the day",
                    r.t_seconds
                )));
            }
            let p = offset_coords(r.x_cm, r.y_cm, &self.config.grid)?;
            by_day
                .entry(r.day)
                .or_default()
                .entry(r.user_id)
                .or_default()
                .push(RawFix { t: r.t_seconds, p });
        }
        if let (Some(today), Some(&first)) = (self.config.today, by_day.keys().next()) {
            if first <= today {
                return Err(Error::InvalidInput(format!(
                    "day {first} is already closed (latest is {today})"
                )));
            }
        }
        let last = by_day.keys().next_back().copied().or(self.config.today).unwrap_or(0);
        let mut truth = StayTable::new(last, self.config.retention_days);
        let mut report = IngestReport::default();
        let (tau, radius, d) = (
            self.config.query.tau_s,
            self.config.stay_radius_cm,
            self.config.query.distance_cm,
        );
        for (day, users) in by_day {
            for (user, mut fixes) in users {
                fixes.sort_by_key(|f| f.t);
                let stays = detect_stay_points(&fixes, tau, radius)?;
                if stays.is_empty() {
                    continue;
                }
                truth.extend(user, day, &stays);
                let sets: usize = stays
                    .iter()
                    .map(|s| 1 + border_replicas(s.p, &self.config.grid, d).len())
                    .sum();
                let sub = self.subscriber_of(user);
                let m = self.config.pool_size;
                let mut ids = if self.registry.subscribers()[sub.0 as usize].is_registered(user) {
                    self.registry.issue_pool(sub, user, m)?.ids().to_vec()
                } else {
                    self.registry.register_user(sub, user, m)?.ids().to_vec()
                };
                while ids.len() < sets {
                    ids.extend_from_slice(self.registry.issue_pool(sub, user, m)?.ids());
                }
                let mut pool = PseudoIdPool::new(sub, ids);
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.stream(2), user, day, 2));
                let batches = build_day_reports(
                    day,
                    &stays,
                    &mut pool,
                    &self.config.grid,
                    d,
                    self.config.servers,
                    &mut rng,
                )?;
                report.user_days += 1;
                report.stays += stays.len();
                report.message_sets += batches.message_sets();
                self.party.submit(batches)?;
            }
            let summary = self.party.process_inboxes()?;
            if let Some((id, why)) = summary.rejected.first() {
                return Err(Error::Protocol(format!("report {id} was rejected: {why}")));
            }
            report.inserted += summary.inserted;
            report.days += 1;
            self.party.end_day(day);
            self.config.today = Some(day);
        }
        truth.finish();
        Ok((report, truth))
    }

    /// Trace seeded with explicit tokens.
    pub fn query_tokens(&mut self, seeds: &[PseudoId], params: &QueryParams) -> Result<TraceResult> {
        self.registry.trace_tokens(seeds, &mut self.party, params)
    }

    /// Trace for a registered user, mapped to real IDs with the first
    /// generation each person was reached in.
    pub fn trace_user(&mut self, patient: RealId, params: &QueryParams) -> Result<BTreeMap<RealId, u32>> {
        let sub = self.subscriber_of(patient);
        let result = self
            .registry
            .initiate_trace(sub, patient, true, &mut self.party, params)?;
        let mut out: BTreeMap<RealId, u32> = BTreeMap::new();
        for &(id, g) in result.entries() {
            if let Some((_, real)) = self.registry.resolve(id) {
                if real != patient {
                    let e = out.entry(real).or_insert(g);
                    *e = (*e).min(g);
                }
            }
        }
        Ok(out)
    }

    pub fn tokens_of(&self, user: RealId) -> Result<Vec<PseudoId>> {
        self.registry.subscribers()[self.subscriber_of(user).0 as usize].tokens_of(user)
    }

    /// Writes the configuration, the registration table and one snapshot
    /// and index table per server into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut config = self.config.clone();
        config.epoch += 1;
        let text = toml::to_string(&config).map_err(|e| Error::InvalidInput(e.to_string()))?;
        std::fs::write(dir.join(CONFIG_FILE), text)?;
        self.registry
            .write_csv(BufWriter::new(File::create(dir.join(REGISTRY_FILE))?))?;
        for s in self.party.servers() {
            write_snapshot(s, BufWriter::new(File::create(dir.join(snapshot_name(s.index())))?))?;
            write_index_csv(
                s,
                BufWriter::new(File::create(dir.join(format!("server-{}-index.csv", s.index())))?),
            )?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: DeploymentConfig = toml::from_str(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let servers = (0..config.servers)
            .map(|i| read_snapshot(BufReader::new(File::open(dir.join(snapshot_name(i)))?)))
            .collect::<Result<Vec<_>>>()?;
        let mut registry = Registry::read_csv(
            BufReader::new(File::open(dir.join(REGISTRY_FILE))?),
            config.stream(0x70c3),
        )?;
        registry.ensure_subscribers(config.subscribers);
        let dealer = SeededDealer::new(config.servers, config.stream(0xdea1))?;
        let mut party = PartySet::from_servers(
            config.grid.clone(),
            servers,
            dealer,
            config.stream(0x5e55),
            config.retention_days,
        )?;
        if let Some(today) = config.today {
            party.end_day(today);
        }
        Ok(Deployment {
            config,
            registry,
            party,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::oracle::oracle_trace;
    use crate::harness::workload::{generate_workload, ChainSpec};

    fn spec() -> WorkloadSpec {
        let mut s = WorkloadSpec::new(80, 3, 5, 12, QueryParams::new(200, 3600, 3));
        s.geography.side_cm = 20_000;
        s.geography.hotspot_sigma_cm = 1500.0;
        s.pool_size = 16;
        s.chains.push(ChainSpec {
            length: 3,
            first_user: 2,
            day: 0,
            days_apart: true,
        });
        s
    }

    #[test]
    fn ingest_save_load_and_trace() {
        let spec = spec();
        let w = generate_workload(&spec).unwrap();
        let mut dep = Deployment::new(DeploymentConfig::from_spec(&spec).unwrap()).unwrap();
        let (first_days, rest): (Vec<FixRow>, Vec<FixRow>) = w.fixes.iter().partition(|r| r.day < 2);
        let (r1, _) = dep.ingest(&first_days).unwrap();
        assert_eq!(r1.days, 2);
        assert!(dep.ingest(&first_days).is_err(), "closed days are refused");

        let dir = tempfile::tempdir().unwrap();
        dep.save(dir.path()).unwrap();
        let mut dep = Deployment::load(dir.path()).unwrap();
        assert_eq!(dep.config.epoch, 1);
        let (r2, _) = dep.ingest(&rest).unwrap();
        assert_eq!(r1.stays + r2.stays, w.stays.len());

        let params = spec.query;
        for patient in [2, 0, 41] {
            assert_eq!(
                dep.trace_user(patient, &params).unwrap(),
                oracle_trace(&w.stays, patient, &params)
            );
        }
        let tokens = dep.tokens_of(2).unwrap();
        let by_tokens = dep.query_tokens(&tokens, &params).unwrap();
        let people: Vec<RealId> = dep
            .registry
            .resolve_all(by_tokens.ids())
            .into_iter()
            .map(|(_, r)| r)
            .collect();
        assert!(people.contains(&3));
    }

    #[test]
    fn out_of_area_fix_is_refused() {
        let spec = spec();
        let mut dep = Deployment::new(DeploymentConfig::from_spec(&spec).unwrap()).unwrap();
        let far = FixRow {
            user_id: 1,
            day: 0,
            t_seconds: 10,
            x_cm: -5,
            y_cm: 0,
        };
        assert!(matches!(dep.ingest(&[far]), Err(Error::PointOutsideServiceArea { .. })));
    }
}
