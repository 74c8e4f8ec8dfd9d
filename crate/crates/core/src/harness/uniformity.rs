//! Chi-square checks that what each server receives looks uniform, and a
//! scan for plaintext values leaking into server state.

use std::collections::HashSet;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::client::{build_day_reports, PseudoIdPool, StayPoint, SubscriberId};
use crate::error::Result;
use crate::field::FieldElement;
use crate::grid::GridConfig;
use crate::mpc::{Dealer, PartyId};
use crate::orchestrator::PartySet;
use crate::registry::TokenIssuer;
use crate::stats::chi_square_uniform_checked;

use super::oracle::StayTable;

pub const DEFAULT_BUCKETS: usize = 16;
pub const DEFAULT_ALPHA: f64 = 0.001;

/// One named stream of values seen by one party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueStream {
    pub party: usize,
    pub source: String,
    pub values: Vec<FieldElement>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformityRow {
    pub party: usize,
    pub source: String,
    pub samples: usize,
    pub buckets: usize,
    pub chi_square: f64,
    pub p_value: f64,
    pub uniform: bool,
}

/// One row per non-empty stream.
pub fn uniformity_report(streams: &[ValueStream], buckets: usize, alpha: f64) -> Vec<UniformityRow> {
    streams
        .iter()
        .filter_map(|s| {
            let (chi_square, p_value) = chi_square_uniform_checked(s.values.iter().copied(), buckets)?;
            Some(UniformityRow {
                party: s.party,
                source: s.source.clone(),
                samples: s.values.len(),
                buckets,
                chi_square,
                p_value,
                uniform: p_value > alpha,
            })
        })
        .collect()
}

pub fn write_report_csv<W: Write>(w: W, rows: &[UniformityRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record([
        "party",
        "source",
        "samples",
        "buckets",
        "chi_square",
        "p_value",
        "uniform",
    ])?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Shares each server receives when `stay` is uploaded `times` times with
/// fresh randomness, one stream per server and coordinate.
pub fn reshare_streams(
    stay: StayPoint,
    times: usize,
    servers: usize,
    grid: &GridConfig,
    distance_cm: u64,
    seed: u64,
) -> Result<Vec<ValueStream>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut issuer = TokenIssuer::new(seed ^ 1);
    let names = ["t", "x", "y", "gid1"];
    let mut streams: Vec<ValueStream> = (0..servers)
        .flat_map(|party| {
            names.iter().map(move |n| ValueStream {
                party,
                source: format!("share-{n}"),
                values: Vec::with_capacity(times),
            })
        })
        .collect();
    for _ in 0..times {
        let mut pool = PseudoIdPool::new(SubscriberId(0), (0..8).map(|_| issuer.fresh()).collect());
        let batches = build_day_reports(0, &[stay], &mut pool, grid, distance_cm, servers, &mut rng)?;
        for (party, batch) in batches.per_server.iter().enumerate() {
            for r in batch {
                for (k, v) in [r.t_share, r.x_share, r.y_share, r.gid_shares[0]]
                    .into_iter()
                    .enumerate()
                {
                    streams[party * names.len() + k].values.push(v);
                }
            }
        }
    }
    Ok(streams)
}

/// The values each party received from its peers while the session's
/// trace was enabled.
pub fn received_streams<D: Dealer>(party: &PartySet<D>) -> Vec<ValueStream> {
    let trace = party.session().trace();
    (0..party.parties())
        .map(|p| ValueStream {
            party: p,
            source: "received".into(),
            values: trace.received_by(PartyId(p)).collect(),
        })
        .collect()
}

/// Counts the values in any server's stored state, received messages or
/// public openings that equal one of `plaintexts`.
pub fn audit_plaintext_hits<D: Dealer>(party: &PartySet<D>, plaintexts: &HashSet<u64>) -> AuditCounts {
    let hit = |v: FieldElement| plaintexts.contains(&v.value());
    let mut counts = AuditCounts::default();
    for s in party.servers() {
        for v in s.field_values() {
            counts.scanned += 1;
            counts.state_hits += hit(v) as u64;
        }
    }
    let trace = party.session().trace();
    for e in trace.entries() {
        counts.scanned += 1;
        counts.received_hits += hit(e.value) as u64;
    }
    for &(_, v) in trace.openings() {
        counts.scanned += 1;
        counts.opened_hits += hit(v) as u64;
    }
    counts
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditCounts {
    pub scanned: u64,
    pub state_hits: u64,
    pub received_hits: u64,
    pub opened_hits: u64,
}

impl AuditCounts {
    pub fn hits(&self) -> u64 {
        self.state_hits + self.received_hits + self.opened_hits
    }
}

/// Every stay time and coordinate in `[min, max)`, for the plaintext audit.
/// Small values are left out since they collide with protocol constants.
pub fn plaintext_values(stays: &StayTable, min: u64, max: u64) -> HashSet<u64> {
    let mut out = HashSet::new();
    for user in stays.users() {
        for (_, s) in stays.stays_of(user) {
            out.extend(
                [s.t as u64, s.p.x, s.p.y]
                    .into_iter()
                    .filter(|v| (min..max).contains(v)),
            );
        }
    }
    out
}
