//! The client agent: stay-point extraction, pseudo-ID pools, and the
//! per-server share messages sent at the end of each day.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::field::FieldElement;
use crate::grid::{border_replicas, cell_path, CellPath, GridConfig, PlanarPoint};
use crate::mpc::share;
use crate::transport::{Receipt, SimTransport};

/// Seconds in a day; timestamps are seconds-of-day.
pub const SECONDS_PER_DAY: u32 = 86_400;

pub type Day = u32;

/// Opaque 128-bit token issued by a subscriber.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PseudoId(pub u128);

impl fmt::Display for PseudoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for PseudoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PseudoId({self})")
    }
}

impl FromStr for PseudoId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s.len() > 32 {
            return Err(Error::InvalidInput(format!("bad pseudo ID {s:?}")));
        }
        u128::from_str_radix(s, 16)
            .map(PseudoId)
            .map_err(|_| Error::InvalidInput(format!("bad pseudo ID {s:?}")))
    }
}

impl Serialize for PseudoId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PseudoId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubscriberId(pub u32);

/// A timestamped planar position fix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawFix {
    pub t: u32,
    pub p: PlanarPoint,
}

/// A place the user stayed at for at least the infectious time window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StayPoint {
    /// Arrival, seconds-of-day.
    pub t: u32,
    pub p: PlanarPoint,
}

/// Extracts maximal dwell episodes: runs of fixes within `radius_cm` of the
/// run's first fix lasting at least `tau_s`. Each is reported at its
/// centroid (rounded to the nearest centimeter) with the first fix's time.
pub fn detect_stay_points(fixes: &[RawFix], tau_s: u32, radius_cm: u64) -> Result<Vec<StayPoint>> {
    if let Some(i) = fixes.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(Error::InvalidSequence(i + 1));
    }
    let r2 = radius_cm * radius_cm;
    let mut stays = Vec::new();
    let mut i = 0;
    while i < fixes.len() {
        let anchor = fixes[i];
        let mut j = i + 1;
        while j < fixes.len() && anchor.p.dist2(&fixes[j].p) <= r2 {
            j += 1;
        }
        if fixes[j - 1].t - anchor.t >= tau_s {
            let n = (j - i) as u64;
            let (sx, sy) = fixes[i..j]
                .iter()
                .fold((0u64, 0u64), |(sx, sy), f| (sx + f.p.x, sy + f.p.y));
            stays.push(StayPoint {
                t: anchor.t,
                p: PlanarPoint::new((sx + n / 2) / n, (sy + n / 2) / n),
            });
            i = j;
        } else {
            i += 1;
        }
    }
    Ok(stays)
}

/// The set of pseudo IDs a subscriber issued to one user for one day.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoIdPool {
    pub issued_by: SubscriberId,
    ids: Vec<PseudoId>,
    next: usize,
}

impl PseudoIdPool {
    pub fn new(issued_by: SubscriberId, ids: Vec<PseudoId>) -> Self {
        PseudoIdPool {
            issued_by,
            ids,
            next: 0,
        }
    }

    pub fn ids(&self) -> &[PseudoId] {
        &self.ids
    }

    pub fn remaining(&self) -> usize {
        self.ids.len() - self.next
    }

    pub fn take(&mut self) -> Option<PseudoId> {
        let id = self.ids.get(self.next).copied();
        if id.is_some() {
            self.next += 1;
        }
        id
    }
}

/// One server's part of one message set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationReport {
    pub day: Day,
    pub pseudo_id: PseudoId,
    /// 0-based index of the receiving server.
    pub server_index: usize,
    pub t_share: FieldElement,
    pub x_share: FieldElement,
    pub y_share: FieldElement,
    /// Grid ID shares, finest level first.
    pub gid_shares: Vec<FieldElement>,
}

impl LocationReport {
    pub fn gid_share(&self, level: usize) -> FieldElement {
        self.gid_shares[level - 1]
    }
}

/// One day's outgoing messages, one batch per server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DayBatches {
    pub day: Day,
    pub per_server: Vec<Vec<LocationReport>>,
}

impl DayBatches {
    pub fn message_sets(&self) -> usize {
        self.per_server.first().map_or(0, Vec::len)
    }
}

/// Builds the end-of-day messages for a user's stay points.
///
/// Every stay point yields one message set for its own cell path plus one
/// per border replica; each set carries fresh shares and its own pseudo ID.
/// Every server's batch is shuffled independently.
#[allow(clippy::too_many_arguments)]
pub fn build_day_reports<R: RngCore>(
    day: Day,
    stays: &[StayPoint],
    pool: &mut PseudoIdPool,
    config: &GridConfig,
    distance_cm: u64,
    n_servers: usize,
    rng: &mut R,
) -> Result<DayBatches> {
    if n_servers < 2 {
        return Err(Error::InvalidPartyCount(n_servers));
    }
    let mut sets: Vec<(StayPoint, CellPath)> = Vec::new();
    for s in stays {
        if s.p.x > config.side_cm || s.p.y > config.side_cm || s.t >= SECONDS_PER_DAY {
            return Err(Error::InvalidInput(format!("stay point {s:?} out of range")));
        }
        sets.push((*s, cell_path(s.p, config)));
        sets.extend(
            border_replicas(s.p, config, distance_cm)
                .into_iter()
                .map(|path| (*s, path)),
        );
    }
    if sets.len() > pool.remaining() {
        return Err(Error::OutOfPseudoIds {
            needed: sets.len(),
            remaining: pool.remaining(),
        });
    }
    let mut per_server: Vec<Vec<LocationReport>> = (0..n_servers).map(|_| Vec::with_capacity(sets.len())).collect();
    for (stay, path) in sets {
        let pseudo_id = pool.take().expect("pool size checked");
        let t = share(FieldElement::from(stay.t), n_servers, rng)?;
        let x = share(FieldElement::new(stay.p.x), n_servers, rng)?;
        let y = share(FieldElement::new(stay.p.y), n_servers, rng)?;
        let gids: Vec<_> = path
            .gids
            .iter()
            .map(|&g| share(FieldElement::new(g), n_servers, rng))
            .collect::<Result<_>>()?;
        for (i, batch) in per_server.iter_mut().enumerate() {
            batch.push(LocationReport {
                day,
                pseudo_id,
                server_index: i,
                t_share: t.values()[i],
                x_share: x.values()[i],
                y_share: y.values()[i],
                gid_shares: gids.iter().map(|g| g.values()[i]).collect(),
            });
        }
    }
    for batch in &mut per_server {
        batch.shuffle(rng);
    }
    Ok(DayBatches { day, per_server })
}

/// Hands each server its batch through the transport.
pub fn flush(batches: DayBatches, transport: &mut SimTransport) -> Result<Vec<Receipt>> {
    let mut receipts = Vec::new();
    for (server, batch) in batches.per_server.into_iter().enumerate() {
        receipts.extend(transport.deliver(server, batch)?);
    }
    Ok(receipts)
}

pub fn write_reports_jsonl<W: Write>(mut w: W, reports: &[LocationReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_reports_jsonl<R: BufRead>(r: R) -> Result<Vec<LocationReport>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// One CSV row of raw fixes: `user_id, day, t_seconds, x_cm, y_cm`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixRow {
    pub user_id: u64,
    pub day: Day,
    pub t_seconds: u32,
    pub x_cm: i64,
    pub y_cm: i64,
}

pub fn read_fixes_csv<R: std::io::Read>(r: R) -> Result<Vec<FixRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    reader.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_fixes_csv<W: Write>(w: W, rows: &[FixRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{HashMap, HashSet};

    const TAU: u32 = 3600;

    fn grid() -> GridConfig {
        GridConfig::new(0, 0, 120_000, vec![1200, 12_000, 60_000]).unwrap()
    }

    fn pool(n: usize) -> PseudoIdPool {
        PseudoIdPool::new(SubscriberId(0), (0..n as u128).map(|i| PseudoId(1000 + i)).collect())
    }

    fn fix(t: u32, x: u64, y: u64) -> RawFix {
        RawFix {
            t,
            p: PlanarPoint::new(x, y),
        }
    }

    #[test]
    fn stationary_user_has_one_stay() {
        let fixes: Vec<_> = (0..=24).map(|k| fix(1000 + k * 300, 5000, 7000)).collect();
        let stays = detect_stay_points(&fixes, TAU, 500).unwrap();
        assert_eq!(
            stays,
            vec![StayPoint {
                t: 1000,
                p: PlanarPoint::new(5000, 7000)
            }]
        );
    }

    #[test]
    fn moving_user_has_none() {
        let fixes: Vec<_> = (0..200).map(|k| fix(k * TAU / 10, k as u64 * 1000, 0)).collect();
        assert!(detect_stay_points(&fixes, TAU, 500).unwrap().is_empty());
    }

    #[test]
    fn unordered_fixes_rejected() {
        let fixes = [fix(10, 0, 0), fix(5, 0, 0)];
        assert!(matches!(
            detect_stay_points(&fixes, TAU, 500),
            Err(Error::InvalidSequence(1))
        ));
    }

    #[test]
    fn planted_dwells_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut fixes = Vec::new();
            let mut planted = Vec::new();
            let mut t = rng.gen_range(0..3600);
            let mut pos = PlanarPoint::new(50_000, 50_000);
            for _ in 0..rng.gen_range(1..6) {
                // walk away in big steps
                for _ in 0..rng.gen_range(1..5) {
                    pos = PlanarPoint::new(pos.x + rng.gen_range(1100..2000), pos.y + 50);
                    fixes.push(RawFix { t, p: pos });
                    t += TAU / 10;
                }
                pos = PlanarPoint::new(pos.x + 1500, pos.y);
                planted.push(StayPoint { t, p: pos });
                let dwell = TAU + rng.gen_range(0..TAU);
                let end = t + dwell;
                while t < end {
                    fixes.push(RawFix { t, p: pos });
                    t += 120;
                }
                fixes.push(RawFix { t: end, p: pos });
                t = end + 60;
            }
            assert_eq!(detect_stay_points(&fixes, TAU, 500).unwrap(), planted);
        }
    }

    #[test]
    fn interior_stay_one_message_per_server() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stay = StayPoint {
            t: 36_000,
            p: PlanarPoint::new(1800, 1800),
        };
        let mut p = pool(10);
        let b = build_day_reports(3, &[stay], &mut p, &grid(), 200, 3, &mut rng).unwrap();
        assert_eq!(b.per_server.len(), 3);
        assert!(b.per_server.iter().all(|s| s.len() == 1));
        let ids: HashSet<_> = b.per_server.iter().map(|s| s[0].pseudo_id).collect();
        assert_eq!(ids.len(), 1);
        let x: FieldElement = b.per_server.iter().map(|s| s[0].x_share).sum();
        assert_eq!(x, FieldElement::new(1800));
        assert_eq!(p.remaining(), 9);
    }

    #[test]
    fn corner_stay_consumes_four_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stay = StayPoint {
            t: 100,
            p: PlanarPoint::new(2350, 2350),
        };
        let mut p = pool(10);
        let b = build_day_reports(0, &[stay], &mut p, &grid(), 200, 2, &mut rng).unwrap();
        let ids: HashSet<_> = b.per_server[0].iter().map(|r| r.pseudo_id).collect();
        assert_eq!(ids.len(), 4);
        assert_eq!(p.remaining(), 6);
    }

    #[test]
    fn pool_exhaustion_consumes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stay = StayPoint {
            t: 100,
            p: PlanarPoint::new(2350, 2350),
        };
        let mut p = pool(3);
        assert!(matches!(
            build_day_reports(0, &[stay], &mut p, &grid(), 200, 2, &mut rng),
            Err(Error::OutOfPseudoIds {
                needed: 4,
                remaining: 3
            })
        ));
        assert_eq!(p.remaining(), 3);
    }

    /// Rebuilds each message set's plaintext from all servers' shares.
    fn reconstruct_sets(b: &DayBatches) -> HashMap<PseudoId, (u32, u64, u64, Vec<u64>)> {
        let mut acc: HashMap<PseudoId, (FieldElement, FieldElement, FieldElement, Vec<FieldElement>)> = HashMap::new();
        for batch in &b.per_server {
            for r in batch {
                let e = acc.entry(r.pseudo_id).or_insert((
                    FieldElement::ZERO,
                    FieldElement::ZERO,
                    FieldElement::ZERO,
                    vec![FieldElement::ZERO; r.gid_shares.len()],
                ));
                e.0 += r.t_share;
                e.1 += r.x_share;
                e.2 += r.y_share;
                for (g, s) in e.3.iter_mut().zip(&r.gid_shares) {
                    *g += *s;
                }
            }
        }
        acc.into_iter()
            .map(|(k, (t, x, y, g))| {
                (
                    k,
                    (
                        t.value() as u32,
                        x.value(),
                        y.value(),
                        g.iter().map(|v| v.value()).collect(),
                    ),
                )
            })
            .collect()
    }

    #[test]
    fn shares_and_paths_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let config = grid();
        for _ in 0..300 {
            let stays: Vec<StayPoint> = (0..rng.gen_range(1..8))
                .map(|_| StayPoint {
                    t: rng.gen_range(0..SECONDS_PER_DAY),
                    p: PlanarPoint::new(rng.gen_range(0..=120_000), rng.gen_range(0..=120_000)),
                })
                .collect();
            let mut p = pool(64);
            let n = rng.gen_range(2..5);
            let b = build_day_reports(1, &stays, &mut p, &config, 400, n, &mut rng).unwrap();
            let sets = reconstruct_sets(&b);
            assert_eq!(sets.len(), 64 - p.remaining());
            let mut expected: Vec<(u32, u64, u64, Vec<u64>)> = Vec::new();
            for s in &stays {
                expected.push((s.t, s.p.x, s.p.y, cell_path(s.p, &config).gids));
                for r in border_replicas(s.p, &config, 400) {
                    expected.push((s.t, s.p.x, s.p.y, r.gids));
                }
            }
            let mut got: Vec<_> = sets.into_values().collect();
            got.sort();
            expected.sort();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn replicas_use_fresh_shares() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let config = grid();
        for _ in 0..10_000 {
            let stay = StayPoint {
                t: rng.gen_range(0..SECONDS_PER_DAY),
                p: PlanarPoint::new(
                    rng.gen_range(1..100) * 1200 + rng.gen_range(0..200),
                    rng.gen_range(0..120_000),
                ),
            };
            let mut p = pool(8);
            let b = build_day_reports(0, &[stay], &mut p, &config, 400, 2, &mut rng).unwrap();
            let s0 = &b.per_server[0];
            for i in 0..s0.len() {
                for j in i + 1..s0.len() {
                    assert_ne!(s0[i].x_share, s0[j].x_share);
                    assert_ne!(s0[i].t_share, s0[j].t_share);
                }
            }
        }
    }

    #[test]
    fn pseudo_ids_unique_across_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let stays: Vec<StayPoint> = (0..10)
            .map(|k| StayPoint {
                t: k * 3600,
                p: PlanarPoint::new(1200 * k as u64, 1200 * k as u64),
            })
            .collect();
        let mut p = pool(64);
        let b = build_day_reports(0, &stays, &mut p, &grid(), 400, 3, &mut rng).unwrap();
        let ids: HashSet<_> = b.per_server[0].iter().map(|r| r.pseudo_id).collect();
        assert_eq!(ids.len(), b.per_server[0].len());
    }

    #[test]
    fn jsonl_roundtrip_uses_hex_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let stay = StayPoint {
            t: 100,
            p: PlanarPoint::new(2350, 2350),
        };
        let mut p = pool(10);
        let b = build_day_reports(2, &[stay], &mut p, &grid(), 200, 2, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_reports_jsonl(&mut buf, &b.per_server[0]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(
            text.contains(&format!("\"{}\"", PseudoId(1000))) || text.contains("\"000000000000000000000000000003e8\"")
        );
        assert_eq!(read_reports_jsonl(&buf[..]).unwrap(), b.per_server[0]);
        let mut value: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        value["t_share"] = crate::field::MODULUS.into();
        assert!(read_reports_jsonl(value.to_string().as_bytes()).is_err());
        let bad = text
            .lines()
            .next()
            .unwrap()
            .replacen("\"t_share\":", "\"t_share\":2305843009213693951,\"x\":", 1);
        assert!(read_reports_jsonl(bad.as_bytes()).is_err());
    }

    #[test]
    fn fixes_csv_roundtrip() {
        let rows = vec![
            FixRow {
                user_id: 1,
                day: 0,
                t_seconds: 10,
                x_cm: -5,
                y_cm: 7,
            },
            FixRow {
                user_id: 2,
                day: 3,
                t_seconds: 86_399,
                x_cm: 123_456,
                y_cm: 0,
            },
        ];
        let mut buf = Vec::new();
        write_fixes_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("user_id,day,t_seconds,x_cm,y_cm"));
        assert_eq!(read_fixes_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn pseudo_id_parse() {
        let id = PseudoId(0xdead_beef);
        assert_eq!(id.to_string().len(), 32);
        assert_eq!(id.to_string().parse::<PseudoId>().unwrap(), id);
        assert!("xyz".parse::<PseudoId>().is_err());
    }
}
