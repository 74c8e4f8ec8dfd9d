//! Synthetic trajectories: clustered stay regions with realistic dwell and
//! travel fixes, plus optional planted contact chains.

use std::collections::HashMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::analytics::plan_partition;
use crate::client::{Day, FixRow, RawFix, StayPoint, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::grid::{GridConfig, PlanarPoint};
use crate::orchestrator::QueryParams;
use crate::registry::RealId;

use super::oracle::StayTable;

const MARGIN_CM: u64 = 200;
const JITTER_CM: i64 = 150;
const FIX_INTERVAL_S: u32 = 300;
const MIN_GAP_S: u32 = 600;
const MAX_GAP_S: u32 = 3600;
const CHAIN_START_S: u32 = 8 * 3600;

/// Where people linger: a few weighted hotspots over a uniform background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geography {
    pub side_cm: u64,
    pub hotspots: usize,
    pub hotspot_sigma_cm: f64,
    /// Hotspot `h` is picked with weight `1 / (h + 1)^skew`.
    pub hotspot_skew: f64,
    /// Share of stays drawn uniformly over the whole square.
    pub background_fraction: f64,
}

impl Default for Geography {
    fn default() -> Self {
        Geography {
            side_cm: 200_000,
            hotspots: 40,
            hotspot_sigma_cm: 7_000.0,
            hotspot_skew: 1.0,
            background_fraction: 0.4,
        }
    }
}

/// A planted chain of contacts: user `first_user + i` meets user
/// `first_user + i + 1` at one place, for `i` in `0..length - 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub length: usize,
    pub first_user: RealId,
    pub day: Day,
    /// Put each link on its own day instead of hours apart on one day.
    #[serde(default)]
    pub days_apart: bool,
}

fn default_min_locs() -> u32 {
    1
}
fn default_servers() -> usize {
    3
}
fn default_subscribers() -> usize {
    4
}
fn default_pool_size() -> usize {
    crate::registry::DEFAULT_POOL_SIZE
}
fn default_stay_radius() -> u64 {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub users: u64,
    pub days: u32,
    /// Stays attempted per user-day are drawn from `min..=max`; a day that
    /// runs out of hours ends with fewer.
    #[serde(default = "default_min_locs")]
    pub min_locs_per_day: u32,
    pub max_locs_per_day: u32,
    pub seed: u64,
    #[serde(default = "default_servers")]
    pub servers: usize,
    #[serde(default = "default_subscribers")]
    pub subscribers: usize,
    /// Tokens per daily pool.
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_stay_radius")]
    pub stay_radius_cm: u64,
    /// Chosen by the partition planner when absent.
    #[serde(default)]
    pub grid: Option<GridConfig>,
    pub query: QueryParams,
    /// Days each store is kept; the incubation period when absent.
    #[serde(default)]
    pub retention_days: Option<u32>,
    #[serde(default)]
    pub geography: Geography,
    #[serde(default)]
    pub chains: Vec<ChainSpec>,
}

impl WorkloadSpec {
    /// A spec with default geography, parties and pools.
    pub fn new(users: u64, days: u32, max_locs_per_day: u32, seed: u64, query: QueryParams) -> Self {
        WorkloadSpec {
            users,
            days,
            min_locs_per_day: default_min_locs(),
            max_locs_per_day,
            seed,
            servers: default_servers(),
            subscribers: default_subscribers(),
            pool_size: default_pool_size(),
            stay_radius_cm: default_stay_radius(),
            grid: None,
            query,
            retention_days: None,
            geography: Geography::default(),
            chains: Vec::new(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: WorkloadSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("workload spec serializes")
    }

    pub fn retention(&self) -> u32 {
        self.retention_days.unwrap_or(self.query.incubation_days).max(1)
    }

    /// Mean stays attempted per user-day.
    pub fn mean_locs(&self) -> f64 {
        (self.min_locs_per_day + self.max_locs_per_day) as f64 / 2.0
    }

    /// The configured grid, or the planner's layout for one day of stays.
    pub fn resolve_grid(&self) -> Result<GridConfig> {
        if let Some(g) = &self.grid {
            return Ok(g.clone());
        }
        let per_day = ((self.users as f64 * self.mean_locs()).round() as u64).max(1);
        let (regions, grids) = plan_partition(per_day)?;
        GridConfig::for_partition(regions, grids, self.geography.side_cm, 2 * self.query.distance_cm)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.users == 0 || self.days == 0 {
            return bad("users and days must be positive".into());
        }
        if self.min_locs_per_day == 0 || self.min_locs_per_day > self.max_locs_per_day {
            return bad(format!(
                "bad stay range {}..={}",
                self.min_locs_per_day, self.max_locs_per_day
            ));
        }
        if self.max_locs_per_day as usize > self.pool_size {
            return bad(format!(
                "{} stays per day exceed the pool of {}",
                self.max_locs_per_day, self.pool_size
            ));
        }
        if self.servers < 2 {
            return Err(Error::InvalidPartyCount(self.servers));
        }
        if self.subscribers == 0 {
            return bad("need at least one subscriber".into());
        }
        // Jittered fixes of one stay must fit the radius; the detour fix
        // must fall outside it.
        if !(425..=1200).contains(&self.stay_radius_cm) {
            return bad(format!("stay radius {} cm outside 425..=1200", self.stay_radius_cm));
        }
        let g = &self.geography;
        if g.side_cm < 20 * MARGIN_CM || g.side_cm > 1 << 28 {
            return bad(format!("service side {} cm out of range", g.side_cm));
        }
        if !(0.0..=1.0).contains(&g.background_fraction) {
            return bad("background fraction must lie in [0, 1]".into());
        }
        if g.background_fraction < 1.0 && (g.hotspots == 0 || g.hotspot_sigma_cm.is_nan() || g.hotspot_sigma_cm <= 0.0)
        {
            return bad("hotspots need a positive count and spread".into());
        }
        if !g.hotspot_skew.is_finite() || g.hotspot_skew < 0.0 {
            return bad("hotspot skew must be a non-negative number".into());
        }
        let grid = self.resolve_grid()?;
        if grid.side_cm < g.side_cm {
            return bad(format!(
                "grid side {} cm is smaller than the area {} cm",
                grid.side_cm, g.side_cm
            ));
        }
        self.query.validate(&grid)?;
        if 2 * self.query.tau_s + MAX_GAP_S >= SECONDS_PER_DAY - CHAIN_START_S {
            return bad(format!(
                "time window {} s leaves no room for a day of stays",
                self.query.tau_s
            ));
        }
        let mut taken: Vec<(RealId, RealId)> = Vec::new();
        for c in &self.chains {
            if c.length < 2 {
                return bad("a chain needs at least two users".into());
            }
            let last = c.first_user + c.length as u64 - 1;
            if last >= self.users {
                return bad(format!("chain user {last} beyond {} users", self.users));
            }
            if taken.iter().any(|&(a, b)| c.first_user <= b && a <= last) {
                return bad("chains must not share users".into());
            }
            taken.push((c.first_user, last));
            let links = c.length as u32 - 1;
            let last_day = if c.days_apart { c.day + links - 1 } else { c.day };
            if last_day >= self.days {
                return bad(format!("chain runs past day {}", self.days - 1));
            }
            if !c.days_apart {
                let end = CHAIN_START_S + (links - 1) * self.chain_spacing() + 2 * self.query.tau_s;
                if end >= SECONDS_PER_DAY {
                    return bad(format!("{} links do not fit in one day", links));
                }
            }
        }
        Ok(())
    }

    fn chain_spacing(&self) -> u32 {
        (3 * 3600).max(2 * self.query.tau_s + 1800)
    }
}

/// One user-day of generated data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserDay {
    pub user: RealId,
    pub day: Day,
    pub fixes: Vec<RawFix>,
    /// Ground truth: the centroid and arrival of every dwell episode.
    pub stays: Vec<StayPoint>,
}

#[derive(Clone, Copy, Debug)]
struct PlannedStay {
    arrival: u32,
    dwell: u32,
    center: (u64, u64),
    /// Planted meetings use exact fixes so both parties share a centroid.
    exact: bool,
}

/// Deterministic generator; every user-day has its own random stream, so
/// a population of `n` users is a prefix of any larger one.
#[derive(Clone, Debug)]
pub struct Workload {
    spec: WorkloadSpec,
    hotspots: Vec<(f64, f64)>,
    weights: Option<WeightedIndex<f64>>,
    planted: HashMap<(RealId, Day), Vec<PlannedStay>>,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one named stream of one user-day.
pub(crate) fn stream_seed(seed: u64, user: RealId, day: Day, stream: u64) -> u64 {
    let a = mix(seed ^ 0x9e37_79b9_7f4a_7c15);
    let b = mix(a ^ user.wrapping_mul(0xd6e8_feb8_6659_fd93));
    mix(b ^ ((day as u64) << 8 | stream))
}

impl Workload {
    pub fn new(spec: &WorkloadSpec) -> Result<Self> {
        spec.validate()?;
        let g = &spec.geography;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed ^ 0x686f_7473_706f_7473));
        let span = (MARGIN_CM as f64)..((g.side_cm - MARGIN_CM) as f64);
        let hotspots: Vec<(f64, f64)> = (0..g.hotspots)
            .map(|_| (rng.gen_range(span.clone()), rng.gen_range(span.clone())))
            .collect();
        let weights = if hotspots.is_empty() {
            None
        } else {
            let w = (0..hotspots.len()).map(|h| 1.0 / ((h + 1) as f64).powf(g.hotspot_skew));
            Some(WeightedIndex::new(w).map_err(|e| Error::InvalidInput(e.to_string()))?)
        };
        let mut workload = Workload {
            spec: spec.clone(),
            hotspots,
            weights,
            planted: HashMap::new(),
        };
        workload.plant_chains();
        Ok(workload)
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    fn plant_chains(&mut self) {
        let tau = self.spec.query.tau_s;
        let spacing = self.spec.chain_spacing();
        for (k, c) in self.spec.chains.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.spec.seed, k as u64, 0, 0xc4));
            for i in 0..c.length - 1 {
                let (day, arrival) = if c.days_apart {
                    (c.day + i as u32, CHAIN_START_S)
                } else {
                    (c.day, CHAIN_START_S + i as u32 * spacing)
                };
                let center = self.uniform_point(&mut rng);
                let a = c.first_user + i as u64;
                for (user, offset) in [(a, 0), (a + 1, rng.gen_range(0..=tau / 2))] {
                    let dwell = tau + rng.gen_range(0..=tau / 2);
                    self.planted.entry((user, day)).or_default().push(PlannedStay {
                        arrival: arrival + offset,
                        dwell,
                        center,
                        exact: true,
                    });
                }
            }
        }
        for stays in self.planted.values_mut() {
            stays.sort_by_key(|s| s.arrival);
        }
    }

    fn uniform_point<R: Rng>(&self, rng: &mut R) -> (u64, u64) {
        let side = self.spec.geography.side_cm;
        (
            rng.gen_range(MARGIN_CM..=side - MARGIN_CM),
            rng.gen_range(MARGIN_CM..=side - MARGIN_CM),
        )
    }

    fn stay_location<R: Rng>(&self, rng: &mut R) -> (u64, u64) {
        let g = &self.spec.geography;
        let weights = match &self.weights {
            Some(w) if !rng.gen_bool(g.background_fraction) => w,
            _ => return self.uniform_point(rng),
        };
        let (cx, cy) = self.hotspots[weights.sample(rng)];
        let normal = Normal::new(0.0, g.hotspot_sigma_cm).expect("positive spread");
        let clamp = |v: f64| v.round().clamp(MARGIN_CM as f64, (g.side_cm - MARGIN_CM) as f64) as u64;
        (clamp(cx + normal.sample(rng)), clamp(cy + normal.sample(rng)))
    }

    fn itinerary<R: Rng>(&self, user: RealId, day: Day, rng: &mut R) -> Vec<PlannedStay> {
        let tau = self.spec.query.tau_s;
        let fixed: &[PlannedStay] = self.planted.get(&(user, day)).map_or(&[], Vec::as_slice);
        let target = rng.gen_range(self.spec.min_locs_per_day..=self.spec.max_locs_per_day) as usize;
        let mut random_left = target.saturating_sub(fixed.len());
        let mut cursor = rng.gen_range(5 * 3600..=7 * 3600);
        let mut plan = Vec::with_capacity(target.max(fixed.len()));
        let mut next_fixed = 0;
        loop {
            if random_left > 0 {
                let dwell = tau + rng.gen_range(0..=tau);
                let gap = rng.gen_range(MIN_GAP_S..=MAX_GAP_S);
                let end = cursor + dwell;
                let fits = match fixed.get(next_fixed) {
                    Some(f) => end + gap <= f.arrival,
                    None => end < SECONDS_PER_DAY,
                };
                if fits {
                    let center = self.stay_location(rng);
                    plan.push(PlannedStay {
                        arrival: cursor,
                        dwell,
                        center,
                        exact: false,
                    });
                    cursor = end + gap;
                    random_left -= 1;
                    continue;
                }
            }
            match fixed.get(next_fixed) {
                Some(f) => {
                    plan.push(*f);
                    cursor = cursor.max(f.arrival + f.dwell + rng.gen_range(MIN_GAP_S..=MAX_GAP_S));
                    next_fixed += 1;
                }
                None => break,
            }
        }
        plan
    }

    /// A travel fix between two stays: 15 to 30 m from the first, at least
    /// 15 m from the second, so neither dwell run absorbs it.
    fn detour<R: Rng>(&self, a: (u64, u64), b: (u64, u64), rng: &mut R) -> (u64, u64) {
        let side = self.spec.geography.side_cm as i64;
        let inside = |v: i64| (MARGIN_CM as i64..=side - MARGIN_CM as i64).contains(&v);
        let ok = |x: i64, y: i64| {
            let d2 = |(px, py): (u64, u64)| (x - px as i64).pow(2) + (y - py as i64).pow(2);
            inside(x) && inside(y) && (1500i64.pow(2)..=3000i64.pow(2)).contains(&d2(a)) && d2(b) >= 1500i64.pow(2)
        };
        for _ in 0..32 {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(1500.0..=3000.0);
            let (x, y) = (a.0 as f64 + r * angle.cos(), a.1 as f64 + r * angle.sin());
            let (x, y) = (x.round() as i64, y.round() as i64);
            if ok(x, y) {
                return (x as u64, y as u64);
            }
        }
        // Two of these lie inside the square on perpendicular axes, and
        // no point is within 15 m of both.
        let (ax, ay) = (a.0 as i64, a.1 as i64);
        [(ax + 3000, ay), (ax - 3000, ay), (ax, ay + 3000), (ax, ay - 3000)]
            .into_iter()
            .find(|&(x, y)| ok(x, y))
            .map(|(x, y)| (x as u64, y as u64))
            .expect("an axis detour always fits")
    }

    pub fn user_day(&self, user: RealId, day: Day) -> UserDay {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.spec.seed, user, day, 1));
        let plan = self.itinerary(user, day, &mut rng);
        let mut fixes = Vec::new();
        let mut stays = Vec::with_capacity(plan.len());
        for (k, s) in plan.iter().enumerate() {
            if k > 0 {
                let prev = plan[k - 1];
                let t = (prev.arrival + prev.dwell + s.arrival) / 2;
                fixes.push(RawFix {
                    t,
                    p: self.detour_point(prev.center, s.center, &mut rng),
                });
            }
            let first = fixes.len();
            let mut t = s.arrival;
            loop {
                let p = if s.exact {
                    PlanarPoint::new(s.center.0, s.center.1)
                } else {
                    let j = |v: u64, rng: &mut ChaCha8Rng| (v as i64 + rng.gen_range(-JITTER_CM..=JITTER_CM)) as u64;
                    PlanarPoint::new(j(s.center.0, &mut rng), j(s.center.1, &mut rng))
                };
                fixes.push(RawFix { t, p });
                if t == s.arrival + s.dwell {
                    break;
                }
                t = (t + FIX_INTERVAL_S).min(s.arrival + s.dwell);
            }
            let run = &fixes[first..];
            let n = run.len() as u64;
            let (sx, sy) = run.iter().fold((0, 0), |(sx, sy), f| (sx + f.p.x, sy + f.p.y));
            stays.push(StayPoint {
                t: s.arrival,
                p: PlanarPoint::new((sx + n / 2) / n, (sy + n / 2) / n),
            });
        }
        UserDay {
            user,
            day,
            fixes,
            stays,
        }
    }

    fn detour_point(&self, a: (u64, u64), b: (u64, u64), rng: &mut ChaCha8Rng) -> PlanarPoint {
        let (x, y) = self.detour(a, b, rng);
        PlanarPoint::new(x, y)
    }

    /// Every user-day, day by day.
    pub fn iter(&self) -> impl Iterator<Item = UserDay> + '_ {
        (0..self.spec.days).flat_map(move |d| (0..self.spec.users).map(move |u| self.user_day(u, d)))
    }
}

/// A fully materialized workload.
#[derive(Clone, Debug)]
pub struct GeneratedWorkload {
    pub fixes: Vec<FixRow>,
    pub stays: StayTable,
}

/// Generates all fixes and the ground-truth stay table for `spec`.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<GeneratedWorkload> {
    let workload = Workload::new(spec)?;
    let mut fixes = Vec::new();
    let mut stays = StayTable::new(spec.days - 1, spec.retention());
    for ud in workload.iter() {
        fixes.extend(ud.fixes.iter().map(|f| FixRow {
            user_id: ud.user,
            day: ud.day,
            t_seconds: f.t,
            x_cm: f.p.x as i64,
            y_cm: f.p.y as i64,
        }));
        stays.extend(ud.user, ud.day, &ud.stays);
    }
    stays.finish();
    Ok(GeneratedWorkload { fixes, stays })
}
