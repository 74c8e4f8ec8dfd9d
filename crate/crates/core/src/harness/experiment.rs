//! Scaling experiments: one instance per level of an axis, random-patient
//! queries, and oracle agreement for every query.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::registry::RealId;

use super::instance::Instance;
use super::oracle::oracle_trace;
use super::workload::{stream_seed, WorkloadSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    /// Level is the user count.
    Trajectories,
    /// Level is the finest cell width in cm.
    CellSize,
    /// Level is the infectious distance in cm.
    Distance,
    /// Level is the incubation period in days.
    Incubation,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Trajectories, Axis::CellSize, Axis::Distance, Axis::Incubation];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Trajectories => "trajectories",
            Axis::CellSize => "cell-size",
            Axis::Distance => "distance",
            Axis::Incubation => "incubation",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown axis {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentOptions {
    pub patients: usize,
    /// Patients per level that also get a multi-generation trace checked.
    pub full_checks: usize,
    /// Generation cap for those traces; large instances percolate.
    pub full_check_generations: Option<u32>,
    /// Users of the final day whose insertion is measured separately.
    pub probe_users: u64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            patients: 100,
            full_checks: 2,
            full_check_generations: Some(2),
            probe_users: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub axis: Axis,
    pub x_value: u64,
    pub seed: u64,
    pub users: u64,
    pub days: u32,
    pub stays: u64,
    pub message_sets: u64,
    /// Equality tests per stay point for the probe users.
    pub insert_eq_tests_per_stay: f64,
    pub insert_sets_per_stay: f64,
    pub mean_insert_us: f64,
    pub patients: usize,
    pub mean_query_ms: f64,
    pub mean_patient_records: f64,
    pub mean_query_comparisons: f64,
    /// Patient records times the mean level-1 cell occupancy per day.
    pub predicted_query_comparisons: f64,
    pub mean_contacts: f64,
    pub oracle_checks: usize,
    pub oracle_mismatches: usize,
    pub oracle_agreement: bool,
}

/// The spec for one level of `axis`.
pub fn apply_level(axis: Axis, x: u64, base: &WorkloadSpec) -> Result<WorkloadSpec> {
    let mut spec = base.clone();
    match axis {
        Axis::Trajectories => spec.users = x,
        Axis::Distance => spec.query.distance_cm = x,
        Axis::Incubation => spec.query.incubation_days = x as u32,
        Axis::CellSize => {
            let top = base.resolve_grid()?;
            spec.grid = Some(grid_with_finest(&top, x)?);
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Three levels `[w, mid, top]` keeping the base grid's top width, with
/// `mid` the multiple of `w` dividing `top` nearest their geometric mean.
/// Two levels when no such width exists.
fn grid_with_finest(base: &GridConfig, w: u64) -> Result<GridConfig> {
    let top = base.width(base.levels);
    if w == 0 || !top.is_multiple_of(w) || w == top {
        return Err(Error::InvalidGridConfig(format!(
            "finest width {w} must properly divide {top}"
        )));
    }
    let k = top / w;
    let target = (k as f64).sqrt().ln();
    let q = (2..k).filter(|q| k.is_multiple_of(*q)).min_by(|a, b| {
        ((*a as f64).ln() - target)
            .abs()
            .total_cmp(&((*b as f64).ln() - target).abs())
    });
    let widths = match q {
        Some(q) => vec![w, w * q, top],
        None => vec![w, top],
    };
    GridConfig::new(base.origin_x_cm, base.origin_y_cm, base.side_cm, widths)
}

/// The same patients for every level: drawn from the smallest population.
pub fn pick_patients(users: u64, count: usize, seed: u64) -> Vec<RealId> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0, 0, 0x9a7e));
    let n = count.min(users as usize);
    let mut v: Vec<RealId> = sample(&mut rng, users as usize, n)
        .into_iter()
        .map(|i| i as RealId)
        .collect();
    v.sort_unstable();
    v
}

/// Builds one level and runs the patient queries against it.
pub fn measure(
    instance: &mut Instance,
    axis: Axis,
    x: u64,
    opts: &ExperimentOptions,
    patients: &[RealId],
) -> Result<ExperimentRecord> {
    let spec = instance.spec.clone();
    let params = spec.query;
    let mut first = params;
    first.max_generations = Some(1);
    let (start, end) = instance.stays.window(&params);
    let cells = instance.grid.cell_count(1) as f64;
    let days_in_window = (end + 1 - start) as f64;
    let records_in_window: usize = instance.party.servers()[0]
        .days()
        .filter(|d| (start..=end).contains(&d.day()))
        .map(|d| d.len())
        .sum();
    let occupancy = records_in_window as f64 / days_in_window / cells;

    let (mut query_time, mut records, mut comparisons, mut contacts) = (0.0, 0u64, 0u64, 0usize);
    let (mut checks, mut mismatches) = (0, 0);
    for &p in patients {
        let started = Instant::now();
        let found = instance.contacts(p, &params)?;
        query_time += started.elapsed().as_secs_f64();
        let stats = instance.party.last_query();
        records += stats.patient_records;
        comparisons += stats.counters.record_comparisons;
        contacts += found.len();
        let expected: Vec<RealId> = oracle_trace(&instance.stays, p, &first).into_keys().collect();
        checks += 1;
        mismatches += (found != expected) as usize;
    }
    let mut full = params;
    full.max_generations = opts.full_check_generations;
    for &p in patients.iter().take(opts.full_checks) {
        let got: BTreeMap<RealId, u32> = instance.trace(p, &full)?;
        checks += 1;
        mismatches += (got != oracle_trace(&instance.stays, p, &full)) as usize;
    }
    let n = patients.len().max(1) as f64;
    let total = instance.metrics.total;
    Ok(ExperimentRecord {
        axis,
        x_value: x,
        seed: spec.seed,
        users: spec.users,
        days: spec.days,
        stays: total.stays,
        message_sets: total.message_sets,
        insert_eq_tests_per_stay: instance.metrics.probe.eq_tests_per_stay(),
        insert_sets_per_stay: total.sets_per_stay(),
        mean_insert_us: total.elapsed.as_secs_f64() * 1e6 / total.message_sets.max(1) as f64,
        patients: patients.len(),
        mean_query_ms: query_time * 1e3 / n,
        mean_patient_records: records as f64 / n,
        mean_query_comparisons: comparisons as f64 / n,
        predicted_query_comparisons: records as f64 / n * occupancy,
        mean_contacts: contacts as f64 / n,
        oracle_checks: checks,
        oracle_mismatches: mismatches,
        oracle_agreement: mismatches == 0,
    })
}

/// Runs every level in order. Levels of the incubation axis share one
/// instance since only the query changes.
pub fn run_experiment(
    axis: Axis,
    levels: &[u64],
    base: &WorkloadSpec,
    opts: &ExperimentOptions,
) -> Result<Vec<ExperimentRecord>> {
    let specs: Vec<WorkloadSpec> = levels
        .iter()
        .map(|&x| apply_level(axis, x, base))
        .collect::<Result<_>>()?;
    let min_users = specs.iter().map(|s| s.users).min().unwrap_or(base.users);
    let patients = pick_patients(min_users, opts.patients, base.seed);
    let mut out = Vec::with_capacity(levels.len());
    let mut shared: Option<Instance> = None;
    for (&x, spec) in levels.iter().zip(&specs) {
        let reuse = shared.as_ref().is_some_and(|i| i.spec.retention() == spec.retention());
        let mut instance = match shared.take() {
            Some(inst) if reuse => inst,
            _ => Instance::build_with_probe(spec, opts.probe_users)?,
        };
        instance.spec = spec.clone();
        out.push(measure(&mut instance, axis, x, opts, &patients)?);
        if axis == Axis::Incubation {
            shared = Some(instance);
        }
    }
    Ok(out)
}

pub fn write_records_csv<W: Write>(w: W, records: &[ExperimentRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
