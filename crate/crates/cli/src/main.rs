use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prevent_core::analytics::{
    plan_partition, query_cost_tree, query_cost_unpartitioned, theorem1_bound, theorem2_bound, theorem3_probability,
};
use prevent_core::client::{read_fixes_csv, write_fixes_csv, FixRow, PseudoId, StayPoint};
use prevent_core::grid::{GridConfig, PlanarPoint};
use prevent_core::harness::experiment::{pick_patients, write_records_csv};
use prevent_core::harness::geolife::{read_plt, Projection};
use prevent_core::harness::uniformity::{
    audit_plaintext_hits, plaintext_values, received_streams, reshare_streams, write_report_csv, DEFAULT_ALPHA,
    DEFAULT_BUCKETS,
};
use prevent_core::harness::{
    generate_workload, oracle_trace, run_experiment, uniformity_report, Axis, Deployment, DeploymentConfig,
    ExperimentOptions, Instance, StayTable, WorkloadSpec,
};
use prevent_core::orchestrator::QueryParams;
use prevent_core::registry::RealId;

#[derive(Parser)]
#[command(name = "prevent", version, about = "Secret-shared contact tracing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Region and grid counts for a location count, with query costs.
    Plan(PlanArgs),
    /// Privacy bounds for a deployment.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic workload: raw fixes and ground-truth stays.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Upload raw fixes into a deployment directory, creating it from a
    /// workload spec if needed.
    Ingest {
        #[arg(long)]
        fixes: PathBuf,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Trace from a patient's tokens; prints pseudo_id,generation.
    Query {
        #[arg(long)]
        state: PathBuf,
        /// File with one hex token per line.
        #[arg(long, conflicts_with = "user", required_unless_present = "user")]
        patient: Option<PathBuf>,
        /// Registered user whose issued tokens seed the trace.
        #[arg(long)]
        user: Option<RealId>,
        #[command(flatten)]
        query: QueryOverrides,
    },
    /// Copy a deployment's server snapshots, index tables and registry.
    Snapshot {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load and check a snapshot, then write it as a deployment.
    Restore {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        state: PathBuf,
    },
    /// Plaintext trace over ground-truth stays, optionally checked against
    /// a deployment.
    Oracle {
        #[arg(long)]
        stays: PathBuf,
        #[arg(long)]
        patient: RealId,
        /// Compare with the secure trace of this deployment.
        #[arg(long, required_unless_present = "spec")]
        state: Option<PathBuf>,
        /// Query parameters and days when no deployment is given.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        query: QueryOverrides,
    },
    /// Run one experiment axis; prints one CSV record per level.
    Bench {
        #[arg(long)]
        axis: Axis,
        /// Comma-separated levels.
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<u64>,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 100)]
        patients: usize,
        #[arg(long, default_value_t = 2)]
        full_checks: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chi-square report on fresh re-shares of one stay point, or on a
    /// small recorded run when a spec is given.
    Uniformity(UniformityArgs),
    /// Convert a GeoLife directory (one subdirectory of .plt files per
    /// user) into fix rows.
    Geolife {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PlanArgs {
    /// Stored locations per day.
    #[arg(long)]
    users: u64,
    /// Locations in one query.
    #[arg(long, default_value_t = 10)]
    query_locations: u64,
    /// Also lay out a grid covering this side.
    #[arg(long)]
    side_cm: Option<u64>,
    #[arg(long, default_value_t = 200)]
    distance_cm: u64,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Cells per side of the area around a known outbreak.
    #[arg(long)]
    intercepted_cells: u64,
    /// Locations the patient reported.
    #[arg(long)]
    reported: u64,
    #[arg(long)]
    finest_cells: Option<u64>,
    #[arg(long)]
    pseudo_domain: Option<u64>,
    #[arg(long)]
    real_domain: Option<u64>,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct UniformityArgs {
    #[arg(long, default_value_t = 100_000)]
    reshares: usize,
    #[arg(long, default_value_t = 3)]
    servers: usize,
    #[arg(long, default_value_t = DEFAULT_BUCKETS)]
    buckets: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Build this workload with a recorded transcript and audit it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    patients: usize,
}

#[derive(Args, Clone, Copy)]
struct QueryOverrides {
    #[arg(long)]
    distance_cm: Option<u64>,
    #[arg(long)]
    tau_s: Option<u32>,
    #[arg(long)]
    incubation_days: Option<u32>,
    #[arg(long)]
    max_generations: Option<u32>,
}

impl QueryOverrides {
    fn apply(self, mut q: QueryParams) -> QueryParams {
        q.distance_cm = self.distance_cm.unwrap_or(q.distance_cm);
        q.tau_s = self.tau_s.unwrap_or(q.tau_s);
        q.incubation_days = self.incubation_days.unwrap_or(q.incubation_days);
        q.max_generations = self.max_generations.or(q.max_generations);
        q
    }
}

fn print_pairs(pairs: &[(&str, String)], csv: bool) {
    if csv {
        println!("{}", pairs.iter().map(|p| p.0).collect::<Vec<_>>().join(","));
        println!("{}", pairs.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join(","));
    } else {
        for (k, v) in pairs {
            println!("{k}={v}");
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn plan(a: &PlanArgs) -> Result<()> {
    let (regions, grids) = plan_partition(a.users)?;
    let tree = query_cost_tree(a.query_locations, regions, grids, a.users)?;
    let flat = query_cost_unpartitioned(a.query_locations, a.users);
    let mut pairs = vec![
        ("users", a.users.to_string()),
        ("regions", regions.to_string()),
        ("grids", grids.to_string()),
        ("query_cost_tree", tree.to_string()),
        ("query_cost_unpartitioned", flat.to_string()),
        ("speedup", (flat / tree.max(1)).to_string()),
    ];
    if let Some(side) = a.side_cm {
        let g = GridConfig::for_partition(regions, grids, side, 2 * a.distance_cm)?;
        pairs.push(("side_cm", g.side_cm.to_string()));
        pairs.push((
            "cell_widths_cm",
            g.cell_widths_cm
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        ));
    }
    print_pairs(&pairs, a.csv);
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let p = theorem3_probability(a.intercepted_cells, a.reported)?;
    let mut pairs = vec![
        ("intercepted_cells", a.intercepted_cells.to_string()),
        ("reported", a.reported.to_string()),
        ("candidate_cells", p.cells.to_string()),
        ("mapping_probability", format!("{:e}", p.value)),
        ("mapping_log10", format!("{:.6}", p.log10)),
        ("mapping_denominator", p.denominator.to_string()),
    ];
    if let Some(c) = a.finest_cells {
        pairs.push(("cell_guess_bound", format!("{:e}", theorem2_bound(c)?)));
    }
    if let (Some(pd), Some(rd)) = (a.pseudo_domain, a.real_domain) {
        pairs.push(("identity_guess_bound", format!("{:e}", theorem1_bound(pd, rd)?)));
    }
    print_pairs(&pairs, a.csv);
    Ok(())
}

fn gen(spec: &Path, out: &Path) -> Result<()> {
    let spec = WorkloadSpec::load(spec).with_context(|| format!("loading {}", spec.display()))?;
    let w = generate_workload(&spec)?;
    std::fs::create_dir_all(out)?;
    write_fixes_csv(create(&out.join("fixes.csv"))?, &w.fixes)?;
    w.stays.write_csv(create(&out.join("stays.csv"))?)?;
    let grid = spec.resolve_grid()?;
    println!("users,days,fixes,stays,side_cm,cell_widths_cm");
    let widths: Vec<String> = grid.cell_widths_cm.iter().map(u64::to_string).collect();
    println!(
        "{},{},{},{},{},{}",
        spec.users,
        spec.days,
        w.fixes.len(),
        w.stays.len(),
        grid.side_cm,
        widths.join(" ")
    );
    Ok(())
}

fn ingest(fixes: &Path, state: &Path, spec: Option<&Path>) -> Result<()> {
    let rows: Vec<FixRow> = read_fixes_csv(open(fixes)?)?;
    let mut dep = if state.join("config.toml").exists() {
        Deployment::load(state)?
    } else {
        let Some(spec) = spec else {
            bail!("{} holds no deployment; pass --spec to create one", state.display())
        };
        Deployment::new(DeploymentConfig::from_spec(&WorkloadSpec::load(spec)?)?)?
    };
    let (report, _) = dep.ingest(&rows)?;
    dep.save(state)?;
    print_pairs(
        &[
            ("fixes", rows.len().to_string()),
            ("days", report.days.to_string()),
            ("user_days", report.user_days.to_string()),
            ("stays", report.stays.to_string()),
            ("message_sets", report.message_sets.to_string()),
            ("inserted", report.inserted.to_string()),
            ("today", dep.config.today.map_or("none".into(), |d| d.to_string())),
        ],
        false,
    );
    Ok(())
}

fn read_tokens(path: &Path) -> Result<Vec<PseudoId>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#') && *l != "token_hex")
        .map(|l| l.parse::<PseudoId>().map_err(Into::into))
        .collect()
}

fn query(state: &Path, patient: Option<&Path>, user: Option<RealId>, over: QueryOverrides) -> Result<()> {
    let mut dep = Deployment::load(state)?;
    let tokens = match (patient, user) {
        (Some(file), _) => read_tokens(file)?,
        (None, Some(u)) => dep.tokens_of(u)?,
        (None, None) => bail!("pass --patient or --user"),
    };
    let params = over.apply(dep.config.query);
    let result = dep.query_tokens(&tokens, &params)?;
    // fresh dealer randomness for the next run
    dep.save(state)?;
    result.write_csv(io::stdout().lock())?;
    Ok(())
}

fn oracle(
    stays: &Path,
    patient: RealId,
    state: Option<&Path>,
    spec: Option<&Path>,
    over: QueryOverrides,
) -> Result<bool> {
    let Some(state) = state else {
        let spec = WorkloadSpec::load(spec.expect("clap requires --spec without --state"))?;
        let table = StayTable::read_csv(open(stays)?, spec.days - 1, spec.retention())?;
        let want = oracle_trace(&table, patient, &over.apply(spec.query));
        println!("real_id,generation");
        for (id, g) in want {
            println!("{id},{g}");
        }
        return Ok(true);
    };
    let mut dep = Deployment::load(state)?;
    let today = dep.config.today.context("deployment holds no closed day")?;
    let table = StayTable::read_csv(open(stays)?, today, dep.config.retention_days)?;
    let params = over.apply(dep.config.query);
    let want = oracle_trace(&table, patient, &params);
    let got = dep.trace_user(patient, &params)?;
    dep.save(state)?;
    let ids: BTreeSet<RealId> = want.keys().chain(got.keys()).copied().collect();
    let show = |m: &BTreeMap<RealId, u32>, id| m.get(&id).map_or(String::new(), u32::to_string);
    println!("real_id,oracle_generation,system_generation");
    for id in ids {
        println!("{id},{},{}", show(&want, id), show(&got, id));
    }
    let agree = want == got;
    eprintln!("oracle_agreement={agree}");
    Ok(agree)
}

fn bench(
    axis: Axis,
    levels: &[u64],
    spec: &Path,
    patients: usize,
    full_checks: usize,
    out: Option<&Path>,
) -> Result<bool> {
    let spec = WorkloadSpec::load(spec)?;
    let opts = ExperimentOptions {
        patients,
        full_checks,
        ..ExperimentOptions::default()
    };
    let records = run_experiment(axis, levels, &spec, &opts)?;
    match out {
        Some(path) => write_records_csv(create(path)?, &records)?,
        None => write_records_csv(io::stdout().lock(), &records)?,
    }
    Ok(records.iter().all(|r| r.oracle_agreement))
}

fn uniformity(a: &UniformityArgs) -> Result<bool> {
    let Some(spec) = &a.spec else {
        let grid = GridConfig::new(0, 0, 96_000, vec![1200, 12_000, 48_000])?;
        let stay = StayPoint {
            t: 45_000,
            p: PlanarPoint::new(31_550, 60_170),
        };
        let streams = reshare_streams(stay, a.reshares, a.servers, &grid, 200, a.seed)?;
        let rows = uniformity_report(&streams, a.buckets, a.alpha);
        write_report_csv(io::stdout().lock(), &rows)?;
        return Ok(rows.iter().all(|r| r.uniform));
    };
    let spec = WorkloadSpec::load(spec)?;
    let mut inst = Instance::build_traced(&spec)?;
    for p in pick_patients(spec.users, a.patients, spec.seed) {
        inst.trace(p, &spec.query)?;
    }
    let rows = uniformity_report(&received_streams(&inst.party), a.buckets, a.alpha);
    write_report_csv(io::stdout().lock(), &rows)?;
    let audit = audit_plaintext_hits(&inst.party, &plaintext_values(&inst.stays, 1000, 1 << 20));
    eprintln!(
        "audit_scanned={} state_hits={} received_hits={} opened_hits={}",
        audit.scanned, audit.state_hits, audit.received_hits, audit.opened_hits
    );
    Ok(rows.iter().all(|r| r.uniform) && audit.hits() == 0)
}

fn geolife(dir: &Path, out: &Path) -> Result<()> {
    let mut users: Vec<(RealId, Vec<_>)> = Vec::new();
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    subdirs.retain(|p| p.is_dir());
    subdirs.sort();
    for (i, user_dir) in subdirs.iter().enumerate() {
        let traj = if user_dir.join("Trajectory").is_dir() {
            user_dir.join("Trajectory")
        } else {
            user_dir.clone()
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(&traj)?
            .map(|e| e.map(|e| e.path()))
            .collect::<io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "plt"));
        files.sort();
        let mut fixes = Vec::new();
        for f in files {
            fixes.extend(read_plt(open(&f)?)?);
        }
        let id = user_dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse().ok())
            .unwrap_or(i as RealId);
        users.push((id, fixes));
    }
    let all: Vec<_> = users.iter().flat_map(|(_, f)| f.iter().cloned()).collect();
    let Some(proj) = Projection::fit(&all) else {
        bail!("no fixes under {}", dir.display())
    };
    let rows: Vec<FixRow> = users.iter().flat_map(|(id, f)| proj.rows(*id, f)).collect();
    write_fixes_csv(create(out)?, &rows)?;
    let (min_x, max_x) = rows
        .iter()
        .fold((i64::MAX, i64::MIN), |(a, b), r| (a.min(r.x_cm), b.max(r.x_cm)));
    let (min_y, max_y) = rows
        .iter()
        .fold((i64::MAX, i64::MIN), |(a, b), r| (a.min(r.y_cm), b.max(r.y_cm)));
    println!("users,fixes,min_x_cm,max_x_cm,min_y_cm,max_y_cm");
    println!("{},{},{min_x},{max_x},{min_y},{max_y}", users.len(), rows.len());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Plan(a) => plan(&a)?,
        Command::Analyze(a) => analyze(&a)?,
        Command::Gen { spec, out } => gen(&spec, &out)?,
        Command::Ingest { fixes, state, spec } => ingest(&fixes, &state, spec.as_deref())?,
        Command::Query {
            state,
            patient,
            user,
            query: q,
        } => query(&state, patient.as_deref(), user, q)?,
        Command::Snapshot { state, out } => Deployment::load(&state)?.save(&out)?,
        Command::Restore { from, state } => Deployment::load(&from)?.save(&state)?,
        Command::Oracle {
            stays,
            patient,
            state,
            spec,
            query: q,
        } => return oracle(&stays, patient, state.as_deref(), spec.as_deref(), q),
        Command::Bench {
            axis,
            levels,
            spec,
            patients,
            full_checks,
            out,
        } => return bench(axis, &levels, &spec, patients, full_checks, out.as_deref()),
        Command::Uniformity(a) => return uniformity(&a),
        Command::Geolife { dir, out } => geolife(&dir, &out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e:#}");
            ExitCode::from(2)
        }
    }
}
