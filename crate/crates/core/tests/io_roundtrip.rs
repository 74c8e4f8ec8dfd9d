use std::fs::File;

use prevent_core::client::{read_fixes_csv, write_fixes_csv};
use prevent_core::harness::{generate_workload, ChainSpec, Deployment, DeploymentConfig, StayTable, WorkloadSpec};
use prevent_core::orchestrator::QueryParams;
use prevent_core::server::snapshot::{read_snapshot, write_snapshot};

fn spec() -> WorkloadSpec {
    let mut s = WorkloadSpec::new(40, 2, 4, 3, QueryParams::new(200, 3600, 2));
    s.geography.side_cm = 15_000;
    s.geography.hotspot_sigma_cm = 1_000.0;
    s.pool_size = 12;
    s.chains.push(ChainSpec {
        length: 2,
        first_user: 1,
        day: 1,
        days_apart: false,
    });
    s
}

#[test]
fn spec_survives_toml() {
    let s = spec();
    assert_eq!(WorkloadSpec::from_toml_str(&s.to_toml_string()).unwrap(), s);
    assert!(WorkloadSpec::from_toml_str("users = 0\ndays = 1\nmax_locs_per_day = 1\nseed = 1\n[query]\ndistance_cm = 200\ntau_s = 3600\nincubation_days = 1\n").is_err());
}

#[test]
fn same_seed_gives_identical_csv() {
    let csv = |s: &WorkloadSpec| {
        let w = generate_workload(s).unwrap();
        let (mut fixes, mut stays) = (Vec::new(), Vec::new());
        write_fixes_csv(&mut fixes, &w.fixes).unwrap();
        w.stays.write_csv(&mut stays).unwrap();
        (fixes, stays)
    };
    let a = csv(&spec());
    assert_eq!(a, csv(&spec()));
    let mut other = spec();
    other.seed += 1;
    assert_ne!(a, csv(&other));
    assert_eq!(
        read_fixes_csv(&a.0[..]).unwrap(),
        generate_workload(&spec()).unwrap().fixes
    );
    let table = StayTable::read_csv(&a.1[..], 1, 2).unwrap();
    assert_eq!(table.len(), generate_workload(&spec()).unwrap().stays.len());
}

#[test]
fn deployment_directory_roundtrip() {
    let s = spec();
    let w = generate_workload(&s).unwrap();
    let mut dep = Deployment::new(DeploymentConfig::from_spec(&s).unwrap()).unwrap();
    dep.ingest(&w.fixes).unwrap();
    let dir = tempfile::tempdir().unwrap();
    dep.save(dir.path()).unwrap();
    let back = Deployment::load(dir.path()).unwrap();
    assert_eq!(back.party.servers(), dep.party.servers());
    assert_eq!(back.config.today, Some(1));

    // a truncated snapshot is refused
    let path = dir.path().join("server-1.snap");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(Deployment::load(dir.path()).is_err());

    let mut buf = Vec::new();
    write_snapshot(&dep.party.servers()[0], &mut buf).unwrap();
    assert_eq!(read_snapshot(&buf[..]).unwrap(), dep.party.servers()[0]);
    let file = dir.path().join("server-0.snap");
    assert_eq!(
        read_snapshot(File::open(file).unwrap()).unwrap(),
        dep.party.servers()[0]
    );
}
