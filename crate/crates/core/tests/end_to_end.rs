use std::collections::BTreeMap;

use prevent_core::harness::{oracle_trace, ChainSpec, Instance, WorkloadSpec};
use prevent_core::orchestrator::{broadcast_results, GenerationWindow, QueryParams};
use prevent_core::registry::RealId;

/// Few users spread thin, so only planted meetings produce contacts.
fn sparse(users: u64, days: u32, chain: ChainSpec) -> WorkloadSpec {
    let mut s = WorkloadSpec::new(users, days, 4, 77, QueryParams::new(200, 3600, days));
    s.geography.side_cm = 400_000;
    s.geography.background_fraction = 1.0;
    s.pool_size = 16;
    s.chains.push(chain);
    s
}

#[test]
fn planted_chain_is_found_generation_by_generation() {
    let spec = sparse(
        60,
        3,
        ChainSpec {
            length: 4,
            first_user: 10,
            day: 0,
            days_apart: false,
        },
    );
    let mut inst = Instance::build(&spec).unwrap();
    let got = inst.trace(10, &spec.query).unwrap();
    assert_eq!(got, BTreeMap::from([(11, 1), (12, 2), (13, 3)]));
    assert_eq!(got, oracle_trace(&inst.stays, 10, &spec.query));

    let mut capped = spec.query;
    capped.max_generations = Some(2);
    assert_eq!(inst.trace(10, &capped).unwrap(), BTreeMap::from([(11, 1), (12, 2)]));
    // tracing from the middle reaches both ends at generation 1
    let mid = inst.trace(11, &spec.query).unwrap();
    assert_eq!(mid.get(&10), Some(&1));
    assert_eq!(mid.get(&12), Some(&1));
}

#[test]
fn chain_across_days_respects_the_generation_window() {
    let spec = sparse(
        40,
        5,
        ChainSpec {
            length: 3,
            first_user: 0,
            day: 1,
            days_apart: true,
        },
    );
    let mut inst = Instance::build(&spec).unwrap();
    let seed_window = inst.trace(0, &spec.query).unwrap();
    assert_eq!(seed_window, oracle_trace(&inst.stays, 0, &spec.query));
    assert_eq!(seed_window.get(&1), Some(&1));
    assert_eq!(seed_window.get(&2), Some(&2));

    let mut since = spec.query;
    since.generation_window = GenerationWindow::SinceExposure;
    assert_eq!(inst.trace(0, &since).unwrap(), oracle_trace(&inst.stays, 0, &since));
}

#[test]
fn traces_and_transcripts_are_deterministic() {
    let spec = sparse(
        50,
        3,
        ChainSpec {
            length: 3,
            first_user: 5,
            day: 2,
            days_apart: false,
        },
    );
    let run = || {
        let mut inst = Instance::build(&spec).unwrap();
        let t = inst.trace(5, &spec.query).unwrap();
        (t, inst.party.counters(), inst.party.servers().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn broadcast_notifies_each_contact_once() {
    let spec = sparse(
        60,
        3,
        ChainSpec {
            length: 3,
            first_user: 20,
            day: 1,
            days_apart: false,
        },
    );
    let mut inst = Instance::build(&spec).unwrap();
    let sub = inst.subscriber_of(20);
    let result = inst
        .registry
        .initiate_trace(sub, 20, true, &mut inst.party, &spec.query)
        .unwrap();
    assert!(!result.is_empty());
    let notified = broadcast_results(&result, inst.registry.subscribers_mut());
    let people: Vec<RealId> = inst
        .registry
        .resolve_all(result.ids())
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    assert_eq!(notified, people.len());
    for s in inst.registry.subscribers() {
        assert_eq!(s.received().len(), 1, "every subscriber gets the list");
    }
    assert!(inst
        .registry
        .initiate_trace(sub, 20, false, &mut inst.party, &spec.query)
        .is_err());
}

#[test]
fn random_instance_matches_oracle_for_every_patient() {
    let mut spec = WorkloadSpec::new(150, 3, 6, 9, QueryParams::new(300, 3600, 3));
    spec.geography.side_cm = 25_000;
    spec.geography.hotspot_sigma_cm = 2_000.0;
    spec.pool_size = 20;
    let mut inst = Instance::build(&spec).unwrap();
    let mut first = spec.query;
    first.max_generations = Some(1);
    let mut found = 0;
    for p in 0..spec.users {
        let want: Vec<RealId> = oracle_trace(&inst.stays, p, &first).into_keys().collect();
        found += want.len();
        assert_eq!(inst.contacts(p, &spec.query).unwrap(), want, "patient {p}");
    }
    assert!(found > 20, "instance too sparse to mean much: {found}");
}
