use srdp_core::ecms::Weights;
use srdp_core::harness::{
    compare_oracle, emit_report, oracle_pairs, parse_adversary, random_topology, run_scenario, HarnessError,
    ReportFormat, RunReport, ScenarioConfig,
};
use srdp_core::netsim::load_topology;

const CLOUD: &str = include_str!("../../../scenarios/cloud.topo");

fn with_adversary(spec: &str) -> RunReport {
    run_scenario(&ScenarioConfig {
        adversary: Some(parse_adversary(spec).unwrap()),
        ..ScenarioConfig::with_topology(CLOUD)
    })
    .unwrap()
}

#[test]
fn cost_deflation_goes_unnoticed_but_installs_a_real_path() {
    let r = with_adversary("cost-deflate@R2");
    assert!(r.tampering_occurred);
    assert!(!r.detection_expected);
    assert!(r.detections.is_empty());
    assert!(r.installs.iter().all(|i| i.genuine));
}

#[test]
fn replayed_requests_are_absorbed_as_duplicates() {
    let honest = run_scenario(&ScenarioConfig::with_topology(CLOUD)).unwrap();
    let r = with_adversary("replay@R2");
    let dups = |r: &RunReport| -> u64 { r.counters.values().filter_map(|c| c.dropped.get("Duplicate")).sum() };
    assert!(dups(&r) > dups(&honest));
    assert_eq!(r.route, honest.route);
    assert!(r.detections.is_empty());
}

#[test]
fn forged_token_never_moves_a_task() {
    let r = with_adversary("token-forge@R1");
    assert!(r.detected);
    assert_eq!(r.task_transfers, 1, "only the honest BCCC task moves");
    let forged = r.sessions.iter().find(|s| s.handshake == "BCCC-forged").unwrap();
    assert!(!forged.ok);
}

#[test]
fn honest_cloud_run_completes_all_handshakes() {
    let r = run_scenario(&ScenarioConfig::with_topology(CLOUD)).unwrap();
    assert_eq!(r.sessions.len(), 3);
    assert!(r.sessions.iter().all(|s| s.ok));
    assert!(r.ledger_total > 0.0);
    assert!(r.counters_consistent);
}

#[test]
fn unreachable_destination_still_yields_a_valid_report() {
    let cfg = ScenarioConfig {
        duration_ms: 3000,
        ..ScenarioConfig::with_topology("node S broker\nnode A relay\nnode D coordinator\nlink S A 5 1\n")
    };
    let r = run_scenario(&cfg).unwrap();
    assert!(r.route.is_none());
    let json = emit_report(&r, ReportFormat::Json);
    let back: RunReport = serde_json::from_slice(&json).unwrap();
    assert_eq!(back, r);
    assert!(!emit_report(&r, ReportFormat::Text).is_empty());
}

#[test]
fn oracle_sweep_over_random_graphs() {
    for seed in 0..20 {
        let t = random_topology(seed, 8, 0.4);
        let pairs = oracle_pairs(&t, seed, 2).unwrap();
        let r = compare_oracle(&t, &pairs, Weights::default(), false).unwrap();
        assert_eq!(r.matches, r.total, "seed {seed}");
        let lit = compare_oracle(&t, &pairs, Weights::default(), true).unwrap();
        assert_eq!(lit.matches, lit.total, "seed {seed}, literal costs");
    }
    let big = random_topology(0, 13, 0.3);
    assert_eq!(compare_oracle(&big, &[], Weights::default(), false), Err(HarnessError::TooLarge(13)));
}

#[test]
fn bad_configs_are_rejected() {
    assert!(run_scenario(&ScenarioConfig::with_topology("node S broker\n")).is_err());
    assert!(run_scenario(&ScenarioConfig::with_topology("link a b 1 1\n")).is_err());
    let cfg = ScenarioConfig {
        epsilon: 1.5,
        ..ScenarioConfig::with_topology(CLOUD)
    };
    assert!(matches!(run_scenario(&cfg), Err(HarnessError::Config(_))));
    assert!(load_topology(CLOUD).is_ok());
}
