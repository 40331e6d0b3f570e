mod common;

use std::sync::Arc;
use std::time::Duration;

use mbrkit::mbr::{mbr_select, Utility};
use mbrkit::scorer::conformance::{check_endpoint, ConformanceCheck};
use mbrkit::scorer::{BridgeConfig, ProcessScorer, Scorer};

use common::{random_sets, BIN};

fn quick() -> BridgeConfig {
    BridgeConfig {
        batch_timeout: Duration::from_secs(10),
        handshake_timeout: Duration::from_secs(10),
        max_batch: None,
    }
}

fn failed(checks: &[ConformanceCheck]) -> Vec<&'static str> {
    checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
}

#[test]
fn stub_modes_conform() {
    for args in ["--mode overlap", "--mode constant:0.5", "--mode length-penalty", "--mode overlap --max-batch 3", "--shuffle-seed 11"] {
        let checks = check_endpoint(&format!("{BIN} stub-scorer {args}"), quick()).unwrap();
        assert_eq!(checks.len(), 6, "{checks:?}");
        assert!(failed(&checks).is_empty(), "{args}: {checks:#?}");
    }
}

#[test]
fn handshake_capabilities_are_reported() {
    let s = ProcessScorer::spawn(&format!("{BIN} stub-scorer --mode constant:0.7 --max-batch 8"), quick()).unwrap();
    let caps = s.capabilities();
    assert_eq!((caps.name.as_str(), caps.needs_src, caps.needs_ref, caps.max_batch), ("stub-constant", false, false, 8));
    assert!(s.shutdown().unwrap().success());
}

const LIAR: &str = r#"sh -c '
echo "{\"hello\":{\"name\":\"liar\",\"version\":\"0\",\"needs_src\":false,\"needs_ref\":false,\"max_batch\":2,\"out_of_order\":false}}"
while read a && read b; do
  ia=$(echo "$a" | sed "s/.*\"id\":\([0-9]*\).*/\1/")
  ib=$(echo "$b" | sed "s/.*\"id\":\([0-9]*\).*/\1/")
  echo "{\"id\":$ib,\"score\":1}"
  echo "{\"id\":$ia,\"score\":1}"
done'"#;

#[test]
fn undeclared_reordering_is_caught() {
    let checks = check_endpoint(LIAR, quick()).unwrap();
    assert!(failed(&checks).contains(&"batching"), "{checks:#?}");
    let batching = checks.iter().find(|c| c.name == "batching").unwrap();
    assert!(batching.detail.contains("protocol error"), "{}", batching.detail);
}

#[test]
fn endpoint_ignoring_shutdown_fails_conformance() {
    let stubborn = r#"sh -c 'echo "{\"hello\":{\"name\":\"s\",\"version\":\"0\",\"needs_src\":false,\"needs_ref\":false,\"max_batch\":4}}"; while read l; do echo "{\"id\":$(echo "$l" | sed "s/.*\"id\":\([0-9]*\).*/\1/"),\"score\":0}"; done; exec sleep 30'"#;
    let checks = check_endpoint(stubborn, quick()).unwrap();
    assert_eq!(failed(&checks), ["shutdown"], "{checks:#?}");
}

#[test]
fn silent_endpoint_is_a_startup_error() {
    let cfg = BridgeConfig {
        handshake_timeout: Duration::from_millis(300),
        ..quick()
    };
    let err = check_endpoint("sleep 5", cfg).err().expect("no handshake");
    assert!(err.to_string().contains("startup"), "{err}");
}

#[test]
fn overlap_endpoint_matches_in_process_chrf() {
    let scorer = ProcessScorer::spawn(&format!("{BIN} stub-scorer --mode overlap --max-batch 16"), quick()).unwrap();
    let remote = Utility::external(Arc::new(scorer));
    for set in random_sets(100, 8, 8) {
        let a = mbr_select(&set, None, &remote, true).unwrap();
        let b = mbr_select(&set, None, &Utility::chrf(), true).unwrap();
        assert_eq!(a.selected_index, b.selected_index, "{set:?}");
        for (x, y) in a.expected_utilities.iter().zip(&b.expected_utilities) {
            assert!((x * 100.0 - y).abs() < 1e-9, "{set:?}: {x} vs {y}");
        }
    }
}

#[test]
fn shuffled_endpoint_matches_in_order_endpoint() {
    let plain = Utility::external(Arc::new(ProcessScorer::spawn(&format!("{BIN} stub-scorer"), quick()).unwrap()));
    let shuffled = Utility::external(Arc::new(
        ProcessScorer::spawn(&format!("{BIN} stub-scorer --shuffle-seed 3 --max-batch 5"), quick()).unwrap(),
    ));
    for set in random_sets(30, 8, 9) {
        assert_eq!(mbr_select(&set, None, &plain, true).unwrap(), mbr_select(&set, None, &shuffled, true).unwrap());
    }
}
