use std::fs;

use proptest::prelude::*;
use simt_forge::bench::{self, Variant};
use simt_forge::campaign::{
    replay, run_campaign, write_failure, write_outputs, CampaignConfig, CampaignError, Harness,
};
use simt_forge::sanitizer::BugClass;

fn cfg(iters: u64, seed: u64, workers: usize) -> CampaignConfig {
    CampaignConfig {
        max_iterations: iters,
        seed,
        workers,
        ..CampaignConfig::default()
    }
}

#[test]
fn every_crash_file_replays_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    bench::export("swap", dir.path()).unwrap();
    let man = dir.path().join("swap/variants/uaf.man");
    let h = Harness::load(&man).unwrap();
    let r = run_campaign(&h, &cfg(1500, 21, 2)).unwrap();
    assert!(r.fatal.is_none());
    assert!(r
        .crashes
        .iter()
        .any(|a| a.report.class == BugClass::TemporalUaf));
    let out = dir.path().join("out");
    write_outputs(&out, &h, &r).unwrap();
    let mut n = 0;
    for e in fs::read_dir(out.join("crashes")).unwrap() {
        let path = e.unwrap().path();
        let key = path.file_stem().unwrap().to_str().unwrap().to_string();
        let rep = replay(&path).unwrap();
        assert_eq!(rep.report.dedupe_key, key);
        n += 1;
    }
    assert_eq!(n, r.summary.crashes);
}

#[test]
fn worker_runs_are_reproducible() {
    let h = bench::benchmark("rot")
        .unwrap()
        .harness_for(Variant::Clean)
        .unwrap();
    let a = run_campaign(&h, &cfg(900, 4, 3)).unwrap();
    let b = run_campaign(&h, &cfg(900, 4, 3)).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.summary.init_executions, 3);
    assert_eq!(a.summary.term_executions, 3);
    assert_eq!(a.summary.compute_executions, 900);
    let ids = |r: &simt_forge::campaign::CampaignResult| -> Vec<String> {
        r.corpus
            .interesting()
            .iter()
            .map(|e| e.id.clone())
            .collect()
    };
    assert_eq!(ids(&a), ids(&b));
    let c = run_campaign(&h, &cfg(900, 5, 3)).unwrap();
    assert_eq!(c.summary.compute_executions, 900);
}

#[test]
fn init_finding_is_fatal_and_marked() {
    let b = bench::benchmark("copy").unwrap();
    let man = b.harness.replace(
        "copy_in ws zero",
        "copy_in ws zero\nfree ws\nfree ws\nalloc ws global 16",
    );
    let h = Harness::from_texts(&man, b.kernel, None).unwrap();
    let err = run_campaign(&h, &cfg(10, 0, 1)).unwrap_err();
    assert!(
        matches!(err, CampaignError::SetupFinding { phase: "INIT", .. }),
        "{err}"
    );
    let dir = tempfile::tempdir().unwrap();
    write_failure(dir.path(), &err).unwrap();
    assert!(fs::read_to_string(dir.path().join("FAILED"))
        .unwrap()
        .contains("INIT"));
}

#[test]
fn outputs_replace_stale_state() {
    let h = bench::benchmark("scal")
        .unwrap()
        .harness_for(Variant::Clean)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("crashes")).unwrap();
    fs::write(dir.path().join("crashes/old.crash"), "stale").unwrap();
    fs::write(dir.path().join("FAILED"), "old").unwrap();
    let r = run_campaign(&h, &cfg(50, 0, 1)).unwrap();
    write_outputs(dir.path(), &h, &r).unwrap();
    assert!(!dir.path().join("FAILED").exists());
    assert_eq!(fs::read_dir(dir.path().join("crashes")).unwrap().count(), 0);
    let summary = fs::read_to_string(dir.path().join("summary.rec")).unwrap();
    assert!(summary.contains("iterations = 50"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // Amortization holds for any iteration count and worker split.
    #[test]
    fn counters_follow_the_amortization_contract(iters in 1..300u64, workers in 1..4usize, seed in any::<u64>()) {
        let h = bench::benchmark("asum").unwrap().harness_for(Variant::Clean).unwrap();
        let r = run_campaign(&h, &cfg(iters, seed, workers)).unwrap();
        let s = &r.summary;
        prop_assert_eq!(s.iterations, iters);
        prop_assert_eq!(s.compute_executions, iters);
        prop_assert_eq!(s.init_executions, workers as u64);
        prop_assert_eq!(s.term_executions, workers as u64);
        prop_assert_eq!(s.findings, 0);
        prop_assert!(s.hit_edges <= s.total_edges);
    }
}
