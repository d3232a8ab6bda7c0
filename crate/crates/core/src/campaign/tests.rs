use super::*;
use crate::bench::{self, Variant};
use crate::coverage::CoverageMap;
use crate::exec::SanitizerHook;
use crate::memory::DeviceMemoryImage;
use crate::mutation::{mutate_testcase, MutationConfig, TestCase, TypedValue};
use crate::rng;
use crate::sanitizer::BugClass;

fn axpy() -> bench::BenchmarkEntry {
    bench::benchmark("axpy").unwrap()
}

const HEADER: &str = "program k.sir\narg a f32 2.0\narg x array f32 global 256 seq\narg y array f32 global 256 seq\narg n i32 4 range=0..256\n";

fn manifest_err(body: &str) -> ManifestError {
    let text = format!("{HEADER}{body}");
    match Harness::from_texts(&text, axpy().kernel, None) {
        Err(CampaignError::Manifest(e)) => e,
        other => panic!("expected a manifest error, got {other:?}"),
    }
}

const GOOD: &str = "INIT\nalloc x global 1024\nalloc y global 1024\nCOMPUTE\ncopy_in x tc:1\ncopy_in y tc:2\nlaunch axpy grid=1 block=4 args=tc:0,@x,@y,tc:3,256\ncopy_out y 16\nTERM\nfree y\nfree x\n";

#[test]
fn small_manifest_validates() {
    let h = Harness::from_texts(&format!("{HEADER}{GOOD}"), axpy().kernel, None).unwrap();
    assert_eq!(h.manifest.launches().count(), 1);
    assert_eq!(h.arg_names(), ["a", "x", "y", "n"]);
    assert_eq!(h.manifest.seed.args[3], TypedValue::I32(4));
}

#[test]
fn manifest_errors() {
    assert!(matches!(
        manifest_err(&GOOD.replace("free y\n", "free y\nfree z\n")),
        ManifestError::DanglingFree { name, .. } if name == "z"
    ));
    assert!(matches!(
        manifest_err("INIT\nalloc x global 1024\nCOMPUTE\nTERM\nfree x\n"),
        ManifestError::ManifestSyntax { .. }
    ));
    assert!(matches!(
        manifest_err(&GOOD.replace("launch axpy", "launch gemm")),
        ManifestError::UnknownKernel { kernel, .. } if kernel == "gemm"
    ));
    assert!(matches!(
        manifest_err(&GOOD.replace(",tc:3,256", ",tc:3")),
        ManifestError::ArgArityMismatch { .. }
    ));
    // tc:3 unused
    assert!(matches!(
        manifest_err(&GOOD.replace(",tc:3,256", ",4,256")),
        ManifestError::ArgArityMismatch { .. }
    ));
    assert!(matches!(
        manifest_err(&GOOD.replace("free x\n", "")),
        ManifestError::LeakedAllocation(names) if names == ["x"]
    ));
    assert!(matches!(
        manifest_err(&GOOD.replace("copy_out y 16\n", "alloc t global 4\ncopy_out y 16\n")),
        ManifestError::LeakedAllocation(_)
    ));
    assert!(matches!(
        manifest_err(&GOOD.replace("@y,tc:3", "@q,tc:3")),
        ManifestError::UndefinedName { .. }
    ));
    assert!(matches!(
        manifest_err(&GOOD.replace("grid=1", "grid=one")),
        ManifestError::ManifestSyntax { .. }
    ));
}

fn init(h: &Harness) -> (DeviceMemoryImage, HostState) {
    let mut image = DeviceMemoryImage::default();
    let mut state = HostState::default();
    let run = PhaseRun {
        program: &h.program,
        args: &h.manifest.seed.args,
        default_budget: None,
        collect_outputs: false,
    };
    let out = run_phase(
        &run,
        &h.arg_names(),
        &mut image,
        &mut state,
        h.manifest.phase(Phase::Init),
        &mut SanitizerHook,
    )
    .unwrap();
    assert!(!out.stopped());
    (image, state)
}

fn compute(
    h: &Harness,
    image: &mut DeviceMemoryImage,
    state: &HostState,
    args: &[TypedValue],
) -> PhaseOutcome {
    let run = PhaseRun {
        program: &h.program,
        args,
        default_budget: None,
        collect_outputs: true,
    };
    let mut state = state.clone();
    run_phase(
        &run,
        &h.arg_names(),
        image,
        &mut state,
        h.manifest.phase(Phase::Compute),
        &mut SanitizerHook,
    )
    .unwrap()
}

#[test]
fn axpy_init_allocates_named_buffers() {
    let h = axpy().harness_for(Variant::Clean).unwrap();
    let (image, state) = init(&h);
    let names: Vec<&str> = state.names.keys().map(String::as_str).collect();
    assert_eq!(names, ["x", "y", "ws"]);
    assert_eq!(image.live_allocations().count(), 3);
    let ws = state.names["ws"];
    assert_eq!(ws.size, 4 << 20);
    assert!(image
        .read(ws.addr, ws.size as usize)
        .unwrap()
        .iter()
        .all(|&b| b == 0));
}

#[test]
fn term_leaves_nothing_live() {
    let h = axpy().harness_for(Variant::Clean).unwrap();
    let (mut image, mut state) = init(&h);
    let run = PhaseRun {
        program: &h.program,
        args: &h.manifest.seed.args,
        default_budget: None,
        collect_outputs: false,
    };
    let out = run_phase(
        &run,
        &h.arg_names(),
        &mut image,
        &mut state,
        h.manifest.phase(Phase::Term),
        &mut SanitizerHook,
    )
    .unwrap();
    assert!(!out.stopped());
    assert_eq!(image.live_allocations().count(), 0);
}

/// Independent model of the oob variant's clamp: does `n` drive the loop
/// past the 256-element allocation?
fn oob_model_fires(n: i32) -> bool {
    let clamp_skipped = n.wrapping_add(16) <= bench::CAP.wrapping_add(16);
    let limit = if clamp_skipped { n } else { bench::CAP };
    limit > 256
}

#[test]
fn oob_variant_fires_from_the_smallest_overflowing_n() {
    let smallest = (0..=i32::MAX).find(|&n| oob_model_fires(n)).unwrap();
    assert_eq!(smallest, i32::MAX - 15);

    let h = axpy().harness_for(Variant::Oob).unwrap();
    let (image, state) = init(&h);
    let mut args = h.manifest.seed.args.clone();
    for (n, fires) in [
        (smallest - 1, false),
        (smallest, true),
        (i32::MAX, true),
        (257, false),
    ] {
        args[3] = TypedValue::I32(n);
        let mut img = image.clone();
        let out = compute(&h, &mut img, &state, &args);
        assert_eq!(out.report.is_some(), fires, "n = {n}");
        if let Some(r) = out.report {
            assert_eq!(r.class, BugClass::SpatialOob);
        }
    }
}

#[test]
fn alloc_oom_is_a_memory_error() {
    let body = GOOD
        .replace(
            "alloc y global 1024",
            "alloc y global 1024\nalloc big global 999999999",
        )
        .replace("free y\n", "free y\nfree big\n");
    let h = Harness::from_texts(&format!("{HEADER}{body}"), axpy().kernel, None).unwrap();
    let mut image = DeviceMemoryImage::default();
    let run = PhaseRun {
        program: &h.program,
        args: &h.manifest.seed.args,
        default_budget: None,
        collect_outputs: false,
    };
    let err = run_phase(
        &run,
        &h.arg_names(),
        &mut image,
        &mut HostState::default(),
        h.manifest.phase(Phase::Init),
        &mut SanitizerHook,
    )
    .unwrap_err();
    assert!(matches!(err, CampaignError::Memory { line, .. } if line > 0));
}

#[test]
fn scheduler_with_only_seeds_picks_seeds() {
    let h = axpy().harness_for(Variant::Clean).unwrap();
    let corpus = Corpus::new(vec![h.manifest.seed.clone()]);
    let mut r = rng::from_seed(3);
    for it in 0..50 {
        assert!(schedule_next(&corpus, it, &mut r).found_at.is_none());
    }
}

#[test]
fn scheduler_is_deterministic_and_weights_new_entries() {
    let h = axpy().harness_for(Variant::Clean).unwrap();
    let seed = h.manifest.seed.clone();
    let mut corpus = Corpus::new(vec![seed.clone()]);
    let mut mrng = rng::from_seed(9);
    let parent = corpus.seeds()[0].clone();
    for k in 0..20u64 {
        let child = mutate_testcase(
            &seed,
            &h.manifest.args,
            k,
            &MutationConfig::default(),
            &mut mrng,
        );
        corpus.admit(parent.derive(child, k, 1));
    }
    let newest = parent.derive(
        TestCase {
            args: seed.args.clone(),
            rng_seed: 77,
            parent: Some(seed.id()),
            trace: Vec::new(),
        },
        1000,
        1,
    );
    corpus.admit(newest.clone());

    let picks = |s: u64| -> Vec<String> {
        let mut r = rng::from_seed(s);
        (1000..1100)
            .map(|it| schedule_next(&corpus, it, &mut r).id.clone())
            .collect()
    };
    assert_eq!(picks(42), picks(42));

    // Oracle: recompute the weighted choice from the raw draws.
    let parents: Vec<_> = corpus.parents().cloned().collect();
    let mut r = rng::from_seed(42);
    let mut first = None;
    for (k, it) in (1000..1100u64).enumerate() {
        let weights: Vec<u64> = parents
            .iter()
            .map(|e| match e.found_at {
                Some(at) if it - at.min(it) < ADMISSION_WINDOW => 4,
                _ => 1,
            })
            .collect();
        let total: u64 = weights.iter().sum();
        let mut pick = rand::Rng::random_range(&mut r, 0..total);
        let mut chosen = 0;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                chosen = i;
                break;
            }
            pick -= w;
        }
        assert_eq!(parents[chosen].id, picks(42)[k]);
        if first.is_none() && parents[chosen].id == newest.id {
            first = Some(k);
        }
    }
    assert!(first.is_some(), "new entry never picked in 100 draws");
}

#[test]
fn restore_returns_the_post_init_image() {
    let h = axpy().harness_for(Variant::Clean).unwrap();
    let (mut image, state) = init(&h);
    let snap = image.snapshot(None);
    let reference = image.clone();
    let mut r = rng::from_seed(5);
    let mut tc = h.manifest.seed.clone();
    for it in 0..40 {
        image.restore(&snap);
        assert!(image == reference, "iteration {it}");
        tc = mutate_testcase(
            &tc,
            &h.manifest.args,
            it,
            &MutationConfig::default(),
            &mut r,
        );
        image.set_iteration(Some(it));
        compute(&h, &mut image, &state, &tc.args);
    }
    image.restore(&snap);
    assert!(image == reference);
}

fn cfg(iters: u64, seed: u64) -> CampaignConfig {
    CampaignConfig {
        max_iterations: iters,
        seed,
        ..CampaignConfig::default()
    }
}

#[test]
fn clean_campaign_amortizes_setup() {
    let h = axpy().harness_for(Variant::Clean).unwrap();
    let r = run_campaign(&h, &cfg(100, 1)).unwrap();
    let s = &r.summary;
    assert_eq!((s.iterations, s.compute_executions), (100, 100));
    assert_eq!((s.init_executions, s.term_executions), (1, 1));
    assert_eq!(s.findings, 0);
    assert!(r.fatal.is_none());
    assert_eq!(s.stopped_by, "iterations");

    let two = CampaignConfig {
        workers: 2,
        ..cfg(100, 1)
    };
    let r = run_campaign(&h, &two).unwrap();
    assert_eq!(
        (
            r.summary.init_executions,
            r.summary.term_executions,
            r.summary.iterations
        ),
        (2, 2, 100)
    );

    let re = CampaignConfig {
        mode: InitMode::Reinit,
        ..cfg(10, 1)
    };
    let r = run_campaign(&h, &re).unwrap();
    assert_eq!(
        (r.summary.init_executions, r.summary.compute_executions),
        (11, 10)
    );
}

#[test]
fn admission_only_on_strict_growth() {
    let h = bench::benchmark("rotm")
        .unwrap()
        .harness_for(Variant::Clean)
        .unwrap();
    let r = run_campaign(&h, &cfg(600, 2)).unwrap();
    assert!(!r.corpus.interesting().is_empty());

    // Replay each admitted entry in order; each must add edges to the union
    // of the ones before it.
    let (image, state) = init(&h);
    let mut union = CoverageMap::new(&h.program);
    for e in r.corpus.interesting() {
        assert!(e.new_edges > 0);
        let mut img = image.clone();
        let mut cov = CoverageMap::new(&h.program);
        let run = PhaseRun {
            program: &h.program,
            args: &e.tc.args,
            default_budget: None,
            collect_outputs: false,
        };
        let mut st = state.clone();
        let out = run_phase(
            &run,
            &h.arg_names(),
            &mut img,
            &mut st,
            h.manifest.phase(Phase::Compute),
            &mut (SanitizerHook, &mut cov),
        )
        .unwrap();
        assert!(!out.stopped());
        let before = union.total_hit_edges();
        union.merge_from(&cov).unwrap();
        assert!(
            union.total_hit_edges() > before,
            "entry {} added nothing",
            e.id
        );
    }
    assert!(union.total_hit_edges() <= r.summary.hit_edges);
}

#[test]
fn first_finding_stops_and_replays() {
    let h = axpy().harness_for(Variant::Oob).unwrap();
    let c = CampaignConfig {
        stop_on_first_finding: true,
        ..cfg(10_000, 7)
    };
    let r = run_campaign(&h, &c).unwrap();
    assert_eq!(r.summary.stopped_by, "first-finding");
    assert!(r.summary.iterations <= 10_000);
    assert_eq!(r.crashes.len(), 1);
    let a = &r.crashes[0];
    assert_eq!(a.report.class, BugClass::SpatialOob);
    let back = CrashArtifact::from_toml(&a.to_toml()).unwrap();
    assert_eq!(&back, a);
    let rep = replay_harness(&h, &back).unwrap();
    assert_eq!(rep.report.dedupe_key, a.report.dedupe_key);

    let files = *axpy().variant(Variant::Oob).unwrap();
    let edited = files.kernel.replace("add %r6, $n, 16", "add %r6, $n, 17");
    let h2 = Harness::from_texts(files.harness, &edited, None).unwrap();
    assert!(matches!(
        replay_harness(&h2, a),
        Err(CampaignError::DigestMismatch {
            what: "program",
            ..
        })
    ));

    let mut wire: toml::Table = toml::from_str(&a.to_toml()).unwrap();
    wire.insert("lineage".into(), toml::Value::Array(Vec::new()));
    let clean = CrashArtifact::from_toml(&toml::to_string(&wire).unwrap()).unwrap();
    assert!(matches!(
        replay_harness(&h, &clean),
        Err(CampaignError::NonReproducing { .. })
    ));
}

#[test]
fn bad_config_is_rejected() {
    let h = axpy().harness_for(Variant::Clean).unwrap();
    assert!(matches!(
        run_campaign(&h, &cfg(0, 1)),
        Err(CampaignError::Config(_))
    ));
    let c = CampaignConfig {
        workers: 0,
        ..cfg(5, 1)
    };
    assert!(matches!(
        run_campaign(&h, &c),
        Err(CampaignError::Config(_))
    ));
}
