use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use simt_forge::coverage::{CoverageReport, CoverageRow};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simt-forge"))
        .args(args)
        .env_remove("SIMT_FORGE_TRACE")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn export_axpy(dir: &Path) {
    let o = bin(&["bench", "export", "axpy", p(dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

const TABLE: [(&str, u64, u64, u64); 11] = [
    ("amax", 95, 47, 61),
    ("amin", 106, 47, 59),
    ("asum", 14, 9, 13),
    ("axpy", 30, 7, 7),
    ("copy", 35, 6, 6),
    ("dot", 57, 23, 27),
    ("nrm2", 340, 177, 189),
    ("rot", 81, 10, 10),
    ("rotm", 132, 12, 12),
    ("scal", 19, 4, 4),
    ("swap", 77, 10, 10),
];

fn write_rec(dir: &Path, rows: &[(&str, u64, u64, u64)]) {
    let rows = rows
        .iter()
        .map(|&(k, total, hit, edges)| CoverageRow::new(k, total, hit, edges, None).unwrap())
        .collect();
    fs::write(
        dir.join("coverage.rec"),
        CoverageReport::from_rows(rows).to_rec(),
    )
    .unwrap();
}

#[test]
fn bench_list_names_eleven_routines() {
    let o = bin(&["bench", "list"]);
    assert_eq!(code(&o), 0);
    let names: Vec<String> = stdout(&o)
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    assert_eq!(names.len(), 11);
    assert_eq!(names[0], "amax");
    assert!(stdout(&o)
        .lines()
        .all(|l| l.ends_with("oob,uaf,space,escape")));
    assert_eq!(code(&bin(&["bench", "export", "gemm", "/tmp"])), 2);
}

#[test]
fn run_clean_axpy() {
    let dir = tempfile::tempdir().unwrap();
    export_axpy(dir.path());
    let out = dir.path().join("out");
    let harness = dir.path().join("axpy/harness.man");
    let o = bin(&[
        "run",
        "--harness",
        p(&harness),
        "--out",
        p(&out),
        "--iters",
        "100",
        "--seed",
        "3",
        "--diff-check",
    ]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("iterations = 100\n"), "{s}");
    assert!(s.contains("init_executions = 1\n"));
    assert!(s.contains("diff_mismatches = 0\n"));
    for f in [
        "summary.rec",
        "coverage.rec",
        "coverage.txt",
        "findings.txt",
        "timing.rec",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("FAILED").exists());
    assert!(fs::read_dir(out.join("corpus")).unwrap().count() >= 1);

    let o = bin(&["cov", "--dir", p(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("Kernel"));
    assert!(stdout(&o).contains("\naxpy "));
}

#[test]
fn run_seeded_oob_then_repro() {
    let dir = tempfile::tempdir().unwrap();
    export_axpy(dir.path());
    let out = dir.path().join("out");
    let harness = dir.path().join("axpy/variants/oob.man");
    let o = bin(&[
        "run",
        "--harness",
        p(&harness),
        "--out",
        p(&out),
        "--iters",
        "2000",
        "--stop-on",
        "first-finding",
    ]);
    assert_eq!(code(&o), 1, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("stopped_by = \"first-finding\""));
    let crashes: Vec<_> = fs::read_dir(out.join("crashes"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(crashes.len(), 1);

    let o = bin(&["repro", "--artifact", p(&crashes[0])]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("reproduced: SPATIAL_OOB"));

    // a clean lineage no longer reproduces
    let text = fs::read_to_string(&crashes[0]).unwrap();
    let mut wire: toml::Table = toml::from_str(&text).unwrap();
    wire.insert("lineage".into(), toml::Value::Array(Vec::new()));
    let clean = dir.path().join("clean.crash");
    fs::write(&clean, toml::to_string(&wire).unwrap()).unwrap();
    let o = bin(&["repro", "--artifact", p(&clean)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("clean run"));

    // editing the kernel invalidates the artifact
    let sir = dir.path().join("axpy/variants/oob.sir");
    let edited = fs::read_to_string(&sir)
        .unwrap()
        .replace("add %r7, $cap, 16", "add %r7, $cap, 17");
    fs::write(&sir, edited).unwrap();
    let o = bin(&["repro", "--artifact", p(&crashes[0])]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("program"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&bin(&["run", "--out", "/tmp/x"])), 2);
    assert_eq!(
        code(&bin(&[
            "run",
            "--harness",
            "/nonexistent.man",
            "--out",
            "/tmp/x"
        ])),
        2
    );
    assert_eq!(
        code(&bin(&[
            "run",
            "--harness",
            "h",
            "--out",
            "o",
            "--stop-on",
            "never"
        ])),
        2
    );
    assert_eq!(code(&bin(&["cov", "--dir", "/nonexistent/dir"])), 2);
    assert_eq!(code(&bin(&["frobnicate"])), 2);
    assert_eq!(code(&bin(&["--help"])), 0);
}

#[test]
fn zero_iterations_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    export_axpy(dir.path());
    let harness = dir.path().join("axpy/harness.man");
    let o = bin(&[
        "run",
        "--harness",
        p(&harness),
        "--out",
        p(&dir.path().join("o")),
        "--iters",
        "0",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn validate_reports_line_anchored_errors() {
    let dir = tempfile::tempdir().unwrap();
    export_axpy(dir.path());
    let good = dir.path().join("axpy/kernel.sir");
    let harness = dir.path().join("axpy/harness.man");
    let o = bin(&["validate", "--program", p(&good), "--harness", p(&harness)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("1 kernel(s) ok"));

    let bad = dir.path().join("bad.sir");
    fs::write(
        &bad,
        "kernel k(n:i32) regs=2\n    mov %r0, 1\n    frob %r1\n    exit\n",
    )
    .unwrap();
    let o = bin(&["validate", "--program", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn cov_renders_the_reference_table() {
    let dir = tempfile::tempdir().unwrap();
    write_rec(dir.path(), &TABLE);
    let o = bin(&["cov", "--dir", p(dir.path())]);
    assert_eq!(code(&o), 0);
    let golden = include_str!("golden/blas_coverage.txt");
    assert_eq!(stdout(&o), golden);
    let geo = stdout(&o)
        .lines()
        .find(|l| l.starts_with("GeoMean"))
        .unwrap()
        .to_string();
    assert!(geo.split_whitespace().any(|c| c == "25.98"), "{geo}");

    let o = bin(&["cov", "--dir", p(dir.path()), "--format", "rec"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        stdout(&o),
        fs::read_to_string(dir.path().join("coverage.rec")).unwrap()
    );
}

#[test]
fn cov_single_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    write_rec(dir.path(), &[("asum", 14, 9, 13)]);
    let o = bin(&["cov", "--dir", p(dir.path())]);
    let row = stdout(&o)
        .lines()
        .find(|l| l.starts_with("asum"))
        .unwrap()
        .to_string();
    assert!(row.split_whitespace().any(|c| c == "64.29"), "{row}");

    let empty = tempfile::tempdir().unwrap();
    let o = bin(&["cov", "--dir", p(empty.path())]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert_eq!(s.lines().count(), 4, "{s}");
    assert!(!s.lines().any(|l| l.starts_with("GeoMean  ")));
    assert!(s.contains("GeoMean omitted"));
}

#[test]
fn trace_env_var_prints_executed_instructions() {
    let dir = tempfile::tempdir().unwrap();
    export_axpy(dir.path());
    let harness = dir.path().join("axpy/harness.man");
    let out = dir.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_simt-forge"))
        .args([
            "run",
            "--harness",
            p(&harness),
            "--out",
            p(&out),
            "--iters",
            "1",
        ])
        .env("SIMT_FORGE_TRACE", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).lines().count() > 100);
    let quiet = bin(&[
        "run",
        "--harness",
        p(&harness),
        "--out",
        p(&out),
        "--iters",
        "1",
    ]);
    assert!(stderr(&quiet).is_empty());
}
