//! `simt-forge`: run fuzz campaigns, render coverage, replay crashes and
//! manage the bundled benchmarks.
//!
//! Exit codes: 0 success without findings, 1 findings present, 2 usage or
//! validation error, 3 campaign-fatal error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use simt_forge::bench;
use simt_forge::campaign::{self, CampaignConfig, CampaignError, Harness};
use simt_forge::coverage::CoverageReport;
use simt_forge::ir;

const EXIT_FINDINGS: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_FATAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "simt-forge",
    version,
    about = "Fuzz SIMT kernels under an address sanitizer"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a fuzz campaign over a harness.
    Run(RunArgs),
    /// Print the coverage table of a campaign directory.
    Cov {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: CovFormat,
    },
    /// Replay a crash artifact.
    Repro {
        #[arg(long)]
        artifact: PathBuf,
    },
    /// Parse and check a program, and optionally a harness.
    Validate {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        harness: Option<PathBuf>,
    },
    /// List or export the bundled benchmarks.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    harness: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    iters: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// first-finding, iters or wall:SECS; repeatable.
    #[arg(long = "stop-on", value_parser = parse_stop)]
    stop_on: Vec<StopOn>,
    /// Compare COMPUTE outputs of bundled benchmarks with their reference.
    #[arg(long)]
    diff_check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovFormat {
    Text,
    Rec,
}

#[derive(Subcommand)]
enum BenchCmd {
    List,
    Export { name: String, dir: PathBuf },
}

#[derive(Clone, Copy, Debug)]
enum StopOn {
    FirstFinding,
    Iters,
    Wall(u64),
}

fn parse_stop(s: &str) -> Result<StopOn, String> {
    match s {
        "first-finding" => Ok(StopOn::FirstFinding),
        "iters" => Ok(StopOn::Iters),
        _ => s
            .strip_prefix("wall:")
            .and_then(|v| v.parse().ok())
            .map(StopOn::Wall)
            .ok_or_else(|| format!("expected first-finding, iters or wall:SECS, got `{s}`")),
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn trace_enabled() -> bool {
    std::env::var("SIMT_FORGE_TRACE").is_ok_and(|v| v == "1")
}

fn cmd_run(a: RunArgs) -> ExitCode {
    let h = match Harness::load(&a.harness) {
        Ok(h) => h,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let mut cfg = CampaignConfig {
        max_iterations: a.iters,
        workers: a.workers,
        seed: a.seed,
        diff_check: a.diff_check,
        trace: trace_enabled(),
        ..CampaignConfig::default()
    };
    for s in &a.stop_on {
        match *s {
            StopOn::FirstFinding => cfg.stop_on_first_finding = true,
            StopOn::Iters => {}
            StopOn::Wall(secs) => cfg.wall_clock = Some(Duration::from_secs(secs)),
        }
    }
    if let Err(e) = cfg.check() {
        return fail(EXIT_USAGE, e);
    }
    let r = match campaign::run_campaign(&h, &cfg) {
        Ok(r) => r,
        Err(e) => {
            let _ = campaign::write_failure(&a.out, &e);
            return fail(EXIT_FATAL, e);
        }
    };
    if let Err(e) = campaign::write_outputs(&a.out, &h, &r) {
        return fail(EXIT_FATAL, e);
    }
    print!(
        "{}",
        toml::to_string(&r.summary).expect("summary serializes")
    );
    println!("execs_per_sec = {:.1}", r.execs_per_sec());
    for f in r.findings.report_findings() {
        println!("finding: {}", f.report);
    }
    if let Some(e) = &r.fatal {
        return fail(EXIT_FATAL, e);
    }
    if r.summary.findings > 0 || r.summary.diff_mismatches > 0 {
        ExitCode::from(EXIT_FINDINGS)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_cov(dir: &Path, format: CovFormat) -> ExitCode {
    if !dir.is_dir() {
        return fail(EXIT_USAGE, format!("{} is not a directory", dir.display()));
    }
    let path = dir.join("coverage.rec");
    let report = match fs::read_to_string(&path) {
        Ok(text) => match CoverageReport::from_rec(&text) {
            Ok(r) => r,
            Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
        },
        // a directory without a record is an empty campaign
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => CoverageReport::from_rows(Vec::new()),
        Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
    };
    match format {
        CovFormat::Text => print!("{}", report.render_text()),
        CovFormat::Rec => print!("{}", report.to_rec()),
    }
    ExitCode::SUCCESS
}

fn cmd_repro(artifact: &Path) -> ExitCode {
    match campaign::replay(artifact) {
        Ok(r) => {
            println!("reproduced: {}", r.report);
            println!(
                "testcase {} ({} instructions retired)",
                r.testcase.id(),
                r.retired
            );
            ExitCode::from(EXIT_FINDINGS)
        }
        Err(e @ CampaignError::NonReproducing { .. }) => fail(EXIT_FATAL, e),
        Err(e) => fail(EXIT_USAGE, e),
    }
}

fn cmd_validate(program: &Path, harness: Option<&Path>) -> ExitCode {
    let text = match fs::read_to_string(program) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", program.display())),
    };
    let p = match ir::parse_program(&text) {
        Ok(p) => p,
        Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", program.display())),
    };
    let diags = ir::validate(&p);
    for d in &diags {
        eprintln!("{}: {d}", program.display());
    }
    if !diags.is_empty() {
        return ExitCode::from(EXIT_USAGE);
    }
    println!("{}: {} kernel(s) ok", program.display(), p.kernels.len());
    if let Some(path) = harness {
        match Harness::load(path) {
            Ok(h) => println!(
                "{}: ok ({} args, {} launch(es) in COMPUTE)",
                path.display(),
                h.manifest.args.len(),
                h.manifest.launches().count()
            ),
            Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
        }
    }
    ExitCode::SUCCESS
}

fn cmd_bench(cmd: BenchCmd) -> ExitCode {
    match cmd {
        BenchCmd::List => {
            for b in bench::list_benchmarks() {
                let variants: Vec<&str> = b.variants.iter().map(|v| v.variant.name()).collect();
                println!("{:<5} {}", b.name, variants.join(","));
            }
            ExitCode::SUCCESS
        }
        BenchCmd::Export { name, dir } => match bench::export(&name, &dir) {
            Ok(()) => {
                println!("wrote {}", dir.join(&name).display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_USAGE, e),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Cov { dir, format } => cmd_cov(&dir, format),
        Cmd::Repro { artifact } => cmd_repro(&artifact),
        Cmd::Validate { program, harness } => cmd_validate(&program, harness.as_deref()),
        Cmd::Bench { cmd } => cmd_bench(cmd),
    }
}
