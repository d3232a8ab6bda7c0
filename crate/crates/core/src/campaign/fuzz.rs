use std::ops::Range;
use std::sync::Arc;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::artifact::CrashArtifact;
use super::corpus::{schedule_next, Corpus, CorpusEntry};
use super::runner::{run_phase, HostState, PhaseOutcome, PhaseRun};
use super::{CampaignConfig, CampaignError, Harness, InitMode, Phase};
use crate::bench;
use crate::coverage::{CoverageMap, CoverageReport};
use crate::exec::{SanitizerHook, TraceHook};
use crate::ir::{self, Program};
use crate::memory::{DeviceMemoryImage, Snapshot};
use crate::mutation::{mutate_testcase, TestCase};
use crate::rng::{self, FuzzRng};
use crate::sanitizer::{BugReport, FindingsLog};

/// Deterministic campaign counters. Timing lives in [`CampaignResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub seed: String,
    pub workers: usize,
    pub mode: String,
    pub iterations: u64,
    pub init_executions: u64,
    pub compute_executions: u64,
    pub term_executions: u64,
    pub hangs: u64,
    pub rejected: u64,
    pub corpus_seeds: usize,
    pub corpus_interesting: usize,
    pub crashes: usize,
    pub findings: usize,
    pub finding_events: u64,
    pub hit_edges: usize,
    pub total_edges: usize,
    pub diff_checked: u64,
    pub diff_mismatches: u64,
    pub stopped_by: String,
}

#[derive(Debug)]
pub struct CampaignResult {
    pub summary: CampaignSummary,
    pub findings: FindingsLog,
    pub coverage: CoverageMap,
    pub corpus: Corpus,
    /// First crash per dedupe key, in discovery order.
    pub crashes: Vec<CrashArtifact>,
    pub elapsed: Duration,
    /// Set when the campaign aborted after setup; outputs are partial.
    pub fatal: Option<CampaignError>,
}

impl CampaignResult {
    pub fn execs_per_sec(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs > 0.0 {
            self.summary.compute_executions as f64 / secs
        } else {
            0.0
        }
    }

    pub fn coverage_report(&self) -> CoverageReport {
        self.coverage.report()
    }
}

struct Candidate {
    entry: CorpusEntry,
    delta: CoverageMap,
}

struct CrashEvent {
    entry: CorpusEntry,
    report: Box<BugReport>,
}

#[derive(Default)]
struct RoundResult {
    executed: u64,
    init_executions: u64,
    candidates: Vec<Candidate>,
    crashes: Vec<CrashEvent>,
    hangs: u64,
    rejected: u64,
    diff_checked: u64,
    diff_mismatches: u64,
    found: bool,
    timed_out: bool,
    coverage: Option<CoverageMap>,
    error: Option<CampaignError>,
}

struct Worker<'h> {
    harness: &'h Harness,
    cfg: &'h CampaignConfig,
    image: DeviceMemoryImage,
    snap: Snapshot,
    init_state: HostState,
    init_coverage: CoverageMap,
    rng: FuzzRng,
    delta: CoverageMap,
    arg_names: Vec<String>,
}

fn phase_hooks(
    trace: bool,
    cov: &mut CoverageMap,
) -> (
    SanitizerHook,
    (&mut CoverageMap, Option<TraceHook<std::io::Stderr>>),
) {
    (
        SanitizerHook,
        (cov, trace.then(|| TraceHook::new(std::io::stderr()))),
    )
}

/// Runs INIT on a fresh image; findings, hangs and rejected inputs there are
/// fatal since nothing can be fuzzed past them.
fn run_init(
    harness: &Harness,
    program: &Program,
    cfg: &CampaignConfig,
    cov: &mut CoverageMap,
) -> Result<(DeviceMemoryImage, HostState), CampaignError> {
    let mut image = DeviceMemoryImage::new(cfg.memory.clone())
        .map_err(|e| CampaignError::Config(e.to_string()))?;
    let mut state = HostState::default();
    let run = PhaseRun {
        program,
        args: &harness.manifest.seed.args,
        default_budget: cfg.budget,
        collect_outputs: false,
    };
    let out = run_phase(
        &run,
        &harness.arg_names(),
        &mut image,
        &mut state,
        harness.manifest.phase(Phase::Init),
        &mut phase_hooks(cfg.trace, cov),
    )?;
    check_setup(Phase::Init, out)?;
    Ok((image, state))
}

fn check_setup(phase: Phase, out: PhaseOutcome) -> Result<PhaseOutcome, CampaignError> {
    if let Some(report) = out.report {
        return Err(CampaignError::SetupFinding {
            phase: phase.name(),
            report,
        });
    }
    if let Some((k, c, t)) = out.hang {
        return Err(CampaignError::Internal(format!(
            "{} exhausted the instruction budget in `{k}` (thread {c}/{t})",
            phase.name()
        )));
    }
    if let Some(why) = out.rejected {
        return Err(CampaignError::Internal(format!("{}: {why}", phase.name())));
    }
    Ok(out)
}

impl<'h> Worker<'h> {
    fn new(
        harness: &'h Harness,
        cfg: &'h CampaignConfig,
        index: usize,
    ) -> Result<Self, CampaignError> {
        let mut init_coverage = CoverageMap::new(&harness.program);
        let (mut image, init_state) = run_init(harness, &harness.program, cfg, &mut init_coverage)?;
        let snap = image.snapshot(None);
        Ok(Worker {
            harness,
            cfg,
            image,
            snap,
            init_state,
            init_coverage,
            rng: rng::worker_stream(cfg.seed, index),
            delta: CoverageMap::new(&harness.program),
            arg_names: harness.arg_names(),
        })
    }

    /// Runs COMPUTE on one fresh child; the iteration's coverage is left in
    /// `self.delta`.
    fn iterate(
        &mut self,
        iteration: u64,
        view: &Corpus,
        res: &mut RoundResult,
    ) -> Result<(Arc<CorpusEntry>, TestCase, PhaseOutcome), CampaignError> {
        let reparsed;
        let (program, mut state) = match self.cfg.mode {
            InitMode::Amortized => {
                self.image.restore(&self.snap);
                (&self.harness.program, self.init_state.clone())
            }
            InitMode::Reinit => {
                reparsed = ir::parse_program(&self.harness.program_text).map_err(|source| {
                    CampaignError::Program {
                        path: self.harness.manifest.program.clone().into(),
                        source,
                    }
                })?;
                let (image, state) =
                    run_init(self.harness, &reparsed, self.cfg, &mut self.init_coverage)?;
                self.image = image;
                res.init_executions += 1;
                (&reparsed, state)
            }
        };
        self.image.set_iteration(Some(iteration));
        let parent = schedule_next(view, iteration, &mut self.rng).clone();
        let child = mutate_testcase(
            &parent.tc,
            &self.harness.manifest.args,
            iteration,
            &self.cfg.mutation,
            &mut self.rng,
        );
        self.delta.clear();
        let run = PhaseRun {
            program,
            args: &child.args,
            default_budget: self.cfg.budget,
            collect_outputs: self.cfg.diff_check,
        };
        let out = run_phase(
            &run,
            &self.arg_names,
            &mut self.image,
            &mut state,
            self.harness.manifest.phase(Phase::Compute),
            &mut phase_hooks(self.cfg.trace, &mut self.delta),
        )?;
        if let Some(e) = self.delta.phantom() {
            return Err(e.clone().into());
        }
        Ok((parent, child, out))
    }

    fn run_round(
        &mut self,
        iters: Range<u64>,
        mut view: Corpus,
        mut seen: CoverageMap,
        deadline: Option<Instant>,
    ) -> RoundResult {
        let mut res = RoundResult::default();
        let mut round_cov = CoverageMap::new(&self.harness.program);
        for iteration in iters {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                res.timed_out = true;
                break;
            }
            let (parent, child, out) = match self.iterate(iteration, &view, &mut res) {
                Ok(r) => r,
                Err(e) => {
                    res.error = Some(e);
                    break;
                }
            };
            res.executed += 1;
            if let Err(e) = round_cov.merge_from(&self.delta) {
                res.error = Some(e.into());
                break;
            }
            if let Some(report) = out.report {
                res.crashes.push(CrashEvent {
                    entry: parent.derive(child, iteration, 0),
                    report,
                });
                res.found = true;
                if self.cfg.stop_on_first_finding {
                    break;
                }
                continue;
            }
            if out.hang.is_some() {
                res.hangs += 1;
                continue;
            }
            if out.rejected.is_some() {
                res.rejected += 1;
                continue;
            }
            if self.cfg.diff_check {
                self.diff_check(&child, &out, &mut res);
            }
            if self.delta.has_new_edges(&seen) {
                let _ = seen.merge_from(&self.delta);
                let entry = parent.derive(child, iteration, 0);
                view.admit(entry.clone());
                res.candidates.push(Candidate {
                    entry,
                    delta: self.delta.clone(),
                });
            }
        }
        res.coverage = Some(round_cov);
        res
    }

    fn diff_check(&self, child: &TestCase, out: &PhaseOutcome, res: &mut RoundResult) {
        let Some(name) = &self.harness.manifest.bench else {
            return;
        };
        let specs = &self.harness.manifest.args;
        if !specs.iter().zip(&child.args).all(|(s, v)| s.in_domain(v)) {
            return;
        }
        let Ok(expected) = bench::reference_result(name, &child.args) else {
            return;
        };
        let actual: Vec<u8> = out
            .outputs
            .iter()
            .flat_map(|(_, b)| b.iter().copied())
            .collect();
        res.diff_checked += 1;
        if actual != expected {
            res.diff_mismatches += 1;
        }
    }

    /// Restores the post-INIT image and runs TERM.
    fn terminate(&mut self, cov: &mut CoverageMap) -> Result<PhaseOutcome, CampaignError> {
        if self.cfg.mode == InitMode::Reinit {
            let (image, _) = run_init(
                self.harness,
                &self.harness.program,
                self.cfg,
                &mut self.init_coverage,
            )?;
            self.image = image;
        } else {
            self.image.restore(&self.snap);
        }
        self.image.set_iteration(None);
        let mut state = self.init_state.clone();
        let run = PhaseRun {
            program: &self.harness.program,
            args: &self.harness.manifest.seed.args,
            default_budget: self.cfg.budget,
            collect_outputs: true,
        };
        run_phase(
            &run,
            &self.arg_names,
            &mut self.image,
            &mut state,
            self.harness.manifest.phase(Phase::Term),
            &mut phase_hooks(self.cfg.trace, cov),
        )
    }
}

struct Coordinator<'h> {
    harness: &'h Harness,
    cfg: &'h CampaignConfig,
    corpus: Corpus,
    coverage: CoverageMap,
    findings: FindingsLog,
    crashes: IndexMap<String, CrashArtifact>,
    summary: CampaignSummary,
}

impl Coordinator<'_> {
    fn merge(&mut self, r: RoundResult) -> Result<(), CampaignError> {
        let s = &mut self.summary;
        s.iterations += r.executed;
        s.compute_executions += r.executed;
        s.init_executions += r.init_executions;
        s.hangs += r.hangs;
        s.rejected += r.rejected;
        s.diff_checked += r.diff_checked;
        s.diff_mismatches += r.diff_mismatches;

        let mut seen = self.coverage.clone();
        for c in r.candidates {
            let new = c.delta.new_edges_since(&seen)?;
            if !new.is_empty() {
                seen.merge_from(&c.delta)?;
                let mut entry = c.entry;
                entry.new_edges = new.len();
                self.corpus.admit(entry);
            }
        }
        for ev in r.crashes {
            self.summary.finding_events += 1;
            if self.findings.record(&ev.report) {
                let artifact = CrashArtifact::new(self.harness, self.cfg, &ev.entry, &ev.report);
                self.crashes.insert(ev.report.dedupe_key.clone(), artifact);
                self.corpus.add_crash(ev.entry);
            }
        }
        if let Some(cov) = r.coverage {
            self.coverage.merge_from(&cov)?;
        }
        match r.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn finish(
        mut self,
        workers: &mut [Worker<'_>],
        start: Instant,
        fatal: Option<CampaignError>,
    ) -> CampaignResult {
        let mut fatal = fatal;
        if fatal.is_none() {
            for w in workers.iter_mut() {
                let mut cov = CoverageMap::new(&self.harness.program);
                match w.terminate(&mut cov) {
                    Ok(out) => {
                        self.summary.term_executions += 1;
                        if let Some(r) = out.report {
                            self.summary.finding_events += 1;
                            self.findings.record(&r);
                        }
                        let _ = self.coverage.merge_from(&cov);
                    }
                    Err(e) => {
                        fatal = Some(e);
                        break;
                    }
                }
            }
        }
        for w in workers.iter() {
            let _ = self.coverage.merge_from(&w.init_coverage);
        }
        let s = &mut self.summary;
        s.corpus_seeds = self.corpus.seeds().len();
        s.corpus_interesting = self.corpus.interesting().len();
        s.crashes = self.crashes.len();
        s.findings = self.findings.len();
        s.hit_edges = self.coverage.total_hit_edges();
        s.total_edges = self.coverage.kernels().map(|k| k.static_edges.len()).sum();
        if fatal.is_some() {
            s.stopped_by = "fatal".into();
        }
        CampaignResult {
            summary: self.summary,
            findings: self.findings,
            coverage: self.coverage,
            corpus: self.corpus,
            crashes: self.crashes.into_values().collect(),
            elapsed: start.elapsed(),
            fatal,
        }
    }
}

/// Runs a whole campaign.
///
/// Errors before fuzzing starts (bad config, failing INIT) are returned as
/// `Err`; later fatal errors come back in [`CampaignResult::fatal`] along
/// with everything gathered so far.
pub fn run_campaign(
    harness: &Harness,
    cfg: &CampaignConfig,
) -> Result<CampaignResult, CampaignError> {
    cfg.check()?;
    harness
        .manifest
        .seed
        .check_against(&harness.manifest.args)
        .map_err(CampaignError::Seed)?;
    let start = Instant::now();
    let deadline = cfg.wall_clock.map(|d| start + d);
    let mut workers = (0..cfg.workers)
        .map(|i| Worker::new(harness, cfg, i))
        .collect::<Result<Vec<_>, _>>()?;

    let mut co = Coordinator {
        harness,
        cfg,
        corpus: Corpus::new(vec![harness.manifest.seed.clone()]),
        coverage: CoverageMap::new(&harness.program),
        findings: FindingsLog::new(),
        crashes: IndexMap::new(),
        summary: CampaignSummary {
            seed: format!("{:#x}", cfg.seed),
            workers: cfg.workers,
            mode: match cfg.mode {
                InitMode::Amortized => "amortized".into(),
                InitMode::Reinit => "reinit".into(),
            },
            iterations: 0,
            init_executions: cfg.workers as u64,
            compute_executions: 0,
            term_executions: 0,
            hangs: 0,
            rejected: 0,
            corpus_seeds: 0,
            corpus_interesting: 0,
            crashes: 0,
            findings: 0,
            finding_events: 0,
            hit_edges: 0,
            total_edges: 0,
            diff_checked: 0,
            diff_mismatches: 0,
            stopped_by: "iterations".into(),
        },
    };

    let n = cfg.workers as u64;
    let mut base = 0;
    while base < cfg.max_iterations {
        let per = cfg
            .sync_interval
            .min((cfg.max_iterations - base).div_ceil(n));
        let range = |w: u64| {
            let lo = (base + w * per).min(cfg.max_iterations);
            lo..(lo + per).min(cfg.max_iterations)
        };
        let results: Vec<RoundResult> = if workers.len() == 1 {
            vec![workers[0].run_round(range(0), co.corpus.clone(), co.coverage.clone(), deadline)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = workers
                    .iter_mut()
                    .enumerate()
                    .map(|(w, worker)| {
                        let (view, seen, r) =
                            (co.corpus.clone(), co.coverage.clone(), range(w as u64));
                        s.spawn(move || worker.run_round(r, view, seen, deadline))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect()
            })
        };
        base += per * n;
        let (mut found, mut timed_out) = (false, false);
        for r in results {
            found |= r.found;
            timed_out |= r.timed_out;
            if let Err(e) = co.merge(r) {
                return Ok(co.finish(&mut workers, start, Some(e)));
            }
        }
        if found && cfg.stop_on_first_finding {
            co.summary.stopped_by = "first-finding".into();
            break;
        }
        if timed_out {
            co.summary.stopped_by = "wall-clock".into();
            break;
        }
    }
    Ok(co.finish(&mut workers, start, None))
}
