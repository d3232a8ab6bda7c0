use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corpus::{CorpusEntry, Generation};
use super::runner::{run_phase, PhaseRun};
use super::{read_text, CampaignConfig, CampaignError, Harness, HostState, Phase};
use crate::exec::SanitizerHook;
use crate::memory::{DeviceMemoryImage, MemoryConfig};
use crate::mutation::{argspec_digest, replay_trace, MutationOp, TestCase};
use crate::sanitizer::BugReport;

const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WireStep {
    arg: usize,
    op: MutationOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WireGeneration {
    #[serde(default)]
    step: Vec<WireStep>,
}

/// Everything needed to re-run one crashing test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashArtifact {
    version: u32,
    /// Manifest path as recorded by the campaign.
    pub manifest: String,
    pub manifest_digest: String,
    pub program_digest: String,
    pub argspec_digest: String,
    pub seed_index: usize,
    pub testcase_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    lineage: Vec<WireGeneration>,
    pub report: BugReport,
}

#[derive(Debug)]
pub struct ReplayResult {
    pub testcase: TestCase,
    pub report: BugReport,
    pub retired: u64,
}

impl CrashArtifact {
    pub(super) fn new(
        h: &Harness,
        cfg: &CampaignConfig,
        entry: &CorpusEntry,
        report: &BugReport,
    ) -> Self {
        let manifest = h
            .path
            .as_ref()
            .map(|p| std::path::absolute(p).unwrap_or_else(|_| p.clone()))
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        CrashArtifact {
            version: ARTIFACT_VERSION,
            manifest,
            manifest_digest: h.manifest_digest.clone(),
            program_digest: h.program.source_digest.clone(),
            argspec_digest: argspec_digest(&h.manifest.args),
            seed_index: entry.seed_index,
            testcase_id: entry.id.clone(),
            budget: cfg.budget,
            lineage: entry
                .lineage
                .iter()
                .map(|g| WireGeneration {
                    step: g
                        .iter()
                        .map(|(arg, op)| WireStep {
                            arg: *arg,
                            op: op.clone(),
                        })
                        .collect(),
                })
                .collect(),
            report: report.clone(),
        }
    }

    pub fn lineage(&self) -> Vec<Generation> {
        self.lineage
            .iter()
            .map(|g| g.step.iter().map(|s| (s.arg, s.op.clone())).collect())
            .collect()
    }

    /// Every op of the last generation, which produced the crashing input.
    pub fn final_trace(&self) -> Vec<(usize, MutationOp)> {
        self.lineage().pop().unwrap_or_default()
    }

    pub fn file_name(&self) -> String {
        format!("{}.crash", self.report.dedupe_key)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("artifact serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, CampaignError> {
        let a: CrashArtifact =
            toml::from_str(text).map_err(|e| CampaignError::Artifact(e.to_string()))?;
        if a.version != ARTIFACT_VERSION {
            return Err(CampaignError::Artifact(format!(
                "unsupported version {}",
                a.version
            )));
        }
        Ok(a)
    }

    /// Rebuilds the crashing test case from the seed and the lineage.
    pub fn testcase(&self, h: &Harness) -> Result<TestCase, CampaignError> {
        if self.seed_index != 0 {
            return Err(CampaignError::Artifact(format!(
                "no seed {}",
                self.seed_index
            )));
        }
        let mut tc = h.manifest.seed.clone();
        for g in self.lineage() {
            let args =
                replay_trace(&tc.args, &g).map_err(|e| CampaignError::Artifact(e.to_string()))?;
            tc = TestCase {
                args,
                rng_seed: 0,
                parent: Some(tc.id()),
                trace: g,
            };
        }
        Ok(tc)
    }
}

fn check_digest(what: &'static str, recorded: &str, actual: &str) -> Result<(), CampaignError> {
    if recorded == actual {
        Ok(())
    } else {
        Err(CampaignError::DigestMismatch {
            what,
            recorded: recorded.to_string(),
            actual: actual.to_string(),
        })
    }
}

/// Runs INIT and COMPUTE once on the artifact's test case and checks that
/// the recorded finding comes back.
pub fn replay_harness(
    h: &Harness,
    artifact: &CrashArtifact,
) -> Result<ReplayResult, CampaignError> {
    check_digest("manifest", &artifact.manifest_digest, &h.manifest_digest)?;
    check_digest(
        "program",
        &artifact.program_digest,
        &h.program.source_digest,
    )?;
    check_digest(
        "argspec",
        &artifact.argspec_digest,
        &argspec_digest(&h.manifest.args),
    )?;
    let tc = artifact.testcase(h)?;

    let mut image = DeviceMemoryImage::new(MemoryConfig::default())
        .map_err(|e| CampaignError::Config(e.to_string()))?;
    let mut state = HostState::default();
    let names = h.arg_names();
    let mut retired = 0;
    let phases = [
        (Phase::Init, h.manifest.seed.args.clone()),
        (Phase::Compute, tc.args.clone()),
    ];
    for (phase, args) in phases {
        if phase == Phase::Compute {
            image.set_iteration(artifact.report.iteration);
        }
        let run = PhaseRun {
            program: &h.program,
            args: &args,
            default_budget: artifact.budget,
            collect_outputs: false,
        };
        let out = run_phase(
            &run,
            &names,
            &mut image,
            &mut state,
            h.manifest.phase(phase),
            &mut SanitizerHook,
        )?;
        retired += out.retired;
        let got = match (out.report, &out.hang, &out.rejected) {
            (Some(r), _, _) if r.dedupe_key == artifact.report.dedupe_key => {
                return Ok(ReplayResult {
                    testcase: tc,
                    report: *r,
                    retired,
                })
            }
            (Some(r), _, _) => format!("{} [key {}]", r.class, r.dedupe_key),
            (None, Some((k, c, t)), _) => format!("budget exhaustion in {k} ({c}/{t})"),
            (None, None, Some(why)) => format!("rejected input: {why}"),
            (None, None, None) => continue,
        };
        return Err(CampaignError::NonReproducing {
            expected: format!(
                "{} [key {}]",
                artifact.report.class, artifact.report.dedupe_key
            ),
            got,
        });
    }
    Err(CampaignError::NonReproducing {
        expected: format!(
            "{} [key {}]",
            artifact.report.class, artifact.report.dedupe_key
        ),
        got: "a clean run".into(),
    })
}

/// Loads a crash artifact and its harness, then replays it.
pub fn replay(artifact_path: &Path) -> Result<ReplayResult, CampaignError> {
    let artifact = CrashArtifact::from_toml(&read_text(artifact_path)?)?;
    let mut manifest = PathBuf::from(&artifact.manifest);
    if manifest.is_relative() {
        manifest = artifact_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(manifest);
    }
    let h = Harness::load(&manifest)?;
    replay_harness(&h, &artifact)
}
