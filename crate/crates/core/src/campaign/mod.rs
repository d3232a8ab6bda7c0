//! Phase-split fuzzing campaigns.
//!
//! A harness manifest splits host code into INIT, COMPUTE and TERM. Each
//! worker runs INIT once, snapshots the device image, then repeatedly
//! restores the snapshot and runs COMPUTE on a freshly mutated test case.
//! TERM runs once at the end, against the restored post-INIT image.

mod artifact;
mod corpus;
mod fuzz;
pub mod manifest;
mod output;
mod runner;

use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::coverage::CoverageError;
use crate::exec::LaunchError;
use crate::ir::{self, ParseError, Program};
use crate::memory::{MemoryConfig, MemoryError};
use crate::mutation::{MutationConfig, TestCaseError};
use crate::sanitizer::BugReport;

pub use artifact::{replay, replay_harness, CrashArtifact, ReplayResult};
pub use corpus::{schedule_next, Corpus, CorpusEntry, ADMISSION_WINDOW};
pub use fuzz::{run_campaign, CampaignResult, CampaignSummary};
pub use manifest::{HarnessManifest, ManifestError, Phase};
pub use output::{write_failure, write_outputs};
pub use runner::{run_phase, HostState, NamedAlloc, PhaseOutcome, PhaseRun};

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Program { path: PathBuf, source: ParseError },
    #[error("line {line}: {source}")]
    Memory { line: usize, source: MemoryError },
    #[error(transparent)]
    Launch(#[from] LaunchError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("seed test case: {0}")]
    Seed(TestCaseError),
    #[error("finding during {phase}: {report}")]
    SetupFinding {
        phase: &'static str,
        report: Box<BugReport>,
    },
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("{what} digest mismatch: artifact has {recorded}, found {actual}")]
    DigestMismatch {
        what: &'static str,
        recorded: String,
        actual: String,
    },
    #[error("crash does not reproduce: expected {expected}, got {got}")]
    NonReproducing { expected: String, got: String },
    #[error("malformed artifact: {0}")]
    Artifact(String),
    #[error("{0}")]
    Internal(String),
}

pub(crate) fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub(crate) fn read_text(path: &Path) -> Result<String, CampaignError> {
    std::fs::read_to_string(path).map_err(|e| CampaignError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// A validated manifest together with its parsed program.
#[derive(Debug, Clone)]
pub struct Harness {
    pub manifest: HarnessManifest,
    pub program: Program,
    pub program_text: String,
    /// Hex SHA-256 of the manifest text.
    pub manifest_digest: String,
    pub path: Option<PathBuf>,
}

impl Harness {
    pub fn from_texts(
        manifest_text: &str,
        program_text: &str,
        path: Option<PathBuf>,
    ) -> Result<Harness, CampaignError> {
        let mut manifest = manifest::parse_manifest(manifest_text)?;
        let program = ir::parse_program(program_text).map_err(|source| CampaignError::Program {
            path: PathBuf::from(&manifest.program),
            source,
        })?;
        manifest::validate_manifest(&mut manifest, &program)?;
        Ok(Harness {
            manifest,
            program,
            program_text: program_text.to_string(),
            manifest_digest: sha256_hex(manifest_text.as_bytes()),
            path,
        })
    }

    /// Reads a manifest and the program it names (relative to the manifest).
    pub fn load(path: &Path) -> Result<Harness, CampaignError> {
        let text = read_text(path)?;
        let manifest = manifest::parse_manifest(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let program_path = dir.join(&manifest.program);
        let program_text = read_text(&program_path)?;
        Harness::from_texts(&text, &program_text, Some(path.to_path_buf())).map_err(|e| match e {
            CampaignError::Program { source, .. } => CampaignError::Program {
                path: program_path,
                source,
            },
            e => e,
        })
    }

    pub fn arg_names(&self) -> Vec<String> {
        self.manifest.args.iter().map(|a| a.name.clone()).collect()
    }
}

/// Loads and validates a harness manifest.
pub fn load_harness(path: &Path) -> Result<Harness, CampaignError> {
    Harness::load(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// INIT once per worker, snapshot/restore between iterations.
    Amortized,
    /// Fresh image, program re-parse and INIT every iteration.
    Reinit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub max_iterations: u64,
    pub stop_on_first_finding: bool,
    pub wall_clock: Option<Duration>,
    pub workers: usize,
    pub seed: u64,
    /// Iterations each worker runs between coordinator merges.
    pub sync_interval: u64,
    pub mode: InitMode,
    pub diff_check: bool,
    pub trace: bool,
    /// Per-thread instruction budget for launches without their own.
    pub budget: Option<u64>,
    pub mutation: MutationConfig,
    pub memory: MemoryConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            max_iterations: 10_000,
            stop_on_first_finding: false,
            wall_clock: None,
            workers: 1,
            seed: 0,
            sync_interval: 256,
            mode: InitMode::Amortized,
            diff_check: false,
            trace: false,
            budget: None,
            mutation: MutationConfig::default(),
            memory: MemoryConfig::default(),
        }
    }
}

impl CampaignConfig {
    pub fn check(&self) -> Result<(), CampaignError> {
        if self.max_iterations == 0 {
            return Err(CampaignError::Config(
                "max_iterations must be at least 1".into(),
            ));
        }
        if self.workers == 0 {
            return Err(CampaignError::Config(
                "at least one worker is required".into(),
            ));
        }
        if self.sync_interval == 0 {
            return Err(CampaignError::Config(
                "sync interval must be positive".into(),
            ));
        }
        self.memory
            .check()
            .map_err(|e| CampaignError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests;
