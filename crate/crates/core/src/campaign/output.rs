//! Campaign output directory:
//!
//! ```text
//! corpus/<id>.tc          seeds and interesting test cases
//! crashes/<key>.crash     first crash per dedupe key
//! findings.txt            deduplicated findings
//! coverage.txt            coverage table
//! coverage.rec            machine-readable coverage
//! summary.rec             deterministic counters
//! timing.rec              wall-clock figures (not deterministic)
//! FAILED                  present only after a fatal error
//! ```

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{CampaignError, CampaignResult, Harness};
use crate::mutation::argspec_digest;

fn io(path: &Path, e: std::io::Error) -> CampaignError {
    CampaignError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CampaignError> {
    fs::write(path, text).map_err(|e| io(path, e))
}

fn fresh_dir(path: &Path) -> Result<(), CampaignError> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| io(path, e))?;
    }
    fs::create_dir_all(path).map_err(|e| io(path, e))
}

#[derive(Serialize)]
struct Timing {
    elapsed_secs: f64,
    execs_per_sec: f64,
}

/// Writes every output file, replacing earlier corpus and crash entries.
pub fn write_outputs(dir: &Path, h: &Harness, r: &CampaignResult) -> Result<(), CampaignError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let failed = dir.join("FAILED");
    if failed.exists() {
        fs::remove_file(&failed).map_err(|e| io(&failed, e))?;
    }
    let digest = argspec_digest(&h.manifest.args);
    let corpus = dir.join("corpus");
    fresh_dir(&corpus)?;
    for e in r.corpus.parents() {
        write(&corpus.join(format!("{}.tc", e.id)), &e.tc.to_toml(&digest))?;
    }
    let crashes = dir.join("crashes");
    fresh_dir(&crashes)?;
    for a in &r.crashes {
        write(&crashes.join(a.file_name()), &a.to_toml())?;
    }
    write(&dir.join("findings.txt"), &r.findings.to_toml())?;
    let report = r.coverage_report();
    write(&dir.join("coverage.txt"), &report.render_text())?;
    write(&dir.join("coverage.rec"), &report.to_rec())?;
    write(
        &dir.join("summary.rec"),
        &toml::to_string(&r.summary).expect("summary serializes"),
    )?;
    let timing = Timing {
        elapsed_secs: r.elapsed.as_secs_f64(),
        execs_per_sec: r.execs_per_sec(),
    };
    write(
        &dir.join("timing.rec"),
        &toml::to_string(&timing).expect("timing serializes"),
    )?;
    if let Some(e) = &r.fatal {
        write_failure(dir, e)?;
    }
    Ok(())
}

/// Drops the FAILED marker with the error text.
pub fn write_failure(dir: &Path, err: &CampaignError) -> Result<(), CampaignError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    write(&dir.join("FAILED"), &format!("{err}\n"))
}
