//! Bundled BLAS-1 benchmarks: a clean kernel and harness per routine, plus
//! seeded-bug variants, each with an input that fires the bug.
//!
//! Files live under `benchmarks/<name>/` and are compiled in, so the CLI can
//! run and export them without the source tree.

mod reference;

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::campaign::{CampaignError, Harness};
use crate::mutation::{replay_trace, MutationOp, TestCase};
use crate::sanitizer::BugClass;

pub use reference::{reference_result, CAP, THREADS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BenchError {
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("benchmark `{name}`: {msg}")]
    BadInputs { name: String, msg: String },
    #[error("malformed trigger: {0}")]
    Trigger(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Clean,
    Oob,
    Uaf,
    Space,
    Escape,
}

impl Variant {
    pub const SEEDED: [Variant; 4] = [Variant::Oob, Variant::Uaf, Variant::Space, Variant::Escape];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Clean => "clean",
            Variant::Oob => "oob",
            Variant::Uaf => "uaf",
            Variant::Space => "space",
            Variant::Escape => "escape",
        }
    }

    pub fn bug_class(self) -> Option<BugClass> {
        match self {
            Variant::Clean => None,
            Variant::Oob => Some(BugClass::SpatialOob),
            Variant::Uaf => Some(BugClass::TemporalUaf),
            Variant::Space => Some(BugClass::SpaceMismatch),
            Variant::Escape => Some(BugClass::ProvenanceEscape),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VariantFiles {
    pub variant: Variant,
    pub kernel: &'static str,
    pub harness: &'static str,
    pub trigger: &'static str,
}

#[derive(Debug, Clone)]
pub struct BenchmarkEntry {
    pub name: &'static str,
    pub kernel: &'static str,
    pub harness: &'static str,
    pub variants: Vec<VariantFiles>,
}

/// Seeded-bug trigger: the ops that turn the harness seed into a firing
/// input, and what should fire.
#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    pub class: BugClass,
    /// Label of the instruction expected to fault.
    pub label: String,
    pub steps: Vec<(usize, MutationOp)>,
}

#[derive(Deserialize)]
struct WireStep {
    arg: usize,
    op: MutationOp,
}

#[derive(Deserialize)]
struct WireTrigger {
    class: String,
    label: String,
    #[serde(default)]
    step: Vec<WireStep>,
}

impl Trigger {
    pub fn parse(text: &str) -> Result<Trigger, BenchError> {
        let w: WireTrigger =
            toml::from_str(text).map_err(|e| BenchError::Trigger(e.to_string()))?;
        Ok(Trigger {
            class: BugClass::from_name(&w.class)
                .ok_or_else(|| BenchError::Trigger(format!("unknown class `{}`", w.class)))?,
            label: w.label,
            steps: w.step.into_iter().map(|s| (s.arg, s.op)).collect(),
        })
    }

    /// The harness seed with the trigger's ops applied.
    pub fn testcase(&self, h: &Harness) -> Result<TestCase, BenchError> {
        let seed = &h.manifest.seed;
        let args = replay_trace(&seed.args, &self.steps)
            .map_err(|e| BenchError::Trigger(e.to_string()))?;
        Ok(TestCase {
            args,
            rng_seed: 0,
            parent: Some(seed.id()),
            trace: self.steps.clone(),
        })
    }
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        fn bundled() -> Vec<BenchmarkEntry> {
            vec![$(BenchmarkEntry {
                name: $name,
                kernel: include_str!(concat!("../../benchmarks/", $name, "/kernel.sir")),
                harness: include_str!(concat!("../../benchmarks/", $name, "/harness.man")),
                variants: vec![
                    bundled!(@v $name, Oob, "oob"),
                    bundled!(@v $name, Uaf, "uaf"),
                    bundled!(@v $name, Space, "space"),
                    bundled!(@v $name, Escape, "escape"),
                ],
            }),*]
        }
    };
    (@v $name:literal, $variant:ident, $file:literal) => {
        VariantFiles {
            variant: Variant::$variant,
            kernel: include_str!(concat!("../../benchmarks/", $name, "/variants/", $file, ".sir")),
            harness: include_str!(concat!("../../benchmarks/", $name, "/variants/", $file, ".man")),
            trigger: include_str!(concat!("../../benchmarks/", $name, "/variants/", $file, ".trigger")),
        }
    };
}

bundled!("amax", "amin", "asum", "axpy", "copy", "dot", "nrm2", "rot", "rotm", "scal", "swap");

/// All bundled benchmarks, in alphabetical order.
pub fn list_benchmarks() -> Vec<BenchmarkEntry> {
    bundled()
}

pub fn benchmark(name: &str) -> Result<BenchmarkEntry, BenchError> {
    bundled()
        .into_iter()
        .find(|b| b.name == name)
        .ok_or_else(|| BenchError::UnknownBenchmark(name.to_string()))
}

impl BenchmarkEntry {
    pub fn variant(&self, v: Variant) -> Option<&VariantFiles> {
        self.variants.iter().find(|f| f.variant == v)
    }

    /// Parses and validates the harness for `v`.
    pub fn harness_for(&self, v: Variant) -> Result<Harness, CampaignError> {
        match v {
            Variant::Clean => Harness::from_texts(self.harness, self.kernel, None),
            _ => {
                let f = self.variant(v).ok_or_else(|| {
                    CampaignError::Internal(format!("{} has no {} variant", self.name, v.name()))
                })?;
                Harness::from_texts(f.harness, f.kernel, None)
            }
        }
    }

    pub fn trigger(&self, v: Variant) -> Result<Trigger, BenchError> {
        let f = self.variant(v).ok_or_else(|| {
            BenchError::Trigger(format!("{} has no {} variant", self.name, v.name()))
        })?;
        Trigger::parse(f.trigger)
    }
}

/// Writes a benchmark's files to `dir/<name>/`.
pub fn export(name: &str, dir: &Path) -> Result<(), BenchError> {
    let b = benchmark(name)?;
    let root = dir.join(b.name);
    let variants = root.join("variants");
    let io = |e: std::io::Error| BenchError::Io(e.to_string());
    fs::create_dir_all(&variants).map_err(io)?;
    fs::write(root.join("kernel.sir"), b.kernel).map_err(io)?;
    fs::write(root.join("harness.man"), b.harness).map_err(io)?;
    for f in &b.variants {
        let v = f.variant.name();
        fs::write(variants.join(format!("{v}.sir")), f.kernel).map_err(io)?;
        fs::write(variants.join(format!("{v}.man")), f.harness).map_err(io)?;
        fs::write(variants.join(format!("{v}.trigger")), f.trigger).map_err(io)?;
    }
    Ok(())
}
