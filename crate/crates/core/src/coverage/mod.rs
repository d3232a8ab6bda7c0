//! Edge coverage: per-kernel counters over the static CFG edges, derived
//! block hits, merging across workers, and Table-style reports.

mod report;

use indexmap::IndexMap;

use crate::exec::{Hooks, LaunchConfig};
use crate::ir::{KernelDef, Program};

pub use report::{
    coverage_percent, coverage_ratio, geometric_mean, CoverageReport, CoverageRow, Percent,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoverageError {
    #[error("edge {src}->{dst} is not a static edge of `{kernel}`")]
    PhantomEdge { kernel: String, src: u32, dst: u32 },
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("coverage maps belong to different programs")]
    DigestMismatch,
    #[error("total block count is zero")]
    ZeroTotal,
    #[error("hit count {hit} exceeds total {total}")]
    HitExceedsTotal { hit: u64, total: u64 },
    #[error("geometric mean of an empty list")]
    EmptyList,
    #[error("geometric mean needs positive entries")]
    NonPositiveEntry,
    #[error("malformed coverage record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelCoverage {
    pub name: String,
    pub total_bbs: u32,
    pub static_edges: Vec<(u32, u32)>,
    /// Execution count per static edge, saturating.
    pub counters: Vec<u64>,
    pub launches: u64,
    /// Outgoing static edges per block as (dst, counter index).
    succ: Vec<Vec<(u32, usize)>>,
}

impl KernelCoverage {
    fn new(k: &KernelDef) -> Self {
        let mut succ = vec![Vec::new(); k.blocks.len()];
        for (i, &(s, d)) in k.static_edges.iter().enumerate() {
            succ[s as usize].push((d, i));
        }
        KernelCoverage {
            name: k.name.clone(),
            total_bbs: k.blocks.len() as u32,
            static_edges: k.static_edges.clone(),
            counters: vec![0; k.static_edges.len()],
            launches: 0,
            succ,
        }
    }

    fn edge_index(&self, src: u32, dst: u32) -> Option<usize> {
        self.succ
            .get(src as usize)?
            .iter()
            .find(|(d, _)| *d == dst)
            .map(|(_, i)| *i)
    }

    pub fn counter(&self, src: u32, dst: u32) -> Option<u64> {
        self.edge_index(src, dst).map(|i| self.counters[i])
    }

    pub fn hit_edges(&self) -> usize {
        self.counters.iter().filter(|&&c| c > 0).count()
    }

    /// Entry block (once launched) plus both endpoints of every hit edge.
    pub fn hit_blocks(&self) -> Vec<bool> {
        let mut hit = vec![false; self.total_bbs as usize];
        if self.launches > 0 && !hit.is_empty() {
            hit[0] = true;
        }
        for (&(s, d), &c) in self.static_edges.iter().zip(&self.counters) {
            if c > 0 {
                hit[s as usize] = true;
                hit[d as usize] = true;
            }
        }
        hit
    }

    pub fn hit_bbs(&self) -> usize {
        self.hit_blocks().iter().filter(|&&h| h).count()
    }
}

/// Coverage of one program, kernels in program order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMap {
    digest: String,
    kernels: IndexMap<String, KernelCoverage>,
    phantom: Option<CoverageError>,
}

impl CoverageMap {
    pub fn new(program: &Program) -> Self {
        CoverageMap {
            digest: program.source_digest.clone(),
            kernels: program
                .kernels
                .values()
                .map(|k| (k.name.clone(), KernelCoverage::new(k)))
                .collect(),
            phantom: None,
        }
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn kernels(&self) -> impl Iterator<Item = &KernelCoverage> {
        self.kernels.values()
    }

    pub fn kernel(&self, name: &str) -> Option<&KernelCoverage> {
        self.kernels.get(name)
    }

    /// A phantom edge seen through the hook interface, if any.
    pub fn phantom(&self) -> Option<&CoverageError> {
        self.phantom.as_ref()
    }

    pub fn record_launch(&mut self, kernel: &str) -> Result<(), CoverageError> {
        let k = self
            .kernels
            .get_mut(kernel)
            .ok_or_else(|| CoverageError::UnknownKernel(kernel.to_string()))?;
        k.launches = k.launches.saturating_add(1);
        Ok(())
    }

    pub fn record_edge(&mut self, kernel: &str, src: u32, dst: u32) -> Result<(), CoverageError> {
        let k = self
            .kernels
            .get_mut(kernel)
            .ok_or_else(|| CoverageError::UnknownKernel(kernel.to_string()))?;
        let i = k
            .edge_index(src, dst)
            .ok_or_else(|| CoverageError::PhantomEdge {
                kernel: kernel.to_string(),
                src,
                dst,
            })?;
        k.counters[i] = k.counters[i].saturating_add(1);
        Ok(())
    }

    /// Zeroes every counter, keeping the static universe.
    pub fn clear(&mut self) {
        for k in self.kernels.values_mut() {
            k.counters.fill(0);
            k.launches = 0;
        }
        self.phantom = None;
    }

    pub fn total_hit_edges(&self) -> usize {
        self.kernels.values().map(KernelCoverage::hit_edges).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels
            .values()
            .all(|k| k.launches == 0 && k.counters.iter().all(|&c| c == 0))
    }

    /// Adds `other`'s counters into `self`.
    pub fn merge_from(&mut self, other: &CoverageMap) -> Result<(), CoverageError> {
        if self.digest != other.digest {
            return Err(CoverageError::DigestMismatch);
        }
        for (k, o) in self.kernels.values_mut().zip(other.kernels.values()) {
            for (c, oc) in k.counters.iter_mut().zip(&o.counters) {
                *c = c.saturating_add(*oc);
            }
            k.launches = k.launches.saturating_add(o.launches);
        }
        if self.phantom.is_none() {
            self.phantom = other.phantom.clone();
        }
        Ok(())
    }

    pub fn merge(&self, other: &CoverageMap) -> Result<CoverageMap, CoverageError> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    /// Edges hit here but not in `baseline`, as (kernel, src, dst).
    pub fn new_edges_since(
        &self,
        baseline: &CoverageMap,
    ) -> Result<Vec<(String, u32, u32)>, CoverageError> {
        if self.digest != baseline.digest {
            return Err(CoverageError::DigestMismatch);
        }
        let mut out = Vec::new();
        for (k, b) in self.kernels.values().zip(baseline.kernels.values()) {
            for (i, (&c, &bc)) in k.counters.iter().zip(&b.counters).enumerate() {
                if c > 0 && bc == 0 {
                    let (s, d) = k.static_edges[i];
                    out.push((k.name.clone(), s, d));
                }
            }
        }
        Ok(out)
    }

    /// Whether any edge is hit here but not in `baseline`.
    pub fn has_new_edges(&self, baseline: &CoverageMap) -> bool {
        self.kernels
            .values()
            .zip(baseline.kernels.values())
            .any(|(k, b)| {
                k.counters
                    .iter()
                    .zip(&b.counters)
                    .any(|(&c, &bc)| c > 0 && bc == 0)
            })
    }

    pub fn report(&self) -> CoverageReport {
        CoverageReport::from_rows(
            self.kernels
                .values()
                .map(|k| {
                    CoverageRow::new(
                        &k.name,
                        k.total_bbs as u64,
                        k.hit_bbs() as u64,
                        k.hit_edges() as u64,
                        Some(k.static_edges.len() as u64),
                    )
                })
                .collect::<Result<Vec<_>, _>>()
                .expect("hit counts never exceed totals"),
        )
    }
}

impl Hooks for CoverageMap {
    fn on_launch(&mut self, kernel: &KernelDef, _cfg: &LaunchConfig) {
        let _ = self.record_launch(&kernel.name);
    }

    fn on_cf(&mut self, kernel: &KernelDef, src: u32, dst: u32) {
        if let Err(e) = self.record_edge(&kernel.name, src, dst) {
            self.phantom.get_or_insert(e);
        }
    }
}
