use std::sync::Arc;

use rand::Rng;

use crate::mutation::{MutationOp, TestCase};
use crate::rng::FuzzRng;

/// Iterations after admission during which an entry is weighted 4x.
pub const ADMISSION_WINDOW: u64 = 256;
const RECENT_WEIGHT: u64 = 4;

/// One ordered generation of ops, as recorded in `TestCase::trace`.
pub type Generation = Vec<(usize, MutationOp)>;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub tc: TestCase,
    /// Index of the manifest seed this entry descends from.
    pub seed_index: usize,
    /// Traces from the seed down to `tc`, oldest first.
    pub lineage: Vec<Generation>,
    /// Iteration of admission; `None` for seeds.
    pub found_at: Option<u64>,
    pub new_edges: usize,
}

impl CorpusEntry {
    pub fn seed(index: usize, tc: TestCase) -> Self {
        CorpusEntry {
            id: tc.id(),
            tc,
            seed_index: index,
            lineage: Vec::new(),
            found_at: None,
            new_edges: 0,
        }
    }

    /// The entry `child` would become if admitted.
    pub fn derive(&self, child: TestCase, found_at: u64, new_edges: usize) -> Self {
        let mut lineage = self.lineage.clone();
        lineage.push(child.trace.clone());
        CorpusEntry {
            id: child.id(),
            tc: child,
            seed_index: self.seed_index,
            lineage,
            found_at: Some(found_at),
            new_edges,
        }
    }

    fn weight(&self, iteration: u64) -> u64 {
        match self.found_at {
            Some(at) if iteration.saturating_sub(at) < ADMISSION_WINDOW => RECENT_WEIGHT,
            _ => 1,
        }
    }
}

/// Seeds, interesting entries and crashes.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    seeds: Vec<Arc<CorpusEntry>>,
    interesting: Vec<Arc<CorpusEntry>>,
    crashes: Vec<Arc<CorpusEntry>>,
}

impl Corpus {
    pub fn new(seeds: Vec<TestCase>) -> Self {
        Corpus {
            seeds: seeds
                .into_iter()
                .enumerate()
                .map(|(i, tc)| Arc::new(CorpusEntry::seed(i, tc)))
                .collect(),
            ..Corpus::default()
        }
    }

    pub fn seeds(&self) -> &[Arc<CorpusEntry>] {
        &self.seeds
    }

    pub fn interesting(&self) -> &[Arc<CorpusEntry>] {
        &self.interesting
    }

    pub fn crashes(&self) -> &[Arc<CorpusEntry>] {
        &self.crashes
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty() && self.interesting.is_empty()
    }

    pub fn admit(&mut self, entry: CorpusEntry) {
        self.interesting.push(Arc::new(entry));
    }

    pub fn add_crash(&mut self, entry: CorpusEntry) {
        self.crashes.push(Arc::new(entry));
    }

    /// Candidate parents: seeds then interesting entries, in admission order.
    pub fn parents(&self) -> impl Iterator<Item = &Arc<CorpusEntry>> {
        self.seeds.iter().chain(&self.interesting)
    }
}

/// Picks a parent from seeds and interesting entries.
///
/// Each entry has weight 1, or 4 while it is within [`ADMISSION_WINDOW`]
/// iterations of its admission. Panics on an empty corpus.
pub fn schedule_next<'a>(
    corpus: &'a Corpus,
    iteration: u64,
    rng: &mut FuzzRng,
) -> &'a Arc<CorpusEntry> {
    assert!(!corpus.is_empty(), "scheduling from an empty corpus");
    let total: u64 = corpus.parents().map(|e| e.weight(iteration)).sum();
    let mut pick = rng.random_range(0..total);
    for e in corpus.parents() {
        let w = e.weight(iteration);
        if pick < w {
            return e;
        }
        pick -= w;
    }
    unreachable!("pick is below the total weight")
}
