use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::BugReport;

/// A deduplicated finding: the first report seen for a key plus how many
/// times the key fired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub count: u64,
    pub report: BugReport,
}

/// Findings keyed by dedupe key, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FindingsLog {
    entries: IndexMap<String, Finding>,
}

#[derive(Serialize, Deserialize)]
struct FindingsFile {
    #[serde(default)]
    finding: Vec<Finding>,
}

impl FindingsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a report; returns true if its key was new.
    pub fn record(&mut self, report: &BugReport) -> bool {
        self.record_n(report, 1)
    }

    pub fn record_n(&mut self, report: &BugReport, count: u64) -> bool {
        match self.entries.get_mut(&report.dedupe_key) {
            Some(f) => {
                f.count += count;
                false
            }
            None => {
                self.entries.insert(
                    report.dedupe_key.clone(),
                    Finding {
                        count,
                        report: report.clone(),
                    },
                );
                true
            }
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One representative per key, ordered by first-seen iteration (ties
    /// keep insertion order).
    pub fn report_findings(&self) -> Vec<Finding> {
        let mut out: Vec<Finding> = self.entries.values().cloned().collect();
        out.sort_by_key(|f| f.report.iteration.unwrap_or(0));
        out
    }

    pub fn to_toml(&self) -> String {
        let file = FindingsFile {
            finding: self.report_findings(),
        };
        toml::to_string(&file).expect("findings serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        let file: FindingsFile = toml::from_str(text)?;
        let mut log = FindingsLog::new();
        for f in file.finding {
            log.record_n(&f.report, f.count);
        }
        Ok(log)
    }
}
