use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use super::CoverageError;

/// A percentage held in hundredths, so `49.47` is `Percent(4947)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(pub u64);

impl Percent {
    pub fn value(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn parse(s: &str) -> Option<Percent> {
        let (int, frac) = s.trim().split_once('.').unwrap_or((s.trim(), "00"));
        if frac.len() != 2 {
            return None;
        }
        Some(Percent(
            int.parse::<u64>().ok()? * 100 + frac.parse::<u64>().ok()?,
        ))
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&format!("{}.{:02}", self.0 / 100, self.0 % 100))
    }
}

/// `100 * hit / total` as an unrounded float.
pub fn coverage_ratio(hit: u64, total: u64) -> Result<f64, CoverageError> {
    if total == 0 {
        return Err(CoverageError::ZeroTotal);
    }
    if hit > total {
        return Err(CoverageError::HitExceedsTotal { hit, total });
    }
    Ok(100.0 * hit as f64 / total as f64)
}

/// `100 * hit / total` rounded half-up to two decimals, in exact integer
/// arithmetic.
pub fn coverage_percent(hit: u64, total: u64) -> Result<Percent, CoverageError> {
    coverage_ratio(hit, total)?;
    let (hit, total) = (hit as u128, total as u128);
    Ok(Percent(((20_000 * hit + total) / (2 * total)) as u64))
}

/// Geometric mean of percentages, rounded half-up to two decimals.
pub fn geometric_mean(pcts: &[Percent]) -> Result<Percent, CoverageError> {
    if pcts.is_empty() {
        return Err(CoverageError::EmptyList);
    }
    if pcts.iter().any(|p| p.0 == 0) {
        return Err(CoverageError::NonPositiveEntry);
    }
    let mean_ln = pcts.iter().map(|p| p.value().ln()).sum::<f64>() / pcts.len() as f64;
    Ok(Percent((mean_ln.exp() * 100.0 + 0.5).floor() as u64))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageRow {
    pub kernel: String,
    pub total_bbs: u64,
    pub hit_bbs: u64,
    pub bb_cov: Percent,
    pub hit_edges: u64,
    /// Static edge count; not part of the classic table, shown as an extra column.
    pub total_edges: Option<u64>,
}

impl CoverageRow {
    pub fn new(
        kernel: &str,
        total_bbs: u64,
        hit_bbs: u64,
        hit_edges: u64,
        total_edges: Option<u64>,
    ) -> Result<Self, CoverageError> {
        Ok(CoverageRow {
            kernel: kernel.to_string(),
            total_bbs,
            hit_bbs,
            bb_cov: coverage_percent(hit_bbs, total_bbs)?,
            hit_edges,
            total_edges,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    /// Over the rows with non-zero coverage; `None` when there are none.
    pub geomean: Option<Percent>,
    /// Rows left out of the geometric mean because their coverage is zero.
    pub excluded: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RecRow {
    kernel: String,
    total_bbs: u64,
    hit_bbs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bb_cov_pct: Option<String>,
    hit_edges: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    total_edges: Option<u64>,
}

#[derive(Serialize, Deserialize, Default)]
struct RecSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geomean: Option<String>,
    #[serde(default)]
    excluded: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RecFile {
    #[serde(default)]
    kernel: Vec<RecRow>,
    #[serde(default)]
    summary: RecSummary,
}

const HEADERS: [&str; 5] = [
    "Total BBs",
    "Hit BBs",
    "BB Cov. (%)",
    "Hit Edges",
    "Total Edges*",
];

impl CoverageReport {
    pub fn from_rows(rows: Vec<CoverageRow>) -> Self {
        let nonzero: Vec<Percent> = rows.iter().map(|r| r.bb_cov).filter(|p| p.0 > 0).collect();
        let excluded = rows
            .iter()
            .filter(|r| r.bb_cov.0 == 0)
            .map(|r| r.kernel.clone())
            .collect();
        CoverageReport {
            geomean: geometric_mean(&nonzero).ok(),
            rows,
            excluded,
        }
    }

    /// Aligned plain-text table with a GeoMean row.
    pub fn render_text(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.kernel.len())
            .chain(["Kernel".len(), "GeoMean".len()])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "Kernel");
        for h in HEADERS {
            let _ = write!(out, "  {h}");
        }
        out.push('\n');
        let cell = |out: &mut String, i: usize, v: String| {
            let _ = write!(out, "  {:>w$}", v, w = HEADERS[i].len());
        };
        for r in &self.rows {
            let _ = write!(out, "{:<name_w$}", r.kernel);
            cell(&mut out, 0, r.total_bbs.to_string());
            cell(&mut out, 1, r.hit_bbs.to_string());
            cell(&mut out, 2, r.bb_cov.to_string());
            cell(&mut out, 3, r.hit_edges.to_string());
            cell(
                &mut out,
                4,
                r.total_edges.map_or("-".into(), |e| e.to_string()),
            );
            out.push('\n');
        }
        if let Some(g) = self.geomean {
            let _ = write!(out, "{:<name_w$}", "GeoMean");
            for (i, v) in [
                "-".to_string(),
                "-".into(),
                g.to_string(),
                "-".into(),
                "-".into(),
            ]
            .into_iter()
            .enumerate()
            {
                cell(&mut out, i, v);
            }
            out.push('\n');
        }
        out.push_str("\n* Total Edges (static CFG edges) is an additional column.\n");
        if self.geomean.is_none() {
            out.push_str("GeoMean omitted: no kernel has non-zero coverage.\n");
        }
        if !self.excluded.is_empty() {
            let _ = writeln!(
                out,
                "Excluded from GeoMean (zero coverage): {}",
                self.excluded.join(", ")
            );
        }
        out
    }

    /// Machine-readable record: one `[[kernel]]` table per row plus `[summary]`.
    pub fn to_rec(&self) -> String {
        let file = RecFile {
            kernel: self
                .rows
                .iter()
                .map(|r| RecRow {
                    kernel: r.kernel.clone(),
                    total_bbs: r.total_bbs,
                    hit_bbs: r.hit_bbs,
                    bb_cov_pct: Some(r.bb_cov.to_string()),
                    hit_edges: r.hit_edges,
                    total_edges: r.total_edges,
                })
                .collect(),
            summary: RecSummary {
                geomean: self.geomean.map(|g| g.to_string()),
                excluded: self.excluded.clone(),
            },
        };
        toml::to_string(&file).expect("report serializes")
    }

    /// Parses a record and recomputes percentages from the block counts.
    pub fn from_rec(text: &str) -> Result<Self, CoverageError> {
        let file: RecFile =
            toml::from_str(text).map_err(|e| CoverageError::Record(e.to_string()))?;
        let rows = file
            .kernel
            .into_iter()
            .map(|r| {
                CoverageRow::new(
                    &r.kernel,
                    r.total_bbs,
                    r.hit_bbs,
                    r.hit_edges,
                    r.total_edges,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CoverageReport::from_rows(rows))
    }
}
