//! Easy/Hard splits and Recall@K tables.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::model::RankedList;

/// The cutoffs every table reports.
pub const REPORT_KS: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCase {
    pub query_id: String,
    pub query: String,
    pub ground_truth: String,
    pub pool: Vec<String>,
}

impl EvalCase {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |why: &str| EvalError::InvalidCase {
            query_id: self.query_id.clone(),
            reason: why.to_string(),
        };
        if self.pool.len() < 2 {
            return Err(bad("candidate pool needs at least 2 images"));
        }
        if !self.pool.contains(&self.ground_truth) {
            return Err(bad("ground truth is not in the candidate pool"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("need at least 4 cases to split, got {0}")]
    InsufficientCases(usize),
    #[error("case {query_id}: {reason}")]
    InvalidCase { query_id: String, reason: String },
    #[error("duplicate case id {0}")]
    DuplicateCase(String),
    #[error("system {system} has no ranking for case {query_id}")]
    MissingRanking { system: String, query_id: String },
    #[error("split assignment has no entry for case {0}")]
    MissingSplit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Easy,
    Middle,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub cases: BTreeMap<String, Split>,
    /// Worst baseline rank inside Easy, if Easy is non-empty.
    #[serde(default)]
    pub easy_max_rank: Option<usize>,
    /// Best baseline rank inside Hard, if Hard is non-empty.
    #[serde(default)]
    pub hard_min_rank: Option<usize>,
}

impl SplitAssignment {
    pub fn members(&self, split: Split) -> Vec<&str> {
        self.cases
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// 1-based position of `image` in `list`.
pub fn rank_of(list: &RankedList, image: &str) -> Option<usize> {
    list.position(image).map(|p| p + 1)
}

/// Sorts cases by the baseline rank of their ground truth (ties by query
/// id) and takes the first and last quarter, rounded down.
///
/// A case missing from `baseline_ranks` gets its pool size as rank.
///
/// ```
/// use std::collections::BTreeMap;
/// use vismc::eval::{build_splits, EvalCase, Split};
///
/// let cases: Vec<EvalCase> = (1..=8)
///     .map(|i| EvalCase {
///         query_id: format!("q{i}"),
///         query: String::new(),
///         ground_truth: "a".into(),
///         pool: vec!["a".into(), "b".into()],
///     })
///     .collect();
/// let ranks: BTreeMap<String, usize> = (1..=8).map(|i| (format!("q{i}"), i)).collect();
/// let s = build_splits(&cases, &ranks).unwrap();
/// assert_eq!(s.members(Split::Easy), ["q1", "q2"]);
/// assert_eq!(s.members(Split::Hard), ["q7", "q8"]);
/// ```
pub fn build_splits(cases: &[EvalCase], baseline_ranks: &BTreeMap<String, usize>) -> Result<SplitAssignment, EvalError> {
    let n = cases.len();
    if n < 4 {
        return Err(EvalError::InsufficientCases(n));
    }
    let mut seen = HashSet::new();
    let mut rows: Vec<(usize, &str)> = Vec::with_capacity(n);
    for c in cases {
        if !seen.insert(c.query_id.as_str()) {
            return Err(EvalError::DuplicateCase(c.query_id.clone()));
        }
        let rank = baseline_ranks.get(&c.query_id).copied().unwrap_or(c.pool.len());
        rows.push((rank, &c.query_id));
    }
    rows.sort();
    let quarter = n / 4;
    let mut out = SplitAssignment {
        cases: BTreeMap::new(),
        easy_max_rank: rows[..quarter].last().map(|r| r.0),
        hard_min_rank: rows[n - quarter..].first().map(|r| r.0),
    };
    for (i, (_, id)) in rows.iter().enumerate() {
        let split = if i < quarter {
            Split::Easy
        } else if i >= n - quarter {
            Split::Hard
        } else {
            Split::Middle
        };
        out.cases.insert(id.to_string(), split);
    }
    Ok(out)
}

/// 1 if `ground_truth` is within the first `k` entries, else 0.
pub fn recall_at_k(ranking: &RankedList, ground_truth: &str, k: usize) -> u8 {
    debug_assert!(k >= 1);
    ranking
        .entries
        .iter()
        .take(k)
        .any(|e| e.image_id == ground_truth) as u8
}

/// Which cases a table column covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitGroup {
    Easy,
    /// Easy and Hard together; Middle cases are left out.
    Combined,
    Hard,
    All,
}

impl SplitGroup {
    pub const ALL: [SplitGroup; 4] = [SplitGroup::Easy, SplitGroup::Combined, SplitGroup::Hard, SplitGroup::All];

    fn contains(self, s: Split) -> bool {
        match self {
            SplitGroup::Easy => s == Split::Easy,
            SplitGroup::Hard => s == Split::Hard,
            SplitGroup::Combined => s != Split::Middle,
            SplitGroup::All => true,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SplitGroup::Easy => "easy",
            SplitGroup::Combined => "combined",
            SplitGroup::Hard => "hard",
            SplitGroup::All => "all",
        }
    }
}

/// Recall for one system on one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub system: String,
    pub split: SplitGroup,
    pub cases: usize,
    /// Cases with the ground truth in the top k, keyed by k.
    pub hits: BTreeMap<usize, usize>,
    /// `hits / cases`; 0 when the group is empty.
    pub recall: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub ks: Vec<usize>,
    pub rows: Vec<EvalRow>,
    pub note: String,
}

impl EvalTable {
    pub fn row(&self, system: &str, split: SplitGroup) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.system == system && r.split == split)
    }

    /// Aligned plain-text rendering, one line per (system, split).
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.system.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:<8}  {:>5}", "system", "split", "cases");
        for k in &self.ks {
            let _ = write!(out, "  {:>6}", format!("R@{k}"));
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<width$}  {:<8}  {:>5}", r.system, r.split.name(), r.cases);
            for k in &self.ks {
                let _ = write!(out, "  {:>6.3}", r.recall[k]);
            }
            out.push('\n');
        }
        out
    }
}

/// Mean Recall@k for every system on every split group.
pub fn evaluate(
    cases: &[EvalCase],
    systems: &BTreeMap<String, BTreeMap<String, RankedList>>,
    splits: &SplitAssignment,
) -> Result<EvalTable, EvalError> {
    let mut rows = Vec::new();
    for (system, rankings) in systems {
        for group in SplitGroup::ALL {
            let mut hits: BTreeMap<usize, usize> = REPORT_KS.iter().map(|k| (*k, 0)).collect();
            let mut n = 0;
            for c in cases {
                let split = *splits
                    .cases
                    .get(&c.query_id)
                    .ok_or_else(|| EvalError::MissingSplit(c.query_id.clone()))?;
                if !group.contains(split) {
                    continue;
                }
                let list = rankings.get(&c.query_id).ok_or_else(|| EvalError::MissingRanking {
                    system: system.clone(),
                    query_id: c.query_id.clone(),
                })?;
                n += 1;
                for (k, h) in hits.iter_mut() {
                    *h += recall_at_k(list, &c.ground_truth, *k) as usize;
                }
            }
            let recall = hits
                .iter()
                .map(|(k, h)| (*k, if n == 0 { 0.0 } else { *h as f64 / n as f64 }))
                .collect();
            rows.push(EvalRow {
                system: system.clone(),
                split: group,
                cases: n,
                hits,
                recall,
            });
        }
    }
    Ok(EvalTable {
        ks: REPORT_KS.to_vec(),
        rows,
        note: "combined covers the easy and hard cases together and excludes the middle split".into(),
    })
}
