//! Truth scores, verification ranking, and baseline reranking.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;

use crate::model::{Outcome, RankedEntry, RankedList, TruthScore, Verdict};

/// How Indeterminate verdicts enter a truth score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndeterminatePolicy {
    /// Indeterminate counts as not satisfied.
    #[default]
    CountInTotal,
    /// Indeterminate verdicts are dropped from the denominator.
    Exclude,
}

impl FromStr for IndeterminatePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "count_in_total" | "count" => Ok(Self::CountInTotal),
            "exclude" => Ok(Self::Exclude),
            _ => Err(format!("unknown indeterminate policy {s:?} (expected count_in_total or exclude)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RankingError {
    #[error("image {image}: no verdict for triplet {triplet}")]
    MissingVerdict { image: String, triplet: u32 },
    #[error("image {image}: more than one verdict for triplet {triplet}")]
    DuplicateVerdict { image: String, triplet: u32 },
    #[error("image {image}: verdict for triplet {triplet}, which is not in the specification")]
    UnknownTriplet { image: String, triplet: u32 },
    #[error("no score for image {0}")]
    MissingScore(String),
    #[error("baseline ranking is empty")]
    EmptyBaseline,
    #[error("baseline ranking lists {0} twice")]
    DuplicateBaselineEntry(String),
    #[error("no verdicts given")]
    NoVerdicts,
}

/// Truth score of one image from its verdicts, one per triplet id.
///
/// ```
/// use vismc::model::Verdict;
/// use vismc::ranking::{truth_score, IndeterminatePolicy};
///
/// let v = [Verdict::satisfied("a", 0, vec![]), Verdict::violated("a", 1, vec![])];
/// let s = truth_score(&v, &[0, 1], IndeterminatePolicy::default()).unwrap();
/// assert_eq!(s.to_string(), "1/2");
/// ```
pub fn truth_score(verdicts: &[Verdict], triplet_ids: &[u32], policy: IndeterminatePolicy) -> Result<TruthScore, RankingError> {
    let image = verdicts.first().map(|v| v.image_id.clone()).ok_or(RankingError::NoVerdicts)?;
    let wanted: HashSet<u32> = triplet_ids.iter().copied().collect();
    let mut seen = HashSet::new();
    let (mut satisfied, mut indeterminate) = (0u32, 0u32);
    for v in verdicts {
        if !wanted.contains(&v.triplet_id) {
            return Err(RankingError::UnknownTriplet { image, triplet: v.triplet_id });
        }
        if !seen.insert(v.triplet_id) {
            return Err(RankingError::DuplicateVerdict { image, triplet: v.triplet_id });
        }
        match v.outcome {
            Outcome::Satisfied => satisfied += 1,
            Outcome::Indeterminate => indeterminate += 1,
            Outcome::Violated => {}
        }
    }
    if let Some(&missing) = triplet_ids.iter().find(|t| !seen.contains(t)) {
        return Err(RankingError::MissingVerdict { image, triplet: missing });
    }
    let total = wanted.len() as u32;
    let score = match policy {
        IndeterminatePolicy::CountInTotal => TruthScore::new(satisfied, total),
        IndeterminatePolicy::Exclude if indeterminate == total => TruthScore::all_indeterminate(total),
        IndeterminatePolicy::Exclude => TruthScore::new(satisfied, total - indeterminate),
    };
    Ok(score.expect("satisfied <= total and total >= 1"))
}

/// Evidence items across an image's satisfied verdicts, the rank tiebreak.
pub fn evidence_items(verdicts: &[Verdict]) -> usize {
    verdicts
        .iter()
        .filter(|v| v.outcome == Outcome::Satisfied)
        .map(|v| v.evidence.len())
        .sum()
}

/// Per-image input to [`rank`] and [`rerank`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageScore {
    pub score: TruthScore,
    pub evidence_items: usize,
}

impl From<TruthScore> for ImageScore {
    fn from(score: TruthScore) -> Self {
        ImageScore { score, evidence_items: 0 }
    }
}

/// Scores for every image in a verdict set, grouped by image.
pub fn score_images(
    verdicts: &[Verdict],
    triplet_ids: &[u32],
    policy: IndeterminatePolicy,
) -> Result<BTreeMap<String, ImageScore>, RankingError> {
    let mut by_image: BTreeMap<&str, Vec<Verdict>> = BTreeMap::new();
    for v in verdicts {
        by_image.entry(&v.image_id).or_default().push(v.clone());
    }
    by_image
        .into_iter()
        .map(|(img, vs)| {
            let score = truth_score(&vs, triplet_ids, policy)?;
            Ok((img.to_string(), ImageScore { score, evidence_items: evidence_items(&vs) }))
        })
        .collect()
}

/// Orders images by truth score, then evidence count, then id.
///
/// ```
/// use std::collections::BTreeMap;
/// use vismc::model::TruthScore;
/// use vismc::ranking::{rank, ImageScore};
///
/// let scores: BTreeMap<String, ImageScore> = [("a", 1), ("b", 2), ("c", 0)]
///     .into_iter()
///     .map(|(k, s)| (k.to_string(), TruthScore::new(s, 2).unwrap().into()))
///     .collect();
/// let images: Vec<String> = ["a", "b", "c"].map(String::from).into();
/// let ranked = rank(&images, &scores).unwrap();
/// let order: Vec<&str> = ranked.image_ids().collect();
/// assert_eq!(order, ["b", "a", "c"]);
/// ```
pub fn rank(images: &[String], scores: &BTreeMap<String, ImageScore>) -> Result<RankedList, RankingError> {
    let mut rows = Vec::with_capacity(images.len());
    for img in images {
        let s = scores.get(img).ok_or_else(|| RankingError::MissingScore(img.clone()))?;
        rows.push((img, *s));
    }
    rows.sort_by(|(ia, a), (ib, b)| {
        b.score
            .cmp_value(&a.score)
            .then(b.evidence_items.cmp(&a.evidence_items))
            .then(ia.cmp(ib))
    });
    rows.dedup_by(|x, y| x.0 == y.0);
    Ok(RankedList {
        entries: rows
            .into_iter()
            .map(|(img, s)| RankedEntry {
                image_id: img.clone(),
                truth_score: s.score,
                rerank_score: None,
                baseline_rank: None,
                evidence_items: s.evidence_items,
            })
            .collect(),
    })
}

/// A baseline retrieval list for one query, best first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BaselineRepr")]
pub struct BaselineRanking {
    pub query_id: String,
    #[serde(rename = "ranking")]
    entries: Vec<String>,
}

#[derive(Deserialize)]
struct BaselineRepr {
    query_id: String,
    ranking: Vec<String>,
}

impl TryFrom<BaselineRepr> for BaselineRanking {
    type Error = RankingError;
    fn try_from(r: BaselineRepr) -> Result<Self, Self::Error> {
        BaselineRanking::new(r.query_id, r.ranking)
    }
}

impl BaselineRanking {
    pub fn new(query_id: impl Into<String>, entries: Vec<String>) -> Result<Self, RankingError> {
        if entries.is_empty() {
            return Err(RankingError::EmptyBaseline);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.as_str())) {
            return Err(RankingError::DuplicateBaselineEntry(dup.clone()));
        }
        Ok(BaselineRanking {
            query_id: query_id.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    /// Splits into the top `k` and the rest.
    pub fn top_k(&self, k: usize) -> (BaselineRanking, Vec<String>) {
        let k = k.clamp(1, self.entries.len());
        let top = BaselineRanking {
            query_id: self.query_id.clone(),
            entries: self.entries[..k].to_vec(),
        };
        (top, self.entries[k..].to_vec())
    }
}

/// `(K - i) * score` for the entry at 0-based baseline position `i`.
pub fn rerank_score(k: usize, i: usize, score: &TruthScore) -> Ratio<u64> {
    Ratio::from_integer((k - i) as u64) * score.value()
}

/// Reorders a baseline by rank weight times truth score.
///
/// Entries without a score are treated as scoring zero. Ties keep baseline
/// order.
///
/// ```
/// use std::collections::BTreeMap;
/// use vismc::model::TruthScore;
/// use vismc::ranking::{rerank, BaselineRanking, ImageScore};
///
/// let ids: Vec<String> = (0..10).map(|i| format!("img{i}")).collect();
/// let base = BaselineRanking::new("q", ids.clone()).unwrap();
/// let mut scores = BTreeMap::new();
/// for id in &ids {
///     scores.insert(id.clone(), ImageScore::from(TruthScore::zero(4)));
/// }
/// scores.insert("img0".into(), TruthScore::new(2, 4).unwrap().into());
/// scores.insert("img2".into(), TruthScore::new(3, 4).unwrap().into());
/// let out = rerank(&base, &scores).unwrap();
/// assert_eq!(out.entries[0].image_id, "img2");
/// assert_eq!(out.entries[0].rerank_score.unwrap().to_string(), "6");
/// assert_eq!(out.entries[1].rerank_score.unwrap().to_string(), "5");
/// ```
pub fn rerank(base: &BaselineRanking, scores: &BTreeMap<String, ImageScore>) -> Result<RankedList, RankingError> {
    let k = base.k();
    if k == 0 {
        return Err(RankingError::EmptyBaseline);
    }
    let fallback_total = scores.values().next().map_or(1, |s| s.score.total());
    let mut entries: Vec<RankedEntry> = base
        .entries
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let s = scores.get(img).copied().unwrap_or_else(|| {
                log::warn!("query {}: no truth score for {img}; treating it as 0", base.query_id);
                ImageScore::from(TruthScore::zero(fallback_total))
            });
            RankedEntry {
                image_id: img.clone(),
                truth_score: s.score,
                rerank_score: Some(rerank_score(k, i, &s.score)),
                baseline_rank: Some(i),
                evidence_items: s.evidence_items,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.rerank_score
            .cmp(&a.rerank_score)
            .then(a.baseline_rank.cmp(&b.baseline_rank))
            .then(a.image_id.cmp(&b.image_id))
    });
    Ok(RankedList { entries })
}

/// Outcome per triplet id for one image.
pub fn outcome_summary(verdicts: &[Verdict]) -> BTreeMap<u32, Outcome> {
    verdicts.iter().map(|v| (v.triplet_id, v.outcome)).collect()
}

/// Ordering on truth scores used by [`rank`], exposed for callers that sort
/// their own rows.
pub fn cmp_scores(a: &ImageScore, b: &ImageScore) -> Ordering {
    b.score.cmp_value(&a.score).then(b.evidence_items.cmp(&a.evidence_items))
}
