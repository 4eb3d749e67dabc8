use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

/// Fraction of a specification's triplets an image satisfies.
///
/// Comparisons go through [`TruthScore::value`], an exact rational, so
/// `1/2` and `2/4` compare equal and no float rounding is involved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TruthScoreRepr", into = "TruthScoreRepr")]
pub struct TruthScore {
    satisfied: u32,
    total: u32,
    all_indeterminate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TruthScoreError {
    #[error("truth score total must be positive")]
    ZeroTotal,
    #[error("satisfied count {satisfied} exceeds total {total}")]
    Overflow { satisfied: u32, total: u32 },
}

impl TruthScore {
    pub fn new(satisfied: u32, total: u32) -> Result<Self, TruthScoreError> {
        if total == 0 {
            return Err(TruthScoreError::ZeroTotal);
        }
        if satisfied > total {
            return Err(TruthScoreError::Overflow { satisfied, total });
        }
        Ok(TruthScore {
            satisfied,
            total,
            all_indeterminate: false,
        })
    }

    /// `0/total` flagged as having no determinate verdict at all.
    pub fn all_indeterminate(total: u32) -> Result<Self, TruthScoreError> {
        let mut s = TruthScore::new(0, total)?;
        s.all_indeterminate = true;
        Ok(s)
    }

    pub fn zero(total: u32) -> Self {
        TruthScore {
            satisfied: 0,
            total: total.max(1),
            all_indeterminate: false,
        }
    }

    pub fn satisfied(&self) -> u32 {
        self.satisfied
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn is_all_indeterminate(&self) -> bool {
        self.all_indeterminate
    }

    pub fn value(&self) -> Ratio<u64> {
        Ratio::new(self.satisfied as u64, self.total as u64)
    }

    /// True iff every triplet was satisfied.
    pub fn is_full(&self) -> bool {
        self.satisfied == self.total
    }

    pub fn cmp_value(&self, other: &TruthScore) -> Ordering {
        self.value().cmp(&other.value())
    }
}

impl fmt::Display for TruthScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.satisfied, self.total)
    }
}

#[derive(Serialize, Deserialize)]
struct TruthScoreRepr {
    satisfied: u32,
    total: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    all_indeterminate: bool,
}

impl TryFrom<TruthScoreRepr> for TruthScore {
    type Error = TruthScoreError;
    fn try_from(r: TruthScoreRepr) -> Result<Self, Self::Error> {
        let mut s = TruthScore::new(r.satisfied, r.total)?;
        s.all_indeterminate = r.all_indeterminate && r.satisfied == 0;
        Ok(s)
    }
}

impl From<TruthScore> for TruthScoreRepr {
    fn from(s: TruthScore) -> Self {
        TruthScoreRepr {
            satisfied: s.satisfied,
            total: s.total,
            all_indeterminate: s.all_indeterminate,
        }
    }
}

/// Exact rationals as `"n"` or `"n/d"` strings in JSON.
pub(crate) mod ratio_str {
    use num_rational::Ratio;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Option<Ratio<u64>>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_str(&r.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Ratio<u64>>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        raw.map(|s| s.parse::<Ratio<u64>>().map_err(|e| D::Error::custom(format!("bad rational {s:?}: {e}"))))
            .transpose()
    }
}

/// One row of a ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    #[serde(rename = "image")]
    pub image_id: String,
    pub truth_score: TruthScore,
    #[serde(default, with = "ratio_str", skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<Ratio<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_rank: Option<usize>,
    /// Evidence items across the image's satisfied verdicts.
    #[serde(default)]
    pub evidence_items: usize,
}

/// Candidates ordered best-first by the active score.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.image_id.as_str())
    }

    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.image_id == image_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_comparison() {
        let a = TruthScore::new(1, 2).unwrap();
        let b = TruthScore::new(2, 4).unwrap();
        assert_eq!(a.cmp_value(&b), Ordering::Equal);
        assert_eq!(TruthScore::new(2, 3).unwrap().cmp_value(&a), Ordering::Greater);
    }

    #[test]
    fn bounds_enforced() {
        assert_eq!(TruthScore::new(0, 0), Err(TruthScoreError::ZeroTotal));
        assert!(TruthScore::new(3, 2).is_err());
        assert!(serde_json::from_str::<TruthScore>(r#"{"satisfied":3,"total":2}"#).is_err());
    }

    #[test]
    fn rerank_score_as_string() {
        let e = RankedEntry {
            image_id: "a".into(),
            truth_score: TruthScore::new(3, 4).unwrap(),
            rerank_score: Some(Ratio::new(15, 2)),
            baseline_rank: Some(0),
            evidence_items: 0,
        };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["rerank_score"], "15/2");
        assert_eq!(serde_json::from_value::<RankedEntry>(v).unwrap(), e);
    }
}
