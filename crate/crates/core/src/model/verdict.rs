use serde::{Deserialize, Serialize};
use std::fmt;

use super::BBox;
use crate::geometry::Relation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Satisfied,
    Violated,
    Indeterminate,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Satisfied => "satisfied",
            Outcome::Violated => "violated",
            Outcome::Indeterminate => "indeterminate",
        })
    }
}

/// Where in the pipeline a verdict went wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    /// The triplet itself is unusable (parsing produced nonsense).
    BadTriplet,
    /// The routine for the triplet failed static checks.
    BadRoutineGeneration,
    /// The routine faulted while running (e.g. reading text without OCR).
    BadRoutineExecution,
    /// The perception backend failed or was unreachable.
    BackendFailure,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorClass::BadTriplet => "bad triplet",
            ErrorClass::BadRoutineGeneration => "bad routine generation",
            ErrorClass::BadRoutineExecution => "bad routine execution",
            ErrorClass::BackendFailure => "backend failure",
        })
    }
}

/// Why one assertion held. Each item can be re-checked on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Nonempty {
        boxes: Vec<BBox>,
    },
    Relation {
        relation: Relation,
        subject: BBox,
        object: BBox,
    },
    Count {
        boxes: Vec<BBox>,
        required: u32,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        exact: bool,
    },
    Text {
        literal: String,
        read: String,
    },
}

/// Outcome of checking one triplet against one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(rename = "image")]
    pub image_id: String,
    #[serde(rename = "triplet")]
    pub triplet_id: u32,
    pub outcome: Outcome,
    #[serde(default)]
    pub evidence: Vec<Evidence>,
    #[serde(rename = "error", default)]
    pub error_class: Option<ErrorClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Verdict {
    pub fn satisfied(image_id: impl Into<String>, triplet_id: u32, evidence: Vec<Evidence>) -> Self {
        Verdict {
            image_id: image_id.into(),
            triplet_id,
            outcome: Outcome::Satisfied,
            evidence,
            error_class: None,
            detail: None,
        }
    }

    pub fn violated(image_id: impl Into<String>, triplet_id: u32, evidence: Vec<Evidence>) -> Self {
        Verdict {
            outcome: Outcome::Violated,
            ..Verdict::satisfied(image_id, triplet_id, evidence)
        }
    }

    /// A violated verdict produced by a degenerate routine standing in for
    /// a triplet or routine that could not be built.
    pub fn degenerate(image_id: impl Into<String>, triplet_id: u32, class: ErrorClass, detail: impl Into<String>) -> Self {
        debug_assert!(matches!(class, ErrorClass::BadTriplet | ErrorClass::BadRoutineGeneration));
        Verdict {
            error_class: Some(class),
            detail: Some(detail.into()),
            ..Verdict::violated(image_id, triplet_id, Vec::new())
        }
    }

    pub fn indeterminate(image_id: impl Into<String>, triplet_id: u32, class: ErrorClass, detail: impl Into<String>) -> Self {
        Verdict {
            image_id: image_id.into(),
            triplet_id,
            outcome: Outcome::Indeterminate,
            evidence: Vec::new(),
            error_class: Some(class),
            detail: Some(detail.into()),
        }
    }

    /// Indeterminate carries an error class; Satisfied never does; Violated
    /// only for degenerate routines.
    pub fn is_well_formed(&self) -> bool {
        match (self.outcome, self.error_class) {
            (Outcome::Indeterminate, Some(_)) => true,
            (Outcome::Indeterminate, None) => false,
            (Outcome::Satisfied, c) => c.is_none(),
            (Outcome::Violated, None) => true,
            (Outcome::Violated, Some(c)) => {
                matches!(c, ErrorClass::BadTriplet | ErrorClass::BadRoutineGeneration)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_shape() {
        let v = Verdict::indeterminate("i1", 2, ErrorClass::BackendFailure, "connection refused");
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["image"], "i1");
        assert_eq!(json["triplet"], 2);
        assert_eq!(json["outcome"], "indeterminate");
        assert_eq!(json["error"], "backend_failure");
        assert_eq!(serde_json::from_value::<Verdict>(json).unwrap(), v);
    }

    #[test]
    fn well_formedness() {
        assert!(Verdict::satisfied("i", 0, vec![]).is_well_formed());
        assert!(Verdict::violated("i", 0, vec![]).is_well_formed());
        assert!(Verdict::degenerate("i", 0, ErrorClass::BadTriplet, "x").is_well_formed());
        assert!(Verdict::indeterminate("i", 0, ErrorClass::BadRoutineExecution, "x").is_well_formed());
        let mut bad = Verdict::satisfied("i", 0, vec![]);
        bad.outcome = Outcome::Indeterminate;
        assert!(!bad.is_well_formed());
        bad.outcome = Outcome::Violated;
        bad.error_class = Some(ErrorClass::BackendFailure);
        assert!(!bad.is_well_formed());
    }
}
