//! Shared domain types: queries, triplets, specifications, verdicts and
//! scores. Nothing in here does I/O.

mod bbox;
mod phrase;
mod score;
mod verdict;

pub use bbox::{BBox, BBoxError};
pub use phrase::{canonicalize, numeral, singularize, NounPhrase};
pub use score::{RankedEntry, RankedList, TruthScore, TruthScoreError};
pub use verdict::{ErrorClass, Evidence, Outcome, Verdict};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

pub const MAX_QUERY_CHARS: usize = 4096;

/// The user's query text, non-empty and at most [`MAX_QUERY_CHARS`] long.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QueryText(String);

impl QueryText {
    pub fn new(raw: impl Into<String>) -> Result<Self, ValidationError> {
        let raw = raw.into();
        if raw.trim().is_empty() {
            return Err(ValidationError::EmptyQuery);
        }
        let len = raw.chars().count();
        if len > MAX_QUERY_CHARS {
            return Err(ValidationError::QueryTooLong { len });
        }
        Ok(QueryText(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for QueryText {
    type Error = ValidationError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        QueryText::new(value)
    }
}

impl From<QueryText> for String {
    fn from(q: QueryText) -> String {
        q.0
    }
}

impl fmt::Display for QueryText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One subject-predicate-object constraint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triplet {
    pub id: u32,
    #[serde(rename = "s")]
    pub subject: NounPhrase,
    #[serde(rename = "p")]
    pub predicate: String,
    #[serde(rename = "o")]
    pub object: NounPhrase,
}

impl Triplet {
    pub fn new(id: u32, subject: NounPhrase, predicate: impl Into<String>, object: NounPhrase) -> Self {
        Triplet {
            id,
            subject,
            predicate: predicate.into(),
            object,
        }
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.predicate, self.object)
    }
}

/// Where a specification came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecSource {
    Grammar,
    #[default]
    ExternalJson,
}

/// A query together with its ordered triplets.
///
/// The canonical JSON form carries only `query` and `triplets`; the source
/// is provenance kept in memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Specification {
    pub query: QueryText,
    pub triplets: Vec<Triplet>,
    #[serde(skip)]
    pub source: SpecSource,
}

impl Specification {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Equality of query and triplets, ignoring provenance.
    pub fn same_content(&self, other: &Specification) -> bool {
        self.query == other.query && self.triplets == other.triplets
    }
}

/// Which argument of a triplet a validation error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Subject,
    Object,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Subject => "subject",
            Role::Object => "object",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("empty query")]
    EmptyQuery,
    #[error("query is {len} characters, limit is {MAX_QUERY_CHARS}")]
    QueryTooLong { len: usize },
    #[error("empty specification")]
    EmptySpecification,
    #[error("duplicate id {0}")]
    DuplicateId(u32),
    #[error("triplet id {id} out of range 0..{n}")]
    IdOutOfRange { id: u32, n: usize },
    #[error("triplet {id}: empty predicate")]
    EmptyPredicate { id: u32 },
    #[error("triplet {id}: {role} has neither head nor literal")]
    EmptyPhrase { id: u32, role: Role },
    #[error("triplet {id}: subject head is empty")]
    EmptySubjectHead { id: u32 },
    #[error("triplet {id}: {role} count must be at least 1")]
    ZeroCount { id: u32, role: Role },
    #[error("triplet {id}: {field} is not lowercase-canonical: {value:?}")]
    NotCanonical { id: u32, field: String, value: String },
}

impl ValidationError {
    pub fn triplet_id(&self) -> Option<u32> {
        match self {
            ValidationError::DuplicateId(id)
            | ValidationError::IdOutOfRange { id, .. }
            | ValidationError::EmptyPredicate { id }
            | ValidationError::EmptyPhrase { id, .. }
            | ValidationError::EmptySubjectHead { id }
            | ValidationError::ZeroCount { id, .. }
            | ValidationError::NotCanonical { id, .. } => Some(*id),
            _ => None,
        }
    }
}

fn is_canonical_text(s: &str) -> bool {
    s == s.to_lowercase() && s == s.trim() && !s.contains("  ")
}

fn check_phrase(id: u32, role: Role, np: &NounPhrase, errors: &mut Vec<ValidationError>) {
    if np.head.is_empty() && np.literal.as_deref().is_none_or(|l| l.trim().is_empty()) {
        errors.push(ValidationError::EmptyPhrase { id, role });
    }
    if np.count == Some(0) {
        errors.push(ValidationError::ZeroCount { id, role });
    }
    if !is_canonical_text(&np.head) {
        errors.push(ValidationError::NotCanonical {
            id,
            field: format!("{role}.head"),
            value: np.head.clone(),
        });
    }
    for attr in &np.attributes {
        if attr.is_empty() || !is_canonical_text(attr) {
            errors.push(ValidationError::NotCanonical {
                id,
                field: format!("{role}.attributes"),
                value: attr.clone(),
            });
        }
    }
}

/// Checks a single triplet's field invariants (ids are checked at the
/// specification level).
pub fn validate_triplet(t: &Triplet) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    if t.subject.head.is_empty() {
        errors.push(ValidationError::EmptySubjectHead { id: t.id });
    }
    check_phrase(t.id, Role::Subject, &t.subject, &mut errors);
    if t.predicate.trim().is_empty() {
        errors.push(ValidationError::EmptyPredicate { id: t.id });
    } else if !is_canonical_text(&t.predicate) {
        errors.push(ValidationError::NotCanonical {
            id: t.id,
            field: "predicate".into(),
            value: t.predicate.clone(),
        });
    }
    check_phrase(t.id, Role::Object, &t.object, &mut errors);
    // an empty subject head is reported once, not also as an empty phrase
    if t.subject.head.is_empty() {
        errors.retain(|e| !matches!(e, ValidationError::EmptyPhrase { role: Role::Subject, .. }));
    }
    errors
}

/// Returns every invariant violation; an empty list means the
/// specification is valid.
///
/// ```
/// use vismc::model::{validate_specification, NounPhrase, QueryText, Specification, SpecSource, Triplet};
///
/// let spec = Specification {
///     query: QueryText::new("man riding horse").unwrap(),
///     triplets: vec![Triplet::new(0, NounPhrase::head("man"), "riding", NounPhrase::head("horse"))],
///     source: SpecSource::Grammar,
/// };
/// assert!(validate_specification(&spec).is_empty());
/// ```
pub fn validate_specification(spec: &Specification) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    let n = spec.triplets.len();
    if n == 0 {
        errors.push(ValidationError::EmptySpecification);
        return errors;
    }
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    for t in &spec.triplets {
        *seen.entry(t.id).or_default() += 1;
    }
    for (&id, &c) in &seen {
        if c > 1 {
            errors.push(ValidationError::DuplicateId(id));
        }
        if id as usize >= n {
            errors.push(ValidationError::IdOutOfRange { id, n });
        }
    }
    for t in &spec.triplets {
        errors.extend(validate_triplet(t));
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(triplets: Vec<Triplet>) -> Specification {
        Specification {
            query: QueryText::new("q").unwrap(),
            triplets,
            source: SpecSource::Grammar,
        }
    }

    fn man_riding_horse(id: u32) -> Triplet {
        Triplet::new(id, NounPhrase::head("man"), "riding", NounPhrase::head("horse"))
    }

    #[test]
    fn valid_single_triplet() {
        assert_eq!(validate_specification(&spec(vec![man_riding_horse(0)])), vec![]);
    }

    #[test]
    fn empty_specification() {
        let errs = validate_specification(&spec(vec![]));
        assert_eq!(errs, vec![ValidationError::EmptySpecification]);
        assert_eq!(errs[0].to_string(), "empty specification");
    }

    #[test]
    fn duplicate_ids() {
        let errs = validate_specification(&spec(vec![man_riding_horse(0), man_riding_horse(0)]));
        assert_eq!(errs, vec![ValidationError::DuplicateId(0)]);
        assert_eq!(errs[0].to_string(), "duplicate id 0");
    }

    #[test]
    fn errors_name_triplet_and_field() {
        let mut t = man_riding_horse(0);
        t.predicate = String::new();
        t.object = NounPhrase::default();
        let errs = validate_specification(&spec(vec![t]));
        assert!(errs.contains(&ValidationError::EmptyPredicate { id: 0 }));
        assert!(errs.contains(&ValidationError::EmptyPhrase { id: 0, role: Role::Object }));
        assert!(errs.iter().all(|e| e.triplet_id() == Some(0)));
    }

    #[test]
    fn literal_keeps_case_but_heads_must_be_lowercase() {
        let t = Triplet::new(0, NounPhrase::head("sign"), "reads", NounPhrase::literal("Norfolk"));
        assert!(validate_specification(&spec(vec![t])).is_empty());
        let t = Triplet::new(0, NounPhrase::head("Sign"), "reads", NounPhrase::literal("Norfolk"));
        assert!(matches!(
            validate_specification(&spec(vec![t]))[..],
            [ValidationError::NotCanonical { .. }]
        ));
    }

    #[test]
    fn ids_must_cover_range() {
        let errs = validate_specification(&spec(vec![man_riding_horse(0), man_riding_horse(5)]));
        assert_eq!(errs, vec![ValidationError::IdOutOfRange { id: 5, n: 2 }]);
    }

    #[test]
    fn query_text_bounds() {
        assert_eq!(QueryText::new("   "), Err(ValidationError::EmptyQuery));
        assert!(QueryText::new("x".repeat(4096)).is_ok());
        assert!(QueryText::new("x".repeat(4097)).is_err());
    }

    #[test]
    fn triplet_json_canonical_form() {
        let t = man_riding_horse(0);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"id":0,"s":{"head":"man"},"p":"riding","o":{"head":"horse"}}"#);
        let back: Triplet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
