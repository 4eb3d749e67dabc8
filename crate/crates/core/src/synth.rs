//! Compiles triplets into routine programs through a predicate lexicon.
//!
//! Each predicate resolves to one template class. Spatial and existence
//! templates detect both arguments and assert a box relation; reading
//! templates read text inside the subject; attribute templates detect a
//! composite "attribute head" phrase; everything else is an action
//! composite that detects the whole `subject predicate object` phrase and
//! corroborates it with the two arguments. Explicit counts add
//! `ASSERT_COUNT` on top of whichever template applies.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::geometry::Relation;
use crate::model::{validate_triplet, ErrorClass, NounPhrase, Specification, Triplet};
use crate::parser::{is_function_word, COMPOSITE_PREDICATE};
use crate::routine::{Instruction, Provenance, Reg, RoutineEntry, RoutineProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateClass {
    Spatial(Relation),
    Reading,
    Existence,
    Attribute,
    ActionComposite,
}

impl fmt::Display for PredicateClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredicateClass::Spatial(r) => write!(f, "spatial({r})"),
            PredicateClass::Reading => f.write_str("reading"),
            PredicateClass::Existence => f.write_str("existence"),
            PredicateClass::Attribute => f.write_str("attribute"),
            PredicateClass::ActionComposite => f.write_str("action_composite"),
        }
    }
}

/// Base template class plus the counting flag that composes with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    pub base: PredicateClass,
    pub counting: bool,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base)?;
        if self.counting {
            f.write_str(" + counting")?;
        }
        Ok(())
    }
}

const DEFAULT_ENTRIES: &[(&str, &str)] = &[
    ("on", "spatial:on"),
    ("on top of", "spatial:on"),
    ("atop", "spatial:on"),
    ("under", "spatial:under"),
    ("beneath", "spatial:under"),
    ("underneath", "spatial:under"),
    ("above", "spatial:above"),
    ("over", "spatial:above"),
    ("below", "spatial:below"),
    ("near", "spatial:near"),
    ("by", "spatial:near"),
    ("located by", "spatial:near"),
    ("beside", "spatial:near"),
    ("next to", "spatial:near"),
    ("close to", "spatial:near"),
    ("left of", "spatial:left_of"),
    ("right of", "spatial:right_of"),
    ("in", "spatial:inside"),
    ("inside", "spatial:inside"),
    ("within", "spatial:inside"),
    ("behind", "spatial:overlap_or_near"),
    ("in front of", "spatial:overlap_or_near"),
    ("reads", "reading"),
    ("says", "reading"),
    ("labeled", "reading"),
    ("labelled", "reading"),
    ("displays", "reading"),
    ("with", "existence"),
    ("has", "existence"),
    ("have", "existence"),
    ("holding", "existence"),
    ("containing", "existence"),
    ("made of", "attribute"),
];

/// Words that make `X is W` an attribute check rather than an identity.
pub const ATTRIBUTE_WORDS: &[&str] = &[
    "white", "black", "red", "blue", "green", "yellow", "orange", "purple", "pink", "brown", "gray", "grey", "silver",
    "gold", "golden", "beige", "tan", "wooden", "wood", "metal", "metallic", "plastic", "glass", "brick", "stone",
    "concrete", "dirt", "leather", "paper", "steel", "large", "small", "big", "little", "tall", "short", "long", "old",
    "new", "young", "empty", "full", "open", "closed", "wet", "dry", "striped", "dark", "bright", "clean", "dirty",
    "round", "square", "colorful", "shiny", "fluffy",
];

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("reading lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon is not a JSON object of strings: {0}")]
    Malformed(String),
    #[error("lexicon entry {predicate:?}: unknown class {class:?}")]
    UnknownClass { predicate: String, class: String },
}

fn parse_class(predicate: &str, class: &str) -> Result<PredicateClass, LexiconError> {
    let unknown = || LexiconError::UnknownClass {
        predicate: predicate.to_string(),
        class: class.to_string(),
    };
    Ok(match class {
        "reading" => PredicateClass::Reading,
        "existence" => PredicateClass::Existence,
        "attribute" => PredicateClass::Attribute,
        "action" | "action_composite" => PredicateClass::ActionComposite,
        other => {
            let rel = other.strip_prefix("spatial:").ok_or_else(unknown)?;
            PredicateClass::Spatial(rel.parse().map_err(|_| unknown())?)
        }
    })
}

fn class_name(c: PredicateClass) -> String {
    match c {
        PredicateClass::Spatial(r) => format!("spatial:{r}"),
        PredicateClass::Reading => "reading".into(),
        PredicateClass::Existence => "existence".into(),
        PredicateClass::Attribute => "attribute".into(),
        PredicateClass::ActionComposite => "action".into(),
    }
}

/// Predicate string to template class.
///
/// The file form is a flat JSON object mapping predicates to `"spatial:<relation>"`,
/// `"reading"`, `"existence"`, `"attribute"` or `"action"`, plus an optional
/// boolean `"strict_counting"`. File entries overlay the built-in table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateLexicon {
    entries: BTreeMap<String, PredicateClass>,
    strict_counting: bool,
}

impl Default for PredicateLexicon {
    fn default() -> Self {
        let entries = DEFAULT_ENTRIES
            .iter()
            .map(|(p, c)| (p.to_string(), parse_class(p, c).expect("built-in lexicon is valid")))
            .collect();
        PredicateLexicon {
            entries,
            strict_counting: false,
        }
    }
}

impl PredicateLexicon {
    pub fn from_json(json: &[u8]) -> Result<Self, LexiconError> {
        let raw: BTreeMap<String, serde_json::Value> =
            serde_json::from_slice(json).map_err(|e| LexiconError::Malformed(e.to_string()))?;
        let mut lex = PredicateLexicon::default();
        for (key, value) in raw {
            if key == "strict_counting" {
                lex.strict_counting = value
                    .as_bool()
                    .ok_or_else(|| LexiconError::Malformed("strict_counting must be a boolean".into()))?;
                continue;
            }
            let class = value
                .as_str()
                .ok_or_else(|| LexiconError::Malformed(format!("entry {key:?} is not a string")))?;
            let predicate = key.trim().to_lowercase();
            lex.entries.insert(predicate, parse_class(&key, class)?);
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let bytes = std::fs::read(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&bytes)
    }

    /// Canonical JSON of the full table; equal lexicons give equal bytes.
    pub fn to_json(&self) -> String {
        let mut map: BTreeMap<String, serde_json::Value> = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(class_name(*v))))
            .collect();
        map.insert("strict_counting".into(), self.strict_counting.into());
        serde_json::to_string(&map).expect("lexicon serializes")
    }

    pub fn strict_counting(&self) -> bool {
        self.strict_counting
    }

    pub fn with_strict_counting(mut self, strict: bool) -> Self {
        self.strict_counting = strict;
        self
    }

    /// Exact entry, else the longest whole-word suffix that has one.
    pub fn lookup(&self, predicate: &str) -> Option<PredicateClass> {
        let words: Vec<&str> = predicate.split_whitespace().collect();
        (0..words.len()).find_map(|i| self.entries.get(&words[i..].join(" ")).copied())
    }
}

fn is_reading_predicate(p: &str) -> bool {
    matches!(p, "reads" | "says" | "labeled" | "labelled" | "displays")
}

/// Template class for a triplet. Total: unknown predicates are action
/// composites.
///
/// ```
/// use vismc::model::{NounPhrase, Triplet};
/// use vismc::synth::{classify_predicate, PredicateClass, PredicateLexicon};
///
/// let lex = PredicateLexicon::default();
/// let t = Triplet::new(0, NounPhrase::head("lake"), "with", NounPhrase::head("boat").with_count(2));
/// let c = classify_predicate(&t, &lex);
/// assert_eq!(c.base, PredicateClass::Existence);
/// assert!(c.counting);
/// ```
pub fn classify_predicate(t: &Triplet, lex: &PredicateLexicon) -> Classification {
    let counting = t.subject.count.is_some() || t.object.count.is_some();
    let p = t.predicate.as_str();
    let base = if p == COMPOSITE_PREDICATE {
        PredicateClass::ActionComposite
    } else if is_reading_predicate(p) || t.object.literal.is_some() {
        PredicateClass::Reading
    } else if p == "made of" || (p == "is" && ATTRIBUTE_WORDS.contains(&t.object.head.as_str())) {
        PredicateClass::Attribute
    } else {
        lex.lookup(p).unwrap_or(PredicateClass::ActionComposite)
    };
    Classification { base, counting }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("triplet {triplet_id}: bad triplet: {reason}")]
pub struct SynthesisError {
    pub triplet_id: u32,
    pub reason: String,
}

impl SynthesisError {
    pub fn class(&self) -> ErrorClass {
        ErrorClass::BadTriplet
    }
}

fn check_synthesizable(t: &Triplet) -> Result<(), SynthesisError> {
    let bad = |reason: String| SynthesisError {
        triplet_id: t.id,
        reason,
    };
    let errors = validate_triplet(t);
    if !errors.is_empty() {
        return Err(bad(errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")));
    }
    for (role, np) in [("subject", &t.subject), ("object", &t.object)] {
        if np.literal.is_none() && is_function_word(&np.head) {
            return Err(bad(format!("{role} {:?} is a function word, not a thing", np.head)));
        }
    }
    Ok(())
}

struct Builder {
    ins: Vec<Instruction>,
}

impl Builder {
    fn next(&self) -> Reg {
        Reg(self.ins.len() as u32)
    }

    fn push(&mut self, f: impl FnOnce(Reg) -> Instruction) -> Reg {
        let r = self.next();
        self.ins.push(f(r));
        r
    }

    fn detect(&mut self, query: String) -> Reg {
        self.push(|out| Instruction::Detect { query, out })
    }

    fn all(&mut self, conds: Vec<Reg>) -> Reg {
        match conds.as_slice() {
            [one] => *one,
            _ => self.push(|out| Instruction::And { args: conds, out }),
        }
    }
}

fn counts(b: &mut Builder, np: &NounPhrase, boxes: Reg, exact: bool, conds: &mut Vec<Reg>) {
    if let Some(count) = np.count {
        conds.push(b.push(|out| Instruction::AssertCount { boxes, count, exact, out }));
    }
}

fn composite_phrase(t: &Triplet) -> String {
    if t.predicate == COMPOSITE_PREDICATE || !t.object.is_object() {
        return t.subject.detect_phrase();
    }
    format!("{} {} {}", t.subject.detect_phrase(), t.predicate, t.object.detect_phrase())
}

/// Compiles one triplet. Pure in `(t, lex)`.
///
/// ```
/// use vismc::model::{NounPhrase, Triplet};
/// use vismc::synth::{synthesize, PredicateLexicon};
///
/// let t = Triplet::new(0, NounPhrase::head("bathtub"), "is", NounPhrase::head("white"));
/// let p = synthesize(&t, &PredicateLexicon::default()).unwrap();
/// let lines: Vec<String> = p.instructions.iter().map(|i| i.to_string()).collect();
/// assert_eq!(lines, ["r0 = DETECT \"white bathtub\"", "r1 = NONEMPTY r0"]);
/// ```
pub fn synthesize(t: &Triplet, lex: &PredicateLexicon) -> Result<RoutineProgram, SynthesisError> {
    check_synthesizable(t)?;
    let class = classify_predicate(t, lex);
    let exact = lex.strict_counting();
    let mut b = Builder { ins: Vec::new() };
    let mut conds = Vec::new();
    match class.base {
        PredicateClass::Spatial(_) | PredicateClass::Existence => {
            let relation = match class.base {
                PredicateClass::Spatial(r) => r,
                _ => Relation::OverlapOrNear,
            };
            let s = b.detect(t.subject.detect_phrase());
            let o = b.detect(t.object.detect_phrase());
            counts(&mut b, &t.subject, s, exact, &mut conds);
            counts(&mut b, &t.object, o, exact, &mut conds);
            conds.push(b.push(|out| Instruction::AssertRelation { relation, a: s, b: o, out }));
        }
        PredicateClass::Reading => {
            let literal = t.object.literal.clone().unwrap_or_else(|| t.object.detect_phrase());
            let s = b.detect(t.subject.detect_phrase());
            let texts = b.push(|out| Instruction::ReadText { boxes: s, out });
            counts(&mut b, &t.subject, s, exact, &mut conds);
            conds.push(b.push(|out| Instruction::AssertTextMatch { texts, literal, out }));
        }
        PredicateClass::Attribute => {
            let mut words: Vec<&str> = Vec::new();
            words.extend(t.object.attributes.iter().map(String::as_str));
            words.push(&t.object.head);
            words.extend(t.subject.attributes.iter().map(String::as_str));
            words.push(&t.subject.head);
            let r = b.detect(words.join(" "));
            conds.push(b.push(|out| Instruction::Nonempty { boxes: r, out }));
            counts(&mut b, &t.subject, r, exact, &mut conds);
        }
        PredicateClass::ActionComposite => {
            let composite = composite_phrase(t);
            let c = b.detect(composite.clone());
            let mut parts = vec![c];
            let mut s_reg = None;
            let mut o_reg = None;
            if composite != t.subject.detect_phrase() {
                let s = b.detect(t.subject.detect_phrase());
                s_reg = Some(s);
                parts.push(s);
                if t.object.is_object() {
                    let o = b.detect(t.object.detect_phrase());
                    o_reg = Some(o);
                    parts.push(o);
                }
            }
            for boxes in parts {
                conds.push(b.push(|out| Instruction::Nonempty { boxes, out }));
            }
            let s = s_reg.unwrap_or(c);
            counts(&mut b, &t.subject, s, exact, &mut conds);
            if let Some(o) = o_reg {
                counts(&mut b, &t.object, o, exact, &mut conds);
                if class.counting {
                    conds.push(b.push(|out| Instruction::AssertRelation {
                        relation: Relation::Near,
                        a: s,
                        b: o,
                        out,
                    }));
                }
            }
        }
    }
    b.all(conds);
    RoutineProgram::new(t.id, b.ins, Provenance::Synthesized).map_err(|e| SynthesisError {
        triplet_id: t.id,
        reason: format!("template produced an invalid routine: {e}"),
    })
}

/// One entry per triplet, in triplet order. Triplets that cannot be
/// compiled become degenerate `bad_triplet` entries.
pub fn synthesize_all(spec: &Specification, lex: &PredicateLexicon) -> Vec<RoutineEntry> {
    spec.triplets
        .iter()
        .map(|t| match synthesize(t, lex) {
            Ok(p) => RoutineEntry::Program(p),
            Err(e) => RoutineEntry::degenerate(t.id, e.class(), e.reason),
        })
        .collect()
}

/// Verification states for a specification: one per triplet when each is
/// checked alone, against every non-empty subset of triplets otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCount {
    pub triplet_local: u64,
    /// `2^n - 1`, saturating at `u128::MAX`.
    pub cartesian: u128,
}

pub fn state_count(n: usize) -> StateCount {
    let cartesian = if n >= 128 { u128::MAX } else { (1u128 << n) - 1 };
    StateCount {
        triplet_local: n as u64,
        cartesian,
    }
}

pub fn estimate_state_count(spec: &Specification) -> StateCount {
    state_count(spec.triplets.len())
}
