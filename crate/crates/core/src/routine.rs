//! The routine DSL: a closed, register-based instruction set for verifying
//! one triplet against one image.
//!
//! Programs are straight-line SSA: every register is written once, read only
//! after it was written, and the last instruction yields a boolean. The same
//! [`check_program`] pass guards synthesized and externally supplied
//! programs.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::geometry::Relation;
use crate::model::ErrorClass;

/// A register name, `r<digits>` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u32);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl FromStr for Reg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix('r')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| format!("register name must match r<digits>, got {s:?}"))?;
        digits.parse().map(Reg).map_err(|e| format!("register {s:?}: {e}"))
    }
}

impl Serialize for Reg {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Reg {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Instruction {
    /// Open-vocabulary detection of a phrase; yields boxes.
    Detect { query: String, out: Reg },
    /// Reads text inside each box of a box register; yields strings.
    ReadText { boxes: Reg, out: Reg },
    AssertRelation { relation: Relation, a: Reg, b: Reg, out: Reg },
    /// `len(boxes) >= count`, or `== count` when `exact`.
    AssertCount {
        boxes: Reg,
        count: u32,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        exact: bool,
        out: Reg,
    },
    AssertTextMatch { texts: Reg, literal: String, out: Reg },
    Nonempty { boxes: Reg, out: Reg },
    And { args: Vec<Reg>, out: Reg },
    Or { args: Vec<Reg>, out: Reg },
    Const { value: bool, out: Reg },
}

/// Register value kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Boxes,
    Texts,
    Bool,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Boxes => "boxes",
            Kind::Texts => "texts",
            Kind::Bool => "bool",
        })
    }
}

impl Instruction {
    pub fn out(&self) -> Reg {
        match self {
            Instruction::Detect { out, .. }
            | Instruction::ReadText { out, .. }
            | Instruction::AssertRelation { out, .. }
            | Instruction::AssertCount { out, .. }
            | Instruction::AssertTextMatch { out, .. }
            | Instruction::Nonempty { out, .. }
            | Instruction::And { out, .. }
            | Instruction::Or { out, .. }
            | Instruction::Const { out, .. } => *out,
        }
    }

    pub fn out_kind(&self) -> Kind {
        match self {
            Instruction::Detect { .. } => Kind::Boxes,
            Instruction::ReadText { .. } => Kind::Texts,
            _ => Kind::Bool,
        }
    }

    /// Registers read, with the kind each must hold.
    pub fn inputs(&self) -> Vec<(Reg, Kind)> {
        match self {
            Instruction::Detect { .. } | Instruction::Const { .. } => vec![],
            Instruction::ReadText { boxes, .. }
            | Instruction::AssertCount { boxes, .. }
            | Instruction::Nonempty { boxes, .. } => vec![(*boxes, Kind::Boxes)],
            Instruction::AssertRelation { a, b, .. } => vec![(*a, Kind::Boxes), (*b, Kind::Boxes)],
            Instruction::AssertTextMatch { texts, .. } => vec![(*texts, Kind::Texts)],
            Instruction::And { args, .. } | Instruction::Or { args, .. } => {
                args.iter().map(|r| (*r, Kind::Bool)).collect()
            }
        }
    }

    pub fn op_name(&self) -> &'static str {
        match self {
            Instruction::Detect { .. } => "DETECT",
            Instruction::ReadText { .. } => "READ_TEXT",
            Instruction::AssertRelation { .. } => "ASSERT_RELATION",
            Instruction::AssertCount { .. } => "ASSERT_COUNT",
            Instruction::AssertTextMatch { .. } => "ASSERT_TEXT_MATCH",
            Instruction::Nonempty { .. } => "NONEMPTY",
            Instruction::And { .. } => "AND",
            Instruction::Or { .. } => "OR",
            Instruction::Const { .. } => "CONST",
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |args: &[Reg]| args.iter().map(Reg::to_string).collect::<Vec<_>>().join(", ");
        match self {
            Instruction::Detect { query, out } => write!(f, "{out} = DETECT {query:?}"),
            Instruction::ReadText { boxes, out } => write!(f, "{out} = READ_TEXT {boxes}"),
            Instruction::AssertRelation { relation, a, b, out } => {
                write!(f, "{out} = ASSERT_RELATION {relation}({a}, {b})")
            }
            Instruction::AssertCount { boxes, count, exact, out } => {
                let cmp = if *exact { "==" } else { ">=" };
                write!(f, "{out} = ASSERT_COUNT |{boxes}| {cmp} {count}")
            }
            Instruction::AssertTextMatch { texts, literal, out } => {
                write!(f, "{out} = ASSERT_TEXT_MATCH {texts} ~ {literal:?}")
            }
            Instruction::Nonempty { boxes, out } => write!(f, "{out} = NONEMPTY {boxes}"),
            Instruction::And { args, out } => write!(f, "{out} = AND({})", join(args)),
            Instruction::Or { args, out } => write!(f, "{out} = OR({})", join(args)),
            Instruction::Const { value, out } => write!(f, "{out} = CONST {value}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Synthesized,
    ExternalCode,
}

/// A compiled verification program for one triplet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutineProgram {
    pub triplet_id: u32,
    pub instructions: Vec<Instruction>,
    #[serde(default, skip_serializing)]
    pub provenance: Provenance,
}

impl fmt::Display for RoutineProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "routine for triplet {}:", self.triplet_id)?;
        for ins in &self.instructions {
            writeln!(f, "  {ins}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StaticCheckError {
    #[error("program has no instructions")]
    Empty,
    #[error("instruction {index} ({op}) reads {reg}, which is not written before it")]
    UnwrittenRegister { index: usize, op: &'static str, reg: Reg },
    #[error("instruction {index} ({op}) writes {reg}, which is already written")]
    Rewritten { index: usize, op: &'static str, reg: Reg },
    #[error("instruction {index} ({op}) expects {reg} to hold {expected}, found {found}")]
    KindMismatch {
        index: usize,
        op: &'static str,
        reg: Reg,
        expected: Kind,
        found: Kind,
    },
    #[error("instruction {index} ({op}) needs at least 2 arguments")]
    Arity { index: usize, op: &'static str },
    #[error("instruction {index} ({op}) has an empty {field}")]
    EmptyOperand { index: usize, op: &'static str, field: &'static str },
    #[error("instruction {index} (ASSERT_COUNT) has count 0")]
    ZeroCount { index: usize },
    #[error("last instruction yields {0}, not a boolean")]
    NonBooleanTail(Kind),
}

/// Register discipline, operand kinds, arity, and a boolean tail.
pub fn check_program(instructions: &[Instruction]) -> Result<(), StaticCheckError> {
    let mut kinds: BTreeMap<Reg, Kind> = BTreeMap::new();
    for (index, ins) in instructions.iter().enumerate() {
        let op = ins.op_name();
        if let Instruction::And { args, .. } | Instruction::Or { args, .. } = ins {
            if args.len() < 2 {
                return Err(StaticCheckError::Arity { index, op });
            }
        }
        match ins {
            Instruction::Detect { query, .. } if query.trim().is_empty() => {
                return Err(StaticCheckError::EmptyOperand { index, op, field: "query" });
            }
            Instruction::AssertTextMatch { literal, .. } if crate::vm::normalize_text(literal).is_empty() => {
                return Err(StaticCheckError::EmptyOperand { index, op, field: "literal" });
            }
            Instruction::AssertCount { count: 0, .. } => return Err(StaticCheckError::ZeroCount { index }),
            _ => {}
        }
        for (reg, expected) in ins.inputs() {
            match kinds.get(&reg) {
                None => return Err(StaticCheckError::UnwrittenRegister { index, op, reg }),
                Some(&found) if found != expected => {
                    return Err(StaticCheckError::KindMismatch {
                        index,
                        op,
                        reg,
                        expected,
                        found,
                    })
                }
                Some(_) => {}
            }
        }
        let out = ins.out();
        if kinds.insert(out, ins.out_kind()).is_some() {
            return Err(StaticCheckError::Rewritten { index, op, reg: out });
        }
    }
    match instructions.last() {
        None => Err(StaticCheckError::Empty),
        Some(last) if last.out_kind() != Kind::Bool => Err(StaticCheckError::NonBooleanTail(last.out_kind())),
        Some(_) => Ok(()),
    }
}

impl RoutineProgram {
    pub fn new(triplet_id: u32, instructions: Vec<Instruction>, provenance: Provenance) -> Result<Self, StaticCheckError> {
        check_program(&instructions)?;
        Ok(RoutineProgram {
            triplet_id,
            instructions,
            provenance,
        })
    }

    pub fn check(&self) -> Result<(), StaticCheckError> {
        check_program(&self.instructions)
    }

    /// Distinct DETECT phrases in program order.
    pub fn detect_queries(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for ins in &self.instructions {
            if let Instruction::Detect { query, .. } = ins {
                if !out.contains(&query.as_str()) {
                    out.push(query);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("routine serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RoutineIngestError {
    #[error("malformed routine JSON at {path}: {message}")]
    MalformedInput { path: String, message: String },
    #[error("routine for triplet {triplet_id} fails static checks: {source}")]
    StaticCheck {
        triplet_id: u32,
        #[source]
        source: StaticCheckError,
    },
}

/// Parses and statically checks an externally produced routine.
///
/// ```
/// use vismc::routine::{ingest_routine, RoutineIngestError};
///
/// let bad = br#"{"triplet_id":0,"instructions":[{"op":"DETECT","query":"man","out":"r0"}]}"#;
/// assert!(matches!(ingest_routine(bad), Err(RoutineIngestError::StaticCheck { .. })));
/// ```
pub fn ingest_routine(json: &[u8]) -> Result<RoutineProgram, RoutineIngestError> {
    let de = &mut serde_json::Deserializer::from_slice(json);
    let mut program: RoutineProgram =
        serde_path_to_error::deserialize(de).map_err(|e| RoutineIngestError::MalformedInput {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    program.provenance = Provenance::ExternalCode;
    program.check().map_err(|source| RoutineIngestError::StaticCheck {
        triplet_id: program.triplet_id,
        source,
    })?;
    Ok(program)
}

/// Why a triplet has no runnable program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutineFault {
    pub class: ErrorClass,
    pub message: String,
}

/// Stand-in for a routine that could not be built or failed ingestion. It
/// always evaluates to a violated verdict carrying its fault class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegenerateRoutine {
    pub triplet_id: u32,
    pub error: RoutineFault,
}

/// One element of a routines file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoutineEntry {
    Program(RoutineProgram),
    Degenerate(DegenerateRoutine),
}

impl RoutineEntry {
    pub fn triplet_id(&self) -> u32 {
        match self {
            RoutineEntry::Program(p) => p.triplet_id,
            RoutineEntry::Degenerate(d) => d.triplet_id,
        }
    }

    pub fn degenerate(triplet_id: u32, class: ErrorClass, message: impl Into<String>) -> Self {
        RoutineEntry::Degenerate(DegenerateRoutine {
            triplet_id,
            error: RoutineFault {
                class,
                message: message.into(),
            },
        })
    }
}

/// Reads a routines file: a JSON array of routine objects and degenerate
/// entries. An element that is malformed or fails static checks becomes a
/// degenerate entry of class `bad_routine_generation`, provided its
/// `triplet_id` can still be read; otherwise the whole file is rejected.
pub fn ingest_routines(json: &[u8]) -> Result<Vec<RoutineEntry>, RoutineIngestError> {
    let de = &mut serde_json::Deserializer::from_slice(json);
    let items: Vec<serde_json::Value> =
        serde_path_to_error::deserialize(de).map_err(|e| RoutineIngestError::MalformedInput {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        if item.get("error").is_some() {
            let d: DegenerateRoutine =
                serde_path_to_error::deserialize(&item).map_err(|e| RoutineIngestError::MalformedInput {
                    path: format!("[{i}].{}", e.path()),
                    message: e.inner().to_string(),
                })?;
            out.push(RoutineEntry::Degenerate(d));
            continue;
        }
        let bytes = serde_json::to_vec(&item).expect("value serializes");
        match ingest_routine(&bytes) {
            Ok(p) => out.push(RoutineEntry::Program(p)),
            Err(e) => {
                let tid = item.get("triplet_id").and_then(|v| v.as_u64()).and_then(|v| u32::try_from(v).ok());
                match (tid, e) {
                    (Some(tid), e) => {
                        log::warn!("routine {i} (triplet {tid}) rejected: {e}");
                        out.push(RoutineEntry::degenerate(tid, ErrorClass::BadRoutineGeneration, e.to_string()));
                    }
                    (None, RoutineIngestError::MalformedInput { path, message }) => {
                        return Err(RoutineIngestError::MalformedInput {
                            path: format!("[{i}].{path}"),
                            message,
                        })
                    }
                    (None, e) => return Err(e),
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn man_riding_horse() -> Vec<Instruction> {
        vec![
            Instruction::Detect { query: "man riding horse".into(), out: Reg(0) },
            Instruction::Detect { query: "man".into(), out: Reg(1) },
            Instruction::Detect { query: "horse".into(), out: Reg(2) },
            Instruction::Nonempty { boxes: Reg(0), out: Reg(3) },
            Instruction::Nonempty { boxes: Reg(1), out: Reg(4) },
            Instruction::Nonempty { boxes: Reg(2), out: Reg(5) },
            Instruction::And { args: vec![Reg(3), Reg(4), Reg(5)], out: Reg(6) },
        ]
    }

    #[test]
    fn json_round_trip() {
        let p = RoutineProgram::new(0, man_riding_horse(), Provenance::Synthesized).unwrap();
        let json = p.to_json();
        assert!(json.starts_with(r#"{"triplet_id":0,"instructions":[{"op":"DETECT","query":"man riding horse","out":"r0"}"#));
        let back = ingest_routine(json.as_bytes()).unwrap();
        assert_eq!(back.instructions, p.instructions);
        assert_eq!(back.provenance, Provenance::ExternalCode);
    }

    #[test]
    fn box_tail_rejected() {
        let mut ins = man_riding_horse();
        ins.truncate(3);
        assert_eq!(check_program(&ins), Err(StaticCheckError::NonBooleanTail(Kind::Boxes)));
    }

    #[test]
    fn unwritten_register_rejected() {
        let ins = vec![Instruction::Nonempty { boxes: Reg(5), out: Reg(0) }];
        assert!(matches!(check_program(&ins), Err(StaticCheckError::UnwrittenRegister { reg: Reg(5), .. })));
    }

    #[test]
    fn kinds_and_arity_checked() {
        let ins = vec![
            Instruction::Detect { query: "sign".into(), out: Reg(0) },
            Instruction::AssertTextMatch { texts: Reg(0), literal: "x".into(), out: Reg(1) },
        ];
        assert!(matches!(check_program(&ins), Err(StaticCheckError::KindMismatch { .. })));
        let ins = vec![
            Instruction::Const { value: true, out: Reg(0) },
            Instruction::And { args: vec![Reg(0)], out: Reg(1) },
        ];
        assert!(matches!(check_program(&ins), Err(StaticCheckError::Arity { .. })));
        let ins = vec![
            Instruction::Const { value: true, out: Reg(0) },
            Instruction::Const { value: false, out: Reg(0) },
        ];
        assert!(matches!(check_program(&ins), Err(StaticCheckError::Rewritten { .. })));
        assert_eq!(check_program(&[]), Err(StaticCheckError::Empty));
    }

    #[test]
    fn malformed_input_names_path() {
        let json = br#"{"triplet_id":0,"instructions":[{"op":"DETECT","query":"man","out":"x1"}]}"#;
        match ingest_routine(json) {
            Err(RoutineIngestError::MalformedInput { path, .. }) => assert!(path.starts_with("instructions[0]"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
        let json = br#"{"triplet_id":0,"instructions":[{"op":"EXEC","cmd":"rm"}]}"#;
        assert!(matches!(ingest_routine(json), Err(RoutineIngestError::MalformedInput { .. })));
    }

    #[test]
    fn routines_file_degrades_bad_elements() {
        let good = RoutineProgram::new(0, man_riding_horse(), Provenance::Synthesized).unwrap().to_json();
        let json = format!(
            r#"[{good},
               {{"triplet_id":1,"instructions":[{{"op":"DETECT","query":"x","out":"r0"}}]}},
               {{"triplet_id":2,"instructions":[{{"op":"SHELL","cmd":"ls"}}]}},
               {{"triplet_id":3,"error":{{"class":"bad_triplet","message":"object is a preposition"}}}}]"#
        );
        let entries = ingest_routines(json.as_bytes()).unwrap();
        assert!(matches!(entries[0], RoutineEntry::Program(_)));
        for (i, class) in [(1, ErrorClass::BadRoutineGeneration), (2, ErrorClass::BadRoutineGeneration), (3, ErrorClass::BadTriplet)] {
            match &entries[i] {
                RoutineEntry::Degenerate(d) => assert_eq!((d.triplet_id, d.error.class), (i as u32, class)),
                other => panic!("{other:?}"),
            }
        }
        let unnamed = br#"[{"instructions":[]}]"#;
        assert!(matches!(ingest_routines(unnamed), Err(RoutineIngestError::MalformedInput { .. })));
    }

    #[test]
    fn register_names() {
        assert_eq!("r12".parse::<Reg>(), Ok(Reg(12)));
        assert!("r".parse::<Reg>().is_err());
        assert!("R1".parse::<Reg>().is_err());
        assert!("r1a".parse::<Reg>().is_err());
    }
}
