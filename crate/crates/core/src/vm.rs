//! Interpreter for routine programs.
//!
//! [`execute`] never returns an error: backend failures, missing
//! capabilities and malformed programs all fold into an
//! [`Outcome::Indeterminate`] verdict with the matching [`ErrorClass`].

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, PerceptionBackend};
use crate::geometry::eval_relation;
use crate::model::{BBox, ErrorClass, Evidence, Verdict};
use crate::routine::{Instruction, Reg, RoutineEntry, RoutineProgram};

/// Thresholds for detection and relation geometry, in normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VmConfig {
    /// Detections scoring below this are dropped.
    pub detect_threshold: f64,
    /// `near` holds when centers are within this fraction of the diagonal.
    pub near_frac: f64,
    /// Minimum horizontal overlap for `on`, as a fraction of the narrower box.
    pub min_overlap: f64,
    /// `inside` holds when this fraction of the inner box is covered.
    pub inside_frac: f64,
    /// Slack around the supporting box's top band for `on`.
    pub contact_tol: f64,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            detect_threshold: 0.3,
            near_frac: 0.25,
            min_overlap: 0.25,
            inside_frac: 0.9,
            contact_tol: 0.05,
        }
    }
}

impl VmConfig {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("detect_threshold", self.detect_threshold),
            ("near_frac", self.near_frac),
            ("min_overlap", self.min_overlap),
            ("inside_frac", self.inside_frac),
            ("contact_tol", self.contact_tol),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be within [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// Lowercase, punctuation removed, whitespace collapsed.
pub fn normalize_text(s: &str) -> String {
    let kept: String = s
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Index of the first read string that contains the normalized literal.
pub fn find_text_match(read: &[String], literal: &str) -> Option<usize> {
    let needle = normalize_text(literal);
    if needle.is_empty() {
        return None;
    }
    read.iter().position(|r| normalize_text(r).contains(&needle))
}

/// Substring match after normalizing both sides.
///
/// ```
/// use vismc::vm::match_text;
/// assert!(match_text(&["NORFOLK 12".to_string()], "Norfolk"));
/// assert!(!match_text(&[], "Norfolk"));
/// ```
pub fn match_text(read: &[String], literal: &str) -> bool {
    find_text_match(read, literal).is_some()
}

/// `ASSERT_COUNT` semantics, shared by the interpreter and evidence replay.
pub fn count_holds(n_boxes: usize, required: u32, exact: bool) -> bool {
    if exact {
        n_boxes == required as usize
    } else {
        n_boxes >= required as usize
    }
}

/// Re-derives one evidence item from its own contents.
pub fn replay_evidence(e: &Evidence, cfg: &VmConfig) -> bool {
    match e {
        Evidence::Nonempty { boxes } => !boxes.is_empty(),
        Evidence::Relation { relation, subject, object } => {
            eval_relation(*relation, std::slice::from_ref(subject), std::slice::from_ref(object), cfg).holds
        }
        Evidence::Count { boxes, required, exact } => count_holds(boxes.len(), *required, *exact),
        Evidence::Text { literal, read } => match_text(std::slice::from_ref(read), literal),
    }
}

#[derive(Debug, Clone)]
enum Value {
    Boxes(Vec<BBox>),
    Texts(Vec<String>),
    Bool(bool),
}

enum Fault {
    Backend(BackendError),
    Execution(String),
}

struct Machine<'a> {
    image_id: &'a str,
    backend: &'a dyn PerceptionBackend,
    cfg: &'a VmConfig,
    regs: std::collections::HashMap<Reg, Value>,
    evidence: Vec<Evidence>,
}

impl Machine<'_> {
    fn boxes(&self, r: Reg) -> &[BBox] {
        match self.regs.get(&r) {
            Some(Value::Boxes(b)) => b,
            _ => unreachable!("static checks guarantee {r} holds boxes"),
        }
    }

    fn texts(&self, r: Reg) -> &[String] {
        match self.regs.get(&r) {
            Some(Value::Texts(t)) => t,
            _ => unreachable!("static checks guarantee {r} holds texts"),
        }
    }

    fn flag(&self, r: Reg) -> bool {
        match self.regs.get(&r) {
            Some(Value::Bool(b)) => *b,
            _ => unreachable!("static checks guarantee {r} holds a bool"),
        }
    }

    fn prefetch(&mut self, program: &RoutineProgram) -> Result<std::collections::HashMap<String, Vec<BBox>>, Fault> {
        let queries = program.detect_queries();
        let results = self
            .backend
            .detect_many(self.image_id, &queries, self.cfg.detect_threshold)
            .map_err(Fault::Backend)?;
        if results.len() != queries.len() {
            return Err(Fault::Backend(BackendError::Protocol(format!(
                "asked for {} queries, got {} result lists",
                queries.len(),
                results.len()
            ))));
        }
        let mut out = std::collections::HashMap::new();
        for (q, boxes) in queries.into_iter().zip(results) {
            for b in &boxes {
                b.check().map_err(|e| Fault::Backend(BackendError::InvalidBox(e.to_string())))?;
            }
            let kept = boxes.into_iter().filter(|b| b.score >= self.cfg.detect_threshold).collect();
            out.insert(q.to_string(), kept);
        }
        Ok(out)
    }

    fn step(&mut self, ins: &Instruction, detections: &std::collections::HashMap<String, Vec<BBox>>) -> Result<(), Fault> {
        let value = match ins {
            Instruction::Detect { query, .. } => Value::Boxes(detections[query.as_str()].clone()),
            Instruction::ReadText { boxes, .. } => {
                if !self.backend.has_ocr() {
                    return Err(Fault::Execution("READ_TEXT on a backend without OCR".into()));
                }
                let mut texts = Vec::new();
                for region in self.boxes(*boxes) {
                    texts.extend(self.backend.read_text(self.image_id, region).map_err(Fault::Backend)?);
                }
                Value::Texts(texts)
            }
            Instruction::AssertRelation { relation, a, b, .. } => {
                let r = eval_relation(*relation, self.boxes(*a), self.boxes(*b), self.cfg);
                if let Some((subject, object)) = r.witness {
                    self.evidence.push(Evidence::Relation {
                        relation: *relation,
                        subject,
                        object,
                    });
                }
                Value::Bool(r.holds)
            }
            Instruction::AssertCount { boxes, count, exact, .. } => {
                let found = self.boxes(*boxes);
                let holds = count_holds(found.len(), *count, *exact);
                if holds {
                    self.evidence.push(Evidence::Count {
                        boxes: found.to_vec(),
                        required: *count,
                        exact: *exact,
                    });
                }
                Value::Bool(holds)
            }
            Instruction::AssertTextMatch { texts, literal, .. } => {
                let read = self.texts(*texts);
                let hit = find_text_match(read, literal);
                if let Some(i) = hit {
                    self.evidence.push(Evidence::Text {
                        literal: literal.clone(),
                        read: read[i].clone(),
                    });
                }
                Value::Bool(hit.is_some())
            }
            Instruction::Nonempty { boxes, .. } => {
                let found = self.boxes(*boxes).to_vec();
                let holds = !found.is_empty();
                if holds {
                    self.evidence.push(Evidence::Nonempty { boxes: found });
                }
                Value::Bool(holds)
            }
            Instruction::And { args, .. } => Value::Bool(args.iter().all(|r| self.flag(*r))),
            Instruction::Or { args, .. } => Value::Bool(args.iter().any(|r| self.flag(*r))),
            Instruction::Const { value, .. } => Value::Bool(*value),
        };
        self.regs.insert(ins.out(), value);
        Ok(())
    }
}

/// Runs `program` against one image.
pub fn execute(program: &RoutineProgram, image_id: &str, backend: &dyn PerceptionBackend, cfg: &VmConfig) -> Verdict {
    let tid = program.triplet_id;
    if let Err(e) = program.check() {
        return Verdict::indeterminate(image_id, tid, ErrorClass::BadRoutineGeneration, e.to_string());
    }
    let mut m = Machine {
        image_id,
        backend,
        cfg,
        regs: Default::default(),
        evidence: Vec::new(),
    };
    let result = m.prefetch(program).and_then(|detections| {
        for ins in &program.instructions {
            m.step(ins, &detections)?;
        }
        Ok(())
    });
    match result {
        Err(Fault::Backend(e)) => Verdict::indeterminate(image_id, tid, ErrorClass::BackendFailure, e.to_string()),
        Err(Fault::Execution(msg)) => Verdict::indeterminate(image_id, tid, ErrorClass::BadRoutineExecution, msg),
        Ok(()) => {
            let last = program.instructions.last().expect("checked non-empty").out();
            if m.flag(last) {
                Verdict::satisfied(image_id, tid, m.evidence)
            } else {
                Verdict::violated(image_id, tid, m.evidence)
            }
        }
    }
}

/// Runs one routine entry. Degenerate entries produce their fixed
/// violated verdict without touching the backend.
pub fn execute_entry(entry: &RoutineEntry, image_id: &str, backend: &dyn PerceptionBackend, cfg: &VmConfig) -> Verdict {
    match entry {
        RoutineEntry::Program(p) => execute(p, image_id, backend, cfg),
        RoutineEntry::Degenerate(d) => Verdict::degenerate(image_id, d.triplet_id, d.error.class, d.error.message.clone()),
    }
}
