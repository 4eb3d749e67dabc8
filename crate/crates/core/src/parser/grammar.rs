//! Clause grammar.
//!
//! ```text
//! query    := clause (("and" | "," | "while") clause)*
//! clause   := np_list segment+
//! segment  := PREP np_list
//!           | COPULA (PREP np_list | VERB ... | np_list)
//!           | POSSESSIVE np_list
//!           | READ literal
//!           | VERB [PARTICLE] (PREP np_list | np_list)
//! np_list  := np (("," | "and") np)*
//! np       := DET* word+
//! ```
//!
//! Relative pronouns are skipped, and the segment that follows one attaches
//! to the noun phrase just before it. A prepositional adjunct attaches to
//! the nearest preceding argument: the clause subject, or the direct object
//! of a transitive verb. Phrases introduced by a preposition never anchor
//! later adjuncts, except that `of` always takes the phrase right before it.

use super::lexer::{
    is_in, is_verb_form, match_multiword, Token, TokenKind, CONJUNCTIONS, COPULAS, DETERMINERS, FINITE_VERBS,
    NEGATIONS, PARTICLES, POSSESSIVES, PREPOSITIONS, PURE_PARTICLES, READING_VERBS, RELATIVES,
};
use crate::model::{canonicalize, NounPhrase};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryAst {
    pub clauses: Vec<Clause>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub subjects: Vec<NounPhrase>,
    pub segments: Vec<Segment>,
}

/// One predicate with the phrases it relates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub anchors: Vec<NounPhrase>,
    pub predicate: String,
    pub objects: Vec<NounPhrase>,
}

impl QueryAst {
    /// Anchor × object pairs of every segment, in clause and segment order.
    pub fn triples(&self) -> Vec<(NounPhrase, String, NounPhrase)> {
        let mut out = Vec::new();
        for c in &self.clauses {
            for s in &c.segments {
                for a in &s.anchors {
                    for o in &s.objects {
                        out.push((a.clone(), s.predicate.clone(), o.clone()));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("empty query")]
    Empty,
    #[error("negation ({word:?}) is not supported")]
    Negation { word: String },
    #[error("expected a noun phrase at token {at}{}", near(.found))]
    ExpectedNounPhrase { at: usize, found: Option<String> },
    #[error("{subject:?} has no predicate")]
    NoPredicate { subject: String },
    #[error("{verb:?} needs an object")]
    MissingObject { verb: String },
    #[error("reading verb {verb:?} has no text to match")]
    EmptyLiteral { verb: String },
    #[error("unexpected {found:?} at token {at}")]
    Unexpected { at: usize, found: String },
}

fn near(found: &Option<String>) -> String {
    match found {
        Some(f) => format!(" (found {f:?})"),
        None => " (found end of query)".into(),
    }
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
}

fn is_negation(word: &str) -> bool {
    is_in(NEGATIONS, word) || word.ends_with("n't")
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.pos)
    }

    fn peek_low(&self) -> Option<&'a str> {
        self.peek().map(|t| t.low.as_str())
    }

    fn word_at(&self, i: usize) -> Option<&'a str> {
        self.toks
            .get(i)
            .filter(|t| t.kind == TokenKind::Word)
            .map(|t| t.low.as_str())
    }

    fn words_from(&self, i: usize) -> Vec<&'a str> {
        self.toks[i.min(self.toks.len())..]
            .iter()
            .take_while(|t| t.kind == TokenKind::Word)
            .map(|t| t.low.as_str())
            .collect()
    }

    /// Preposition (single or multiword) at `i`: length and predicate.
    fn prep_at(&self, i: usize) -> Option<(usize, String)> {
        if let Some(m) = match_multiword(&self.words_from(i)) {
            return Some((m.0, m.1.to_string()));
        }
        let w = self.word_at(i)?;
        is_in(PREPOSITIONS, w).then(|| (1, w.to_string()))
    }

    fn is_conj_at(&self, i: usize) -> bool {
        match self.toks.get(i) {
            Some(t) if t.kind == TokenKind::Comma => true,
            Some(t) if t.kind == TokenKind::Word => is_in(CONJUNCTIONS, &t.low),
            _ => false,
        }
    }

    fn is_verb_at(&self, i: usize) -> bool {
        self.word_at(i).is_some_and(|w| {
            !is_in(READING_VERBS, w)
                && !is_in(COPULAS, w)
                && !is_in(POSSESSIVES, w)
                && (is_in(FINITE_VERBS, w) || is_verb_form(w))
        })
    }

    /// Token `i` opens a predicate segment.
    fn starts_segment(&self, i: usize) -> bool {
        let Some(w) = self.word_at(i) else { return false };
        self.prep_at(i).is_some()
            || is_in(COPULAS, w)
            || is_in(POSSESSIVES, w)
            || is_in(READING_VERBS, w)
            || is_in(RELATIVES, w)
            || self.is_verb_at(i)
    }

    /// After a coordinated phrase: does token `i` turn that phrase into the
    /// subject of a new clause?
    fn starts_clause_predicate(&self, i: usize) -> bool {
        self.starts_segment(i) && self.word_at(i) != Some("of")
    }

    fn skip_conjunctions(&mut self) -> bool {
        let start = self.pos;
        while self.is_conj_at(self.pos) {
            self.pos += 1;
        }
        self.pos > start
    }

    fn parse_np(&mut self) -> Option<NounPhrase> {
        let mut words: Vec<&str> = Vec::new();
        while let Some(t) = self.peek() {
            if t.kind != TokenKind::Word {
                break;
            }
            let w = t.low.as_str();
            if is_in(DETERMINERS, w) {
                if !words.is_empty() {
                    break;
                }
                self.pos += 1;
                continue;
            }
            let function_word = is_in(CONJUNCTIONS, w)
                || is_in(RELATIVES, w)
                || is_in(COPULAS, w)
                || is_in(POSSESSIVES, w)
                || is_in(READING_VERBS, w)
                || is_in(PURE_PARTICLES, w)
                || self.prep_at(self.pos).is_some();
            let verb_here = !words.is_empty() && self.is_verb_at(self.pos);
            if function_word || verb_here {
                break;
            }
            words.push(w);
            self.pos += 1;
        }
        if words.is_empty() {
            return None;
        }
        Some(canonicalize(&words.join(" ")))
    }

    /// A coordinated list. With `split_clauses`, a coordinated phrase that is
    /// followed by its own predicate is left for the next clause instead.
    fn expect_np_list(&mut self, split_clauses: bool) -> Result<Vec<NounPhrase>, ParseError> {
        let at = self.pos;
        let first = self.parse_np().ok_or_else(|| ParseError::ExpectedNounPhrase {
            at,
            found: self.peek().map(|t| t.raw.clone()),
        })?;
        let mut list = vec![first];
        loop {
            let save = self.pos;
            if !self.skip_conjunctions() || self.starts_segment(self.pos) {
                self.pos = save;
                break;
            }
            match self.parse_np() {
                Some(np) if !(split_clauses && self.starts_clause_predicate(self.pos)) => list.push(np),
                _ => {
                    self.pos = save;
                    break;
                }
            }
        }
        Ok(list)
    }

    /// Drops particles that sit between a verb and a preposition or the end.
    fn skip_particles(&mut self) {
        while let Some(w) = self.word_at(self.pos) {
            if !is_in(PARTICLES, w) {
                break;
            }
            let next = self.pos + 1;
            let droppable = is_in(PURE_PARTICLES, w)
                || next >= self.toks.len()
                || self.is_conj_at(next)
                || self.prep_at(next).is_some();
            if !droppable {
                break;
            }
            self.pos += 1;
        }
    }

    fn parse_literal(&mut self, verb: &str) -> Result<String, ParseError> {
        if let Some(t) = self.peek().filter(|t| t.kind == TokenKind::Quoted) {
            self.pos += 1;
            return Ok(t.raw.clone());
        }
        let mut words = Vec::new();
        while let Some(t) = self.peek() {
            if t.kind != TokenKind::Word
                || is_in(CONJUNCTIONS, &t.low)
                || is_in(RELATIVES, &t.low)
                || self.prep_at(self.pos).is_some()
            {
                break;
            }
            words.push(t.raw.as_str());
            self.pos += 1;
        }
        if words.is_empty() {
            return Err(ParseError::EmptyLiteral { verb: verb.to_string() });
        }
        Ok(words.join(" "))
    }

    fn parse_clause(&mut self, subjects: Vec<NounPhrase>) -> Result<(Clause, Option<Vec<NounPhrase>>), ParseError> {
        let mut segments: Vec<Segment> = Vec::new();
        let mut arg_anchor = subjects.clone();
        let mut last_np: Vec<NounPhrase> = subjects.last().cloned().into_iter().collect();
        let mut relative = false;
        let mut next_clause = None;

        while self.pos < self.toks.len() {
            let at = self.pos;
            let tok = &self.toks[at];
            if tok.kind == TokenKind::Word && is_in(RELATIVES, &tok.low) {
                self.pos += 1;
                relative = true;
                continue;
            }
            if tok.low == "while" {
                self.pos += 1;
                next_clause = Some(self.expect_np_list(false)?);
                break;
            }
            if self.is_conj_at(at) {
                self.skip_conjunctions();
                if self.starts_segment(self.pos) {
                    continue;
                }
                let nps = self.expect_np_list(false)?;
                if self.starts_clause_predicate(self.pos) {
                    next_clause = Some(nps);
                    break;
                }
                return Err(ParseError::Unexpected {
                    at: self.pos.min(self.toks.len().saturating_sub(1)),
                    found: self.peek().map_or_else(|| "end of query".into(), |t| t.raw.clone()),
                });
            }

            // the phrase a verb, copula or reading segment is about
            let topic = if relative { last_np.clone() } else { subjects.clone() };
            relative = false;
            let w = tok.low.as_str();

            if let Some((len, prep)) = self.prep_at(at) {
                self.pos += len;
                let objects = self.expect_np_list(true)?;
                let anchors = if prep == "of" { last_np.clone() } else { arg_anchor.clone() };
                last_np = objects.last().cloned().into_iter().collect();
                segments.push(Segment {
                    anchors,
                    predicate: prep,
                    objects,
                });
                continue;
            }

            let mut verb: Option<String> = None;
            if is_in(COPULAS, w) {
                while self.word_at(self.pos).is_some_and(|w| is_in(COPULAS, w)) {
                    self.pos += 1;
                }
                if let Some((len, prep)) = self.prep_at(self.pos) {
                    self.pos += len;
                    let objects = self.expect_np_list(true)?;
                    last_np = objects.last().cloned().into_iter().collect();
                    segments.push(Segment {
                        anchors: topic,
                        predicate: prep,
                        objects,
                    });
                    continue;
                }
                let next = self.word_at(self.pos).unwrap_or("");
                if self.is_verb_at(self.pos) {
                    verb = Some(next.to_string());
                    self.pos += 1;
                } else if !is_in(READING_VERBS, next) {
                    let objects = self.expect_np_list(true)?;
                    last_np = objects.last().cloned().into_iter().collect();
                    segments.push(Segment {
                        anchors: topic,
                        predicate: "is".into(),
                        objects,
                    });
                    continue;
                }
            }

            let w = self.peek_low().unwrap_or("");
            if verb.is_none() && is_in(READING_VERBS, w) {
                self.pos += 1;
                let literal = self.parse_literal(w)?;
                segments.push(Segment {
                    anchors: topic,
                    predicate: "reads".into(),
                    objects: vec![NounPhrase::literal(literal)],
                });
                continue;
            }

            if verb.is_none() && is_in(POSSESSIVES, w) {
                self.pos += 1;
                let objects = self.expect_np_list(true)?;
                arg_anchor = objects.clone();
                last_np = objects.last().cloned().into_iter().collect();
                segments.push(Segment {
                    anchors: topic,
                    predicate: "with".into(),
                    objects,
                });
                continue;
            }

            if verb.is_none() && self.is_verb_at(self.pos) {
                verb = Some(w.to_string());
                self.pos += 1;
            }

            let Some(verb) = verb else {
                return Err(ParseError::Unexpected {
                    at,
                    found: tok.raw.clone(),
                });
            };
            self.skip_particles();
            if let Some((len, prep)) = self.prep_at(self.pos) {
                self.pos += len;
                let objects = self.expect_np_list(true)?;
                last_np = objects.last().cloned().into_iter().collect();
                segments.push(Segment {
                    anchors: topic,
                    predicate: format!("{verb} {prep}"),
                    objects,
                });
                continue;
            }
            let Some(first) = self.parse_np() else {
                return Err(ParseError::MissingObject { verb });
            };
            // re-run as a list so coordination is handled in one place
            let mut objects = vec![first];
            loop {
                let save = self.pos;
                if !self.skip_conjunctions() || self.starts_segment(self.pos) {
                    self.pos = save;
                    break;
                }
                match self.parse_np() {
                    Some(np) if !self.starts_clause_predicate(self.pos) => objects.push(np),
                    _ => {
                        self.pos = save;
                        break;
                    }
                }
            }
            arg_anchor = objects.clone();
            last_np = objects.last().cloned().into_iter().collect();
            segments.push(Segment {
                anchors: topic,
                predicate: verb,
                objects,
            });
        }

        if segments.is_empty() {
            let subject = subjects.iter().map(|s| s.canonical_text()).collect::<Vec<_>>().join(", ");
            return Err(ParseError::NoPredicate { subject });
        }
        Ok((Clause { subjects, segments }, next_clause))
    }
}

/// Parses a token stream into clauses.
pub fn parse_tokens(toks: &[Token]) -> Result<QueryAst, ParseError> {
    if toks.is_empty() {
        return Err(ParseError::Empty);
    }
    if let Some(t) = toks.iter().find(|t| t.kind == TokenKind::Word && is_negation(&t.low)) {
        return Err(ParseError::Negation { word: t.raw.clone() });
    }
    let mut p = Parser { toks, pos: 0 };
    // existential "there is/are ..." carries no predicate of its own
    if p.word_at(0) == Some("there") && p.word_at(1).is_some_and(|w| is_in(COPULAS, w)) {
        p.pos = 2;
    }
    let mut clauses = Vec::new();
    let mut subjects = p.expect_np_list(false)?;
    loop {
        let (clause, next) = p.parse_clause(subjects)?;
        clauses.push(clause);
        match next {
            Some(s) => subjects = s,
            None => break,
        }
    }
    Ok(QueryAst { clauses })
}
