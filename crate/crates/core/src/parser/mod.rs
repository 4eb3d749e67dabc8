//! Query parsing: text to a [`Specification`].
//!
//! [`parse_query`] runs the deterministic clause grammar. Specifications
//! produced elsewhere enter through [`ingest_triplets`], which applies the
//! same validation.

mod grammar;
mod lexer;

pub use grammar::{parse_tokens, Clause, ParseError, QueryAst, Segment};
pub use lexer::{tokenize, Token, TokenKind};

use crate::model::{
    validate_specification, NounPhrase, QueryText, SpecSource, Specification, Triplet, ValidationError,
};

/// Closed-class word (preposition, article, conjunction, copula...) that
/// can never head a noun phrase.
pub fn is_function_word(word: &str) -> bool {
    use lexer::*;
    [PREPOSITIONS, DETERMINERS, CONJUNCTIONS, COPULAS, POSSESSIVES, RELATIVES, NEGATIONS]
        .iter()
        .any(|list| is_in(list, word))
        || MULTIWORD_PREPOSITIONS.iter().any(|(_, pred)| *pred == word)
}

/// Predicate of the whole-query fallback triplet.
pub const COMPOSITE_PREDICATE: &str = "depicts";

/// Parses `q` into clauses without building triplets.
pub fn parse_ast(q: &QueryText) -> Result<QueryAst, ParseError> {
    parse_tokens(&tokenize(q.as_str()))
}

/// Parses a query with the clause grammar.
///
/// ```
/// use vismc::model::QueryText;
/// use vismc::parser::parse_query;
///
/// let spec = parse_query(&QueryText::new("man riding horse").unwrap()).unwrap();
/// assert_eq!(spec.triplets[0].to_string(), "(man, riding, horse)");
/// ```
pub fn parse_query(q: &QueryText) -> Result<Specification, ParseError> {
    let ast = parse_ast(q)?;
    let triplets = ast
        .triples()
        .into_iter()
        .enumerate()
        .map(|(i, (s, p, o))| Triplet::new(i as u32, s, p, o))
        .collect();
    Ok(Specification {
        query: q.clone(),
        triplets,
        source: SpecSource::Grammar,
    })
}

/// Single triplet standing for the whole query: the lowercased query as the
/// subject, `depicts`, and the original text as a literal object.
pub fn fallback_composite(q: &QueryText) -> Specification {
    let words: Vec<String> = q
        .as_str()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    let head = if words.is_empty() {
        q.as_str().trim().to_lowercase()
    } else {
        words.join(" ")
    };
    Specification {
        query: q.clone(),
        triplets: vec![Triplet::new(
            0,
            NounPhrase::head(head),
            COMPOSITE_PREDICATE,
            NounPhrase::literal(q.as_str().trim()),
        )],
        source: SpecSource::Grammar,
    }
}

/// [`parse_query`], falling back to [`fallback_composite`] when asked to.
pub fn parse_query_with_fallback(q: &QueryText, fallback: bool) -> Result<Specification, ParseError> {
    match parse_query(q) {
        Err(e) if fallback => {
            log::info!("grammar rejected {:?} ({e}); using a composite triplet", q.as_str());
            Ok(fallback_composite(q))
        }
        other => other,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed specification JSON at {path}: {message}")]
    MalformedInput { path: String, message: String },
    #[error("invalid specification: {}", join_errors(.0))]
    InvalidSpecification(Vec<ValidationError>),
}

fn join_errors(errs: &[ValidationError]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Reads a specification in canonical JSON form and validates it.
///
/// ```
/// use vismc::parser::ingest_triplets;
///
/// let json = br#"{"query":"bench by the shore","triplets":[{"id":0,"s":{"head":"bench"},"p":"located by","o":{"head":"shore"}}]}"#;
/// assert_eq!(ingest_triplets(json).unwrap().triplets[0].predicate, "located by");
/// ```
pub fn ingest_triplets(json: &[u8]) -> Result<Specification, IngestError> {
    let de = &mut serde_json::Deserializer::from_slice(json);
    let mut spec: Specification = serde_path_to_error::deserialize(de).map_err(|e| IngestError::MalformedInput {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    spec.source = SpecSource::ExternalJson;
    let errors = validate_specification(&spec);
    if !errors.is_empty() {
        return Err(IngestError::InvalidSpecification(errors));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(q: &str) -> Vec<String> {
        parse_query(&QueryText::new(q).unwrap())
            .unwrap_or_else(|e| panic!("{q:?}: {e}"))
            .triplets
            .iter()
            .map(|t| t.to_string())
            .collect()
    }

    fn spec(q: &str) -> Specification {
        parse_query(&QueryText::new(q).unwrap()).unwrap()
    }

    #[test]
    fn transitive_verb() {
        assert_eq!(parse("man riding horse"), ["(man, riding, horse)"]);
        assert_eq!(parse("A person feeding a giraffe."), ["(person, feeding, giraffe)"]);
    }

    #[test]
    fn verb_with_particle_and_adjunct() {
        let s = spec("two horses standing around in a field near a brick building");
        let horses = NounPhrase::head("horse").with_count(2);
        assert_eq!(
            s.triplets,
            vec![
                Triplet::new(0, horses.clone(), "standing in", NounPhrase::head("field")),
                Triplet::new(1, horses, "near", NounPhrase::head("building").with_attributes(["brick"])),
            ]
        );
        assert_eq!(s.source, SpecSource::Grammar);
    }

    #[test]
    fn reading_verbs_take_literals() {
        let s = spec("a sign that reads Norfolk");
        assert_eq!(s.triplets, vec![Triplet::new(0, NounPhrase::head("sign"), "reads", NounPhrase::literal("Norfolk"))]);
        let s = spec("a box labeled \"Fragile: this side up\"");
        assert_eq!(s.triplets[0].object.literal.as_deref(), Some("Fragile: this side up"));
        assert_eq!(parse("a man holding a sign that says STOP"), ["(man, holding, sign)", "(sign, reads, \"STOP\")"]);
    }

    #[test]
    fn copulas_and_possessives() {
        assert_eq!(parse("the bathtub is white"), ["(bathtub, is, white)"]);
        assert_eq!(parse("a cat is on a table"), ["(cat, on, table)"]);
        assert_eq!(parse("a dog is lying under a table"), ["(dog, lying under, table)"]);
        assert_eq!(parse("a lake with two boats"), ["(lake, with, 2 boat)"]);
        assert_eq!(parse("a kitchen that has a red kettle"), ["(kitchen, with, red kettle)"]);
        assert_eq!(parse("a road made of dirt"), ["(road, made of, dirt)"]);
    }

    #[test]
    fn multiword_prepositions() {
        assert_eq!(parse("a stop sign to the left of a car"), ["(stop sign, left of, car)"]);
        assert_eq!(parse("a dog in front of a door"), ["(dog, in front of, door)"]);
        assert_eq!(parse("a cup next to a plate"), ["(cup, next to, plate)"]);
    }

    #[test]
    fn coordination() {
        assert_eq!(
            parse("a man eating a sandwich roll, orange juice and strawberry yogurt"),
            ["(man, eating, sandwich roll)", "(man, eating, orange juice)", "(man, eating, strawberry yogurt)"]
        );
        assert_eq!(parse("a cat and a dog on a sofa"), ["(cat, on, sofa)", "(dog, on, sofa)"]);
        assert_eq!(
            parse("a laptop on a desk and a lamp near a window"),
            ["(laptop, on, desk)", "(lamp, near, window)"]
        );
        assert_eq!(
            parse("a man riding a horse and holding a whip"),
            ["(man, riding, horse)", "(man, holding, whip)"]
        );
        assert_eq!(
            parse("a boy flying a kite while a dog watches him"),
            ["(boy, flying, kite)", "(dog, watches, him)"]
        );
    }

    #[test]
    fn adjunct_attaches_to_direct_object() {
        assert_eq!(
            parse("a woman holding an umbrella near a car"),
            ["(woman, holding, umbrella)", "(umbrella, near, car)"]
        );
        assert_eq!(parse("a picture of a dog on a wall"), ["(picture, of, dog)", "(picture, on, wall)"]);
    }

    #[test]
    fn rejected_queries() {
        for q in ["a dog", "a street with no cars", "the cat isn't on the mat", "near a tree", "a sign that reads"] {
            assert!(parse_query(&QueryText::new(q).unwrap()).is_err(), "{q}");
        }
        assert!(matches!(
            parse_query(&QueryText::new("a street with no cars").unwrap()),
            Err(ParseError::Negation { .. })
        ));
    }

    #[test]
    fn fallback_builds_one_composite() {
        let q = QueryText::new("A street with no cars").unwrap();
        let s = parse_query_with_fallback(&q, true).unwrap();
        assert_eq!(s.triplets.len(), 1);
        assert_eq!(s.triplets[0].predicate, COMPOSITE_PREDICATE);
        assert_eq!(s.triplets[0].subject.head, "a street with no cars");
        assert_eq!(s.triplets[0].object.literal.as_deref(), Some("A street with no cars"));
        assert!(validate_specification(&s).is_empty());
        assert!(parse_query_with_fallback(&q, false).is_err());
    }

    #[test]
    fn ingest_errors() {
        let empty = br#"{"query":"q","triplets":[]}"#;
        assert!(matches!(ingest_triplets(empty), Err(IngestError::InvalidSpecification(_))));
        let no_pred = br#"{"query":"q","triplets":[{"id":0,"s":{"head":"a"},"p":"","o":{"head":"b"}}]}"#;
        match ingest_triplets(no_pred) {
            Err(IngestError::InvalidSpecification(errs)) => {
                assert_eq!(errs, vec![ValidationError::EmptyPredicate { id: 0 }])
            }
            other => panic!("{other:?}"),
        }
        let bad = br#"{"query":"q","triplets":[{"id":"zero"}]}"#;
        match ingest_triplets(bad) {
            Err(IngestError::MalformedInput { path, .. }) => assert_eq!(path, "triplets[0].id"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn serialized_specs_ingest_unchanged() {
        for q in ["man riding horse", "two horses standing around in a field near a brick building", "a sign that reads Norfolk"] {
            let s = spec(q);
            let back = ingest_triplets(serde_json::to_string(&s).unwrap().as_bytes()).unwrap();
            assert!(back.same_content(&s));
            assert_eq!(back.source, SpecSource::ExternalJson);
        }
    }
}
