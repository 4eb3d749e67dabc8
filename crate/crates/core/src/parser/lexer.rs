//! Tokens and closed word classes for the query grammar.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    /// Text between quotes, case preserved.
    Quoted,
    Comma,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Source text with surrounding punctuation removed.
    pub raw: String,
    /// Lowercase form used for matching.
    pub low: String,
}

impl Token {
    fn word(raw: &str) -> Self {
        Token {
            kind: TokenKind::Word,
            raw: raw.to_string(),
            low: raw.to_lowercase(),
        }
    }
}

fn closing_quote(open: char) -> Option<char> {
    match open {
        '"' => Some('"'),
        '\'' => Some('\''),
        '\u{201c}' => Some('\u{201d}'),
        '\u{2018}' => Some('\u{2019}'),
        _ => None,
    }
}

/// Splits a query into words, quoted strings and commas. Other punctuation
/// at word edges is dropped; hyphens and apostrophes inside words stay.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == ',' || c == ';' {
            out.push(Token {
                kind: TokenKind::Comma,
                raw: ",".into(),
                low: ",".into(),
            });
            i += 1;
            continue;
        }
        if let Some(close) = closing_quote(c) {
            if let Some(len) = chars[i + 1..].iter().position(|&d| d == close) {
                let inner: String = chars[i + 1..i + 1 + len].iter().collect();
                let inner = inner.trim();
                if !inner.is_empty() {
                    out.push(Token {
                        kind: TokenKind::Quoted,
                        raw: inner.to_string(),
                        low: inner.to_lowercase(),
                    });
                }
                i += len + 2;
                continue;
            }
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() && chars[i] != ',' && chars[i] != ';' {
            i += 1;
        }
        let chunk: String = chars[start..i].iter().collect();
        let word = chunk.trim_matches(|c: char| !c.is_alphanumeric());
        let word = word.strip_suffix("'s").unwrap_or(word);
        if !word.is_empty() {
            out.push(Token::word(word));
        }
        // a period or similar ending the word closes nothing; commas are
        // handled above
    }
    out
}

pub const DETERMINERS: &[&str] = &["a", "an", "the", "some", "its", "his", "her", "their", "this", "these", "those"];
pub const RELATIVES: &[&str] = &["that", "which", "who", "whose"];
pub const CONJUNCTIONS: &[&str] = &["and", "while", "plus"];
pub const COPULAS: &[&str] = &["is", "are", "was", "were", "be", "being", "been", "am"];
pub const POSSESSIVES: &[&str] = &["has", "have", "having"];
pub const NEGATIONS: &[&str] = &["no", "not", "without", "never", "none", "nobody", "nothing", "nowhere", "neither", "nor"];
pub const READING_VERBS: &[&str] = &[
    "reads", "read", "reading", "says", "say", "saying", "labeled", "labelled", "labeling", "displays", "display",
    "displaying", "displayed",
];
pub const PREPOSITIONS: &[&str] = &[
    "on", "in", "at", "near", "under", "above", "below", "behind", "beside", "besides", "by", "inside", "with", "of",
    "over", "beneath", "underneath", "along", "across", "into", "onto", "from", "through", "against", "between",
    "among", "atop", "toward", "towards", "to", "for", "outside", "within", "around", "up", "down", "off", "out",
];
/// Dropped when followed by a preposition, a conjunction, or the end.
pub const PARTICLES: &[&str] = &["around", "together", "up", "down", "out", "off", "away", "there", "here", "alone"];
/// Words that are never prepositions, so are always dropped as particles.
pub const PURE_PARTICLES: &[&str] = &["together", "away", "there", "here", "alone"];

/// Multiword prepositions, longest first, with the predicate they yield.
pub const MULTIWORD_PREPOSITIONS: &[(&[&str], &str)] = &[
    (&["to", "the", "left", "of"], "left of"),
    (&["to", "the", "right", "of"], "right of"),
    (&["on", "the", "left", "of"], "left of"),
    (&["on", "the", "right", "of"], "right of"),
    (&["in", "front", "of"], "in front of"),
    (&["on", "top", "of"], "on top of"),
    (&["to", "left", "of"], "left of"),
    (&["to", "right", "of"], "right of"),
    (&["left", "of"], "left of"),
    (&["right", "of"], "right of"),
    (&["next", "to"], "next to"),
    (&["close", "to"], "close to"),
    (&["inside", "of"], "inside"),
    (&["out", "of"], "out of"),
];

/// Finite verbs recognized without an -ing/-ed ending.
pub const FINITE_VERBS: &[&str] = &[
    "sits", "stands", "rides", "holds", "eats", "feeds", "carries", "wears", "plays", "lies", "looks", "watches",
    "walks", "runs", "flies", "crosses", "drives", "pulls", "throws", "catches", "hits", "kicks", "leans", "hangs",
    "grazes", "sleeps", "rests", "waits", "jumps", "swims", "floats", "covers", "contains", "chases", "sit", "ride",
    "hold", "eat", "feed", "carry", "wear", "lie", "lean", "graze", "sleep", "swim", "contain", "chase", "made", "built", "worn",
];

/// -ing and -ed words that are nouns.
pub const NOUN_EXCEPTIONS: &[&str] = &[
    "building", "ceiling", "painting", "thing", "string", "clothing", "railing", "awning", "wedding", "evening",
    "morning", "spring", "swing", "sling", "sibling", "pudding", "stuffing", "frosting", "icing", "topping",
    "dumpling", "crossing", "something", "nothing", "anything", "everything", "king", "ring", "wing", "sled", "bed",
    "shed", "hundred", "seed", "steed",
];

pub fn is_in(list: &[&str], word: &str) -> bool {
    list.contains(&word)
}

/// Gerund or participle shape, not counting listed nouns.
pub fn is_verb_form(word: &str) -> bool {
    if is_in(NOUN_EXCEPTIONS, word) || !word.chars().all(|c| c.is_ascii_alphabetic()) {
        return false;
    }
    (word.len() >= 5 && word.ends_with("ing")) || (word.len() >= 5 && word.ends_with("ed") && !word.ends_with("eed"))
}

/// Matches a multiword preposition at the start of `words`, returning its
/// length and predicate.
pub fn match_multiword(words: &[&str]) -> Option<(usize, &'static str)> {
    MULTIWORD_PREPOSITIONS
        .iter()
        .find(|(pat, _)| words.len() >= pat.len() && words[..pat.len()] == **pat)
        .map(|(pat, pred)| (pat.len(), *pred))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens() {
        let t = tokenize("A sign that says \"Main St.\", near the shore.");
        let lows: Vec<&str> = t.iter().map(|t| t.low.as_str()).collect();
        assert_eq!(lows, ["a", "sign", "that", "says", "main st.", ",", "near", "the", "shore"]);
        assert_eq!(t[4].kind, TokenKind::Quoted);
        assert_eq!(t[4].raw, "Main St.");
    }

    #[test]
    fn apostrophes_inside_words() {
        let t = tokenize("the man's hat isn't red");
        let lows: Vec<&str> = t.iter().map(|t| t.low.as_str()).collect();
        assert_eq!(lows, ["the", "man", "hat", "isn't", "red"]);
    }

    #[test]
    fn verb_shapes() {
        assert!(is_verb_form("riding"));
        assert!(is_verb_form("parked"));
        assert!(!is_verb_form("building"));
        assert!(!is_verb_form("speed"));
        assert!(!is_verb_form("red"));
    }
}
