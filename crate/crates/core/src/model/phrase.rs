//! Noun phrases and their canonical form.
//!
//! Every module compares subjects and objects through [`NounPhrase`], so the
//! canonicalization rules live here: lowercase, no articles, numerals lifted
//! into `count`, premodifiers kept as attributes, and a singular head.

use serde::{Deserialize, Serialize};

/// One argument of a triplet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NounPhrase {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub head: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
    /// Target text for reading predicates. Case is preserved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub literal: Option<String>,
}

impl NounPhrase {
    pub fn head(head: impl Into<String>) -> Self {
        NounPhrase {
            head: head.into(),
            ..Default::default()
        }
    }

    pub fn literal(text: impl Into<String>) -> Self {
        NounPhrase {
            literal: Some(text.into()),
            ..Default::default()
        }
    }

    pub fn with_count(mut self, count: u32) -> Self {
        self.count = Some(count);
        self
    }

    pub fn with_attributes<I, S>(mut self, attrs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.attributes = attrs.into_iter().map(Into::into).collect();
        self
    }

    /// True when the phrase names something a detector can look for.
    pub fn is_object(&self) -> bool {
        !self.head.is_empty()
    }

    /// Detector query for this phrase: attributes followed by the head.
    /// The count is not part of the query.
    pub fn detect_phrase(&self) -> String {
        let mut words: Vec<&str> = self.attributes.iter().map(String::as_str).collect();
        if !self.head.is_empty() {
            words.push(&self.head);
        }
        words.join(" ")
    }

    /// Text that [`canonicalize`] maps back to this phrase (ignoring literals).
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        if let Some(n) = self.count {
            out.push_str(&n.to_string());
            out.push(' ');
        }
        out.push_str(&self.detect_phrase());
        out
    }
}

impl std::fmt::Display for NounPhrase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.literal, self.head.is_empty()) {
            (Some(lit), true) => write!(f, "\"{lit}\""),
            (Some(lit), false) => write!(f, "{} \"{lit}\"", self.canonical_text()),
            (None, _) => f.write_str(&self.canonical_text()),
        }
    }
}

const ARTICLES: &[&str] = &["a", "an", "the"];

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("people", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("geese", "goose"),
    ("mice", "mouse"),
    ("buses", "bus"),
];

const INVARIANT_NOUNS: &[&str] = &["sheep", "fish", "deer", "series", "species"];

/// Parses a numeral word ("two", "12") into a count.
pub fn numeral(word: &str) -> Option<u32> {
    const WORDS: &[&str] = &[
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve",
    ];
    if let Some(i) = WORDS.iter().position(|w| *w == word) {
        return Some(i as u32 + 1);
    }
    if !word.is_empty() && word.len() <= 6 && word.bytes().all(|b| b.is_ascii_digit()) {
        return word.parse().ok();
    }
    None
}

/// Reduces a lowercase plural noun to its singular form.
///
/// Suffix rules (`ies`, `sses`/`xes`/`ches`/`shes`, `s`) run after the
/// irregular and invariant lists. Words ending in `ss`, `us` or `is` are
/// left alone. The result is always a fixed point.
pub fn singularize(word: &str) -> String {
    if let Some((_, singular)) = IRREGULAR_PLURALS.iter().find(|(p, _)| *p == word) {
        return (*singular).to_string();
    }
    if INVARIANT_NOUNS.contains(&word) {
        return word.to_string();
    }
    let n = word.len();
    if n > 4 && word.ends_with("ies") {
        return format!("{}y", &word[..n - 3]);
    }
    for suffix in ["sses", "xes", "ches", "shes"] {
        if n > suffix.len() + 1 && word.ends_with(suffix) {
            return word[..n - 2].to_string();
        }
    }
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    if n > 3 && word.ends_with('s') {
        return word[..n - 1].to_string();
    }
    word.to_string()
}

fn trim_punct(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric() && c != '-' && c != '\'')
}

/// Canonical decomposition of raw noun text.
///
/// ```
/// use vismc::model::canonicalize;
///
/// let np = canonicalize("two boats");
/// assert_eq!(np.head, "boat");
/// assert_eq!(np.count, Some(2));
/// assert_eq!(canonicalize("people").head, "person");
/// ```
pub fn canonicalize(raw: &str) -> NounPhrase {
    let lower = raw.to_lowercase();
    let mut words: Vec<&str> = lower
        .split_whitespace()
        .map(trim_punct)
        .filter(|w| !w.is_empty())
        .collect();
    while words.first().is_some_and(|w| ARTICLES.contains(w)) {
        words.remove(0);
    }
    let mut count = None;
    if words.len() > 1 {
        if let Some(n) = words.first().and_then(|w| numeral(w)).filter(|n| *n >= 1) {
            count = Some(n);
            words.remove(0);
        }
    }
    let Some((head, attrs)) = words.split_last() else {
        return NounPhrase::default();
    };
    NounPhrase {
        head: singularize(head),
        count,
        attributes: attrs.iter().map(|s| s.to_string()).collect(),
        literal: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn numerals_become_counts() {
        assert_eq!(canonicalize("two boats"), NounPhrase::head("boat").with_count(2));
        assert_eq!(canonicalize("3 dogs"), NounPhrase::head("dog").with_count(3));
    }

    #[test]
    fn articles_are_stripped() {
        assert_eq!(canonicalize("a man"), NounPhrase::head("man"));
        assert_eq!(canonicalize("The  Horse"), NounPhrase::head("horse"));
    }

    #[test]
    fn irregular_and_suffix_plurals() {
        assert_eq!(canonicalize("people").head, "person");
        assert_eq!(canonicalize("men").head, "man");
        assert_eq!(singularize("puppies"), "puppy");
        assert_eq!(singularize("benches"), "bench");
        assert_eq!(singularize("boxes"), "box");
        assert_eq!(singularize("glasses"), "glass");
        assert_eq!(singularize("horses"), "horse");
        assert_eq!(singularize("bus"), "bus");
        assert_eq!(singularize("sheep"), "sheep");
        assert_eq!(singularize("tennis"), "tennis");
    }

    #[test]
    fn premodifiers_become_attributes() {
        let np = canonicalize("a brick building");
        assert_eq!(np, NounPhrase::head("building").with_attributes(["brick"]));
        let np = canonicalize("two big white dogs");
        assert_eq!(np.count, Some(2));
        assert_eq!(np.attributes, vec!["big", "white"]);
    }

    #[test]
    fn lone_numeral_is_a_head() {
        assert_eq!(canonicalize("two"), NounPhrase::head("two"));
    }

    proptest! {
        #[test]
        fn canonical_text_is_a_fixed_point(words in proptest::collection::vec("[a-z]{1,9}", 1..5), n in proptest::option::of(1u32..20)) {
            let mut raw = words.join(" ");
            if let Some(n) = n {
                raw = format!("{n} {raw}");
            }
            let once = canonicalize(&raw);
            let twice = canonicalize(&once.canonical_text());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn singularize_is_idempotent(w in "[a-z]{1,12}") {
            let s = singularize(&w);
            prop_assert_eq!(singularize(&s), s.clone());
        }
    }
}
