//! Label canonicalization: the text normalization applied to every object
//! name before it is matched against the knowledge graph.

/// Positional and visual qualifier tokens dropped during canonicalization.
///
/// A KG file may override this list via its `qualifier_lexicon` header.
pub const DEFAULT_QUALIFIER_LEXICON: &[&str] = &[
    "front",
    "rear",
    "back",
    "left",
    "right",
    "near",
    "far",
    "nearest",
    "farthest",
    "first",
    "second",
    "third",
    "foreground",
    "background",
    "partially",
    "visible",
];

/// Lowercases, strips punctuation, and collapses whitespace.
///
/// Keeps ASCII alphanumerics only; every other character becomes a token
/// boundary. Qualifier tokens are preserved (see [`strip_qualifiers`]).
pub fn normalize(raw: &str) -> String {
    let mapped: String = raw
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes every token found in `lexicon` from an already-normalized string.
pub fn strip_qualifiers(normalized: &str, lexicon: &[String]) -> String {
    normalized
        .split_whitespace()
        .filter(|t| !lexicon.iter().any(|q| q == t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Full canonicalization with the default qualifier lexicon.
///
/// Idempotent: the output contains only lowercase ASCII alphanumerics and
/// single spaces, and running it again is a no-op. May return an empty
/// string (e.g. for qualifier-only input); callers treat that as no-match.
pub fn canonicalize(raw: &str) -> String {
    let lexicon: Vec<String> = DEFAULT_QUALIFIER_LEXICON
        .iter()
        .map(|s| s.to_string())
        .collect();
    canonicalize_with(raw, &lexicon)
}

/// Full canonicalization with a caller-supplied qualifier lexicon.
pub fn canonicalize_with(raw: &str, lexicon: &[String]) -> String {
    strip_qualifiers(&normalize(raw), lexicon)
}
