//! Shared text processing: one fixed tokenizer used by the embedder, the
//! caption metrics, and the consensus stage, so scores are comparable.

/// Lowercase and split on non-alphanumeric characters. No stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Minimal suffix stemmer for near-form unigram matching ("couches" ~ "couch").
///
/// Strips at most one of `ing`, `ed`, `-es` (after a sibilant), or `s`,
/// keeping at least three characters. Not a linguistic stemmer; a
/// deterministic stand-in.
pub fn stem(word: &str) -> &str {
    for suffix in ["ing", "ed"] {
        if let Some(prefix) = word.strip_suffix(suffix) {
            if prefix.len() >= 3 {
                return prefix;
            }
        }
    }
    if let Some(prefix) = word.strip_suffix("es") {
        let sibilant = prefix.ends_with('s')
            || prefix.ends_with('x')
            || prefix.ends_with('z')
            || prefix.ends_with("ch")
            || prefix.ends_with("sh");
        if prefix.len() >= 3 && sibilant {
            return prefix;
        }
    }
    if let Some(prefix) = word.strip_suffix('s') {
        if prefix.len() >= 3 && !prefix.ends_with('s') {
            return prefix;
        }
    }
    word
}

/// All n-grams of `tokens` joined with `\x1f` (a separator that the tokenizer
/// can never produce).
pub fn ngrams(tokens: &[String], n: usize) -> Vec<String> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).map(|w| w.join("\x1f")).collect()
}

/// Collapse runs of whitespace into single spaces and trim.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
