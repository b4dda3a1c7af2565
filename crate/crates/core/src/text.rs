//! Shared title/alias normalization used by the linker and by reply grounding.

/// A token produced by [`tokenize`], with byte offsets into the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub start: usize,
    pub end: usize,
    pub lower: String,
}

/// Splits text into maximal runs of alphanumeric characters.
///
/// Everything else (whitespace, punctuation, symbols) acts as a separator, so
/// "Spider-Man" and "spider man" produce the same token stream.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    for (pos, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            let entry = current.get_or_insert_with(|| (pos, String::new()));
            entry.1.extend(ch.to_lowercase());
        } else if let Some((start, lower)) = current.take() {
            tokens.push(Token { start, end: pos, lower });
        }
    }
    if let Some((start, lower)) = current {
        tokens.push(Token { start, end: text.len(), lower });
    }
    tokens
}

/// Lowercases, strips punctuation and collapses whitespace.
pub fn normalize(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .map(|t| t.lower)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Removes a trailing parenthesised four-digit year, e.g. `"Heat (1995)"` → `"Heat"`.
/// Returns `None` when no such suffix is present.
pub fn strip_year_suffix(text: &str) -> Option<&str> {
    let trimmed = text.trim_end();
    let inner = trimmed.strip_suffix(')')?;
    let open = inner.rfind('(')?;
    let year = inner[open + 1..].trim();
    if year.len() == 4 && year.bytes().all(|b| b.is_ascii_digit()) {
        Some(inner[..open].trim_end())
    } else {
        None
    }
}

/// Normalization applied to free-text titles before edit-distance matching:
/// year suffix removed, then [`normalize`].
pub fn normalize_title(text: &str) -> String {
    normalize(strip_year_suffix(text).unwrap_or(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_reports_byte_spans() {
        let toks = tokenize("I loved The Matrix!");
        let words: Vec<_> = toks.iter().map(|t| t.lower.as_str()).collect();
        assert_eq!(words, ["i", "loved", "the", "matrix"]);
        assert_eq!(&"I loved The Matrix!"[toks[2].start..toks[3].end], "The Matrix");
    }

    #[test]
    fn normalize_strips_punctuation_and_case() {
        assert_eq!(normalize("  Mad Max:  Fury Road "), "mad max fury road");
        assert_eq!(normalize("The Matrix (1999)"), "the matrix 1999");
        assert_eq!(normalize("Crazy, Stupid, Love"), "crazy stupid love");
    }

    #[test]
    fn year_suffix() {
        assert_eq!(strip_year_suffix("The Matrix (1999)"), Some("The Matrix"));
        assert_eq!(strip_year_suffix("Blade Runner ( 1982 ) "), Some("Blade Runner"));
        assert_eq!(strip_year_suffix("Ocean's (Eleven)"), None);
        assert_eq!(strip_year_suffix("Heat"), None);
        assert_eq!(normalize_title("The Matrix (1999)"), "the matrix");
    }
}
