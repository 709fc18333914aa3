//! Tokenization rules shared by every module.
//!
//! A *word* is a maximal run of non-whitespace characters. *Normalized tokens*
//! are words after lowercasing and deleting every character that is neither
//! alphanumeric nor whitespace, so `"Nadal's"` becomes `"nadals"`.

/// Whitespace-delimited words of `text`.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Joins the words of `text` with single spaces.
pub fn normalize_space(text: &str) -> String {
    words(text).collect::<Vec<_>>().join(" ")
}

/// First `limit` words of `text`, joined by single spaces.
pub fn truncate_words(text: &str, limit: usize) -> String {
    words(text).take(limit).collect::<Vec<_>>().join(" ")
}

/// Lowercase, strip punctuation, split on whitespace.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Splits running text into sentences.
///
/// A sentence ends at `.`, `!` or `?` (optionally followed by closing quotes
/// or brackets) when the next character is whitespace or the end of input.
/// This is the single segmentation rule used for selection checkboxes and for
/// knowledge integrity checks.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            while let Some(&next) = chars.peek() {
                if matches!(next, '"' | '\'' | ')' | ']' | '”' | '’') {
                    current.push(next);
                    chars.next();
                } else {
                    break;
                }
            }
            if chars.peek().is_none_or(|n| n.is_whitespace()) {
                let sentence = normalize_space(&current);
                if !sentence.is_empty() {
                    sentences.push(sentence);
                }
                current.clear();
            }
        }
    }
    let tail = normalize_space(&current);
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

/// True when `needle` occurs in `haystack` once both are space-normalized.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let needle = normalize_space(needle);
    !needle.is_empty() && normalize_space(haystack).contains(&needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_tokens("Hello, World!"), vec!["hello", "world"]);
        assert!(normalize_tokens("").is_empty());
        assert_eq!(
            normalize_tokens("Rafael Nadal's 21st"),
            vec!["rafael", "nadals", "21st"]
        );
        assert!(normalize_tokens("... -- !!").is_empty());
    }

    #[test]
    fn sentences() {
        let s = split_sentences("Nadal won. He is from Spain!  Is he \"great?\" yes");
        assert_eq!(
            s,
            vec!["Nadal won.", "He is from Spain!", "Is he \"great?\"", "yes"]
        );
        assert_eq!(split_sentences("3.5 sets. Done"), vec!["3.5 sets.", "Done"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_words(" a  b c d ", 2), "a b");
        assert_eq!(truncate_words("a", 5), "a");
    }
}
