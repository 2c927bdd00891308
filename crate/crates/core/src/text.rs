//! Small text utilities shared by validation, metrics and the mock backends.

/// Collapse runs of whitespace into single spaces and trim the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased, whitespace-collapsed form used for exact-match comparisons.
pub fn normalize_for_match(text: &str) -> String {
    collapse_whitespace(text).to_lowercase()
}

/// Lowercase, delete punctuation, split on whitespace.
pub fn unigram_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !is_punctuation(*c))
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Tokens joined by single spaces and padded so phrase containment can be
/// tested on whole-word boundaries.
pub fn padded_token_string(text: &str) -> String {
    let tokens = unigram_tokens(text);
    format!(" {} ", tokens.join(" "))
}

/// True when `phrase` occurs in `text` as a whole-token sequence.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let phrase = padded_token_string(phrase);
    if phrase.trim().is_empty() {
        return false;
    }
    padded_token_string(text).contains(&phrase)
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{2026}'
        )
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |hash, b| (hash ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Approximate token count used when no tokenizer is configured.
pub fn approx_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_strip_punctuation_and_case() {
        assert_eq!(
            unigram_tokens("Brazil contains 60% of the rainforest."),
            ["brazil", "contains", "60", "of", "the", "rainforest"]
        );
        assert!(unigram_tokens(" ... ").is_empty());
    }

    #[test]
    fn phrase_containment_respects_word_boundaries() {
        assert!(contains_phrase("The forest is in Peru.", "peru"));
        assert!(!contains_phrase("The forest is in Peruvia.", "peru"));
        assert!(contains_phrase("Lives in New York City", "new york"));
        assert!(!contains_phrase("anything", ""));
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn approx_tokens_rounds_up() {
        assert_eq!(approx_tokens(""), 0);
        assert_eq!(approx_tokens("abcde"), 2);
        assert_eq!(approx_tokens("abcd"), 1);
    }
}
