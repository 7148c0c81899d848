//! Case-folding tokenizer and phrase matching for surface names.

/// Lowercased alphanumeric tokens; everything else is a boundary.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Canonical form of a surface name, used as a lookup key.
pub fn normalize_name(name: &str) -> String {
    tokenize(name).join(" ")
}

/// True when `phrase` occurs in `tokens` as a contiguous token sequence.
pub fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return false;
    }
    tokens.windows(phrase.len()).any(|w| w == phrase)
}
