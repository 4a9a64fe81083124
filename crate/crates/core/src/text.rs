//! Tokenization shared by the validators and the mock backend.

use std::collections::BTreeSet;

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as",
    "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by",
    "can", "could", "did", "do", "does", "doing", "don't", "down", "during", "each", "even", "few",
    "for", "from", "further", "get", "got", "had", "has", "have", "having", "he", "her", "here",
    "hers", "him", "his", "how", "i", "i'd", "i'll", "i'm", "i've", "if", "in", "into", "is",
    "isn't", "it", "it's", "its", "just", "kind", "let's", "like", "me", "more", "most", "much",
    "my", "myself", "no", "nor", "not", "now", "of", "off", "oh", "ok", "okay", "on", "once",
    "only", "or", "other", "our", "ours", "out", "over", "own", "really", "same", "she", "so",
    "some", "such", "than", "that", "that's", "the", "their", "them", "then", "there", "there's",
    "these", "they", "this", "those", "through", "to", "too", "uh", "um", "under", "until", "up",
    "us", "very", "was", "we", "we're", "were", "what", "what's", "when", "where", "which",
    "while", "who", "why", "will", "with", "would", "yeah", "yes", "you", "you're", "your",
    "yours", "yourself",
];

pub fn is_stopword(lower: &str) -> bool {
    STOPWORDS.binary_search(&lower).is_ok()
}

/// Splits on anything that is neither alphanumeric nor an apostrophe.
/// Typographic apostrophes are folded to ASCII.
pub fn tokens(text: &str) -> Vec<String> {
    text.replace(['\u{2019}', '\u{2018}'], "'")
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Tokens with stopwords removed, original casing kept.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text)
        .into_iter()
        .filter(|t| !is_stopword(&t.to_lowercase()))
        .collect()
}

pub fn content_token_set(text: &str) -> BTreeSet<String> {
    content_tokens(text)
        .into_iter()
        .map(|t| t.to_lowercase())
        .collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
