use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Lowercased tokens of a text. Never contains empty tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Space-joined form; re-tokenizing it yields the same sequence.
    pub fn joined(&self) -> String {
        self.0.join(" ")
    }
}

impl<S: AsRef<str>> FromIterator<S> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSequence(
            iter.into_iter()
                .map(|s| s.as_ref().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect(),
        )
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.joined())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    /// Word runs plus every punctuation character as its own token.
    #[default]
    Standard,
    /// Whitespace split; punctuation stays attached to words.
    Whitespace,
    /// Alphanumeric word runs only; punctuation dropped.
    Words,
}

impl Tokenization {
    pub fn apply(self, text: &str) -> TokenSequence {
        match self {
            Tokenization::Standard => tokenize(text),
            Tokenization::Whitespace => tokenize_whitespace(text),
            Tokenization::Words => tokenize_words(text),
        }
    }
}

fn normalized(text: &str) -> String {
    text.nfc().collect::<String>().to_lowercase()
}

/// NFC-normalizes, lowercases, splits on whitespace and detaches each
/// punctuation character as a separate token.
pub fn tokenize(text: &str) -> TokenSequence {
    let text = normalized(text);
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    TokenSequence(out)
}

pub fn tokenize_whitespace(text: &str) -> TokenSequence {
    TokenSequence(normalized(text).split_whitespace().map(str::to_string).collect())
}

pub fn tokenize_words(text: &str) -> TokenSequence {
    let text = normalized(text);
    TokenSequence(
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect(),
    )
}
