//! Lowercased letter/digit tokenization and the pinned stopword list.

use std::collections::HashSet;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Version tag of the bundled stopword list; bump when `data/stopwords_en_v1.txt` changes.
pub const STOPWORDS_VERSION: &str = "en-v1";

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en_v1.txt");

/// A set of lowercase stopwords.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Stopwords {
    words: HashSet<String>,
}

impl Stopwords {
    /// The bundled English list.
    pub fn english() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Parses one word per line; blank lines and `#` comments are skipped.
    /// Words are lowercased on load.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn from_file(path: &Path) -> io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for Stopwords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self {
            words: iter.into_iter().map(|w| w.into().to_lowercase()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenList {
    pub tokens: Vec<String>,
    pub content_tokens: Vec<String>,
}

/// Splits `text` into maximal runs of Unicode letters/digits, lowercased.
/// `content_tokens` keeps the tokens that are not exact stopword matches, in order.
pub fn tokenize(text: &str, stopwords: &Stopwords) -> TokenList {
    let tokens = word_tokens(text);
    let content_tokens = tokens
        .iter()
        .filter(|t| !stopwords.contains(t))
        .cloned()
        .collect();
    TokenList {
        tokens,
        content_tokens,
    }
}

/// Content tokens only.
pub fn content_tokens(text: &str, stopwords: &Stopwords) -> Vec<String> {
    tokenize(text, stopwords).content_tokens
}

fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}
