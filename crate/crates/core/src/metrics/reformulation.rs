//! Query reformulation labels and query-length change.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::tokenize::{content_tokens, tokenize, Stopwords};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reformulation {
    Conceptual,
    Procedural,
    Syntactic,
}

impl Reformulation {
    pub const ALL: [Reformulation; 3] = [Self::Conceptual, Self::Procedural, Self::Syntactic];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Conceptual => "conceptual",
            Self::Procedural => "procedural",
            Self::Syntactic => "syntactic",
        }
    }
}

impl fmt::Display for Reformulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_META_TERMS: [&str; 10] = [
    "search", "find", "look", "results", "source", "sources", "verify", "check", "browse", "query",
];

pub fn default_meta_terms() -> BTreeSet<String> {
    DEFAULT_META_TERMS.iter().map(|s| s.to_string()).collect()
}

fn word_count(q: &str) -> usize {
    q.split_whitespace().count()
}

/// Procedural when the new query mentions the search process, syntactic when
/// it is a pure keyword query shorter than the old one, conceptual otherwise.
pub fn classify_reformulation(
    old_query: &str,
    new_query: &str,
    stopwords: &Stopwords,
    meta_terms: &BTreeSet<String>,
) -> Reformulation {
    if content_tokens(new_query, stopwords).iter().any(|t| meta_terms.contains(t)) {
        return Reformulation::Procedural;
    }
    let tokens = tokenize(new_query, stopwords);
    let has_stopwords = tokens.tokens.len() > tokens.content_tokens.len();
    if !has_stopwords && word_count(new_query) < word_count(old_query) {
        return Reformulation::Syntactic;
    }
    Reformulation::Conceptual
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthDelta {
    pub mean_old: f64,
    pub mean_new: f64,
    /// `(mean_new - mean_old) / mean_old`.
    pub change: f64,
}

pub fn query_length_delta<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<LengthDelta, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput("query pairs"));
    }
    let n = pairs.len() as f64;
    let mean_old = pairs.iter().map(|(o, _)| word_count(o.as_ref()) as f64).sum::<f64>() / n;
    let mean_new = pairs.iter().map(|(_, w)| word_count(w.as_ref()) as f64).sum::<f64>() / n;
    let change = if mean_old > 0.0 { (mean_new - mean_old) / mean_old } else { 0.0 };
    Ok(LengthDelta {
        mean_old,
        mean_new,
        change,
    })
}
