//! Immutable document collection with an inverted index and BM25 retrieval.
//!
//! Document lengths and term frequencies are measured in content tokens
//! (stopwords removed), so the index and the grounding metric agree on what a
//! "token" is. Scores use the non-negative BM25 idf
//! `ln(1 + (N - df + 0.5) / (df + 0.5))`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::tokenize::{tokenize, Stopwords};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate doc_id `{0}`")]
    DuplicateDocId(String),
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error("document with empty doc_id")]
    EmptyDocId,
    #[error("document `{0}` has empty text")]
    EmptyText(String),
    #[error("query `{0}` has no content tokens")]
    EmptyQuery(String),
    #[error("retrieval depth must be at least 1")]
    InvalidDepth,
    #[error("unknown doc_id `{0}`")]
    UnknownDocId(String),
    #[error(transparent)]
    Read(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
            meta: BTreeMap::new(),
        }
    }
}

/// On-disk corpus line: `{"id": ..., "text": ..., "meta": {...}}`.
#[derive(Debug, Deserialize)]
struct CorpusLine {
    id: String,
    text: String,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

/// Reads a JSONL (optionally gzipped) corpus file.
pub fn read_documents(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let lines: Vec<CorpusLine> = jsonl::read_all(path)?;
    Ok(lines
        .into_iter()
        .map(|l| Document {
            doc_id: l.id,
            text: l.text,
            meta: l.meta,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    doc: u32,
    tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub hits: Vec<Hit>,
    pub depth: usize,
}

impl RetrievalResult {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.doc_id.as_str())
    }
}

#[derive(Debug)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, u32>,
    index: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    stopwords: Stopwords,
    params: Bm25Params,
}

impl Corpus {
    /// Builds the index. Documents keep their input order.
    pub fn build(
        documents: Vec<Document>,
        stopwords: Stopwords,
        params: Bm25Params,
    ) -> Result<Self, CorpusError> {
        if documents.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut by_id = HashMap::with_capacity(documents.len());
        let mut index: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.doc_id.is_empty() {
                return Err(CorpusError::EmptyDocId);
            }
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(doc.doc_id.clone()));
            }
            if by_id.insert(doc.doc_id.clone(), i as u32).is_some() {
                return Err(CorpusError::DuplicateDocId(doc.doc_id.clone()));
            }
            let content = tokenize(&doc.text, &stopwords).content_tokens;
            doc_lengths.push(content.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in content {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                index.entry(term).or_default().push(Posting { doc: i as u32, tf });
            }
        }
        let avg_doc_length =
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64;
        Ok(Self {
            documents,
            by_id,
            index,
            doc_lengths,
            avg_doc_length,
            stopwords,
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.documents[i as usize])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    /// Number of documents containing `term`.
    pub fn document_frequency(&self, term: &str) -> usize {
        self.index.get(term).map_or(0, Vec::len)
    }

    /// Doc ids listed in the postings of `term`, in corpus order.
    pub fn postings(&self, term: &str) -> Vec<&str> {
        self.index.get(term).map_or_else(Vec::new, |ps| {
            ps.iter()
                .map(|p| self.documents[p.doc as usize].doc_id.as_str())
                .collect()
        })
    }

    /// Content tokens of the query, deduplicated and sorted.
    pub fn query_terms(&self, query: &str) -> BTreeSet<String> {
        tokenize(query, &self.stopwords)
            .content_tokens
            .into_iter()
            .collect()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.documents.len() as f64;
        let df = self.document_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`depth` BM25 retrieval. Repeated query terms count once.
    pub fn retrieve(&self, query: &str, depth: usize) -> Result<RetrievalResult, CorpusError> {
        if depth == 0 {
            return Err(CorpusError::InvalidDepth);
        }
        let terms = self.query_terms(query);
        if terms.is_empty() {
            return Err(CorpusError::EmptyQuery(query.to_string()));
        }
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(postings) = self.index.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for p in postings {
                let tf = p.tf as f64;
                let len = self.doc_lengths[p.doc as usize] as f64;
                let norm = k1 * (1.0 - b + b * len / self.avg_doc_length);
                *scores.entry(p.doc).or_default() += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        let mut hits: Vec<Hit> = scores
            .into_iter()
            .map(|(doc, score)| Hit {
                doc_id: self.documents[doc as usize].doc_id.clone(),
                score,
            })
            .collect();
        hits.sort_by(rank_order);
        hits.truncate(depth);
        Ok(RetrievalResult {
            query: query.to_string(),
            hits,
            depth,
        })
    }
}

/// Score descending, then doc_id ascending.
pub fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}
