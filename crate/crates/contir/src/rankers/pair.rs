//! Fixed-length tokenized query-document pairs.

use crate::data::{Sample, Vocabulary};
use crate::error::{Error, Result};

/// A query-document pair tokenized to the configured fixed lengths, with
/// binary masks marking real tokens (1) versus padding (0).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedPair {
    pub query_ids: Vec<usize>,
    pub doc_ids: Vec<usize>,
    pub query_mask: Vec<f64>,
    pub doc_mask: Vec<f64>,
}

impl TokenizedPair {
    pub fn new(
        query_ids: Vec<usize>,
        doc_ids: Vec<usize>,
        query_mask: Vec<f64>,
        doc_mask: Vec<f64>,
    ) -> Result<Self> {
        if query_ids.len() != query_mask.len() || doc_ids.len() != doc_mask.len() {
            return Err(Error::Validation("mask length must equal token length".into()));
        }
        for m in query_mask.iter().chain(&doc_mask) {
            if *m != 0.0 && *m != 1.0 {
                return Err(Error::Validation("masks must be binary".into()));
            }
        }
        if !query_mask.contains(&1.0) || !doc_mask.contains(&1.0) {
            return Err(Error::Validation(
                "need at least one unmasked query and doc token".into(),
            ));
        }
        Ok(TokenizedPair {
            query_ids,
            doc_ids,
            query_mask,
            doc_mask,
        })
    }

    pub fn from_texts(
        query: &str,
        doc: &str,
        vocab: &Vocabulary,
        query_len: usize,
        doc_len: usize,
    ) -> Result<Self> {
        let (query_ids, query_mask) = vocab.encode(query, query_len);
        let (doc_ids, doc_mask) = vocab.encode(doc, doc_len);
        TokenizedPair::new(query_ids, doc_ids, query_mask, doc_mask)
    }

    pub fn from_sample(
        sample: &Sample,
        vocab: &Vocabulary,
        query_len: usize,
        doc_len: usize,
    ) -> Result<Self> {
        Self::from_texts(&sample.query_text, &sample.doc_text, vocab, query_len, doc_len)
    }

    pub fn query_real_count(&self) -> usize {
        self.query_mask.iter().filter(|&&m| m == 1.0).count()
    }

    pub fn doc_real_count(&self) -> usize {
        self.doc_mask.iter().filter(|&&m| m == 1.0).count()
    }
}
