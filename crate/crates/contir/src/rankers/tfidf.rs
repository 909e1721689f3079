//! Term statistics for the Duet local path.
//!
//! Recomputed over the training documents of the task being learned, at
//! task start. `idf = ln(1 + N / (1 + df))`; the local matrix entry uses
//! raw in-document term frequency times idf.

use std::collections::HashSet;

use crate::data::{PAD_ID, UNK_ID};

#[derive(Debug, Clone, Default)]
pub struct TfidfStats {
    idf: Vec<f64>,
}

impl TfidfStats {
    /// No statistics: every idf is zero, so the local path contributes
    /// nothing until real stats are installed.
    pub fn empty() -> Self {
        TfidfStats::default()
    }

    /// Build from tokenized documents (unmasked token ids only).
    pub fn from_docs<'a>(docs: impl Iterator<Item = &'a [usize]>, vocab_len: usize) -> Self {
        let mut df = vec![0usize; vocab_len];
        let mut n_docs = 0usize;
        for doc in docs {
            n_docs += 1;
            let unique: HashSet<usize> = doc.iter().copied().collect();
            for token in unique {
                if token < vocab_len {
                    df[token] += 1;
                }
            }
        }
        let idf = df
            .iter()
            .map(|&d| (1.0 + n_docs as f64 / (1.0 + d as f64)).ln())
            .collect();
        TfidfStats { idf }
    }

    pub fn idf(&self, token: usize) -> f64 {
        self.idf.get(token).copied().unwrap_or(0.0)
    }

    /// TF-IDF weight of a token inside one document given the doc's
    /// unmasked token ids. Pad and unknown ids never match lexically.
    pub fn weight(&self, token: usize, doc_tokens: &[usize]) -> f64 {
        if token == PAD_ID || token == UNK_ID {
            return 0.0;
        }
        let tf = doc_tokens.iter().filter(|&&t| t == token).count();
        tf as f64 * self.idf(token)
    }
}
