//! Embedding matrix loading.
//!
//! The file format is the common pretrained-word-vector text layout: one
//! token per line followed by its vector components, whitespace-separated.

use std::fs;
use std::path::Path;

use rand::RngExt;

use super::text::{Vocabulary, PAD_ID};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seeding;

/// `|V| x n` embedding table aligned with a [`Vocabulary`]. Row `PAD_ID`
/// is all-zero and stays frozen during training.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    dim: usize,
    table: Tensor,
}

impl EmbeddingMatrix {
    /// Load vectors from a text file. Vocabulary tokens present in the
    /// file take the file vector; missing tokens are initialized uniformly
    /// in `[-0.25, 0.25]` from a per-row stream of `seed`; the pad row is
    /// zero.
    pub fn load(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
        let mut dim: Option<usize> = None;
        let mut file_rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts
                .next()
                .ok_or_else(|| Error::parse(&name, i + 1, "empty line"))?;
            let values: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|_| Error::parse(&name, i + 1, format!("bad number {p:?}")))
                })
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::parse(
                        &name,
                        i + 1,
                        format!("dimension {} disagrees with {d}", values.len()),
                    ));
                }
                _ => {}
            }
            let id = vocab.lookup(token);
            if id != super::text::UNK_ID || token == "<unk>" {
                file_rows[id] = Some(values);
            }
        }
        let dim = dim.ok_or_else(|| Error::parse(&name, 1, "no vectors in file"))?;
        if dim == 0 {
            return Err(Error::parse(&name, 1, "zero-dimensional vectors"));
        }
        let mut data = vec![0.0; vocab.len() * dim];
        for id in 0..vocab.len() {
            if id == PAD_ID {
                continue;
            }
            let row = &mut data[id * dim..(id + 1) * dim];
            match &file_rows[id] {
                Some(values) => row.copy_from_slice(values),
                None => fill_random(row, seed, id),
            }
        }
        Ok(EmbeddingMatrix {
            dim,
            table: Tensor::matrix(vocab.len(), dim, data),
        })
    }

    /// Random table for runs without pretrained vectors (all non-pad rows
    /// uniform in `[-0.25, 0.25]`).
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let mut data = vec![0.0; vocab.len() * dim];
        for id in 1..vocab.len() {
            fill_random(&mut data[id * dim..(id + 1) * dim], seed, id);
        }
        EmbeddingMatrix {
            dim,
            table: Tensor::matrix(vocab.len(), dim, data),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.table.data()[id * self.dim..(id + 1) * self.dim]
    }

    pub fn into_tensor(self) -> Tensor {
        self.table
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.table
    }
}

fn fill_random(row: &mut [f64], seed: u64, id: usize) {
    let mut rng = seeding::stream(seed, "embedding-init", id as u64);
    for v in row {
        *v = rng.random_range(-0.25..0.25);
    }
}
