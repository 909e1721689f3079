//! Ranker configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scoring head selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Drmm,
    Knrm,
    Duet,
    PooledDot,
    Maxsim,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [
        HeadKind::Drmm,
        HeadKind::Knrm,
        HeadKind::Duet,
        HeadKind::PooledDot,
        HeadKind::Maxsim,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            HeadKind::Drmm => "drmm",
            HeadKind::Knrm => "knrm",
            HeadKind::Duet => "duet",
            HeadKind::PooledDot => "pooled_dot",
            HeadKind::Maxsim => "maxsim",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "drmm" => Ok(HeadKind::Drmm),
            "knrm" => Ok(HeadKind::Knrm),
            "duet" => Ok(HeadKind::Duet),
            "pooled_dot" => Ok(HeadKind::PooledDot),
            "maxsim" => Ok(HeadKind::Maxsim),
            other => Err(Error::Config(format!("unknown ranker head {other:?}"))),
        }
    }
}

/// One pooling kernel: centre and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankerConfig {
    pub head: HeadKind,
    /// Embedding dimension n.
    pub embedding_dim: usize,
    pub query_len: usize,
    pub doc_len: usize,
    /// Histogram bin count b (DRMM).
    pub hist_bins: usize,
    /// DRMM hidden layer width.
    pub drmm_hidden: usize,
    /// Pooling kernels (KNRM).
    pub kernels: Vec<KernelSpec>,
    /// Apply log(1 + x) to pooled kernel values before the query sum. On
    /// by default, following the original KNRM pipeline.
    pub kernel_log: bool,
    /// Convolution output channels c (Duet distributed path).
    pub conv_channels: usize,
    pub conv_window: usize,
}

impl RankerConfig {
    pub fn new(head: HeadKind) -> Self {
        RankerConfig {
            head,
            embedding_dim: 300,
            query_len: 20,
            doc_len: 128,
            hist_bins: 10,
            drmm_hidden: 8,
            kernels: default_kernels(11),
            kernel_log: true,
            conv_channels: 8,
            conv_window: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.query_len == 0 || self.doc_len == 0 {
            return Err(Error::Config(
                "embedding dimension and lengths must be positive".into(),
            ));
        }
        if self.hist_bins < 2 {
            return Err(Error::Config("hist_bins must be >= 2".into()));
        }
        if self.drmm_hidden == 0 {
            return Err(Error::Config("drmm_hidden must be positive".into()));
        }
        if self.kernels.is_empty() {
            return Err(Error::Config("need at least one kernel".into()));
        }
        for k in &self.kernels {
            if k.sigma <= 0.0 {
                return Err(Error::Config(format!("kernel sigma {} must be > 0", k.sigma)));
            }
            if !(-1.0..=1.0).contains(&k.mu) {
                return Err(Error::Config(format!(
                    "kernel mu {} must lie in [-1, 1]",
                    k.mu
                )));
            }
        }
        if self.head == HeadKind::Duet {
            if self.conv_channels == 0 || self.conv_window == 0 {
                return Err(Error::Config("conv_channels and conv_window must be > 0".into()));
            }
            if self.conv_window > self.query_len || self.conv_window > self.doc_len {
                return Err(Error::Config(
                    "conv_window must not exceed the fixed lengths".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The usual KNRM scheme: an exact-match kernel at mu = 1 with a tight
/// width, plus `count - 1` soft kernels evenly spaced from 0.9 downwards.
pub fn default_kernels(count: usize) -> Vec<KernelSpec> {
    assert!(count >= 1);
    let mut kernels = vec![KernelSpec {
        mu: 1.0,
        sigma: 1e-3,
    }];
    for j in 0..count - 1 {
        kernels.push(KernelSpec {
            mu: 0.9 - 0.2 * j as f64,
            sigma: 0.1,
        });
    }
    kernels
}
