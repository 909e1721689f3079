//! Experiment configuration file (TOML). Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use contir::data::{SyntheticConfig, SyntheticStyle};
use contir::rankers::{default_kernels, HeadKind, RankerConfig};
use contir::runner::{OptimizerConfig, RunConfig, TrainingConfig};
use contir::strategies::{StrategyConfig, StrategyKind};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One full run per seed listed here.
    pub seeds: Vec<u64>,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub embeddings: EmbeddingsSection,
    pub ranker: RankerSection,
    pub strategy: StrategySection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// "synthetic", "ingest", or "corpus".
    pub source: String,
    /// Directory of task files (ingest) or the corpus TSV (corpus).
    pub path: Option<PathBuf>,
    /// Cluster count for corpus splitting.
    pub clusters: Option<usize>,
    /// Fraction of each cluster's queries that becomes training data
    /// (corpus mode).
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Seed for dataset construction, fixed across run seeds.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tasks")]
    pub tasks: usize,
    #[serde(default = "default_vocab_per_topic")]
    pub vocab_per_topic: usize,
    #[serde(default)]
    pub overlap: f64,
    #[serde(default = "default_common_tokens")]
    pub common_tokens: usize,
    /// "semantic" (associations must be learned) or "lexical" (relevant
    /// docs repeat query tokens).
    #[serde(default = "default_style")]
    pub style: String,
    #[serde(default = "default_train_queries")]
    pub train_queries: usize,
    #[serde(default = "default_test_queries")]
    pub test_queries: usize,
    #[serde(default = "default_docs_per_query")]
    pub docs_per_query: usize,
    #[serde(default = "default_query_tokens")]
    pub query_tokens: usize,
    #[serde(default = "default_doc_tokens")]
    pub doc_tokens: usize,
}

fn default_train_fraction() -> f64 {
    0.8
}
fn default_tasks() -> usize {
    3
}
fn default_vocab_per_topic() -> usize {
    200
}
fn default_common_tokens() -> usize {
    50
}
fn default_style() -> String {
    "semantic".to_string()
}
fn default_train_queries() -> usize {
    100
}
fn default_test_queries() -> usize {
    40
}
fn default_docs_per_query() -> usize {
    8
}
fn default_query_tokens() -> usize {
    4
}
fn default_doc_tokens() -> usize {
    12
}

impl DatasetSection {
    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            tasks: self.tasks,
            vocab_per_topic: self.vocab_per_topic,
            overlap: self.overlap,
            common_tokens: self.common_tokens,
            train_queries: self.train_queries,
            test_queries: self.test_queries,
            docs_per_query: self.docs_per_query,
            query_tokens: self.query_tokens,
            doc_tokens: self.doc_tokens,
            style: SyntheticStyle::parse(&self.style).expect("style validated at load"),
            train_queries_per_task: None,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingsSection {
    /// Pretrained vector file; random initialization when absent.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankerSection {
    /// Grid axis: one run set per head tag.
    pub heads: Vec<String>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_query_len")]
    pub query_len: usize,
    #[serde(default = "default_doc_len")]
    pub doc_len: usize,
    #[serde(default = "default_hist_bins")]
    pub hist_bins: usize,
    #[serde(default = "default_drmm_hidden")]
    pub drmm_hidden: usize,
    #[serde(default = "default_kernel_count")]
    pub kernel_count: usize,
    #[serde(default = "default_true")]
    pub kernel_log: bool,
    #[serde(default = "default_conv_channels")]
    pub conv_channels: usize,
    #[serde(default = "default_conv_window")]
    pub conv_window: usize,
}

fn default_embedding_dim() -> usize {
    300
}
fn default_query_len() -> usize {
    20
}
fn default_doc_len() -> usize {
    128
}
fn default_hist_bins() -> usize {
    10
}
fn default_drmm_hidden() -> usize {
    8
}
fn default_kernel_count() -> usize {
    11
}
fn default_true() -> bool {
    true
}
fn default_conv_channels() -> usize {
    8
}
fn default_conv_window() -> usize {
    3
}

impl RankerSection {
    pub fn heads(&self) -> anyhow::Result<Vec<HeadKind>> {
        if self.heads.is_empty() {
            bail!("ranker.heads must name at least one head");
        }
        self.heads
            .iter()
            .map(|t| HeadKind::parse(t).map_err(Into::into))
            .collect()
    }

    pub fn ranker_config(&self, head: HeadKind) -> RankerConfig {
        RankerConfig {
            head,
            embedding_dim: self.embedding_dim,
            query_len: self.query_len,
            doc_len: self.doc_len,
            hist_bins: self.hist_bins,
            drmm_hidden: self.drmm_hidden,
            kernels: default_kernels(self.kernel_count),
            kernel_log: self.kernel_log,
            conv_channels: self.conv_channels,
            conv_window: self.conv_window,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    /// Grid axis: one run set per strategy tag.
    pub tags: Vec<String>,
    /// Penalty coefficient override; per-strategy defaults when absent.
    pub lambda: Option<f64>,
    #[serde(default = "default_fisher_samples")]
    pub fisher_samples: usize,
    #[serde(default = "default_si_damping")]
    pub si_damping: f64,
    #[serde(default = "default_memory_capacity")]
    pub memory_capacity: usize,
    #[serde(default = "default_gem_ridge")]
    pub gem_ridge: f64,
}

fn default_fisher_samples() -> usize {
    1024
}
fn default_si_damping() -> f64 {
    1e-3
}
fn default_memory_capacity() -> usize {
    512
}
fn default_gem_ridge() -> f64 {
    1e-3
}

impl StrategySection {
    pub fn kinds(&self) -> anyhow::Result<Vec<StrategyKind>> {
        if self.tags.is_empty() {
            bail!("strategy.tags must name at least one strategy");
        }
        self.tags
            .iter()
            .map(|t| StrategyKind::parse(t).map_err(Into::into))
            .collect()
    }

    pub fn strategy_config(&self, kind: StrategyKind) -> StrategyConfig {
        StrategyConfig {
            kind,
            lambda: self.lambda.unwrap_or_else(|| kind.default_lambda()),
            fisher_samples: self.fisher_samples,
            si_damping: self.si_damping,
            memory_capacity: self.memory_capacity,
            gem_ridge: self.gem_ridge,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        OptimizerSection {
            learning_rate: d.learning_rate,
            momentum: d.momentum,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub margin: f64,
    pub loss_y: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainingConfig::default();
        TrainingSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            negatives_per_positive: d.negatives_per_positive,
            margin: d.margin,
            loss_y: d.loss_y,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub mrr_cutoff: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// "topic_shift" or "data_volume".
    pub kind: String,
    #[serde(default)]
    pub overlaps: Vec<f64>,
    #[serde(default)]
    pub volume_multipliers: Vec<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        match self.dataset.source.as_str() {
            "synthetic" => {}
            "ingest" | "corpus" => {
                if self.dataset.path.is_none() {
                    bail!("dataset.path is required for source {:?}", self.dataset.source);
                }
                if self.dataset.source == "corpus" {
                    if self.dataset.clusters.is_none() {
                        bail!("dataset.clusters is required for corpus splitting");
                    }
                    if self.embeddings.file.is_none() {
                        bail!("embeddings.file is required for corpus splitting");
                    }
                    if self.dataset.train_fraction <= 0.0 || self.dataset.train_fraction >= 1.0 {
                        bail!("dataset.train_fraction must lie strictly between 0 and 1");
                    }
                }
            }
            other => bail!("unknown dataset.source {other:?}"),
        }
        if let Some(sweep) = &self.sweep {
            match sweep.kind.as_str() {
                "topic_shift" => {
                    if sweep.overlaps.is_empty() {
                        bail!("sweep.overlaps must list the overlap values to sweep");
                    }
                    if self.dataset.source != "synthetic" {
                        bail!("the topic_shift sweep generates synthetic two-task datasets");
                    }
                }
                "data_volume" => {
                    if sweep.volume_multipliers.is_empty() {
                        bail!("sweep.volume_multipliers must list the multipliers to sweep");
                    }
                    if self.dataset.source != "synthetic" {
                        bail!("the data_volume sweep generates synthetic two-task datasets");
                    }
                }
                other => bail!("unknown sweep.kind {other:?}"),
            }
        }
        SyntheticStyle::parse(&self.dataset.style)?;
        // Materialize every grid combination once so bad tags fail here.
        let _ = self.ranker.heads()?;
        for kind in self.strategy.kinds()? {
            self.strategy
                .strategy_config(kind)
                .validate()
                .map_err(anyhow::Error::from)?;
        }
        Ok(())
    }

    /// Resolved run configuration for one grid cell.
    pub fn run_config(&self, head: HeadKind, strategy: StrategyKind, seed: u64) -> RunConfig {
        RunConfig {
            ranker: self.ranker.ranker_config(head),
            strategy: self.strategy.strategy_config(strategy),
            optimizer: OptimizerConfig {
                learning_rate: self.optimizer.learning_rate,
                momentum: self.optimizer.momentum,
            },
            training: TrainingConfig {
                epochs: self.training.epochs,
                batch_size: self.training.batch_size,
                negatives_per_positive: self.training.negatives_per_positive,
                margin: self.training.margin,
                loss_y: self.training.loss_y,
            },
            mrr_cutoff: self.eval.mrr_cutoff,
            seed,
        }
    }
}

/// Annotations attached to sweep run manifests.
pub fn sweep_extra(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}
