//! Synthetic multi-topic dataset generator for desk-scale experiments.
//!
//! Each topic owns a token pool of fixed size; the `overlap` knob replaces
//! a fraction of every pool with tokens from one shared pool, so topic
//! centroids move closer together monotonically as overlap grows
//! (`overlap = 0` means disjoint topics, `overlap = 1` identical ones).
//! Negatives are always drawn from the same topic while avoiding the
//! query's tokens. Two constructions of the relevance signal exist:
//!
//! - [`SyntheticStyle::Lexical`]: the relevant doc literally contains
//!   sampled query tokens. Exact-term matching then separates candidates
//!   with no training at all (an exact match survives any embedding
//!   update), so rankers neither learn nor forget on this data; it is
//!   useful for smoke tests, not for continual-learning measurements.
//! - [`SyntheticStyle::Semantic`] (default): queries are built from
//!   common anchor tokens shared by all topics, and each topic pairs
//!   every anchor with its own associate token drawn from the topic pool;
//!   the relevant doc carries the query anchors' associates. Rankers must
//!   learn the anchor-associate geometry, and a later task re-points the
//!   anchors to its own associates, producing genuine interference. The
//!   associate assignment runs through one global position permutation,
//!   so with higher overlap more associates coincide across topics and
//!   the conflict shrinks together with the centroid distance.

use rand::seq::index;
use rand::RngExt;

use super::dataset::{ContinualDataset, Sample, TaskData};
use super::kmeans::TopicDistanceMatrix;
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticStyle {
    Lexical,
    Semantic,
}

impl SyntheticStyle {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "lexical" => Ok(SyntheticStyle::Lexical),
            "semantic" => Ok(SyntheticStyle::Semantic),
            other => Err(Error::Config(format!("unknown synthetic style {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub tasks: usize,
    pub vocab_per_topic: usize,
    /// Inter-topic vocabulary sharing in `[0, 1]`.
    pub overlap: f64,
    /// Anchor-token pool shared by every topic regardless of overlap.
    /// These play the role of polysemous vocabulary: every task re-tunes
    /// their embeddings, which is what couples the tasks.
    pub common_tokens: usize,
    pub train_queries: usize,
    pub test_queries: usize,
    /// Candidate pool per query: one relevant doc plus this minus one
    /// negatives (both splits).
    pub docs_per_query: usize,
    pub query_tokens: usize,
    pub doc_tokens: usize,
    pub style: SyntheticStyle,
    /// Per-task override of `train_queries`, for data-volume sweeps.
    pub train_queries_per_task: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            tasks: 3,
            vocab_per_topic: 200,
            overlap: 0.0,
            common_tokens: 50,
            train_queries: 100,
            test_queries: 40,
            docs_per_query: 8,
            query_tokens: 4,
            doc_tokens: 12,
            style: SyntheticStyle::Semantic,
            train_queries_per_task: None,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::Config("tasks must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Config("overlap must lie in [0, 1]".into()));
        }
        if self.train_queries == 0 || self.test_queries == 0 || self.docs_per_query < 2 {
            return Err(Error::Config(
                "need positive query counts and >= 2 docs per query".into(),
            ));
        }
        if self.query_tokens == 0 || self.doc_tokens == 0 {
            return Err(Error::Config("token counts must be positive".into()));
        }
        if self.vocab_per_topic <= self.query_tokens {
            return Err(Error::Config(format!(
                "vocabulary too small: {} tokens per topic cannot cover {} query \
                 tokens plus negatives",
                self.vocab_per_topic, self.query_tokens
            )));
        }
        if self.style == SyntheticStyle::Semantic {
            if self.common_tokens <= self.query_tokens {
                return Err(Error::Config(
                    "semantic style needs common_tokens > query_tokens (negatives \
                     anchor on other commons)"
                        .into(),
                ));
            }
            if self.common_tokens > self.vocab_per_topic {
                return Err(Error::Config(
                    "semantic style needs common_tokens <= vocab_per_topic for \
                     distinct associates"
                        .into(),
                ));
            }
            if self.doc_tokens < self.query_tokens {
                return Err(Error::Config(
                    "semantic style needs doc_tokens >= query_tokens to hold the \
                     associates"
                        .into(),
                ));
            }
        }
        if let Some(overrides) = &self.train_queries_per_task {
            if overrides.len() != self.tasks {
                return Err(Error::Config(
                    "train_queries_per_task length must equal tasks".into(),
                ));
            }
            if overrides.contains(&0) {
                return Err(Error::Config("per-task train volume must be >= 1".into()));
            }
        }
        Ok(())
    }

    fn train_volume(&self, task: usize) -> usize {
        self.train_queries_per_task
            .as_ref()
            .map_or(self.train_queries, |v| v[task])
    }
}

/// Generate the dataset plus the topic distance matrix. Centroids are the
/// mean one-hot vectors of each topic's token pool over the global
/// vocabulary, so distances shrink exactly monotonically in `overlap`.
pub fn generate(config: &SyntheticConfig) -> Result<(ContinualDataset, TopicDistanceMatrix)> {
    config.validate()?;
    let topical = config.vocab_per_topic;
    let commons = config.common_tokens;
    let shared_count = (config.overlap * topical as f64).round() as usize;

    // Token pools: the global common pool, then the alpha-shared prefix,
    // then the per-topic private remainder.
    let pools: Vec<Vec<String>> = (0..config.tasks)
        .map(|t| {
            let mut pool: Vec<String> = (0..commons).map(|j| format!("common{j}")).collect();
            pool.extend((0..shared_count).map(|j| format!("shared{j}")));
            pool.extend((0..topical - shared_count).map(|j| format!("topic{t}word{j}")));
            pool
        })
        .collect();

    // One global permutation assigns every anchor its associate POSITION
    // in the topical segment; the token at that position depends on the
    // topic, so associates coincide across topics exactly where the pools
    // overlap.
    let assoc: Vec<usize> = {
        let mut positions: Vec<usize> = (0..topical).collect();
        use rand::seq::SliceRandom;
        positions.shuffle(&mut seeding::stream(config.seed, "synthetic-assoc", 0));
        positions
    };

    let mut tasks = Vec::with_capacity(config.tasks);
    for t in 0..config.tasks {
        let pool = &pools[t];
        let mut rng = seeding::stream(config.seed, "synthetic-task", t as u64);
        let mut build_split = |queries: usize, split: &str| -> Vec<Sample> {
            let mut rows = Vec::with_capacity(queries * config.docs_per_query);
            for q in 0..queries {
                let query_id = format!("q{}_{split}_{q}", t + 1);
                let (query_idx, pos_idx, neg_core): (Vec<usize>, Vec<usize>, Vec<Vec<usize>>) =
                    match config.style {
                        SyntheticStyle::Lexical => {
                            // Query from the topical pool; the relevant doc
                            // repeats roughly half of the query's tokens.
                            let query_idx: Vec<usize> =
                                index::sample(&mut rng, topical, config.query_tokens)
                                    .into_vec()
                                    .into_iter()
                                    .map(|i| commons + i)
                                    .collect();
                            let keep = config.query_tokens.div_ceil(2).min(config.doc_tokens);
                            let pos = query_idx[..keep].to_vec();
                            (query_idx, pos, vec![Vec::new(); config.docs_per_query - 1])
                        }
                        SyntheticStyle::Semantic => {
                            // Query anchors on commons; the relevant doc
                            // carries each anchor's topic associate.
                            let anchors =
                                index::sample(&mut rng, commons, config.query_tokens).into_vec();
                            let pos: Vec<usize> = anchors
                                .iter()
                                .map(|&a| commons + assoc[a % topical])
                                .collect();
                            let n_others = config.query_tokens.min(commons - config.query_tokens);
                            let negs = (1..config.docs_per_query)
                                .map(|_| {
                                    // Associates of other anchors.
                                    let mut others = Vec::with_capacity(n_others);
                                    while others.len() < n_others {
                                        let cand = rng.random_range(0..commons);
                                        if !anchors.contains(&cand) && !others.contains(&cand) {
                                            others.push(cand);
                                        }
                                    }
                                    others
                                        .into_iter()
                                        .map(|a| commons + assoc[a % topical])
                                        .collect()
                                })
                                .collect();
                            (anchors, pos, negs)
                        }
                    };
                let query_text = join(pool, &query_idx);

                let mut doc_idx = pos_idx;
                while doc_idx.len() < config.doc_tokens {
                    doc_idx.push(commons + rng.random_range(0..topical));
                }
                rows.push(Sample {
                    query_id: query_id.clone(),
                    query_text: query_text.clone(),
                    doc_id: format!("d{}_{split}_{q}_0", t + 1),
                    doc_text: join(pool, &doc_idx),
                    relevance: 1.0,
                });

                for (j, core) in neg_core.into_iter().enumerate() {
                    let mut neg_idx = core;
                    while neg_idx.len() < config.doc_tokens {
                        let cand = commons + rng.random_range(0..topical);
                        if !query_idx.contains(&cand) {
                            neg_idx.push(cand);
                        }
                    }
                    rows.push(Sample {
                        query_id: query_id.clone(),
                        query_text: query_text.clone(),
                        doc_id: format!("d{}_{split}_{q}_{}", t + 1, j + 1),
                        doc_text: join(pool, &neg_idx),
                        relevance: 0.0,
                    });
                }
            }
            rows
        };
        let train = build_split(config.train_volume(t), "train");
        let test = build_split(config.test_queries, "test");
        tasks.push(TaskData {
            task_id: t + 1,
            topic: format!("topic{}", t + 1),
            train,
            test,
        });
    }

    let distances = distance_matrix(&pools, config.tasks);
    let dataset = ContinualDataset::from_tasks(tasks)?;
    Ok((dataset, distances))
}

fn join(pool: &[String], idx: &[usize]) -> String {
    idx.iter()
        .map(|&i| pool[i].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn distance_matrix(pools: &[Vec<String>], tasks: usize) -> TopicDistanceMatrix {
    // Global vocabulary across all pools, then mean one-hot per topic.
    let mut global: Vec<&String> = pools.iter().flatten().collect();
    global.sort();
    global.dedup();
    let index_of = |token: &String| global.binary_search(&token).expect("token in global vocab");
    let centroids: Vec<Vec<f64>> = pools
        .iter()
        .map(|pool| {
            let mut c = vec![0.0; global.len()];
            for token in pool {
                c[index_of(token)] += 1.0 / pool.len() as f64;
            }
            c
        })
        .collect();
    if tasks == 1 {
        // Degenerate 1x1 matrix for single-topic runs.
        return TopicDistanceMatrix {
            centroids,
            distances: vec![vec![0.0]],
        };
    }
    TopicDistanceMatrix::from_centroids(&centroids)
}
