//! Dataset ingestion, vocabulary and embedding loading, pairwise sampling,
//! topic clustering, and the synthetic multi-topic generator.

pub mod dataset;
pub mod embeddings;
pub mod kmeans;
pub mod sampler;
pub mod synthetic;
pub mod text;

pub use dataset::{is_relevant, ContinualDataset, Sample, TaskData};
pub use embeddings::EmbeddingMatrix;
pub use kmeans::{kmeans, kmeans_best_of, KmeansResult, TopicDistanceMatrix};
pub use sampler::{batches, pairwise_epoch, tag_all, Epoch, TaggedSample, Triple};
pub use synthetic::{generate as generate_synthetic, SyntheticConfig, SyntheticStyle};
pub use text::{tokenize, Vocabulary, PAD_ID, UNK_ID};
