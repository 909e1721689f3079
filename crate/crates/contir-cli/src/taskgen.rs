//! `taskgen`: write task files plus the topic distance matrix, either from
//! the synthetic generator or by clustering a flat corpus TSV.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use contir::data::dataset::TSV_HEADER;
use contir::data::kmeans::{kmeans_best_of, TopicDistanceMatrix};
use contir::data::{
    generate_synthetic, is_relevant, ContinualDataset, EmbeddingMatrix, Sample, TaskData,
    Vocabulary,
};
use contir::seeding;

use crate::config::ExperimentConfig;

pub fn taskgen(config: &ExperimentConfig, out: &Path, seed_override: Option<u64>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let seed = seed_override.unwrap_or(config.dataset.seed);
    let distances = match config.dataset.source.as_str() {
        "synthetic" => {
            let mut synth = config.dataset.synthetic_config();
            synth.seed = seed;
            let (dataset, distances) = generate_synthetic(&synth)?;
            dataset.write(out)?;
            println!(
                "wrote {} synthetic tasks ({} train / {} test queries each) to {}",
                dataset.task_count(),
                config.dataset.train_queries,
                config.dataset.test_queries,
                out.display()
            );
            distances
        }
        "corpus" => {
            let corpus_path = config.dataset.path.as_ref().expect("validated");
            let embedding_path = config.embeddings.file.as_ref().expect("validated");
            let clusters = config.dataset.clusters.expect("validated");
            let (dataset, distances) = split_corpus(
                corpus_path,
                embedding_path,
                clusters,
                config.dataset.train_fraction,
                seed,
            )?;
            dataset.write(out)?;
            println!(
                "clustered corpus into {} tasks, wrote files to {}",
                dataset.task_count(),
                out.display()
            );
            distances
        }
        other => bail!("taskgen does not apply to dataset.source {other:?}"),
    };
    let csv_path = out.join("topic_distances.csv");
    std::fs::write(&csv_path, distances.to_csv())?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// Cluster corpus queries by the mean embedding of their tokens and split
/// rows into per-cluster tasks. Queries whose candidate pool lacks either
/// a relevant or a non-relevant doc stay in the training split.
fn split_corpus(
    corpus: &Path,
    embeddings: &Path,
    clusters: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(ContinualDataset, TopicDistanceMatrix)> {
    let rows = read_corpus(corpus)?;
    if rows.is_empty() {
        bail!("corpus {} has no rows", corpus.display());
    }
    // Group rows per query, first-seen order.
    let mut queries: Vec<(String, String, Vec<Sample>)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for row in rows {
        match index.get(&row.query_id) {
            Some(&i) => queries[i].2.push(row),
            None => {
                index.insert(row.query_id.clone(), queries.len());
                queries.push((row.query_id.clone(), row.query_text.clone(), vec![row]));
            }
        }
    }

    // Mean query-token embedding per query.
    let mut vocab = Vocabulary::new();
    for (_, text, _) in &queries {
        for token in contir::data::tokenize(text) {
            vocab.add(&token);
        }
    }
    let table = EmbeddingMatrix::load(embeddings, &vocab, seed)
        .with_context(|| format!("loading embeddings {}", embeddings.display()))?;
    let points: Vec<Vec<f64>> = queries
        .iter()
        .map(|(_, text, _)| {
            let ids: Vec<usize> = contir::data::tokenize(text)
                .iter()
                .map(|t| vocab.lookup(t))
                .collect();
            let mut mean = vec![0.0; table.dim()];
            for &id in &ids {
                for (m, v) in mean.iter_mut().zip(table.row(id)) {
                    *m += v;
                }
            }
            let n = ids.len().max(1) as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            mean
        })
        .collect();

    let result = kmeans_best_of(&points, clusters, 100, 10, seed)?;
    let distances = TopicDistanceMatrix::from_centroids(&result.centroids);

    // Assemble tasks per cluster with a seeded train/test query split.
    let mut tasks = Vec::new();
    for cluster in 0..clusters {
        let members: Vec<usize> = (0..queries.len())
            .filter(|&q| result.assignments[q] == cluster)
            .collect();
        if members.is_empty() {
            bail!("cluster {cluster} is empty; lower dataset.clusters");
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut order = members.clone();
        use rand::seq::SliceRandom;
        order.shuffle(&mut seeding::stream(seed, "corpus-split", cluster as u64));
        let test_quota = ((1.0 - train_fraction) * order.len() as f64).round() as usize;
        let mut test_taken = 0usize;
        for &q in &order {
            let pool = &queries[q].2;
            let has_rel = pool.iter().any(|s| is_relevant(s.relevance));
            let has_nonrel = pool.iter().any(|s| !is_relevant(s.relevance));
            if test_taken < test_quota && has_rel && has_nonrel {
                test.extend(pool.iter().cloned());
                test_taken += 1;
            } else {
                train.extend(pool.iter().cloned());
            }
        }
        if test.is_empty() {
            bail!(
                "cluster {cluster} has no query with both relevant and non-relevant \
                 candidates; cannot form a test split"
            );
        }
        tasks.push(TaskData {
            task_id: cluster + 1,
            topic: format!("cluster{}", cluster + 1),
            train,
            test,
        });
    }
    Ok((ContinualDataset::from_tasks(tasks)?, distances))
}

fn read_corpus(path: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading corpus {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != TSV_HEADER {
                bail!("{}:1: missing or malformed header row", path.display());
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            bail!(
                "{}:{}: expected 5 tab-separated columns, got {}",
                path.display(),
                i + 1,
                cols.len()
            );
        }
        rows.push(Sample {
            query_id: cols[0].to_string(),
            query_text: cols[1].to_string(),
            doc_id: cols[2].to_string(),
            doc_text: cols[3].to_string(),
            relevance: cols[4]
                .parse()
                .with_context(|| format!("{}:{}: non-numeric relevance", path.display(), i + 1))?,
        });
    }
    Ok(rows)
}
