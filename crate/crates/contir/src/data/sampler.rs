//! Pairwise training-triple construction.
//!
//! One epoch emits every positive row exactly `negatives_per_positive`
//! times, each paired with a negative drawn from the same query's judged
//! non-relevant docs, falling back to other docs of the same origin task.
//! Positives with no reachable negative are skipped and counted.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::RngExt;

use super::dataset::{is_relevant, Sample};
use crate::seeding;

/// A training row tagged with the task it originally came from, so merged
/// replay sets can keep negative sampling within the origin task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedSample {
    pub origin_task: usize,
    pub sample: Sample,
}

pub fn tag_all(task_id: usize, rows: &[Sample]) -> Vec<TaggedSample> {
    rows.iter()
        .map(|sample| TaggedSample {
            origin_task: task_id,
            sample: sample.clone(),
        })
        .collect()
}

/// One pairwise ranking sample: the positive doc outranks the negative.
#[derive(Debug, Clone)]
pub struct Triple {
    pub query_text: String,
    pub pos_text: String,
    pub neg_text: String,
}

/// Outcome of one epoch of triple construction.
#[derive(Debug, Clone)]
pub struct Epoch {
    pub triples: Vec<Triple>,
    /// Positives dropped for lack of any usable negative.
    pub skipped_positives: usize,
}

struct QueryGroup {
    query_text: String,
    origin_task: usize,
    positives: Vec<usize>,
    negatives: Vec<usize>,
    relevant_docs: BTreeSet<String>,
}

/// Build one epoch of pairwise triples from tagged rows, deterministically
/// for a given seed.
pub fn pairwise_epoch(rows: &[TaggedSample], negatives_per_positive: usize, seed: u64) -> Epoch {
    assert!(negatives_per_positive >= 1, "need >= 1 negative per positive");
    let mut groups: Vec<QueryGroup> = Vec::new();
    let mut group_index: HashMap<(usize, String), usize> = HashMap::new();
    let mut task_rows: HashMap<usize, Vec<usize>> = HashMap::new();

    for (idx, tagged) in rows.iter().enumerate() {
        let key = (tagged.origin_task, tagged.sample.query_id.clone());
        let gid = *group_index.entry(key).or_insert_with(|| {
            groups.push(QueryGroup {
                query_text: tagged.sample.query_text.clone(),
                origin_task: tagged.origin_task,
                positives: Vec::new(),
                negatives: Vec::new(),
                relevant_docs: BTreeSet::new(),
            });
            groups.len() - 1
        });
        if is_relevant(tagged.sample.relevance) {
            groups[gid].positives.push(idx);
            groups[gid].relevant_docs.insert(tagged.sample.doc_id.clone());
        } else {
            groups[gid].negatives.push(idx);
        }
        task_rows.entry(tagged.origin_task).or_default().push(idx);
    }

    let mut positives: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(gid, g)| g.positives.iter().map(move |&row| (gid, row)))
        .collect();
    let mut rng = seeding::stream(seed, "pairwise-epoch", 0);
    positives.shuffle(&mut rng);

    let mut triples = Vec::new();
    let mut skipped = 0usize;
    for (gid, pos_row) in positives {
        let group = &groups[gid];
        for _ in 0..negatives_per_positive {
            let neg_row = if !group.negatives.is_empty() {
                Some(group.negatives[rng.random_range(0..group.negatives.len())])
            } else {
                sample_task_negative(group, &task_rows, rows, &mut rng)
            };
            match neg_row {
                Some(neg) => triples.push(Triple {
                    query_text: group.query_text.clone(),
                    pos_text: rows[pos_row].sample.doc_text.clone(),
                    neg_text: rows[neg].sample.doc_text.clone(),
                }),
                None => skipped += 1,
            }
        }
    }
    Epoch {
        triples,
        skipped_positives: skipped,
    }
}

/// Fall back to docs of other queries in the same origin task; docs judged
/// relevant for this query are excluded so the pairwise order y(q,pos) >
/// y(q,neg) still holds under the usual unjudged-is-non-relevant reading.
fn sample_task_negative(
    group: &QueryGroup,
    task_rows: &HashMap<usize, Vec<usize>>,
    rows: &[TaggedSample],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Option<usize> {
    let pool = task_rows.get(&group.origin_task)?;
    let candidates: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&idx| !group.relevant_docs.contains(&rows[idx].sample.doc_id))
        .collect();
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.random_range(0..candidates.len())])
    }
}

/// Fixed-size batches; the final batch keeps the remainder.
pub fn batches(triples: &[Triple], batch_size: usize) -> impl Iterator<Item = &[Triple]> {
    assert!(batch_size >= 1, "batch size must be >= 1");
    triples.chunks(batch_size)
}
