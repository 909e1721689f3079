//! Task datasets and the on-disk TSV format.
//!
//! Each task ships as `task_<t>.train.tsv` / `task_<t>.test.tsv` with a
//! header row and the columns
//! `query_id  query_text  doc_id  doc_text  relevance` (tab-separated),
//! task indices starting at 1.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use super::text::{tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::seeding::fnv1a;

pub const TSV_HEADER: &str = "query_id\tquery_text\tdoc_id\tdoc_text\trelevance";

/// Relevance at or above this threshold counts as "relevant".
pub const RELEVANCE_THRESHOLD: f64 = 0.5;

pub fn is_relevant(relevance: f64) -> bool {
    relevance >= RELEVANCE_THRESHOLD
}

/// One query-document judgment row.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub query_id: String,
    pub query_text: String,
    pub doc_id: String,
    pub doc_text: String,
    pub relevance: f64,
}

/// Training and test rows for one task.
#[derive(Debug, Clone)]
pub struct TaskData {
    /// 1-based task index.
    pub task_id: usize,
    pub topic: String,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// The ordered task sequence plus the shared vocabulary built over it.
#[derive(Debug, Clone)]
pub struct ContinualDataset {
    pub tasks: Vec<TaskData>,
    pub vocab: Vocabulary,
}

impl ContinualDataset {
    /// Assemble from tasks: builds the shared vocabulary (token ids in
    /// first-seen order) and validates every invariant.
    pub fn from_tasks(tasks: Vec<TaskData>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Validation("dataset has no tasks".into()));
        }
        let mut vocab = Vocabulary::new();
        for task in &tasks {
            for sample in task.train.iter().chain(&task.test) {
                for token in tokenize(&sample.query_text) {
                    vocab.add(&token);
                }
                for token in tokenize(&sample.doc_text) {
                    vocab.add(&token);
                }
            }
        }
        let dataset = ContinualDataset { tasks, vocab };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    fn validate(&self) -> Result<()> {
        for task in &self.tasks {
            for (split, rows) in [("train", &task.train), ("test", &task.test)] {
                let mut seen = HashSet::new();
                for sample in rows {
                    if !seen.insert((sample.query_id.clone(), sample.doc_id.clone())) {
                        return Err(Error::Validation(format!(
                            "task {} {split}: duplicate pair ({}, {})",
                            task.task_id, sample.query_id, sample.doc_id
                        )));
                    }
                    if tokenize(&sample.query_text).is_empty() {
                        return Err(Error::Validation(format!(
                            "task {} {split}: query {} tokenizes to nothing",
                            task.task_id, sample.query_id
                        )));
                    }
                    if tokenize(&sample.doc_text).is_empty() {
                        return Err(Error::Validation(format!(
                            "task {} {split}: doc {} tokenizes to nothing",
                            task.task_id, sample.doc_id
                        )));
                    }
                }
            }
            // Every test query needs at least one relevant and one
            // non-relevant candidate for MRR to be meaningful.
            let mut per_query: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for sample in &task.test {
                let entry = per_query.entry(&sample.query_id).or_default();
                if is_relevant(sample.relevance) {
                    entry.0 += 1;
                } else {
                    entry.1 += 1;
                }
            }
            for (query, (rel, nonrel)) in per_query {
                if rel == 0 || nonrel == 0 {
                    return Err(Error::Validation(format!(
                        "task {} test query {query} needs >= 1 relevant and >= 1 \
                         non-relevant candidate (has {rel} / {nonrel})",
                        task.task_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Read `task_<t>.{train,test}.tsv` files from a directory, starting at
    /// t = 1 and stopping at the first missing index.
    pub fn ingest(root: &Path) -> Result<Self> {
        let mut tasks = Vec::new();
        let mut t = 1usize;
        loop {
            let train_path = root.join(format!("task_{t}.train.tsv"));
            let test_path = root.join(format!("task_{t}.test.tsv"));
            if !train_path.exists() {
                break;
            }
            if !test_path.exists() {
                return Err(Error::Validation(format!(
                    "task {t} has a train file but no test file"
                )));
            }
            tasks.push(TaskData {
                task_id: t,
                topic: format!("task{t}"),
                train: read_tsv(&train_path)?,
                test: read_tsv(&test_path)?,
            });
            t += 1;
        }
        if tasks.is_empty() {
            return Err(Error::Validation(format!(
                "no task_1.train.tsv under {}",
                root.display()
            )));
        }
        Self::from_tasks(tasks)
    }

    /// Write every task back out as TSV files.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for task in &self.tasks {
            for (split, rows) in [("train", &task.train), ("test", &task.test)] {
                let path = dir.join(format!("task_{}.{split}.tsv", task.task_id));
                let mut out = String::from(TSV_HEADER);
                out.push('\n');
                for s in rows {
                    for field in [&s.query_id, &s.query_text, &s.doc_id, &s.doc_text] {
                        if field.contains('\t') || field.contains('\n') {
                            return Err(Error::Validation(format!(
                                "field {field:?} contains a tab or newline"
                            )));
                        }
                    }
                    out.push_str(&format!(
                        "{}\t{}\t{}\t{}\t{}\n",
                        s.query_id, s.query_text, s.doc_id, s.doc_text, s.relevance
                    ));
                }
                fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
            }
        }
        Ok(())
    }

    /// Content hash covering every row of every task, for run manifests.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for task in &self.tasks {
            bytes.extend_from_slice(&task.task_id.to_le_bytes());
            for (tag, rows) in [(b'r', &task.train), (b'e', &task.test)] {
                bytes.push(tag);
                for s in rows {
                    for field in [&s.query_id, &s.query_text, &s.doc_id, &s.doc_text] {
                        bytes.extend_from_slice(field.as_bytes());
                        bytes.push(0);
                    }
                    bytes.extend_from_slice(&s.relevance.to_le_bytes());
                }
            }
        }
        fnv1a(bytes)
    }
}

fn read_tsv(path: &Path) -> Result<Vec<Sample>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != TSV_HEADER {
                return Err(Error::parse(&name, 1, "missing or malformed header row"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(
                &name,
                i + 1,
                format!("expected 5 tab-separated columns, got {}", cols.len()),
            ));
        }
        let relevance: f64 = cols[4].parse().map_err(|_| {
            Error::parse(&name, i + 1, format!("non-numeric relevance {:?}", cols[4]))
        })?;
        rows.push(Sample {
            query_id: cols[0].to_string(),
            query_text: cols[1].to_string(),
            doc_id: cols[2].to_string(),
            doc_text: cols[3].to_string(),
            relevance,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_task(task_id: usize) -> TaskData {
        let mk = |q: usize, d: usize, y: f64| Sample {
            query_id: format!("q{task_id}_{q}"),
            query_text: format!("alpha beta q{q}"),
            doc_id: format!("d{task_id}_{q}_{d}"),
            doc_text: format!("gamma delta doc{d} topic{task_id}"),
            relevance: y,
        };
        TaskData {
            task_id,
            topic: format!("topic{task_id}"),
            train: vec![mk(1, 1, 1.0), mk(1, 2, 0.0), mk(2, 1, 1.0), mk(2, 2, 0.0)],
            test: vec![mk(3, 1, 1.0), mk(3, 2, 0.0)],
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let dataset = ContinualDataset::from_tasks(vec![toy_task(1), toy_task(2)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        dataset.write(dir.path()).unwrap();
        let back = ContinualDataset::ingest(dir.path()).unwrap();
        assert_eq!(back.task_count(), 2);
        for (a, b) in dataset.tasks.iter().zip(&back.tasks) {
            assert_eq!(a.train, b.train);
            assert_eq!(a.test, b.test);
        }
        assert_eq!(dataset.fingerprint(), back.fingerprint());
    }

    #[test]
    fn test_query_without_relevant_doc_is_rejected() {
        let mut task = toy_task(1);
        task.test.retain(|s| !is_relevant(s.relevance));
        let err = ContinualDataset::from_tasks(vec![task]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("q1_3"), "error should name the query: {msg}");
    }

    #[test]
    fn bad_column_count_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task_1.train.tsv");
        fs::write(&path, format!("{TSV_HEADER}\nq1\tonly three\tcols\n")).unwrap();
        fs::write(
            dir.path().join("task_1.test.tsv"),
            format!("{TSV_HEADER}\n"),
        )
        .unwrap();
        let err = ContinualDataset::ingest(dir.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "got {err}");
    }

    #[test]
    fn non_numeric_relevance_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("task_1.train.tsv"),
            format!("{TSV_HEADER}\nq1\ttext a\td1\ttext b\thigh\n"),
        )
        .unwrap();
        fs::write(
            dir.path().join("task_1.test.tsv"),
            format!("{TSV_HEADER}\n"),
        )
        .unwrap();
        let err = ContinualDataset::ingest(dir.path()).unwrap_err();
        assert!(err.to_string().contains("non-numeric relevance"));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ContinualDataset::from_tasks(vec![toy_task(1)]).unwrap();
        let mut modified = toy_task(1);
        modified.train[0].relevance = 0.75;
        let b = ContinualDataset::from_tasks(vec![modified]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
