//! Retrieval and continual-learning metrics.
//!
//! Mean reciprocal rank over ranked runs, the task-by-task performance
//! matrix, the three aggregates derived from it (final performance,
//! backward transfer, forward transfer), and Pearson correlation for the
//! topic-shift and data-volume analyses.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// One evaluated query: candidates ordered by descending score with ties
/// broken by ascending doc id, plus the set of relevant doc ids.
#[derive(Debug, Clone)]
pub struct RankedQuery {
    pub query_id: String,
    pub ranked_docs: Vec<String>,
    pub relevant: BTreeSet<String>,
}

/// A full ranked run over a test set.
#[derive(Debug, Clone, Default)]
pub struct RankedRun {
    pub queries: Vec<RankedQuery>,
}

impl RankedRun {
    /// Build a run from raw scores. Candidates are sorted by descending
    /// score; equal scores are ordered by ascending doc id so runs are
    /// reproducible across platforms.
    pub fn from_scores<I>(queries: I) -> Self
    where
        I: IntoIterator<Item = (String, Vec<(String, f64)>, BTreeSet<String>)>,
    {
        let queries = queries
            .into_iter()
            .map(|(query_id, mut candidates, relevant)| {
                assert!(
                    !candidates.is_empty(),
                    "query {query_id} has no candidates"
                );
                candidates.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1)
                        .expect("candidate scores must be comparable")
                        .then_with(|| a.0.cmp(&b.0))
                });
                RankedQuery {
                    query_id,
                    ranked_docs: candidates.into_iter().map(|(d, _)| d).collect(),
                    relevant,
                }
            })
            .collect();
        RankedRun { queries }
    }
}

/// Mean reciprocal rank outcome.
#[derive(Debug, Clone, Copy)]
pub struct Mrr {
    pub value: f64,
    /// Queries dropped because their relevance set was empty.
    pub skipped_queries: usize,
}

/// Mean reciprocal rank.
///
/// Queries with an empty relevance set are skipped (and counted); queries
/// whose candidate list contains no relevant doc contribute 0. With a
/// cutoff `c`, a first relevant rank beyond `c` also contributes 0.
pub fn mrr(run: &RankedRun, cutoff: Option<usize>) -> Result<Mrr> {
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for query in &run.queries {
        if query.relevant.is_empty() {
            skipped += 1;
            continue;
        }
        counted += 1;
        let first_hit = query
            .ranked_docs
            .iter()
            .position(|d| query.relevant.contains(d));
        if let Some(pos) = first_hit {
            let rank = pos + 1;
            if cutoff.is_none_or(|c| rank <= c) {
                total += 1.0 / rank as f64;
            }
        }
    }
    if counted == 0 {
        return Err(Error::Validation(
            "mrr over a run with no scoreable queries".into(),
        ));
    }
    Ok(Mrr {
        value: total / counted as f64,
        skipped_queries: skipped,
    })
}

/// T x T matrix of performance scores; entry `(t, s)` holds the score on
/// test set `s` after training task `t`. Task indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    tasks: usize,
    entries: Vec<Option<f64>>,
}

impl PerformanceMatrix {
    pub fn new(tasks: usize) -> Self {
        assert!(tasks >= 1, "performance matrix needs at least one task");
        PerformanceMatrix {
            tasks,
            entries: vec![None; tasks * tasks],
        }
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    /// Set entry `(t, s)`, both 1-based. Scores must lie in `[0, 1]`.
    pub fn set(&mut self, t: usize, s: usize, value: f64) {
        assert!(
            (0.0..=1.0).contains(&value),
            "performance score {value} outside [0, 1]"
        );
        let idx = self.index(t, s);
        self.entries[idx] = Some(value);
    }

    pub fn get(&self, t: usize, s: usize) -> Option<f64> {
        self.entries[self.index(t, s)]
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(Option::is_some)
    }

    fn index(&self, t: usize, s: usize) -> usize {
        assert!(
            (1..=self.tasks).contains(&t) && (1..=self.tasks).contains(&s),
            "matrix index ({t}, {s}) out of range for T={}",
            self.tasks
        );
        (t - 1) * self.tasks + (s - 1)
    }

    fn require(&self, t: usize, s: usize) -> Result<f64> {
        self.get(t, s)
            .ok_or_else(|| Error::Validation(format!("matrix entry ({t}, {s}) not populated")))
    }

    /// Serialize as CSV: header row `t\s,1..T`, one row per t, six decimal
    /// places. Unpopulated entries render as empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t\\s");
        for s in 1..=self.tasks {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
        for t in 1..=self.tasks {
            out.push_str(&t.to_string());
            for s in 1..=self.tasks {
                match self.get(t, s) {
                    Some(v) => out.push_str(&format!(",{v:.6}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV emitted by [`to_csv`].
    ///
    /// [`to_csv`]: PerformanceMatrix::to_csv
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse("P matrix", 1, "empty file"))?;
        let tasks = header.split(',').count().saturating_sub(1);
        if tasks == 0 {
            return Err(Error::parse("P matrix", 1, "no task columns"));
        }
        let mut matrix = PerformanceMatrix::new(tasks);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let t: usize = cells
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|_| Error::parse("P matrix", i + 1, "bad row label"))?;
            for (s, cell) in cells.enumerate() {
                if cell.is_empty() {
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::parse("P matrix", i + 1, "bad cell"))?;
                matrix.set(t, s + 1, v);
            }
        }
        Ok(matrix)
    }
}

/// Average performance of the final model over all test sets:
/// `(1/T) * sum_t P[T, t]`.
pub fn p_final(matrix: &PerformanceMatrix) -> Result<f64> {
    let t_last = matrix.tasks();
    let mut total = 0.0;
    for s in 1..=t_last {
        total += matrix.require(t_last, s)?;
    }
    Ok(total / t_last as f64)
}

/// Backward transfer: `(2 / (T(T-1))) * sum_{t=2..T} sum_{s=1..t}
/// (P[t,s] - P[s,s])`. Negative values indicate forgetting.
pub fn bwt(matrix: &PerformanceMatrix) -> Result<f64> {
    let tasks = matrix.tasks();
    if tasks < 2 {
        return Err(Error::Validation("bwt needs at least two tasks".into()));
    }
    let mut total = 0.0;
    for t in 2..=tasks {
        for s in 1..=t {
            total += matrix.require(t, s)? - matrix.require(s, s)?;
        }
    }
    Ok(2.0 * total / (tasks * (tasks - 1)) as f64)
}

/// Forward transfer: `(2 / (T(T-1))) * sum_{t=1..T-1} sum_{s=t+1..T}
/// P[t,s]`.
pub fn fwt(matrix: &PerformanceMatrix) -> Result<f64> {
    let tasks = matrix.tasks();
    if tasks < 2 {
        return Err(Error::Validation("fwt needs at least two tasks".into()));
    }
    let mut total = 0.0;
    for t in 1..tasks {
        for s in t + 1..=tasks {
            total += matrix.require(t, s)?;
        }
    }
    Ok(2.0 * total / (tasks * (tasks - 1)) as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Validation("pearson inputs differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::Validation("pearson needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Validation("pearson input has zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean and standard error (`sd / sqrt(n)`, sample standard deviation);
/// the standard error is `None` for a single observation.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    assert!(!xs.is_empty(), "mean of empty slice");
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt() / n.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run_from(ranks: &[(&str, &[&str], &[&str])]) -> RankedRun {
        RankedRun {
            queries: ranks
                .iter()
                .map(|(q, docs, rel)| RankedQuery {
                    query_id: q.to_string(),
                    ranked_docs: docs.iter().map(|d| d.to_string()).collect(),
                    relevant: rel.iter().map(|d| d.to_string()).collect(),
                })
                .collect(),
        }
    }

    /// Brute-force P_final/BWT/FWT straight from the definitions, kept
    /// independent of the production code paths above.
    fn oracle_aggregates(p: &[Vec<f64>]) -> (f64, f64, f64) {
        let t_n = p.len();
        let pf = (0..t_n).map(|s| p[t_n - 1][s]).sum::<f64>() / t_n as f64;
        let mut bwt_sum = 0.0;
        for t in 1..t_n {
            for s in 0..=t {
                bwt_sum += p[t][s] - p[s][s];
            }
        }
        let mut fwt_sum = 0.0;
        for t in 0..t_n {
            for s in 0..t_n {
                if s > t {
                    fwt_sum += p[t][s];
                }
            }
        }
        let denom = (t_n * (t_n - 1)) as f64;
        (pf, 2.0 * bwt_sum / denom, 2.0 * fwt_sum / denom)
    }

    fn matrix_from(p: &[Vec<f64>]) -> PerformanceMatrix {
        let mut m = PerformanceMatrix::new(p.len());
        for (t, row) in p.iter().enumerate() {
            for (s, &v) in row.iter().enumerate() {
                m.set(t + 1, s + 1, v);
            }
        }
        m
    }

    #[test]
    fn mrr_all_first_hits() {
        let run = run_from(&[("q1", &["a", "b"], &["a"]), ("q2", &["c", "d"], &["c"])]);
        assert_eq!(mrr(&run, None).unwrap().value, 1.0);
    }

    #[test]
    fn mrr_hand_worked_example() {
        // ranks 1 and 4 -> (1 + 0.25) / 2 = 0.625
        let run = run_from(&[
            ("q1", &["a", "b", "c", "d"], &["a"]),
            ("q2", &["a", "b", "c", "d"], &["d"]),
        ]);
        assert!((mrr(&run, None).unwrap().value - 0.625).abs() < 1e-12);
    }

    #[test]
    fn mrr_no_relevant_candidate_contributes_zero() {
        let run = run_from(&[("q1", &["a", "b"], &["z"])]);
        assert_eq!(mrr(&run, None).unwrap().value, 0.0);
    }

    #[test]
    fn mrr_empty_relevance_set_is_skipped() {
        let run = run_from(&[("q1", &["a"], &["a"]), ("q2", &["b"], &[])]);
        let out = mrr(&run, None).unwrap();
        assert_eq!(out.value, 1.0);
        assert_eq!(out.skipped_queries, 1);
        let empty = run_from(&[("q1", &["a"], &[])]);
        assert!(mrr(&empty, None).is_err());
    }

    #[test]
    fn mrr_cutoff_drops_deep_hits() {
        let run = run_from(&[("q1", &["a", "b", "c"], &["c"])]);
        assert!((mrr(&run, None).unwrap().value - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(mrr(&run, Some(2)).unwrap().value, 0.0);
    }

    #[test]
    fn ties_break_by_ascending_doc_id() {
        let run = RankedRun::from_scores([(
            "q".to_string(),
            vec![
                ("d2".to_string(), 0.5),
                ("d1".to_string(), 0.5),
                ("d0".to_string(), 0.1),
            ],
            BTreeSet::from(["d2".to_string()]),
        )]);
        assert_eq!(run.queries[0].ranked_docs, vec!["d1", "d2", "d0"]);
        assert_eq!(mrr(&run, None).unwrap().value, 0.5);
    }

    #[test]
    fn aggregate_hand_worked_examples() {
        let p = vec![
            vec![0.5, 0.2, 0.1],
            vec![0.45, 0.6, 0.3],
            vec![0.4, 0.55, 0.7],
        ];
        let m = matrix_from(&p);
        // last row (0.4, 0.55, 0.7) -> 0.55
        assert!((p_final(&m).unwrap() - 0.55).abs() < 1e-12);
        // (1/3)(-0.05 - 0.1 - 0.05) = -0.0667
        assert!((bwt(&m).unwrap() - (-0.2 / 3.0)).abs() < 1e-12);
        // (1/3)(0.2 + 0.1 + 0.3) = 0.2
        assert!((fwt(&m).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn single_task_matrix() {
        let m = matrix_from(&[vec![0.7]]);
        assert_eq!(p_final(&m).unwrap(), 0.7);
        assert!(bwt(&m).is_err());
        assert!(fwt(&m).is_err());
    }

    #[test]
    fn constant_matrix_gives_zero_bwt_and_constant_fwt() {
        let p = 0.37;
        let m = matrix_from(&[vec![p; 4], vec![p; 4], vec![p; 4], vec![p; 4]]);
        assert!((p_final(&m).unwrap() - p).abs() < 1e-12);
        assert!(bwt(&m).unwrap().abs() < 1e-12);
        assert!((fwt(&m).unwrap() - p).abs() < 1e-12);
    }

    #[test]
    fn aggregates_match_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let t_n = rng.random_range(2..6usize);
            let p: Vec<Vec<f64>> = (0..t_n)
                .map(|_| (0..t_n).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let m = matrix_from(&p);
            let (opf, obwt, ofwt) = oracle_aggregates(&p);
            assert!((p_final(&m).unwrap() - opf).abs() < 1e-12);
            assert!((bwt(&m).unwrap() - obwt).abs() < 1e-12);
            assert!((fwt(&m).unwrap() - ofwt).abs() < 1e-12);
        }
    }

    #[test]
    fn incomplete_matrix_is_rejected() {
        let mut m = PerformanceMatrix::new(2);
        m.set(1, 1, 0.5);
        assert!(p_final(&m).is_err());
        assert!(!m.is_complete());
    }

    #[test]
    fn csv_round_trip() {
        let m = matrix_from(&[vec![0.123456, 0.2], vec![0.3, 0.999999]]);
        let csv = m.to_csv();
        assert!(csv.starts_with("t\\s,1,2\n"));
        let back = PerformanceMatrix::from_csv(&csv).unwrap();
        for t in 1..=2 {
            for s in 1..=2 {
                assert!((back.get(t, s).unwrap() - m.get(t, s).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pearson_worked_examples() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap(), -1.0);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn stderr_worked_example() {
        // seeds 0.4 and 0.6 -> mean 0.5, se 0.1
        let (mean, se) = mean_and_stderr(&[0.4, 0.6]);
        assert!((mean - 0.5).abs() < 1e-12);
        assert!((se.unwrap() - 0.1).abs() < 1e-12);
        let (_, single) = mean_and_stderr(&[0.4]);
        assert!(single.is_none());
    }
}
