//! The continual-learning agent: trains a ranker over the task sequence
//! under a strategy, evaluates every test set after each task, and fills
//! the performance matrix.
//!
//! Hook order per task: train, then the strategy's end-of-task update
//! (importance or memory), then evaluation of all test sets with the
//! frozen parameters.

mod manifest;

pub use manifest::RunManifest;

use std::path::Path;
use std::time::Instant;

use crate::autodiff::{GradientMap, ParameterSet, SgdOptimizer, Tape, TapeParams, Var};
use crate::data::{
    batches, is_relevant, pairwise_epoch, tag_all, ContinualDataset, EmbeddingMatrix, Sample,
    TaggedSample, Triple,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{bwt, fwt, mrr, p_final, PerformanceMatrix, RankedQuery, RankedRun};
use crate::rankers::{margin_ranking_loss, HeadKind, Ranker, RankerConfig, TfidfStats, TokenizedPair};
use crate::seeding;
use crate::strategies::{
    fisher_importance, gem_project, gem_reference_gradients, l2_importance, mas_importance,
    penalty_gradient, penalty_term, PathIntegral, StrategyConfig, StrategyKind,
    StrategyState, TaskSlice,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub margin: f64,
    /// The constant `y` in the margin ranking loss.
    pub loss_y: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 3,
            batch_size: 32,
            negatives_per_positive: 1,
            margin: 1.0,
            loss_y: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub ranker: RankerConfig,
    pub strategy: StrategyConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub mrr_cutoff: Option<usize>,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.ranker.validate()?;
        self.strategy.validate()?;
        if self.optimizer.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.training.batch_size == 0 || self.training.negatives_per_positive == 0 {
            return Err(Error::Config("batch size and negatives must be >= 1".into()));
        }
        if self.training.margin < 0.0 {
            return Err(Error::Config("margin must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything a finished (or failed-partway) run leaves behind.
#[derive(Debug)]
pub struct RunOutcome {
    pub matrix: PerformanceMatrix,
    pub p_final: f64,
    pub bwt: Option<f64>,
    pub fwt: Option<f64>,
    pub per_task_seconds: Vec<f64>,
    pub manifest: RunManifest,
    pub final_params: ParameterSet,
    /// Smallest importance entry at run end (regularization strategies).
    pub importance_floor: Option<f64>,
    /// Largest memory occupancy observed across the run, against the
    /// configured capacity (replay strategies).
    pub memory_peak: usize,
    pub log: Vec<String>,
}

/// Run the full continual loop over a dataset, optionally persisting
/// `P_matrix.csv`, `metrics.txt`, `manifest`, and `log.txt` into a run
/// directory. On mid-run failure the partial matrix and log are still
/// written before the error propagates.
pub fn run_continual(
    config: &RunConfig,
    dataset: &ContinualDataset,
    embedding: &EmbeddingMatrix,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    config.validate()?;
    let mut manifest = RunManifest::new(config, dataset);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        manifest.write(&dir.join("manifest"))?;
    }
    let start = Instant::now();
    let mut agent = Agent::new(config.clone(), dataset, embedding)?;
    let result = agent.run_all_tasks();
    let log = agent.log.clone();
    if let Some(dir) = out_dir {
        // Persist whatever exists, even on failure.
        write_file(&dir.join("P_matrix.csv"), &agent.matrix.to_csv())?;
        write_file(&dir.join("log.txt"), &(log.join("\n") + "\n"))?;
    }
    result?;

    let total = start.elapsed().as_secs_f64();
    let tasks = dataset.task_count();
    let matrix = agent.matrix.clone();
    let p_final_value = p_final(&matrix)?;
    let bwt_value = (tasks >= 2).then(|| bwt(&matrix)).transpose()?;
    let fwt_value = (tasks >= 2).then(|| fwt(&matrix)).transpose()?;
    manifest.finalize(total);

    if let Some(dir) = out_dir {
        manifest.write(&dir.join("manifest"))?;
        let mut metrics_text = format!("p_final={p_final_value:.6}\n");
        if let Some(b) = bwt_value {
            metrics_text.push_str(&format!("bwt={b:.6}\n"));
        }
        if let Some(f) = fwt_value {
            metrics_text.push_str(&format!("fwt={f:.6}\n"));
        }
        for (t, secs) in agent.per_task_seconds.iter().enumerate() {
            metrics_text.push_str(&format!("task_{}_seconds={secs:.3}\n", t + 1));
        }
        write_file(&dir.join("metrics.txt"), &metrics_text)?;
    }

    Ok(RunOutcome {
        matrix,
        p_final: p_final_value,
        bwt: bwt_value,
        fwt: fwt_value,
        per_task_seconds: agent.per_task_seconds.clone(),
        manifest,
        final_params: agent.params.clone(),
        importance_floor: agent.strategy.importance.min_entry(),
        memory_peak: agent.memory_peak,
        log,
    })
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Evaluate one test set with an arbitrary scorer: candidates are grouped
/// per query (first-seen order), scored, ranked with the deterministic
/// tie-break, and reduced to MRR. Queries run data-parallel; the reduction
/// is in query order.
pub fn evaluate_task<F>(score_fn: &F, test: &[Sample], cutoff: Option<usize>) -> Result<f64>
where
    F: Fn(&[&Sample]) -> Result<Vec<f64>> + Sync,
{
    if test.is_empty() {
        return Err(Error::Validation("empty test set".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: std::collections::HashMap<&str, Vec<&Sample>> =
        std::collections::HashMap::new();
    for sample in test {
        let entry = groups.entry(&sample.query_id).or_default();
        if entry.is_empty() {
            order.push(&sample.query_id);
        }
        entry.push(sample);
    }
    let grouped: Vec<Vec<&Sample>> = order.into_iter().map(|q| groups[q].clone()).collect();
    let ranked: Vec<Result<RankedQuery>> = exec::map(&grouped, |rows| {
        let scores = score_fn(rows)?;
        let candidates: Vec<(String, f64)> = rows
            .iter()
            .zip(&scores)
            .map(|(r, &s)| (r.doc_id.clone(), s))
            .collect();
        let relevant = rows
            .iter()
            .filter(|r| is_relevant(r.relevance))
            .map(|r| r.doc_id.clone())
            .collect();
        let run = RankedRun::from_scores([(rows[0].query_id.clone(), candidates, relevant)]);
        Ok(run.queries.into_iter().next().expect("one query"))
    });
    let queries = ranked.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(mrr(&RankedRun { queries }, cutoff)?.value)
}

struct Agent<'d> {
    config: RunConfig,
    dataset: &'d ContinualDataset,
    ranker: Ranker,
    params: ParameterSet,
    optimizer: SgdOptimizer,
    strategy: StrategyState,
    /// Parameters at the start of the task currently being trained.
    task_start: Option<ParameterSet>,
    memory_peak: usize,
    matrix: PerformanceMatrix,
    per_task_seconds: Vec<f64>,
    log: Vec<String>,
}

impl<'d> Agent<'d> {
    fn new(
        config: RunConfig,
        dataset: &'d ContinualDataset,
        embedding: &EmbeddingMatrix,
    ) -> Result<Self> {
        let ranker = Ranker::new(config.ranker.clone())?;
        let params = ranker.init_params(embedding, config.seed)?;
        let optimizer = SgdOptimizer::new(config.optimizer.learning_rate, config.optimizer.momentum);
        let strategy = StrategyState::new(config.strategy.clone())?;
        let mut log = Vec::new();
        if strategy.config.kind == StrategyKind::Nr && strategy.config.memory_capacity == 0 {
            log.push("warning: nr with capacity 0 degenerates to the baseline".to_string());
        }
        Ok(Agent {
            matrix: PerformanceMatrix::new(dataset.task_count()),
            config,
            dataset,
            ranker,
            params,
            optimizer,
            strategy,
            task_start: None,
            memory_peak: 0,
            per_task_seconds: Vec::new(),
            log,
        })
    }

    fn run_all_tasks(&mut self) -> Result<()> {
        for t in 1..=self.dataset.task_count() {
            let started = Instant::now();
            let task_rows = self.dataset.tasks[t - 1].train.clone();
            let training_rows = if self.strategy.config.kind == StrategyKind::Nr {
                self.strategy.memory.merged_training(
                    t,
                    &task_rows,
                    seeding::mix(self.config.seed, "nr-merge", t as u64),
                )
            } else {
                tag_all(t, &task_rows)
            };
            self.train_task(t, &training_rows)?;
            self.end_of_task(t, &task_rows)?;
            self.per_task_seconds.push(started.elapsed().as_secs_f64());
            self.evaluate_row(t)?;
        }
        Ok(())
    }

    fn train_task(&mut self, task: usize, rows: &[TaggedSample]) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::Train(format!("task {task} has no training rows")));
        }
        if self.ranker.head() == HeadKind::Duet {
            self.ranker.set_tfidf(self.tfidf_over(rows));
        }
        if self.strategy.config.kind == StrategyKind::Si {
            self.strategy.path = PathIntegral::zeros_like(&self.params);
            self.task_start = Some(self.params.clone());
        }
        for epoch in 0..self.config.training.epochs {
            let salt = (task as u64) << 16 | epoch as u64;
            let ep = pairwise_epoch(
                rows,
                self.config.training.negatives_per_positive,
                seeding::mix(self.config.seed, "train-epoch", salt),
            );
            if ep.skipped_positives > 0 {
                self.log.push(format!(
                    "task {task} epoch {epoch}: skipped {} positives without negatives",
                    ep.skipped_positives
                ));
            }
            for batch in batches(&ep.triples, self.config.training.batch_size) {
                self.train_batch(task, batch).map_err(|e| {
                    Error::Train(format!("task {task} epoch {epoch} aborted: {e}"))
                })?;
            }
        }
        Ok(())
    }

    fn train_batch(&mut self, _task: usize, batch: &[Triple]) -> Result<()> {
        let tape = Tape::new();
        let attached = self.params.attach(&tape);
        let (pos, neg) = self.batch_scores(&tape, &attached, batch)?;
        let base_loss = margin_ranking_loss(
            &pos,
            &neg,
            self.config.training.margin,
            self.config.training.loss_y,
        );
        let loss = if self.penalty_active() {
            let penalty = penalty_term(
                &tape,
                &attached,
                self.strategy.anchor.as_ref().expect("anchor set"),
                &self.strategy.importance,
                self.strategy.config.lambda,
            );
            base_loss.add(&penalty)
        } else {
            base_loss
        };
        loss.scalar_value()
            .map_err(|_| Error::Train("non-finite loss".into()))?;
        let mut grads = tape.backward(&loss, &self.params)?;

        if self.strategy.config.kind == StrategyKind::Gem && !self.strategy.memory.is_empty() {
            grads = self.gem_step(grads)?;
        }

        let before = (self.strategy.config.kind == StrategyKind::Si).then(|| self.params.clone());
        self.optimizer.step(&mut self.params, &grads)?;
        Ranker::enforce_frozen_rows(&mut self.params);

        if let Some(before) = before {
            // SI accumulates over the unregularized-loss gradient; strip
            // the analytic penalty contribution from the total gradient.
            let unregularized = if self.penalty_active() {
                let penalty_grad = penalty_gradient(
                    &before,
                    self.strategy.anchor.as_ref().expect("anchor set"),
                    &self.strategy.importance,
                    self.strategy.config.lambda,
                );
                subtract(&grads, &penalty_grad)
            } else {
                grads
            };
            self.strategy
                .path
                .accumulate(&unregularized, &before, &self.params);
        }
        Ok(())
    }

    fn penalty_active(&self) -> bool {
        self.strategy.config.kind.is_regularization()
            && self.strategy.anchor.is_some()
            && !self.strategy.importance.is_empty()
    }

    fn gem_step(&mut self, grads: GradientMap) -> Result<GradientMap> {
        let reference = gem_reference_gradients(&self.strategy.memory, |slice| {
            self.slice_gradient(slice)
        })?;
        let outcome = gem_project(
            &grads.flatten(),
            &reference,
            self.strategy.config.gem_ridge,
        );
        if !outcome.qp_converged {
            self.log
                .push("warning: gem dual qp hit the iteration cap; gradient unprojected".into());
            return Ok(grads);
        }
        if outcome.projected {
            return Ok(GradientMap::unflatten_like(&self.params, &outcome.gradient));
        }
        Ok(grads)
    }

    /// Unregularized-loss gradient of one memory slice as a single batch.
    fn slice_gradient(&self, slice: &TaskSlice) -> Result<GradientMap> {
        let tagged = tag_all(slice.task_id, &slice.samples);
        let ep = pairwise_epoch(
            &tagged,
            1,
            seeding::mix(self.config.seed, "gem-memory", slice.task_id as u64),
        );
        if ep.triples.is_empty() {
            // A slice can lose all usable positives to down-sampling; a
            // zero row keeps it inert in the projection.
            return Ok(GradientMap::zeros_like(&self.params));
        }
        let tape = Tape::new();
        let attached = self.params.attach(&tape);
        let (pos, neg) = self.batch_scores(&tape, &attached, &ep.triples)?;
        let loss = margin_ranking_loss(
            &pos,
            &neg,
            self.config.training.margin,
            self.config.training.loss_y,
        );
        tape.backward(&loss, &self.params)
    }

    fn batch_scores(
        &self,
        tape: &Tape,
        attached: &TapeParams,
        batch: &[Triple],
    ) -> Result<(Var, Var)> {
        let cfg = &self.config.ranker;
        let mut pos_scores = Vec::with_capacity(batch.len());
        let mut neg_scores = Vec::with_capacity(batch.len());
        for triple in batch {
            let pos_pair = TokenizedPair::from_texts(
                &triple.query_text,
                &triple.pos_text,
                &self.dataset.vocab,
                cfg.query_len,
                cfg.doc_len,
            )?;
            let neg_pair = TokenizedPair::from_texts(
                &triple.query_text,
                &triple.neg_text,
                &self.dataset.vocab,
                cfg.query_len,
                cfg.doc_len,
            )?;
            pos_scores.push(self.ranker.score_pair(tape, attached, &pos_pair).reshape(&[1]));
            neg_scores.push(self.ranker.score_pair(tape, attached, &neg_pair).reshape(&[1]));
        }
        let pos = tape.concat(&pos_scores.iter().collect::<Vec<_>>(), 0);
        let neg = tape.concat(&neg_scores.iter().collect::<Vec<_>>(), 0);
        Ok((pos, neg))
    }

    fn end_of_task(&mut self, task: usize, task_rows: &[Sample]) -> Result<()> {
        match self.strategy.config.kind {
            StrategyKind::None => {}
            StrategyKind::L2 => {
                self.strategy.importance = l2_importance(&self.params);
            }
            StrategyKind::Ewc | StrategyKind::Ewcol => {
                let online = self.strategy.config.kind == StrategyKind::Ewcol;
                let tagged = tag_all(task, task_rows);
                let ep = pairwise_epoch(
                    &tagged,
                    1,
                    seeding::mix(self.config.seed, "fisher-samples", task as u64),
                );
                let available = ep.triples.len();
                if available == 0 {
                    return Err(Error::Train(format!(
                        "task {task}: no pairwise samples for fisher importance"
                    )));
                }
                let k = self.strategy.config.fisher_samples.min(available);
                if k < self.strategy.config.fisher_samples {
                    self.log.push(format!(
                        "task {task}: fisher sample count clamped to {k} (requested {})",
                        self.strategy.config.fisher_samples
                    ));
                }
                let grads = ep.triples[..k]
                    .iter()
                    .map(|triple| self.triple_gradient(triple));
                self.strategy.importance =
                    fisher_importance(grads, online, &self.strategy.importance)?;
            }
            StrategyKind::Si => {
                let task_start = self
                    .task_start
                    .as_ref()
                    .expect("task-start snapshot recorded");
                self.strategy.importance = self.strategy.path.consolidate(
                    &self.params,
                    task_start,
                    self.strategy.config.si_damping,
                    &self.strategy.importance,
                );
            }
            StrategyKind::Mas => {
                let tagged = tag_all(task, task_rows);
                let ep = pairwise_epoch(
                    &tagged,
                    1,
                    seeding::mix(self.config.seed, "mas-samples", task as u64),
                );
                if ep.triples.is_empty() {
                    return Err(Error::Train(format!(
                        "task {task}: no pairwise samples for mas importance"
                    )));
                }
                let batch_size = self.config.training.batch_size;
                let grads = ep
                    .triples
                    .chunks(batch_size)
                    .map(|batch| self.sensitivity_gradient(batch));
                self.strategy.importance = mas_importance(grads, &self.strategy.importance)?;
            }
            StrategyKind::Nr | StrategyKind::Gem => {
                self.strategy.memory.update(
                    task,
                    task_rows,
                    seeding::mix(self.config.seed, "memory-update", task as u64),
                );
                self.memory_peak = self.memory_peak.max(self.strategy.memory.total_len());
            }
        }
        if self.strategy.config.kind.is_regularization() {
            self.strategy.anchor = Some(self.params.clone());
        }
        Ok(())
    }

    /// Gradient of the margin loss of one triple at the current params.
    fn triple_gradient(&self, triple: &Triple) -> Result<GradientMap> {
        let tape = Tape::new();
        let attached = self.params.attach(&tape);
        let (pos, neg) = self.batch_scores(&tape, &attached, std::slice::from_ref(triple))?;
        let loss = margin_ranking_loss(
            &pos,
            &neg,
            self.config.training.margin,
            self.config.training.loss_y,
        );
        tape.backward(&loss, &self.params)
    }

    /// Gradient of the summed squared score difference over one batch.
    fn sensitivity_gradient(&self, batch: &[Triple]) -> Result<GradientMap> {
        let tape = Tape::new();
        let attached = self.params.attach(&tape);
        let (pos, neg) = self.batch_scores(&tape, &attached, batch)?;
        let diff = pos.sub(&neg);
        let objective = diff.mul(&diff).sum_all();
        tape.backward(&objective, &self.params)
    }

    fn tfidf_over(&self, rows: &[TaggedSample]) -> TfidfStats {
        let mut seen = std::collections::HashSet::new();
        let mut docs: Vec<Vec<usize>> = Vec::new();
        for tagged in rows {
            if seen.insert((tagged.origin_task, tagged.sample.doc_id.clone())) {
                let (ids, mask) = self
                    .dataset
                    .vocab
                    .encode(&tagged.sample.doc_text, self.config.ranker.doc_len);
                docs.push(
                    ids.into_iter()
                        .zip(mask)
                        .filter(|(_, m)| *m == 1.0)
                        .map(|(id, _)| id)
                        .collect(),
                );
            }
        }
        TfidfStats::from_docs(docs.iter().map(Vec::as_slice), self.dataset.vocab.len())
    }

    fn evaluate_row(&mut self, task: usize) -> Result<()> {
        let ranker = &self.ranker;
        let params = &self.params;
        let vocab = &self.dataset.vocab;
        let cfg = &self.config.ranker;
        let score_fn = |rows: &[&Sample]| -> Result<Vec<f64>> {
            let pairs = rows
                .iter()
                .map(|r| TokenizedPair::from_sample(r, vocab, cfg.query_len, cfg.doc_len))
                .collect::<Result<Vec<_>>>()?;
            ranker.score_batch(&pairs, params)
        };
        for s in 1..=self.dataset.task_count() {
            let value = evaluate_task(&score_fn, &self.dataset.tasks[s - 1].test, self.config.mrr_cutoff)?;
            self.matrix.set(task, s, value);
        }
        Ok(())
    }
}

fn subtract(a: &GradientMap, b: &GradientMap) -> GradientMap {
    let mut out = a.clone();
    for (name, tensor) in out.iter_mut_pairs() {
        if let Some(other) = b.get(name) {
            for (x, y) in tensor.data_mut().iter_mut().zip(other.data()) {
                *x -= y;
            }
        }
    }
    out
}
