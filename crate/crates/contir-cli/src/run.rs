//! `run`: execute the (head x strategy x seed) grid, or a sweep, one run
//! directory per combination. Sub-run failures are recorded and the
//! remaining combinations continue.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use contir::data::{generate_synthetic, ContinualDataset, EmbeddingMatrix, SyntheticConfig};
use contir::rankers::HeadKind;
use contir::runner::{run_continual, RunManifest};
use contir::strategies::StrategyKind;

use crate::config::{sweep_extra, ExperimentConfig};

pub struct RunSummary {
    pub completed: usize,
    pub failed: Vec<String>,
}

pub fn run(
    config: &ExperimentConfig,
    out: &Path,
    seed_override: Option<u64>,
    dry_run: bool,
) -> Result<RunSummary> {
    std::fs::create_dir_all(out)?;
    let seeds: Vec<u64> = match seed_override {
        Some(s) => vec![s],
        None => config.seeds.clone(),
    };
    let heads = config.ranker.heads()?;
    let strategies = config.strategy.kinds()?;

    let mut jobs: Vec<Job> = Vec::new();
    match &config.sweep {
        None => {
            let dataset = load_dataset(config)?;
            let dataset = std::rc::Rc::new(dataset);
            for &head in &heads {
                for &strategy in &strategies {
                    for &seed in &seeds {
                        jobs.push(Job {
                            dir: out.join(format!("{}_{}_seed{seed}", head.tag(), strategy.tag())),
                            head,
                            strategy,
                            seed,
                            dataset: dataset.clone(),
                            extra: Vec::new(),
                        });
                    }
                }
            }
        }
        Some(sweep) if sweep.kind == "topic_shift" => {
            for &alpha in &sweep.overlaps {
                let (dataset, distance) = two_task_dataset(config, |s| {
                    s.overlap = alpha;
                })?;
                let dataset = std::rc::Rc::new(dataset);
                for &head in &heads {
                    for &strategy in &strategies {
                        for &seed in &seeds {
                            jobs.push(Job {
                                dir: out.join(format!(
                                    "{}_{}_alpha{alpha}_seed{seed}",
                                    head.tag(),
                                    strategy.tag()
                                )),
                                head,
                                strategy,
                                seed,
                                dataset: dataset.clone(),
                                extra: vec![
                                    ("sweep", "topic_shift".to_string()),
                                    ("alpha", format!("{alpha}")),
                                    ("distance", format!("{distance}")),
                                ],
                            });
                        }
                    }
                }
            }
        }
        Some(sweep) => {
            // data_volume (validated)
            let base = config.dataset.train_queries;
            for &multiplier in &sweep.volume_multipliers {
                let scaled = ((base as f64) * multiplier).round().max(1.0) as usize;
                let (dataset, distance) = two_task_dataset(config, |s| {
                    s.train_queries_per_task = Some(vec![base, scaled]);
                })?;
                let dataset = std::rc::Rc::new(dataset);
                for &head in &heads {
                    for &strategy in &strategies {
                        for &seed in &seeds {
                            jobs.push(Job {
                                dir: out.join(format!(
                                    "{}_{}_vol{multiplier}_seed{seed}",
                                    head.tag(),
                                    strategy.tag()
                                )),
                                head,
                                strategy,
                                seed,
                                dataset: dataset.clone(),
                                extra: vec![
                                    ("sweep", "data_volume".to_string()),
                                    ("volume_multiplier", format!("{multiplier}")),
                                    ("distance", format!("{distance}")),
                                ],
                            });
                        }
                    }
                }
            }
        }
    }

    let mut summary = RunSummary {
        completed: 0,
        failed: Vec::new(),
    };
    for job in &jobs {
        match execute(config, job, dry_run) {
            Ok(()) => {
                summary.completed += 1;
                println!("ok   {}", job.dir.display());
            }
            Err(e) => {
                eprintln!("fail {}: {e:#}", job.dir.display());
                summary.failed.push(job.dir.display().to_string());
            }
        }
    }
    Ok(summary)
}

struct Job {
    dir: PathBuf,
    head: HeadKind,
    strategy: StrategyKind,
    seed: u64,
    dataset: std::rc::Rc<ContinualDataset>,
    extra: Vec<(&'static str, String)>,
}

fn execute(config: &ExperimentConfig, job: &Job, dry_run: bool) -> Result<()> {
    let run_config = config.run_config(job.head, job.strategy, job.seed);
    run_config.validate()?;
    std::fs::create_dir_all(&job.dir)?;
    let pairs: Vec<(&str, String)> = job
        .extra
        .iter()
        .map(|(k, v)| (*k, v.clone()))
        .collect();
    if dry_run {
        let mut manifest = RunManifest::new(&run_config, &job.dataset);
        manifest.extra = sweep_extra(&pairs);
        manifest.write(&job.dir.join("manifest"))?;
        return Ok(());
    }
    let embedding = load_embedding(config, &job.dataset, job.seed)?;
    let outcome = run_continual(&run_config, &job.dataset, &embedding, Some(&job.dir))?;
    if !pairs.is_empty() {
        // Re-write the finalized manifest with the sweep annotations.
        let mut manifest = outcome.manifest.clone();
        manifest.extra = sweep_extra(&pairs);
        manifest.write(&job.dir.join("manifest"))?;
    }
    Ok(())
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<ContinualDataset> {
    match config.dataset.source.as_str() {
        "synthetic" => {
            let (dataset, _) = generate_synthetic(&config.dataset.synthetic_config())?;
            Ok(dataset)
        }
        "ingest" | "corpus" => {
            let path = config.dataset.path.as_ref().expect("validated");
            ContinualDataset::ingest(path)
                .with_context(|| format!("ingesting tasks from {}", path.display()))
        }
        other => bail!("unknown dataset.source {other:?}"),
    }
}

fn two_task_dataset(
    config: &ExperimentConfig,
    adjust: impl FnOnce(&mut SyntheticConfig),
) -> Result<(ContinualDataset, f64)> {
    let mut synth = config.dataset.synthetic_config();
    synth.tasks = 2;
    adjust(&mut synth);
    let (dataset, distances) = generate_synthetic(&synth)?;
    Ok((dataset, distances.distances[0][1]))
}

fn load_embedding(
    config: &ExperimentConfig,
    dataset: &ContinualDataset,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    match &config.embeddings.file {
        Some(path) => EmbeddingMatrix::load(path, &dataset.vocab, seed)
            .with_context(|| format!("loading embeddings {}", path.display())),
        None => Ok(EmbeddingMatrix::random(
            &dataset.vocab,
            config.ranker.embedding_dim,
            seed,
        )),
    }
}
