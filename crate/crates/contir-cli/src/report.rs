//! `report`: aggregate completed run directories into strategy-by-model
//! tables and sweep curves. Reports are a pure function of the run
//! directories; stored run data is never modified.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use contir::metrics::{mean_and_stderr, pearson, PerformanceMatrix};
use contir::runner::RunManifest;

#[derive(Debug, Clone)]
struct RunRecord {
    dir_name: String,
    model: String,
    strategy: String,
    seed: u64,
    p_final: f64,
    bwt: Option<f64>,
    fwt: Option<f64>,
    /// Score on the first task's test set after the final task (the sweep
    /// response variable for two-task runs).
    first_task_final_score: Option<f64>,
    extra: BTreeMap<String, String>,
}

pub fn report(root: &Path) -> Result<()> {
    let records = collect(root)?;
    if records.is_empty() {
        bail!("no completed runs found under {}", root.display());
    }
    println!("{} completed runs under {}", records.len(), root.display());

    write_runs_csv(root, &records)?;
    for (metric, extract) in [
        ("pfinal", extract_pfinal as fn(&RunRecord) -> Option<f64>),
        ("bwt", extract_bwt),
        ("fwt", extract_fwt),
    ] {
        let table = aggregate_table(&records, extract);
        let csv = table_csv(&table);
        let path = root.join(format!("report_{metric}.csv"));
        std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
        println!("\n=== {metric} (mean over seeds, +- standard error) ===");
        print!("{}", table_pretty(&table));
    }

    let shift: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.extra.get("sweep").is_some_and(|s| s == "topic_shift"))
        .collect();
    if !shift.is_empty() {
        sweep_outputs(root, &shift, "alpha", "distance", "shift")?;
    }
    let volume: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.extra.get("sweep").is_some_and(|s| s == "data_volume"))
        .collect();
    if !volume.is_empty() {
        sweep_outputs(root, &volume, "volume_multiplier", "volume_multiplier", "volume")?;
    }
    Ok(())
}

fn extract_pfinal(r: &RunRecord) -> Option<f64> {
    Some(r.p_final)
}
fn extract_bwt(r: &RunRecord) -> Option<f64> {
    r.bwt
}
fn extract_fwt(r: &RunRecord) -> Option<f64> {
    r.fwt
}

fn collect(root: &Path) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    let entries = std::fs::read_dir(root)
        .with_context(|| format!("reading run root {}", root.display()))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let manifest_path = dir.join("manifest");
        let metrics_path = dir.join("metrics.txt");
        if !manifest_path.exists() || !metrics_path.exists() {
            continue;
        }
        let manifest = RunManifest::read(&manifest_path)?;
        if !manifest.finalized {
            continue;
        }
        let metrics = read_metrics(&metrics_path)?;
        let p_final = match metrics.get("p_final") {
            Some(&v) => v,
            None => continue,
        };
        let first_task_final_score = {
            let csv_path = dir.join("P_matrix.csv");
            std::fs::read_to_string(&csv_path)
                .ok()
                .and_then(|text| PerformanceMatrix::from_csv(&text).ok())
                .and_then(|m| m.get(m.tasks(), 1))
        };
        records.push(RunRecord {
            dir_name: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            model: manifest.config.ranker.head.tag().to_string(),
            strategy: manifest.config.strategy.kind.tag().to_string(),
            seed: manifest.seed,
            p_final,
            bwt: metrics.get("bwt").copied(),
            fwt: metrics.get("fwt").copied(),
            first_task_final_score,
            extra: manifest.extra.clone(),
        });
    }
    Ok(records)
}

fn read_metrics(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if let Some((key, value)) = line.split_once('=') {
            if let Ok(v) = value.parse::<f64>() {
                map.insert(key.to_string(), v);
            }
        }
    }
    Ok(map)
}

fn write_runs_csv(root: &Path, records: &[RunRecord]) -> Result<()> {
    let mut out = String::from("run_dir,model,strategy,seed,p_final,bwt,fwt\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{},{}\n",
            r.dir_name,
            r.model,
            r.strategy,
            r.seed,
            r.p_final,
            r.bwt.map_or(String::new(), |v| format!("{v:.6}")),
            r.fwt.map_or(String::new(), |v| format!("{v:.6}")),
        ));
    }
    let path = root.join("report_runs.csv");
    std::fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Mean, standard error, and contributing run directories for one cell.
type Cell = (f64, Option<f64>, Vec<String>);

struct Table {
    models: Vec<String>,
    /// strategy -> model -> cell
    rows: BTreeMap<String, BTreeMap<String, Cell>>,
}

fn aggregate_table(records: &[RunRecord], extract: fn(&RunRecord) -> Option<f64>) -> Table {
    let mut models: Vec<String> = records.iter().map(|r| r.model.clone()).collect();
    models.sort();
    models.dedup();
    let mut rows: BTreeMap<String, BTreeMap<String, Cell>> = BTreeMap::new();
    let mut cells: BTreeMap<(String, String), (Vec<f64>, Vec<String>)> = BTreeMap::new();
    for r in records {
        if let Some(v) = extract(r) {
            let entry = cells
                .entry((r.strategy.clone(), r.model.clone()))
                .or_default();
            entry.0.push(v);
            entry.1.push(r.dir_name.clone());
        }
    }
    for ((strategy, model), (values, dirs)) in cells {
        let (mean, se) = mean_and_stderr(&values);
        rows.entry(strategy)
            .or_default()
            .insert(model, (mean, se, dirs));
    }
    Table { models, rows }
}

fn format_cell(mean: f64, se: Option<f64>) -> String {
    match se {
        Some(se) => format!("{mean:.3}±{se:.3}"),
        None => format!("{mean:.3}"),
    }
}

fn table_csv(table: &Table) -> String {
    let mut out = String::from("strategy");
    for m in &table.models {
        out.push_str(&format!(",{m}"));
    }
    out.push_str(",runs\n");
    for (strategy, cells) in &table.rows {
        out.push_str(strategy);
        let mut dirs: Vec<String> = Vec::new();
        for m in &table.models {
            match cells.get(m) {
                Some((mean, se, d)) => {
                    out.push_str(&format!(",{}", format_cell(*mean, *se)));
                    dirs.extend(d.iter().cloned());
                }
                None => out.push(','),
            }
        }
        out.push_str(&format!(",{}\n", dirs.join(" ")));
    }
    out
}

fn table_pretty(table: &Table) -> String {
    let mut out = format!("{:<10}", "strategy");
    for m in &table.models {
        out.push_str(&format!("{m:>16}"));
    }
    out.push('\n');
    for (strategy, cells) in &table.rows {
        out.push_str(&format!("{strategy:<10}"));
        for m in &table.models {
            match cells.get(m) {
                Some((mean, se, _)) => out.push_str(&format!("{:>16}", format_cell(*mean, *se))),
                None => out.push_str(&format!("{:>16}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

/// Sweep curve CSV plus per-(model, strategy) Pearson coefficients between
/// the sweep axis and the first task's score after the final task.
fn sweep_outputs(
    root: &Path,
    records: &[&RunRecord],
    axis_key: &str,
    x_key: &str,
    prefix: &str,
) -> Result<()> {
    let mut curve = format!("run_dir,model,strategy,seed,{axis_key},distance,task1_final_score\n");
    for r in records {
        curve.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.dir_name,
            r.model,
            r.strategy,
            r.seed,
            r.extra.get(axis_key).cloned().unwrap_or_default(),
            r.extra.get("distance").cloned().unwrap_or_default(),
            r.first_task_final_score
                .map_or(String::new(), |v| format!("{v:.6}")),
        ));
    }
    let curve_path = root.join(format!("{prefix}_curve.csv"));
    std::fs::write(&curve_path, curve)?;
    println!("wrote {}", curve_path.display());

    // Pearson per (model, strategy, seed) over the sweep axis.
    let mut groups: BTreeMap<(String, String, u64), Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        let x: Option<f64> = r.extra.get(x_key).and_then(|v| v.parse().ok());
        if let (Some(x), Some(y)) = (x, r.first_task_final_score) {
            groups
                .entry((r.model.clone(), r.strategy.clone(), r.seed))
                .or_default()
                .push((x, y));
        }
    }
    let mut csv = String::from("model,strategy,seed,pearson\n");
    let mut means: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for ((model, strategy, seed), mut points) in groups {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        if let Ok(r) = pearson(&xs, &ys) {
            csv.push_str(&format!("{model},{strategy},{seed},{r:.6}\n"));
            means.entry((model, strategy)).or_default().push(r);
        }
    }
    for ((model, strategy), rs) in means {
        let (mean, _) = mean_and_stderr(&rs);
        csv.push_str(&format!("{model},{strategy},mean,{mean:.6}\n"));
        println!("{prefix} pearson {model}/{strategy}: {mean:.3} (mean over seeds)");
    }
    let pearson_path = root.join(format!("{prefix}_pearson.csv"));
    std::fs::write(&pearson_path, csv)?;
    println!("wrote {}", pearson_path.display());
    Ok(())
}
