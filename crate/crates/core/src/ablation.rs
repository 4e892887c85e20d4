//! Trains a grid of configurations over a shared seed set and tabulates
//! their accuracies.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TopicSource, Variant};
use crate::corpus::Conversation;
use crate::error::{Error, Result};
use crate::train::{csv_field, prepare_topics, train};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub label: String,
    pub seed: u64,
    pub valid_accuracy: f64,
    pub test_accuracy: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: Variant,
    pub topic_source: TopicSource,
    pub runs: Vec<AblationRun>,
    pub mean_valid: f64,
    pub mean_test: f64,
    pub std_test: f64,
}

/// Row label such as `SAH-CRF` or `DAH-CRF+lda_utt`.
pub fn run_label(cfg: &ModelConfig) -> String {
    if cfg.variant.has_topic() {
        format!("{}+{}", cfg.variant, cfg.topic_source)
    } else {
        cfg.variant.to_string()
    }
}

/// One row per grid entry, in grid order. Each entry is trained once per
/// seed (overriding its own `seed`). Runs are spread over the rayon pool.
pub fn run_ablation(
    grid: &[ModelConfig],
    seeds: &[u64],
    train_set: &[Conversation],
    valid: &[Conversation],
    test: &[Conversation],
) -> Result<Vec<AblationRow>> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one config and one seed".into()));
    }
    for cfg in grid {
        cfg.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| seeds.iter().map(move |&s| (g, s)))
        .collect();
    let runs: Vec<AblationRun> = jobs
        .par_iter()
        .map(|&(g, seed)| {
            let cfg = ModelConfig {
                seed,
                ..grid[g].clone()
            };
            let tr = prepare_topics(&cfg, train_set)?;
            let va = prepare_topics(&cfg, valid)?;
            let (model, report) = train(&cfg, &tr, &va)?;
            let test_accuracy = model.evaluate(test)?.accuracy;
            log::info!("{} seed {seed}: test acc {test_accuracy:.4}", run_label(&cfg));
            Ok(AblationRun {
                label: run_label(&cfg),
                seed,
                valid_accuracy: report.best_valid_accuracy,
                test_accuracy,
                best_epoch: report.best_epoch,
            })
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .zip(runs.chunks(seeds.len()))
        .map(|(cfg, runs)| {
            let n = runs.len() as f64;
            let mean_test = runs.iter().map(|r| r.test_accuracy).sum::<f64>() / n;
            let var = runs.iter().map(|r| (r.test_accuracy - mean_test).powi(2)).sum::<f64>() / n;
            AblationRow {
                label: run_label(cfg),
                variant: cfg.variant,
                topic_source: cfg.topic_source,
                runs: runs.to_vec(),
                mean_valid: runs.iter().map(|r| r.valid_accuracy).sum::<f64>() / n,
                mean_test,
                std_test: var.sqrt(),
            }
        })
        .collect())
}

pub fn write_ablation_csv(mut w: impl Write, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(w, "model,variant,topic_source,seeds,mean_valid_accuracy,mean_test_accuracy,std_test_accuracy")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.6},{:.6}",
            csv_field(&r.label),
            r.variant,
            r.topic_source,
            r.runs.len(),
            r.mean_valid,
            r.mean_test,
            r.std_test
        )?;
    }
    Ok(())
}

/// One line per training run.
pub fn write_runs_csv(mut w: impl Write, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(w, "model,seed,valid_accuracy,test_accuracy,best_epoch")?;
    for run in rows.iter().flat_map(|r| &r.runs) {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{}",
            csv_field(&run.label),
            run.seed,
            run.valid_accuracy,
            run.test_accuracy,
            run.best_epoch
        )?;
    }
    Ok(())
}
