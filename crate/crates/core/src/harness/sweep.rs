//! Dropout-rate sweeps: every `p` crossed with every seed, aggregated per `p`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::mean_std;
use super::metrics::{emit_metrics, MetricsRow};
use super::train::run_training;
use crate::error::{check_prob, Error, Result};
use crate::parallel;

pub const RAW_FILE: &str = "sweep_raw.csv";
pub const SUMMARY_FILE: &str = "sweep_summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub runs: usize,
    pub mean_catches: f64,
    pub std_catches: f64,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Final evaluation row of every run, `p`-major.
    pub raw: Vec<MetricsRow>,
    pub table: Vec<SweepRow>,
}

/// Per-`p` mean and sample deviation over the final rows of each seed.
pub fn aggregate(ps: &[f64], raw: &[MetricsRow]) -> Vec<SweepRow> {
    ps.iter()
        .map(|&p| {
            let rows: Vec<&MetricsRow> = raw.iter().filter(|r| r.p == p).collect();
            let (mean_catches, std_catches) = mean_std(&rows.iter().map(|r| r.catches).collect::<Vec<_>>());
            let (mean_return, std_return) = mean_std(&rows.iter().map(|r| r.mean_return).collect::<Vec<_>>());
            SweepRow {
                p,
                runs: rows.len(),
                mean_catches,
                std_catches,
                mean_return,
                std_return,
            }
        })
        .collect()
}

/// Trains `|ps| * |seeds|` independent runs under `out` (concurrently when
/// built with the parallel backend) and writes the raw and summary CSVs.
pub fn sweep(template: &RunConfig, ps: &[f64], seeds: &[u64], out: &Path) -> Result<SweepResult> {
    if ps.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one rate and one seed".into()));
    }
    if template.train.steps == 0 {
        return Err(Error::Config("sweep needs train.steps > 0".into()));
    }
    for &p in ps {
        check_prob(p)?;
    }
    let base = template.run_id.clone().unwrap_or_else(|| format!("{}-{}", template.env.name(), template.agent.mode));
    let jobs: Vec<RunConfig> = ps
        .iter()
        .flat_map(|&p| {
            let base = base.clone();
            seeds.iter().map(move |&seed| {
                let mut c = template.clone();
                c.agent.p = p;
                c.train.seed = seed;
                c.run_id = Some(format!("{base}-p{p}-s{seed}"));
                c
            })
        })
        .collect();
    for job in &jobs {
        job.validate()?;
    }
    let results = parallel::map(&jobs, |job| run_training(job, out));
    let mut raw = Vec::with_capacity(jobs.len());
    for r in results {
        let outcome = r?;
        raw.push(outcome.rows.last().cloned().ok_or(Error::Insufficient { have: 0, need: 1 })?);
    }
    let table = aggregate(ps, &raw);
    let raw_path = out.join(RAW_FILE);
    if raw_path.exists() {
        std::fs::remove_file(&raw_path)?;
    }
    emit_metrics(&raw_path, &raw)?;
    let mut w = csv::Writer::from_path(out.join(SUMMARY_FILE))?;
    for row in &table {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(SweepResult { raw, table })
}
