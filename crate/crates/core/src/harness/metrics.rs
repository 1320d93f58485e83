//! Metrics rows and their CSV form.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const METRICS_HEADER: [&str; 12] = [
    "run_id",
    "seed",
    "mode",
    "p",
    "env",
    "step",
    "episodes_done",
    "mean_return",
    "catches",
    "loss",
    "eps",
    "wallclock_s",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub mode: String,
    pub p: f64,
    pub env: String,
    pub step: u64,
    pub episodes_done: u64,
    pub mean_return: f64,
    pub catches: f64,
    pub loss: f64,
    pub eps: f64,
    pub wallclock_s: f64,
}

/// Appends rows to `path`, writing the header first if the file is new or empty.
pub fn emit_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let fresh = file.metadata()?.len() == 0;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    if fresh {
        w.write_record(METRICS_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(crate::Error::Config(format!("{} is not a metrics file", path.display())));
    }
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(step: u64, x: f64) -> MetricsRow {
        MetricsRow {
            run_id: "r".into(),
            seed: 1,
            mode: "dcc_md".into(),
            p: 0.2,
            env: "pursuit".into(),
            step,
            episodes_done: step / 10,
            mean_return: x,
            catches: x.abs(),
            loss: 0.1,
            eps: 0.02,
            wallclock_s: 0.0,
        }
    }

    #[test]
    fn empty_stream_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        emit_metrics(&p, &[]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "run_id,seed,mode,p,env,step,episodes_done,mean_return,catches,loss,eps,wallclock_s\n"
        );
        assert!(read_metrics(&p).unwrap().is_empty());
    }

    #[test]
    fn appends_without_repeating_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        emit_metrics(&p, &[row(1, 0.5)]).unwrap();
        emit_metrics(&p, &[row(2, 0.25), row(3, -1.0)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.matches("run_id").count(), 1);
        assert_eq!(read_metrics(&p).unwrap(), vec![row(1, 0.5), row(2, 0.25), row(3, -1.0)]);
    }

    #[test]
    fn shortest_decimal_formatting() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        emit_metrics(&p, &[row(1, 0.1)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("r,1,dcc_md,0.2,pursuit,1,0,0.1,0.1,0.1,0.02,0.0"));
    }

    proptest! {
        #[test]
        fn round_trip(xs in proptest::collection::vec(-1e9f64..1e9, 0..20)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.csv");
            let rows: Vec<MetricsRow> = xs.iter().enumerate().map(|(k, &x)| row(k as u64, x)).collect();
            emit_metrics(&p, &rows).unwrap();
            prop_assert_eq!(read_metrics(&p).unwrap(), rows);
        }
    }
}
