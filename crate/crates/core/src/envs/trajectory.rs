use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

/// One line of a trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub t: usize,
    pub agent: usize,
    pub x: f64,
    pub y: f64,
    pub action: String,
    pub reward: f64,
}

/// Line-delimited `episode,t,agent,x,y,action,reward` records.
pub struct TrajectoryWriter {
    out: BufWriter<File>,
}

impl TrajectoryWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "episode,t,agent,x,y,action,reward")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, r: &TrajectoryRecord) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{}",
            r.episode, r.t, r.agent, r.x, r.y, r.action, r.reward
        )?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
