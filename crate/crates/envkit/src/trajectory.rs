//! Trajectory recording CSV.
//!
//! Columns: step, o0..o43, a0..a11, reward, dist, heading, success.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use diffcore::scalar::Scalar;

use crate::error::Result;
use crate::state::{Observation, ACTION_DIM, OBS_DIM};

/// One recorded step.
#[derive(Clone, Debug)]
pub struct TrajectoryStep<S> {
    pub step: u32,
    pub observation: Observation<S>,
    pub action: [S; ACTION_DIM],
    pub reward: S,
    pub dist: S,
    pub heading: S,
    pub success: bool,
}

pub fn header() -> String {
    let mut cols = vec!["step".to_string()];
    cols.extend((0..OBS_DIM).map(|i| format!("o{i}")));
    cols.extend((0..ACTION_DIM).map(|i| format!("a{i}")));
    cols.extend(["reward", "dist", "heading", "success"].map(String::from));
    cols.join(",")
}

pub fn write_trajectory_csv<S: Scalar>(path: &Path, steps: &[TrajectoryStep<S>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header())?;
    for s in steps {
        let mut row = Vec::with_capacity(1 + OBS_DIM + ACTION_DIM + 4);
        row.push(s.step.to_string());
        row.extend(s.observation.as_slice().iter().map(|v| v.to_string()));
        row.extend(s.action.iter().map(|v| v.to_string()));
        row.push(s.reward.to_string());
        row.push(s.dist.to_string());
        row.push(s.heading.to_string());
        row.push(if s.success { "1" } else { "0" }.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
