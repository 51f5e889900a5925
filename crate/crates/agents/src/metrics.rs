//! Flat CSV outputs shared by all training and evaluation commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::Real;

/// One periodic-evaluation row during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub mean_return: Real,
    pub success_rate: Real,
    pub end_dist: Real,
}

pub const METRICS_HEADER: &str = "step,mean_return,success_rate,end_dist";

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.step, r.mean_return, r.success_rate, r.end_dist
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One evaluated episode. `phase` distinguishes the gradient-based
/// meta-learner's pre/post-adaptation evaluations; other algorithms use
/// "eval".
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRow {
    pub trial: u32,
    pub episode: u32,
    pub task: String,
    pub phase: String,
    pub ret: Real,
    pub success: bool,
    pub end_dist: Real,
}

pub const EPISODES_HEADER: &str = "trial,episode,task,phase,return,success,end_dist";

pub fn write_episodes_csv(path: &Path, rows: &[EpisodeRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{EPISODES_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.trial,
            r.episode,
            r.task,
            r.phase,
            r.ret,
            u8::from(r.success),
            r.end_dist
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Latent trace of one meta-test episode: the z that drove the episode and
/// the posterior it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentRow {
    pub trial: u32,
    pub episode: u32,
    pub z: [Real; 5],
    pub posterior_mean: [Real; 5],
    pub posterior_var: [Real; 5],
}

pub fn latent_header() -> String {
    let mut cols = vec!["trial".to_string(), "episode".to_string()];
    cols.extend((1..=5).map(|i| format!("z{i}")));
    cols.extend((1..=5).map(|i| format!("posterior_mean{i}")));
    cols.extend((1..=5).map(|i| format!("posterior_var{i}")));
    cols.join(",")
}

pub fn write_latents_csv(path: &Path, rows: &[LatentRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", latent_header())?;
    for r in rows {
        let mut cols = vec![r.trial.to_string(), r.episode.to_string()];
        cols.extend(r.z.iter().map(|v| v.to_string()));
        cols.extend(r.posterior_mean.iter().map(|v| v.to_string()));
        cols.extend(r.posterior_var.iter().map(|v| v.to_string()));
        writeln!(w, "{}", cols.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_header_has_17_columns() {
        let h = latent_header();
        assert_eq!(h.split(',').count(), 17);
        assert!(h.starts_with("trial,episode,z1"));
        assert!(h.ends_with("posterior_var5"));
    }
}
