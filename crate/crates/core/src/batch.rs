//! Single and multi-seed execution with per-run output files.

use std::fs::{self, File};
use std::io::BufWriter;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::report::{aggregate, evaluate, summary, write_aggregates, write_reports, ReportError, RunReport};
use crate::scenario::Scenario;
use crate::sim::{run, SimError, Trace, TraceError};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("no seeds to run")]
    NoSeeds,
    #[error("seed {seed}")]
    Sim { seed: u64, source: SimError },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub verify: bool,
    /// Directory for traces and tables; nothing is written without one.
    pub out: Option<PathBuf>,
    /// Snapshot period override; also turns on frame tables.
    pub frames: Option<f64>,
}

fn create(path: &Path) -> Result<BufWriter<File>, BatchError> {
    File::create(path).map(BufWriter::new).map_err(|source| BatchError::Io { path: path.into(), source })
}

pub fn run_stem(scenario: &Scenario) -> String {
    format!("{}-{}-s{}", scenario.id, scenario.mode, scenario.seed)
}

/// Simulate one scenario, write its trace (and frames) under `out`, and
/// measure it.
pub fn run_one(scenario: &Scenario, opts: &RunOptions) -> Result<(Trace, RunReport), BatchError> {
    let mut scenario = scenario.clone();
    if let Some(dt) = opts.frames {
        scenario.timing.snapshot_interval = dt;
    }
    let trace = run(&scenario).map_err(|source| BatchError::Sim { seed: scenario.seed, source })?;
    if let Some(dir) = &opts.out {
        let stem = run_stem(&scenario);
        trace.write_ndjson(create(&dir.join(format!("{stem}.trace.ndjson")))?)?;
        if opts.frames.is_some() {
            trace.write_frames(create(&dir.join(format!("{stem}.frames.csv")))?)?;
        }
    }
    let report = evaluate(&trace, opts.verify)?;
    Ok((trace, report))
}

/// Run every seed of `seeds` in parallel. With an output directory, writes
/// `report.csv`, `aggregate.csv` and `summary.txt` next to the traces.
pub fn run_batch(base: &Scenario, seeds: Range<u64>, opts: &RunOptions) -> Result<Vec<RunReport>, BatchError> {
    if seeds.is_empty() {
        return Err(BatchError::NoSeeds);
    }
    if let Some(dir) = &opts.out {
        fs::create_dir_all(dir).map_err(|source| BatchError::Io { path: dir.clone(), source })?;
    }
    let rows = seeds
        .into_par_iter()
        .map(|seed| run_one(&base.with_seed(seed), opts).map(|(_, report)| report))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = &opts.out {
        write_reports(create(&dir.join("report.csv"))?, &rows)?;
        let groups = aggregate(&rows);
        write_aggregates(create(&dir.join("aggregate.csv"))?, &groups)?;
        let path = dir.join("summary.txt");
        fs::write(&path, summary(&groups)).map_err(|source| BatchError::Io { path, source })?;
    }
    Ok(rows)
}
