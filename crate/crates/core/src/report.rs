//! Per-run report rows, the versioned report table and its aggregates.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::EnergyModel;
use crate::lattice::{connectivity_threshold, continuous_coverage_bound, lattice_count};
use crate::metrics::{
    audit_final, certify_k_coverage, check_connectivity, check_potential_monotone, check_stable, density_stats,
    energy_totals, network_state, termination_time, Mesh,
};
use crate::scenario::{Mode, ScenarioError};
use crate::sim::Trace;
use crate::Point;

/// First line of every report table.
pub const REPORT_VERSION_LINE: &str = "# pushpull report v1";

const BASE_COLUMNS: [&str; 12] = [
    "scenario",
    "seed",
    "mode",
    "sensors",
    "covered_fraction",
    "density_stddev",
    "mean_distance",
    "mean_start_brake",
    "mean_energy",
    "completion_time",
    "termination_time",
    "terminated",
];
const CERT_COLUMNS: [&str; 5] = ["grid_k", "continuous_k", "stable", "monotone", "connected"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("trace has no header")]
    NoHeader,
    #[error("trace has no final record")]
    NoFinal,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("report table")]
    Csv(#[from] csv::Error),
    #[error("i/o")]
    Io(#[from] std::io::Error),
    #[error("report table does not start with `{REPORT_VERSION_LINE}`")]
    Version,
}

/// One row of the report table. Certification fields are `None` when
/// verification was off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    pub sensors: usize,
    pub covered_fraction: f64,
    pub density_stddev: f64,
    pub mean_distance: f64,
    pub mean_start_brake: f64,
    pub mean_energy: f64,
    pub completion_time: Option<f64>,
    pub termination_time: f64,
    pub terminated: bool,
    #[serde(default)]
    pub grid_k: Option<u64>,
    #[serde(default)]
    pub continuous_k: Option<u64>,
    #[serde(default)]
    pub stable: Option<bool>,
    #[serde(default)]
    pub monotone: Option<bool>,
    #[serde(default)]
    pub connected: Option<bool>,
    /// Verifier findings; not part of the table.
    #[serde(skip)]
    pub failures: Vec<String>,
}

impl RunReport {
    pub fn verified(&self) -> bool {
        self.stable.is_some()
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Measure a finished trace and, when `verify` is set, certify it.
pub fn evaluate(trace: &Trace, verify: bool) -> Result<RunReport, ReportError> {
    let scenario = trace.scenario().ok_or(ReportError::NoHeader)?;
    let (_, terminated, sensors) = trace.final_state().ok_or(ReportError::NoFinal)?;
    let resolved = scenario.resolve()?;
    let sensing = scenario.sensing_radius;

    let mesh = Mesh::new(&resolved.aoi);
    let positions: Vec<Point> = sensors.iter().map(|s| s.position).collect();
    let density = density_stats(&mesh.density(positions.iter().copied(), sensing));
    let completion_time = trace
        .snapshots()
        .find(|(_, snap)| mesh.density(snap.iter().map(|s| s.position), sensing).iter().all(|&d| d > 0))
        .map(|(t, _)| t);
    let energy = energy_totals(trace, &EnergyModel::default());

    let mut report = RunReport {
        scenario: scenario.id.clone(),
        seed: scenario.seed,
        mode: scenario.mode,
        sensors: sensors.len(),
        covered_fraction: density.covered_fraction,
        density_stddev: density.stddev,
        mean_distance: energy.mean_meters,
        mean_start_brake: energy.mean_start_brake,
        mean_energy: energy.mean,
        completion_time,
        termination_time: termination_time(trace),
        terminated,
        grid_k: None,
        continuous_k: None,
        stable: None,
        monotone: None,
        connected: None,
        failures: Vec::new(),
    };
    if !verify {
        return Ok(report);
    }

    let mut failures = Vec::new();
    if !terminated {
        failures.push("hard time limit reached".to_string());
    }
    let stable = check_stable(&network_state(sensors), scenario.tx_radius);
    if !stable {
        failures.push("final state is not stable".to_string());
    }
    let (monotone, violations) = check_potential_monotone(trace);
    failures.extend(violations.into_iter().map(|v| format!("potential: {v}")));
    let connected = check_connectivity(&positions, connectivity_threshold(sensing));
    if !connected {
        failures.push("final deployment is disconnected at sqrt(3) * sensing radius".to_string());
    }
    let (grid_k, continuous_k) = certify_k_coverage(sensors, &resolved.aoi, sensing);
    if scenario.mode == Mode::Pp2 {
        let need_grid = lattice_count(sensing, resolved.side);
        let need_cont = continuous_coverage_bound(resolved.side, sensing);
        if grid_k.is_some_and(|k| k < need_grid) {
            failures.push(format!("grid coverage {} below {need_grid}", grid_k.unwrap_or(0)));
        }
        if continuous_k.is_some_and(|k| k < need_cont) {
            failures.push(format!("continuous coverage {} below {need_cont}", continuous_k.unwrap_or(0)));
        }
    }
    failures.extend(audit_final(sensors));
    failures.extend(trace.anomalies().map(|a| format!("anomaly: {a}")));

    report.grid_k = grid_k;
    report.continuous_k = continuous_k;
    report.stable = Some(stable);
    report.monotone = Some(monotone);
    report.connected = Some(connected);
    report.failures = failures;
    Ok(report)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Write the version line, the header row and one row per run. The
/// certification columns appear only if every row carries them.
pub fn write_reports<W: Write>(mut out: W, rows: &[RunReport]) -> Result<(), ReportError> {
    writeln!(out, "{REPORT_VERSION_LINE}")?;
    let certified = !rows.is_empty() && rows.iter().all(RunReport::verified);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if certified {
        header.extend(CERT_COLUMNS);
    }
    w.write_record(&header)?;
    for r in rows {
        let mut record = vec![
            r.scenario.clone(),
            r.seed.to_string(),
            r.mode.to_string(),
            r.sensors.to_string(),
            r.covered_fraction.to_string(),
            r.density_stddev.to_string(),
            r.mean_distance.to_string(),
            r.mean_start_brake.to_string(),
            r.mean_energy.to_string(),
            opt(r.completion_time),
            r.termination_time.to_string(),
            r.terminated.to_string(),
        ];
        if certified {
            record.extend([opt(r.grid_k), opt(r.continuous_k), opt(r.stable), opt(r.monotone), opt(r.connected)]);
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports<R: Read>(mut input: R) -> Result<Vec<RunReport>, ReportError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let body = text.strip_prefix(REPORT_VERSION_LINE).ok_or(ReportError::Version)?;
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(body.trim_start().as_bytes()).deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub stddev: f64,
}

impl MeanStd {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.collect();
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, stddev: var.sqrt() }
    }
}

/// Means and population standard deviations over the runs of one
/// scenario, mode and sensor count.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub scenario: String,
    pub mode: Mode,
    pub sensors: usize,
    pub runs: usize,
    pub unterminated: usize,
    /// Runs whose certification columns show a failed check.
    pub failed: usize,
    pub covered_fraction: MeanStd,
    pub density_stddev: MeanStd,
    pub mean_distance: MeanStd,
    pub mean_start_brake: MeanStd,
    pub mean_energy: MeanStd,
    pub termination_time: MeanStd,
}

pub fn aggregate(rows: &[RunReport]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, String, usize), Vec<&RunReport>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.scenario.clone(), r.mode.to_string(), r.sensors)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let stat = |f: fn(&RunReport) -> f64| MeanStd::of(g.iter().map(|r| f(r)));
            let bad = |r: &&&RunReport| {
                !r.passed() || [r.stable, r.monotone, r.connected].iter().any(|c| *c == Some(false))
            };
            Aggregate {
                scenario: g[0].scenario.clone(),
                mode: g[0].mode,
                sensors: g[0].sensors,
                runs: g.len(),
                unterminated: g.iter().filter(|r| !r.terminated).count(),
                failed: g.iter().filter(bad).count(),
                covered_fraction: stat(|r| r.covered_fraction),
                density_stddev: stat(|r| r.density_stddev),
                mean_distance: stat(|r| r.mean_distance),
                mean_start_brake: stat(|r| r.mean_start_brake),
                mean_energy: stat(|r| r.mean_energy),
                termination_time: stat(|r| r.termination_time),
            }
        })
        .collect()
}

pub fn write_aggregates<W: Write>(out: W, groups: &[Aggregate]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    let metrics = ["covered_fraction", "density_stddev", "mean_distance", "mean_start_brake", "mean_energy", "termination_time"];
    let mut header = vec!["scenario".to_string(), "mode".into(), "sensors".into(), "runs".into(), "unterminated".into(), "failed".into()];
    for m in metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_stddev"));
    }
    w.write_record(&header)?;
    for g in groups {
        let mut record = vec![
            g.scenario.clone(),
            g.mode.to_string(),
            g.sensors.to_string(),
            g.runs.to_string(),
            g.unterminated.to_string(),
            g.failed.to_string(),
        ];
        for s in [g.covered_fraction, g.density_stddev, g.mean_distance, g.mean_start_brake, g.mean_energy, g.termination_time] {
            record.push(s.mean.to_string());
            record.push(s.stddev.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text digest of the aggregates.
pub fn summary(groups: &[Aggregate]) -> String {
    let mut text = String::new();
    for g in groups {
        text += &format!(
            "{} {} N={}: {} runs, {} failed, {} hit the time limit\n  \
             covered {:.4}  density sd {:.3} ± {:.3}  distance {:.1} m  start/brake {:.1}  energy {:.0} ± {:.0}  termination {:.0} s\n",
            g.scenario,
            g.mode,
            g.sensors,
            g.runs,
            g.failed,
            g.unterminated,
            g.covered_fraction.mean,
            g.density_stddev.mean,
            g.density_stddev.stddev,
            g.mean_distance.mean,
            g.mean_start_brake.mean,
            g.mean_energy.mean,
            g.mean_energy.stddev,
            g.termination_time.mean,
        );
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, verified: bool) -> RunReport {
        RunReport {
            scenario: "sq".into(),
            seed,
            mode: Mode::Pp1,
            sensors: 10,
            covered_fraction: 1.0,
            density_stddev: 0.5 + seed as f64,
            mean_distance: 3.25,
            mean_start_brake: 2.0,
            mean_energy: 1500.0,
            completion_time: if seed == 0 { None } else { Some(4.0) },
            termination_time: 12.5,
            terminated: true,
            grid_k: verified.then_some(7),
            continuous_k: verified.then_some(3),
            stable: verified.then_some(true),
            monotone: verified.then_some(true),
            connected: verified.then_some(true),
            failures: Vec::new(),
        }
    }

    #[test]
    fn table_round_trips() {
        for verified in [true, false] {
            let rows = vec![row(0, verified), row(1, verified)];
            let mut buf = Vec::new();
            write_reports(&mut buf, &rows).unwrap();
            let text = String::from_utf8(buf).unwrap();
            assert!(text.starts_with("# pushpull report v1\nscenario,seed,mode,"));
            assert_eq!(text.contains("grid_k"), verified);
            assert_eq!(read_reports(text.as_bytes()).unwrap(), rows);
        }
    }

    #[test]
    fn unversioned_table_is_rejected() {
        assert!(matches!(read_reports("scenario,seed\n".as_bytes()), Err(ReportError::Version)));
    }

    #[test]
    fn aggregate_uses_population_stddev() {
        let groups = aggregate(&[row(0, true), row(1, true)]);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].runs, 2);
        assert!((groups[0].density_stddev.mean - 1.0).abs() < 1e-12);
        assert!((groups[0].density_stddev.stddev - 0.5).abs() < 1e-12);
        assert_eq!(groups[0].failed, 0);
    }
}
