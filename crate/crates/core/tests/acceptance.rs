//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use pushpull::energy::{EnergyLedger, EnergyModel};
use pushpull::lattice::{continuous_coverage_bound, lattice_count, lattice_count_oracle};
use pushpull::metrics::energy_totals;
use pushpull::protocol::Role;
use pushpull::report::{evaluate, write_reports, RunReport};
use pushpull::scenario::{AoiSpec, DeploymentSpec, Mode, Scenario};
use pushpull::sim::{run, FinalSensor, Record, Trace};
use pushpull::tight::n_tight_upper;
use pushpull::{Aoi, Point};

const SQUARE_SEEDS: u64 = 30;
const DUMBBELL_SEEDS: u64 = 10;
const DENSE_SEEDS: u64 = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

/// A finished run reduced to its report; traces are dropped as soon as
/// they are measured.
struct Run {
    deployment: &'static str,
    report: RunReport,
}

fn simulate(cases: Vec<(&'static str, Scenario)>) -> Vec<Run> {
    cases
        .into_par_iter()
        .map(|(deployment, scenario)| {
            let trace = run(&scenario).expect("scenario runs");
            let report = evaluate(&trace, true).expect("trace evaluates");
            Run { deployment, report }
        })
        .collect()
}

fn lattice_lemma() -> Verdict {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for side in [1.0, 2.833, 5.0] {
        for step in 1..=200u32 {
            let radius = step as f64 * 0.05 * side;
            let (fast, oracle) = (lattice_count(radius, side), lattice_count_oracle(radius, side));
            if fast != oracle {
                mismatches.push(format!("R={radius} l={side}: {fast} vs {oracle}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(1);
    Verdict::new(pass, format!("600 radii, {} mismatches, {elapsed:.2?}", mismatches.len()))
}

fn tight_numbers() -> Verdict {
    let cases = [(80.0, 5.0, 154), (10.0, 5.0, 14), (1.0, 1.0, 10)];
    let got: Vec<u64> =
        cases.iter().map(|&(w, l, _)| n_tight_upper(&Aoi::rectangle(w, w).expect("square"), l)).collect();
    let pass = cases.iter().zip(&got).all(|(c, g)| c.2 == *g);
    Verdict::new(pass, format!("{got:?}, expected [154, 14, 10]"))
}

fn fails(runs: &[&Run], pred: impl Fn(&RunReport) -> bool) -> Vec<String> {
    runs.iter()
        .filter(|r| !pred(&r.report))
        .map(|r| format!("{}/{}/{} seed {}", r.report.scenario, r.deployment, r.report.mode, r.report.seed))
        .collect()
}

fn listed(bad: &[String]) -> String {
    match bad.len() {
        0 => "none".into(),
        n if n <= 5 => bad.join(", "),
        n => format!("{} and {} more", bad[..5].join(", "), n - 5),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n.max(1) as f64
}

fn energy_ratios() -> bool {
    let sensor = |energy: EnergyLedger| FinalSensor {
        id: 0,
        role: Role::Free,
        position: Point::new(0.0, 0.0),
        portion: None,
        hex: None,
        master: None,
        slaves: Vec::new(),
        incoming: Vec::new(),
        order: 1,
        base_order: 1,
        moving: false,
        energy,
    };
    let totals = |ledgers: &[EnergyLedger]| {
        let trace = Trace {
            records: vec![Record::Final { t: 0.0, terminated: true, sensors: ledgers.iter().copied().map(sensor).collect() }],
        };
        energy_totals(&trace, &EnergyModel::default())
    };
    let meter = totals(&[EnergyLedger::new(1.0, 0, 0, 0)]).mean;
    let tx = totals(&[EnergyLedger::new(0.0, 0, 1, 0)]).mean;
    let rx = totals(&[EnergyLedger::new(0.0, 0, 0, 1)]).mean;
    let pair = totals(&[EnergyLedger::new(2.0, 2, 8, 0), EnergyLedger::new(0.0, 0, 0, 9)]);
    meter == 337.5 && tx == 1.125 && rx == 1.0 && pair.per_sensor == vec![2.0 * 337.5 + 2.0 * 337.5 + 9.0, 9.0]
}

fn determinism() -> Verdict {
    let scenario = Scenario::square80("repeat", Mode::Pp2, 400, DeploymentSpec::Trail, 7);
    let bytes = || {
        let trace = run(&scenario).expect("scenario runs");
        let mut report = Vec::new();
        write_reports(&mut report, &[evaluate(&trace, true).expect("trace evaluates")]).expect("report writes");
        (trace.to_ndjson(), report)
    };
    let (a, b) = (bytes(), bytes());
    let pass = a == b;
    Verdict::new(pass, format!("trace {} bytes, report {} bytes, identical: {pass}", a.0.len(), a.1.len()))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut verdicts: Vec<(u8, &str, Verdict)> = Vec::new();
    verdicts.push((1, "lattice lemma", lattice_lemma()));
    verdicts.push((2, "tight number bound", tight_numbers()));

    let deployments = [("trail", DeploymentSpec::Trail), ("safe_corner", DeploymentSpec::SafeCorner), ("central", DeploymentSpec::Central)];
    let mut cases = Vec::new();
    for (name, deployment) in &deployments {
        for mode in [Mode::Pp1, Mode::Pp2] {
            for seed in 0..SQUARE_SEEDS {
                cases.push((*name, Scenario::square80("square", mode, 400, deployment.clone(), seed)));
            }
        }
    }
    let square = simulate(cases);

    let mut cases = Vec::new();
    for mode in [Mode::Pp1, Mode::Pp2] {
        for seed in 0..DUMBBELL_SEEDS {
            let mut scenario = Scenario::square80("dumbbell", mode, 400, DeploymentSpec::SafeCorner, seed);
            scenario.aoi = AoiSpec::Dumbbell { square_side: 40.0, narrows_width: 10.0, narrows_length: 20.0 };
            cases.push(("safe_corner", scenario));
        }
    }
    let dumbbell = simulate(cases);

    let square_runs: Vec<&Run> = square.iter().collect();
    let dumbbell_runs: Vec<&Run> = dumbbell.iter().collect();
    let all_runs: Vec<&Run> = square.iter().chain(&dumbbell).collect();

    let bad = fails(&square_runs, |r| r.covered_fraction == 1.0);
    verdicts.push((3, "coverage completeness", Verdict::new(bad.is_empty(), format!("{} runs, incomplete: {}", square_runs.len(), listed(&bad)))));

    let bad = fails(&dumbbell_runs, |r| r.covered_fraction == 1.0);
    verdicts.push((4, "concave area", Verdict::new(bad.is_empty(), format!("{} runs, incomplete: {}", dumbbell_runs.len(), listed(&bad)))));

    let bad = fails(&all_runs, |r| r.terminated && r.stable == Some(true) && r.monotone == Some(true));
    let latest = all_runs.iter().map(|r| r.report.termination_time).fold(0.0, f64::max);
    verdicts.push((
        5,
        "termination",
        Verdict::new(bad.is_empty(), format!("{} runs, latest {latest:.0} s, failing: {}", all_runs.len(), listed(&bad))),
    ));

    let bad = fails(&all_runs, |r| r.connected == Some(true));
    verdicts.push((6, "connectivity at sqrt(3) Rs", Verdict::new(bad.is_empty(), format!("disconnected: {}", listed(&bad)))));

    let dense: Vec<(&'static str, Scenario)> = (0..DENSE_SEEDS)
        .map(|seed| ("central", Scenario::square80("dense", Mode::Pp2, 1200, DeploymentSpec::Central, seed)))
        .collect();
    let side = dense[0].1.resolve().expect("dense scenario resolves").side;
    let (need_grid, need_cont) = (lattice_count(5.0, side), continuous_coverage_bound(side, 5.0));
    let dense = simulate(dense);
    let dense_runs: Vec<&Run> = dense.iter().collect();
    let bad = fails(&dense_runs, |r| r.grid_k.is_some_and(|k| k >= need_grid) && r.continuous_k.is_some_and(|k| k >= need_cont));
    let worst = |f: fn(&RunReport) -> Option<u64>| dense.iter().filter_map(|r| f(&r.report)).min().unwrap_or(0);
    verdicts.push((
        7,
        "PP2 k-coverage",
        Verdict::new(
            bad.is_empty(),
            format!(
                "side {side:.4}: grid {} >= {need_grid}, continuous {} >= {need_cont}, failing: {}",
                worst(|r| r.grid_k),
                worst(|r| r.continuous_k),
                listed(&bad)
            ),
        ),
    ));

    let sd = |mode: Mode| mean(square.iter().filter(|r| r.report.mode == mode).map(|r| r.report.density_stddev));
    let (sd1, sd2) = (sd(Mode::Pp1), sd(Mode::Pp2));
    verdicts.push((8, "uniformity trend", Verdict::new(sd2 < sd1, format!("density sd PP2 {sd2:.3} < PP1 {sd1:.3}"))));

    let energy = |mode: Mode| {
        mean(square.iter().filter(|r| r.deployment == "central" && r.report.mode == mode).map(|r| r.report.mean_energy))
    };
    let (e1, e2) = (energy(Mode::Pp1), energy(Mode::Pp2));
    let ratios = energy_ratios();
    verdicts.push((
        9,
        "energy model",
        Verdict::new(ratios && e2 > e1, format!("unit ratios exact: {ratios}, central energy PP2 {e2:.0} > PP1 {e1:.0}")),
    ));

    verdicts.push((10, "determinism", determinism()));

    let mut failed = 0;
    for (id, name, v) in &verdicts {
        failed += usize::from(!v.pass);
        println!("criterion {id:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} of {} criteria pass in {:.0?}", verdicts.len() - failed, verdicts.len(), started.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
