use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pushpull::batch::{run_batch, run_one, RunOptions};
use pushpull::report::{aggregate, evaluate, read_reports, summary, write_aggregates, write_reports, RunReport};
use pushpull::scenario::{Mode, Scenario, SeedRange};
use pushpull::sim::Trace;

#[derive(Parser)]
#[command(name = "pushpull", version, about = "Push-pull mobile sensor deployment simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate a scenario over a range of seeds.
    Batch {
        scenario: PathBuf,
        /// Overrides the `[batch] seeds` entry of the file.
        #[arg(long)]
        seeds: Option<SeedRange>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-check a recorded trace.
    Verify { trace: PathBuf },
    /// Aggregate one or more report tables.
    Report {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        /// Write the aggregate table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    mode: Option<Mode>,
    /// Output directory for traces and tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Snapshot period in seconds; writes frame tables.
    #[arg(long, value_name = "DT")]
    frames: Option<f64>,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    verify: Switch,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Common {
    fn apply(&self, scenario: &mut Scenario) {
        if let Some(mode) = self.mode {
            scenario.mode = mode;
        }
    }

    fn options(&self) -> Result<RunOptions> {
        if let Some(dt) = self.frames {
            if !(dt > 0.0) {
                bail!("--frames needs a positive period");
            }
        }
        Ok(RunOptions { verify: self.verify == Switch::On, out: self.out.clone(), frames: self.frames })
    }
}

fn report_failures(rows: &[RunReport]) -> bool {
    let mut clean = true;
    for r in rows.iter().filter(|r| !r.passed()) {
        clean = false;
        eprintln!("{} {} seed {}: {} failed check(s)", r.scenario, r.mode, r.seed, r.failures.len());
        for f in &r.failures {
            eprintln!("  {f}");
        }
    }
    clean
}

fn print_rows(rows: &[RunReport]) -> Result<()> {
    let stdout = io::stdout();
    write_reports(stdout.lock(), rows)?;
    Ok(())
}

fn load(path: &Path) -> Result<Scenario> {
    Scenario::load(path).with_context(|| format!("loading {}", path.display()))
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { scenario, seed, common } => {
            let mut scenario = load(&scenario)?;
            common.apply(&mut scenario);
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            let opts = common.options()?;
            if let Some(dir) = &opts.out {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let (_, row) = run_one(&scenario, &opts)?;
            let rows = [row];
            if let Some(dir) = &opts.out {
                write_reports(File::create(dir.join("report.csv"))?, &rows)?;
            }
            print_rows(&rows)?;
            Ok(report_failures(&rows))
        }
        Command::Batch { scenario, seeds, common } => {
            let mut scenario = load(&scenario)?;
            common.apply(&mut scenario);
            let Some(seeds) = seeds.or_else(|| scenario.batch.as_ref().map(|b| b.seeds.clone())) else {
                bail!("no seeds: pass --seeds a..b or add a [batch] seeds entry");
            };
            let rows = run_batch(&scenario, seeds.seeds(), &common.options()?)?;
            print!("{}", summary(&aggregate(&rows)));
            Ok(report_failures(&rows))
        }
        Command::Verify { trace } => {
            let file = File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let trace = Trace::read_ndjson(BufReader::new(file))?;
            let row = evaluate(&trace, true)?;
            let rows = [row];
            print_rows(&rows)?;
            Ok(report_failures(&rows))
        }
        Command::Report { tables, out } => {
            let mut rows = Vec::new();
            for path in &tables {
                let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                rows.extend(read_reports(file).with_context(|| format!("reading {}", path.display()))?);
            }
            let groups = aggregate(&rows);
            match out {
                Some(path) => write_aggregates(File::create(&path)?, &groups)?,
                None => write_aggregates(io::stdout().lock(), &groups)?,
            }
            eprint!("{}", summary(&groups));
            Ok(groups.iter().all(|g| g.failed == 0))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            let _ = writeln!(io::stderr(), "error: {err:#}");
            ExitCode::from(2)
        }
    }
}
