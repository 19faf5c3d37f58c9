//! Command-line front end: instance generation, solves, sweeps, mode
//! comparison, oracle verification and trajectory refinement.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use aoi_path::experiments::{self, OracleCheck};
use aoi_path::formulation::{compute_extremes, lambda_grid, solve_point, SolverKind, SweepOptions};
use aoi_path::model::{build_edge_weights, Instance};
use aoi_path::tours::MultiTour;
use aoi_path::trajopt::refine_tour;
use aoi_path::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

use output::Format;

#[derive(Parser)]
#[command(
    name = "aoi-path",
    version,
    about = "Multi-return UAV data-collection tour planner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance file.
    Gen {
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        layout: Layout,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the weighted-sum model at one lambda.
    Solve {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[command(flatten)]
        solve: SolveArgs,
        /// Also report the refined trajectory metrics.
        #[arg(long)]
        refine: bool,
        /// Write the decomposition bound history as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sweep lambda and emit the frontier.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// `start:step:end` or a comma-separated list.
        #[arg(long, default_value = "0:0.01:1")]
        lambdas: String,
        #[command(flatten)]
        solve: SolveArgs,
        /// Also report the refined trajectory metrics.
        #[arg(long)]
        refine: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Keep one row per lambda even when tours repeat.
        #[arg(long)]
        keep_duplicates: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Check both solvers against exhaustive enumeration.
    Oracle {
        /// Instance file; replaces the generated corpus.
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Corpus size; sensor counts cycle through 4..=7.
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 1000.0)]
        area: f64,
        /// Seed of the first corpus instance.
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        #[arg(long, default_value = "0:0.25:1")]
        lambdas: String,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Multi-return, Hamiltonian and TSP tours, fly-hover and refined.
    Compare {
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Sensor counts of the generated instances.
        #[arg(long, value_delimiter = ',', default_value = "6,8,10")]
        k: Vec<usize>,
        #[command(flatten)]
        layout: Layout,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Refine a tour into fly-through trajectories.
    Refine {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Tour JSON to refine; solved at `--lambda` when omitted.
        #[arg(long)]
        tour: Option<PathBuf>,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args)]
struct Layout {
    /// Side of the square deployment area (m).
    #[arg(long, default_value_t = 1000.0)]
    area: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct Source {
    /// Instance file; otherwise one is generated from `--k`, `--area`, `--seed`.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    layout: Layout,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_enum, default_value_t = SolverArg::Monolithic)]
    solver: SolverArg,
    /// Decomposition gap tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Monolithic,
    Benders,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Monolithic => SolverKind::Monolithic,
            SolverArg::Benders => SolverKind::Benders,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome classes with distinct exit codes.
#[derive(Debug)]
enum Failure {
    Config(String),
    Solver(String),
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Mismatch(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Solver(m) | Failure::Mismatch(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        let mut root = &e;
        while let Error::AtLambda { source, .. } = root {
            root = source;
        }
        match root {
            Error::InvalidInstance(_)
            | Error::InvalidInput(_)
            | Error::PowerModelUnavailable
            | Error::InvalidTour(_)
            | Error::SizeBound { .. }
            | Error::Io(_)
            | Error::Json(_) => Failure::Config(msg),
            _ => Failure::Solver(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Gen { k, layout, out } => {
            let inst = experiments::gen_instance(k, layout.area, layout.seed)?;
            let mut text = inst.to_json()?;
            text.push('\n');
            output::write(&out, text.as_bytes())
        }
        Command::Solve {
            source,
            lambda,
            solve,
            refine,
            trace,
            output,
        } => {
            let inst = source.load()?;
            let w = build_edge_weights(&inst);
            let ext = compute_extremes(&w)?;
            let point = solve_point(&w, &ext, lambda, solve.solver.into(), solve.tol)?;
            if let (Some(path), Some(t)) = (&trace, &point.trace) {
                std::fs::write(path, t.to_csv())?;
            }
            let mut row = experiments::SweepRow::from_point(&point);
            if refine {
                announce_coverage(&inst);
                let r = refine_tour(&point.tour, &inst, lambda, &ext)?;
                row.refined = Some(experiments::Metrics {
                    avg_aoi_s: r.avg_aoi,
                    energy_j: r.energy,
                });
            }
            output::emit(&output.out, output.format, &[row])
        }
        Command::Sweep {
            source,
            lambdas,
            solve,
            refine,
            jobs,
            keep_duplicates,
            output,
        } => {
            let inst = source.load()?;
            let grid = parse_lambdas(&lambdas)?;
            if jobs == 0 {
                return Err(Failure::Config("--jobs must be at least 1".into()));
            }
            let opts = SweepOptions {
                solver: solve.solver.into(),
                tol: solve.tol,
                jobs,
                keep_duplicates,
            };
            if refine {
                announce_coverage(&inst);
            }
            let rows = experiments::sweep(&inst, &grid, &opts, refine)?;
            output::emit(&output.out, output.format, &rows)
        }
        Command::Oracle {
            instance,
            count,
            area,
            seed,
            lambdas,
            tol,
            output,
        } => {
            let grid = parse_lambdas(&lambdas)?;
            if tol.is_nan() || tol <= 0.0 {
                return Err(Failure::Config(format!(
                    "--tol must be positive, got {tol}"
                )));
            }
            let mut checks: Vec<OracleCheck> = Vec::new();
            match instance {
                Some(path) => {
                    checks.extend(experiments::oracle_check(&load(&path)?, None, &grid, tol)?)
                }
                None => {
                    for (k, s) in experiments::oracle_corpus(count, seed) {
                        let inst = experiments::gen_instance(k, area, s)?;
                        checks.extend(experiments::oracle_check(&inst, Some(s), &grid, tol)?);
                    }
                }
            }
            output::emit(&output.out, output.format, &checks)?;
            let bad = checks.iter().filter(|c| !c.matches(tol)).count();
            eprintln!(
                "{} of {} checks agree with the oracle",
                checks.len() - bad,
                checks.len()
            );
            if bad > 0 {
                return Err(Failure::Mismatch(format!(
                    "{bad} solver results differ from the oracle"
                )));
            }
            Ok(())
        }
        Command::Compare {
            instance,
            k,
            layout,
            solve,
            output,
        } => {
            let instances = match instance {
                Some(path) => vec![load(&path)?],
                None => k
                    .iter()
                    .map(|&k| experiments::gen_instance(k, layout.area, layout.seed))
                    .collect::<aoi_path::Result<Vec<_>>>()?,
            };
            if let Some(first) = instances.first() {
                announce_coverage(first);
            }
            let mut rows = Vec::new();
            for inst in &instances {
                rows.extend(experiments::compare(inst, solve.solver.into(), solve.tol)?);
            }
            output::emit(&output.out, output.format, &rows)
        }
        Command::Refine {
            source,
            lambda,
            tour,
            solve,
            output,
        } => {
            let inst = source.load()?;
            let w = build_edge_weights(&inst);
            let ext = compute_extremes(&w)?;
            let tour = match tour {
                Some(path) => {
                    let t: MultiTour = serde_json::from_str(&std::fs::read_to_string(&path)?)
                        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    t.validate(inst.k())?;
                    t
                }
                None => solve_point(&w, &ext, lambda, solve.solver.into(), solve.tol)?.tour,
            };
            announce_coverage(&inst);
            let refined = refine_tour(&tour, &inst, lambda, &ext)?;
            output::emit_refined(&output.out, output.format, &refined)
        }
    }
}

impl Source {
    fn load(&self) -> Result<Instance, Failure> {
        match &self.instance {
            Some(path) => load(path),
            None => Ok(experiments::gen_instance(
                self.k,
                self.layout.area,
                self.layout.seed,
            )?),
        }
    }
}

fn load(path: &PathBuf) -> Result<Instance, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Instance::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// `start:step:end` or `a,b,c`.
fn parse_lambdas(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = |what: &str| Failure::Config(format!("bad --lambdas '{spec}': {what}"));
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(&e.to_string()));
    let grid = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, step, b] = parts[..] else {
            return Err(bad("expected start:step:end"));
        };
        lambda_grid(parse(a)?, parse(step)?, parse(b)?)?
    } else {
        spec.split(',').map(parse).collect::<Result<Vec<_>, _>>()?
    };
    if let Some(l) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(bad(&format!("{l} lies outside [0, 1]")));
    }
    Ok(grid)
}

/// The coverage constraint bounds the horizontal distance, not its square.
fn announce_coverage(inst: &Instance) {
    eprintln!(
        "note: coverage constraint read as a distance bound |q - w| <= d_th = {} m",
        inst.coverage_radius
    );
}
