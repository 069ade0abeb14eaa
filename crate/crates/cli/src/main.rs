//! `fusepath`: fit convex clustering paths, compute the fusion threshold,
//! degrees of freedom and eBIC selections, and run the simulation studies.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 results written but
//! some solve did not converge.

mod commands;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusepath::simlab::Method;
use fusepath::{FusionNorm, SolveSettings};

use commands::{DataKind, Experiment, ExperimentParams, GridChoice, Output, Problem};
use output::Format;

#[derive(Parser, Debug)]
#[command(name = "fusepath", version, about = "Convex clustering solution paths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve along a grid of penalty weights.
    FitPath {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Smallest penalty weight that fuses every row, with the cheap upper bound.
    LambdaMax {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Degrees of freedom along a path.
    Dof {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Choose the penalty weight by extended BIC.
    SelectEbic {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// eBIC weight in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        gamma_ebic: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run a simulation study and write its result table.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// CSV file with one observation per row; a text header row is skipped.
    #[arg(long)]
    input: PathBuf,
    /// Fusion norm.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..=2))]
    q: u32,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Relative ADMM stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// ADMM iteration cap per tolerance level.
    #[arg(long)]
    max_iter: Option<usize>,
}

impl SolverArgs {
    fn settings(&self) -> Result<SolveSettings, String> {
        let mut s = SolveSettings::default();
        if let Some(t) = self.tol {
            s.tol_primal = t;
            s.tol_dual = t;
        }
        if let Some(m) = self.max_iter {
            s.max_iter = m;
        }
        s.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Number of geometric grid points after the leading zero.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    grid_count: u64,
    /// Smallest positive grid point as a fraction of the threshold weight.
    #[arg(long, default_value_t = 1e-3)]
    grid_min_frac: f64,
    /// Explicit ascending weights, comma separated; replaces the generated grid.
    #[arg(long, value_delimiter = ',', num_args = 0.., conflicts_with_all = ["grid_count", "grid_min_frac"])]
    lambdas: Option<Vec<f64>>,
    /// Rounds of midpoint insertion where the cluster count jumps by more than one.
    #[arg(long, default_value_t = 0)]
    refine: usize,
}

impl GridArgs {
    fn choice(&self) -> Result<GridChoice, String> {
        if let Some(l) = &self.lambdas {
            if l.is_empty() {
                return Err("--lambdas needs at least one value".into());
            }
        }
        if !(self.grid_min_frac > 0.0 && self.grid_min_frac <= 1.0) {
            return Err(format!("--grid-min-frac must be in (0, 1], got {}", self.grid_min_frac));
        }
        Ok(GridChoice {
            lambdas: self.lambdas.clone(),
            count: self.grid_count as usize,
            min_frac: self.grid_min_frac,
            refine: self.refine,
        })
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

impl OutputArgs {
    fn output(&self) -> Output {
        Output {
            out: self.out.clone(),
            format: self.format,
        }
    }
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(value_enum)]
    name: Experiment,
    /// Master seed; replicate r uses an independent stream of it.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=2))]
    q: Option<u32>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// True number of Gaussian clusters (2 or 3).
    #[arg(long)]
    k_true: Option<usize>,
    /// Data generator for rand-curves.
    #[arg(long, value_enum, default_value_t = DataKind::Gaussian)]
    data: DataKind,
    /// Methods for rand-curves, comma separated.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// eBIC weights for table1, comma separated.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    /// Scaled weight for pred-bound as a multiple of the bound's threshold.
    #[arg(long, default_value_t = 1.0)]
    multiplier: f64,
    #[arg(long)]
    grid_count: Option<usize>,
    /// Largest cluster count swept for the baseline methods.
    #[arg(long)]
    max_k: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

impl ExperimentArgs {
    fn params(&self) -> Result<ExperimentParams, String> {
        let methods = match &self.methods {
            None => None,
            Some(names) => Some(
                names
                    .iter()
                    .map(|n| {
                        Method::from_name(n).ok_or_else(|| {
                            let all: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                            format!("unknown method '{n}', expected one of {}", all.join(", "))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        Ok(ExperimentParams {
            name: self.name,
            seed: self.seed,
            reps: self.reps,
            q: self.q,
            n: self.n,
            p: self.p,
            sigma: self.sigma,
            k_true: self.k_true,
            data: self.data,
            methods,
            gammas: self.gammas.clone(),
            multiplier: self.multiplier,
            grid_count: self.grid_count,
            max_k: self.max_k,
            settings: self.solver.settings()?,
        })
    }
}

fn problem(args: &ProblemArgs) -> Result<Problem, String> {
    Ok(Problem {
        input: args.input.clone(),
        norm: FusionNorm::from_q(args.q).ok_or("--q must be 1 or 2")?,
        settings: args.solver.settings()?,
    })
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("FUSEPATH_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| format!("FUSEPATH_THREADS must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<bool, String> {
    configure_threads()?;
    match &cli.command {
        Command::FitPath { problem: p, grid, output } => commands::fit_path(&problem(p)?, &grid.choice()?, &output.output()),
        Command::LambdaMax { problem: p, output } => commands::lambda_max(&problem(p)?, &output.output()),
        Command::Dof { problem: p, grid, output } => commands::dof(&problem(p)?, &grid.choice()?, &output.output()),
        Command::SelectEbic {
            problem: p,
            grid,
            gamma_ebic,
            output,
        } => commands::select_ebic(&problem(p)?, &grid.choice()?, *gamma_ebic, &output.output()),
        Command::Experiment(args) => commands::experiment(&args.params()?, &args.output.output()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("warning: some points did not converge; results were written");
            ExitCode::from(2)
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
