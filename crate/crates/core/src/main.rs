use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparse_afem::afem::Mode;
use sparse_afem::cli::{self, ExampleId, RunConfig, RATE_COLUMNS};
use sparse_afem::estimators::Weights;
use sparse_afem::Scheme;

#[derive(Parser)]
#[command(version, about = "Adaptive FEM for sparse optimal control of the Poisson equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its convergence table.
    Run(RunArgs),
    /// Fit experimental rates (slope against ndof) from a convergence table.
    Rates {
        csv: PathBuf,
        /// Comma-separated column names; defaults to all error and estimator columns.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// 1, 2 or custom
    #[arg(long, default_value = "1")]
    example: ExampleId,
    /// pc, p1 or vd
    #[arg(long, default_value = "pc")]
    scheme: Scheme,
    /// uniform or adaptive
    #[arg(long, default_value = "adaptive")]
    mode: Mode,
    #[arg(long, default_value_t = 1e-2)]
    alpha: f64,
    #[arg(long, default_value_t = 0.7)]
    beta: f64,
    #[arg(long, default_value_t = 10_000)]
    max_ndof: usize,
    #[arg(long, default_value_t = 0.5)]
    mark_fraction: f64,
    /// Newton tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Estimator weights for the state, adjoint, control and subgradient parts.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [1.0, 1.0, 1.0, 1.0])]
    weights: Vec<f64>,
    /// Integrate the variational control terms with a plain rule of this degree.
    #[arg(long)]
    vd_quadrature: Option<usize>,
    #[arg(long, default_value = "convergence.csv")]
    out: PathBuf,
    /// Directory for one mesh file per step.
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => {
            let w = &a.weights;
            let config = RunConfig {
                example: a.example,
                scheme: a.scheme,
                mode: a.mode,
                alpha: a.alpha,
                beta: a.beta,
                max_ndof: a.max_ndof,
                mark_fraction: a.mark_fraction,
                tol: a.tol,
                weights: Weights {
                    state: w[0],
                    adjoint: w[1],
                    control: w[2],
                    subgradient: w[3],
                },
                out: a.out,
                vd_quadrature: a.vd_quadrature,
                dump_mesh: a.dump_mesh,
            };
            match cli::run_experiment(&config) {
                Ok(summary) => {
                    print!("{summary}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Rates { csv, columns } => {
            let names: Vec<&str> = if columns.is_empty() {
                RATE_COLUMNS.to_vec()
            } else {
                columns.iter().map(String::as_str).collect()
            };
            match cli::fit_rates(&csv, &names) {
                Ok(fits) => {
                    for f in fits {
                        println!("{:<12} {:+.4}  ({} rows)", f.column, f.slope, f.rows);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
