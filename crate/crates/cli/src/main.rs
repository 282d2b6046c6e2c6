//! `scm`: certify, solve, intervene on, and query cyclic structural causal
//! models from the command line.
//!
//! Exit codes: 0 success or pass, 1 input error, 2 certification failure,
//! 3 solver divergence, 4 abduction failure, 5 tail-check failure.

mod commands;
mod report;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::EXIT_INPUT;

#[derive(Parser, Debug)]
#[command(
    name = "scm",
    version,
    about = "Counterfactual inference in cyclic structural causal models",
    subcommand_required = true,
    arg_required_else_help = true
)]
pub struct Cli {
    /// Emit the full run report as a single JSON object on stdout
    #[arg(long, global = true)]
    pub json: bool,

    /// Seed for every randomized operation; reports always echo it
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Fixed-point solver tolerance
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol: f64,

    /// Fixed-point solver iteration cap
    #[arg(long, global = true, default_value_t = 10_000)]
    pub max_iter: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Certify or estimate the global contraction constant
    Certify(CertifyArgs),
    /// Solve the structural fixed-point equations at a noise realisation
    Solve(SolveArgs),
    /// Draw observational samples to CSV
    Sample(SampleArgs),
    /// Apply (composed) shift-scale interventions and write the new model
    Intervene(InterveneArgs),
    /// Exact or Monte Carlo counterfactual queries
    Counterfactual(CounterfactualArgs),
    /// Validate the sub-Gaussian tail bound on counterfactual samples
    Tailcheck(TailcheckArgs),
    /// Fold an intervention sequence into one equivalent intervention
    Compose(ComposeArgs),
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    /// Model file (JSON)
    pub model: String,
    /// Norm index: 1, 2, or inf
    #[arg(long, default_value = "2")]
    pub p: String,
    /// Sampled-estimate pair count, used when no certified bound exists
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    pub model: String,
    /// Comma-separated noise vector, one entry per variable
    #[arg(long, conflicts_with = "zero_noise")]
    pub noise: Option<String>,
    /// Solve at zero noise
    #[arg(long)]
    pub zero_noise: bool,
    #[arg(long, default_value = "2")]
    pub p: String,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    pub model: String,
    /// Number of rows to draw
    #[arg(long)]
    pub n: usize,
    /// Output CSV path
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct InterveneArgs {
    pub model: String,
    /// Shift-scale stage NAME:scale:shift; repeatable, applied in flag order
    #[arg(long = "ss", id = "ss")]
    pub ss: Vec<String>,
    /// Hard intervention NAME:value; repeatable, applied in flag order
    #[arg(long = "do", id = "do")]
    pub do_flags: Vec<String>,
    /// Output path for the intervened model
    #[arg(long)]
    pub out: String,
    #[arg(long, default_value = "2")]
    pub p: String,
}

#[derive(Args, Debug)]
pub struct CounterfactualArgs {
    pub model: String,
    /// Observed values, comma-separated, for the exact route
    #[arg(long)]
    pub obs: Option<String>,
    #[arg(long = "ss", id = "ss")]
    pub ss: Vec<String>,
    #[arg(long = "do", id = "do")]
    pub do_flags: Vec<String>,
    /// Monte Carlo sample count for the joint counterfactual distribution
    #[arg(long)]
    pub samples: Option<usize>,
    /// Optional CSV output of the joint (factual, counterfactual) samples
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct TailcheckArgs {
    pub model: String,
    #[arg(long = "ss", id = "ss")]
    pub ss: Vec<String>,
    #[arg(long = "do", id = "do")]
    pub do_flags: Vec<String>,
    /// Functional: proj:NAME (NAME may be primed), diff:NAME, or mean
    #[arg(long = "h")]
    pub functional: String,
    /// Comma-separated exceedance thresholds, all positive
    #[arg(long, default_value = "0.2,0.4,0.6,0.8")]
    pub t_grid: String,
    /// Counterfactual sample count
    #[arg(long, default_value_t = 200_000)]
    pub n: usize,
    /// Use this contraction constant instead of certifying
    #[arg(long)]
    pub assert_kappa: Option<f64>,
    /// Accept scales above one via the inflated constant a_max * kappa
    #[arg(long)]
    pub allow_kappa_max: bool,
    /// Also check the lower tail (the bound applied to -h)
    #[arg(long)]
    pub two_sided: bool,
    /// Optional CSV output of (t, empirical, bound)
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long, default_value = "2")]
    pub p: String,
}

#[derive(Args, Debug)]
pub struct ComposeArgs {
    pub model: String,
    #[arg(long = "ss", id = "ss")]
    pub ss: Vec<String>,
    #[arg(long = "do", id = "do")]
    pub do_flags: Vec<String>,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let matches = match Cli::command().try_get_matches() {
        Ok(matches) => matches,
        Err(err)
            if err.kind() == ErrorKind::DisplayHelp || err.kind() == ErrorKind::DisplayVersion =>
        {
            print!("{err}");
            return 0;
        }
        Err(err) => {
            eprint!("{err}");
            return EXIT_INPUT;
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("matches were produced by this parser");
    match commands::run(&cli, &matches) {
        Ok(run_report) => {
            if cli.json {
                println!(
                    "{}",
                    serde_json::to_string(&run_report).expect("report serialization cannot fail")
                );
            } else {
                report::render_human(&run_report);
            }
            run_report.exit_code
        }
        Err(err) => {
            eprintln!("error: {}", err.message);
            err.code
        }
    }
}
