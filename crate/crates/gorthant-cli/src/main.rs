//! `gorthant` — high-dimensional Gaussian orthant probabilities and
//! conservative excursion-set estimation.
//!
//! Exit codes: 0 success, 1 configuration error, 2 estimator error,
//! 3 I/O error. Estimator failures additionally print a machine-readable
//! error document to stdout. Set `ORTHANT_LOG` (error/warn/info/debug) for
//! diagnostics on stderr.

use clap::{Parser, Subcommand};
use gorthant_cli::{bench, conservative_cmd, prob, report, testcase};

const FORMATS_HELP: &str = "\
FILE FORMATS:
  Matrices: headerless CSV (one matrix row per line) or binary with magic
  'GORTHANT', u32 rows, u32 cols (little-endian) and a column-major f64
  payload. Vectors: single-column CSV.
  Observations (conservative): CSV rows of l coordinates then the response.
  Bench CSV columns, in order: method, param, rep, estimate, variance,
  time_s, efficiency, q, m_star, acceptance_rate, seed. 'param' is m for
  bench-m and d for bench-d; summary rows use rep tags p25/p50/p75 and
  eff-ratio-p50.
  Result JSON: {method, p, pi_t, variance, std_error, q, m_star,
  acceptance_rate, time_s, efficiency, seed, config, version, flags}.
  time_s and efficiency vary between runs; everything else is byte-stable
  per seed unless --budget-seconds is set.";

#[derive(Parser)]
#[command(name = "gorthant", version, about, after_long_help = FORMATS_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate P(max X > t) (and pi(t) = 1 - p) for a Gaussian vector.
    Prob(prob::ProbArgs),
    /// Efficiency versus the number of inner simulations m.
    BenchM(bench::BenchMArgs),
    /// Efficiency versus the dimension d for MC, GMC and GanMC.
    BenchD(bench::BenchDArgs),
    /// Conservative excursion-set estimate under a GRF posterior.
    Conservative(conservative_cmd::ConservativeArgs),
    /// Write a synthetic GRF-discretization test problem to disk.
    MakeTestcase(testcase::TestcaseArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prob(args) => prob::run(&args),
        Command::BenchM(args) => bench::run_bench_m(&args),
        Command::BenchD(args) => bench::run_bench_d(&args),
        Command::Conservative(args) => conservative_cmd::run(&args),
        Command::MakeTestcase(args) => testcase::run(&args),
    }
}

/// Maps an error chain to (exit code, kind).
fn classify(err: &anyhow::Error) -> (i32, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<gorthant::Error>() {
            return match e {
                gorthant::Error::Io(_)
                | gorthant::Error::Csv(_)
                | gorthant::Error::BadMatrixFile(_) => (3, "io"),
                gorthant::Error::InvalidInput(_) | gorthant::Error::ShapeMismatch(_) => {
                    (1, "config")
                }
                _ => (2, "estimator"),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (3, "io");
        }
    }
    (1, "config")
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("ORTHANT_LOG", "warn"),
    )
    .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            let (code, kind) = classify(&err);
            let doc = serde_json::json!({
                "error": { "kind": kind, "message": format!("{err:#}") },
                "version": report::VERSION,
            });
            println!("{}", serde_json::to_string_pretty(&doc).unwrap());
            eprintln!("error: {err:#}");
            std::process::exit(code);
        }
    }
}
