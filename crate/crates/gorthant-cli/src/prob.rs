//! The `prob` subcommand.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use gorthant::{estimate_orthant, SeedRng};
use serde::Serialize;
use serde_json::json;

use crate::estargs::EstimatorArgs;
use crate::input::load_spec;
use crate::report::{emit_json, estimate_json, write_records, BenchRecord};

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProbArgs {
    /// Covariance file (CSV or GORTHANT binary).
    #[arg(long)]
    pub cov: Option<PathBuf>,

    /// Mean: a scalar (broadcast) or a CSV vector path.
    #[arg(long)]
    pub mean: Option<String>,

    /// Synthetic i.i.d. dimension (alternative to --cov).
    #[arg(long)]
    pub dim: Option<usize>,

    /// Synthetic marginal variance.
    #[arg(long, default_value_t = 1.0)]
    pub var: f64,

    /// Threshold t: reports p = P(max X > t) and pi(t) = 1 - p.
    #[arg(short, long)]
    pub t: f64,

    /// Result path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Output format: json (full document) or csv (one record row).
    #[arg(long, default_value = "json")]
    pub format: String,

    #[command(flatten)]
    pub est: EstimatorArgs,
}

pub fn run(args: &ProbArgs) -> Result<()> {
    let (spec, source) = load_spec(&args.cov, &args.mean, args.dim, args.var)?;
    let method = args.est.method()?;
    let config = args.est.orthant_config()?;
    let est = estimate_orthant(&spec, args.t, method, &config, SeedRng::new(args.est.seed))?;
    match args.format.as_str() {
        "json" => {
            let echo = json!({ "spec": source, "t": args.t, "estimator": args.est });
            emit_json(&args.out, &estimate_json(&est, echo))
        }
        "csv" => {
            let record = BenchRecord::from_estimate(&est.method.to_string(), 0, 0, &est);
            let rows = vec![record];
            match &args.out {
                Some(path) => write_records(path, &rows)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
                    w.serialize(&rows[0])?;
                    w.flush()?;
                }
            }
            Ok(())
        }
        other => anyhow::bail!("unknown format {other:?} (expected json or csv)"),
    }
}
