//! Conservative excursion-set estimation from observation files.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use gorthant::grf::{conservative_estimate, grf_condition, vorobev, PriorMean};
use gorthant::io;
use gorthant::SeedRng;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::estargs::EstimatorArgs;
use crate::input::parse_list;
use crate::report::{emit_json, VERSION};
use crate::testcase::parse_kernel;

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConservativeArgs {
    /// Observations CSV: one row per evaluation, coordinate columns then the
    /// response column.
    #[arg(long)]
    pub obs: PathBuf,

    #[arg(long, default_value = "matern52")]
    pub kernel: String,

    /// Comma-separated kernel ranges (one per coordinate).
    #[arg(long)]
    pub ranges: String,

    #[arg(long, default_value_t = 1.0)]
    pub variance: f64,

    /// Constant prior mean.
    #[arg(long, default_value_t = 0.0)]
    pub prior_mean: f64,

    /// Uniform grid shorthand over [0,1]^l, e.g. "100x100".
    #[arg(long)]
    pub grid: Option<String>,

    /// Explicit grid point list (CSV, one point per row).
    #[arg(long)]
    pub grid_csv: Option<PathBuf>,

    /// Excursion threshold: the estimated set is {x : xi(x) <= t}.
    #[arg(short, long)]
    pub t: f64,

    /// Confidence level of the conservative estimate.
    #[arg(long, default_value_t = 0.95)]
    pub alpha: f64,

    /// Result JSON path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Optional CSV membership mask of the grid.
    #[arg(long)]
    pub mask_out: Option<PathBuf>,

    #[command(flatten)]
    pub est: EstimatorArgs,
}

/// Inclusive uniform grid over `[0,1]^l` with the given per-dimension counts,
/// row-major cartesian product. Returns the points and the cell volume.
pub fn uniform_grid(counts: &[usize]) -> Result<(DMatrix<f64>, f64)> {
    if counts.is_empty() || counts.iter().any(|&n| n < 2) {
        bail!("grid needs at least 2 points per dimension");
    }
    let l = counts.len();
    let total: usize = counts.iter().product();
    let mut pts = DMatrix::zeros(total, l);
    for r in 0..total {
        let mut idx = r;
        for dim in (0..l).rev() {
            let n = counts[dim];
            pts[(r, dim)] = (idx % n) as f64 / (n - 1) as f64;
            idx /= n;
        }
    }
    let cell = counts.iter().map(|&n| 1.0 / n as f64).product();
    Ok((pts, cell))
}

pub fn run(args: &ConservativeArgs) -> Result<()> {
    let obs = io::read_matrix_csv(&args.obs)
        .with_context(|| format!("reading observations from {}", args.obs.display()))?;
    if obs.ncols() < 2 {
        bail!("observations need at least one coordinate column and a response column");
    }
    let l = obs.ncols() - 1;
    let design = obs.columns(0, l).into_owned();
    let responses = DVector::from_column_slice(obs.column(l).as_slice());

    let kernel = parse_kernel(&args.kernel, &args.ranges, args.variance)?;
    if kernel.input_dim() != l {
        bail!("kernel has {} ranges but observations have {l} coordinates", kernel.input_dim());
    }

    let (grid, cell_volume) = match (&args.grid, &args.grid_csv) {
        (Some(spec), None) => {
            let counts = parse_list::<usize>(&spec.replace(['x', 'X'], ","), "grid")?;
            if counts.len() != l {
                bail!("grid spec has {} dimensions but observations have {l}", counts.len());
            }
            uniform_grid(&counts)?
        }
        (None, Some(path)) => {
            let pts = io::read_matrix_csv(path)
                .with_context(|| format!("reading grid from {}", path.display()))?;
            if pts.ncols() != l {
                bail!("grid points have {} columns but observations have {l}", pts.ncols());
            }
            (pts, 1.0)
        }
        _ => bail!("exactly one of --grid or --grid-csv is required"),
    };

    let post = grf_condition(&kernel, &PriorMean::Constant(args.prior_mean), &design, &responses, &grid)?;
    let (_, vb) = vorobev(&post, args.t, cell_volume);
    // Inclusion probabilities default to a 5-second wall-clock budget per
    // call; an explicit --n-outer switches to the deterministic fixed-count
    // mode instead.
    let mut est = args.est.clone();
    if est.budget_seconds.is_none() && est.n_outer.is_none() {
        est.budget_seconds = Some(5.0);
    }
    let prob_config = est.orthant_config()?;
    let result =
        conservative_estimate(&post, args.t, args.alpha, &prob_config, SeedRng::new(args.est.seed))?;

    if let Some(path) = &args.mask_out {
        let mut member = vec![0u8; post.len()];
        for &i in &result.indices {
            member[i] = 1;
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["index".to_string()];
        header.extend((0..l).map(|i| format!("x{i}")));
        header.push("in_set".into());
        w.write_record(&header)?;
        for i in 0..post.len() {
            let mut row = vec![i.to_string()];
            row.extend((0..l).map(|c| format!("{}", grid[(i, c)])));
            row.push(member[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
    }

    let doc = json!({
        "alpha": result.alpha,
        "t": args.t,
        "size": result.size,
        "rho": result.rho,
        "inclusion_prob": result.inclusion_prob,
        "inclusion_se": result.inclusion_se,
        "empty": result.empty,
        "rho_v": vb.rho_v,
        "expected_excursion_volume": vb.expected_volume,
        "grid_points": post.len(),
        "dichotomy_trace": result.trace,
        "seed": args.est.seed,
        "config": args,
        "version": VERSION,
    });
    emit_json(&args.out, &doc)
}
