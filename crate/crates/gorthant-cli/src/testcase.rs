//! Synthetic test-problem construction: a GRF discretized over the first `d`
//! points of a low-discrepancy sequence, with a non-constant mean obtained by
//! conditioning on seeded random values at a seeded design.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use gorthant::grf::{grf_condition, GrfPosterior, Kernel, PriorMean};
use gorthant::io;
use gorthant::qmc::{lowdiscrepancy_points, QmcSequence, SequenceKind};
use gorthant::{GaussianSpec, SeedRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::input::parse_list;

#[derive(Debug, Clone, Args, Serialize)]
pub struct TestcaseArgs {
    /// Input-space dimension of the underlying field.
    #[arg(long, default_value_t = 6)]
    pub l: usize,

    /// Number of discretization points (the Gaussian vector's dimension).
    #[arg(long, default_value_t = 1000)]
    pub d: usize,

    /// Kernel family: matern52 or gaussian.
    #[arg(long, default_value = "matern52")]
    pub kernel: String,

    /// Comma-separated ranges, one per input dimension.
    #[arg(long, default_value = "0.5,0.5,1,1,0.5,0.5")]
    pub ranges: String,

    /// Kernel variance.
    #[arg(long, default_value_t = 8.0)]
    pub variance: f64,

    /// Number of random conditioning values shaping the mean.
    #[arg(long, default_value_t = 60)]
    pub cond_count: usize,

    /// Level around which the conditioning values scatter.
    #[arg(long, default_value_t = 0.0)]
    pub mean_level: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output directory for mean.csv, cov.(csv|bin), points.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    /// Covariance file format: csv or bin.
    #[arg(long, default_value = "csv")]
    pub format: String,
}

pub fn parse_kernel(kind: &str, ranges: &str, variance: f64) -> Result<Kernel> {
    let ranges = parse_list::<f64>(ranges, "ranges")?;
    Ok(match kind {
        "matern52" | "matern" => Kernel::Matern52Tensor { variance, ranges },
        "gaussian" | "sqexp" => Kernel::Gaussian { variance, ranges },
        other => bail!("unknown kernel {other:?} (expected matern52 or gaussian)"),
    })
}

/// Builds the synthetic spec in memory; also used by `bench-d`.
pub fn synthesize(
    l: usize,
    d: usize,
    kernel: &Kernel,
    cond_count: usize,
    mean_level: f64,
    seed: u64,
) -> Result<(GaussianSpec, DMatrix<f64>, GrfPosterior)> {
    if kernel.input_dim() != l {
        bail!("kernel has {} ranges but --l is {l}", kernel.input_dim());
    }
    let points = lowdiscrepancy_points(&QmcSequence::new(l, SequenceKind::Sobol), d)?;
    let base = SeedRng::new(seed);

    let mut design_rng = base.stream("testcase/design");
    let design = DMatrix::from_fn(cond_count, l, |_, _| design_rng.gen::<f64>());
    let mut value_rng = base.stream("testcase/values");
    let sd = kernel.variance().sqrt();
    let values = DVector::from_fn(cond_count, |_, _| {
        mean_level + sd * value_rng.sample::<f64, _>(StandardNormal)
    });

    let post = grf_condition(kernel, &PriorMean::Constant(mean_level), &design, &values, &points)?;
    let spec = GaussianSpec::new(post.post_mean().clone(), post.full_cov()?)?;
    Ok((spec, points, post))
}

pub fn run(args: &TestcaseArgs) -> Result<()> {
    let kernel = parse_kernel(&args.kernel, &args.ranges, args.variance)?;
    let (spec, points, _) = synthesize(
        args.l,
        args.d,
        &kernel,
        args.cond_count,
        args.mean_level,
        args.seed,
    )?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    io::write_vector_csv(&args.out_dir.join("mean.csv"), spec.mean())?;
    match args.format.as_str() {
        "csv" => io::write_matrix_csv(&args.out_dir.join("cov.csv"), spec.cov())?,
        "bin" => io::write_matrix_bin(&args.out_dir.join("cov.bin"), spec.cov())?,
        other => bail!("unknown format {other:?} (expected csv or bin)"),
    }
    io::write_matrix_csv(&args.out_dir.join("points.csv"), &points)?;
    log::info!(
        "wrote d={} testcase (l={}, kernel={}) to {}",
        args.d,
        args.l,
        args.kernel,
        args.out_dir.display()
    );
    Ok(())
}
