//! Benchmark harness: efficiency versus the inner count `m` and versus the
//! dimension `d`, as replication-level CSV records plus summary quantiles.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use gorthant::{estimate_orthant, GaussianSpec, Method, OrthantConfig, SeedRng};
use rayon::prelude::*;
use serde::Serialize;

use crate::estargs::EstimatorArgs;
use crate::input::{load_spec, parse_list};
use crate::report::{append_summaries, median_efficiency, write_records, BenchRecord};
use crate::testcase;

fn run_jobs<T: Send, F: Fn(usize) -> Result<T> + Send + Sync>(
    jobs: usize,
    count: usize,
    f: F,
) -> Result<Vec<T>> {
    if jobs <= 1 {
        (0..count).map(f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
        pool.install(|| (0..count).into_par_iter().map(f).collect())
    }
}

// ---------------------------------------------------------------------------
// bench-m
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchMArgs {
    /// Covariance file (CSV or GORTHANT binary).
    #[arg(long)]
    pub cov: Option<PathBuf>,
    /// Mean: scalar or CSV path.
    #[arg(long)]
    pub mean: Option<String>,
    /// Synthetic i.i.d. dimension (alternative to --cov).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Synthetic marginal variance.
    #[arg(long, default_value_t = 1.0)]
    pub var: f64,

    /// Threshold t.
    #[arg(short, long)]
    pub t: f64,

    /// Comma-separated inner counts to sweep.
    #[arg(long, default_value = "1,2,5,10,20,50")]
    pub m_list: String,

    /// Replications per m.
    #[arg(long, default_value_t = 30)]
    pub reps: usize,

    /// Skip the GMC baseline rows.
    #[arg(long)]
    pub no_baseline: bool,

    /// Parallel replications (keep at 1 when timings matter).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Output CSV.
    #[arg(long, default_value = "bench_m.csv")]
    pub out: PathBuf,

    #[command(flatten)]
    pub est: EstimatorArgs,
}

pub fn run_bench_m(args: &BenchMArgs) -> Result<()> {
    let (spec, _src) = load_spec(&args.cov, &args.mean, args.dim, args.var)?;
    let m_list = parse_list::<usize>(&args.m_list, "m-list")?;
    if m_list.is_empty() {
        bail!("--m-list must not be empty");
    }
    let base_config = args.est.orthant_config()?;
    let records = bench_m_records(
        &spec,
        args.t,
        &m_list,
        args.reps,
        !args.no_baseline,
        args.est.seed,
        &base_config,
        args.jobs,
    )?;
    let mut records = records;
    append_summaries(&mut records);
    write_records(&args.out, &records)?;
    log::info!("wrote {} rows to {}", records.len(), args.out.display());
    Ok(())
}

/// Core of `bench-m`, reusable from tests: GanMC at each fixed m (same seeds
/// across m), plus a GMC baseline at the same seeds when requested.
#[allow(clippy::too_many_arguments)]
pub fn bench_m_records(
    spec: &GaussianSpec,
    t: f64,
    m_list: &[usize],
    reps: usize,
    baseline: bool,
    seed: u64,
    base_config: &OrthantConfig,
    jobs: usize,
) -> Result<Vec<BenchRecord>> {
    let mut tasks: Vec<(String, usize, usize)> = Vec::new(); // (method, m, rep)
    for &m in m_list {
        for rep in 0..reps {
            tasks.push(("GanMC".into(), m, rep));
        }
    }
    if baseline {
        for rep in 0..reps {
            tasks.push(("GMC".into(), 1, rep));
        }
    }
    run_jobs(jobs, tasks.len(), |i| {
        let (method_name, m, rep) = &tasks[i];
        let seed_rng = SeedRng::new(seed).replication(*rep as u64);
        let (method, config) = if method_name == "GanMC" {
            (
                Method::GanMc,
                OrthantConfig { m_fixed: Some(*m), ..base_config.clone() },
            )
        } else {
            (Method::Gmc, base_config.clone())
        };
        let est = estimate_orthant(spec, t, method, &config, seed_rng)?;
        Ok(BenchRecord::from_estimate(method_name, *m as u64, *rep, &est))
    })
}

// ---------------------------------------------------------------------------
// bench-d
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchDArgs {
    /// Comma-separated dimensions to sweep.
    #[arg(long, default_value = "100,200,500,1000")]
    pub d_list: String,

    /// Test family: grf (discretized random field) or independent.
    #[arg(long, default_value = "grf")]
    pub family: String,

    /// Input dimension of the GRF family.
    #[arg(long, default_value_t = 6)]
    pub l: usize,

    /// Kernel of the GRF family.
    #[arg(long, default_value = "matern52")]
    pub kernel: String,

    #[arg(long, default_value = "0.5,0.5,1,1,0.5,0.5")]
    pub ranges: String,

    #[arg(long, default_value_t = 8.0)]
    pub variance: f64,

    #[arg(long, default_value_t = 60)]
    pub cond_count: usize,

    #[arg(long, default_value_t = 4.0)]
    pub mean_level: f64,

    /// Threshold t.
    #[arg(short, long, default_value_t = 5.0)]
    pub t: f64,

    /// Replications per d.
    #[arg(long, default_value_t = 15)]
    pub reps: usize,

    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Output CSV.
    #[arg(long, default_value = "bench_d.csv")]
    pub out: PathBuf,

    #[command(flatten)]
    pub est: EstimatorArgs,
}

pub fn run_bench_d(args: &BenchDArgs) -> Result<()> {
    let d_list = parse_list::<usize>(&args.d_list, "d-list")?;
    let base_config = args.est.orthant_config()?;
    let mut records = Vec::new();
    for &d in &d_list {
        let spec = match args.family.as_str() {
            "independent" => GaussianSpec::standard(d),
            "grf" => {
                let kernel = testcase::parse_kernel(&args.kernel, &args.ranges, args.variance)?;
                testcase::synthesize(args.l, d, &kernel, args.cond_count, args.mean_level, args.est.seed)?.0
            }
            other => bail!("unknown family {other:?} (expected grf or independent)"),
        };
        records.extend(bench_d_records(
            &spec,
            args.t,
            d,
            args.reps,
            args.est.seed,
            &base_config,
            args.jobs,
        )?);
    }
    append_ratio_rows(&mut records, &d_list);
    append_summaries(&mut records);
    write_records(&args.out, &records)?;
    log::info!("wrote {} rows to {}", records.len(), args.out.display());
    Ok(())
}

/// One dimension's worth of `bench-d` rows: MC, GMC, GanMC at matched seeds.
pub fn bench_d_records(
    spec: &GaussianSpec,
    t: f64,
    d: usize,
    reps: usize,
    seed: u64,
    base_config: &OrthantConfig,
    jobs: usize,
) -> Result<Vec<BenchRecord>> {
    let methods = [("MC", Method::Mc), ("GMC", Method::Gmc), ("GanMC", Method::GanMc)];
    let mut tasks = Vec::new();
    for (name, method) in methods {
        for rep in 0..reps {
            tasks.push((name, method, rep));
        }
    }
    run_jobs(jobs, tasks.len(), |i| {
        let (name, method, rep) = tasks[i];
        let seed_rng = SeedRng::new(seed).replication(rep as u64);
        let est = estimate_orthant(spec, t, method, base_config, seed_rng)?;
        Ok(BenchRecord::from_estimate(name, d as u64, rep, &est))
    })
}

/// Median efficiency ratios GMC/MC and GanMC/MC per dimension, appended as
/// summary rows (`rep = "eff-ratio-p50"`, `estimate` holds the ratio).
pub fn append_ratio_rows(records: &mut Vec<BenchRecord>, d_list: &[usize]) {
    for &d in d_list {
        let mc = median_efficiency(records, "MC", d as u64);
        for method in ["GMC", "GanMC"] {
            let eff = median_efficiency(records, method, d as u64);
            records.push(BenchRecord {
                method: format!("{method}/MC"),
                param: d as u64,
                rep: "eff-ratio-p50".into(),
                estimate: if mc > 0.0 { eff / mc } else { f64::NAN },
                variance: 0.0,
                time_s: 0.0,
                efficiency: None,
                q: 0,
                m_star: 0,
                acceptance_rate: 0.0,
                seed: 0,
            });
        }
    }
}
