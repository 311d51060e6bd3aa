//! Spec loading: files or synthetic parameters.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use gorthant::io;
use gorthant::GaussianSpec;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Where a spec came from, echoed into outputs.
#[derive(Debug, Clone, Serialize)]
pub struct SpecSource {
    pub cov: Option<String>,
    pub mean: Option<String>,
    pub dim: Option<usize>,
    pub var: f64,
}

/// Resolves the (mean, cov) inputs:
/// - `--cov FILE` (CSV or binary) with `--mean` a file path or a scalar
///   broadcast over the dimension;
/// - or `--dim D` with scalar `--mean` / `--var` for an i.i.d. Gaussian.
pub fn load_spec(
    cov: &Option<PathBuf>,
    mean: &Option<String>,
    dim: Option<usize>,
    var: f64,
) -> Result<(GaussianSpec, SpecSource)> {
    let source = SpecSource {
        cov: cov.as_ref().map(|p| p.display().to_string()),
        mean: mean.clone(),
        dim,
        var,
    };
    let spec = match cov {
        Some(path) => {
            let cov = io::read_matrix_auto(path)
                .with_context(|| format!("reading covariance from {}", path.display()))?;
            let d = cov.nrows();
            let mean_vec = match mean {
                None => DVector::zeros(d),
                Some(s) => match s.parse::<f64>() {
                    Ok(v) => DVector::from_element(d, v),
                    Err(_) => io::read_vector_csv(&PathBuf::from(s))
                        .with_context(|| format!("reading mean from {s}"))?,
                },
            };
            GaussianSpec::new(mean_vec, cov)?
        }
        None => {
            let d = match dim {
                Some(d) if d >= 1 => d,
                _ => bail!("either --cov FILE or --dim D is required"),
            };
            if var <= 0.0 {
                bail!("--var must be positive");
            }
            let mean_vec = match mean {
                None => DVector::zeros(d),
                Some(s) => match s.parse::<f64>() {
                    Ok(v) => DVector::from_element(d, v),
                    Err(_) => io::read_vector_csv(&PathBuf::from(s))
                        .with_context(|| format!("reading mean from {s}"))?,
                },
            };
            GaussianSpec::new(mean_vec, DMatrix::identity(d, d) * var)?
        }
    };
    Ok((spec, source))
}

/// Parses a comma-separated list.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad {what} entry {tok:?}: {e}"))
        })
        .collect()
}
