//! Estimator flags shared by the subcommands.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use gorthant::io;
use gorthant::orthant::BudgetMode;
use gorthant::{DimSelect, Method, OrthantConfig, QSelectParams, QmcBudget};
use serde::Serialize;

use crate::input::parse_list;

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimatorArgs {
    /// Estimation method: MC, GMC or GanMC.
    #[arg(long, default_value = "GanMC")]
    pub method: String,

    /// Base seed; all streams derive from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Wall-clock budget per estimate in seconds. When set, sample counts
    /// come from measured costs (not bit-reproducible); without it the run
    /// uses a fixed outer count and is byte-stable per seed.
    #[arg(long)]
    pub budget_seconds: Option<f64>,

    /// Fixed outer sample count (default 10000; ignored when
    /// --budget-seconds is set).
    #[arg(long)]
    pub n_outer: Option<usize>,

    /// Initial number of active dimensions (default: ceil(d^(1/3))).
    #[arg(long)]
    pub q0: Option<usize>,

    /// Active-dimension increment per round (default: q0).
    #[arg(long)]
    pub q_step: Option<usize>,

    /// Stopping factor of the q search.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,

    /// Dimension selection rule: A (weights p_t) or B (weights p_t(1-p_t)).
    #[arg(long, default_value = "B")]
    pub dim_method: String,

    /// Comma-separated explicit active dimensions (0-based); bypasses the
    /// q search.
    #[arg(long)]
    pub explicit_dims: Option<String>,

    /// Append new dimensions each round instead of redrawing the set.
    #[arg(long)]
    pub grow_dims: bool,

    /// CSV of spatial coordinates (one row per dimension) enabling the
    /// distance-product reweighting of the selection.
    #[arg(long)]
    pub spatial: Option<PathBuf>,

    /// Pilot outer size for GanMC.
    #[arg(long, default_value_t = 50)]
    pub n0: usize,

    /// Pilot inner size for GanMC.
    #[arg(long, default_value_t = 10)]
    pub m0: usize,

    /// Cap on the planned inner count.
    #[arg(long, default_value_t = 200)]
    pub m_max: usize,

    /// Fixed inner count, overriding the planner.
    #[arg(long)]
    pub fixed_m: Option<usize>,

    /// QMC points per randomization.
    #[arg(long, default_value_t = 4096)]
    pub qmc_points: usize,

    /// QMC randomizations.
    #[arg(long, default_value_t = 12)]
    pub qmc_rands: usize,

    /// Candidate-draw cap of the rejection sampler.
    #[arg(long, default_value_t = 10_000_000)]
    pub max_tries: u64,
}

impl EstimatorArgs {
    pub fn method(&self) -> Result<Method> {
        Ok(match self.method.as_str() {
            "MC" | "mc" => Method::Mc,
            "GMC" | "gmc" => Method::Gmc,
            "GanMC" | "ganmc" => Method::GanMc,
            other => bail!("unknown method {other:?} (expected MC, GMC or GanMC)"),
        })
    }

    pub fn orthant_config(&self) -> Result<OrthantConfig> {
        let dim_method = match self.dim_method.as_str() {
            "A" | "a" => DimSelect::A,
            "B" | "b" => DimSelect::B,
            other => bail!("unknown dim-method {other:?} (expected A or B)"),
        };
        let explicit_dims = match &self.explicit_dims {
            None => None,
            Some(s) => Some(parse_list::<usize>(s, "explicit-dims")?),
        };
        let spatial = match &self.spatial {
            None => None,
            Some(p) => Some(
                io::read_matrix_auto(p)
                    .with_context(|| format!("reading spatial points from {}", p.display()))?,
            ),
        };
        Ok(OrthantConfig {
            qmc: QmcBudget { n_points: self.qmc_points, n_randomizations: self.qmc_rands },
            dim_method,
            explicit_dims,
            q_params: QSelectParams {
                q0: self.q0,
                q_step: self.q_step,
                gamma: self.gamma,
                grow: self.grow_dims,
                spatial,
            },
            pilot: (self.n0, self.m0),
            m_max: self.m_max,
            m_fixed: self.fixed_m,
            budget: match (self.budget_seconds, self.n_outer) {
                (Some(s), _) => BudgetMode::WallClock { seconds: s },
                (None, n) => BudgetMode::FixedN { n_outer: n.unwrap_or(10_000) },
            },
            max_tries: self.max_tries,
        })
    }
}
