//! Composed orthant-probability estimators.
//!
//! `p = P(max X > t)` is estimated as `p_hat = pq_hat + (1 - pq_hat) rq_hat`
//! with independent parts, whose variance composes exactly as
//!
//! ```text
//! var(p_hat) = (1 - rq)^2 var(pq_hat) + (1 - pq)^2 var(rq_hat)
//!            + var(pq_hat) var(rq_hat).
//! ```
//!
//! Three methods share the pipeline: `MC` is a single-pass indicator average
//! over full-vector draws (the `q = 0` case of the remainder engine), `GMC`
//! pairs the QMC core with a plain MC remainder, and `GanMC` uses the
//! asymmetric nested remainder. Both the probability `p` and
//! `pi(t) = 1 - p = P(X <= t 1)` are always reported.
//!
//! Two budget modes exist. `FixedN` runs a fixed outer count and, for GanMC,
//! plans the inner count from an operation-count proxy of the sampler costs,
//! which keeps results bit-reproducible per seed. `WallClock` follows the
//! timed-calibration route: measured affine costs set both the inner count
//! and the outer count affordable within the budget, so sample sizes vary
//! with machine load while the draws themselves stay seeded.

use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::active::{choose_q, ActiveSet, DimSelect, QSelectParams};
use crate::error::{Error, Result};
use crate::gauss::{GaussianSpec, DEFAULT_MAX_TRIES};
use crate::qmc::{mvn_cdf, CdfEstimate, QmcBudget};
use crate::remainder::{
    calibrate_costs, plan_anmc, run_nested, run_pilot, AnmcPlan, AnmcProblem, CostModel,
    GaussianRemainder, RemainderEstimate, RemainderMethod, DEFAULT_M_MAX, DEFAULT_PILOT,
};
use crate::rng::SeedRng;

/// Estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    /// QMC core plus plain MC remainder.
    #[serde(rename = "GMC")]
    Gmc,
    /// QMC core plus asymmetric nested MC remainder.
    #[serde(rename = "GanMC")]
    GanMc,
    /// Plain Monte Carlo over the full vector.
    #[serde(rename = "MC")]
    Mc,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Gmc => "GMC",
            Method::GanMc => "GanMC",
            Method::Mc => "MC",
        })
    }
}

/// How much sampling the remainder (or the MC baseline) gets.
#[derive(Debug, Clone, Copy, Serialize)]
pub enum BudgetMode {
    /// Fixed outer count; bit-reproducible per seed.
    FixedN { n_outer: usize },
    /// Fixed wall-clock budget in seconds; sample counts come from measured
    /// costs.
    WallClock { seconds: f64 },
}

/// Full configuration of one estimate.
#[derive(Debug, Clone, Serialize)]
pub struct OrthantConfig {
    pub qmc: QmcBudget,
    pub dim_method: DimSelect,
    /// Explicitly chosen active dimensions (bypasses the `q` search).
    pub explicit_dims: Option<Vec<usize>>,
    pub q_params: QSelectParams,
    /// Pilot sizes `(n0, m0)` for GanMC.
    pub pilot: (usize, usize),
    pub m_max: usize,
    /// Overrides the planned inner count.
    pub m_fixed: Option<usize>,
    pub budget: BudgetMode,
    pub max_tries: u64,
}

impl Default for OrthantConfig {
    fn default() -> Self {
        Self {
            qmc: QmcBudget::default(),
            dim_method: DimSelect::B,
            explicit_dims: None,
            q_params: QSelectParams::default(),
            pilot: DEFAULT_PILOT,
            m_max: DEFAULT_M_MAX,
            m_fixed: None,
            budget: BudgetMode::FixedN { n_outer: 10_000 },
            max_tries: DEFAULT_MAX_TRIES,
        }
    }
}

/// A composed estimate with its parts.
#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub method: Method,
    /// `P(max X > t)`.
    pub p_hat: f64,
    /// `pi(t) = P(X <= t 1) = 1 - p_hat`.
    pub pi_t: f64,
    pub variance: f64,
    /// Exceedance of the active block, `1 - pq_part.value`.
    pub pq: f64,
    pub pq_part: CdfEstimate,
    pub rq_part: RemainderEstimate,
    pub plan: Option<AnmcPlan>,
    pub q: usize,
    pub active_indices: Vec<usize>,
    pub active_method: String,
    /// The q search stopped on its growth cap rather than by convergence.
    pub q_exhausted: bool,
    pub wall_time: f64,
    pub seed: u64,
}

impl Estimate {
    /// `1 / (variance * time)`; infinite when the variance vanishes.
    pub fn efficiency(&self) -> f64 {
        efficiency(self.variance, self.wall_time)
    }
}

/// Exact evaluation of the variance composition.
pub fn compose_variance(var_pq: f64, var_rq: f64, pq: f64, rq: f64) -> f64 {
    debug_assert!(var_pq >= 0.0 && var_rq >= 0.0);
    debug_assert!((0.0..=1.0).contains(&pq) && (0.0..=1.0).contains(&rq));
    (1.0 - rq) * (1.0 - rq) * var_pq + (1.0 - pq) * (1.0 - pq) * var_rq + var_pq * var_rq
}

/// The efficiency metric `1 / (variance * time)`. A zero variance (an exact
/// estimate) maps to `+inf`, which callers surface as a flag rather than a
/// number.
pub fn efficiency(variance: f64, wall_time_seconds: f64) -> f64 {
    if variance <= 0.0 || wall_time_seconds <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / (variance * wall_time_seconds)
    }
}

/// Operation-count proxy for the sampler costs, in arbitrary units: one
/// accepted anchor costs a panel share of `q^2/2` multiplies plus `q` normal
/// draws over the acceptance rate; one inner draw costs `r^2/2` multiplies
/// plus `r` normals with `r = d - q`; anchor preparation is the `q x r`
/// regression product. Only the ratios enter the planned inner count, so the
/// unit cancels; this keeps `FixedN` planning reproducible per seed.
fn proxy_cost_model(q: usize, inner_dim: usize, acceptance: f64) -> CostModel {
    const NORMAL_DRAW: f64 = 8.0;
    let acc = acceptance.clamp(1e-12, 1.0);
    let q = q as f64;
    let r = inner_dim as f64;
    CostModel {
        c0: 0.0,
        c: ((q * q / 2.0 + NORMAL_DRAW * q) / acc).max(1.0),
        a: (q * r + 2.0 * r).max(1.0),
        b: (r * r / 2.0 + NORMAL_DRAW * r).max(1.0),
    }
}

fn remainder_skipped(method: RemainderMethod) -> RemainderEstimate {
    RemainderEstimate {
        value: 0.0,
        variance: 0.0,
        n_outer: 0,
        m_inner: 0,
        acceptance_rate: 0.0,
        wall_time: 0.0,
        method,
        budget_exhausted: false,
    }
}

/// Runs the selected pipeline and composes the estimate.
pub fn estimate_orthant(
    spec: &GaussianSpec,
    t: f64,
    method: Method,
    config: &OrthantConfig,
    seed: SeedRng,
) -> Result<Estimate> {
    let start = Instant::now();
    let est = match method {
        Method::Mc => estimate_mc(spec, t, config, seed, start)?,
        Method::Gmc | Method::GanMc => estimate_split(spec, t, method, config, seed, start)?,
    };
    Ok(est)
}

fn estimate_mc(
    spec: &GaussianSpec,
    t: f64,
    config: &OrthantConfig,
    seed: SeedRng,
    start: Instant,
) -> Result<Estimate> {
    let mut problem = GaussianRemainder::unconditional(spec, t, seed)?;
    let n = match config.budget {
        BudgetMode::FixedN { n_outer } => n_outer.max(1),
        BudgetMode::WallClock { seconds } => {
            let prep = problem.prepare(&DVector::zeros(0));
            let t0 = Instant::now();
            let probe = 32;
            let _ = problem.calibration_payoffs(&prep, probe);
            let per = (t0.elapsed().as_secs_f64() / probe as f64).max(1e-9);
            (((seconds - problem.setup_seconds()) / per).floor() as usize).max(1)
        }
    };
    let out = run_nested(&mut problem, n, 1, None)?;
    let rq_part = RemainderEstimate {
        value: out.value,
        variance: out.variance,
        n_outer: out.n,
        m_inner: 1,
        acceptance_rate: 1.0,
        wall_time: start.elapsed().as_secs_f64(),
        method: RemainderMethod::Mc,
        budget_exhausted: false,
    };
    // Plain MC is the q = 0 corner of the decomposition: pq = 0 exactly.
    let pq_part = CdfEstimate {
        value: 1.0,
        std_error: 0.0,
        n_randomizations: 0,
        n_points: 0,
        degenerate: false,
        kind: "none",
    };
    Ok(compose(
        Method::Mc,
        0.0,
        pq_part,
        rq_part,
        None,
        Vec::new(),
        "none".into(),
        false,
        start,
        seed,
    ))
}

fn estimate_split(
    spec: &GaussianSpec,
    t: f64,
    method: Method,
    config: &OrthantConfig,
    seed: SeedRng,
    start: Instant,
) -> Result<Estimate> {
    let mut rng = seed.stream("active-dims");
    let active = match &config.explicit_dims {
        Some(idx) => {
            let sub = spec.restrict(idx)?;
            let cdf = mvn_cdf(&sub, &DVector::from_element(idx.len(), t), config.qmc, &mut rng)?;
            ActiveSet::explicit(idx.clone(), cdf)
        }
        None => choose_q(spec, t, config.dim_method, &config.q_params, config.qmc, &mut rng)?,
    };
    let pq = active.pq();
    let q = active.q();
    let indices = active.indices().to_vec();

    // The active block already exhausts the probability: the acceptance rate
    // of the rejection sampler is zero and the remainder contributes nothing.
    if pq >= 1.0 {
        let rq_part = remainder_skipped(match method {
            Method::GanMc => RemainderMethod::AnMc,
            _ => RemainderMethod::Mc,
        });
        return Ok(compose(
            method,
            pq,
            active.cdf().clone(),
            rq_part,
            None,
            indices,
            active.method().to_string(),
            active.q_exhausted(),
            start,
            seed,
        ));
    }

    if q == spec.dim() {
        // Nothing left to correct; the remainder is identically zero.
        let rq_part = remainder_skipped(match method {
            Method::GanMc => RemainderMethod::AnMc,
            _ => RemainderMethod::Mc,
        });
        return Ok(compose(
            method,
            pq,
            active.cdf().clone(),
            rq_part,
            None,
            indices,
            active.method().to_string(),
            active.q_exhausted(),
            start,
            seed,
        ));
    }

    let mut problem =
        GaussianRemainder::conditional(spec, &indices, t, seed, config.max_tries)?;
    let (rq_part, plan) = match (method, config.budget) {
        (Method::Gmc, BudgetMode::FixedN { n_outer }) => {
            let out = run_nested(&mut problem, n_outer.max(1), 1, None)?;
            (
                RemainderEstimate {
                    value: out.value,
                    variance: out.variance,
                    n_outer: out.n,
                    m_inner: 1,
                    acceptance_rate: problem.stats().acceptance_rate,
                    wall_time: 0.0,
                    method: RemainderMethod::Mc,
                    budget_exhausted: false,
                },
                None,
            )
        }
        (Method::Gmc, BudgetMode::WallClock { seconds }) => {
            let (cost, pilot) = calibrate_costs(&mut problem, config.pilot)?;
            let n = cost.outer_count(seconds, 1).max(pilot.anchors.len());
            let out = run_nested(&mut problem, n, 1, Some(&pilot))?;
            (
                RemainderEstimate {
                    value: out.value,
                    variance: out.variance,
                    n_outer: out.n,
                    m_inner: 1,
                    acceptance_rate: problem.stats().acceptance_rate,
                    wall_time: 0.0,
                    method: RemainderMethod::Mc,
                    budget_exhausted: false,
                },
                None,
            )
        }
        (Method::GanMc, BudgetMode::FixedN { n_outer }) => {
            let pilot = run_pilot(&mut problem, config.pilot.0, config.pilot.1)?;
            let proxy =
                proxy_cost_model(q, problem.inner_dim(), problem.stats().acceptance_rate);
            let mut plan = match config.m_fixed {
                Some(m) => AnmcPlan {
                    m_star: m.max(1),
                    m_tilde: m as f64,
                    a_hat: pilot.stats.a_hat,
                    b_hat: pilot.stats.b_hat,
                    n_star: 0,
                    eta: 0.0,
                    prop3_holds: false,
                    clamped: false,
                },
                None => match plan_anmc(
                    &proxy,
                    pilot.stats.a_hat,
                    pilot.stats.b_hat,
                    0.0,
                    config.m_max,
                ) {
                    Ok(p) => p,
                    Err(Error::DegenerateVariance) => AnmcPlan {
                        m_star: 1,
                        m_tilde: 0.0,
                        a_hat: pilot.stats.a_hat,
                        b_hat: pilot.stats.b_hat,
                        n_star: 0,
                        eta: 0.0,
                        prop3_holds: false,
                        clamped: true,
                    },
                    Err(e) => return Err(e),
                },
            };
            plan.n_star = n_outer.max(1);
            let out = run_nested(&mut problem, plan.n_star, plan.m_star, Some(&pilot))?;
            (
                RemainderEstimate {
                    value: out.value,
                    variance: out.variance,
                    n_outer: out.n,
                    m_inner: out.m,
                    acceptance_rate: problem.stats().acceptance_rate,
                    wall_time: 0.0,
                    method: RemainderMethod::AnMc,
                    budget_exhausted: false,
                },
                Some(plan),
            )
        }
        (Method::GanMc, BudgetMode::WallClock { seconds }) => {
            let (cost, pilot) = calibrate_costs(&mut problem, config.pilot)?;
            let pilot = match config.m_fixed {
                None => pilot,
                Some(_) => pilot, // fixed m still reuses the pilot draws
            };
            let (est, mut plan) = if let Some(m) = config.m_fixed {
                let n = cost.outer_count(seconds, m).max(pilot.anchors.len());
                let out = run_nested(&mut problem, n, m.max(1), Some(&pilot))?;
                (
                    RemainderEstimate {
                        value: out.value,
                        variance: out.variance,
                        n_outer: out.n,
                        m_inner: out.m,
                        acceptance_rate: problem.stats().acceptance_rate,
                        wall_time: 0.0,
                        method: RemainderMethod::AnMc,
                        budget_exhausted: false,
                    },
                    AnmcPlan {
                        m_star: m.max(1),
                        m_tilde: m as f64,
                        a_hat: pilot.stats.a_hat,
                        b_hat: pilot.stats.b_hat,
                        n_star: n,
                        eta: 0.0,
                        prop3_holds: false,
                        clamped: false,
                    },
                )
            } else {
                crate::remainder::anmc_with_plan(
                    &mut problem,
                    &cost,
                    pilot,
                    seconds,
                    config.m_max,
                    start,
                )?
            };
            plan.n_star = est.n_outer;
            (est, Some(plan))
        }
        (Method::Mc, _) => unreachable!("handled by estimate_mc"),
    };

    Ok(compose(
        method,
        pq,
        active.cdf().clone(),
        rq_part,
        plan,
        indices,
        active.method().to_string(),
        active.q_exhausted(),
        start,
        seed,
    ))
}

#[allow(clippy::too_many_arguments)]
fn compose(
    method: Method,
    pq: f64,
    pq_part: CdfEstimate,
    rq_part: RemainderEstimate,
    plan: Option<AnmcPlan>,
    active_indices: Vec<usize>,
    active_method: String,
    q_exhausted: bool,
    start: Instant,
    seed: SeedRng,
) -> Estimate {
    let rq = rq_part.value;
    let p_hat = (pq + (1.0 - pq) * rq).clamp(0.0, 1.0);
    let var_pq = pq_part.std_error * pq_part.std_error;
    let variance = compose_variance(var_pq, rq_part.variance, pq, rq);
    Estimate {
        method,
        p_hat,
        pi_t: 1.0 - p_hat,
        variance,
        pq,
        pq_part,
        rq_part,
        plan,
        q: active_indices.len(),
        active_indices,
        active_method,
        q_exhausted,
        wall_time: start.elapsed().as_secs_f64(),
        seed: seed.seed(),
    }
}
