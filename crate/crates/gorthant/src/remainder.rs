//! The remainder `R_q = P(max X^{-q} > t | max X^q <= t)`, by plain Monte
//! Carlo and by asymmetric nested Monte Carlo (anMC).
//!
//! Both estimators share one nested-sampling engine over an
//! [`AnmcProblem`]: an expensive outer draw `W` (here: a rejection-sampled
//! anchor of the active block) feeds `m` cheap inner draws `Z | W` (here:
//! conditional Gaussian vectors), and the payoff is
//! `g(w, z) = 1{max z > t}`. Plain MC is the `m = 1` case. With affine costs
//! `C_W(n) = c0 + c n` and `C_{Z|W}(m) = a + b m`, the variance at a fixed
//! time budget is minimized at
//!
//! ```text
//! m_tilde = sqrt((a + c) B / (b (A - B))),
//! A = var(g(W, Z)),  B = E[var(g(W, Z) | W)],
//! ```
//!
//! rounded to an integer by the floor/ceil rule below. Costs and the moment
//! estimates come from a timed calibration phase plus an `n0 x m0` pilot; the
//! pilot anchors and their inner draws are reused by the main run.
//!
//! Every anchor owns a dedicated inner RNG stream, so the estimator's draws
//! depend only on the seed and the anchor index, never on how many inner
//! draws other anchors took. That is what makes `m = 1` reduce to the plain
//! MC estimator draw-for-draw.
//!
//! Cost calibration times real work on a monotonic clock and must run on a
//! quiet executor (no concurrent load) for the fitted constants to mean
//! anything; the estimation phase itself is deterministic per seed.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::{
    cholesky, condition_on, CholeskyFactor, ConditionalGaussian, GaussianSpec,
    TruncatedNormalSampler, DEFAULT_MAX_TRIES,
};
use crate::rng::SeedRng;

/// Default pilot sizes `(n0, m0)`.
pub const DEFAULT_PILOT: (usize, usize) = (50, 10);
/// Default cap on the number of inner simulations.
pub const DEFAULT_M_MAX: usize = 200;

// ---------------------------------------------------------------------------
// Cost model and plan
// ---------------------------------------------------------------------------

/// Affine simulation costs, in seconds: outer `C_W(n) = c0 + c n`, inner (per
/// anchor) `C_{Z|W}(m) = a + b m`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostModel {
    /// Outer sampler setup.
    pub c0: f64,
    /// Per outer sample.
    pub c: f64,
    /// Conditional sampler setup per anchor.
    pub a: f64,
    /// Per inner sample.
    pub b: f64,
}

impl CostModel {
    /// Total budget of `n` anchors with `m` inner draws each.
    pub fn total(&self, n: usize, m: usize) -> f64 {
        self.c0 + n as f64 * (self.c + self.a + self.b * m as f64)
    }

    /// Outer count affordable at `budget` seconds with `m` inner draws.
    pub fn outer_count(&self, budget: f64, m: usize) -> usize {
        let n = (budget - self.c0) / (self.c + self.a + self.b * m as f64);
        if n.is_finite() && n >= 1.0 {
            n.floor() as usize
        } else {
            1
        }
    }
}

/// The planned anMC run: optimal inner count and predicted gain.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AnmcPlan {
    /// Integer inner count actually used.
    pub m_star: usize,
    /// Real-valued variance minimizer.
    pub m_tilde: f64,
    /// Estimate of `var(g(W, Z))`.
    pub a_hat: f64,
    /// Estimate of `E[var(g(W, Z) | W)]`.
    pub b_hat: f64,
    /// Outer count at the fixed budget.
    pub n_star: usize,
    /// Predicted variance-reduction factor: `var(anMC) = var(MC) (1 - eta)`.
    pub eta: f64,
    /// Whether the efficiency condition
    /// `m* > 2 (a + c) B / ((c + a) B + b (A - B))` holds.
    pub prop3_holds: bool,
    /// Set when `m_tilde` was clamped (to 1 or to `m_max`).
    pub clamped: bool,
}

/// Computes the optimal inner count at a fixed budget.
///
/// `m_tilde = sqrt((a + c) B / (b (A - B)))`; with `eps` its fractional part,
/// the integer optimum is `floor(m_tilde)` when
/// `eps < ((2 m_tilde + 1) - sqrt(4 m_tilde^2 + 1)) / 2`, else
/// `ceil(m_tilde)`, clamped to `[1, m_max]`. `B = 0` means inner replication
/// is pure waste and degenerates to plain MC (`m* = 1`); `A = B` (no
/// between-anchor variance) pushes `m_tilde` to infinity and clamps to
/// `m_max`.
pub fn plan_anmc(
    cost: &CostModel,
    a_hat: f64,
    b_hat: f64,
    budget: f64,
    m_max: usize,
) -> Result<AnmcPlan> {
    if a_hat <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let m_max = m_max.max(1);
    let ac = cost.a + cost.c;
    let gap = a_hat - b_hat;

    let (m_tilde, m_star, clamped) = if b_hat <= 0.0 {
        (0.0, 1, true)
    } else if gap <= f64::EPSILON * a_hat || cost.b <= 0.0 {
        log::warn!("A ~ B: unbounded m_tilde, clamping to m_max = {m_max}");
        (f64::INFINITY, m_max, true)
    } else {
        let mt = (ac * b_hat / (cost.b * gap)).sqrt();
        if mt <= 1.0 {
            (mt, 1, mt < 1.0)
        } else if mt >= m_max as f64 {
            (mt, m_max, true)
        } else {
            let eps = mt - mt.floor();
            let threshold = ((2.0 * mt + 1.0) - (4.0 * mt * mt + 1.0).sqrt()) / 2.0;
            let m = if eps < threshold { mt.floor() } else { mt.ceil() };
            (mt, m as usize, false)
        }
    };

    let n_star = cost.outer_count(budget, m_star);
    let m = m_star as f64;
    let denom = a_hat * (cost.c + cost.a + cost.b) * m;
    let eta = if denom > 0.0 {
        ((m - 2.0) * ac * b_hat + m * cost.b * gap) / denom
    } else {
        0.0
    };
    let threshold = 2.0 * ac * b_hat / (ac * b_hat + cost.b * gap).max(f64::MIN_POSITIVE);
    Ok(AnmcPlan {
        m_star,
        m_tilde,
        a_hat,
        b_hat,
        n_star,
        eta,
        prop3_holds: m > threshold,
        clamped,
    })
}

// ---------------------------------------------------------------------------
// Nested problem abstraction
// ---------------------------------------------------------------------------

/// Outer-sampler statistics for reporting.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SamplerStats {
    pub acceptance_rate: f64,
    pub draws_used: u64,
}

/// A two-stage simulation problem: expensive anchors, cheap conditional
/// payoffs. Estimation draws are segregated from calibration draws so that
/// timing probes never shift the estimator's stream positions.
pub trait AnmcProblem {
    type Anchor;
    type Prepared;

    /// Next `n` anchors of the estimation stream; consecutive calls continue
    /// where the previous one stopped.
    fn next_anchors(&mut self, n: usize) -> Result<Vec<Self::Anchor>>;

    /// Anchors on a throwaway calibration stream.
    fn calibration_anchors(&mut self, n: usize) -> Result<Vec<Self::Anchor>>;

    /// Per-anchor preparation (the cost-model `a` step).
    fn prepare(&self, anchor: &Self::Anchor) -> Self::Prepared;

    /// `count` payoffs `g(w, z_j)` from the anchor's dedicated inner stream,
    /// continuing after any draws it already took.
    fn payoffs(&mut self, prepared: &Self::Prepared, anchor_id: u64, count: usize) -> Vec<f64>;

    /// Payoffs on the calibration inner stream.
    fn calibration_payoffs(&mut self, prepared: &Self::Prepared, count: usize) -> Vec<f64>;

    /// Estimation outer-sampler statistics.
    fn stats(&self) -> SamplerStats;

    /// One-time setup cost already incurred (folded into `c0`).
    fn setup_seconds(&self) -> f64 {
        0.0
    }

    /// Suggested smallest batch size for the outer cost fit; implementations
    /// whose per-batch cost flattens below some granularity should return a
    /// base large enough to reach the linear regime.
    fn calibration_batch_base(&self) -> usize {
        8
    }
}

// ---------------------------------------------------------------------------
// Gaussian remainder problem
// ---------------------------------------------------------------------------

/// The Gaussian instance: anchors are rejection-sampled active-block vectors,
/// inner draws are conditional Gaussians, payoff `1{max z > t}`.
pub struct GaussianRemainder {
    t: f64,
    inner_dim: usize,
    cond: Option<ConditionalGaussian>,
    inner_chol: CholeskyFactor,
    full_mean: Option<DVector<f64>>,
    sampler: Option<TruncatedNormalSampler>,
    calib_sampler: Option<TruncatedNormalSampler>,
    unconditional_served: u64,
    base: SeedRng,
    inner_streams: HashMap<u64, ChaCha8Rng>,
    calib_inner: ChaCha8Rng,
    setup_seconds: f64,
}

impl GaussianRemainder {
    /// Conditional problem on the given active dimensions.
    pub fn conditional(
        spec: &GaussianSpec,
        active: &[usize],
        t: f64,
        base: SeedRng,
        max_tries: u64,
    ) -> Result<Self> {
        let start = Instant::now();
        let cond = condition_on(spec, active)?;
        let inner_dim = cond.inactive_indices().len();
        let inner_chol = if inner_dim > 0 {
            cholesky(cond.cond_cov())?
        } else {
            CholeskyFactor::from_parts(nalgebra::DMatrix::zeros(0, 0), 0.0)
        };
        let anchor_spec = spec.restrict(active)?;
        let sampler = TruncatedNormalSampler::new(
            &anchor_spec,
            t,
            base.stream("remainder/anchors"),
            max_tries,
        )?;
        let calib_sampler = TruncatedNormalSampler::new(
            &anchor_spec,
            t,
            base.stream("remainder/calib-anchors"),
            max_tries,
        )?;
        Ok(Self {
            t,
            inner_dim,
            cond: Some(cond),
            inner_chol,
            full_mean: None,
            sampler: Some(sampler),
            calib_sampler: Some(calib_sampler),
            unconditional_served: 0,
            base,
            inner_streams: HashMap::new(),
            calib_inner: base.stream("remainder/calib-inner"),
            setup_seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Unconditional problem (`q = 0`): trivial anchors, full-vector payoffs.
    /// This is the plain-MC baseline over the whole spec.
    pub fn unconditional(spec: &GaussianSpec, t: f64, base: SeedRng) -> Result<Self> {
        let start = Instant::now();
        let inner_chol = cholesky(spec.cov())?;
        Ok(Self {
            t,
            inner_dim: spec.dim(),
            cond: None,
            inner_chol,
            full_mean: Some(spec.mean().clone()),
            sampler: None,
            calib_sampler: None,
            unconditional_served: 0,
            base,
            inner_streams: HashMap::new(),
            calib_inner: base.stream("remainder/calib-inner"),
            setup_seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn inner_dim(&self) -> usize {
        self.inner_dim
    }

    fn draw_payoffs(&mut self, mean: &DVector<f64>, rng_key: Option<u64>, count: usize) -> Vec<f64> {
        if self.inner_dim == 0 {
            // Empty inactive block: the max over nothing never exceeds t.
            return vec![0.0; count];
        }
        let mut rng = match rng_key {
            Some(id) => self
                .inner_streams
                .remove(&id)
                .unwrap_or_else(|| self.base.indexed("remainder/inner", id)),
            None => std::mem::replace(&mut self.calib_inner, ChaCha8Rng::seed_from_u64(0)),
        };
        let mut out = Vec::with_capacity(count);
        let mut z = DVector::zeros(self.inner_dim);
        for _ in 0..count {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let x = mean + self.inner_chol.lower() * &z;
            out.push(if x.iter().any(|&v| v > self.t) { 1.0 } else { 0.0 });
        }
        match rng_key {
            Some(id) => {
                self.inner_streams.insert(id, rng);
            }
            None => self.calib_inner = rng,
        }
        out
    }
}

use rand_chacha::rand_core::SeedableRng;

impl AnmcProblem for GaussianRemainder {
    type Anchor = DVector<f64>;
    type Prepared = DVector<f64>;

    fn next_anchors(&mut self, n: usize) -> Result<Vec<DVector<f64>>> {
        match self.sampler.as_mut() {
            Some(s) => s.take(n),
            None => {
                self.unconditional_served += n as u64;
                Ok(vec![DVector::zeros(0); n])
            }
        }
    }

    fn calibration_anchors(&mut self, n: usize) -> Result<Vec<DVector<f64>>> {
        match self.calib_sampler.as_mut() {
            Some(s) => s.take(n),
            None => Ok(vec![DVector::zeros(0); n]),
        }
    }

    fn prepare(&self, anchor: &DVector<f64>) -> DVector<f64> {
        match (&self.cond, &self.full_mean) {
            (Some(cond), _) => cond.mean_given(anchor),
            (None, Some(mean)) => mean.clone(),
            _ => unreachable!(),
        }
    }

    fn payoffs(&mut self, prepared: &DVector<f64>, anchor_id: u64, count: usize) -> Vec<f64> {
        self.draw_payoffs(&prepared.clone(), Some(anchor_id), count)
    }

    fn calibration_payoffs(&mut self, prepared: &DVector<f64>, count: usize) -> Vec<f64> {
        self.draw_payoffs(&prepared.clone(), None, count)
    }

    fn stats(&self) -> SamplerStats {
        match &self.sampler {
            Some(s) => SamplerStats {
                acceptance_rate: s.acceptance_rate(),
                draws_used: s.draws_used(),
            },
            None => SamplerStats {
                acceptance_rate: 1.0,
                draws_used: self.unconditional_served,
            },
        }
    }

    fn setup_seconds(&self) -> f64 {
        self.setup_seconds
    }

    fn calibration_batch_base(&self) -> usize {
        // The rejection sampler generates candidates in panels of 1024; the
        // per-anchor cost only becomes linear once a batch spans a couple of
        // panels' worth of candidates.
        match &self.calib_sampler {
            Some(s) => {
                let acc = s.acceptance_rate().max(1e-6);
                ((2048.0 * acc).ceil() as usize).max(8)
            }
            None => 512,
        }
    }
}

// ---------------------------------------------------------------------------
// Calibration (Algorithm parts 0 and 1)
// ---------------------------------------------------------------------------

/// Pilot summary statistics.
#[derive(Debug, Clone, Serialize)]
pub struct PilotStats {
    /// Per-anchor payoff means at `m0` inner draws.
    pub e_means: Vec<f64>,
    /// Per-anchor payoff sample variances.
    pub variances: Vec<f64>,
    /// `var_e + b_hat` (law of total variance).
    pub a_hat: f64,
    /// Mean of the per-anchor variances.
    pub b_hat: f64,
    /// Sample variance of the per-anchor means.
    pub var_e: f64,
}

/// Pilot data kept for reuse by the main run.
pub struct Pilot<P: AnmcProblem> {
    pub anchors: Vec<P::Anchor>,
    pub prepared: Vec<P::Prepared>,
    pub payoffs: Vec<Vec<f64>>,
    pub stats: PilotStats,
}

fn lsq_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

const COST_FLOOR: f64 = 1e-9;

/// Runs the `n0 x m0` pilot on the estimation streams and computes the
/// per-anchor means and variances plus the `A`/`B` moment estimates.
pub fn run_pilot<P: AnmcProblem>(problem: &mut P, n0: usize, m0: usize) -> Result<Pilot<P>> {
    if n0 < 2 || m0 < 2 {
        return Err(Error::InvalidInput("pilot sizes must be >= 2".into()));
    }
    let anchors = problem.next_anchors(n0)?;
    let mut prepared = Vec::with_capacity(n0);
    let mut payoffs = Vec::with_capacity(n0);
    let mut e_means = Vec::with_capacity(n0);
    let mut variances = Vec::with_capacity(n0);
    for (i, anchor) in anchors.iter().enumerate() {
        let prep = problem.prepare(anchor);
        let g = problem.payoffs(&prep, i as u64, m0);
        let e = g.iter().sum::<f64>() / m0 as f64;
        let v = g.iter().map(|x| (x - e) * (x - e)).sum::<f64>() / (m0 as f64 - 1.0);
        e_means.push(e);
        variances.push(v);
        prepared.push(prep);
        payoffs.push(g);
    }
    let b_hat = variances.iter().sum::<f64>() / n0 as f64;
    let mean_e = e_means.iter().sum::<f64>() / n0 as f64;
    let var_e =
        e_means.iter().map(|e| (e - mean_e) * (e - mean_e)).sum::<f64>() / (n0 as f64 - 1.0);
    let stats = PilotStats { e_means, variances, a_hat: var_e + b_hat, b_hat, var_e };
    Ok(Pilot { anchors, prepared, payoffs, stats })
}

/// Times a closure, repeating it until the measurement is comfortably above
/// clock resolution. Returns seconds per execution.
fn timed_per_call<F: FnMut()>(mut f: F) -> f64 {
    let mut reps = 1u32;
    loop {
        let start = Instant::now();
        for _ in 0..reps {
            f();
        }
        let dt = start.elapsed().as_secs_f64();
        if dt >= 1e-3 || reps >= 1 << 12 {
            return dt / reps as f64;
        }
        reps *= 4;
    }
}

/// Measures the affine cost constants on the calibration streams:
/// least-squares over three outer batch sizes for `(c0, c)` and three inner
/// batch sizes for `b`, with `a` from the preparation step. Costs are floored
/// at one nanosecond; a floor hit logs a timer-resolution warning.
pub fn measure_costs<P: AnmcProblem>(problem: &mut P) -> Result<CostModel> {
    // Probe draw: primes lazy state and the sampler's acceptance estimate.
    let probe = problem.calibration_anchors(8)?;
    let base = problem.calibration_batch_base();

    let sizes = [base, 2 * base, 3 * base];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &s in &sizes {
        let start = Instant::now();
        problem.calibration_anchors(s)?;
        xs.push(s as f64);
        ys.push(start.elapsed().as_secs_f64());
    }
    let (c_slope, c_int) = lsq_fit(&xs, &ys);
    if c_slope < COST_FLOOR {
        log::warn!("outer per-sample cost below timer resolution; flooring at 1 ns");
    }
    let c = c_slope.max(COST_FLOOR);
    let c0 = problem.setup_seconds() + c_int.max(0.0);

    let a_prepare = timed_per_call(|| {
        let _ = problem.prepare(&probe[0]);
    });
    let prep = problem.prepare(&probe[0]);

    let m_sizes = [4usize, 8, 16];
    let mut mxs = Vec::new();
    let mut mys = Vec::new();
    for &m in &m_sizes {
        let per = timed_per_call(|| {
            let _ = problem.calibration_payoffs(&prep, m);
        });
        mxs.push(m as f64);
        mys.push(per);
    }
    let (b_slope, b_int) = lsq_fit(&mxs, &mys);
    if b_slope < COST_FLOOR {
        log::warn!("inner per-sample cost below timer resolution; flooring at 1 ns");
    }
    Ok(CostModel {
        c0,
        c,
        a: (a_prepare + b_int.max(0.0)).max(COST_FLOOR),
        b: b_slope.max(COST_FLOOR),
    })
}

/// Algorithm parts 0 and 1 together: measured costs plus the pilot.
pub fn calibrate_costs<P: AnmcProblem>(
    problem: &mut P,
    pilot: (usize, usize),
) -> Result<(CostModel, Pilot<P>)> {
    let cost = measure_costs(problem)?;
    let data = run_pilot(problem, pilot.0, pilot.1)?;
    Ok((cost, data))
}

// ---------------------------------------------------------------------------
// Nested runs and the public estimators
// ---------------------------------------------------------------------------

/// Raw outcome of a nested run.
pub struct NestedOutcome {
    pub value: f64,
    /// Population variance of the per-anchor means over `n`.
    pub variance: f64,
    pub anchor_means: Vec<f64>,
    pub n: usize,
    pub m: usize,
}

/// Runs the nested estimator at fixed `(n, m)`, reusing pilot anchors and
/// their inner draws when supplied. Every anchor's mean is recomputed over
/// exactly `m` inner draws (the first `m` pilot draws if `m <= m0`, the pilot
/// draws extended on the anchor's own stream otherwise).
pub fn run_nested<P: AnmcProblem>(
    problem: &mut P,
    n: usize,
    m: usize,
    pilot: Option<&Pilot<P>>,
) -> Result<NestedOutcome> {
    assert!(n >= 1 && m >= 1, "n and m must be >= 1");
    let n_pilot = pilot.map_or(0, |p| p.anchors.len()).min(n);
    let fresh = problem.next_anchors(n - n_pilot)?;

    let mut anchor_means = Vec::with_capacity(n);
    for i in 0..n {
        let mean = if let Some(p) = pilot.filter(|p| i < p.anchors.len().min(n)) {
            let have = &p.payoffs[i];
            if m <= have.len() {
                have[..m].iter().sum::<f64>() / m as f64
            } else {
                let extra = problem.payoffs(&p.prepared[i], i as u64, m - have.len());
                (have.iter().sum::<f64>() + extra.iter().sum::<f64>()) / m as f64
            }
        } else {
            let anchor = &fresh[i - n_pilot];
            let prep = problem.prepare(anchor);
            let g = problem.payoffs(&prep, i as u64, m);
            g.iter().sum::<f64>() / m as f64
        };
        anchor_means.push(mean);
    }
    let value = anchor_means.iter().sum::<f64>() / n as f64;
    let var_between =
        anchor_means.iter().map(|e| (e - value) * (e - value)).sum::<f64>() / n as f64;
    Ok(NestedOutcome { value, variance: var_between / n as f64, anchor_means, n, m })
}

/// Which remainder estimator produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RemainderMethod {
    Mc,
    AnMc,
}

/// A remainder estimate with its bookkeeping.
#[derive(Debug, Clone, Serialize)]
pub struct RemainderEstimate {
    pub value: f64,
    /// Between-anchor variance of the per-anchor means over `n_outer` (for
    /// `m = 1` this is exactly `p(1-p)/n`). A pooled-Bernoulli variance over
    /// `n m` draws would be biased low for `m > 1` because inner draws that
    /// share an anchor are correlated.
    pub variance: f64,
    pub n_outer: usize,
    pub m_inner: usize,
    pub acceptance_rate: f64,
    pub wall_time: f64,
    pub method: RemainderMethod,
    /// Set when the time budget could not cover more than the pilot.
    pub budget_exhausted: bool,
}

/// Plain Monte Carlo remainder: `n` truncated anchors, one conditional draw
/// each, indicator mean.
pub fn remainder_mc(
    spec: &GaussianSpec,
    active: &[usize],
    t: f64,
    n: usize,
    base: SeedRng,
) -> Result<RemainderEstimate> {
    let start = Instant::now();
    let mut problem = GaussianRemainder::conditional(spec, active, t, base, DEFAULT_MAX_TRIES)?;
    let out = run_nested(&mut problem, n, 1, None)?;
    Ok(RemainderEstimate {
        value: out.value,
        variance: out.variance,
        n_outer: out.n,
        m_inner: 1,
        acceptance_rate: problem.stats().acceptance_rate,
        wall_time: start.elapsed().as_secs_f64(),
        method: RemainderMethod::Mc,
        budget_exhausted: false,
    })
}

/// Asymmetric nested Monte Carlo remainder at a fixed time budget:
/// calibration, pilot, plan, main run with pilot reuse.
///
/// If the payoff shows no variance in the pilot the plan degenerates to
/// `m* = 1`. If the budget cannot cover more than the pilot, the pilot-only
/// estimate is returned with `budget_exhausted` set.
pub fn remainder_anmc(
    spec: &GaussianSpec,
    active: &[usize],
    t: f64,
    budget_seconds: f64,
    pilot: (usize, usize),
    m_max: usize,
    base: SeedRng,
) -> Result<(RemainderEstimate, AnmcPlan)> {
    let start = Instant::now();
    let mut problem = GaussianRemainder::conditional(spec, active, t, base, DEFAULT_MAX_TRIES)?;
    let (cost, pilot_data) = calibrate_costs(&mut problem, pilot)?;
    let est = anmc_with_plan(&mut problem, &cost, pilot_data, budget_seconds, m_max, start)?;
    Ok(est)
}

/// Shared tail of the anMC estimators: plan from the cost model and pilot
/// moments, then the main run.
pub(crate) fn anmc_with_plan<P: AnmcProblem>(
    problem: &mut P,
    cost: &CostModel,
    pilot_data: Pilot<P>,
    budget_seconds: f64,
    m_max: usize,
    start: Instant,
) -> Result<(RemainderEstimate, AnmcPlan)> {
    let n0 = pilot_data.anchors.len();
    let plan = match plan_anmc(cost, pilot_data.stats.a_hat, pilot_data.stats.b_hat, budget_seconds, m_max) {
        Ok(p) => p,
        Err(Error::DegenerateVariance) => {
            // Constant payoff in the pilot: no variance to trade, fall back
            // to plain sampling at m = 1.
            AnmcPlan {
                m_star: 1,
                m_tilde: 0.0,
                a_hat: pilot_data.stats.a_hat,
                b_hat: pilot_data.stats.b_hat,
                n_star: cost.outer_count(budget_seconds, 1),
                eta: 0.0,
                prop3_holds: false,
                clamped: true,
            }
        }
        Err(e) => return Err(e),
    };

    let budget_exhausted = plan.n_star <= n0;
    let (n, m) = if budget_exhausted {
        log::warn!(
            "budget covers only {} anchors (pilot is {n0}); returning the pilot-only estimate",
            plan.n_star
        );
        (n0, pilot_data.payoffs[0].len())
    } else {
        (plan.n_star, plan.m_star)
    };
    let out = run_nested(problem, n, m, Some(&pilot_data))?;
    Ok((
        RemainderEstimate {
            value: out.value,
            variance: out.variance,
            n_outer: out.n,
            m_inner: out.m,
            acceptance_rate: problem.stats().acceptance_rate,
            wall_time: start.elapsed().as_secs_f64(),
            method: RemainderMethod::AnMc,
            budget_exhausted,
        },
        plan,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gorthant_testkit as oracle;
    use nalgebra::DMatrix;

    fn equicorr_spec(d: usize, rho: f64) -> GaussianSpec {
        let cov = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho });
        GaussianSpec::new(DVector::zeros(d), cov).unwrap()
    }

    // ---- plan_anmc closed forms -------------------------------------------

    #[test]
    fn plan_exact_square_root() {
        // (a + c) = 9, b = 1, B = 1, A = 2 -> m_tilde = 3 exactly, eps = 0.
        let cost = CostModel { c0: 0.0, c: 8.0, a: 1.0, b: 1.0 };
        let plan = plan_anmc(&cost, 2.0, 1.0, 1000.0, 200).unwrap();
        assert_eq!(plan.m_tilde, 3.0);
        assert_eq!(plan.m_star, 3);
        assert!(!plan.clamped);
    }

    #[test]
    fn plan_fractional_rounds_up_past_threshold() {
        // m_tilde = 2.5: threshold (6 - sqrt(26)) / 2 ~ 0.4505 < eps = 0.5,
        // so the ceil wins (integer costs 5.083 vs 5.125).
        let cost = CostModel { c0: 0.0, c: 5.25, a: 1.0, b: 1.0 };
        let plan = plan_anmc(&cost, 2.0, 1.0, 1000.0, 200).unwrap();
        assert!((plan.m_tilde - 2.5).abs() < 1e-12);
        assert_eq!(plan.m_star, 3);
    }

    #[test]
    fn plan_zero_conditional_variance_degenerates() {
        let cost = CostModel { c0: 0.0, c: 8.0, a: 1.0, b: 1.0 };
        let plan = plan_anmc(&cost, 2.0, 0.0, 1000.0, 200).unwrap();
        assert_eq!(plan.m_tilde, 0.0);
        assert_eq!(plan.m_star, 1);
        assert!(plan.clamped);
    }

    #[test]
    fn plan_equal_moments_clamps_to_m_max() {
        let cost = CostModel { c0: 0.0, c: 8.0, a: 1.0, b: 1.0 };
        let plan = plan_anmc(&cost, 1.0, 1.0, 1000.0, 50).unwrap();
        assert_eq!(plan.m_star, 50);
        assert!(plan.clamped);
        assert!(plan.m_tilde.is_infinite());
    }

    #[test]
    fn plan_rejects_nonpositive_total_variance() {
        let cost = CostModel { c0: 0.0, c: 1.0, a: 1.0, b: 1.0 };
        assert!(matches!(
            plan_anmc(&cost, 0.0, 0.0, 10.0, 10),
            Err(Error::DegenerateVariance)
        ));
    }

    #[test]
    fn plan_outer_count_matches_budget_arithmetic() {
        let cost = CostModel { c0: 1.0, c: 0.5, a: 0.25, b: 0.25 };
        let plan = plan_anmc(&cost, 2.0, 1.0, 101.0, 200).unwrap();
        // m* from (a+c)B/(b(A-B)) = 0.75/0.25 = 3 -> m_tilde = sqrt(3) ~ 1.73.
        let per = cost.c + cost.a + cost.b * plan.m_star as f64;
        assert_eq!(plan.n_star, ((101.0 - 1.0) / per).floor() as usize);
    }

    #[test]
    fn plan_forced_m1_fails_prop3_when_inner_info_matters() {
        // With (c+a)B > b(A-B), the threshold exceeds 1, so m* = 1 cannot be
        // efficient.
        let cost = CostModel { c0: 0.0, c: 1.5, a: 0.5, b: 1.0 };
        let plan = plan_anmc(&cost, 1.5, 1.0, 100.0, 1).unwrap();
        assert_eq!(plan.m_star, 1);
        assert!(!plan.prop3_holds);
    }

    // ---- shim problems for calibration ------------------------------------

    /// Deterministic-cost problem: busy-waits for the configured durations
    /// and produces payoffs through a closure.
    struct ShimProblem<F: Fn(f64, u64) -> f64> {
        c: f64,
        a: f64,
        b: f64,
        payoff: F,
        next_id: u64,
        rng: ChaCha8Rng,
    }

    impl<F: Fn(f64, u64) -> f64> ShimProblem<F> {
        fn new(c: f64, a: f64, b: f64, payoff: F) -> Self {
            Self {
                c,
                a,
                b,
                payoff,
                next_id: 0,
                rng: SeedRng::new(99).stream("shim"),
            }
        }
    }

    fn busy_wait(seconds: f64) {
        if seconds <= 0.0 {
            return;
        }
        let start = Instant::now();
        while start.elapsed().as_secs_f64() < seconds {
            std::hint::spin_loop();
        }
    }

    impl<F: Fn(f64, u64) -> f64> AnmcProblem for ShimProblem<F> {
        type Anchor = f64;
        type Prepared = f64;

        fn next_anchors(&mut self, n: usize) -> Result<Vec<f64>> {
            busy_wait(self.c * n as f64);
            Ok((0..n).map(|_| self.rng.gen::<f64>()).collect())
        }

        fn calibration_anchors(&mut self, n: usize) -> Result<Vec<f64>> {
            self.next_anchors(n)
        }

        fn prepare(&self, anchor: &f64) -> f64 {
            busy_wait(self.a);
            *anchor
        }

        fn payoffs(&mut self, prepared: &f64, _anchor_id: u64, count: usize) -> Vec<f64> {
            busy_wait(self.b * count as f64);
            (0..count)
                .map(|_| {
                    self.next_id += 1;
                    (self.payoff)(*prepared, self.next_id)
                })
                .collect()
        }

        fn calibration_payoffs(&mut self, prepared: &f64, count: usize) -> Vec<f64> {
            self.payoffs(prepared, u64::MAX, count)
        }

        fn stats(&self) -> SamplerStats {
            SamplerStats { acceptance_rate: 1.0, draws_used: 0 }
        }
    }

    #[test]
    fn calibration_recovers_injected_cost_ratio() {
        // c = 4 ms per anchor, b = 1 ms per inner draw.
        let mut shim = ShimProblem::new(4e-3, 1e-4, 1e-3, |w, _| w);
        let cost = measure_costs(&mut shim).unwrap();
        let ratio = cost.c / cost.b;
        assert!(
            (ratio - 4.0).abs() / 4.0 < 0.25,
            "recovered c/b ratio {ratio} (c={}, b={})",
            cost.c,
            cost.b
        );
    }

    #[test]
    fn constant_payoff_gives_zero_conditional_variance() {
        let mut shim = ShimProblem::new(0.0, 0.0, 0.0, |_, _| 1.0);
        let pilot = run_pilot(&mut shim, 10, 5).unwrap();
        assert!(pilot.stats.variances.iter().all(|&v| v == 0.0));
        assert_eq!(pilot.stats.b_hat, 0.0);
        assert_eq!(pilot.stats.a_hat, 0.0);
    }

    #[test]
    fn anchor_only_payoff_has_positive_a_but_zero_b() {
        let mut shim = ShimProblem::new(0.0, 0.0, 0.0, |w, _| if w > 0.5 { 1.0 } else { 0.0 });
        let pilot = run_pilot(&mut shim, 40, 5).unwrap();
        assert!(pilot.stats.variances.iter().all(|&v| v == 0.0));
        assert_eq!(pilot.stats.b_hat, 0.0);
        assert!(pilot.stats.a_hat > 0.0);
    }

    // ---- Gaussian remainder ------------------------------------------------

    #[test]
    fn remainder_independent_single_inactive() {
        // X^{-q} is one independent standard normal, t = 0: R = 1/2.
        let spec = GaussianSpec::standard(2);
        let n = 10_000;
        let est = remainder_mc(&spec, &[0], 0.0, n, SeedRng::new(21)).unwrap();
        let se = (0.25 / n as f64).sqrt();
        assert!((est.value - 0.5).abs() < 3.0 * se);
        assert_eq!(est.n_outer, n);
    }

    #[test]
    fn remainder_independent_matches_tail_oracle() {
        let spec = GaussianSpec::standard(3);
        let n = 10_000;
        let est = remainder_mc(&spec, &[0, 1], 1.0, n, SeedRng::new(22)).unwrap();
        let r = 1.0 - oracle::phi(1.0);
        let se = (r * (1.0 - r) / n as f64).sqrt();
        assert!((est.value - r).abs() < 3.0 * se, "{} vs {r}", est.value);
    }

    #[test]
    fn remainder_equicorrelated_matches_exchangeable_identity() {
        // d = 4, rho = 1/2, q = 2, t = 0: R = (4/5 - 2/3) / (1/3) = 0.4.
        let spec = equicorr_spec(4, 0.5);
        let n = 10_000;
        let est = remainder_mc(&spec, &[0, 1], 0.0, n, SeedRng::new(23)).unwrap();
        let r = oracle::remainder_from_orthants(
            oracle::orthant_equicorrelated(4, 0.5, 0.0),
            oracle::orthant_equicorrelated(2, 0.5, 0.0),
        );
        assert!((r - 0.4).abs() < 1e-9);
        let se = (r * (1.0 - r) / n as f64).sqrt();
        assert!((est.value - r).abs() < 3.0 * se, "{} vs {r}", est.value);
    }

    #[test]
    fn remainder_variance_satisfies_binomial_bound() {
        let spec = equicorr_spec(4, 0.5);
        let n = 2_000;
        let est = remainder_mc(&spec, &[0, 1], 0.0, n, SeedRng::new(24)).unwrap();
        assert!(est.variance <= est.value * (1.0 - est.value) / n as f64 + 1e-15);
    }

    #[test]
    fn anmc_with_m_max_one_equals_plain_mc() {
        let spec = equicorr_spec(5, 0.4);
        let seed = SeedRng::new(25);
        let (anmc, plan) =
            remainder_anmc(&spec, &[0, 1], 0.2, 0.25, (20, 5), 1, seed).unwrap();
        assert_eq!(plan.m_star, 1);
        assert!(!anmc.budget_exhausted, "budget too small for the comparison");
        let mc = remainder_mc(&spec, &[0, 1], 0.2, anmc.n_outer, seed).unwrap();
        assert_eq!(anmc.value, mc.value);
        assert_eq!(anmc.variance, mc.variance);
    }

    #[test]
    fn anmc_matches_oracle_on_independent_case() {
        let spec = GaussianSpec::standard(3);
        let (est, _) =
            remainder_anmc(&spec, &[0, 1], 1.0, 0.3, (30, 5), 50, SeedRng::new(26)).unwrap();
        let r = 1.0 - oracle::phi(1.0);
        let se = est.variance.sqrt();
        assert!((est.value - r).abs() < 4.0 * se.max(1e-3), "{} vs {r}", est.value);
    }

    #[test]
    fn anmc_budget_exhausted_returns_pilot_estimate() {
        let spec = equicorr_spec(4, 0.5);
        let (est, _) =
            remainder_anmc(&spec, &[0, 1], 0.0, 1e-9, (10, 4), 50, SeedRng::new(27)).unwrap();
        assert!(est.budget_exhausted);
        assert_eq!(est.n_outer, 10);
        assert_eq!(est.m_inner, 4);
    }

    #[test]
    fn nested_run_is_deterministic_and_reuses_anchor_means() {
        let spec = equicorr_spec(4, 0.3);
        let mk = || GaussianRemainder::conditional(&spec, &[0, 1], 0.5, SeedRng::new(28), DEFAULT_MAX_TRIES).unwrap();
        let mut p1 = mk();
        let mut p2 = mk();
        let a = run_nested(&mut p1, 50, 3, None).unwrap();
        let b = run_nested(&mut p2, 50, 3, None).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.anchor_means, b.anchor_means);
    }

    #[test]
    fn pilot_extension_keeps_first_draws() {
        // Extending a pilot anchor from m0 = 3 to m = 6 must not redraw the
        // first three payoffs: each anchor's inner stream is its own.
        let spec = equicorr_spec(4, 0.3);
        let mut p1 = GaussianRemainder::conditional(&spec, &[0, 1], 0.5, SeedRng::new(29), DEFAULT_MAX_TRIES).unwrap();
        let pilot = run_pilot(&mut p1, 5, 3).unwrap();
        let first: Vec<Vec<f64>> = pilot.payoffs.clone();
        let out = run_nested(&mut p1, 5, 6, Some(&pilot)).unwrap();

        let mut p2 = GaussianRemainder::conditional(&spec, &[0, 1], 0.5, SeedRng::new(29), DEFAULT_MAX_TRIES).unwrap();
        let anchors = p2.next_anchors(5).unwrap();
        for (i, anchor) in anchors.iter().enumerate() {
            let prep = p2.prepare(anchor);
            let g = p2.payoffs(&prep, i as u64, 6);
            assert_eq!(&g[..3], first[i].as_slice());
            let mean = g.iter().sum::<f64>() / 6.0;
            assert_eq!(mean, out.anchor_means[i]);
        }
    }

    #[test]
    fn remainder_unbiased_over_replications() {
        let spec = equicorr_spec(4, 0.5);
        let r_true = oracle::remainder_from_orthants(
            oracle::orthant_equicorrelated(4, 0.5, 0.0),
            oracle::orthant_equicorrelated(2, 0.5, 0.0),
        );
        let reps = 200;
        let n = 400;
        let mut values = Vec::with_capacity(reps);
        let mut vars = Vec::with_capacity(reps);
        for rep in 0..reps {
            let est = remainder_mc(&spec, &[0, 1], 0.0, n, SeedRng::new(3000 + rep as u64)).unwrap();
            values.push(est.value);
            vars.push(est.variance);
        }
        let mean = values.iter().sum::<f64>() / reps as f64;
        let se_mean = (vars.iter().sum::<f64>()).sqrt() / reps as f64;
        assert!(
            (mean - r_true).abs() < 4.0 * se_mean,
            "mean {mean} vs {r_true} (se {se_mean})"
        );
    }

    #[test]
    fn prop2_variance_identity_at_fixed_n_m() {
        // Empirical var(G-tilde) at (n, m) = (100, 5) against
        // (1/n) A - ((m-1)/(n m)) B with brute-force A and B.
        let spec = equicorr_spec(5, 0.5);
        let active = [0usize, 1];
        let t = 0.0;

        // Brute force: A from iid pairs, B from per-anchor inner spreads.
        let mut problem =
            GaussianRemainder::conditional(&spec, &active, t, SeedRng::new(40), DEFAULT_MAX_TRIES).unwrap();
        let k = 20_000;
        let l = 50;
        let anchors = problem.next_anchors(k).unwrap();
        let mut all = Vec::with_capacity(k * l);
        let mut b_acc = 0.0;
        for (i, anchor) in anchors.iter().enumerate() {
            let prep = problem.prepare(anchor);
            let g = problem.payoffs(&prep, i as u64, l);
            let e = g.iter().sum::<f64>() / l as f64;
            b_acc += g.iter().map(|x| (x - e) * (x - e)).sum::<f64>() / (l as f64 - 1.0);
            all.extend_from_slice(&g);
        }
        let b_oracle = b_acc / k as f64;
        let (_, a_oracle) = oracle::mean_var(&all);

        let (n, m) = (100usize, 5usize);
        let reps = 600;
        let mut values = Vec::with_capacity(reps);
        for rep in 0..reps {
            let mut p =
                GaussianRemainder::conditional(&spec, &active, t, SeedRng::new(5000 + rep as u64), DEFAULT_MAX_TRIES)
                    .unwrap();
            values.push(run_nested(&mut p, n, m, None).unwrap().value);
        }
        let emp_var = oracle::sample_var(&values);
        let predicted = a_oracle / n as f64
            - (m as f64 - 1.0) / (n as f64 * m as f64) * b_oracle;
        let rel = (emp_var - predicted).abs() / predicted;
        assert!(rel < 0.2, "empirical {emp_var} vs predicted {predicted} (rel {rel})");
    }
}
