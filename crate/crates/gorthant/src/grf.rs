//! Gaussian random field posteriors on discretized domains, coverage
//! functions, Vorob'ev quantiles, and conservative excursion-set estimates.
//!
//! The excursion set of interest is `Gamma = {x : xi(x) <= t}` under the
//! posterior law of a GRF `xi` conditioned on `k` observations. Its coverage
//! function `p(x) = P(x in Gamma)` orders the grid; the `rho`-quantile
//! `Q_rho` is the set of points with coverage at least `rho`. A conservative
//! estimate at level `alpha` is the largest such quantile whose probability
//! of being entirely inside the excursion is at least `alpha`; that
//! probability is a high-dimensional orthant probability over the quantile's
//! grid points and is estimated with the GanMC pipeline. The search over
//! quantiles is a dichotomy on the coverage-sorted prefix index.
//!
//! Posterior covariance blocks are materialized on demand (`cov_block`): a
//! dense `m x m` posterior on a fine grid would dwarf memory while the
//! algorithm only ever needs the blocks of candidate quantiles.
//!
//! Kernel conventions (ranges `theta`, variance `sigma^2`):
//! - `matern52-tensor`: product over input dimensions of
//!   `(1 + sqrt(5)|h|/theta + 5 h^2 / (3 theta^2)) exp(-sqrt(5)|h|/theta)`,
//!   times `sigma^2`;
//! - `gaussian`: `sigma^2 exp(-sum_i h_i^2 / (2 theta_i^2))`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::{cholesky, GaussianSpec};
use crate::orthant::{estimate_orthant, Method, OrthantConfig};
use crate::qmc::norm;
use crate::rng::SeedRng;

/// Posterior variances below this fraction of the kernel variance count as
/// zero for the coverage function.
const ZERO_VAR_REL: f64 = 1e-12;

/// Stationary covariance kernel.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Kernel {
    /// Tensor-product Matern with smoothness 5/2, one range per dimension.
    Matern52Tensor { variance: f64, ranges: Vec<f64> },
    /// Squared-exponential with per-dimension ranges.
    Gaussian { variance: f64, ranges: Vec<f64> },
}

impl Kernel {
    pub fn variance(&self) -> f64 {
        match self {
            Kernel::Matern52Tensor { variance, .. } | Kernel::Gaussian { variance, .. } => {
                *variance
            }
        }
    }

    pub fn ranges(&self) -> &[f64] {
        match self {
            Kernel::Matern52Tensor { ranges, .. } | Kernel::Gaussian { ranges, .. } => ranges,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.ranges().len()
    }

    fn validate(&self) -> Result<()> {
        if self.variance() <= 0.0 {
            return Err(Error::InvalidInput("kernel variance must be positive".into()));
        }
        if self.ranges().is_empty() || self.ranges().iter().any(|&r| r <= 0.0) {
            return Err(Error::InvalidInput("kernel ranges must be positive".into()));
        }
        Ok(())
    }

    /// Covariance between two points given as slices of length `input_dim`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Matern52Tensor { variance, ranges } => {
                let mut k = *variance;
                for (i, &theta) in ranges.iter().enumerate() {
                    let r = 5.0_f64.sqrt() * (x[i] - y[i]).abs() / theta;
                    k *= (1.0 + r + r * r / 3.0) * (-r).exp();
                }
                k
            }
            Kernel::Gaussian { variance, ranges } => {
                let mut s = 0.0;
                for (i, &theta) in ranges.iter().enumerate() {
                    let h = x[i] - y[i];
                    s += h * h / (2.0 * theta * theta);
                }
                variance * (-s).exp()
            }
        }
    }
}

fn row(points: &DMatrix<f64>, i: usize) -> Vec<f64> {
    points.row(i).iter().copied().collect()
}

/// Gram block between two point sets (rows are points).
pub fn kernel_eval(kernel: &Kernel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    let l = kernel.input_dim();
    if x.ncols() != l || y.ncols() != l {
        return Err(Error::ShapeMismatch(format!(
            "points have {} / {} columns, kernel expects {l}",
            x.ncols(),
            y.ncols()
        )));
    }
    let mut out = DMatrix::zeros(x.nrows(), y.nrows());
    for i in 0..x.nrows() {
        let xi = row(x, i);
        for j in 0..y.nrows() {
            out[(i, j)] = kernel.eval(&xi, &row(y, j));
        }
    }
    Ok(out)
}

/// Prior mean specification.
#[derive(Debug, Clone)]
pub enum PriorMean {
    Constant(f64),
    /// Explicit values at the design points and the grid points.
    PerPoint { design: DVector<f64>, grid: DVector<f64> },
}

impl PriorMean {
    fn at_design(&self, k: usize) -> Result<DVector<f64>> {
        match self {
            PriorMean::Constant(c) => Ok(DVector::from_element(k, *c)),
            PriorMean::PerPoint { design, .. } => {
                if design.len() != k {
                    return Err(Error::ShapeMismatch("prior mean at design".into()));
                }
                Ok(design.clone())
            }
        }
    }

    fn at_grid(&self, m: usize) -> Result<DVector<f64>> {
        match self {
            PriorMean::Constant(c) => Ok(DVector::from_element(m, *c)),
            PriorMean::PerPoint { grid, .. } => {
                if grid.len() != m {
                    return Err(Error::ShapeMismatch("prior mean at grid".into()));
                }
                Ok(grid.clone())
            }
        }
    }
}

/// GRF posterior on a grid: mean and variance everywhere, covariance blocks
/// on demand.
#[derive(Debug, Clone)]
pub struct GrfPosterior {
    kernel: Kernel,
    grid: DMatrix<f64>,
    post_mean: DVector<f64>,
    post_var: DVector<f64>,
    /// `L^{-1} K(design, grid)`, `k x m`; empty when there are no observations.
    weights: DMatrix<f64>,
}

impl GrfPosterior {
    pub fn len(&self) -> usize {
        self.grid.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self) -> &DMatrix<f64> {
        &self.grid
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn post_mean(&self) -> &DVector<f64> {
        &self.post_mean
    }

    pub fn post_var(&self) -> &DVector<f64> {
        &self.post_var
    }

    /// Posterior covariance block of the given grid indices: the prior Gram
    /// minus the regression part, symmetrized, with tiny negative diagonal
    /// entries clipped to zero.
    pub fn cov_block(&self, idx: &[usize]) -> Result<DMatrix<f64>> {
        let sub = DMatrix::from_fn(idx.len(), self.grid.ncols(), |r, c| {
            self.grid[(idx[r], c)]
        });
        let mut cov = kernel_eval(&self.kernel, &sub, &sub)?;
        if self.weights.nrows() > 0 {
            let v = self.weights.select_columns(idx.iter());
            cov -= v.transpose() * v;
        }
        for i in 0..idx.len() {
            for j in (i + 1)..idx.len() {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
            if cov[(i, i)] < 0.0 {
                cov[(i, i)] = 0.0;
            }
        }
        Ok(cov)
    }

    /// Dense posterior covariance over the whole grid. Use only on modest
    /// grids; the conservative-estimate path never needs it.
    pub fn full_cov(&self) -> Result<DMatrix<f64>> {
        self.cov_block(&(0..self.len()).collect::<Vec<_>>())
    }

    /// The posterior law restricted to a subset of grid points.
    pub fn spec_for(&self, idx: &[usize]) -> Result<GaussianSpec> {
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.post_mean[i]));
        GaussianSpec::new(mean, self.cov_block(idx)?)
    }
}

/// Conditions the prior field on observations and evaluates the posterior on
/// the grid (standard kriging equations with the shared jitter ladder).
pub fn grf_condition(
    kernel: &Kernel,
    prior_mean: &PriorMean,
    design: &DMatrix<f64>,
    observations: &DVector<f64>,
    grid: &DMatrix<f64>,
) -> Result<GrfPosterior> {
    kernel.validate()?;
    let k = design.nrows();
    let m = grid.nrows();
    if observations.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{k} design points but {} observations",
            observations.len()
        )));
    }
    if m == 0 {
        return Err(Error::InvalidInput("grid must be nonempty".into()));
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let mut d2 = 0.0;
            for c in 0..design.ncols() {
                let h = design[(i, c)] - design[(j, c)];
                d2 += h * h;
            }
            if d2 <= 1e-24 {
                return Err(Error::DuplicateDesignPoints { i, j });
            }
        }
    }

    let prior_grid = prior_mean.at_grid(m)?;
    if k == 0 {
        let var = DVector::from_element(m, kernel.variance());
        return Ok(GrfPosterior {
            kernel: kernel.clone(),
            grid: grid.clone(),
            post_mean: prior_grid,
            post_var: var,
            weights: DMatrix::zeros(0, m),
        });
    }

    let gram = kernel_eval(kernel, design, design)?;
    let chol = cholesky(&gram)?;
    let resid = observations - prior_mean.at_design(k)?;
    let alpha = chol.solve(&DMatrix::from_column_slice(k, 1, resid.as_slice()));
    let cross = kernel_eval(kernel, design, grid)?; // k x m
    let post_mean = prior_grid + cross.transpose() * alpha.column(0);

    let mut weights = cross;
    chol.lower().solve_lower_triangular_mut(&mut weights);
    let mut post_var = DVector::zeros(m);
    for j in 0..m {
        let g = row(grid, j);
        let prior = kernel.eval(&g, &g);
        post_var[j] = (prior - weights.column(j).norm_squared()).max(0.0);
    }
    Ok(GrfPosterior {
        kernel: kernel.clone(),
        grid: grid.clone(),
        post_mean,
        post_var,
        weights,
    })
}

/// Pointwise posterior probability of lying in the excursion
/// `{xi <= t}`: `Phi((t - mean) / sd)`, with the zero-variance convention
/// (1 below the threshold, 0 above).
pub fn coverage_function(post: &GrfPosterior, t: f64) -> DVector<f64> {
    let floor = ZERO_VAR_REL * post.kernel.variance();
    DVector::from_fn(post.len(), |i, _| {
        let var = post.post_var[i];
        if var <= floor {
            if post.post_mean[i] <= t {
                1.0
            } else {
                0.0
            }
        } else {
            norm::cdf((t - post.post_mean[i]) / var.sqrt())
        }
    })
}

/// Coverage-sorted view of the grid: quantiles are prefixes.
#[derive(Debug, Clone, Serialize)]
pub struct VorobevFamily {
    coverage: Vec<f64>,
    /// Grid indices in decreasing coverage order (ties by grid index).
    sorted_order: Vec<usize>,
    cell_volume: f64,
}

impl VorobevFamily {
    pub fn from_coverage(coverage: &DVector<f64>, cell_volume: f64) -> Self {
        let mut order: Vec<usize> = (0..coverage.len()).collect();
        order.sort_by(|&a, &b| {
            coverage[b].partial_cmp(&coverage[a]).unwrap().then(a.cmp(&b))
        });
        Self {
            coverage: coverage.iter().copied().collect(),
            sorted_order: order,
            cell_volume,
        }
    }

    pub fn coverage(&self) -> &[f64] {
        &self.coverage
    }

    pub fn sorted_order(&self) -> &[usize] {
        &self.sorted_order
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Coverage of the i-th point in sorted order (0-based).
    pub fn sorted_coverage(&self, i: usize) -> f64 {
        self.coverage[self.sorted_order[i]]
    }

    /// Number of points with coverage at least `rho` (ties included).
    pub fn quantile_size(&self, rho: f64) -> usize {
        self.sorted_order
            .iter()
            .take_while(|&&i| self.coverage[i] >= rho)
            .count()
    }

    /// Grid indices of the quantile `Q_rho`.
    pub fn quantile(&self, rho: f64) -> Vec<usize> {
        self.sorted_order[..self.quantile_size(rho)].to_vec()
    }

    /// Grid indices of the first `n` sorted points.
    pub fn prefix(&self, n: usize) -> &[usize] {
        &self.sorted_order[..n]
    }

    /// `E|Gamma| = cell_volume * sum_i coverage_i`.
    pub fn expected_volume(&self) -> f64 {
        self.cell_volume * self.coverage.iter().sum::<f64>()
    }
}

/// The Vorob'ev threshold and expectation.
#[derive(Debug, Clone, Serialize)]
pub struct VorobevSummary {
    /// Largest coverage threshold whose quantile is at least as large as the
    /// expected excursion volume (ties resolved toward the larger set).
    pub rho_v: f64,
    /// Grid indices of the Vorob'ev expectation `Q_{rho_v}`.
    pub expectation: Vec<usize>,
    pub expected_volume: f64,
}

/// Builds the quantile family and locates the Vorob'ev expectation by a
/// discrete scan over the distinct coverage values.
pub fn vorobev(post: &GrfPosterior, t: f64, cell_volume: f64) -> (VorobevFamily, VorobevSummary) {
    let family = VorobevFamily::from_coverage(&coverage_function(post, t), cell_volume);
    let summary = vorobev_summary(&family);
    (family, summary)
}

/// The scan behind [`vorobev`], usable on any coverage family.
pub fn vorobev_summary(family: &VorobevFamily) -> VorobevSummary {
    let target = family.expected_volume();
    let mut rho_v = 0.0;
    for i in 0..family.sorted_order.len() {
        let rho = family.sorted_coverage(i);
        if (i + 1) as f64 * family.cell_volume >= target - 1e-12 * target.max(1.0) {
            rho_v = rho;
            break;
        }
    }
    VorobevSummary {
        rho_v,
        expectation: family.quantile(rho_v),
        expected_volume: target,
    }
}

/// One probability evaluation of the dichotomy.
#[derive(Debug, Clone, Serialize)]
pub struct DichotomyStep {
    pub i_lo: usize,
    pub i_hi: usize,
    /// Prefix length evaluated.
    pub i_eval: usize,
    /// Estimated inclusion probability `P(Q subset {xi <= t})`.
    pub prob: f64,
    pub se: f64,
    pub accepted: bool,
}

/// A conservative excursion-set estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ConservativeResult {
    /// Grid indices of the returned set (a prefix of the coverage order).
    pub indices: Vec<usize>,
    pub size: usize,
    /// Vorob'ev level attained: the coverage of the last included point
    /// (1 for the empty set).
    pub rho: f64,
    pub inclusion_prob: f64,
    pub inclusion_se: f64,
    pub alpha: f64,
    /// Set when even the top grid point failed the level (the empty set is
    /// the valid conservative answer).
    pub empty: bool,
    pub trace: Vec<DichotomyStep>,
}

/// Computes the conservative estimate at level `alpha` by dichotomy over
/// coverage-sorted prefixes.
///
/// The initial bracket is `[i_T, i_B]`: `i_B` is the largest prefix whose
/// last point still has coverage `>= alpha` (the marginal bound) and `i_T`
/// the largest prefix whose coverage product is `>= alpha` (an independence
/// heuristic, not a bound; if its inclusion probability fails the test, the
/// bracket is restarted from the empty set, which is certain). Every
/// candidate's inclusion probability is a high-dimensional orthant
/// probability estimated with GanMC; a candidate counts as meeting the level
/// only when `p_hat - 3 se >= alpha`, so estimator noise can shrink the set
/// but not inflate it.
pub fn conservative_estimate(
    post: &GrfPosterior,
    t: f64,
    alpha: f64,
    prob_config: &OrthantConfig,
    seed: SeedRng,
) -> Result<ConservativeResult> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha = {alpha} not in (0,1)")));
    }
    let family = VorobevFamily::from_coverage(&coverage_function(post, t), 1.0);
    let m = family.sorted_order.len();

    let i_b = family.quantile_size(alpha);
    let mut i_t = 0usize;
    let mut prod = 1.0;
    for i in 0..m {
        prod *= family.sorted_coverage(i);
        if prod >= alpha {
            i_t = i + 1;
        } else {
            break;
        }
    }

    let mut trace = Vec::new();
    let mut calls = 0u64;
    let mut evaluate = |i: usize, lo: usize, hi: usize, trace: &mut Vec<DichotomyStep>| -> Result<(f64, f64, bool)> {
        let (prob, se) = if i == 0 {
            (1.0, 0.0)
        } else if i == 1 {
            (family.sorted_coverage(0), 0.0)
        } else {
            let spec = post.spec_for(family.prefix(i))?;
            calls += 1;
            let est = estimate_orthant(&spec, t, Method::GanMc, prob_config, seed.replication(calls))?;
            (est.pi_t, est.variance.sqrt())
        };
        let accepted = prob - 3.0 * se >= alpha;
        trace.push(DichotomyStep { i_lo: lo, i_hi: hi, i_eval: i, prob, se, accepted });
        Ok((prob, se, accepted))
    };

    let finish = |best: (usize, f64, f64), trace: Vec<DichotomyStep>| {
        let (i, prob, se) = best;
        ConservativeResult {
            indices: family.prefix(i).to_vec(),
            size: i,
            rho: if i == 0 { 1.0 } else { family.sorted_coverage(i - 1) },
            inclusion_prob: prob,
            inclusion_se: se,
            alpha,
            empty: i == 0,
            trace,
        }
    };

    if i_b == 0 {
        // Even the best single point fails marginally.
        return Ok(finish((0, 1.0, 0.0), trace));
    }

    // Part 1: bracket ends.
    let (p_r, se_r, acc_r) = evaluate(i_b, i_t, i_b, &mut trace)?;
    if acc_r {
        return Ok(finish((i_b, p_r, se_r), trace));
    }
    let (mut i_l, mut i_r);
    let mut best;
    let (p_l, se_l, acc_l) = evaluate(i_t, i_t, i_b, &mut trace)?;
    if acc_l {
        i_l = i_t;
        i_r = i_b;
        best = (i_t, p_l, se_l);
    } else {
        // The product heuristic overshot; restart from the empty set.
        i_l = 0;
        i_r = i_t.max(1);
        best = (0, 1.0, 0.0);
    }

    // Part 2: dichotomy.
    while i_r - i_l >= 2 {
        let i_next = (i_l + i_r) / 2;
        let (p, se, acc) = evaluate(i_next, i_l, i_r, &mut trace)?;
        if acc {
            i_l = i_next;
            best = (i_next, p, se);
        } else {
            i_r = i_next;
        }
    }
    if best.0 == 0 {
        log::warn!("conservative estimate is empty at alpha = {alpha}");
    }
    Ok(finish(best, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::sample_mvn;
    use crate::orthant::BudgetMode;
    use crate::qmc::QmcBudget;
    use approx::assert_abs_diff_eq;

    fn grid_1d(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 1, |r, _| r as f64 / (n.max(2) - 1) as f64)
    }

    fn matern(variance: f64, ranges: &[f64]) -> Kernel {
        Kernel::Matern52Tensor { variance, ranges: ranges.to_vec() }
    }

    #[test]
    fn kernel_zero_lag_is_variance() {
        let x = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        for k in [
            matern(2.5, &[0.4, 0.2]),
            Kernel::Gaussian { variance: 2.5, ranges: vec![0.2, 0.4] },
        ] {
            let g = kernel_eval(&k, &x, &x).unwrap();
            assert_abs_diff_eq!(g[(0, 0)], 2.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn matern_tensor_is_product_of_one_dimensional() {
        let k2 = matern(3.0, &[0.4, 0.2]);
        let ka = matern(1.0, &[0.4]);
        let kb = matern(1.0, &[0.2]);
        let x = [0.1, 0.9];
        let y = [0.55, 0.3];
        let expect = 3.0 * ka.eval(&x[..1], &y[..1]) * kb.eval(&x[1..], &y[1..]);
        assert_abs_diff_eq!(k2.eval(&x, &y), expect, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_kernel_at_one_range_per_axis() {
        let l = 3usize;
        let k = Kernel::Gaussian { variance: 2.0, ranges: vec![0.3, 0.5, 0.7] };
        let x = [0.0, 0.0, 0.0];
        let y = [0.3, 0.5, 0.7];
        assert_abs_diff_eq!(
            k.eval(&x, &y),
            2.0 * (-(l as f64) / 2.0).exp(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn gram_is_factorizable() {
        let pts = crate::qmc::lowdiscrepancy_points(
            &crate::qmc::QmcSequence::new(2, crate::qmc::SequenceKind::Sobol),
            40,
        )
        .unwrap();
        let g = kernel_eval(&matern(1.5, &[0.3, 0.3]), &pts, &pts).unwrap();
        assert!(cholesky(&g).is_ok());
    }

    #[test]
    fn no_update_keeps_prior_mean() {
        let design = DMatrix::from_row_slice(3, 1, &[0.1, 0.5, 0.9]);
        let obs = DVector::from_element(3, 1.7);
        let post = grf_condition(
            &matern(1.0, &[0.4]),
            &PriorMean::Constant(1.7),
            &design,
            &obs,
            &grid_1d(20),
        )
        .unwrap();
        for i in 0..20 {
            assert_abs_diff_eq!(post.post_mean()[i], 1.7, epsilon = 1e-10);
        }
    }

    #[test]
    fn interpolates_at_design_points() {
        let design = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let obs = DVector::from_vec(vec![0.3, -0.8, 1.2]);
        // Grid contains the design points exactly.
        let post = grf_condition(
            &matern(2.0, &[0.3]),
            &PriorMean::Constant(0.0),
            &design,
            &obs,
            &grid_1d(21),
        )
        .unwrap();
        for (gi, oi) in [(0usize, 0.3), (10, -0.8), (20, 1.2)] {
            assert!((post.post_mean()[gi] - oi).abs() < 1e-8);
            assert!(post.post_var()[gi] <= 1e-8 * 2.0);
        }
    }

    #[test]
    fn duplicate_design_points_are_rejected() {
        let design = DMatrix::from_row_slice(2, 1, &[0.4, 0.4]);
        let obs = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            grf_condition(&matern(1.0, &[0.3]), &PriorMean::Constant(0.0), &design, &obs, &grid_1d(5)),
            Err(Error::DuplicateDesignPoints { .. })
        ));
    }

    #[test]
    fn posterior_matches_joint_conditioning_oracle() {
        // Oracle route: build the joint Gaussian over (design, grid) with the
        // prior kernel and condition with the gauss-core machinery.
        let kernel = matern(1.3, &[0.35]);
        let design = DMatrix::from_row_slice(3, 1, &[0.12, 0.47, 0.81]);
        let obs = DVector::from_vec(vec![0.5, -0.2, 0.9]);
        let grid = grid_1d(50);
        let post = grf_condition(&kernel, &PriorMean::Constant(0.0), &design, &obs, &grid)
            .unwrap();

        let mut joint_pts = DMatrix::zeros(53, 1);
        joint_pts.view_mut((0, 0), (3, 1)).copy_from(&design);
        joint_pts.view_mut((3, 0), (50, 1)).copy_from(&grid);
        let joint_cov = kernel_eval(&kernel, &joint_pts, &joint_pts).unwrap();
        let joint = GaussianSpec::new(DVector::zeros(53), joint_cov).unwrap();
        let cond = crate::gauss::condition_on(&joint, &[0, 1, 2]).unwrap();
        let mean = cond.mean_given(&obs);
        let cov = cond.cond_cov();

        let full = post.full_cov().unwrap();
        for i in 0..50 {
            assert!((post.post_mean()[i] - mean[i]).abs() < 1e-7);
            for j in 0..50 {
                assert!((full[(i, j)] - cov[(i, j)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn coverage_at_threshold_mean_is_half() {
        let post = grf_condition(
            &matern(1.0, &[0.4]),
            &PriorMean::Constant(0.3),
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            &grid_1d(4),
        )
        .unwrap();
        let cov = coverage_function(&post, 0.3);
        assert!(cov.iter().all(|&c| c == 0.5));
    }

    #[test]
    fn coverage_zero_variance_rule_at_design() {
        let design = DMatrix::from_row_slice(2, 1, &[0.25, 0.75]);
        let obs = DVector::from_vec(vec![-1.0, 2.0]);
        let post = grf_condition(
            &matern(1.0, &[0.3]),
            &PriorMean::Constant(0.0),
            &design,
            &obs,
            &DMatrix::from_row_slice(2, 1, &[0.25, 0.75]),
        )
        .unwrap();
        let cov = coverage_function(&post, 0.0);
        assert_eq!(cov[0], 1.0); // observed below t
        assert_eq!(cov[1], 0.0); // observed above t
    }

    #[test]
    fn coverage_matches_posterior_sampling_oracle() {
        let design = DMatrix::from_row_slice(3, 1, &[0.2, 0.5, 0.8]);
        let obs = DVector::from_vec(vec![0.4, -0.3, 0.6]);
        let grid = grid_1d(20);
        let post = grf_condition(&matern(0.8, &[0.25]), &PriorMean::Constant(0.0), &design, &obs, &grid)
            .unwrap();
        let t = 0.2;
        let cov = coverage_function(&post, t);

        let spec = post.spec_for(&(0..20).collect::<Vec<_>>()).unwrap();
        let chol = cholesky(spec.cov()).unwrap();
        let n = 100_000;
        let mut rng = SeedRng::new(31).stream("cov-mc");
        let draws = sample_mvn(&chol, spec.mean(), n, &mut rng);
        for j in 0..20 {
            let freq =
                draws.column(j).iter().filter(|&&v| v <= t).count() as f64 / n as f64;
            let se = (cov[j] * (1.0 - cov[j]) / n as f64).sqrt().max(1e-4);
            assert!(
                (freq - cov[j]).abs() < 3.0 * se,
                "point {j}: freq {freq} vs coverage {}",
                cov[j]
            );
        }
    }

    #[test]
    fn vorobev_enumerated_example() {
        let family = VorobevFamily::from_coverage(&DVector::from_vec(vec![0.9, 0.5, 0.1]), 1.0);
        let s = vorobev_summary(&family);
        assert_abs_diff_eq!(s.expected_volume, 1.5, epsilon = 1e-12);
        assert_eq!(s.rho_v, 0.5);
        assert_eq!(s.expectation, vec![0, 1]);
    }

    #[test]
    fn vorobev_full_coverage_returns_whole_grid() {
        let family = VorobevFamily::from_coverage(&DVector::from_element(7, 1.0), 0.25);
        let s = vorobev_summary(&family);
        assert_eq!(s.rho_v, 1.0);
        assert_eq!(s.expectation.len(), 7);
    }

    #[test]
    fn vorobev_quantiles_are_nested() {
        let cov = DVector::from_fn(40, |i, _| ((i * 7919) % 100) as f64 / 100.0);
        let family = VorobevFamily::from_coverage(&cov, 1.0);
        let mut last = usize::MAX;
        for k in 0..=100 {
            let rho = k as f64 / 100.0;
            let size = family.quantile_size(rho);
            assert!(size <= last);
            last = size;
        }
    }

    /// Nearly independent posterior with a prescribed coverage profile:
    /// distant points under a tiny-range kernel, per-point prior mean.
    fn independence_fixture(coverages: &[f64], t: f64) -> GrfPosterior {
        let m = coverages.len();
        let grid = DMatrix::from_fn(m, 1, |r, _| r as f64);
        let means =
            DVector::from_iterator(m, coverages.iter().map(|&c| t - norm::quantile(c)));
        grf_condition(
            &Kernel::Gaussian { variance: 1.0, ranges: vec![1e-3] },
            &PriorMean::PerPoint { design: DVector::zeros(0), grid: means },
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            &grid,
        )
        .unwrap()
    }

    fn fast_config() -> OrthantConfig {
        OrthantConfig {
            qmc: QmcBudget { n_points: 512, n_randomizations: 8 },
            budget: BudgetMode::FixedN { n_outer: 4000 },
            ..Default::default()
        }
    }

    #[test]
    fn conservative_matches_brute_force_on_independent_fixture() {
        let coverages: Vec<f64> = (0..12).map(|i| 0.995 - 0.03 * i as f64).collect();
        let t = 0.0;
        let post = independence_fixture(&coverages, t);
        for alpha in [0.8, 0.9] {
            let res =
                conservative_estimate(&post, t, alpha, &fast_config(), SeedRng::new(51)).unwrap();
            // Brute force: largest prefix of the sorted coverages whose
            // product stays above alpha.
            let mut best = 0;
            let mut prod = 1.0;
            for (i, &c) in coverages.iter().enumerate() {
                prod *= c;
                if prod >= alpha {
                    best = i + 1;
                }
            }
            assert_eq!(res.size, best, "alpha={alpha}");
            assert!(!res.empty);
            assert!(res.rho >= alpha);
        }
    }

    #[test]
    fn conservative_single_point_boundary() {
        let post = independence_fixture(&[0.97, 0.6, 0.55, 0.5], 0.0);
        let res =
            conservative_estimate(&post, 0.0, 0.95, &fast_config(), SeedRng::new(52)).unwrap();
        assert_eq!(res.size, 1);
        assert_eq!(res.indices, vec![0]);
        assert!((res.inclusion_prob - 0.97).abs() < 1e-9);
    }

    #[test]
    fn conservative_empty_when_top_point_fails() {
        let post = independence_fixture(&[0.9, 0.8], 0.0);
        let res =
            conservative_estimate(&post, 0.0, 0.95, &fast_config(), SeedRng::new(53)).unwrap();
        assert!(res.empty);
        assert_eq!(res.size, 0);
        assert_eq!(res.rho, 1.0);
    }

    #[test]
    fn conservative_grows_as_alpha_shrinks() {
        let coverages: Vec<f64> = (0..16).map(|i| 0.999 - 0.025 * i as f64).collect();
        let post = independence_fixture(&coverages, 0.0);
        let lo =
            conservative_estimate(&post, 0.0, 0.8, &fast_config(), SeedRng::new(54)).unwrap();
        let hi =
            conservative_estimate(&post, 0.0, 0.9, &fast_config(), SeedRng::new(54)).unwrap();
        assert!(lo.size >= hi.size);
        let hi_set: std::collections::HashSet<_> = hi.indices.iter().collect();
        assert!(hi_set.iter().all(|i| lo.indices.contains(i)));
    }

    #[test]
    fn conservative_is_deterministic_per_seed() {
        let coverages: Vec<f64> = (0..16).map(|i| 0.999 - 0.03 * i as f64).collect();
        let post = independence_fixture(&coverages, 0.0);
        let a = conservative_estimate(&post, 0.0, 0.85, &fast_config(), SeedRng::new(56)).unwrap();
        let b = conservative_estimate(&post, 0.0, 0.85, &fast_config(), SeedRng::new(56)).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.inclusion_prob, b.inclusion_prob);
    }

    #[test]
    fn conservative_trace_is_consistent() {
        let coverages: Vec<f64> = (0..20).map(|i| 0.999 - 0.02 * i as f64).collect();
        let post = independence_fixture(&coverages, 0.0);
        let res =
            conservative_estimate(&post, 0.0, 0.85, &fast_config(), SeedRng::new(55)).unwrap();
        for step in &res.trace {
            assert_eq!(step.accepted, step.prob - 3.0 * step.se >= 0.85);
        }
        // The result is a coverage-sorted prefix and sits inside Q_alpha.
        assert!(res.size <= res.trace.iter().map(|s| s.i_eval).max().unwrap_or(0).max(res.size));
        assert!(res.rho >= 0.85);
    }
}
