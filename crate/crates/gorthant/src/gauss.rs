//! Dense Gaussian linear algebra: factorization with an escalating jitter
//! ladder, partitioning/conditioning, multivariate normal sampling and
//! truncated (rejection) sampling of the active block.
//!
//! All types are immutable after construction; sampling takes an explicit
//! RNG stream so distinct streams can run on distinct threads.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative tolerance for declaring an input covariance symmetric.
pub const SYMMETRY_RTOL: f64 = 1e-10;

/// Jitter ladder applied to the covariance diagonal on Cholesky failure,
/// as multiples of the mean diagonal entry.
pub const JITTER_LADDER: [f64; 4] = [1e-12, 1e-10, 1e-8, 1e-6];

/// Default cap on candidate draws for the rejection sampler.
pub const DEFAULT_MAX_TRIES: u64 = 10_000_000;

/// Candidates are generated in fixed panels of this many columns so that the
/// candidate sequence (and therefore every accepted draw) is a function of
/// the stream alone, independent of how callers chunk their requests.
const CANDIDATE_PANEL: usize = 1024;

/// A mean vector and covariance matrix defining `N_d(mu, Sigma)`.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianSpec {
    /// Validates shapes and symmetry. The covariance must be square, match
    /// the mean length, and be symmetric within [`SYMMETRY_RTOL`] relative to
    /// its largest entry.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.len() != cov.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.is_empty() {
            return Err(Error::InvalidInput("dimension must be >= 1".into()));
        }
        let scale = cov.amax().max(1.0);
        for i in 0..cov.nrows() {
            for j in (i + 1)..cov.ncols() {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::InvalidInput(format!(
                        "covariance not symmetric at ({i},{j}): {} vs {}",
                        cov[(i, j)],
                        cov[(j, i)]
                    )));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    /// `N_d(0, I)`.
    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// The marginal spec of the given dimensions, in the given order.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self> {
        check_indices(indices, self.dim())?;
        let mean = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(indices.len(), indices.len(), |r, c| {
            self.cov[(indices[r], indices[c])]
        });
        Ok(Self { mean, cov })
    }
}

fn check_indices(indices: &[usize], d: usize) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("index set must be nonempty".into()));
    }
    let mut seen = vec![false; d];
    for &i in indices {
        if i >= d {
            return Err(Error::InvalidInput(format!("index {i} out of range (d={d})")));
        }
        if seen[i] {
            return Err(Error::InvalidInput(format!("duplicate index {i}")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Lower-triangular Cholesky factor, remembering any diagonal jitter that
/// was needed to make the factorization succeed.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    jitter_applied: f64,
}

impl CholeskyFactor {
    pub(crate) fn from_parts(lower: DMatrix<f64>, jitter_applied: f64) -> Self {
        Self { lower, jitter_applied }
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `L L^T`, for reconstruction checks.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Solves `L L^T x = b` in place for each column of `b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.lower.solve_lower_triangular_mut(&mut x);
        self.lower.tr_solve_lower_triangular_mut(&mut x);
        x
    }
}

/// Cholesky factorization with the escalating jitter ladder: on failure,
/// `eps * mean(diag) * I` is added for `eps` in [`JITTER_LADDER`] before
/// giving up with [`Error::NotPositiveDefinite`].
pub fn cholesky(cov: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let d = cov.nrows();
    assert_eq!(d, cov.ncols(), "cholesky needs a square matrix");
    let diag_scale = {
        let m = cov.diagonal().iter().map(|v| v.abs()).sum::<f64>() / d as f64;
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let mut last = 0.0;
    for (k, &eps) in std::iter::once(&0.0).chain(JITTER_LADDER.iter()).enumerate() {
        let jitter = eps * diag_scale;
        last = jitter;
        let mut m = cov.clone();
        if k > 0 {
            for i in 0..d {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = m.cholesky() {
            return Ok(CholeskyFactor {
                lower: chol.unpack(),
                jitter_applied: jitter,
            });
        }
    }
    Err(Error::NotPositiveDefinite { max_jitter: last })
}

/// The distribution of the inactive block conditional on the active one:
/// `X^{-q} | X^q = x` is Gaussian with covariance `cond_cov` (independent of
/// `x`) and mean `base_mean + regression * (x - anchor_mean)`.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    cond_cov: DMatrix<f64>,
    regression: DMatrix<f64>,
    base_mean: DVector<f64>,
    anchor_mean: DVector<f64>,
    active: Vec<usize>,
    inactive: Vec<usize>,
}

impl ConditionalGaussian {
    pub fn cond_cov(&self) -> &DMatrix<f64> {
        &self.cond_cov
    }

    pub fn regression(&self) -> &DMatrix<f64> {
        &self.regression
    }

    pub fn base_mean(&self) -> &DVector<f64> {
        &self.base_mean
    }

    pub fn anchor_mean(&self) -> &DVector<f64> {
        &self.anchor_mean
    }

    pub fn active_indices(&self) -> &[usize] {
        &self.active
    }

    pub fn inactive_indices(&self) -> &[usize] {
        &self.inactive
    }

    /// Conditional mean of the inactive block given an active-block value.
    pub fn mean_given(&self, anchor_value: &DVector<f64>) -> DVector<f64> {
        &self.base_mean + &self.regression * (anchor_value - &self.anchor_mean)
    }
}

/// Partitions `spec` into the `active` block and its complement and returns
/// the conditional law of the complement given the active block.
pub fn condition_on(spec: &GaussianSpec, active: &[usize]) -> Result<ConditionalGaussian> {
    check_indices(active, spec.dim())?;
    let mut in_active = vec![false; spec.dim()];
    for &i in active {
        in_active[i] = true;
    }
    let inactive: Vec<usize> = (0..spec.dim()).filter(|&i| !in_active[i]).collect();

    let q = active.len();
    let r = inactive.len();
    let cov = spec.cov();
    let sigma_q = DMatrix::from_fn(q, q, |i, j| cov[(active[i], active[j])]);
    let cross = DMatrix::from_fn(r, q, |i, j| cov[(inactive[i], active[j])]);
    let sigma_rest = DMatrix::from_fn(r, r, |i, j| cov[(inactive[i], inactive[j])]);

    let anchor_chol =
        cholesky(&sigma_q).map_err(|e| Error::SingularAnchor(format!("{e}")))?;
    // regression = cross * sigma_q^{-1}, via two triangular solves on cross^T.
    let regression = anchor_chol.solve(&cross.transpose()).transpose();
    let mut cond_cov = &sigma_rest - &regression * cross.transpose();
    // Symmetrize away the asymmetry left by the solve.
    for i in 0..r {
        for j in (i + 1)..r {
            let s = 0.5 * (cond_cov[(i, j)] + cond_cov[(j, i)]);
            cond_cov[(i, j)] = s;
            cond_cov[(j, i)] = s;
        }
    }

    let base_mean = DVector::from_iterator(r, inactive.iter().map(|&i| spec.mean()[i]));
    let anchor_mean = DVector::from_iterator(q, active.iter().map(|&i| spec.mean()[i]));
    Ok(ConditionalGaussian {
        cond_cov,
        regression,
        base_mean,
        anchor_mean,
        active: active.to_vec(),
        inactive,
    })
}

/// Draws `n` i.i.d. `N(mean, L L^T)` rows. Deterministic given the stream.
pub fn sample_mvn(
    factor: &CholeskyFactor,
    mean: &DVector<f64>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    assert!(n >= 1, "n must be >= 1");
    assert_eq!(factor.dim(), mean.len(), "factor/mean dimension mismatch");
    let d = mean.len();
    let mut out = DMatrix::zeros(n, d);
    let mut z = DVector::zeros(d);
    for row in 0..n {
        for i in 0..d {
            z[i] = rng.sample(StandardNormal);
        }
        let x = mean + factor.lower() * &z;
        out.row_mut(row).copy_from(&x.transpose());
    }
    out
}

/// Outcome of a one-shot truncated sampling call.
#[derive(Debug, Clone)]
pub struct TruncatedSample {
    /// One accepted draw per row; every entry of every row is `<= t`.
    pub rows: DMatrix<f64>,
    /// `n / draws_used`.
    pub acceptance_rate: f64,
    /// Candidate draws scanned up to and including the last acceptance served.
    pub draws_used: u64,
}

/// Stateful rejection sampler for `X | X <= t 1` under `N(mean, Sigma)`.
///
/// Candidates are generated in fixed panels (one triangular matrix product
/// per panel) and scanned in stream order, so consecutive `take` calls see
/// exactly the draws a single larger call would have seen.
pub struct TruncatedNormalSampler {
    mean: DVector<f64>,
    factor: CholeskyFactor,
    t: f64,
    rng: ChaCha8Rng,
    max_tries: u64,
    buffer: VecDeque<(DVector<f64>, u64)>,
    scanned: u64,
    served: u64,
    draws_used: u64,
}

impl TruncatedNormalSampler {
    pub fn new(spec: &GaussianSpec, t: f64, rng: ChaCha8Rng, max_tries: u64) -> Result<Self> {
        let factor = cholesky(spec.cov())?;
        Ok(Self {
            mean: spec.mean().clone(),
            factor,
            t,
            rng,
            max_tries,
            buffer: VecDeque::new(),
            scanned: 0,
            served: 0,
            draws_used: 0,
        })
    }

    /// Candidate draws scanned up to and including the last served acceptance.
    pub fn draws_used(&self) -> u64 {
        self.draws_used
    }

    /// `served / draws_used`; the running estimate of `P(X <= t 1)`.
    pub fn acceptance_rate(&self) -> f64 {
        if self.draws_used == 0 {
            0.0
        } else {
            self.served as f64 / self.draws_used as f64
        }
    }

    fn refill(&mut self) {
        let d = self.mean.len();
        let mut z = DMatrix::zeros(d, CANDIDATE_PANEL);
        // Column-major fill: candidate j is exactly the j-th run of d normals.
        for j in 0..CANDIDATE_PANEL {
            for i in 0..d {
                z[(i, j)] = self.rng.sample(StandardNormal);
            }
        }
        let x = self.factor.lower() * z;
        for j in 0..CANDIDATE_PANEL {
            self.scanned += 1;
            let cand = DVector::from_fn(d, |i, _| x[(i, j)] + self.mean[i]);
            if cand.iter().all(|&v| v <= self.t) {
                self.buffer.push_back((cand, self.scanned));
            }
        }
    }

    /// Takes the next `n` accepted draws of the stream.
    pub fn take(&mut self, n: usize) -> Result<Vec<DVector<f64>>> {
        while self.buffer.len() < n {
            if self.scanned >= self.max_tries {
                let collected = self.buffer.len();
                return Err(Error::AcceptanceTooLow {
                    requested: n,
                    collected,
                    max_tries: self.max_tries,
                    acceptance: (self.served as f64 + collected as f64) / self.scanned as f64,
                });
            }
            self.refill();
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let (v, idx) = self.buffer.pop_front().expect("buffer underflow");
            self.served += 1;
            self.draws_used = idx;
            out.push(v);
        }
        Ok(out)
    }
}

/// One-shot truncated sampling: `n` rows of `X | X <= t 1` plus the realized
/// acceptance rate and candidate count.
pub fn sample_truncated_below_t(
    spec: &GaussianSpec,
    t: f64,
    n: usize,
    rng: ChaCha8Rng,
    max_tries: u64,
) -> Result<TruncatedSample> {
    assert!(n >= 1, "n must be >= 1");
    let mut sampler = TruncatedNormalSampler::new(spec, t, rng, max_tries)?;
    let rows = sampler.take(n)?;
    let mut out = DMatrix::zeros(n, spec.dim());
    for (r, v) in rows.iter().enumerate() {
        out.row_mut(r).copy_from(&v.transpose());
    }
    Ok(TruncatedSample {
        rows: out,
        acceptance_rate: sampler.acceptance_rate(),
        draws_used: sampler.draws_used(),
    })
}
