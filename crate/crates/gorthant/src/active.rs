//! Selection of the active dimensions: how many (`q`) and which (`E_q`).
//!
//! Marginal excursion probabilities `p_t(i) = P(X_i > t)` rank dimensions by
//! how much they can contribute to `P(max X > t)`. Dimensions are sampled
//! without replacement with weights `p_t` (method A) or `p_t (1 - p_t)`
//! (method B), optionally reweighted by running products of spatial distances
//! to the points already chosen. The number of active dimensions grows in
//! steps of `q_step` until the relative change of the core estimate falls
//! below `gamma` times its error, or a dimension guard is hit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::GaussianSpec;
use crate::qmc::{self, mvn_cdf, CdfEstimate, QmcBudget};

/// Hard ceiling on the grown number of active dimensions (the CDF backend
/// degrades beyond this).
pub const Q_GROWTH_CAP: usize = 300;

/// Weighting rule for sampling active dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimSelect {
    /// Weights proportional to the excursion probability `p_t`.
    A,
    /// Weights proportional to `p_t (1 - p_t)`, favouring dimensions whose
    /// exceedance is most uncertain.
    B,
}

/// Marginal excursion probabilities and their normalized sampling weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcursionWeights {
    p_t: Vec<f64>,
    weights: Vec<f64>,
    uniform_fallback: bool,
}

impl ExcursionWeights {
    pub fn p_t(&self) -> &[f64] {
        &self.p_t
    }

    /// Normalized method-A weights (or the uniform fallback).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn uniform_fallback(&self) -> bool {
        self.uniform_fallback
    }

    /// Raw (unnormalized) weights under the given selection rule.
    pub fn raw_weights(&self, method: DimSelect) -> Vec<f64> {
        match method {
            DimSelect::A => self.p_t.clone(),
            DimSelect::B => self.p_t.iter().map(|&p| p * (1.0 - p)).collect(),
        }
    }
}

/// Computes `p_t(i) = Phi((mu_i - t) / sqrt(Sigma_ii))` for every dimension.
pub fn excursion_probs(spec: &GaussianSpec, t: f64) -> Result<ExcursionWeights> {
    let d = spec.dim();
    let mut p_t = Vec::with_capacity(d);
    for i in 0..d {
        let var = spec.cov()[(i, i)];
        if var <= 0.0 {
            return Err(Error::ZeroVariance { index: i });
        }
        p_t.push(qmc::norm::cdf((spec.mean()[i] - t) / var.sqrt()));
    }
    let total: f64 = p_t.iter().sum();
    let (weights, uniform_fallback) = if total > 0.0 {
        (p_t.iter().map(|&p| p / total).collect(), false)
    } else {
        log::warn!("all excursion probabilities underflowed; falling back to uniform weights");
        (vec![1.0 / d as f64; d], true)
    };
    Ok(ExcursionWeights { p_t, weights, uniform_fallback })
}

/// Draws `q` distinct dimensions without replacement, proportional to the
/// method weights, continuing from `already` (empty for a fresh draw).
///
/// With `spatial` points supplied (one row per dimension), the j-th draw's
/// weights are additionally multiplied by `delta_j / ||delta_j||`, where
/// `delta_j` is the component-wise product of Euclidean distances to the
/// points selected so far; already-chosen locations get weight zero.
fn sequential_draws(
    weights: &ExcursionWeights,
    q: usize,
    method: DimSelect,
    spatial: Option<&DMatrix<f64>>,
    already: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let d = weights.p_t.len();
    if let Some(pts) = spatial {
        if pts.nrows() != d {
            return Err(Error::ShapeMismatch(format!(
                "spatial points: {} rows for {} dimensions",
                pts.nrows(),
                d
            )));
        }
    }
    let mut w = weights.raw_weights(method);
    if w.iter().all(|&x| x <= 0.0) {
        log::warn!("selection weights all zero; falling back to uniform weights");
        w = vec![1.0; d];
    }
    let mut delta = vec![1.0f64; d];
    let mut selected = already.to_vec();
    for &s in already {
        w[s] = 0.0;
    }
    if let Some(pts) = spatial {
        for &s in already {
            accumulate_distances(&mut delta, pts, s);
        }
    }

    let available = w.iter().filter(|&&x| x > 0.0).count();
    let need = q.saturating_sub(already.len());
    if need > available {
        return Err(Error::InsufficientMass { requested: q, available: available + already.len() });
    }

    while selected.len() < q {
        let eff: Vec<f64> = if spatial.is_some() {
            let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 0.0 {
                return Err(Error::InsufficientMass {
                    requested: q,
                    available: selected.len(),
                });
            }
            w.iter().zip(&delta).map(|(&wi, &di)| wi * di / norm).collect()
        } else {
            w.clone()
        };
        let total: f64 = eff.iter().sum();
        if total <= 0.0 {
            return Err(Error::InsufficientMass { requested: q, available: selected.len() });
        }
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = d - 1;
        for (i, &e) in eff.iter().enumerate() {
            acc += e;
            if u < acc {
                pick = i;
                break;
            }
        }
        // Walk back over zero-weight tails the float sum may have skipped.
        while eff[pick] <= 0.0 {
            pick = pick.checked_sub(1).expect("no positive weight found");
        }
        selected.push(pick);
        w[pick] = 0.0;
        if let Some(pts) = spatial {
            accumulate_distances(&mut delta, pts, pick);
        }
    }
    Ok(selected)
}

fn accumulate_distances(delta: &mut [f64], pts: &DMatrix<f64>, chosen: usize) {
    let p = pts.row(chosen);
    for (i, dl) in delta.iter_mut().enumerate() {
        let mut s = 0.0;
        for c in 0..pts.ncols() {
            let h = pts[(i, c)] - p[c];
            s += h * h;
        }
        *dl *= s.sqrt();
    }
}

/// Samples `q` distinct dimensions with the given rule; see
/// [`sequential_draws`] for the spatial variant.
pub fn select_dims(
    weights: &ExcursionWeights,
    q: usize,
    method: DimSelect,
    spatial: Option<&DMatrix<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if q == 0 || q > weights.p_t.len() {
        return Err(Error::InvalidInput(format!(
            "q = {q} out of range for d = {}",
            weights.p_t.len()
        )));
    }
    sequential_draws(weights, q, method, spatial, &[], rng)
}

/// Parameters of the sequential `q` search.
#[derive(Debug, Clone, Serialize)]
pub struct QSelectParams {
    /// Initial number of active dimensions; defaults to `ceil(d^(1/3))`.
    pub q0: Option<usize>,
    /// Increment per round; defaults to the resolved `q0`.
    pub q_step: Option<usize>,
    /// Stop when the relative change is below `gamma` times the error.
    pub gamma: f64,
    /// Append new dimensions instead of redrawing the whole set each round.
    pub grow: bool,
    /// Spatial coordinates of the dimensions (one row per dimension), for the
    /// distance-product reweighting. Not part of the serialized config echo;
    /// the CLI echoes the source path instead.
    #[serde(skip)]
    pub spatial: Option<DMatrix<f64>>,
}

impl Default for QSelectParams {
    fn default() -> Self {
        Self { q0: None, q_step: None, gamma: 1.0, grow: false, spatial: None }
    }
}

impl QSelectParams {
    pub fn resolved_q0(&self, d: usize) -> usize {
        self.q0.unwrap_or((d as f64).powf(1.0 / 3.0).ceil() as usize).clamp(1, d)
    }
}

/// One round of the `q` search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QIteration {
    pub q: usize,
    /// Exceedance estimate `p_hat_q = 1 - CDF`.
    pub p_hat: f64,
    /// `3 * std_error` of the CDF estimate.
    pub err: f64,
    /// Relative change `|p_k - p_{k-1}| / (1 + p_k)`; `None` on the first round.
    pub delta: Option<f64>,
}

/// The selected active dimensions with the core estimate and search history.
#[derive(Debug, Clone, Serialize)]
pub struct ActiveSet {
    indices: Vec<usize>,
    pq: f64,
    cdf: CdfEstimate,
    method: String,
    history: Vec<QIteration>,
    q_exhausted: bool,
}

impl ActiveSet {
    /// Assembles an explicitly chosen active set; the caller provides the CDF
    /// estimate of the active block.
    pub fn explicit(indices: Vec<usize>, cdf: CdfEstimate) -> Self {
        let pq = 1.0 - cdf.value;
        Self {
            indices,
            pq,
            cdf,
            method: "explicit".into(),
            history: Vec::new(),
            q_exhausted: false,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn q(&self) -> usize {
        self.indices.len()
    }

    /// `p_hat_q = 1 - P(X^q <= t 1)`.
    pub fn pq(&self) -> f64 {
        self.pq
    }

    pub fn pq_std_error(&self) -> f64 {
        self.cdf.std_error
    }

    pub fn cdf(&self) -> &CdfEstimate {
        &self.cdf
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn history(&self) -> &[QIteration] {
        &self.history
    }

    /// Whether the search stopped on the growth cap rather than convergence.
    pub fn q_exhausted(&self) -> bool {
        self.q_exhausted
    }
}

/// Grows the number of active dimensions until the core estimate stabilizes.
///
/// Starts at `q0`, adds `q_step` per round (fresh redraw unless
/// `params.grow`), and stops once
/// `|p_k - p_{k-1}| / (1 + p_k) <= gamma * err_k` with `err = 3 * std_error`,
/// or when `q` reaches `min(d, 300)`. An estimate that is exactly zero at
/// `q0` ends the search immediately: adding dimensions cannot shrink it and
/// the remainder stage measures whatever mass is left.
pub fn choose_q(
    spec: &GaussianSpec,
    t: f64,
    method: DimSelect,
    params: &QSelectParams,
    budget: QmcBudget,
    rng: &mut ChaCha8Rng,
) -> Result<ActiveSet> {
    let d = spec.dim();
    let weights = excursion_probs(spec, t)?;
    let q0 = params.resolved_q0(d);
    let q_step = params.q_step.unwrap_or(q0).max(1);
    let max_q = Q_GROWTH_CAP.min(d);
    let spatial = params.spatial.as_ref();

    let estimate = |idx: &[usize], rng: &mut ChaCha8Rng| -> Result<CdfEstimate> {
        let sub = spec.restrict(idx)?;
        mvn_cdf(&sub, &DVector::from_element(idx.len(), t), budget, rng)
    };

    let mut q_cur = q0.min(max_q);
    let mut indices = sequential_draws(&weights, q_cur, method, spatial, &[], rng)?;
    let mut cdf = estimate(&indices, rng)?;
    let mut p_prev = 1.0 - cdf.value;
    let mut history = vec![QIteration {
        q: q_cur,
        p_hat: p_prev,
        err: 3.0 * cdf.std_error,
        delta: None,
    }];

    let mut converged = p_prev == 0.0;
    while !converged && q_cur < max_q {
        let q_next = (q_cur + q_step).min(max_q);
        let next_indices = if params.grow {
            sequential_draws(&weights, q_next, method, spatial, &indices, rng)?
        } else {
            sequential_draws(&weights, q_next, method, spatial, &[], rng)?
        };
        let next_cdf = estimate(&next_indices, rng)?;
        let p_next = 1.0 - next_cdf.value;
        let err = 3.0 * next_cdf.std_error;
        let delta = (p_next - p_prev).abs() / (1.0 + p_next);
        history.push(QIteration { q: q_next, p_hat: p_next, err, delta: Some(delta) });

        indices = next_indices;
        cdf = next_cdf;
        p_prev = p_next;
        q_cur = q_next;
        if delta <= params.gamma * err {
            converged = true;
        }
    }

    let q_exhausted = !converged && q_cur >= Q_GROWTH_CAP;
    let mut name = match method {
        DimSelect::A => "A".to_string(),
        DimSelect::B => "B".to_string(),
    };
    if spatial.is_some() {
        name.push_str("-spatial");
    }
    Ok(ActiveSet {
        indices,
        pq: p_prev,
        cdf,
        method: name,
        history,
        q_exhausted,
    })
}
