//! High-dimensional Gaussian orthant probabilities.
//!
//! The probability `p = P(max_i X_i > t)` of a `d`-dimensional Gaussian
//! vector is split into a moderate-dimensional core and a conditional
//! remainder,
//!
//! ```text
//! p = p_q + (1 - p_q) R_q,
//! p_q = P(max X^q > t),          (q active dimensions)
//! R_q = P(max X^{-q} > t | max X^q <= t),
//! ```
//!
//! where the core is evaluated by randomized quasi-Monte Carlo integration of
//! the normal density ([`qmc`]) and the remainder by Monte Carlo over
//! conditional draws, optionally with an asymmetric nested scheme that picks
//! the number of inner simulations per rejection-sampled anchor to minimize
//! variance at a fixed time budget ([`remainder`]). The composed estimators
//! ([`orthant`]) feed conservative excursion-set estimation under Gaussian
//! random field posteriors ([`grf`]).

pub mod active;
pub mod error;
pub mod gauss;
pub mod grf;
pub mod io;
pub mod orthant;
pub mod qmc;
pub mod remainder;
pub mod rng;

pub use active::{choose_q, excursion_probs, select_dims, ActiveSet, DimSelect, ExcursionWeights, QSelectParams};
pub use error::{Error, Result};
pub use gauss::{
    cholesky, condition_on, sample_mvn, sample_truncated_below_t, CholeskyFactor,
    ConditionalGaussian, GaussianSpec, TruncatedNormalSampler, TruncatedSample,
};
pub use grf::{
    conservative_estimate, coverage_function, grf_condition, kernel_eval, vorobev,
    ConservativeResult, GrfPosterior, Kernel, PriorMean, VorobevFamily, VorobevSummary,
};
pub use orthant::{compose_variance, efficiency, estimate_orthant, Estimate, Method, OrthantConfig};
pub use qmc::{
    lowdiscrepancy_points, mvn_cdf, reorder_variables, CdfEstimate, QmcBudget, QmcSequence,
    Reordered, SequenceKind,
};
pub use remainder::{
    calibrate_costs, plan_anmc, remainder_anmc, remainder_mc, AnmcPlan, CostModel,
    RemainderEstimate, RemainderMethod,
};
pub use rng::SeedRng;
