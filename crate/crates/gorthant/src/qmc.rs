//! Randomized quasi-Monte Carlo estimation of the multivariate normal CDF,
//! plus the low-discrepancy sequences used internally and for test-problem
//! construction.
//!
//! The CDF estimator applies the separation-of-variables transform: a
//! variable-reordered Cholesky factor maps quasi-uniform coordinates through
//! sequentially conditioned 1-D normal quantiles, and the integrand is
//! averaged over independently shifted randomizations of a rank-1 lattice
//! with a Richtmyer (square-root-of-primes) generating vector and the tent
//! periodization. The reported `std_error` is the standard deviation of the
//! randomization means divided by `sqrt(n_randomizations)`; callers that want
//! the conventional `err = 3 sqrt(var)` convention multiply by three
//! themselves.

use nalgebra::{DMatrix, DVector};
use once_cell::sync::Lazy;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{CholeskyFactor, GaussianSpec, JITTER_LADDER};

/// Hard cap on the CDF dimension.
pub const Q_MAX: usize = 500;
/// Soft cap; a warning is logged above this.
pub const Q_WARN: usize = 300;

/// Dimension cap of the built-in digital sequence table.
pub const SOBOL_MAX_DIM: usize = 1111;
/// Dimension cap for the square-root-of-primes lattice.
pub const LATTICE_MAX_DIM: usize = 16_384;

// ---------------------------------------------------------------------------
// Scalar normal helpers
// ---------------------------------------------------------------------------

pub(crate) mod norm {
    use statrs::function::erf::{erfc, erfc_inv};

    pub fn cdf(x: f64) -> f64 {
        0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
    }

    pub fn pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    pub fn quantile(p: f64) -> f64 {
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
    }

    /// `E[Z | Z <= c]` for a standard normal; the Mills-ratio asymptote is
    /// used where the CDF underflows.
    pub fn truncated_mean_below(c: f64) -> f64 {
        if c < -12.0 {
            c - 1.0 / c
        } else {
            let denom = cdf(c);
            if denom <= 0.0 {
                c - 1.0 / c
            } else {
                -pdf(c) / denom
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Digital (Sobol-style) sequence
// ---------------------------------------------------------------------------

const SOBOL_BITS: usize = 32;
const SOBOL_SCALE: f64 = 1.0 / 4294967296.0; // 2^-32

/// Fixed seed for the initial direction numbers. The table is part of the
/// artifact's defined output: changing this constant changes every generated
/// point set.
const DIRECTION_SEED: u64 = 0x5eed_50b0_1d1f_f00d;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Prime factors of `2^s - 1` for polynomial degrees 1..=13.
fn mersenne_factors(s: u32) -> &'static [u64] {
    match s {
        1 => &[],
        2 => &[3],
        3 => &[7],
        4 => &[3, 5],
        5 => &[31],
        6 => &[3, 7],
        7 => &[127],
        8 => &[3, 5, 17],
        9 => &[7, 73],
        10 => &[3, 11, 31],
        11 => &[23, 89],
        12 => &[3, 5, 7, 13],
        13 => &[8191],
        _ => unreachable!("degree out of range"),
    }
}

fn gf2_mulmod(mut a: u64, mut b: u64, p: u64, s: u32) -> u64 {
    let mut r = 0u64;
    while b != 0 {
        if b & 1 == 1 {
            r ^= a;
        }
        b >>= 1;
        a <<= 1;
        if (a >> s) & 1 == 1 {
            a ^= p;
        }
    }
    r
}

fn gf2_pow_x(mut e: u64, p: u64, s: u32) -> u64 {
    let mut base = 0b10u64 % (1u64 << s).max(2); // the polynomial `x`
    if s == 1 {
        base = p ^ 0b10; // x mod (x + 1) = 1
    }
    let mut acc = 1u64;
    while e > 0 {
        if e & 1 == 1 {
            acc = gf2_mulmod(acc, base, p, s);
        }
        base = gf2_mulmod(base, base, p, s);
        e >>= 1;
    }
    acc
}

/// `x` generates the full multiplicative group iff its order is `2^s - 1`;
/// this also certifies irreducibility.
fn is_primitive(poly: u64, s: u32) -> bool {
    let order = (1u64 << s) - 1;
    if gf2_pow_x(order, poly, s) != 1 {
        return false;
    }
    for &f in mersenne_factors(s) {
        if gf2_pow_x(order / f, poly, s) == 1 {
            return false;
        }
    }
    true
}

/// Direction numbers for one coordinate, scaled to 32 fractional bits.
struct SobolDim {
    v: [u32; SOBOL_BITS],
}

fn build_sobol_table() -> Vec<SobolDim> {
    let mut table = Vec::with_capacity(SOBOL_MAX_DIM);

    // First coordinate: plain radical inverse in base 2.
    let mut v0 = [0u32; SOBOL_BITS];
    for (i, slot) in v0.iter_mut().enumerate() {
        *slot = 1u32 << (31 - i);
    }
    table.push(SobolDim { v: v0 });

    let mut seed = DIRECTION_SEED;
    'degrees: for s in 1u32..=13 {
        // Enumerate primitive polynomials of degree s in ascending encoding.
        for interior in 0u64..(1u64 << (s.saturating_sub(1))) {
            let poly = (1u64 << s) | (interior << 1) | 1;
            if !is_primitive(poly, s) {
                continue;
            }
            let mut m = [0u64; SOBOL_BITS];
            for i in 0..s as usize {
                // Any odd m_i < 2^i is admissible; draw one reproducibly.
                let r = splitmix64(&mut seed);
                m[i] = (r & ((1u64 << (i + 1)) - 1)) | 1;
            }
            for i in s as usize..SOBOL_BITS {
                let mut acc = m[i - s as usize] ^ (m[i - s as usize] << s);
                for k in 1..s {
                    if (poly >> (s - k)) & 1 == 1 {
                        acc ^= m[i - k as usize] << k;
                    }
                }
                m[i] = acc;
            }
            let mut v = [0u32; SOBOL_BITS];
            for i in 0..SOBOL_BITS {
                v[i] = (m[i] << (31 - i)) as u32;
            }
            table.push(SobolDim { v });
            if table.len() == SOBOL_MAX_DIM {
                break 'degrees;
            }
        }
    }
    assert_eq!(table.len(), SOBOL_MAX_DIM);
    table
}

static SOBOL_TABLE: Lazy<Vec<SobolDim>> = Lazy::new(build_sobol_table);

/// Coordinate `dim` of point `index` (index 0 is the origin and is normally
/// skipped).
fn sobol_coordinate(index: u64, dim: usize) -> f64 {
    let dirs = &SOBOL_TABLE[dim];
    let mut acc = 0u32;
    let mut n = index;
    let mut bit = 0usize;
    while n != 0 && bit < SOBOL_BITS {
        if n & 1 == 1 {
            acc ^= dirs.v[bit];
        }
        n >>= 1;
        bit += 1;
    }
    f64::from(acc) * SOBOL_SCALE
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut bound = 64.max(n * 20);
    loop {
        let mut sieve = vec![true; bound];
        sieve[0] = false;
        sieve[1] = false;
        for i in 2..bound {
            if sieve[i] {
                let mut j = i * i;
                while j < bound {
                    sieve[j] = false;
                    j += i;
                }
            }
        }
        let primes: Vec<u64> = (2..bound).filter(|&i| sieve[i]).map(|i| i as u64).take(n).collect();
        if primes.len() == n {
            return primes;
        }
        bound *= 2;
    }
}

// ---------------------------------------------------------------------------
// Sequence front-end
// ---------------------------------------------------------------------------

/// Which low-discrepancy construction to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    /// Digital sequence in base 2 built from primitive polynomials
    /// (Sobol-style, radical-inverse point order).
    Sobol,
    /// Rank-1 lattice with the square-root-of-primes generating vector.
    Lattice,
}

/// A deterministic point-set generator on `[0,1)^dimension`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QmcSequence {
    pub dimension: usize,
    pub kind: SequenceKind,
    /// Points skipped before the first emitted one. The all-zeros point of
    /// the digital sequence is always skipped on top of this.
    pub skip: u64,
}

impl QmcSequence {
    pub fn new(dimension: usize, kind: SequenceKind) -> Self {
        Self { dimension, kind, skip: 0 }
    }

    pub fn with_skip(mut self, skip: u64) -> Self {
        self.skip = skip;
        self
    }
}

/// Generates the first `n` points of the sequence as an `n x dim` matrix.
pub fn lowdiscrepancy_points(seq: &QmcSequence, n: usize) -> Result<DMatrix<f64>> {
    if seq.dimension == 0 || n == 0 {
        return Err(Error::InvalidInput("dimension and n must be >= 1".into()));
    }
    match seq.kind {
        SequenceKind::Sobol => {
            if seq.dimension > SOBOL_MAX_DIM {
                return Err(Error::DimensionUnsupported {
                    dim: seq.dimension,
                    max: SOBOL_MAX_DIM,
                });
            }
            Ok(DMatrix::from_fn(n, seq.dimension, |r, c| {
                sobol_coordinate(seq.skip + 1 + r as u64, c)
            }))
        }
        SequenceKind::Lattice => {
            if seq.dimension > LATTICE_MAX_DIM {
                return Err(Error::DimensionUnsupported {
                    dim: seq.dimension,
                    max: LATTICE_MAX_DIM,
                });
            }
            let gens: Vec<f64> =
                first_primes(seq.dimension).iter().map(|&p| (p as f64).sqrt()).collect();
            Ok(DMatrix::from_fn(n, seq.dimension, |r, c| {
                let k = (seq.skip + 1 + r as u64) as f64;
                (k * gens[c]).fract()
            }))
        }
    }
}

// ---------------------------------------------------------------------------
// Variable reordering
// ---------------------------------------------------------------------------

/// Output of the greedy variable reordering: the permutation, the Cholesky
/// factor of the permuted covariance, and the permuted centered upper bounds.
#[derive(Debug, Clone)]
pub struct Reordered {
    /// `permutation[i]` is the original index of the variable at position `i`.
    pub permutation: Vec<usize>,
    pub factor: CholeskyFactor,
    /// `upper - mean`, permuted.
    pub centered_upper: DVector<f64>,
}

/// Greedy reordering for the separation-of-variables transform: at each step
/// the variable with the smallest conditional non-exceedance probability
/// (evaluated at the truncated expectation of the previous coordinates) goes
/// first, which concentrates the integrand's variation in the leading
/// coordinates. Uses the same jitter ladder as [`crate::gauss::cholesky`].
pub fn reorder_variables(spec: &GaussianSpec, upper: &DVector<f64>) -> Result<Reordered> {
    if upper.len() != spec.dim() {
        return Err(Error::ShapeMismatch(format!(
            "upper has length {}, spec dimension is {}",
            upper.len(),
            spec.dim()
        )));
    }
    let d = spec.dim();
    let diag_scale = {
        let m = spec.cov().diagonal().iter().map(|v| v.abs()).sum::<f64>() / d as f64;
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let b0 = upper - spec.mean();
    let mut last = 0.0;
    for (k, &eps) in std::iter::once(&0.0).chain(JITTER_LADDER.iter()).enumerate() {
        let jitter = eps * diag_scale;
        last = jitter;
        let mut cov = spec.cov().clone();
        if k > 0 {
            for i in 0..d {
                cov[(i, i)] += jitter;
            }
        }
        if let Some((lower, permutation, centered_upper)) = greedy_factor(&cov, &b0, diag_scale) {
            return Ok(Reordered {
                permutation,
                factor: CholeskyFactor::from_parts(lower, jitter),
                centered_upper,
            });
        }
    }
    Err(Error::NotPositiveDefinite { max_jitter: last })
}

fn greedy_factor(
    cov: &DMatrix<f64>,
    b0: &DVector<f64>,
    diag_scale: f64,
) -> Option<(DMatrix<f64>, Vec<usize>, DVector<f64>)> {
    let d = cov.nrows();
    let floor = 1e-13 * diag_scale;
    let mut c = cov.clone();
    let mut b = b0.clone();
    let mut perm: Vec<usize> = (0..d).collect();
    let mut l = DMatrix::zeros(d, d);
    let mut y = vec![0.0f64; d];

    for i in 0..d {
        let mut best: Option<(usize, f64, f64, f64)> = None; // (j, prob, s, num)
        for j in i..d {
            let mut s2 = c[(j, j)];
            let mut num = b[j];
            for k in 0..i {
                s2 -= l[(j, k)] * l[(j, k)];
                num -= l[(j, k)] * y[k];
            }
            if s2 <= floor {
                continue;
            }
            let s = s2.sqrt();
            let prob = norm::cdf(num / s);
            if best.map_or(true, |(_, p, _, _)| prob < p) {
                best = Some((j, prob, s, num));
            }
        }
        let (j, _, s, num) = best?;
        if j != i {
            c.swap_rows(i, j);
            c.swap_columns(i, j);
            b.swap_rows(i, j);
            perm.swap(i, j);
            for k in 0..i {
                let tmp = l[(i, k)];
                l[(i, k)] = l[(j, k)];
                l[(j, k)] = tmp;
            }
        }
        l[(i, i)] = s;
        for r in (i + 1)..d {
            let mut v = c[(r, i)];
            for k in 0..i {
                v -= l[(r, k)] * l[(i, k)];
            }
            l[(r, i)] = v / s;
        }
        y[i] = norm::truncated_mean_below(num / s);
    }
    Some((l, perm, b))
}

// ---------------------------------------------------------------------------
// CDF estimator
// ---------------------------------------------------------------------------

/// QMC effort per call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QmcBudget {
    /// Lattice points per randomization.
    pub n_points: usize,
    /// Independent random shifts.
    pub n_randomizations: usize,
}

impl Default for QmcBudget {
    fn default() -> Self {
        Self { n_points: 1 << 12, n_randomizations: 12 }
    }
}

/// A randomized-QMC CDF estimate.
#[derive(Debug, Clone, Serialize)]
pub struct CdfEstimate {
    /// Estimated `P(X <= upper)`, in `[0,1]`.
    pub value: f64,
    /// Standard deviation of the randomization means over
    /// `sqrt(n_randomizations)`.
    pub std_error: f64,
    pub n_randomizations: usize,
    pub n_points: usize,
    /// Set when some marginal `P(X_i <= t_i)` underflowed to zero and the
    /// estimate was short-circuited to 0.
    pub degenerate: bool,
    /// Point-set construction used.
    pub kind: &'static str,
}

const CDF_KIND: &str = "richtmyer-lattice-tent";

/// Estimates `P(X <= upper)` for `X ~ spec` by randomized quasi-Monte Carlo.
pub fn mvn_cdf(
    spec: &GaussianSpec,
    upper: &DVector<f64>,
    budget: QmcBudget,
    rng: &mut ChaCha8Rng,
) -> Result<CdfEstimate> {
    let d = spec.dim();
    if d > Q_MAX {
        return Err(Error::DimensionUnsupported { dim: d, max: Q_MAX });
    }
    if d > Q_WARN {
        log::warn!("mvn_cdf called at dimension {d} (> {Q_WARN}); accuracy degrades");
    }
    if budget.n_points == 0 || budget.n_randomizations == 0 {
        return Err(Error::InvalidInput("QMC budget must be positive".into()));
    }

    // A marginal that already underflows forces the joint probability to 0.
    for i in 0..d {
        let var = spec.cov()[(i, i)];
        let z = if var > 0.0 {
            (upper[i] - spec.mean()[i]) / var.sqrt()
        } else if upper[i] >= spec.mean()[i] {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        if norm::cdf(z) <= 0.0 {
            return Ok(CdfEstimate {
                value: 0.0,
                std_error: 0.0,
                n_randomizations: budget.n_randomizations,
                n_points: budget.n_points,
                degenerate: true,
                kind: CDF_KIND,
            });
        }
    }

    let reordered = reorder_variables(spec, upper)?;
    let l = reordered.factor.lower();
    let b = &reordered.centered_upper;

    let e1 = norm::cdf(b[0] / l[(0, 0)]);
    if d == 1 {
        return Ok(CdfEstimate {
            value: e1,
            std_error: 0.0,
            n_randomizations: budget.n_randomizations,
            n_points: budget.n_points,
            degenerate: false,
            kind: CDF_KIND,
        });
    }

    // Row-major copy of the strictly needed triangle for cache-friendly dots.
    let mut lrow = vec![0.0f64; d * d];
    for i in 0..d {
        for k in 0..=i {
            lrow[i * d + k] = l[(i, k)];
        }
    }

    let gens: Vec<f64> = first_primes(d - 1).iter().map(|&p| (p as f64).sqrt()).collect();
    let mut means = Vec::with_capacity(budget.n_randomizations);
    let mut y = vec![0.0f64; d];
    let mut shift = vec![0.0f64; d - 1];
    for _ in 0..budget.n_randomizations {
        for s in shift.iter_mut() {
            *s = rng.gen::<f64>();
        }
        let mut acc = 0.0f64;
        for kpt in 1..=budget.n_points {
            let kf = kpt as f64;
            let mut f = e1;
            let mut prev_e = e1;
            for i in 1..d {
                let u = (kf * gens[i - 1] + shift[i - 1]).fract();
                let w = (2.0 * u - 1.0).abs();
                let p = (w * prev_e).clamp(1e-300, 1.0 - 1e-16);
                y[i - 1] = norm::quantile(p);
                let row = &lrow[i * d..i * d + i];
                let mut num = b[i];
                for (k, &lv) in row.iter().enumerate() {
                    num -= lv * y[k];
                }
                let e = norm::cdf(num / lrow[i * d + i]);
                f *= e;
                if f <= 0.0 {
                    f = 0.0;
                    break;
                }
                prev_e = e;
            }
            acc += f;
        }
        means.push(acc / budget.n_points as f64);
    }

    let r = means.len() as f64;
    let value = (means.iter().sum::<f64>() / r).clamp(0.0, 1.0);
    let std_error = if means.len() > 1 {
        let v = means.iter().map(|m| (m - value) * (m - value)).sum::<f64>() / (r - 1.0);
        (v / r).sqrt()
    } else {
        0.0
    };
    Ok(CdfEstimate {
        value,
        std_error,
        n_randomizations: budget.n_randomizations,
        n_points: budget.n_points,
        degenerate: false,
        kind: CDF_KIND,
    })
}
