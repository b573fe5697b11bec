//! Special functions, discrete distributions and quadrature shared by the
//! rest of the crate.
//!
//! Everything here is pure. The incomplete gamma routines are restricted to
//! integer shape, which is all the antenna-diversity model needs, and are
//! exposed in both linear and log form so that callers can stay in log space
//! when the tails get small.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("incomplete gamma shape must be a positive integer, got {0}")]
    ZeroShape(u32),
    #[error("incomplete gamma argument must be finite and nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("probability {value} at index {index} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("empty probability sequence")]
    Empty,
    #[error("quadrature did not converge: estimate {estimate}, error {error} after {intervals} intervals")]
    QuadratureDiverged {
        estimate: f64,
        error: f64,
        intervals: usize,
    },
}

/// Standard normal upper tail, `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

fn ln_factorial(k: u32) -> f64 {
    libm::lgamma(f64::from(k) + 1.0)
}

/// `ln Γ(L)` for integer shape.
pub fn ln_gamma_int(shape: u32) -> f64 {
    libm::lgamma(f64::from(shape))
}

fn check_gamma_args(shape: u32, x: f64) -> Result<(), NumericsError> {
    if shape == 0 {
        return Err(NumericsError::ZeroShape(shape));
    }
    if !(x >= 0.0) {
        return Err(NumericsError::NegativeArgument(x));
    }
    Ok(())
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `ln Q(L, x)` where `Q(L, x) = Γ(L, x)/Γ(L) = e^{-x} Σ_{k<L} x^k/k!`.
///
/// Evaluated with a log-sum-exp over the finite sum so it stays finite for
/// arguments where `e^{-x}` alone would underflow.
pub fn ln_regularized_upper_gamma(shape: u32, x: f64) -> Result<f64, NumericsError> {
    check_gamma_args(shape, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::NEG_INFINITY);
    }
    let ln_x = x.ln();
    let terms: Vec<f64> = (0..shape).map(|k| -x + f64::from(k) * ln_x - ln_factorial(k)).collect();
    Ok(log_sum_exp(&terms).min(0.0))
}

/// Regularized upper incomplete gamma `Γ(L, x)/Γ(L)` for integer `L ≥ 1`.
pub fn regularized_upper_gamma(shape: u32, x: f64) -> Result<f64, NumericsError> {
    ln_regularized_upper_gamma(shape, x).map(f64::exp)
}

/// Regularized lower incomplete gamma `P(L, x) = 1 − Q(L, x)`.
///
/// Below `x < L + 1` the tail series `e^{-x} Σ_{k≥L} x^k/k!` is summed
/// directly so tiny values keep full relative precision.
pub fn regularized_lower_gamma(shape: u32, x: f64) -> Result<f64, NumericsError> {
    check_gamma_args(shape, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x >= f64::from(shape) + 1.0 {
        return Ok(1.0 - regularized_upper_gamma(shape, x)?);
    }
    // Leading term x^L e^{-x} / L!, then ratios x/(L+j).
    let lead = (-x + f64::from(shape) * x.ln() - ln_factorial(shape)).exp();
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = f64::from(shape);
    for _ in 0..10_000 {
        k += 1.0;
        term *= x / k;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    Ok((lead * sum).min(1.0))
}

/// Probability mass function over `0..=K`, entries in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, m: usize) -> f64 {
        self.0.get(m).copied().unwrap_or(0.0)
    }

    /// Largest index, i.e. `K`.
    pub fn support_max(&self) -> usize {
        self.0.len() - 1
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().copied().enumerate()
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(m, p)| m as f64 * p).sum()
    }
}

/// Distribution of the number of successes among independent Bernoulli
/// trials with the given success probabilities.
///
/// Runs the standard O(K²) convolution: after processing trial `k` the
/// buffer holds `Pr(successes among the first k = m)`.
pub fn poisson_binomial_pmf(success_probs: &[f64]) -> Result<ProbabilityVector, NumericsError> {
    if success_probs.is_empty() {
        return Err(NumericsError::Empty);
    }
    for (index, &value) in success_probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(NumericsError::InvalidProbability { index, value });
        }
    }
    let mut pmf = vec![0.0; success_probs.len() + 1];
    pmf[0] = 1.0;
    for (k, &p) in success_probs.iter().enumerate() {
        let q = 1.0 - p;
        for m in (1..=k + 1).rev() {
            pmf[m] = pmf[m] * q + pmf[m - 1] * p;
        }
        pmf[0] *= q;
    }
    Ok(ProbabilityVector(pmf))
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for (j, &node) in GK_NODES[..7].iter().enumerate() {
        let dx = half * node;
        let pair = f(center - dx) + f(center + dx);
        kronrod += KRONROD_WEIGHTS[j] * pair;
        if j % 2 == 1 {
            gauss += GAUSS_WEIGHTS[j / 2] * pair;
        }
    }
    Panel {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Result of an adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

/// Globally adaptive Gauss–Kronrod integration of `f` over the panels
/// delimited by `breakpoints` (sorted, at least two entries).
///
/// Panels are bisected in order of largest error estimate until the summed
/// estimate drops below `abs_tol`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    breakpoints: &[f64],
    abs_tol: f64,
) -> Result<Quadrature, NumericsError> {
    const MAX_PANELS: usize = 4000;
    let mut heap: BinaryHeap<Panel> = breakpoints
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gauss_kronrod(&f, w[0], w[1]))
        .collect();
    loop {
        let value: f64 = heap.iter().map(|p| p.value).sum();
        let error: f64 = heap.iter().map(|p| p.error).sum();
        if error <= abs_tol {
            return Ok(Quadrature { value, error });
        }
        if heap.len() >= MAX_PANELS {
            return Err(NumericsError::QuadratureDiverged {
                estimate: value,
                error,
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("nonempty panel set");
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(gauss_kronrod(&f, worst.a, mid));
        heap.push(gauss_kronrod(&f, mid, worst.b));
    }
}
