//! Self-check suite behind `edgesense validate`.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::config::{ExperimentConfig, Policy};
use super::trial::{estimate_error, TrialContext};
use super::HarnessError;
use crate::channel::{avg_packet_loss_approx, avg_packet_loss_exact, ChannelConfig};
use crate::gmm::{semi_analytic_error, sensing_error_bound, InferenceModel};
use crate::numerics::poisson_binomial_pmf;
use crate::optimizer::{gradient_ascent, OptimizerSettings, TradeoffParams};
use crate::quant::{decode, encode, noise_variance, QuantizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: String,
    pub expected: String,
}

impl Check {
    fn new(name: &str, passed: bool, measured: String, expected: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            measured,
            expected: expected.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "validation (seed {})", self.seed)?;
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "[{tag}] {:<28} measured {} | expected {}",
                c.name, c.measured, c.expected
            )?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Sample moments of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Moments {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for v in samples {
            let c = v - mean;
            let c2 = c * c;
            m2 += c2;
            m3 += c2 * c;
            m4 += c2 * c2;
        }
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        Self {
            mean,
            variance: m2,
            skewness: m3 / m2.powf(1.5),
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
        }
    }
}

/// `Σ_ij = ρ^|i−j|`.
pub fn ar1_covariance(dim: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| rho.powi(i.abs_diff(j) as i32))
}

/// Per-coordinate moments of `x̂ − x` for `samples` draws of `x ~ N(0, Σ)`
/// pushed through `quantizer`.
pub fn distortion_moments<R: Rng + ?Sized>(
    quantizer: &QuantizerConfig,
    sigma: &DMatrix<f64>,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<Moments>, HarnessError> {
    let d = quantizer.dim();
    let chol = Cholesky::new(sigma.clone()).ok_or_else(|| HarnessError::Config("covariance is not SPD".into()))?;
    let lower = chol.l();
    let mut columns = vec![Vec::with_capacity(samples); d];
    for _ in 0..samples {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &lower * z;
        let xh = decode(&encode(&x, quantizer)?.values, quantizer)?;
        for (col, e) in columns.iter_mut().zip((xh - x).iter()) {
            col.push(*e);
        }
    }
    Ok(columns.iter().map(|c| Moments::of(c)).collect())
}

/// Distortion is zero-mean Gaussian-like with variance `predicted`: every
/// coordinate within 10% in variance, `|skew| ≤ 0.1`, `|excess kurtosis| ≤ 0.2`.
pub fn lemma1_check(moments: &[Moments], predicted: f64) -> Check {
    let worst_var = moments
        .iter()
        .map(|m| (m.variance - predicted).abs() / predicted)
        .fold(0.0, f64::max);
    let worst_skew = moments.iter().map(|m| m.skewness.abs()).fold(0.0, f64::max);
    let worst_kurt = moments.iter().map(|m| m.excess_kurtosis.abs()).fold(0.0, f64::max);
    Check::new(
        "lemma1-noise",
        worst_var <= 0.1 && worst_skew <= 0.1 && worst_kurt <= 0.2,
        format!("var dev {worst_var:.4}, |skew| {worst_skew:.4}, |kurt| {worst_kurt:.4}"),
        format!("var {predicted:.5} ±10%, |skew| ≤ 0.1, |kurt| ≤ 0.2"),
    )
}

fn random_spd<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.1
}

fn check_gain() -> Result<Check, HarnessError> {
    let d0 = ExperimentConfig::default().build_model()?.discriminant_gain();
    Ok(Check::new(
        "discriminant-gain",
        (d0 - 1.0).abs() <= 1e-12,
        format!("{d0:.15}"),
        "1.0 ± 1e-12",
    ))
}

fn check_reduction_bounds(rng: &mut ChaCha8Rng) -> Result<Check, HarnessError> {
    let mut violations = 0;
    let mut cases = 0;
    for _ in 0..100 {
        let d = rng.random_range(2..=20);
        let sigma = random_spd(d, rng);
        let mu1 = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let model = InferenceModel::new(mu1, DVector::zeros(d), sigma)?;
        let d0 = model.discriminant_gain();
        for k in -8..=4 {
            let s = 10f64.powf(f64::from(k) / 2.0);
            let rel = (d0 - model.effective_discriminant_gain(s)) / d0;
            let b = model.dg_reduction_bounds(s);
            cases += 1;
            if rel < b.lower * (1.0 - 1e-12) || rel > b.upper * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    Ok(Check::new(
        "gain-reduction-bounds",
        violations == 0,
        format!("{violations} violations in {cases} cases"),
        "0 violations",
    ))
}

fn check_reduction_decay() -> Result<Check, HarnessError> {
    let model = InferenceModel::new(
        DVector::from_element(20, 0.2),
        DVector::zeros(20),
        ar1_covariance(20, 0.5),
    )?;
    let d0 = model.discriminant_gain();
    let rel = |bits: u32| (d0 - model.effective_discriminant_gain(noise_variance(bits, 5.0))) / d0;
    let ratios: Vec<f64> = (4..12).map(|r| rel(r + 1) / rel(r)).collect();
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, 0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    Ok(Check::new(
        "gain-reduction-decay",
        lo >= 0.2 && hi <= 0.3,
        format!("per-bit ratio in [{lo:.4}, {hi:.4}]"),
        "≈ 1/4 per bit, within [0.2, 0.3]",
    ))
}

fn check_lemma1(seed: u64) -> Result<Check, HarnessError> {
    let sigma = ar1_covariance(50, 0.3);
    let q = QuantizerConfig::with_klt(5.0, 4, &sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let moments = distortion_moments(&q, &sigma, 100_000, &mut rng)?;
    Ok(lemma1_check(&moments, noise_variance(4, 5.0)))
}

fn check_bound_order() -> Result<Check, HarnessError> {
    let mut worst = f64::INFINITY;
    for gi in 0..12 {
        let gain = 0.05 * 1.6f64.powi(gi);
        for ei in 0..=10 {
            let eps = f64::from(ei) / 10.0 * 0.999;
            for k in [1u32, 2, 5, 10, 20, 40] {
                let bound = sensing_error_bound(gain, eps, k);
                let exact = semi_analytic_error(gain, &vec![eps; k as usize])?;
                worst = worst.min(bound - exact);
            }
        }
    }
    Ok(Check::new(
        "bound-dominates-exact",
        worst >= -1e-12,
        format!("min(bound − exact) = {worst:.3e}"),
        "≥ 0",
    ))
}

fn check_monte_carlo(seed: u64) -> Result<Check, HarnessError> {
    let cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    let params = cfg.build_params()?;
    let decision = cfg.decide(Policy::Adaptive, &params)?;
    let ctx = TrialContext::new(&params, &decision, cfg.noise_model)?;
    let est = estimate_error(&ctx, cfg.trials, seed)?;
    let p = decision.predicted_exact;
    let band = 3.0 * (p * (1.0 - p) / cfg.trials as f64).sqrt();
    Ok(Check::new(
        "monte-carlo-vs-exact",
        (est.error - p).abs() <= band && decision.predicted_bound >= p,
        format!(
            "MC {:.4} at {} bits, exact {p:.4}, bound {:.4}",
            est.error, decision.bits_per_feature, decision.predicted_bound
        ),
        format!("|MC − exact| ≤ {band:.4}, bound ≥ exact"),
    ))
}

fn check_gap_scaling() -> Result<Check, HarnessError> {
    let c100 = ChannelConfig::from_db(4, 1.0, 100)?;
    let c200 = ChannelConfig::from_db(4, 1.0, 200)?;
    let mut ratios = Vec::new();
    for rate in [1.0, 1.5, 2.0] {
        let approx = avg_packet_loss_approx(&c100, rate);
        let g100 = avg_packet_loss_exact(&c100, rate)? - approx;
        let g200 = avg_packet_loss_exact(&c200, rate)? - approx;
        ratios.push(g100 / g200);
    }
    Ok(Check::new(
        "approximation-gap-1/N",
        ratios.iter().all(|r| (1.5..=3.0).contains(r)),
        format!("{ratios:.3?}"),
        "each in [1.5, 3.0]",
    ))
}

fn max_second_difference(values: &[f64]) -> f64 {
    values
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

fn concavity_sets() -> Result<Vec<TradeoffParams>, HarnessError> {
    let mut sets = Vec::new();
    for (l, db) in [(4, 1.0), (2, 1.0), (4, 2.0), (1, 5.0), (8, -2.0)] {
        let model = InferenceModel::symmetric_isotropic(50, 0.1)?;
        sets.push(TradeoffParams::new(
            model,
            5.0,
            ChannelConfig::from_db(l, db, 100)?,
            20,
        )?);
    }
    Ok(sets)
}

fn rate_grid(p: &TradeoffParams, n: usize) -> Vec<f64> {
    let (lo, hi) = (p.min_rate(), p.max_rate());
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn check_concavity() -> Result<Vec<Check>, HarnessError> {
    let sets = concavity_sets()?;
    let (mut phi, mut success, mut gain) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &sets {
        let grid = rate_grid(p, 2000);
        let v: Vec<f64> = grid.iter().map(|&r| p.surrogate(r)).collect::<Result<_, _>>()?;
        phi = phi.max(max_second_difference(&v));
        let v: Vec<f64> = grid.iter().map(|&r| (-p.loss_approx(r)).ln_1p()).collect();
        success = success.max(max_second_difference(&v));
        let lambda_min = p.model().eigenvalues().min();
        let v: Vec<f64> = grid
            .iter()
            .filter(|&&r| p.sigma_q2_of_rate(r) <= lambda_min)
            .map(|&r| p.gain_at_rate(r))
            .collect();
        gain = gain.max(max_second_difference(&v));
    }
    let check = |name: &str, worst: f64| Check::new(name, worst <= 1e-9, format!("max Δ² = {worst:.3e}"), "≤ 1e-9");
    Ok(vec![
        check("surrogate-concavity", phi),
        check("log-success-concavity", success),
        check("gain-concavity-fine-quant", gain),
    ])
}

fn check_poisson_binomial(rng: &mut ChaCha8Rng) -> Result<Check, HarnessError> {
    let mut worst = 0f64;
    for k in 1..=12usize {
        let probs: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let pmf = poisson_binomial_pmf(&probs)?;
        let mut brute = vec![0.0; k + 1];
        for mask in 0u32..(1 << k) {
            let mut w = 1.0;
            for (i, p) in probs.iter().enumerate() {
                w *= if mask >> i & 1 == 1 { *p } else { 1.0 - p };
            }
            brute[mask.count_ones() as usize] += w;
        }
        for (m, b) in brute.iter().enumerate() {
            worst = worst.max((pmf.get(m) - b).abs());
        }
    }
    Ok(Check::new(
        "poisson-binomial-dp",
        worst <= 1e-12,
        format!("max |DP − enumeration| = {worst:.2e}"),
        "≤ 1e-12",
    ))
}

fn check_ascent() -> Result<Check, HarnessError> {
    let model = InferenceModel::symmetric_isotropic(50, 0.1)?;
    let p = TradeoffParams::new(model, 5.0, ChannelConfig::from_db(4, 2.0, 100)?, 20)?;
    let out = gradient_ascent(&p, &OptimizerSettings::default())?;
    let grid = rate_grid(&p, 4001);
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &r in &grid {
        let v = p.surrogate_exact(r)?;
        if v > best.0 {
            best = (v, r);
        }
    }
    let dev = (out.rate - best.1).abs() / best.1;
    Ok(Check::new(
        "ascent-vs-exact-optimum",
        dev <= 0.01,
        format!(
            "ascent {:.4} in {} steps, exact {:.4}, deviation {:.3}%",
            out.rate,
            out.iterations,
            best.1,
            100.0 * dev
        ),
        "deviation ≤ 1%",
    ))
}

/// Run every self-check. Failing checks are reported, not returned as errors.
pub fn validate(seed: u64) -> Result<ValidationReport, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = vec![
        check_gain()?,
        check_reduction_bounds(&mut rng)?,
        check_reduction_decay()?,
        check_lemma1(seed)?,
        check_bound_order()?,
        check_monte_carlo(seed)?,
        check_gap_scaling()?,
    ];
    checks.extend(check_concavity()?);
    checks.push(check_poisson_binomial(&mut rng)?);
    checks.push(check_ascent()?);
    Ok(ValidationReport { seed, checks })
}
