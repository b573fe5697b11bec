//! Coding-rate selection.
//!
//! At a fixed blocklength `N` the coding rate `R_c` fixes the bits per
//! feature `R = N·R_c/d`. Raising it sharpens features (larger effective
//! gain `D(R_c)`) and raises the average packet loss `ε̄(R_c)`. The sensing
//! error bound `(e^{-D/4} + (1 − e^{-D/4})ε̄)^K` equals `(1 − e^{φ})^K` with
//!
//! ```text
//! φ(R_c) = ln(1 − e^{−D(R_c)/4}) + ln(1 − ε̄(R_c))
//! ```
//!
//! so minimizing the bound is maximizing the concave surrogate `φ`, which is
//! done here by gradient ascent on its closed-form derivative and then
//! rounded to an integer bit budget.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    avg_packet_loss_approx, avg_packet_loss_exact, ln_avg_success_approx, ChannelConfig, ChannelError,
};
use crate::gmm::{semi_analytic_error, sensing_error_bound, InferenceModel};
use crate::numerics::{ln_gamma_int, ln_regularized_upper_gamma, NumericsError};
use crate::quant::{noise_variance, MAX_BITS};

/// Upper end of the rate domain: where the closed-form loss reaches `1 − 1e-9`.
pub const MAX_RATE_SUCCESS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("rate {rate} is below the one-bit floor {min}")]
    BelowDomain { rate: f64, min: f64 },
    #[error("gradient ascent stopped after {iterations} iterations at rate {rate} with |gradient| {gradient:e}")]
    NotConverged {
        rate: f64,
        gradient: f64,
        iterations: usize,
    },
    #[error("invalid optimizer settings: {0}")]
    Settings(&'static str),
    #[error("invalid tradeoff parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Everything the rate optimizer needs about the sensing task and the link.
#[derive(Debug, Clone)]
pub struct TradeoffParams {
    model: InferenceModel,
    clip: f64,
    channel: ChannelConfig,
    observations: u32,
    max_blocklength: u32,
    max_rate: f64,
}

impl TradeoffParams {
    /// Parameters with `N_max` equal to the channel blocklength.
    pub fn new(
        model: InferenceModel,
        clip: f64,
        channel: ChannelConfig,
        observations: u32,
    ) -> Result<Self, OptimizerError> {
        Self::with_max_blocklength(model, clip, channel, observations, channel.blocklength())
    }

    pub fn with_max_blocklength(
        model: InferenceModel,
        clip: f64,
        channel: ChannelConfig,
        observations: u32,
        max_blocklength: u32,
    ) -> Result<Self, OptimizerError> {
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(OptimizerError::Params(format!("clip must be positive, got {clip}")));
        }
        if observations == 0 {
            return Err(OptimizerError::Params("observations must be at least 1".into()));
        }
        if channel.blocklength() > max_blocklength {
            return Err(OptimizerError::Params(format!(
                "blocklength {} exceeds N_max {max_blocklength}",
                channel.blocklength()
            )));
        }
        let max_rate = solve_max_rate(&channel);
        Ok(Self {
            model,
            clip,
            channel,
            observations,
            max_blocklength,
            max_rate,
        })
    }

    pub fn model(&self) -> &InferenceModel {
        &self.model
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn channel(&self) -> &ChannelConfig {
        &self.channel
    }

    pub fn observations(&self) -> u32 {
        self.observations
    }

    pub fn max_blocklength(&self) -> u32 {
        self.max_blocklength
    }

    fn n(&self) -> f64 {
        f64::from(self.channel.blocklength())
    }

    fn d(&self) -> f64 {
        self.dim() as f64
    }

    /// Rate of one bit per feature, `d/N`.
    pub fn min_rate(&self) -> f64 {
        self.d() / self.n()
    }

    /// Rate where the closed-form loss reaches `1 − 1e-9`.
    pub fn max_rate(&self) -> f64 {
        self.max_rate.max(self.min_rate())
    }

    /// Continuous bits per feature carried at `rate`.
    pub fn bits_at_rate(&self, rate: f64) -> f64 {
        self.n() * rate / self.d()
    }

    /// Coding rate of an integer bit budget at `N_max`.
    pub fn rate_for_bits(&self, bits: u32) -> f64 {
        f64::from(bits) * self.d() / f64::from(self.max_blocklength)
    }

    pub fn sigma_q2_of_rate(&self, rate: f64) -> f64 {
        let u = (self.bits_at_rate(rate) * LN_2).exp_m1();
        self.clip * self.clip / (3.0 * u * u)
    }

    /// `D(R_c)`.
    pub fn gain_at_rate(&self, rate: f64) -> f64 {
        self.model.effective_discriminant_gain(self.sigma_q2_of_rate(rate))
    }

    pub fn gain_at_bits(&self, bits: u32) -> f64 {
        self.model.effective_discriminant_gain(noise_variance(bits, self.clip))
    }

    pub fn loss_approx(&self, rate: f64) -> f64 {
        avg_packet_loss_approx(&self.channel, rate)
    }

    pub fn loss_exact(&self, rate: f64) -> Result<f64, OptimizerError> {
        Ok(avg_packet_loss_exact(&self.channel, rate)?)
    }

    fn check_domain(&self, rate: f64) -> Result<(), OptimizerError> {
        let min = self.min_rate();
        if !(rate >= min * (1.0 - 1e-12)) {
            return Err(OptimizerError::BelowDomain { rate, min });
        }
        Ok(())
    }

    /// `φ(R_c)`; `−∞` once either factor underflows.
    pub fn surrogate(&self, rate: f64) -> Result<f64, OptimizerError> {
        self.check_domain(rate)?;
        Ok(self.source_term(rate) + ln_avg_success_approx(&self.channel, rate))
    }

    /// Surrogate built on the quadrature loss instead of the closed form.
    pub fn surrogate_exact(&self, rate: f64) -> Result<f64, OptimizerError> {
        self.check_domain(rate)?;
        let loss = self.loss_exact(rate)?;
        Ok(self.source_term(rate) + (-loss).ln_1p())
    }

    /// `ln(1 − e^{−D/4})`.
    pub fn source_term(&self, rate: f64) -> f64 {
        (-(-self.gain_at_rate(rate) / 4.0).exp_m1()).ln()
    }

    /// Closed-form derivative of the source term.
    pub fn source_gradient(&self, rate: f64) -> f64 {
        let bits = self.bits_at_rate(rate);
        let u = (bits * LN_2).exp_m1();
        let sigma_q2 = self.clip * self.clip / (3.0 * u * u);
        let gain = self.model.effective_discriminant_gain(sigma_q2);
        let norm2 = self.model.whitened_delta_norm2(sigma_q2);
        // D' = N U² 2^R ln2 ‖(Σ+σ²I)⁻¹δ‖² / (3 (2^R−1)³ d), in log form.
        let ln_gain_slope = self.n().ln() + 2.0 * self.clip.ln() + bits * LN_2 + LN_2.ln() + norm2.ln()
            - 3f64.ln()
            - 3.0 * u.ln()
            - self.d().ln();
        ln_gain_slope.exp() / (4.0 * (gain / 4.0).exp_m1())
    }

    /// Closed-form derivative of `ln(1 − ε̄)`, evaluated in log space.
    pub fn channel_gradient(&self, rate: f64) -> f64 {
        let l = self.channel.antennas();
        let snr = self.channel.snr_linear();
        let beta = self.channel.outage_threshold(rate);
        let ln_upper = ln_gamma_int(l) + ln_regularized_upper_gamma(l, beta).expect("valid Erlang arguments");
        let mut ln_mag = rate * LN_2 + LN_2.ln() - beta - snr.ln() - ln_upper;
        if l > 1 {
            // (2^{R_c}−1)^{L−1}/γ₀^{L−1} = β^{L−1}
            ln_mag += f64::from(l - 1) * beta.ln();
        }
        -ln_mag.exp()
    }

    /// `φ′(R_c)`.
    pub fn surrogate_gradient(&self, rate: f64) -> Result<f64, OptimizerError> {
        self.check_domain(rate)?;
        Ok(self.source_gradient(rate) + self.channel_gradient(rate))
    }

    /// Analytic upper bound on the sensing error at an integer budget.
    pub fn bound_at_bits(&self, bits: u32) -> f64 {
        sensing_error_bound(
            self.gain_at_bits(bits),
            self.loss_approx(self.rate_for_bits(bits)),
            self.observations,
        )
    }

    /// Exact sensing error at an integer budget, with the quadrature loss.
    pub fn exact_error_at_bits(&self, bits: u32) -> Result<f64, OptimizerError> {
        let loss = self.loss_exact(self.rate_for_bits(bits))?;
        Ok(semi_analytic_error(
            self.gain_at_bits(bits),
            &vec![loss; self.observations as usize],
        )?)
    }

    /// Largest bit budget worth scanning: the first level whose closed-form
    /// loss exceeds 0.999.
    pub fn max_scan_bits(&self) -> u32 {
        (1..=MAX_BITS)
            .find(|&b| self.loss_approx(self.rate_for_bits(b)) > 0.999)
            .unwrap_or(MAX_BITS)
    }
}

fn solve_max_rate(channel: &ChannelConfig) -> f64 {
    let target = MAX_RATE_SUCCESS.ln();
    let ln_success = |r: f64| ln_avg_success_approx(channel, r);
    let mut hi = 1.0;
    while ln_success(hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ln_success(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub step: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Starting rate; `None` starts from the 4-bit level.
    pub init_rate: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            step: 0.01,
            grad_tol: 1e-6,
            max_iters: 200_000,
            init_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentOutcome {
    pub rate: f64,
    pub gradient: f64,
    pub iterations: usize,
    /// Every iterate, starting with the initial rate.
    pub trace: Vec<f64>,
}

/// Projected gradient ascent `R_c ← clamp(R_c + η φ′(R_c))` on
/// `[d/N, R_hi]`.
///
/// Stops when `|φ′| ≤ grad_tol`, or when the iterate sits on a bound with
/// the gradient pointing outward.
pub fn gradient_ascent(params: &TradeoffParams, settings: &OptimizerSettings) -> Result<AscentOutcome, OptimizerError> {
    if !(settings.step > 0.0) {
        return Err(OptimizerError::Settings("step must be positive"));
    }
    if !(settings.grad_tol > 0.0) {
        return Err(OptimizerError::Settings("grad_tol must be positive"));
    }
    let lo = params.min_rate();
    let hi = params.max_rate();
    let mut rate = settings
        .init_rate
        .unwrap_or_else(|| params.rate_for_bits(4))
        .clamp(lo, hi);
    let mut trace = vec![rate];
    let mut gradient = params.surrogate_gradient(rate)?;
    for iterations in 0..=settings.max_iters {
        let pinned = (rate <= lo && gradient < 0.0) || (rate >= hi && gradient > 0.0);
        if gradient.abs() <= settings.grad_tol || pinned {
            return Ok(AscentOutcome {
                rate,
                gradient,
                iterations,
                trace,
            });
        }
        if iterations == settings.max_iters {
            break;
        }
        rate = (rate + settings.step * gradient).clamp(lo, hi);
        trace.push(rate);
        gradient = params.surrogate_gradient(rate)?;
    }
    Err(OptimizerError::NotConverged {
        rate,
        gradient: gradient.abs(),
        iterations: settings.max_iters,
    })
}

/// An integer bit budget together with the errors it is predicted to give.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateDecision {
    pub continuous_rate: f64,
    pub bits_per_feature: u32,
    pub rounded_rate: f64,
    pub predicted_bound: f64,
    pub predicted_exact: f64,
}

fn decision(params: &TradeoffParams, continuous_rate: f64, bits: u32) -> Result<RateDecision, OptimizerError> {
    Ok(RateDecision {
        continuous_rate,
        bits_per_feature: bits,
        rounded_rate: params.rate_for_bits(bits),
        predicted_bound: params.bound_at_bits(bits),
        predicted_exact: params.exact_error_at_bits(bits)?,
    })
}

/// `max(⌊R_c·N_max/d⌉, 1)` with ties rounded up.
pub fn round_bits(continuous_rate: f64, params: &TradeoffParams) -> u32 {
    let x = continuous_rate * f64::from(params.max_blocklength) / params.d();
    ((x + 0.5).floor().max(1.0) as u32).min(MAX_BITS)
}

pub fn round_rate(continuous_rate: f64, params: &TradeoffParams) -> Result<RateDecision, OptimizerError> {
    if !(continuous_rate > 0.0) {
        return Err(OptimizerError::Params(format!(
            "rate must be positive, got {continuous_rate}"
        )));
    }
    decision(params, continuous_rate, round_bits(continuous_rate, params))
}

/// Gradient ascent followed by rounding: the adaptive policy.
pub fn adaptive_rate(params: &TradeoffParams, settings: &OptimizerSettings) -> Result<RateDecision, OptimizerError> {
    let outcome = gradient_ascent(params, settings)?;
    round_rate(outcome.rate, params)
}

/// Error of every integer budget `1..=max_scan_bits`.
pub fn scan_bits<F>(params: &TradeoffParams, mut evaluator: F) -> Result<Vec<(u32, f64)>, OptimizerError>
where
    F: FnMut(u32) -> Result<f64, OptimizerError>,
{
    (1..=params.max_scan_bits()).map(|b| Ok((b, evaluator(b)?))).collect()
}

/// Exhaustive search over integer budgets; ties go to fewer bits.
pub fn brute_force_rate<F>(params: &TradeoffParams, evaluator: F) -> Result<RateDecision, OptimizerError>
where
    F: FnMut(u32) -> Result<f64, OptimizerError>,
{
    let scan = scan_bits(params, evaluator)?;
    let (best, _) = scan.iter().copied().fold(
        (1, f64::INFINITY),
        |(bb, be), (b, e)| if e < be { (b, e) } else { (bb, be) },
    );
    decision(params, params.rate_for_bits(best), best)
}

/// Brute force on the exact semi-analytic error.
pub fn brute_force_exact(params: &TradeoffParams) -> Result<RateDecision, OptimizerError> {
    brute_force_rate(params, |b| params.exact_error_at_bits(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrllcDecision {
    pub decision: RateDecision,
    /// False when even one bit per feature violates the threshold.
    pub threshold_met: bool,
}

/// Largest integer budget whose average closed-form loss stays below
/// `threshold`.
pub fn urllc_rate(params: &TradeoffParams, threshold: f64) -> Result<UrllcDecision, OptimizerError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(OptimizerError::Params(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    let mut hi = 1.0;
    while params.loss_approx(hi) <= threshold {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if params.loss_approx(mid) <= threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let per_bit = params.rate_for_bits(1);
    let mut bits = ((lo / per_bit).floor().min(f64::from(MAX_BITS))) as u32;
    while bits >= 1 && params.loss_approx(params.rate_for_bits(bits)) > threshold {
        bits -= 1;
    }
    let threshold_met = bits >= 1;
    Ok(UrllcDecision {
        decision: decision(params, lo, bits.max(1))?,
        threshold_met,
    })
}

pub fn fixed_bits_rate(bits: u32, params: &TradeoffParams) -> Result<RateDecision, OptimizerError> {
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(OptimizerError::Params(format!(
            "bits must be in 1..={MAX_BITS}, got {bits}"
        )));
    }
    decision(params, params.rate_for_bits(bits), bits)
}

/// Log-accuracy fitted to a CNN classifier, `ln a(R) = −10 R^{−3} − 0.2`.
pub fn fitted_log_accuracy(bits: f64) -> f64 {
    -10.0 / bits.powi(3) - 0.2
}

/// `ln a(N R_c/d) + ln(1 − ε̄(R_c))` for an arbitrary accuracy model.
pub fn empirical_accuracy_surrogate<F: Fn(f64) -> f64>(rate: f64, log_accuracy: F, params: &TradeoffParams) -> f64 {
    log_accuracy(params.bits_at_rate(rate)) + ln_avg_success_approx(params.channel(), rate)
}

/// Golden-section maximization of [`empirical_accuracy_surrogate`] over
/// `(0, R_hi]`.
pub fn maximize_empirical_surrogate<F: Fn(f64) -> f64>(log_accuracy: F, params: &TradeoffParams) -> f64 {
    let f = |r: f64| empirical_accuracy_surrogate(r, &log_accuracy, params);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (params.min_rate() * 1e-6, params.max_rate());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 * b.abs().max(1.0) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
