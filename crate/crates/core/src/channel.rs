//! Packet-level model of short-packet transmission over i.i.d. Rayleigh
//! block fading with `L`-branch maximal ratio combining.
//!
//! Each slot's post-combining SNR is `γ₀·Σ|h_l|²`, Erlang with shape `L`
//! and scale `γ₀`. Decoding failure at a given SNR follows the
//! finite-blocklength normal approximation; the slot outcome is a Bernoulli
//! draw at that probability.

use std::f64::consts::{LN_2, LOG2_E};

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    integrate_adaptive, ln_regularized_upper_gamma, q_function, regularized_lower_gamma, regularized_upper_gamma,
    NumericsError,
};

/// Erlang tail mass left outside the quadrature range.
pub const TAIL_MASS: f64 = 1e-10;
/// Target absolute error of the averaged loss integral.
pub const QUADRATURE_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("antenna count must be at least 1")]
    Antennas,
    #[error("transmit SNR must be positive and finite, got {0}")]
    Snr(f64),
    #[error("blocklength must be at least 1")]
    Blocklength,
    #[error("coding rate must be positive, got {0}")]
    Rate(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    antennas: u32,
    snr_linear: f64,
    blocklength: u32,
}

impl ChannelConfig {
    pub fn new(antennas: u32, snr_linear: f64, blocklength: u32) -> Result<Self, ChannelError> {
        if antennas == 0 {
            return Err(ChannelError::Antennas);
        }
        if !(snr_linear > 0.0 && snr_linear.is_finite()) {
            return Err(ChannelError::Snr(snr_linear));
        }
        if blocklength == 0 {
            return Err(ChannelError::Blocklength);
        }
        Ok(Self {
            antennas,
            snr_linear,
            blocklength,
        })
    }

    pub fn from_db(antennas: u32, snr_db: f64, blocklength: u32) -> Result<Self, ChannelError> {
        Self::new(antennas, snr_from_db(snr_db), blocklength)
    }

    pub fn antennas(&self) -> u32 {
        self.antennas
    }

    pub fn snr_linear(&self) -> f64 {
        self.snr_linear
    }

    pub fn blocklength(&self) -> u32 {
        self.blocklength
    }

    /// SNR at which the capacity equals `rate`, normalized by `γ₀`.
    pub fn outage_threshold(&self, rate: f64) -> f64 {
        (rate * LN_2).exp_m1() / self.snr_linear
    }
}

pub fn snr_from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Post-MRC SNR of one slot.
pub fn sample_post_mrc_snr<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> f64 {
    let gain: f64 = (0..cfg.antennas).map(|_| rng.sample::<f64, _>(Exp1)).sum();
    cfg.snr_linear * gain
}

/// CDF of the post-MRC SNR.
pub fn post_mrc_snr_cdf(cfg: &ChannelConfig, snr: f64) -> f64 {
    if snr <= 0.0 {
        return 0.0;
    }
    regularized_lower_gamma(cfg.antennas, snr / cfg.snr_linear).expect("valid Erlang arguments")
}

pub fn capacity(snr: f64) -> f64 {
    snr.ln_1p() * LOG2_E
}

pub fn dispersion(snr: f64) -> f64 {
    snr * (2.0 + snr) / (1.0 + snr).powi(2) * LOG2_E * LOG2_E
}

/// Normal-approximation decoding error of an `N`-symbol packet at rate
/// `rate` bits per channel use. Zero SNR is treated as certain loss.
pub fn packet_loss(snr: f64, blocklength: u32, rate: f64) -> f64 {
    if snr <= 0.0 {
        return 1.0;
    }
    let v = dispersion(snr);
    let arg = (f64::from(blocklength) / v).sqrt() * (capacity(snr) - rate);
    q_function(arg)
}

/// Average of [`packet_loss`] over the Erlang SNR law, by adaptive
/// quadrature.
///
/// The range is truncated where the Erlang tail mass falls below
/// [`TAIL_MASS`]; the neglected tail carries loss below the truncation
/// point's own loss, so it adds at most `TAIL_MASS` to the error.
pub fn avg_packet_loss_exact(cfg: &ChannelConfig, rate: f64) -> Result<f64, ChannelError> {
    if !(rate > 0.0) {
        return Err(ChannelError::Rate(rate));
    }
    let shape = cfg.antennas;
    let scale = cfg.snr_linear;
    let mut hi = f64::from(shape).max(1.0);
    while regularized_upper_gamma(shape, hi)? > TAIL_MASS {
        hi *= 1.5;
    }
    let gamma_hi = hi * scale;
    let ln_norm = crate::numerics::ln_gamma_int(shape) + scale.ln();
    let lm1 = f64::from(shape - 1);
    let n = cfg.blocklength;
    let integrand = |g: f64| {
        if g <= 0.0 {
            return if shape == 1 { 1.0 / scale } else { 0.0 };
        }
        let density = (lm1 * (g / scale).ln() - g / scale - ln_norm).exp();
        packet_loss(g, n, rate) * density
    };

    let mut breaks = vec![0.0];
    let knee = (rate * LN_2).exp_m1();
    if knee.is_finite() && knee > 0.0 && knee < gamma_hi {
        // The integrand switches from ~density to ~0 around C(γ) = rate.
        let width = (dispersion(knee) / f64::from(n)).sqrt() * (1.0 + knee) * LN_2;
        for offset in [-8.0, -2.0, 0.0, 2.0, 8.0] {
            let p = knee + offset * width;
            if p > 0.0 && p < gamma_hi {
                breaks.push(p);
            }
        }
    }
    let mode = lm1 * scale;
    if mode > 0.0 && mode < gamma_hi {
        breaks.push(mode);
    }
    breaks.push(gamma_hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let q = integrate_adaptive(integrand, &breaks, QUADRATURE_TOL)?;
    Ok(q.value.clamp(0.0, 1.0))
}

/// Closed-form average loss `1 − Γ(L, β)/Γ(L)`, `β = (2^{R_c} − 1)/γ₀`.
pub fn avg_packet_loss_approx(cfg: &ChannelConfig, rate: f64) -> f64 {
    regularized_lower_gamma(cfg.antennas, cfg.outage_threshold(rate).max(0.0)).expect("valid Erlang arguments")
}

/// `ln(1 − ε̄)` of the closed form, without cancellation for small loss or
/// underflow for loss near one.
pub fn ln_avg_success_approx(cfg: &ChannelConfig, rate: f64) -> f64 {
    ln_regularized_upper_gamma(cfg.antennas, cfg.outage_threshold(rate).max(0.0)).expect("valid Erlang arguments")
}

/// Bernoulli slot realization: `true` when the packet is decoded.
pub fn simulate_slot<R: Rng + ?Sized>(loss_prob: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < 1.0 - loss_prob
}
