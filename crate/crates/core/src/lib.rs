//! Coding-rate adaptation for edge sensing over short packets.
//!
//! A sensor quantizes Gaussian-mixture feature vectors and ships one per
//! fading slot in an `N`-symbol packet; the server classifies whatever
//! arrives. More bits per feature raise the effective discriminant gain but
//! also the packet loss rate. This crate models both sides, optimizes the
//! coding rate through a concave surrogate, and checks every prediction
//! against Monte Carlo simulation.

// Guards are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod gmm;
pub mod harness;
pub mod numerics;
pub mod optimizer;
pub mod quant;
