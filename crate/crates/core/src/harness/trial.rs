use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::NoiseModel;
use super::HarnessError;
use crate::channel::{packet_loss, sample_post_mrc_snr, simulate_slot, ChannelConfig};
use crate::gmm::{classify, Class, InferenceModel};
use crate::optimizer::{RateDecision, TradeoffParams};
use crate::quant::{decode, encode, QuantizerConfig};

/// Everything one trial needs, built once per experiment cell.
#[derive(Debug, Clone)]
pub struct TrialContext {
    model: InferenceModel,
    quantizer: QuantizerConfig,
    channel: ChannelConfig,
    observations: u32,
    rate: f64,
    noise_model: NoiseModel,
}

impl TrialContext {
    pub fn new(
        params: &TradeoffParams,
        decision: &RateDecision,
        noise_model: NoiseModel,
    ) -> Result<Self, HarnessError> {
        let model = params.model().clone();
        let quantizer = QuantizerConfig::with_klt(params.clip(), decision.bits_per_feature, model.sigma())?;
        Ok(Self {
            model,
            quantizer,
            channel: *params.channel(),
            observations: params.observations(),
            rate: decision.rounded_rate,
            noise_model,
        })
    }

    pub fn bits(&self) -> u32 {
        self.quantizer.bits()
    }

    fn distort<R: Rng + ?Sized>(&self, x: DVector<f64>, rng: &mut R) -> Result<DVector<f64>, HarnessError> {
        match self.noise_model {
            NoiseModel::Quantizer => Ok(decode(&encode(&x, &self.quantizer)?.values, &self.quantizer)?),
            NoiseModel::Lemma1 => {
                let sd = self.quantizer.noise_variance().sqrt();
                Ok(x.map(|v| v + sd * rng.sample::<f64, _>(StandardNormal)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub true_class: Class,
    pub bits: u32,
    pub snrs: Vec<f64>,
    pub received: Vec<bool>,
    pub received_count: usize,
    pub decision: Class,
    pub correct: bool,
}

/// One sensing task: `K` noisy views of a random object sent over `K`
/// independent fading slots, fused by summing the discriminant scores that
/// arrive.
pub fn run_trial<R: Rng + ?Sized>(ctx: &TrialContext, rng: &mut R) -> Result<TrialRecord, HarnessError> {
    let true_class = if rng.random::<bool>() { Class::One } else { Class::Two };
    let k = ctx.observations as usize;
    let mut snrs = Vec::with_capacity(k);
    let mut received = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);
    for _ in 0..k {
        let x = ctx.model.sample_feature(true_class, rng);
        let xq = ctx.distort(x, rng)?;
        let snr = sample_post_mrc_snr(&ctx.channel, rng);
        let ok = simulate_slot(packet_loss(snr, ctx.channel.blocklength(), ctx.rate), rng);
        if ok {
            scores.push(ctx.model.discriminant_score(&xq));
        }
        snrs.push(snr);
        received.push(ok);
    }
    let decision = match classify(&scores) {
        Some(c) => c,
        None if rng.random::<bool>() => Class::One,
        None => Class::Two,
    };
    Ok(TrialRecord {
        true_class,
        bits: ctx.bits(),
        snrs,
        received_count: scores.len(),
        received,
        decision,
        correct: decision == true_class,
    })
}

/// Random stream of trial `index` under master `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub errors: u64,
    pub trials: usize,
    pub error: f64,
    pub ci95: f64,
}

/// Binomial 95% half-width `1.96·√(p(1−p)/n)`.
pub fn ci95(p: f64, trials: usize) -> f64 {
    1.96 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Monte Carlo error rate over `trials` independent trials. The count is an
/// integer sum, so the result does not depend on how rayon splits the work.
pub fn estimate_error(ctx: &TrialContext, trials: usize, seed: u64) -> Result<ErrorEstimate, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::Config("trials must be at least 1".into()));
    }
    let errors = (0..trials as u64)
        .into_par_iter()
        .map(|i| run_trial(ctx, &mut trial_rng(seed, i)).map(|r| u64::from(!r.correct)))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let error = errors as f64 / trials as f64;
    Ok(ErrorEstimate {
        errors,
        trials,
        error,
        ci95: ci95(error, trials),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::semi_analytic_error;
    use crate::optimizer::fixed_bits_rate;

    fn context(snr_db: f64, bits: u32, observations: u32, noise: NoiseModel) -> TrialContext {
        let model = InferenceModel::symmetric_isotropic(50, 0.1).unwrap();
        let channel = ChannelConfig::from_db(4, snr_db, 100).unwrap();
        let params = TradeoffParams::new(model, 5.0, channel, observations).unwrap();
        let decision = fixed_bits_rate(bits, &params).unwrap();
        TrialContext::new(&params, &decision, noise).unwrap()
    }

    #[test]
    fn record_invariants() {
        let ctx = context(2.0, 4, 10, NoiseModel::Quantizer);
        let mut rng = trial_rng(5, 0);
        for _ in 0..200 {
            let r = run_trial(&ctx, &mut rng).unwrap();
            assert_eq!(r.received_count, r.received.iter().filter(|&&b| b).count());
            assert!(r.received_count <= 10);
            assert_eq!(r.snrs.len(), 10);
            assert_eq!(r.correct, r.decision == r.true_class);
            assert_eq!(r.bits, 4);
        }
    }

    #[test]
    fn dead_channel_is_a_coin_flip() {
        let ctx = context(-60.0, 4, 10, NoiseModel::Quantizer);
        let est = estimate_error(&ctx, 10_000, 1).unwrap();
        assert!((est.error - 0.5).abs() <= 3.0 * 0.005, "{}", est.error);
    }

    #[test]
    fn clean_channel_matches_bayes_error_of_k_views() {
        // 60 dB and 12 bits: every packet arrives and σ_q² ≈ 0.
        let ctx = context(60.0, 12, 2, NoiseModel::Quantizer);
        let est = estimate_error(&ctx, 10_000, 3).unwrap();
        let oracle = semi_analytic_error(1.0, &[0.0, 0.0]).unwrap();
        assert!(
            (est.error - oracle).abs() <= 3.0 * ci95(oracle, 10_000) / 1.96,
            "{} vs {oracle}",
            est.error
        );
    }

    #[test]
    fn estimate_is_deterministic_across_pools() {
        let ctx = context(2.0, 4, 10, NoiseModel::Quantizer);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| estimate_error(&ctx, 2_000, 11)).unwrap();
        let b = four.install(|| estimate_error(&ctx, 2_000, 11)).unwrap();
        assert_eq!(a, b);
        let c = estimate_error(&ctx, 2_000, 12).unwrap();
        assert_ne!(a.errors, c.errors);
    }

    #[test]
    fn trial_streams_are_independent_of_order() {
        let ctx = context(2.0, 4, 10, NoiseModel::Lemma1);
        let forward: Vec<_> = (0..5).map(|i| run_trial(&ctx, &mut trial_rng(7, i)).unwrap()).collect();
        let backward: Vec<_> = (0..5)
            .rev()
            .map(|i| run_trial(&ctx, &mut trial_rng(7, i)).unwrap())
            .collect();
        assert!(forward.iter().eq(backward.iter().rev()));
    }

    #[test]
    fn ci_arithmetic() {
        assert_eq!(ci95(0.0, 100), 0.0);
        assert!((ci95(0.5, 10_000) - 0.0098).abs() < 1e-12);
        assert!(ci95(0.3, 10_000) <= 0.01);
    }
}
