//! Acceptance gate. Each test prints one `[PASS]`/`[FAIL]` line and then
//! asserts it, so `cargo test --test acceptance -- --nocapture` doubles as a
//! report.

use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use edgesense::channel::{
    avg_packet_loss_approx, avg_packet_loss_exact, ln_avg_success_approx, packet_loss, sample_post_mrc_snr,
    ChannelConfig,
};
use edgesense::gmm::{sensing_error_bound, InferenceModel};
use edgesense::harness::validate::{ar1_covariance, distortion_moments};
use edgesense::harness::{estimate_error, sweep, ExperimentConfig, Policy, ResultRow, SweepParam, TrialContext};
use edgesense::numerics::{poisson_binomial_pmf, q_function};
use edgesense::optimizer::{gradient_ascent, OptimizerSettings, TradeoffParams};
use edgesense::quant::{noise_variance, QuantizerConfig};

fn verdict(id: u32, title: &str, passed: bool, detail: &str, elapsed: Duration, limit: Duration) {
    let in_time = elapsed <= limit;
    let ok = passed && in_time;
    let tag = if ok { "PASS" } else { "FAIL" };
    println!(
        "[{tag}] criterion {id:>2} {title}: {detail} ({:.3} s, limit {:.3} s)",
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    assert!(passed, "criterion {id} failed: {detail}");
    assert!(in_time, "criterion {id} exceeded its runtime limit");
}

// Oracles kept independent of the library code paths.

fn q_oracle(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn binomial_error_oracle(gain: f64, loss: f64, k: u32) -> f64 {
    let mut total = 0.0;
    let mut coef = 1.0;
    for m in 0..=k {
        if m > 0 {
            coef *= f64::from(k - m + 1) / f64::from(m);
        }
        let w = coef * (1.0 - loss).powi(m as i32) * loss.powi((k - m) as i32);
        let err = if m == 0 {
            0.5
        } else {
            q_oracle((f64::from(m) * gain / 2.0).sqrt())
        };
        total += w * err;
    }
    total
}

fn erlang_cdf_oracle(shape: u32, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..shape {
        term *= x / f64::from(k);
        sum += term;
    }
    1.0 - (-x).exp() * sum
}

/// Composite Simpson integral of the normal-approximation loss against the
/// Erlang density.
fn avg_loss_oracle(l: u32, snr: f64, n: u32, rate: f64) -> f64 {
    let upper = snr * (f64::from(l) + 40.0 * f64::from(l).sqrt() + 60.0);
    let panels = 400_000;
    let h = upper / panels as f64;
    let ln_norm = libm::lgamma(f64::from(l)) + f64::from(l) * snr.ln();
    let f = |g: f64| {
        if g <= 0.0 {
            return if l == 1 { 1.0 / snr } else { 0.0 };
        }
        let c = (1.0 + g).log2();
        let v = g * (2.0 + g) / (1.0 + g).powi(2) * std::f64::consts::LOG2_E.powi(2);
        let loss = q_oracle((f64::from(n) / v).sqrt() * (c - rate));
        loss * (f64::from(l - 1) * g.ln() - g / snr - ln_norm).exp()
    };
    let mut s = f(0.0) + f(upper);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    s * h / 3.0
}

fn reference_params(antennas: u32, snr_db: f64, observations: u32) -> TradeoffParams {
    let model = InferenceModel::symmetric_isotropic(50, 0.1).unwrap();
    let channel = ChannelConfig::from_db(antennas, snr_db, 100).unwrap();
    TradeoffParams::new(model, 5.0, channel, observations).unwrap()
}

fn rate_grid(p: &TradeoffParams, n: usize) -> Vec<f64> {
    let (lo, hi) = (p.min_rate(), p.max_rate());
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn max_second_difference(values: &[f64]) -> f64 {
    values
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn criterion_01_discriminant_gain() {
    let mut best = Duration::MAX;
    let mut gain: f64 = 0.0;
    for _ in 0..5 {
        let start = Instant::now();
        gain = InferenceModel::symmetric_isotropic(50, 0.1)
            .unwrap()
            .discriminant_gain();
        best = best.min(start.elapsed());
    }
    let delta = DVector::from_element(50, 0.2f64);
    let oracle = 0.5 * delta.dot(&delta);
    verdict(
        1,
        "discriminant gain of the reference model",
        (gain - 1.0).abs() <= 1e-12 && (oracle - 1.0).abs() <= 1e-12,
        &format!("D0 = {gain:.16}"),
        best,
        Duration::from_millis(1),
    );
}

#[test]
fn criterion_02_quantization_noise_statistics() {
    let start = Instant::now();
    // The identity covariance yields the identity transform and purely
    // uniform per-coordinate error, so the Gaussian shape is tested after a
    // non-trivial transform.
    let sigma = ar1_covariance(50, 0.3);
    let q = QuantizerConfig::with_klt(5.0, 4, &sigma).unwrap();
    let moments = distortion_moments(&q, &sigma, 100_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let elapsed = start.elapsed();
    let target = 25.0 / (3.0 * 15.0f64.powi(2));
    let var_dev = moments
        .iter()
        .map(|m| (m.variance - target).abs() / target)
        .fold(0.0, f64::max);
    let skew = moments.iter().map(|m| m.skewness.abs()).fold(0.0, f64::max);
    let kurt = moments.iter().map(|m| m.excess_kurtosis.abs()).fold(0.0, f64::max);
    verdict(
        2,
        "distortion variance and shape at R=4, U=5, d=50",
        (target - 0.03704).abs() < 1e-5 && var_dev <= 0.1 && skew <= 0.1 && kurt <= 0.2,
        &format!(
            "max var dev {:.2}%, max |skew| {skew:.3}, max |kurt| {kurt:.3}",
            100.0 * var_dev
        ),
        elapsed,
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_03_gain_reduction_bounds() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut cases = 0;
    for _ in 0..100 {
        let d = rng.random_range(2..=20);
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.05;
        let delta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let model = InferenceModel::new(delta.clone(), DVector::zeros(d), sigma.clone()).unwrap();
        let d0 = 0.5 * delta.dot(&sigma.clone().lu().solve(&delta).unwrap());
        for k in -10..=6 {
            let s = 10f64.powf(f64::from(k) / 2.0);
            let inflated = &sigma + DMatrix::identity(d, d) * s;
            let gain = 0.5 * delta.dot(&inflated.clone().lu().solve(&delta).unwrap());
            let rel = (d0 - gain) / d0;
            let lower = s / inflated.trace();
            let upper = s * inflated.try_inverse().unwrap().trace();
            let lib = model.dg_reduction_bounds(s);
            cases += 1;
            let tol = 1e-9;
            if rel < lower * (1.0 - tol) || rel > upper * (1.0 + tol) {
                violations += 1;
            }
            if (lib.lower - lower).abs() > 1e-9 * lower || (lib.upper - upper).abs() > 1e-9 * upper {
                violations += 1;
            }
        }
    }
    let model = InferenceModel::new(
        DVector::from_element(20, 0.3),
        DVector::zeros(20),
        ar1_covariance(20, 0.6),
    )
    .unwrap();
    let d0 = model.discriminant_gain();
    let rel = |bits: u32| (d0 - model.effective_discriminant_gain(noise_variance(bits, 5.0))) / d0;
    let ratios: Vec<f64> = (4..12).map(|r| rel(r + 1) / rel(r)).collect();
    let decay_ok = ratios.iter().all(|r| (0.2..=0.3).contains(r));
    verdict(
        3,
        "relative gain reduction bounds and 4^-R decay",
        violations == 0 && decay_ok,
        &format!(
            "{violations} violations in {cases} cases; per-bit ratios {:.4}..{:.4}",
            ratios.iter().copied().fold(f64::INFINITY, f64::min),
            ratios.iter().copied().fold(0.0, f64::max)
        ),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_04_error_bound_and_monte_carlo() {
    let start = Instant::now();
    let mut worst = f64::INFINITY;
    for gi in 0..15 {
        let gain = 0.02 * 1.5f64.powi(gi);
        for ei in 0..=20 {
            let loss = 0.999 * f64::from(ei) / 20.0;
            for k in [1u32, 2, 3, 5, 10, 20, 50] {
                worst = worst.min(sensing_error_bound(gain, loss, k) - binomial_error_oracle(gain, loss, k));
            }
        }
    }
    let cfg = ExperimentConfig::default();
    let params = cfg.build_params().unwrap();
    let decision = cfg.decide(Policy::Adaptive, &params).unwrap();
    let loss = avg_packet_loss_exact(params.channel(), decision.rounded_rate).unwrap();
    let exact = binomial_error_oracle(params.gain_at_bits(decision.bits_per_feature), loss, cfg.observations);
    let ctx = TrialContext::new(&params, &decision, cfg.noise_model).unwrap();
    let est = estimate_error(&ctx, 10_000, 4).unwrap();
    let band = 3.0 * (exact * (1.0 - exact) / 10_000.0).sqrt();
    verdict(
        4,
        "bound dominates exact error; Monte Carlo inside 3-sigma band",
        worst >= -1e-12 && (est.error - exact).abs() <= band && (decision.predicted_exact - exact).abs() < 1e-9,
        &format!(
            "min(bound - exact) {worst:.2e}; MC {:.4} vs exact {exact:.4} at {} bits (band {band:.4})",
            est.error, decision.bits_per_feature
        ),
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_05_closed_form_loss_accuracy() {
    let start = Instant::now();
    let c100 = ChannelConfig::from_db(4, 1.0, 100).unwrap();
    let c200 = ChannelConfig::from_db(4, 1.0, 200).unwrap();
    let mut worst = (0.0, 0.0, 0.0);
    let mut oracle_dev: f64 = 0.0;
    let mut covered = 0;
    for i in 1..=120 {
        let rate = 0.05 * f64::from(i);
        let exact = avg_packet_loss_exact(&c100, rate).unwrap();
        if !(1e-3..=0.99).contains(&exact) {
            continue;
        }
        covered += 1;
        if i % 8 == 0 {
            let oracle = avg_loss_oracle(4, c100.snr_linear(), 100, rate);
            oracle_dev = oracle_dev.max((oracle - exact).abs() / exact);
        }
        let rel = (avg_packet_loss_approx(&c100, rate) - exact).abs() / exact;
        if rel > worst.0 {
            worst = (rel, rate, exact);
        }
    }
    let mut ratios = Vec::new();
    for rate in [1.0, 1.5, 2.0] {
        let approx = avg_packet_loss_approx(&c100, rate);
        let gap100 = avg_packet_loss_exact(&c100, rate).unwrap() - approx;
        let gap200 = avg_packet_loss_exact(&c200, rate).unwrap() - approx;
        ratios.push(gap100 / gap200);
    }
    let ratio_ok = ratios.iter().all(|r| (1.5..=3.0).contains(r));
    verdict(
        5,
        "closed-form average loss within 5% and O(1/N) gap",
        covered > 10 && worst.0 <= 0.05 && ratio_ok && oracle_dev < 1e-6,
        &format!(
            "max rel err {:.1}% at R_c={:.2} (exact loss {:.2e}); gap ratios N=100/200 {ratios:.3?}; quadrature vs Simpson {oracle_dev:.1e}",
            100.0 * worst.0,
            worst.1,
            worst.2
        ),
        start.elapsed(),
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_06_concavity() {
    let start = Instant::now();
    let sets = [
        (4, 1.0, 5.0),
        (2, 1.0, 5.0),
        (4, 2.0, 5.0),
        (1, 5.0, 3.0),
        (8, -2.0, 4.0),
        (4, 10.0, 2.0),
    ];
    let (mut gain, mut success, mut phi) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut worst_gain_at = 0.0;
    for (l, db, clip) in sets {
        let model = InferenceModel::symmetric_isotropic(50, 0.1).unwrap();
        let p = TradeoffParams::new(model, clip, ChannelConfig::from_db(l, db, 100).unwrap(), 20).unwrap();
        let grid = rate_grid(&p, 4000);
        let g: Vec<f64> = grid.iter().map(|&r| p.gain_at_rate(r)).collect();
        let dg = max_second_difference(&g);
        if dg > gain {
            gain = dg;
            let idx = g.windows(3).position(|w| w[2] - 2.0 * w[1] + w[0] == dg).unwrap() + 1;
            worst_gain_at = p.bits_at_rate(grid[idx]);
        }
        let s: Vec<f64> = grid.iter().map(|&r| ln_avg_success_approx(p.channel(), r)).collect();
        success = success.max(max_second_difference(&s));
        let f: Vec<f64> = grid.iter().map(|&r| p.surrogate(r).unwrap()).collect();
        phi = phi.max(max_second_difference(&f));
    }
    verdict(
        6,
        "second differences of D, ln(1 - loss) and surrogate",
        gain <= 1e-9 && success <= 1e-9 && phi <= 1e-9,
        &format!(
            "max second difference: D {gain:.2e} (at {worst_gain_at:.2} bits), ln(1 - loss) {success:.2e}, surrogate {phi:.2e}"
        ),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_07_gradient_ascent_optimum() {
    let start = Instant::now();
    let p = reference_params(4, 2.0, 20);
    let out = gradient_ascent(&p, &OptimizerSettings::default()).unwrap();
    // Dense grid of the exact-loss surrogate, then a local refinement.
    let grid = rate_grid(&p, 2001);
    let values: Vec<f64> = grid.iter().map(|&r| p.surrogate_exact(r).unwrap()).collect();
    let i = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let step = grid[1] - grid[0];
    let fine: Vec<f64> = (0..=400)
        .map(|j| grid[i] - step + step * f64::from(j) / 200.0)
        .collect();
    let exact_opt = fine
        .iter()
        .copied()
        .max_by(|a, b| {
            p.surrogate_exact(*a)
                .unwrap()
                .total_cmp(&p.surrogate_exact(*b).unwrap())
        })
        .unwrap();
    let dev = (out.rate - exact_opt).abs() / exact_opt;
    verdict(
        7,
        "gradient ascent vs exact-loss optimum",
        dev <= 0.01 && out.gradient.abs() <= 1e-6,
        &format!(
            "ascent R_c {:.4} after {} steps, exact optimum {exact_opt:.4}, deviation {:.2}%",
            out.rate,
            out.iterations,
            100.0 * dev
        ),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_08_optimal_bits_coincide() {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for (label, l) in [("L=4", 4), ("L=2", 2)] {
        let p = reference_params(l, 1.0, 20);
        let levels: Vec<u32> = (1..=p.max_scan_bits()).collect();
        let argbest = |score: &dyn Fn(u32) -> f64| -> u32 {
            levels
                .iter()
                .copied()
                .min_by(|a, b| score(*a).total_cmp(&score(*b)).then(a.cmp(b)))
                .unwrap()
        };
        let by_phi = argbest(&|b| -p.surrogate(p.rate_for_bits(b)).unwrap());
        let by_bound = argbest(&|b| p.bound_at_bits(b));
        let by_exact = argbest(&|b| {
            let loss = avg_packet_loss_exact(p.channel(), p.rate_for_bits(b)).unwrap();
            binomial_error_oracle(p.gain_at_bits(b), loss, 20)
        });
        let spread = by_phi.max(by_bound).max(by_exact) - by_phi.min(by_bound).min(by_exact);
        ok &= spread <= 1 && by_phi == by_bound;
        details.push(format!(
            "{label}: surrogate {by_phi}, bound {by_bound}, exact {by_exact} bits"
        ));
    }
    verdict(
        8,
        "surrogate, bound and exact error agree on the bit level",
        ok,
        &details.join("; "),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

fn nonincreasing(rows: &[ResultRow]) -> Result<(), String> {
    for w in rows.windows(2) {
        let slack = (w[0].ci95.powi(2) + w[1].ci95.powi(2)).sqrt();
        if w[1].error > w[0].error + slack {
            return Err(format!(
                "{}={:?}: {:.4} -> {:?}: {:.4}",
                w[0].param, w[0].value, w[0].error, w[1].value, w[1].error
            ));
        }
    }
    Ok(())
}

#[test]
fn criterion_09_policy_trends() {
    let start = Instant::now();
    let base = ExperimentConfig::default();
    let adaptive = [Policy::Adaptive];
    let sweeps = [
        (SweepParam::Observations, vec![1.0, 2.0, 5.0, 10.0, 20.0]),
        (SweepParam::SnrDb, vec![-2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0]),
        (SweepParam::Antennas, vec![1.0, 2.0, 4.0, 8.0]),
        (SweepParam::Blocklength, vec![50.0, 100.0, 200.0, 400.0]),
    ];
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (param, values) in &sweeps {
        let rows = sweep(&base, *param, values, &adaptive).unwrap();
        if let Err(e) = nonincreasing(&rows) {
            failures.push(e);
        }
        summary.push(format!(
            "{param}: {}",
            rows.iter()
                .map(|r| format!("{:.4}", r.error))
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    let policies = [Policy::Adaptive, Policy::Urllc, Policy::Bits(32), Policy::Bits(16)];
    let rows = sweep(&base, SweepParam::SnrDb, &[2.0], &policies).unwrap();
    let ours = &rows[0];
    for other in &rows[1..] {
        if ours.error > other.error + ours.ci95 {
            failures.push(format!(
                "adaptive {:.4} > {} {:.4}",
                ours.error, other.policy, other.error
            ));
        }
    }
    summary.push(format!(
        "at 2 dB: {}",
        rows.iter()
            .map(|r| format!("{} {:.4}", r.policy, r.error))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    verdict(
        9,
        "error trends and policy comparison at 1e4 trials",
        failures.is_empty(),
        &format!("{} | violations: {failures:?}", summary.join("; ")),
        start.elapsed(),
        Duration::from_secs(600),
    );
}

#[test]
fn criterion_10_numerics() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut pmf_dev: f64 = 0.0;
    for k in 1..=12usize {
        for _ in 0..5 {
            let probs: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let pmf = poisson_binomial_pmf(&probs).unwrap();
            let mut brute = vec![0.0; k + 1];
            for mask in 0u32..(1 << k) {
                let w: f64 = probs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| if mask >> i & 1 == 1 { *p } else { 1.0 - p })
                    .product();
                brute[mask.count_ones() as usize] += w;
            }
            for (m, b) in brute.iter().enumerate() {
                pmf_dev = pmf_dev.max((pmf.get(m) - b).abs());
            }
        }
    }

    let channel = ChannelConfig::from_db(4, 2.0, 100).unwrap();
    let n = 100_000;
    let mut draws: Vec<f64> = (0..n).map(|_| sample_post_mrc_snr(&channel, &mut rng)).collect();
    draws.sort_by(f64::total_cmp);
    let ks = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = erlang_cdf_oracle(4, x / channel.snr_linear());
            (f - i as f64 / n as f64)
                .abs()
                .max((f - (i + 1) as f64 / n as f64).abs())
        })
        .fold(0.0, f64::max);
    let ks_critical = 1.6276 / (n as f64).sqrt();

    let sym = (0..=2000)
        .map(|i| {
            let x = -10.0 + 0.01 * f64::from(i);
            (q_function(x) + q_function(-x) - 1.0).abs()
        })
        .fold(0.0, f64::max);
    verdict(
        10,
        "Poisson-binomial DP, Erlang sampler KS, Q symmetry",
        pmf_dev <= 1e-12 && ks <= ks_critical && sym <= 1e-12,
        &format!("DP dev {pmf_dev:.1e}; KS {ks:.5} (critical {ks_critical:.5}); symmetry dev {sym:.1e}"),
        start.elapsed(),
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_11_sweep_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_edgesense"))
            .args([
                "--threads",
                threads,
                "sweep",
                "--param",
                "observations",
                "--values",
                "1,5,10",
            ])
            .args([
                "--policies",
                "adaptive,urllc,bits:16",
                "--trials",
                "10000",
                "--seed",
                "99",
                "--out",
            ])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let a = run("1", "a.csv");
    let b = run("8", "b.csv");
    let c = run("3", "c.csv");
    let rows = String::from_utf8(a.clone()).unwrap().lines().count();
    verdict(
        11,
        "sweep CSV byte-identical across thread counts",
        a == b && b == c && rows == 10,
        &format!(
            "{} bytes, {} lines, threads 1/8/3 identical: {}",
            a.len(),
            rows,
            a == b && b == c
        ),
        start.elapsed(),
        Duration::from_secs(1200),
    );
}

#[test]
fn single_slot_loss_matches_oracle() {
    // Guards the oracle used above against the library's per-slot formula.
    for (snr, rate) in [(1.0, 0.5), (3.0, 1.2), (10.0, 3.0)] {
        let c = (1.0f64 + snr).log2();
        let v = snr * (2.0 + snr) / (1.0 + snr).powi(2) * std::f64::consts::LOG2_E.powi(2);
        let oracle = q_oracle((100.0 / v).sqrt() * (c - rate));
        assert!((packet_loss(snr, 100, rate) - oracle).abs() <= 1e-12 * oracle.max(1e-300));
    }
}
