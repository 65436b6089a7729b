//! Statistical model checking by on-the-fly simulation.
//!
//! A sample draws one response per organization and sums the weights of the
//! accepting ones; the explicit tree is never walked. Samples are generated in
//! batches of `batch_size`; batch `i` draws from the ChaCha8 stream `i` of a
//! generator seeded with `seed_from_u64(seed)`, so results depend only on
//! `(policy, seed, samples, batch_size)` and not on how many threads run the
//! batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::policy::{total_weight, Policy};

/// Identifier recorded in every output next to the seed.
pub const RNG_ID: &str = "chacha8/seed_from_u64/stream=batch_index";

const CLIP_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmcError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Holds,
    Fails,
    Indeterminate,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Holds => "holds",
            Decision::Fails => "fails",
            Decision::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Sprt,
    FixedSample,
}

/// Confidence interval construction for estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// Chernoff–Hoeffding: `sqrt(ln(2/δ) / 2N)`, distribution free.
    #[default]
    Hoeffding,
    /// Normal approximation: `z_{1-δ/2} · sqrt(p̂(1-p̂)/N)`.
    Wald,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Batches on the rayon pool; sequential when the `rayon` feature is off.
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub samples: u64,
    /// Estimation accuracy ε; also fixes the default SPRT sample cap.
    pub accuracy: f64,
    /// Confidence parameter δ of the interval and of `required_samples`.
    pub confidence_delta: f64,
    pub seed: u64,
    pub batch_size: u64,
    /// Probability of deciding `holds` when `p ≤ θ − δ_ind`.
    pub alpha: f64,
    /// Probability of deciding `fails` when `p ≥ θ + δ_ind`.
    pub beta: f64,
    pub indifference_delta: f64,
    pub interval: IntervalKind,
    /// SPRT hard cap; `None` means `10 · required_samples(accuracy, confidence_delta)`.
    pub max_samples: Option<u64>,
    pub execution: Execution,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            accuracy: 0.001,
            confidence_delta: 0.01,
            seed: 1,
            batch_size: 1000,
            alpha: 0.01,
            beta: 0.01,
            indifference_delta: 0.005,
            interval: IntervalKind::Hoeffding,
            max_samples: None,
            execution: Execution::Parallel,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SmcError> {
        let bad = |msg: String| Err(SmcError::InvalidConfig(msg));
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.accuracy > 0.0 && self.accuracy < 1.0) {
            return bad(format!(
                "accuracy must lie in (0, 1), got {}",
                self.accuracy
            ));
        }
        if !(self.confidence_delta > 0.0 && self.confidence_delta < 1.0) {
            return bad(format!(
                "confidence delta must lie in (0, 1), got {}",
                self.confidence_delta
            ));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 0.5) {
                return bad(format!("{name} must lie in (0, 0.5), got {v}"));
            }
        }
        if !(self.indifference_delta > 0.0 && self.indifference_delta < 0.5) {
            return bad(format!(
                "indifference delta must lie in (0, 0.5), got {}",
                self.indifference_delta
            ));
        }
        if self.max_samples == Some(0) {
            return bad("max_samples must be at least 1".into());
        }
        Ok(())
    }

    pub fn sample_cap(&self) -> Result<u64, SmcError> {
        match self.max_samples {
            Some(cap) => Ok(cap),
            None => Ok(required_samples(self.accuracy, self.confidence_delta)?.saturating_mul(10)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub p_hat: f64,
    pub ci_halfwidth: f64,
    pub samples_used: u64,
    pub successes: u64,
    pub interval: IntervalKind,
}

impl Estimate {
    fn new(successes: u64, samples: u64, delta: f64, interval: IntervalKind) -> Self {
        let p_hat = successes as f64 / samples as f64;
        Self {
            p_hat,
            ci_halfwidth: interval_halfwidth(interval, p_hat, samples, delta),
            samples_used: samples,
            successes,
            interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisResult {
    pub decision: Decision,
    pub samples_used: u64,
    pub successes: u64,
    pub test: TestKind,
    pub alpha: f64,
    pub beta: f64,
    pub indifference_delta: f64,
    pub threshold: f64,
    /// Effective `θ − δ_ind` and `θ + δ_ind` after clipping into (0, 1).
    pub lower: f64,
    pub upper: f64,
    /// Set when the indifference region had to be clipped.
    pub clipped: bool,
    pub ci_halfwidth: f64,
}

impl HypothesisResult {
    pub fn p_hat(&self) -> f64 {
        self.successes as f64 / self.samples_used as f64
    }
}

/// Machine-readable result line shared by the CLI commands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub p_hat: f64,
    pub ci_halfwidth: f64,
    pub samples: u64,
    pub seed: u64,
    pub rng_id: &'static str,
    pub decision: Decision,
    pub test: TestKind,
    pub alpha: f64,
    pub beta: f64,
    pub indifference_delta: f64,
}

impl ResultRecord {
    pub fn from_hypothesis(res: &HypothesisResult, cfg: &SimConfig) -> Self {
        Self {
            p_hat: res.p_hat(),
            ci_halfwidth: res.ci_halfwidth,
            samples: res.samples_used,
            seed: cfg.seed,
            rng_id: RNG_ID,
            decision: res.decision,
            test: res.test,
            alpha: res.alpha,
            beta: res.beta,
            indifference_delta: res.indifference_delta,
        }
    }
}

/// Chernoff–Hoeffding sample size: smallest `N` with `2·exp(−2Nε²) ≤ δ`.
pub fn required_samples(accuracy: f64, delta: f64) -> Result<u64, SmcError> {
    if !(accuracy > 0.0 && accuracy < 1.0) {
        return Err(SmcError::InvalidConfig(format!(
            "accuracy must lie in (0, 1), got {accuracy}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SmcError::InvalidConfig(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(((2.0 / delta).ln() / (2.0 * accuracy * accuracy)).ceil() as u64)
}

/// Hoeffding halfwidth achieved by `samples` draws at confidence `1 − δ`.
pub fn hoeffding_halfwidth(samples: u64, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * samples as f64)).sqrt()
}

/// Normal-approximation halfwidth.
pub fn wald_halfwidth(p_hat: f64, samples: u64, delta: f64) -> f64 {
    let z = Normal::standard().inverse_cdf(1.0 - delta / 2.0);
    z * (p_hat * (1.0 - p_hat) / samples as f64).sqrt()
}

fn interval_halfwidth(kind: IntervalKind, p_hat: f64, samples: u64, delta: f64) -> f64 {
    match kind {
        IntervalKind::Hoeffding => hoeffding_halfwidth(samples, delta),
        IntervalKind::Wald => wald_halfwidth(p_hat, samples, delta),
    }
}

/// Generator for batch `batch` of a run seeded with `seed`.
pub fn batch_rng(seed: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng
}

/// One root-to-leaf walk: the accepted weight of a single round of responses.
pub fn simulate_outcome<R: Rng + ?Sized>(policy: &Policy, rng: &mut R) -> u64 {
    policy
        .organizations()
        .iter()
        .filter(|o| rng.random::<f64>() < o.acceptance_prob())
        .map(|o| o.weight())
        .sum()
}

/// Runs `samples` draws split into batches, returning per-batch results in
/// batch order.
fn run_batches<T, F>(samples: u64, batch_size: u64, seed: u64, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, u64) -> T + Sync + Send,
{
    let batches = samples.div_ceil(batch_size);
    let job = |b: u64| {
        let len = batch_size.min(samples - b * batch_size);
        f(&mut batch_rng(seed, b), len)
    };
    match exec {
        #[cfg(feature = "rayon")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..batches).into_par_iter().map(job).collect()
        }
        _ => (0..batches).map(job).collect(),
    }
}

fn check_policy(policy: &Policy) -> Result<(), SmcError> {
    if policy.is_empty() {
        return Err(SmcError::InvalidConfig(
            "policy has no organizations".into(),
        ));
    }
    Ok(())
}

/// Fixed-sample estimate of the acceptance probability.
pub fn estimate_probability(policy: &Policy, cfg: &SimConfig) -> Result<Estimate, SmcError> {
    cfg.validate()?;
    check_policy(policy)?;
    let th = policy.weight_threshold();
    let successes: u64 = run_batches(
        cfg.samples,
        cfg.batch_size,
        cfg.seed,
        cfg.execution,
        |rng, n| {
            (0..n)
                .filter(|_| simulate_outcome(policy, rng) >= th)
                .count() as u64
        },
    )
    .into_iter()
    .sum();
    Ok(Estimate::new(
        successes,
        cfg.samples,
        cfg.confidence_delta,
        cfg.interval,
    ))
}

/// Histogram of accepted weight over `cfg.samples` draws, indexed `0..=total_weight`.
pub fn simulate_histogram(policy: &Policy, cfg: &SimConfig) -> Result<Vec<u64>, SmcError> {
    cfg.validate()?;
    check_policy(policy)?;
    let len = total_weight(policy) as usize + 1;
    let parts = run_batches(
        cfg.samples,
        cfg.batch_size,
        cfg.seed,
        cfg.execution,
        |rng, n| {
            let mut h = vec![0u64; len];
            for _ in 0..n {
                h[simulate_outcome(policy, rng) as usize] += 1;
            }
            h
        },
    );
    let mut hist = vec![0u64; len];
    for part in parts {
        for (acc, c) in hist.iter_mut().zip(part) {
            *acc += c;
        }
    }
    Ok(hist)
}

/// Indifference bounds `θ ∓ δ_ind` clipped into `(0, 1)`.
fn indifference_bounds(threshold: f64, delta: f64) -> Result<(f64, f64, bool), SmcError> {
    let (mut lo, mut hi) = (threshold - delta, threshold + delta);
    let mut clipped = false;
    if lo < CLIP_MARGIN {
        lo = CLIP_MARGIN;
        clipped = true;
    }
    if hi > 1.0 - CLIP_MARGIN {
        hi = 1.0 - CLIP_MARGIN;
        clipped = true;
    }
    if lo >= hi {
        return Err(SmcError::InvalidConfig(format!(
            "indifference region around {threshold} is empty after clipping"
        )));
    }
    Ok((lo, hi, clipped))
}

/// Wald's sequential probability ratio test of `H1: p ≥ θ + δ_ind` (holds)
/// against `H0: p ≤ θ − δ_ind` (fails), with `θ` the policy's probability
/// threshold. Returns `Indeterminate` if the sample cap is reached first.
pub fn hypothesis_test(policy: &Policy, cfg: &SimConfig) -> Result<HypothesisResult, SmcError> {
    cfg.validate()?;
    check_policy(policy)?;
    let theta = policy.probability_threshold();
    let (p0, p1, clipped) = indifference_bounds(theta, cfg.indifference_delta)?;
    let cap = cfg.sample_cap()?;

    let step_success = (p1 / p0).ln();
    let step_failure = ((1.0 - p1) / (1.0 - p0)).ln();
    let accept_h1 = ((1.0 - cfg.beta) / cfg.alpha).ln();
    let accept_h0 = (cfg.beta / (1.0 - cfg.alpha)).ln();

    let th = policy.weight_threshold();
    let mut llr = 0.0;
    let mut used = 0u64;
    let mut successes = 0u64;
    let mut decision = Decision::Indeterminate;
    let mut batch = 0u64;
    'outer: while used < cap {
        let mut rng = batch_rng(cfg.seed, batch);
        let len = cfg.batch_size.min(cap - used);
        for _ in 0..len {
            let ok = simulate_outcome(policy, &mut rng) >= th;
            used += 1;
            if ok {
                successes += 1;
                llr += step_success;
            } else {
                llr += step_failure;
            }
            if llr >= accept_h1 {
                decision = Decision::Holds;
                break 'outer;
            }
            if llr <= accept_h0 {
                decision = Decision::Fails;
                break 'outer;
            }
        }
        batch += 1;
    }
    let p_hat = successes as f64 / used as f64;
    Ok(HypothesisResult {
        decision,
        samples_used: used,
        successes,
        test: TestKind::Sprt,
        alpha: cfg.alpha,
        beta: cfg.beta,
        indifference_delta: cfg.indifference_delta,
        threshold: theta,
        lower: p0,
        upper: p1,
        clipped,
        ci_halfwidth: interval_halfwidth(cfg.interval, p_hat, used, cfg.confidence_delta),
    })
}

/// Decision from a fixed-sample estimate: `holds` when the interval lies
/// strictly above the threshold, `fails` when strictly below, otherwise
/// `indeterminate`.
pub fn fixed_sample_test(policy: &Policy, cfg: &SimConfig) -> Result<HypothesisResult, SmcError> {
    let est = estimate_probability(policy, cfg)?;
    let theta = policy.probability_threshold();
    let decision = if est.p_hat - theta > est.ci_halfwidth {
        Decision::Holds
    } else if theta - est.p_hat > est.ci_halfwidth {
        Decision::Fails
    } else {
        Decision::Indeterminate
    };
    Ok(HypothesisResult {
        decision,
        samples_used: est.samples_used,
        successes: est.successes,
        test: TestKind::FixedSample,
        alpha: cfg.alpha,
        beta: cfg.beta,
        indifference_delta: cfg.indifference_delta,
        threshold: theta,
        lower: theta - est.ci_halfwidth,
        upper: theta + est.ci_halfwidth,
        clipped: false,
        ci_halfwidth: est.ci_halfwidth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::exact_acceptance_probability;
    use crate::policy::Organization;

    fn policy(orgs: &[(u64, f64)], th: u64, pth: f64) -> Policy {
        Policy::new(
            orgs.iter()
                .enumerate()
                .map(|(i, &(w, p))| Organization::new(format!("O{}", i + 1), w, p).unwrap())
                .collect(),
            th,
            pth,
        )
        .unwrap()
    }

    fn paper(th: u64, pth: f64) -> Policy {
        policy(&[(1, 0.07), (3, 0.01), (2, 0.02)], th, pth)
    }

    #[test]
    fn required_samples_values() {
        // ceil(ln(40) / 0.02) = ceil(184.44)
        assert_eq!(required_samples(0.1, 0.05).unwrap(), 185);
        assert!(required_samples(0.0, 0.05).is_err());
        assert!(required_samples(1.0, 0.05).is_err());
        assert!(required_samples(0.1, 0.0).is_err());
        assert!(required_samples(0.1, 1.0).is_err());
        let n1 = required_samples(0.002, 0.01).unwrap();
        let n2 = required_samples(0.001, 0.01).unwrap();
        let ratio = n2 as f64 / n1 as f64;
        assert!((ratio - 4.0).abs() < 1e-5, "{ratio}");
    }

    #[test]
    fn hoeffding_inverts_required_samples() {
        let n = required_samples(0.01, 0.05).unwrap();
        assert!(hoeffding_halfwidth(n, 0.05) <= 0.01);
        assert!(hoeffding_halfwidth(n - 1, 0.05) > 0.01);
    }

    #[test]
    fn degenerate_outcomes() {
        let mut rng = batch_rng(7, 0);
        let sure = policy(&[(1, 0.0), (3, 0.0), (2, 0.0)], 5, 0.95);
        let never = policy(&[(1, 1.0), (3, 1.0), (2, 1.0)], 5, 0.95);
        for _ in 0..1000 {
            assert_eq!(simulate_outcome(&sure, &mut rng), 6);
            assert_eq!(simulate_outcome(&never, &mut rng), 0);
        }
    }

    #[test]
    fn estimate_bounds() {
        let cfg = SimConfig::default();
        let est = estimate_probability(&paper(5, 0.95), &cfg).unwrap();
        assert!((est.p_hat - 0.9702).abs() < 0.006, "{}", est.p_hat);
        assert_eq!(est.samples_used, 10_000);
        assert_eq!(est.p_hat, est.successes as f64 / est.samples_used as f64);
        assert_eq!(
            estimate_probability(&paper(7, 0.95), &cfg).unwrap().p_hat,
            0.0
        );
        assert_eq!(
            estimate_probability(&paper(0, 0.95), &cfg).unwrap().p_hat,
            1.0
        );
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let p = paper(5, 0.95);
        let mut cfg = SimConfig {
            samples: 12_345,
            batch_size: 100,
            ..SimConfig::default()
        };
        let par = estimate_probability(&p, &cfg).unwrap();
        cfg.execution = Execution::Sequential;
        let seq = estimate_probability(&p, &cfg).unwrap();
        assert_eq!(par, seq);
        assert_eq!(estimate_probability(&p, &cfg).unwrap(), seq);
    }

    #[test]
    fn wald_interval_option() {
        let cfg = SimConfig {
            interval: IntervalKind::Wald,
            ..SimConfig::default()
        };
        let est = estimate_probability(&paper(5, 0.95), &cfg).unwrap();
        let z = 2.5758293035489; // 0.995 quantile
        let want = z * (est.p_hat * (1.0 - est.p_hat) / 10_000.0).sqrt();
        assert!((est.ci_halfwidth - want).abs() < 1e-9);
        let hoeff = estimate_probability(&paper(5, 0.95), &SimConfig::default()).unwrap();
        assert!(est.ci_halfwidth < hoeff.ci_halfwidth);
    }

    #[test]
    fn sprt_decides_paper_cases() {
        let cfg = SimConfig {
            indifference_delta: 0.01,
            ..SimConfig::default()
        };
        let res = hypothesis_test(&paper(5, 0.95), &cfg).unwrap();
        assert_eq!(res.decision, Decision::Holds);
        assert!(!res.clipped);
        let res = hypothesis_test(&paper(5, 0.99), &cfg).unwrap();
        assert_eq!(res.decision, Decision::Fails);
        let res = hypothesis_test(&paper(5, 0.97), &cfg).unwrap();
        assert_ne!(res.decision, Decision::Indeterminate);
        assert!(res.samples_used < cfg.sample_cap().unwrap());
    }

    #[test]
    fn sprt_clips_indifference_region() {
        let cfg = SimConfig {
            indifference_delta: 0.01,
            ..SimConfig::default()
        };
        let sure = policy(&[(1, 0.0)], 1, 0.995);
        let res = hypothesis_test(&sure, &cfg).unwrap();
        assert!(res.clipped);
        assert_eq!(res.upper, 1.0 - CLIP_MARGIN);
        assert_eq!(res.decision, Decision::Holds);
        let never = policy(&[(1, 1.0)], 1, 0.0);
        let res = hypothesis_test(&never, &cfg).unwrap();
        assert!(res.clipped);
        assert_eq!(res.decision, Decision::Fails);
    }

    #[test]
    fn sprt_cap_yields_indeterminate() {
        let cfg = SimConfig {
            max_samples: Some(5),
            ..SimConfig::default()
        };
        let res = hypothesis_test(&paper(5, 0.97), &cfg).unwrap();
        assert_eq!(res.decision, Decision::Indeterminate);
        assert_eq!(res.samples_used, 5);
    }

    #[test]
    fn fixed_sample_decisions() {
        let cfg = SimConfig::default();
        let p = paper(5, 0.5);
        assert_eq!(
            fixed_sample_test(&p, &cfg).unwrap().decision,
            Decision::Holds
        );
        let p = paper(5, 0.995);
        assert_eq!(
            fixed_sample_test(&p, &cfg).unwrap().decision,
            Decision::Fails
        );
        let exact = exact_acceptance_probability(&paper(5, 0.95));
        let p = paper(5, exact);
        let res = fixed_sample_test(&p, &cfg).unwrap();
        assert_eq!(res.decision, Decision::Indeterminate);
        assert!((res.p_hat() - exact).abs() <= res.ci_halfwidth);
    }

    #[test]
    fn config_validation() {
        let ok = SimConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SimConfig {
                samples: 0,
                ..ok.clone()
            },
            SimConfig {
                batch_size: 0,
                ..ok.clone()
            },
            SimConfig {
                accuracy: 0.0,
                ..ok.clone()
            },
            SimConfig {
                confidence_delta: 1.0,
                ..ok.clone()
            },
            SimConfig {
                alpha: 0.0,
                ..ok.clone()
            },
            SimConfig {
                indifference_delta: 0.0,
                ..ok.clone()
            },
            SimConfig {
                max_samples: Some(0),
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        // default cap: 10 * ceil(ln(200) / 2e-6)
        assert_eq!(
            ok.sample_cap().unwrap(),
            10 * required_samples(0.001, 0.01).unwrap()
        );
    }

    #[test]
    fn record_serializes_with_expected_keys() {
        let cfg = SimConfig::default();
        let res = hypothesis_test(&paper(5, 0.95), &cfg).unwrap();
        let json = serde_json::to_value(ResultRecord::from_hypothesis(&res, &cfg)).unwrap();
        for key in [
            "p_hat",
            "ci_halfwidth",
            "samples",
            "seed",
            "rng_id",
            "decision",
            "test",
            "alpha",
            "beta",
            "indifference_delta",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["test"], "sprt");
        assert_eq!(json["rng_id"], RNG_ID);
    }
}
